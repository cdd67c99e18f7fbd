"""Simulated MDT reporting with forged outage reports, and a detector/filter
pipeline that keeps them away from SON outage compensation."""

from .errors import MdtGuardError
from .scenario import Label, MdtReport, ScenarioConfig, generate_reports

__version__ = "0.1.0"
