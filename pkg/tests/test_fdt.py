import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mdtguard.adversary import apply_outage
from mdtguard.errors import InvalidInputError
from mdtguard.fdt import (ATTACK_CONFIRMED, OUTAGE_CONFIRMED, VERIFICATION_HEADER, FdtFleet, dispatch, place_fdts,
                          verify_at, write_verification_log)
from mdtguard.radio_model import ShadowingField, grid_layout
from mdtguard.scenario import Label

from conftest import scenario

AREA = (1000.0, 1000.0)
RES = 50.0


def grid_oracle():
    steps = np.arange(0.0, 1000.0 + 1e-9, RES)  # boundary included
    return [(x, y) for x in steps for y in steps]


GRID = grid_oracle()


def worst_distance(homes):
    return max(min(math.dist(p, h) for h in homes) for p in GRID)


def exhaustive(cands, k):
    return min(worst_distance([cands[i] for i in combo]) for combo in itertools.combinations(range(len(cands)), k))


candidates = st.lists(st.tuples(st.floats(0, 1000), st.floats(0, 1000)), min_size=1, max_size=8)


@given(candidates, st.data())
def test_greedy_within_twice_optimum(cands, data):
    k = data.draw(st.integers(1, len(cands)))
    fleet = place_fdts(cands, k, AREA, RES)
    best = exhaustive(cands, k)
    assert fleet.objective_m <= 2.0 * best + 1e-9
    assert abs(fleet.objective_m - worst_distance(fleet.homes)) < 1e-9


@given(candidates)
def test_single_fdt_is_exact(cands):
    assert abs(place_fdts(cands, 1, AREA, RES).objective_m - exhaustive(cands, 1)) < 1e-9


@given(candidates)
def test_saturation_and_monotone_in_k(cands):
    objs = [place_fdts(cands, k, AREA, RES).objective_m for k in range(1, len(cands) + 1)]
    assert all(b <= a + 1e-9 for a, b in zip(objs, objs[1:]))
    assert abs(objs[-1] - worst_distance(cands)) < 1e-9


def test_place_examples():
    sites = grid_layout().positions
    fleet = place_fdts(sites, 1)
    assert fleet.homes == ((500.0, 500.0),)
    assert place_fdts(sites, 9).k == 9
    near_tie = [(0.0, 381.0), (282.0, 932.0)]
    assert abs(place_fdts(near_tie, 1, AREA, RES).objective_m - exhaustive(near_tie, 1)) < 1e-9
    with pytest.raises(InvalidInputError):
        place_fdts(sites, 10)
    with pytest.raises(InvalidInputError):
        place_fdts(sites, 0)


def test_dispatch_examples():
    fleet = FdtFleet(((0.0, 0.0), (100.0, 0.0), (50.0, 300.0)))
    assert dispatch(fleet, (100.0, 0.0)) == (1, 0.0)
    assert dispatch(fleet, (50.0, 0.0)) == (0, 5.0)
    fast = FdtFleet(fleet.homes, speed_mps=20.0)
    assert dispatch(fast, (50.0, 0.0)) == (0, 2.5)
    with pytest.raises(InvalidInputError):
        FdtFleet(())
    with pytest.raises(InvalidInputError):
        FdtFleet(((0.0, 0.0),), speed_mps=0.0)


@given(st.lists(st.tuples(st.floats(0, 1000), st.floats(0, 1000)), min_size=1, max_size=10),
       st.tuples(st.floats(0, 1000), st.floats(0, 1000)), st.floats(0.5, 50))
def test_dispatch_optimal(homes, target, speed):
    fleet = FdtFleet(tuple(homes), speed)
    i, t = dispatch(fleet, target)
    times = [math.dist(h, target) / speed for h in fleet.homes]
    assert t <= min(times) + 1e-9
    assert i == times.index(min(times)) or abs(times[i] - min(times)) < 1e-9


LAYOUT = grid_layout(tx_power_dbm=33.0)
FIELD = ShadowingField(LAYOUT, 0)


def test_verify_dead_zone():
    dead = apply_outage(LAYOUT, LAYOUT.site_ids)
    res = verify_at((500.0, 500.0), [], dead, FIELD)
    assert res.verdict == OUTAGE_CONFIRMED and res.measured_rsrp_dbm == -np.inf


def test_verify_vacuous_floor():
    dead = apply_outage(LAYOUT, LAYOUT.site_ids)
    assert verify_at((500.0, 500.0), [], dead, FIELD, floor_dbm=-np.inf).verdict == ATTACK_CONFIRMED
    assert verify_at((20.0, 20.0), [], LAYOUT, FIELD, floor_dbm=-np.inf).verdict == ATTACK_CONFIRMED


def test_verify_outside_area():
    with pytest.raises(InvalidInputError):
        verify_at((1200.0, 10.0), [], LAYOUT, FIELD)


def test_verify_forged_reports_are_attacks():
    state, ds = scenario(outage=(), n_reports=2500, strategy="forge_low_rsrp", fraction=0.02)
    forged = [r for r in ds.reports if r.label == Label.MALICIOUS]
    assert forged
    for r in forged:
        res = verify_at(r.position, [r], state.outage_layout, state.field)
        assert res.verdict == ATTACK_CONFIRMED
        assert res.cell == r.serving_cell
        assert res.reported_rsrp_dbm == r.serving_rsrp_dbm


def test_verify_real_outage_confirmed():
    state, ds = scenario(outage=(0, 1), n_reports=2500, fraction=0.0)
    real = [r for r in ds.reports if r.label == Label.REAL_OUTAGE]
    res = verify_at(real[0].position, real[:5], state.outage_layout, state.field)
    assert res.verdict == OUTAGE_CONFIRMED


def test_verification_log(tmp_path):
    fleet = FdtFleet(((0.0, 0.0),))
    dead = apply_outage(LAYOUT, LAYOUT.site_ids)
    rows = [verify_at((30.0, 40.0), [], dead, FIELD, fleet=fleet), verify_at((30.0, 40.0), [], LAYOUT, FIELD)]
    p = tmp_path / "v.csv"
    write_verification_log(rows, p)
    lines = p.read_text().splitlines()
    assert lines[0] == ",".join(VERIFICATION_HEADER)
    assert lines[1] == "30.000000,40.000000,0,5.000000,-inf,outage_confirmed"
    assert lines[2].endswith("attack_confirmed") and ",-1,0.000000," in lines[2]
