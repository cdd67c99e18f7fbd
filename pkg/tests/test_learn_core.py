import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from mdtguard.errors import InvalidInputError, SplitError
from mdtguard.learn_core import (compute_metrics, jacobi_eigh, make_rng, pca_fit, pca_project, pca_reconstruct,
                                 standardize_apply, standardize_fit_transform, stratified_split)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_rng_streams_are_independent_and_reproducible():
    a = make_rng(5, "x").standard_normal(4)
    assert np.array_equal(a, make_rng(5, "x").standard_normal(4))
    assert not np.array_equal(a, make_rng(5, "y").standard_normal(4))
    assert not np.array_equal(a, make_rng(6, "x").standard_normal(4))
    assert type(make_rng(0).bit_generator).__name__ == "Philox"


def test_standardize_examples():
    x = np.column_stack([np.full(10, 3.0), np.arange(10.0)])
    z, p = standardize_fit_transform(x)
    assert np.allclose(z[:, 0], 0.0)  # constant column: minus mean, std guard 1
    assert p.std[0] == 1.0
    already = (np.arange(10.0) - 4.5) / np.arange(10.0).std()
    z2, _ = standardize_fit_transform(already[:, None])
    assert np.allclose(z2[:, 0], already, atol=1e-9)
    test = standardize_apply(np.array([[3.0, 100.0], [3.0, 101.0]]), p)
    assert abs(test[:, 1].mean()) > 1.0


@given(arrays(float, (20, 3), elements=finite))
def test_standardize_train_moments(x):
    z, p = standardize_fit_transform(x)
    assert np.allclose(z.mean(axis=0), 0.0, atol=1e-9)
    varying = x.std(axis=0) > 1e-6
    assert np.allclose(z.std(axis=0)[varying], 1.0, atol=1e-9)


def test_jacobi_matches_independent_eigensolver():
    rng = np.random.default_rng(42)
    for n in (2, 5, 16):
        a = rng.standard_normal((n, n))
        sym = a + a.T
        w, v = jacobi_eigh(sym)
        w_ref = np.sort(np.linalg.eigvalsh(sym))[::-1]
        assert np.allclose(w, w_ref, atol=1e-10)
        assert np.allclose(v.T @ v, np.eye(n), atol=1e-10)
        assert np.allclose(sym @ v, v * w, atol=1e-9)


def test_jacobi_rejects_asymmetric():
    with pytest.raises(InvalidInputError):
        jacobi_eigh(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_pca_explained_variance_matches_oracle_50x16():
    x = np.random.default_rng(7).standard_normal((50, 16)) @ np.diag(np.linspace(0.5, 3, 16))
    basis = pca_fit(x, 16)
    ref = np.sort(np.linalg.eigvalsh(np.cov(x, rowvar=False)))[::-1]
    assert np.allclose(basis.explained_variance, ref, atol=1e-6)
    assert np.allclose(basis.components.T @ basis.components, np.eye(16), atol=1e-8)
    assert basis.explained_variance_ratio.sum() == pytest.approx(1.0)


def test_pca_full_basis_is_isometry():
    x = np.random.default_rng(3).standard_normal((30, 6))
    y = pca_project(pca_fit(x, 6), x)
    dx = np.linalg.norm(x[:, None] - x[None], axis=-1)
    dy = np.linalg.norm(y[:, None] - y[None], axis=-1)
    assert np.allclose(dx, dy, atol=1e-8)


def test_pca_rank_one_reconstruction_and_monotone_error():
    t = np.linspace(-2, 2, 25)
    rank1 = np.outer(t, [1.0, -2.0, 0.5]) + [3.0, 1.0, 0.0]
    b = pca_fit(rank1, 1)
    assert np.allclose(pca_reconstruct(b, pca_project(b, rank1)), rank1, atol=1e-8)
    x = np.random.default_rng(0).standard_normal((40, 5))
    errs = []
    for k in range(6):
        b = pca_fit(x, k)
        errs.append(np.sum((pca_reconstruct(b, pca_project(b, x)) - x) ** 2))
    assert all(a >= b - 1e-9 for a, b in zip(errs, errs[1:]))
    assert errs[-1] == pytest.approx(0.0, abs=1e-8)


def test_pca_errors():
    with pytest.raises(InvalidInputError):
        pca_fit(np.zeros((5, 3)), 4)
    with pytest.raises(InvalidInputError):
        pca_fit(np.zeros((1, 3)), 1)


def test_split_examples():
    y = [0] * 100 + [1] * 10
    train, test = stratified_split(y, 0.3, seed=1)
    yt = np.asarray(y)
    assert (np.sum(yt[train] == 0), np.sum(yt[test] == 0)) == (70, 30)
    assert (np.sum(yt[train] == 1), np.sum(yt[test] == 1)) == (7, 3)
    tr0, te0 = stratified_split(y, 0.0, seed=1)
    assert te0.size == 0 and tr0.size == 110
    again = stratified_split(y, 0.3, seed=1)
    assert np.array_equal(again[0], train) and np.array_equal(again[1], test)


def test_split_needs_two_rows_per_class():
    with pytest.raises(SplitError):
        stratified_split([0, 0, 0, 1], 0.3, 0)


@given(st.lists(st.integers(0, 2), min_size=6, max_size=80), st.floats(0.0, 0.9), st.integers(0, 99))
def test_split_disjoint_exhaustive_proportional(labels, frac, seed):
    y = np.asarray(labels)
    counts = np.bincount(y, minlength=3)
    if np.any((counts > 0) & (counts < 2)):
        with pytest.raises(SplitError):
            stratified_split(y, frac, seed)
        return
    train, test = stratified_split(y, frac, seed)
    assert np.intersect1d(train, test).size == 0
    assert np.array_equal(np.sort(np.concatenate([train, test])), np.arange(y.size))
    for c in np.unique(y):
        assert abs(np.sum(y[test] == c) - frac * counts[c]) <= 1


def test_metrics_examples():
    assert compute_metrics([1, 0, 1], [1, 0, 1], 1).f1 == 1.0
    m = compute_metrics([1, 1, 0, 0], [1, 0, 1, 0], 1)
    assert (m.tp, m.fp, m.fn) == (1, 1, 1)
    assert m.f1 == pytest.approx(0.5)
    assert compute_metrics([0, 0, 0], [1, 1, 0], 1).f1 == 0.0
    assert m.error_rates == {0: 0.5, 1: 0.5}
    with pytest.raises(InvalidInputError):
        compute_metrics([1], [1, 0], 1)


@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=50))
def test_metrics_swap_symmetry(pairs):
    p, t = zip(*pairs)
    a, b = compute_metrics(p, t, 1), compute_metrics(t, p, 1)
    assert a.precision == pytest.approx(b.recall)
    assert a.recall == pytest.approx(b.precision)
    assert 0.0 <= a.f1 <= 1.0
