import numpy as np
import pytest

from sourceridge import (
    GramCache,
    ShrinkageVector,
    assemble_g,
    compute_gram,
    core_solve,
    standardize,
)
from sourceridge.errors import NumericalError
from sourceridge.gram import source_hash

from conftest import lambda_diag, make_instance


def test_gram_identity():
    np.testing.assert_allclose(compute_gram(np.eye(2)), np.eye(2))


def test_gram_two_by_two():
    g = compute_gram(np.array([[1.0, 2.0], [3.0, 4.0]]))
    np.testing.assert_allclose(g, [[5, 11], [11, 25]])


def test_gram_zeros():
    np.testing.assert_allclose(compute_gram(np.zeros((3, 4))), np.zeros((3, 3)))


@pytest.mark.parametrize("block_cols", [1, 3, 7, 64])
def test_gram_block_invariance(rng, block_cols):
    x = rng.standard_normal((9, 40))
    full = x @ x.T
    blocked = compute_gram(x, block_cols=block_cols)
    rel = np.abs(blocked - full).max() / np.abs(full).max()
    assert rel < 1e-9


def test_gram_worker_count_bit_identical(rng):
    x = rng.standard_normal((8, 100))
    results = [compute_gram(x, block_cols=13, workers=w) for w in (1, 2, 4)]
    for r in results[1:]:
        assert np.array_equal(r, results[0])


def test_gram_symmetry(rng):
    g = compute_gram(rng.standard_normal((10, 300)), block_cols=32)
    assert np.array_equal(g, g.T)


def test_assemble_single_source(rng):
    ds = make_instance(rng, 6, (4,))
    cache = GramCache.from_dataset(ds)
    g = assemble_g(cache, ShrinkageVector([1.0]))
    np.testing.assert_allclose(g, cache.grams[0])


def test_assemble_upper_bound_limit(rng):
    ds = make_instance(rng, 5, (4, 3))
    cache = GramCache.from_dataset(ds)
    g = assemble_g(cache, ShrinkageVector([1e12, 1e12]))
    scale = max(np.abs(gk).max() for gk in cache.grams)
    assert np.abs(g).max() <= scale / 1e12 * 2


def test_assemble_weighted_identity():
    cache = GramCache(grams=(np.eye(2), np.eye(2)), n=2, source_dims=(2, 2), names=("a", "b"))
    g = assemble_g(cache, ShrinkageVector([2.0, 4.0]))
    np.testing.assert_allclose(g, 0.75 * np.eye(2))


def test_core_solve_zero_gram():
    y = np.array([1.0, 2.0, -3.0])
    core = core_solve(np.zeros((3, 3)), y)
    np.testing.assert_allclose(core.w_lambda, y)
    assert core.q_lambda == pytest.approx(float(y @ y))
    assert core.logdet == pytest.approx(0.0)


def test_core_solve_identity_gram():
    core = core_solve(np.eye(2), np.array([2.0, 2.0]))
    np.testing.assert_allclose(core.w_lambda, [1.0, 1.0])
    assert core.q_lambda == pytest.approx(4.0)
    assert core.logdet == pytest.approx(2 * np.log(2))


def test_core_solve_dense_inverse_oracle(rng):
    ds = make_instance(rng, 6, (3, 8))
    cache = GramCache.from_dataset(ds)
    lam = ShrinkageVector([0.5, 3.0])
    g = assemble_g(cache, lam)
    core = core_solve(g, ds.y)
    w_direct = np.linalg.inv(np.eye(6) + g) @ ds.y
    np.testing.assert_allclose(core.w_lambda, w_direct, atol=1e-10)
    # the paper-form expression y - (I+G)^-1 G y must agree too
    w_literal = ds.y - np.linalg.inv(np.eye(6) + g) @ (g @ ds.y)
    np.testing.assert_allclose(core.w_lambda, w_literal, atol=1e-10)


def test_core_solve_residual_contract(rng):
    for _ in range(5):
        ds = make_instance(rng, 12, (30,))
        cache = GramCache.from_dataset(ds)
        g = assemble_g(cache, ShrinkageVector([0.1]))
        core = core_solve(g, ds.y)
        resid = (np.eye(12) + g) @ core.w_lambda - ds.y
        assert np.linalg.norm(resid) <= 1e-9 * np.linalg.norm(ds.y)


def test_q_lambda_never_exceeds_y_norm(rng):
    for _ in range(10):
        ds = make_instance(rng, 7, (5, 9))
        cache = GramCache.from_dataset(ds)
        lam = ShrinkageVector(np.exp(rng.uniform(-6, 6, 2)))
        core = core_solve(assemble_g(cache, lam), ds.y)
        assert core.q_lambda <= float(ds.y @ ds.y) * (1 + 1e-12)


def test_determinant_identity(rng):
    # log|I_n + G| = log|Lambda + X'X| - log|Lambda| on small instances
    for dims in [(4,), (3, 5), (2, 3, 4)]:
        ds = standardize(make_instance(rng, 6, dims))
        cache = GramCache.from_dataset(ds)
        lam = ShrinkageVector(np.exp(rng.uniform(-2, 2, len(dims))))
        core = core_solve(assemble_g(cache, lam), ds.y)
        x = np.hstack(ds.blocks)
        lam_d = lambda_diag(lam, ds.source_dims)
        direct = np.linalg.slogdet(lam_d + x.T @ x)[1] - np.linalg.slogdet(lam_d)[1]
        assert core.logdet == pytest.approx(direct, abs=1e-8)


def test_core_solve_failure_reports(rng):
    g = np.full((3, 3), -5.0)  # I+G indefinite
    with pytest.raises(NumericalError, match="Cholesky"):
        core_solve(g, np.ones(3))


def test_gram_disk_cache(tmp_path, rng):
    ds = make_instance(rng, 5, (20,))
    cache1 = GramCache.from_dataset(ds, cache_dir=tmp_path)
    fname = tmp_path / f"{source_hash(ds.blocks[0])}.gram"
    assert fname.exists()
    # tamper-proof: loading must return the persisted matrix bit-exactly
    cache2 = GramCache.from_dataset(ds, cache_dir=tmp_path)
    assert np.array_equal(cache1.grams[0], cache2.grams[0])
