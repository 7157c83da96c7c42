import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from zeroimp.masking import MaskModel, calibrate_self_masking, exact_mask_stats, mc_mask_stats, sample_mask
from zeroimp.model import CovarianceSpec, LinearProblem, build_lowrank_problem


def test_ho_mcar_full_observation():
    P = MaskModel.ho_mcar(7, 1.0).sample(100, np.random.default_rng(0))
    assert P.all()


def test_ho_mcar_rate():
    P = MaskModel.ho_mcar(5, 0.5).sample(1_000_000, np.random.default_rng(1))
    assert np.all(np.abs(P.mean(axis=0) - 0.5) < 0.002)


def test_without_replacement_support():
    P = MaskModel.without_replacement(4, 2).sample(5000, np.random.default_rng(2))
    np.testing.assert_array_equal((P == 0).sum(axis=1), 2)


def test_invalid_constructors():
    with pytest.raises(ValueError):
        MaskModel.ho_mcar(3, 0.0)
    with pytest.raises(ValueError):
        MaskModel.without_replacement(3, 3)
    with pytest.raises(ValueError):
        MaskModel.block_mcar(5, 2)
    with pytest.raises(ValueError):
        MaskModel.block_mcar(2, 2, patterns=np.array([[1, 0]]), probs=np.array([1.0]))


def test_ho_mcar_stats_half():
    st_ = exact_mask_stats(MaskModel.ho_mcar(6, 0.5), L2=1.0)
    assert st_.Lambda_imp == pytest.approx(1.0)
    np.testing.assert_allclose(st_.V, 0.25 * np.eye(6))


def test_ho_mcar_stats_complete():
    st_ = exact_mask_stats(MaskModel.ho_mcar(4, 1.0))
    np.testing.assert_array_equal(st_.V, 0.0)
    assert st_.Lambda_imp == 0.0


def test_without_replacement_lambda_and_reference():
    st_ = exact_mask_stats(MaskModel.without_replacement(4, 2))
    assert st_.lambda_max_C == pytest.approx(4 / 3, abs=1e-12)
    assert st_.reference_lambda_max_C == pytest.approx(3 / 2)
    assert st_.to_dict()["reference_is_upper_bound"]
    assert st_.V[0, 1] == pytest.approx(-1 / 12)


def test_without_replacement_matches_enumeration():
    d, k = 5, 2
    pats, probs = MaskModel.without_replacement(d, k).patterns()
    rho = probs @ pats
    V = (pats.T * probs) @ pats - np.outer(rho, rho)
    st_ = exact_mask_stats(MaskModel.without_replacement(d, k))
    np.testing.assert_allclose(st_.V, V, atol=1e-14)
    assert len(pats) == 10


def test_block_stats_match_enumeration(rng):
    m = MaskModel.random_block_mcar(6, 3, rng)
    pats, probs = m.patterns()
    assert probs.sum() == pytest.approx(1.0)
    rho = probs @ pats
    V = (pats.T * probs) @ pats - np.outer(rho, rho)
    st_ = exact_mask_stats(m)
    np.testing.assert_allclose(st_.V, V, atol=1e-12)
    np.testing.assert_allclose(st_.V[:3, 3:], 0.0, atol=1e-12)


def test_mc_stats_ho_mcar_examples():
    st_ = mc_mask_stats(MaskModel.ho_mcar(4, 0.5), n_draws=1_000_000, seed=3)
    assert np.all(np.abs(np.diag(st_.V) - 0.25) < 0.002)
    off = st_.V[~np.eye(4, dtype=bool)]
    se = st_.V_se[~np.eye(4, dtype=bool)]
    assert np.all(np.abs(off) < 4 * se)


def test_mc_stats_without_replacement_offdiag():
    st_ = mc_mask_stats(MaskModel.without_replacement(4, 2), n_draws=1_000_000, seed=4)
    assert abs(st_.V[0, 1] + 1 / 12) < 0.002


@pytest.mark.parametrize(
    "model",
    [
        MaskModel.ho_mcar(5, 0.3),
        MaskModel.without_replacement(6, 4),
        MaskModel.block_mcar(6, 2, 0.6),
        MaskModel.random_block_mcar(6, 3, np.random.default_rng(9)),
    ],
    ids=["ho", "wr", "block", "random-block"],
)
def test_mc_matches_exact_within_4se(model):
    ex = exact_mask_stats(model)
    mc = mc_mask_stats(model, n_draws=1_000_000, seed=11)
    se = np.maximum(mc.V_se, 1e-12)
    assert np.all(np.abs(mc.V - ex.V) <= 4 * se)


@given(st.integers(1, 25), st.floats(0.05, 1.0))
def test_ho_mcar_lambda_exact(d, rho):
    st_ = exact_mask_stats(MaskModel.ho_mcar(d, rho))
    assert st_.lambda_max_C == pytest.approx((1 - rho) / rho, abs=1e-10)


def test_without_replacement_bound_grid():
    for d in range(2, 60):
        for k in range(1, d):
            lam = exact_mask_stats(MaskModel.without_replacement(d, k)).lambda_max_C
            assert lam == pytest.approx(k * d / ((d - k) * (d - 1)), rel=1e-10)
            assert lam <= (k + 1) / (d - k) + 1e-12


@given(st.integers(1, 4), st.integers(1, 5), st.integers(0, 10_000))
def test_block_lambda_cap_and_c_psd(k, blocks, seed):
    m = MaskModel.random_block_mcar(k * blocks, k, np.random.default_rng(seed))
    st_ = exact_mask_stats(m, L2=2.0)
    assert np.linalg.eigvalsh(st_.C)[0] >= -1e-10 * (1 + st_.lambda_max_C)
    assert st_.Lambda_imp <= 2.0 * k * np.max((1 - st_.rho) / st_.rho) * (1 + 1e-10) + 1e-12


def test_patterns_enumeration_ho_mcar():
    pats, probs = MaskModel.ho_mcar(3, 0.25).patterns()
    assert len(pats) == 8
    for p, w in zip(pats, probs):
        assert w == pytest.approx(0.25 ** p.sum() * 0.75 ** (3 - p.sum()))


def test_self_masking_symmetric_intercept_zero():
    p = build_lowrank_problem(4, 2, seed=0)
    m = calibrate_self_masking(p, alpha_scale=3.0, target_rate=0.5)
    np.testing.assert_allclose(m.intercept, 0.0, atol=1e-9)


def test_self_masking_calibrated_rate_noncentered():
    p = LinearProblem(CovarianceSpec.identity(3), np.ones(3), 1.0, np.ones(3))
    m = calibrate_self_masking(p, 1.0, 0.5, seed=0, check_draws=1_000_000)
    assert np.all(np.abs(np.array(m.meta["achieved_rate"]) - 0.5) < 0.002)
    assert np.all(m.intercept < 0)


def test_self_masking_high_target_rate():
    p = build_lowrank_problem(5, 2, seed=1)
    m = calibrate_self_masking(p, 1.0, 0.99)
    X, _ = p.sample(200_000, np.random.default_rng(2))
    P = m.sample(len(X), np.random.default_rng(3), X)
    assert 1 - P.mean() <= 0.015


def test_self_masking_depends_on_value():
    p = LinearProblem(CovarianceSpec.identity(1), np.ones(1), 1.0)
    m = calibrate_self_masking(p, 3.0, 0.5)
    X, _ = p.sample(100_000, np.random.default_rng(0))
    P = m.sample(len(X), np.random.default_rng(1), X)
    assert P[X[:, 0] > 1].mean() > 0.9 and P[X[:, 0] < -1].mean() < 0.1
    with pytest.raises(ValueError):
        m.sample(3, np.random.default_rng(0))
    with pytest.raises(ValueError):
        exact_mask_stats(m)


def test_sample_mask_single_row():
    p = sample_mask(MaskModel.without_replacement(5, 1), seed=0)
    assert p.shape == (5,) and p.sum() == 4


def test_mcar_independent_of_data():
    m = MaskModel.ho_mcar(3, 0.5)
    a = m.sample(50, np.random.default_rng(5))
    b = m.sample(50, np.random.default_rng(5), np.full((50, 3), 1e6))
    np.testing.assert_array_equal(a, b)


def test_round_trip_dict():
    for m in (
        MaskModel.ho_mcar(3, 0.4),
        MaskModel.without_replacement(5, 2),
        MaskModel.block_mcar(4, 2, 0.7),
        MaskModel.self_masking(np.ones(2), np.array([0.1, -0.2]), 0.5),
    ):
        back = MaskModel.from_dict(m.to_dict())
        assert back.kind == m.kind and back.dim == m.dim
        x = np.random.default_rng(0).standard_normal((10, m.dim))
        np.testing.assert_array_equal(
            back.sample(10, np.random.default_rng(1), x), m.sample(10, np.random.default_rng(1), x)
        )


def test_block_default_law_all_equal():
    P = MaskModel.block_mcar(6, 3, 0.5).sample(1000, np.random.default_rng(0))
    for b in range(2):
        blk = P[:, 3 * b : 3 * b + 3]
        assert np.all((blk.sum(axis=1) == 0) | (blk.sum(axis=1) == 3))
    assert set(itertools.chain.from_iterable(P.tolist())) <= {0, 1}
