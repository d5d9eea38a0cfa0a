"""Sparse recovery tests: problem construction, solvers, weights, pipeline."""
from __future__ import annotations

import numpy as np
import pytest

from oracle_sparse import best_single_atom, exhaustive_support_search

from oobeam.channel import ArrayGeometry, steering_matrix
from oobeam.codebooks import (
    AngleGrid,
    default_min_gain,
    random_dictionary,
    steering_codebook,
)
from oobeam.sparse import (
    BeamSearchProblem,
    PipelineResult,
    SolverConfig,
    WeightVector,
    bpdn,
    build_problem,
    default_regularization,
    oob_weights,
    select_beam_pair,
    sub6_angle_spectra,
    sw_bpdn_pipeline,
    top_angles,
    weighted_bpdn,
)
from oobeam.util import ConfigError, derive_rng

GEOM8 = ArrayGeometry.ula(8)
GRID16 = AngleGrid.for_array(GEOM8)


def _grids(n_tx: int, n_rx: int):
    return AngleGrid.uniform_sin(n_tx), AngleGrid.uniform_sin(n_rx)


def _identity_problem(y, n_tx=2, n_rx=2):
    g = _grids(n_tx, n_rx)
    return BeamSearchProblem(np.eye(n_tx * n_rx, dtype=complex), np.asarray(y, complex), 0.0, g)


def _onehot_channel(geom, grids, ti, ri, coef=1.0):
    at = steering_matrix(geom, grids[0].angles)
    ar = steering_matrix(geom, grids[1].angles)
    return coef * np.outer(ar[:, ri], at[:, ti].conj())


# ---------------------------------------------------------------------------
# Problem construction
# ---------------------------------------------------------------------------

def test_build_problem_on_grid_consistency():
    grids = (GRID16, GRID16)
    h = _onehot_channel(GEOM8, grids, 5, 11, coef=2.0 - 1.0j)
    d = random_dictionary(GEOM8, 24, seed=1)
    prob = build_problem(h, d, GEOM8, GEOM8, grids)
    x_true = np.zeros(16 * 16, dtype=complex)
    x_true[5 * 16 + 11] = 2.0 - 1.0j
    resid = prob.observations - prob.sensing @ x_true
    assert np.abs(resid).max() < 1e-10


def test_build_problem_zero_channel_noise_variance():
    grids = (GRID16, GRID16)
    h = np.zeros((8, 8), dtype=complex)
    d = random_dictionary(GEOM8, 200, seed=2)
    rng = derive_rng(3)
    samples = np.concatenate([
        build_problem(h, d, GEOM8, GEOM8, grids, noise_std=0.5, seed=rng).observations
        for _ in range(20)
    ])
    assert np.var(samples) == pytest.approx(0.25, rel=0.1)
    assert abs(samples.mean()) < 0.01


def test_build_problem_dense_inversion():
    # square system from full cartesian steering codebooks on critical grids
    geom = ArrayGeometry.ula(8)
    grids = _grids(8, 8)
    cb = steering_codebook(geom, grids[0])
    rng = derive_rng(4)
    x_true = np.zeros(64, dtype=complex)
    for idx in rng.choice(64, size=2, replace=False):
        x_true[idx] = rng.standard_normal() + 1j * rng.standard_normal()
    at = steering_matrix(geom, grids[0].angles)
    ar = steering_matrix(geom, grids[1].angles)
    h = ar @ x_true.reshape(8, 8).T @ at.conj().T
    prob = build_problem(h, cb, geom, geom, grids)
    assert prob.n_measurements == 64
    x_hat = np.linalg.lstsq(prob.sensing, prob.observations, rcond=None)[0]
    assert np.abs(x_hat - x_true).max() < 1e-8


def test_build_problem_dimension_mismatch():
    d = random_dictionary(GEOM8, 4, seed=0)
    with pytest.raises(ConfigError):
        build_problem(np.zeros((4, 8), complex), d, GEOM8, GEOM8, (GRID16, GRID16))
    with pytest.raises(ConfigError):
        build_problem(np.zeros((8, 8), complex), d, ArrayGeometry.ula(16), GEOM8,
                      (GRID16, GRID16))


def test_problem_validation():
    with pytest.raises(ConfigError):
        BeamSearchProblem(np.eye(3, dtype=complex), np.zeros(3), 0.0, _grids(2, 2))
    with pytest.raises(ConfigError):
        BeamSearchProblem(np.eye(4, dtype=complex), np.zeros(3), 0.0, _grids(2, 2))
    with pytest.raises(ConfigError):
        BeamSearchProblem(np.eye(4, dtype=complex), np.zeros(4), -1.0, _grids(2, 2))


# ---------------------------------------------------------------------------
# Solvers
# ---------------------------------------------------------------------------

def test_bpdn_identity_soft_threshold():
    prob = _identity_problem([0.0, 2.0, 0.0, 0.0])
    res = bpdn(prob, SolverConfig(regularization=0.5, tolerance=1e-13))
    np.testing.assert_allclose(res.coefficients, [0.0, 1.5, 0.0, 0.0], atol=1e-6)
    assert res.converged


def test_bpdn_large_lambda_zeroes():
    rng = derive_rng(5)
    a = rng.standard_normal((6, 9)) + 1j * rng.standard_normal((6, 9))
    y = rng.standard_normal(6) + 1j * rng.standard_normal(6)
    prob = BeamSearchProblem(a, y, 0.0, _grids(3, 3))
    lam = float(np.abs(a.conj().T @ y).max())
    res = bpdn(prob, SolverConfig(regularization=lam * 1.0001))
    assert np.abs(res.coefficients).max() == 0.0


def test_bpdn_objective_monotone():
    rng = derive_rng(6)
    a = rng.standard_normal((20, 36)) + 1j * rng.standard_normal((20, 36))
    y = rng.standard_normal(20) + 1j * rng.standard_normal(20)
    prob = BeamSearchProblem(a, y, 0.0, _grids(6, 6))
    res = bpdn(prob, SolverConfig(regularization=0.3))
    assert (np.diff(res.objectives) <= 0).all()
    assert res.objectives[0] == pytest.approx(0.5 * np.linalg.norm(y) ** 2)


def test_bpdn_single_atom_support_200_trials():
    # noiseless 1-sparse recovery must agree with the correlation oracle
    rng0 = derive_rng(7)
    a = rng0.standard_normal((8, 16)) + 1j * rng0.standard_normal((8, 16))
    a /= np.linalg.norm(a, axis=0)
    hits = 0
    for trial in range(200):
        rng = derive_rng(8, trial)
        j = int(rng.integers(16))
        coef = rng.uniform(0.5, 2.0) * np.exp(2j * np.pi * rng.random())
        y = a[:, j] * coef
        prob = BeamSearchProblem(a, y, 0.0, _grids(4, 4))
        res = bpdn(prob, SolverConfig(regularization=1e-3))
        hits += int(np.argmax(np.abs(res.coefficients))) == best_single_atom(a, y) == j
    assert hits == 200


def test_weighted_uniform_equals_plain():
    rng = derive_rng(9)
    a = rng.standard_normal((10, 16)) + 1j * rng.standard_normal((10, 16))
    y = rng.standard_normal(10) + 1j * rng.standard_normal(10)
    prob = BeamSearchProblem(a, y, 0.0, _grids(4, 4))
    cfg = SolverConfig(regularization=0.2)
    r1 = bpdn(prob, cfg)
    r2 = weighted_bpdn(prob, WeightVector.uniform(16), cfg)
    np.testing.assert_array_equal(r1.coefficients, r2.coefficients)
    np.testing.assert_array_equal(r1.objectives, r2.objectives)


def test_weighted_huge_offsupport_weights_recover_support():
    grids = (GRID16, GRID16)
    ti, ri = 3, 9
    h = _onehot_channel(GEOM8, grids, ti, ri, coef=1.0 + 0.5j)
    d = random_dictionary(GEOM8, 24, seed=10)
    prob = build_problem(h, d, GEOM8, GEOM8, grids)
    w = np.full(256, 1e6)
    w[ti * 16 + ri] = 1.0
    res = weighted_bpdn(prob, WeightVector(w), SolverConfig(regularization=1e-4))
    flat = int(np.argmax(np.abs(res.coefficients)))
    assert flat == ti * 16 + ri
    assert exhaustive_support_search(prob.sensing, prob.observations, 1) == {flat}


def test_weighted_lambda_weight_product_invariance():
    rng = derive_rng(11)
    a = rng.standard_normal((12, 16)) + 1j * rng.standard_normal((12, 16))
    y = rng.standard_normal(12) + 1j * rng.standard_normal(12)
    prob = BeamSearchProblem(a, y, 0.0, _grids(4, 4))
    w = rng.uniform(0.5, 2.0, size=16)
    r1 = weighted_bpdn(prob, WeightVector(w), SolverConfig(regularization=0.4))
    r2 = weighted_bpdn(prob, WeightVector(w / 2.0), SolverConfig(regularization=0.8))
    np.testing.assert_array_equal(r1.objectives, r2.objectives)
    np.testing.assert_array_equal(r1.coefficients, r2.coefficients)


def test_solver_vs_exhaustive_restricted_ls():
    # sampled-down version of the acceptance sweep: 60 trials, 20 dB
    grids = (GRID16, GRID16)
    at = steering_matrix(GEOM8, GRID16.angles)
    ar = steering_matrix(GEOM8, GRID16.angles)
    hits = 0
    for trial in range(60):
        rng = derive_rng(777, trial)
        d = random_dictionary(GEOM8, 64, seed=int(rng.integers(1 << 31)))
        s = 1 + (trial % 2)
        idx = rng.choice(256, size=s, replace=False)
        x = np.zeros((16, 16), dtype=complex)
        for fi in idx:
            x[fi % 16, fi // 16] = rng.uniform(0.5, 1.5) * np.exp(2j * np.pi * rng.random())
        h = ar @ x @ at.conj().T
        clean = build_problem(h, d, GEOM8, GEOM8, grids)
        sigma = float(np.sqrt(np.mean(np.abs(clean.observations) ** 2) / 100.0))
        prob = build_problem(h, d, GEOM8, GEOM8, grids, noise_std=sigma, seed=rng)
        res = bpdn(prob)
        top = set(np.argsort(np.abs(res.coefficients))[-s:].tolist())
        hits += top == exhaustive_support_search(prob.sensing, prob.observations, s)
    assert hits >= int(0.95 * 60)


def test_solver_config_validation():
    with pytest.raises(ConfigError):
        SolverConfig(regularization=-1.0)
    with pytest.raises(ConfigError):
        SolverConfig(max_iterations=0)
    with pytest.raises(ConfigError):
        SolverConfig(tolerance=0.0)


# ---------------------------------------------------------------------------
# Weights
# ---------------------------------------------------------------------------

def test_oob_weights_delta_spectrum():
    grids = _grids(4, 4)
    s_tx = np.zeros(4); s_tx[1] = 1.0
    s_rx = np.zeros(4); s_rx[2] = 1.0
    w = oob_weights((s_tx, s_rx), grids, spread_steps=0.0, floor=0.1)
    vals = w.values.reshape(4, 4)
    assert vals[1, 2] == pytest.approx(1.0 / 1.1)
    mask = np.ones((4, 4), bool); mask[1, 2] = False
    np.testing.assert_allclose(vals[mask], 10.0)
    assert not w.degenerate


def test_oob_weights_uniform_spectrum():
    grids = _grids(4, 4)
    s = np.full(4, 0.25)
    w = oob_weights((s, s), grids, spread_steps=0.0)
    np.testing.assert_allclose(w.values, 1.0 / 1.1)


def test_oob_weights_mismatch_spread():
    grids = _grids(8, 8)
    s_tx = np.zeros(8); s_tx[4] = 1.0
    s_rx = np.zeros(8); s_rx[4] = 1.0
    w = oob_weights((s_tx, s_rx), grids, spread_steps=1.0, floor=0.1).values.reshape(8, 8)
    matched, unmatched = w[4, 4], w[0, 0]
    for i in (3, 5):
        assert matched < w[i, 4] < unmatched
        assert matched < w[4, i] < unmatched
    assert matched == pytest.approx(1.0 / 1.1)


def test_oob_weights_degenerate_zero_spectrum():
    grids = _grids(4, 4)
    w = oob_weights((np.zeros(4), np.zeros(4)), grids)
    assert w.degenerate
    np.testing.assert_array_equal(w.values, np.ones(16))


def test_oob_weights_validation():
    grids = _grids(4, 4)
    bad = np.full(4, 0.5)
    with pytest.raises(ConfigError):
        oob_weights((bad, bad), grids)
    with pytest.raises(ConfigError):
        oob_weights((np.full(4, 0.25), np.full(4, 0.25)), grids, floor=0.0)
    with pytest.raises(ConfigError):
        WeightVector(np.array([1.0, 0.0]))


def test_sub6_spectra_peak_at_path_angle():
    geom = ArrayGeometry.ula(4)
    grids = (GRID16, GRID16)
    at = steering_matrix(geom, grids[0].angles)
    ar = steering_matrix(geom, grids[1].angles)
    h = np.outer(ar[:, 12], at[:, 3].conj())
    s_tx, s_rx = sub6_angle_spectra(h, geom, geom, grids)
    assert s_tx.sum() == pytest.approx(1.0)
    assert int(np.argmax(s_tx)) == 3
    assert int(np.argmax(s_rx)) == 12


def test_top_angles_separation():
    grid = AngleGrid.uniform_sin(16)
    s = np.zeros(16)
    s[5] = 1.0
    s[6] = 0.9
    s[12] = 0.8
    picks = top_angles(s, grid, count=2, min_separation=2)
    np.testing.assert_allclose(picks, grid.angles[[5, 12]])


# ---------------------------------------------------------------------------
# Selection
# ---------------------------------------------------------------------------

def test_select_beam_pair_basic():
    grids = _grids(4, 6)
    x = np.zeros(24, dtype=complex)
    x[2 * 6 + 5] = 3.0j
    assert select_beam_pair(x, grids) == (2, 5)
    assert select_beam_pair(7.5 * x, grids) == (2, 5)


def test_select_beam_pair_tie_break():
    grids = _grids(2, 2)
    x = np.array([0.0, 2.0, 2.0, 0.0], dtype=complex)
    assert select_beam_pair(x, grids) == (0, 1)


# ---------------------------------------------------------------------------
# Structured pipeline
# ---------------------------------------------------------------------------

GEOM32 = ArrayGeometry.ula(32)
GRID64 = AngleGrid.for_array(GEOM32)


def test_pipeline_aligned_prior_few_measurements():
    grids = (GRID64, GRID64)
    for trial in range(8):
        rng = derive_rng(50, trial)
        ti, ri = int(rng.integers(64)), int(rng.integers(64))
        h = _onehot_channel(GEOM32, grids, ti, ri, coef=1.5 * np.exp(2j * np.pi * rng.random()))
        res = sw_bpdn_pipeline(
            h, GEOM32, GEOM32, grids, [grids[0].angles[ti]], [grids[1].angles[ri]],
            8, default_min_gain(GEOM32), SolverConfig(regularization=1e-4),
            seed=trial,
        )
        assert (res.transmit_index, res.receive_index) == (ti, ri)
        # exhaustive steering-codebook power scan agrees
        at = steering_matrix(GEOM32, grids[0].angles)
        ar = steering_matrix(GEOM32, grids[1].angles)
        power = np.abs(ar.conj().T @ h @ at) ** 2
        best = np.unravel_index(np.argmax(power), power.shape)
        assert (best[1], best[0]) == (ti, ri)


def test_pipeline_zero_gain_uniform_weights_reduces_to_bpdn():
    grids = (GRID64, GRID64)
    h = _onehot_channel(GEOM32, grids, 10, 20)
    cfg = SolverConfig(regularization=0.01)
    uni = WeightVector.uniform(64 * 64)
    res = sw_bpdn_pipeline(h, GEOM32, GEOM32, grids, [0.3], [0.3], 12, 0.0,
                           cfg, seed=6, noise_std=0.05, weights=uni)
    d = random_dictionary(GEOM32, 12, seed=6)
    prob = build_problem(h, d, GEOM32, GEOM32, grids, noise_std=0.05,
                         seed=derive_rng(6, 101))
    ref = bpdn(prob, cfg)
    np.testing.assert_array_equal(res.solve.coefficients, ref.coefficients)
    np.testing.assert_array_equal(res.solve.objectives, ref.objectives)


def test_pipeline_misleading_prior_hurts():
    grids = (GRID64, GRID64)
    at = steering_matrix(GEOM32, grids[0].angles)
    ar = steering_matrix(GEOM32, grids[1].angles)
    plain = mislead = 0
    for trial in range(30):
        rng = derive_rng(90, trial)
        ti, ri = int(rng.integers(64)), int(rng.integers(64))
        h = np.outer(ar[:, ri], at[:, ti].conj())
        d = random_dictionary(GEOM32, 36, seed=trial)
        clean = build_problem(h, d, GEOM32, GEOM32, grids)
        sigma = float(np.sqrt(np.mean(np.abs(clean.observations) ** 2) / 10.0))
        prob = build_problem(h, d, GEOM32, GEOM32, grids, noise_std=sigma, seed=rng)
        sel = select_beam_pair(bpdn(prob).coefficients, grids)
        plain += sel == (ti, ri)
        st, sr = np.sin(grids[0].angles[ti]), np.sin(grids[1].angles[ri])
        wrong_t = float(np.arcsin(-st if abs(st) > 0.2 else 0.9))
        wrong_r = float(np.arcsin(-sr if abs(sr) > 0.2 else 0.9))
        res = sw_bpdn_pipeline(h, GEOM32, GEOM32, grids, [wrong_t], [wrong_r], 36,
                               default_min_gain(GEOM32), None, seed=trial,
                               noise_std=sigma)
        mislead += (res.transmit_index, res.receive_index) == (ti, ri)
    assert plain >= 24
    assert mislead <= plain


def test_pipeline_returns_dictionary_and_weights():
    grids = (GRID64, GRID64)
    h = _onehot_channel(GEOM32, grids, 30, 30)
    res = sw_bpdn_pipeline(h, GEOM32, GEOM32, grids, [0.2], [0.2], 10,
                           default_min_gain(GEOM32), seed=3)
    assert isinstance(res, PipelineResult)
    assert res.dictionary.n_measurements == 10
    assert res.weights.values.size == 64 * 64
    assert default_regularization(
        build_problem(h, res.dictionary, GEOM32, GEOM32, grids, 0.0, 0)
    ) == 0.0
