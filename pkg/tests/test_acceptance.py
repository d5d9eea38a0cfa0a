"""End-to-end behavioral checks at the shipped defaults.

One test per headline claim, ordered cheap to expensive:

1. sweep-overhead closed form is exact and matches the two-stage budget;
2. solver top-support agrees with an exhaustive restricted-LS oracle;
3. measurement counts to a quality target order structured < weighted < plain;
4. the weighted-vs-plain rate gap is nonnegative and grows with distance;
5. fingerprint training stays far below the sweep budget as arrays grow;
6. parametric correlation translation beats lag-domain resampling;
7. structural invariants: energy conservation, PSD, beam norms, clamping,
   nonnegative loss, byte-identical reruns.

The Monte Carlo tests (3-5) run minutes each; everything is seeded, so
results are reproducible bit for bit.
"""
from __future__ import annotations

import math
import os
import tempfile

import numpy as np
import pytest

from oracle_sparse import exhaustive_support_search

from oobeam.channel import (
    ArrayGeometry,
    ChannelConfig,
    CongruencePolicy,
    generate_congruent_channels,
    paths_to_taps,
    steering_matrix,
    taps_to_subcarriers,
)
from oobeam.codebooks import (
    AngleGrid,
    random_dictionary,
    steering_codebook,
    structured_random_dictionary,
)
from oobeam.fingerprint import loss_from_powers
from oobeam.harness import (
    ExperimentConfig,
    OverheadModel,
    channel_ensemble,
    effective_rate,
    fingerprint_sweep,
    ieee80211ad_overhead,
    ieee80211ad_overhead_antennas,
    measurements_to_target,
    quadratic_fit,
    run_experiment,
    summary_csv,
)
from oobeam.matio import save_matrix
from oobeam.sparse import bpdn, build_problem, oob_weights, weighted_bpdn
from oobeam.translate import (
    AngularSpectrum,
    correlation_from_spectrum,
    correlation_nmse,
    nonparametric_translate,
    parametric_translate,
    sample_correlation,
)
from oobeam.util import derive_rng


def test_sweep_overhead_formula_exact():
    # closed antenna form, and agreement with the two-stage budget at
    # N_sec = N_a, N_QO = N_a/32; all values are dyadic so equality is exact
    for t_tr in (1.0, 10.0):
        for n_a in (8, 16, 24, 32, 64):
            closed = ieee80211ad_overhead_antennas(n_a, t_tr)
            assert closed == (n_a ** 2 / 32 + 64) * t_tr
            model = OverheadModel(n_sec=n_a, n_qo=n_a / 32, t_tr=t_tr)
            assert ieee80211ad_overhead(model) == closed


def test_solver_top_support_matches_restricted_ls_oracle():
    # planted on-grid supports of size 1 or 2 at 20 dB; the plain solver and
    # the weighted solver (prior at the planted angles) must both agree with
    # brute-force restricted least squares on >= 95% of 200 trials
    geom = ArrayGeometry.ula(8)
    grid = AngleGrid.uniform_sin(16)
    grids = (grid, grid)
    at = steering_matrix(geom, grid.angles)
    ar = steering_matrix(geom, grid.angles)
    hits_plain = 0
    hits_weighted = 0
    trials = 200
    for trial in range(trials):
        rng = derive_rng(777, trial)
        d = random_dictionary(geom, 64, seed=int(rng.integers(1 << 31)))
        s = 1 + (trial % 2)
        idx = rng.choice(256, size=s, replace=False)
        x = np.zeros((16, 16), dtype=complex)
        spec_tx = np.zeros(16)
        spec_rx = np.zeros(16)
        for fi in idx:
            x[fi % 16, fi // 16] = rng.uniform(0.5, 1.5) * np.exp(
                2j * np.pi * rng.random())
            spec_tx[fi // 16] += 1.0
            spec_rx[fi % 16] += 1.0
        h = ar @ x @ at.conj().T
        clean = build_problem(h, d, geom, geom, grids)
        sigma = float(np.sqrt(np.mean(np.abs(clean.observations) ** 2) / 100.0))
        prob = build_problem(h, d, geom, geom, grids, noise_std=sigma, seed=rng)
        oracle = exhaustive_support_search(prob.sensing, prob.observations, s)

        res = bpdn(prob)
        top = set(np.argsort(np.abs(res.coefficients))[-s:].tolist())
        hits_plain += top == oracle

        w = oob_weights((spec_tx / spec_tx.sum(), spec_rx / spec_rx.sum()), grids)
        res_w = weighted_bpdn(prob, w)
        top_w = set(np.argsort(np.abs(res_w.coefficients))[-s:].tolist())
        hits_weighted += top_w == oracle
    assert hits_plain >= int(0.95 * trials)
    assert hits_weighted >= int(0.95 * trials)


def test_measurement_count_ordering_structured_weighted_plain():
    # at 40 m with the shipped defaults, the measurement count needed for a
    # 0.4 mean alignment quality must order sw <= w <= plain in >= 90% of
    # 50 independent ensemble repetitions, and every finite count must
    # undercut the 96-symbol exhaustive sweep budget
    grid_m = (8, 12, 16, 24, 36, 48)
    target = 0.4
    baseline = ieee80211ad_overhead_antennas(32, 1.0)
    ok = 0
    for rep in range(50):
        cfg = ExperimentConfig(trials=1, master_seed=rep)
        ensemble = channel_ensemble(cfg, 40.0, 25)
        ms = {
            method: measurements_to_target(method, ensemble, target, grid_m, cfg)
            for method in ("bpdn", "w-bpdn", "sw-bpdn")
        }
        ok += (ms["sw-bpdn"] <= ms["w-bpdn"] <= ms["bpdn"]
               and not math.isinf(ms["bpdn"]))
        for m in ms.values():
            if not math.isinf(m):
                assert m < baseline
    assert ok >= 45


def test_rate_gap_nonnegative_and_grows_with_distance():
    # with M = 36 fixed, the weighted-minus-plain mean effective-rate gap
    # must be >= 0 at every distance and strictly larger at the far end
    config = ExperimentConfig(
        methods=("bpdn", "w-bpdn"),
        distances_m=(30.0, 45.0, 60.0, 75.0, 90.0, 105.0, 120.0),
        trials=500,
        master_seed=0,
    )
    records, _ = run_experiment(config)
    rates: dict[tuple[str, float], list[float]] = {}
    for rec in records:
        rates.setdefault((rec.method, rec.distance_m), []).append(rec.rate)
    gaps = {}
    for dist in config.distances_m:
        bpdn_rates = rates[("bpdn", dist)]
        weighted_rates = rates[("w-bpdn", dist)]
        assert len(bpdn_rates) == len(weighted_rates) == config.trials
        gaps[dist] = float(np.mean(weighted_rates) - np.mean(bpdn_rates))
    for dist, gap in gaps.items():
        assert gap >= 0.0, f"gap {gap:+.3f} at {dist} m"
    assert gaps[120.0] > gaps[30.0]


def test_fingerprint_overhead_beats_sweep_at_scale():
    # square arrays from 8x8 to 32x32 on the shared synthetic scene at
    # -16.88 dB per antenna, 10 symbols per trained beam: the training cost
    # ratio to the sweep budget is < 10% from 16x16 on and keeps falling,
    # and its growth in antenna count is at least 10x flatter than the
    # sweep's exact quadratic
    rows = fingerprint_sweep()
    by_side = {row.side: row for row in rows}
    for side in (16, 24, 32):
        assert not by_side[side].unreachable
    assert by_side[16].ratio < 0.10
    assert by_side[16].ratio > by_side[24].ratio > by_side[32].ratio

    n_a = np.array([row.n_antennas for row in rows], dtype=float)
    sweep = np.array([row.baseline_symbols for row in rows])
    fingerprint = np.array([row.overhead_symbols for row in rows])
    a_sweep, _, resid = quadratic_fit(n_a, sweep)
    assert a_sweep == pytest.approx(10.0 / 32.0, rel=1e-9)
    assert resid <= 1e-8 * np.linalg.norm(sweep)
    a_fp, _, _ = quadratic_fit(n_a, fingerprint)
    assert 10.0 * abs(a_fp) <= a_sweep


def test_parametric_translation_beats_nonparametric():
    low = ArrayGeometry.ula(4)
    high = ArrayGeometry.ula(32)

    # single-path correlations translate essentially exactly
    for angle_deg in (-41.0, -7.0, 0.0, 13.0, 58.0):
        spec = AngularSpectrum.single_path(np.deg2rad(angle_deg))
        r_low = correlation_from_spectrum(low, spec)
        out = parametric_translate(r_low, low, high, family="single-path")
        truth = correlation_from_spectrum(high, spec)
        assert correlation_nmse(out, truth) <= 1e-8

    # 100-case spread ensemble: the model-based route wins in the median
    param, nonparam = [], []
    for case in range(100):
        rng = derive_rng(62, case)
        spec = AngularSpectrum.gaussian(
            np.deg2rad(rng.uniform(-45.0, 45.0)),
            np.deg2rad(rng.uniform(2.0, 8.0)),
        )
        r_low = correlation_from_spectrum(low, spec)
        truth = correlation_from_spectrum(high, spec)
        param.append(correlation_nmse(
            parametric_translate(r_low, low, high, family="gaussian"), truth))
        nonparam.append(correlation_nmse(
            nonparametric_translate(r_low, low, high), truth))
    assert np.median(param) < np.median(nonparam)


def test_structural_invariants():
    config = ChannelConfig.default()
    policy = CongruencePolicy()
    mm = config.mmwave

    # tap-domain vs subcarrier-domain energy agrees to 1e-10 relative
    for seed in range(1000):
        _, paths_mm = generate_congruent_channels(config, policy, seed)
        taps = paths_to_taps(paths_mm, mm.rx, mm.tx, mm.sample_period,
                             n_taps=config.n_taps)
        sub = taps_to_subcarriers(taps, config.n_subcarriers)
        e_time = float(np.sum(np.abs(taps) ** 2))
        e_freq = float(np.sum(np.abs(sub) ** 2)) / config.n_subcarriers
        assert abs(e_time - e_freq) <= 1e-10 * max(e_time, 1e-300)

    # every correlation we produce is Hermitian and PSD
    low = ArrayGeometry.ula(4)
    high = ArrayGeometry.ula(32)
    rng = derive_rng(900)
    snaps = rng.standard_normal((12, 4)) + 1j * rng.standard_normal((12, 4))
    spec = AngularSpectrum.gaussian(0.3, 0.04)
    correlations = [
        sample_correlation(snaps, low),
        correlation_from_spectrum(low, spec),
        correlation_from_spectrum(high, spec),
        parametric_translate(correlation_from_spectrum(low, spec), low, high),
        nonparametric_translate(correlation_from_spectrum(low, spec), low, high),
    ]
    for corr in correlations:
        m = corr.matrix
        assert np.abs(m - m.conj().T).max() <= 1e-10
        floor = -1e-8 * max(float(np.trace(m).real) / m.shape[0], 1e-300)
        assert float(np.linalg.eigvalsh(m)[0]) >= floor

    # beams: unit norm everywhere, constant modulus on the phase lattice
    # for the quantized dictionaries
    geom = ArrayGeometry.ula(16)
    steered = steering_codebook(geom, AngleGrid.for_array(geom, 1))
    quantized = list(random_dictionary(geom, 12, seed=3).transmit)
    quantized += list(structured_random_dictionary(
        geom, 12, [0.2, -0.4], min_gain=1.0, seed=4).transmit)
    for beam in list(steered.transmit) + quantized:
        assert abs(np.linalg.norm(beam.weights) - 1.0) <= 1e-12
    for beam in quantized:
        assert beam.quantized
        mags = np.abs(beam.weights)
        assert np.abs(mags - 1.0 / np.sqrt(beam.n_elements)).max() <= 1e-12
        lattice = np.angle(beam.weights) * (2 ** beam.bits) / (2.0 * np.pi)
        assert np.abs(lattice - np.round(lattice)).max() <= 1e-9

    # the training fraction clamps the rate to zero, never below
    assert effective_rate(5.0, 10.0, 2048, 2048) == 0.0
    assert effective_rate(5.0, 10.0, 4096, 2048) == 0.0

    # selection loss against the exhaustive best is never negative
    rng = derive_rng(901)
    for _ in range(200):
        powers = rng.random((6, 6))
        sel = (int(rng.integers(6)), int(rng.integers(6)))
        assert loss_from_powers(powers, sel) >= 0.0

    # reruns are byte-identical: experiment CSV and matrix text
    small = ExperimentConfig(trials=3, distances_m=(40.0,), master_seed=5)
    _, rows_a = run_experiment(small)
    _, rows_b = run_experiment(small)
    assert summary_csv(rows_a) == summary_csv(rows_b)

    rng = derive_rng(902)
    data = rng.standard_normal((5, 7)) + 1j * rng.standard_normal((5, 7))
    texts = []
    for _ in range(2):
        with tempfile.TemporaryDirectory() as tmp:
            p = os.path.join(tmp, "m.txt")
            save_matrix(p, data, {"band": "mmwave"})
            with open(p, "rb") as fh:
                texts.append(fh.read())
    assert texts[0] == texts[1]
