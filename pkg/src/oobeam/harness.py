"""Experiment orchestration: effective rate, overhead models, Monte Carlo runs.

Ties the channel generator, the sparse beam-search solvers and the
fingerprint pipeline into seeded experiments:

- effective rate = training-discounted spectral efficiency;
- an IEEE 802.11ad-style two-stage sweep overhead model as the baseline;
- a distance sweep comparing recovery methods on congruent channel pairs;
- a measurement-count search for a target alignment quality;
- an array-size sweep of fingerprint overhead against the 802.11ad budget.

Each (method, distance) cell is seeded independently of execution order;
channels, probe dictionaries and measurement noise for a given trial are
shared across methods, so method comparisons are paired.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import (
    ArrayGeometry,
    ChannelConfig,
    CongruencePolicy,
    LinkBudget,
    PathSet,
    generate_congruent_channels,
    link_snr_db,
    narrowband_matrix,
    observe_narrowband,
    steering_matrix,
)
from .codebooks import AngleGrid, default_min_gain, random_dictionary
from .fingerprint import (
    FingerprintDatabase,
    SceneModel,
    build_fingerprint_db,
    fingerprint_overhead,
    loss_from_powers,
)
from .sparse import (
    SolverConfig,
    bpdn,
    build_problem,
    oob_weights,
    select_beam_pair,
    sub6_angle_spectra,
    sw_bpdn_pipeline,
    top_angles,
    weighted_bpdn,
)
from .util import ConfigError, derive_rng, derive_seed

log = logging.getLogger(__name__)

VALID_METHODS = ("bpdn", "w-bpdn", "sw-bpdn", "fingerprint", "11ad")

SUMMARY_COLUMNS = (
    "method", "distance_m", "M", "trials", "mean_rate", "median_rate",
    "p05_rate", "mean_loss_db", "success_prob", "overhead_symbols",
    "reduction",
)


# ---------------------------------------------------------------------------
# Rate and overhead formulas
# ---------------------------------------------------------------------------

def effective_rate(gain: float, snr: float, training_symbols: float,
                   coherence_symbols: float) -> float:
    """Spectral efficiency discounted by the training fraction.

    eta = max(0, 1 - training/coherence); returns eta * log2(1 + gain*snr)
    in bits/s/Hz. Gain and SNR are linear.
    """
    if coherence_symbols <= 0:
        raise ConfigError("coherence_symbols must be positive")
    if training_symbols < 0 or gain < 0 or snr < 0:
        raise ConfigError("gain, snr and training_symbols must be nonnegative")
    eta = max(0.0, 1.0 - training_symbols / coherence_symbols)
    return eta * math.log2(1.0 + gain * snr)


@dataclass(frozen=True)
class OverheadModel:
    """Two-stage sector sweep budget: quasi-omni then sector training.

    ``n_qo`` may be fractional: evaluating the sweep formula at N_QO =
    N_sec/32 < 1 is how the closed antenna form extends below 32 sectors.
    """

    n_sec: int
    n_qo: float
    t_tr: float
    n_antennas: int | None = None

    def __post_init__(self):
        if self.n_sec < 1 or self.n_qo <= 0 or self.t_tr <= 0:
            raise ConfigError("sector count, quasi-omni count and training "
                              "length must be positive")
        if self.n_antennas is not None and self.n_antennas < 1:
            raise ConfigError("n_antennas must be positive")

    @classmethod
    def from_antennas(cls, n_antennas: int, t_tr: float) -> "OverheadModel":
        """One sector per antenna and the standard 32-sector quasi-omni split."""
        if n_antennas % 32:
            raise ConfigError("antenna count must give an integer quasi-omni "
                              "count (a multiple of 32)")
        return cls(n_antennas, n_antennas // 32, t_tr, n_antennas)


def ieee80211ad_overhead(model: OverheadModel) -> float:
    """Two-stage sweep cost: N_QO^2*32*T_tr + 2*(N_sec/N_QO)*T_tr symbols."""
    return (model.n_qo ** 2 * 32 + 2 * (model.n_sec / model.n_qo)) * model.t_tr


def ieee80211ad_overhead_antennas(n_antennas: int, t_tr: float) -> float:
    """Closed form (N_a^2/32 + 64)*T_tr; agrees with ieee80211ad_overhead
    on models built by OverheadModel.from_antennas."""
    if n_antennas < 1 or t_tr <= 0:
        raise ConfigError("n_antennas and t_tr must be positive")
    return (n_antennas ** 2 / 32 + 64) * t_tr


def overhead_reduction(method_overhead: float, baseline_overhead: float) -> float:
    """1 - method/baseline; negative when the method costs more (reported,
    not clamped, so regressions stay visible)."""
    if baseline_overhead <= 0:
        raise ConfigError("baseline overhead must be positive")
    return 1.0 - method_overhead / baseline_overhead


def quadratic_fit(x, y) -> tuple[float, float, float]:
    """Least-squares fit y = a*x^2 + b; returns (a, b, residual norm)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    design = np.column_stack([x ** 2, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = float(np.linalg.norm(design @ coef - y))
    return float(coef[0]), float(coef[1]), resid


# ---------------------------------------------------------------------------
# Experiment configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    """Seeded description of a beam-search Monte Carlo run."""

    channel: ChannelConfig = field(default_factory=ChannelConfig.default)
    methods: tuple[str, ...] = ("bpdn", "w-bpdn", "sw-bpdn")
    distances_m: tuple[float, ...] = (40.0,)
    n_measurements: int = 36
    coherence_symbols: float = 2048.0
    trials: int = 100
    master_seed: int = 0
    oversample: int = 1
    eta_mode: str = "actual"  # "actual" M or "exhaustive" N_TX*N_RX
    min_gain_fraction: float = 0.33
    n_prior_angles: int = 2
    spread_steps: float = 2.0
    sub6_snapshots: int = 100
    regularization_scale: float = 0.15
    tx_power_dbm: float = 37.0
    path_loss_exponent: float = 3.0
    noise_figure_db: float = 5.0

    def __post_init__(self):
        if self.coherence_symbols <= 0:
            raise ConfigError("coherence_symbols must be positive")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.n_measurements < 1:
            raise ConfigError("n_measurements must be >= 1")
        d = self.distances_m
        if not d or any(b <= a for a, b in zip(d, d[1:])):
            raise ConfigError("distances_m must be non-empty and increasing")
        bad = [m for m in self.methods if m not in VALID_METHODS]
        if bad:
            raise ConfigError(
                f"unknown methods {bad}; valid: {', '.join(VALID_METHODS)}")
        if self.eta_mode not in ("actual", "exhaustive"):
            raise ConfigError("eta_mode must be 'actual' or 'exhaustive'")
        if self.oversample < 1:
            raise ConfigError("oversample must be >= 1")
        if self.regularization_scale <= 0:
            raise ConfigError("regularization_scale must be positive")

    def budget(self, band: str) -> LinkBudget:
        setup = self.channel.mmwave if band == "mmwave" else self.channel.sub6
        return LinkBudget(
            setup.carrier_hz, setup.bandwidth_hz, self.tx_power_dbm,
            self.path_loss_exponent, 40.0, self.noise_figure_db,
        )

    def grids(self) -> tuple[AngleGrid, AngleGrid]:
        mm = self.channel.mmwave
        return (
            AngleGrid.uniform_sin(mm.tx.n_elements * self.oversample),
            AngleGrid.uniform_sin(mm.rx.n_elements * self.oversample),
        )


@dataclass(frozen=True)
class MetricRecord:
    """One trial of one method at one distance."""

    method: str
    distance_m: float
    n_measurements: int
    trial_seed: int
    transmit_index: int
    receive_index: int
    gain: float
    snr: float
    eta: float
    rate: float
    loss_db: float
    overhead_symbols: float

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError("eta must lie in [0, 1]")
        if self.rate < 0.0:
            raise ConfigError("effective rate must be nonnegative")


@dataclass(frozen=True)
class TrialCase:
    """Shared per-trial material: congruent channels and noise level."""

    sub6_paths: PathSet
    mmwave_paths: PathSet
    h_sub6: np.ndarray
    h_mmwave: np.ndarray
    noise_std: float
    seed: int


def steering_gain_matrix(
    h: np.ndarray,
    tx_geometry: ArrayGeometry,
    rx_geometry: ArrayGeometry,
    grids: tuple[AngleGrid, AngleGrid],
) -> np.ndarray:
    """|a_RX^H H a_TX|^2 over the grid pair, shape (G_RX, G_TX)."""
    a_tx = steering_matrix(tx_geometry, grids[0].angles)
    a_rx = steering_matrix(rx_geometry, grids[1].angles)
    return np.abs(a_rx.conj().T @ h @ a_tx) ** 2


def channel_ensemble(
    config: ExperimentConfig, distance_m: float, n_cases: int,
    distance_index: int = 0,
) -> list[TrialCase]:
    """Seeded congruent channel draws with the distance's noise level.

    The per-measurement noise standard deviation comes from the mmWave link
    SNR at the distance; the sub-6 matrix is a noisy observation at the
    sub-6 link SNR averaged over ``sub6_snapshots`` snapshots.
    """
    mm = config.channel.mmwave
    sub6 = config.channel.sub6
    snr_mm_db = link_snr_db(config.budget("mmwave").at_distance(distance_m))
    snr_s6_db = link_snr_db(config.budget("sub6").at_distance(distance_m))
    noise_std = 10.0 ** (-snr_mm_db / 20.0)
    cases = []
    for trial in range(n_cases):
        seed = derive_seed(config.master_seed, 3, distance_index, trial)
        paths6, paths_mm = generate_congruent_channels(
            config.channel, CongruencePolicy(), seed)
        h_mm = narrowband_matrix(paths_mm, mm.rx, mm.tx)
        h6 = narrowband_matrix(paths6, sub6.rx, sub6.tx)
        rng = derive_rng(config.master_seed, 4, distance_index, trial)
        h6_obs = observe_narrowband(h6, snr_s6_db, config.sub6_snapshots, rng)
        cases.append(TrialCase(paths6, paths_mm, h6_obs, h_mm, noise_std, seed))
    return cases


# ---------------------------------------------------------------------------
# Method runners
# ---------------------------------------------------------------------------

def _select_pair(
    method: str, case: TrialCase, m: int, config: ExperimentConfig,
    grids: tuple[AngleGrid, AngleGrid],
) -> tuple[int, int]:
    mm = config.channel.mmwave
    if method == "11ad":
        gains = steering_gain_matrix(case.h_mmwave, mm.tx, mm.rx, grids)
        ri, ti = np.unravel_index(int(np.argmax(gains)), gains.shape)
        return int(ti), int(ri)
    solver = SolverConfig(regularization_scale=config.regularization_scale)
    if method in ("bpdn", "w-bpdn"):
        if mm.tx != mm.rx:
            raise ConfigError("random probing expects matching arrays")
        dictionary = random_dictionary(mm.tx, m, seed=case.seed)
        problem = build_problem(
            case.h_mmwave, dictionary, mm.tx, mm.rx, grids,
            noise_std=case.noise_std, seed=derive_rng(case.seed, 101),
        )
        if method == "bpdn":
            result = bpdn(problem, solver)
            weights = None
        else:
            spectra = sub6_angle_spectra(
                case.h_sub6, config.channel.sub6.tx, config.channel.sub6.rx,
                grids)
            weights = oob_weights(spectra, grids, config.spread_steps)
            result = weighted_bpdn(problem, weights, solver)
        return select_beam_pair(result.coefficients, grids, weights)
    if method == "sw-bpdn":
        spectra = sub6_angle_spectra(
            case.h_sub6, config.channel.sub6.tx, config.channel.sub6.rx, grids)
        oob_tx = top_angles(spectra[0], grids[0], count=config.n_prior_angles)
        oob_rx = top_angles(spectra[1], grids[1], count=config.n_prior_angles)
        out = sw_bpdn_pipeline(
            case.h_mmwave, mm.tx, mm.rx, grids, oob_tx, oob_rx, m,
            default_min_gain(mm.tx, config.min_gain_fraction),
            config=solver, seed=case.seed, noise_std=case.noise_std,
            spectra=spectra, spread_steps=config.spread_steps,
        )
        return out.transmit_index, out.receive_index
    raise ConfigError(
        "fingerprint is position-indexed, not distance-swept; "
        "use fingerprint_experiment")


def _method_overhead(method: str, m: int, config: ExperimentConfig) -> float:
    """Training cost in symbols: one symbol per compressive measurement,
    the sweep formula for the 802.11ad baseline."""
    if method == "11ad":
        n_a = config.channel.mmwave.tx.n_elements
        return ieee80211ad_overhead_antennas(n_a, 1.0)
    return float(m)


def run_experiment(
    config: ExperimentConfig,
) -> tuple[list[MetricRecord], list[dict]]:
    """Monte Carlo sweep over (distance, method, trial).

    Channels, probe dictionaries and measurement noise are shared across
    methods within a trial, so method comparisons are paired. An error in a
    (method, distance) cell logs and skips that cell; the run continues.
    Returns the records plus summary rows (one dict per cell, keyed by
    SUMMARY_COLUMNS).
    """
    grids = config.grids()
    mm = config.channel.mmwave
    records: list[MetricRecord] = []
    for d_idx, dist in enumerate(config.distances_m):
        snr_lin = 10.0 ** (link_snr_db(
            config.budget("mmwave").at_distance(dist)) / 10.0)
        cases = channel_ensemble(config, dist, config.trials, d_idx)
        gain_maps = [
            steering_gain_matrix(c.h_mmwave, mm.tx, mm.rx, grids)
            for c in cases
        ]
        for m_idx, method in enumerate(config.methods):
            try:
                for trial, case in enumerate(cases):
                    ti, ri = _select_pair(method, case, config.n_measurements,
                                          config, grids)
                    gains = gain_maps[trial]
                    gain = float(gains[ri, ti])
                    overhead = _method_overhead(
                        method, config.n_measurements, config)
                    if method == "11ad":
                        training = overhead
                    elif config.eta_mode == "exhaustive":
                        training = mm.tx.n_elements * mm.rx.n_elements
                    else:
                        training = config.n_measurements
                    eta = max(0.0, 1.0 - training / config.coherence_symbols)
                    rate = effective_rate(gain, snr_lin, training,
                                          config.coherence_symbols)
                    records.append(MetricRecord(
                        method=method,
                        distance_m=dist,
                        n_measurements=config.n_measurements,
                        trial_seed=derive_seed(
                            config.master_seed, d_idx, m_idx, trial),
                        transmit_index=ti,
                        receive_index=ri,
                        gain=gain,
                        snr=snr_lin,
                        eta=eta,
                        rate=rate,
                        loss_db=loss_from_powers(gains, (ti, ri)),
                        overhead_symbols=overhead,
                    ))
            except Exception:
                log.warning("cell (%s, %g m) aborted", method, dist,
                            exc_info=True)
    return records, summarize(records, config)


def summarize(records: list[MetricRecord],
              config: ExperimentConfig) -> list[dict]:
    """Aggregate records into one row per (method, distance) cell.

    Rows are computed from records sorted by (method, distance, seed), so
    the output does not depend on execution order.
    """
    baseline = ieee80211ad_overhead_antennas(
        config.channel.mmwave.tx.n_elements, 1.0)
    cells: dict[tuple[str, float], list[MetricRecord]] = {}
    for rec in sorted(records,
                      key=lambda r: (r.method, r.distance_m, r.trial_seed)):
        cells.setdefault((rec.method, rec.distance_m), []).append(rec)
    rows = []
    for (method, dist), recs in sorted(cells.items()):
        rates = np.array([r.rate for r in recs])
        losses = np.array([r.loss_db for r in recs])
        overhead = recs[0].overhead_symbols
        rows.append({
            "method": method,
            "distance_m": dist,
            "M": recs[0].n_measurements,
            "trials": len(recs),
            "mean_rate": float(rates.mean()),
            "median_rate": float(np.median(rates)),
            "p05_rate": float(np.percentile(rates, 5)),
            "mean_loss_db": float(losses.mean()),
            "success_prob": float(np.mean(losses <= 3.0)),
            "overhead_symbols": overhead,
            "reduction": overhead_reduction(overhead, baseline),
        })
    return rows


def summary_csv(rows: list[dict]) -> str:
    """Fixed-schema CSV text for the summary rows."""
    lines = [",".join(SUMMARY_COLUMNS)]
    for row in rows:
        cells = []
        for col in SUMMARY_COLUMNS:
            v = row[col]
            cells.append(v if isinstance(v, str) else f"{v:.10g}")
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Measurement-count search
# ---------------------------------------------------------------------------

def measurements_to_target(
    method,
    ensemble: list[TrialCase],
    target: float,
    m_grid,
    config: ExperimentConfig,
) -> float:
    """Smallest measurement count reaching a mean alignment-quality target.

    Quality of a trial is the selected pair's gain divided by the
    exhaustive-best gain on that channel, in [0, 1]; the mean over the
    ensemble must reach ``target``. ``method`` is a method name or a
    callable (case, m) -> (tx index, rx index). Returns math.inf when no
    grid point reaches the target.
    """
    if not ensemble:
        raise ValueError("empty channel ensemble")
    m_grid = list(m_grid)
    if not m_grid or any(b <= a for a, b in zip(m_grid, m_grid[1:])):
        raise ConfigError("m_grid must be non-empty and increasing")
    grids = config.grids()
    mm = config.channel.mmwave
    gain_maps = [
        steering_gain_matrix(c.h_mmwave, mm.tx, mm.rx, grids)
        for c in ensemble
    ]
    best = [float(g.max()) for g in gain_maps]
    run = method if callable(method) else (
        lambda case, m: _select_pair(method, case, m, config, grids))
    for m in m_grid:
        quality = []
        for case, gains, top in zip(ensemble, gain_maps, best):
            ti, ri = run(case, m)
            quality.append(float(gains[ri, ti]) / top if top > 0 else 0.0)
        if float(np.mean(quality)) >= target:
            return float(m)
    return math.inf


# ---------------------------------------------------------------------------
# Fingerprint overhead sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FingerprintSweepRow:
    """One array size of the fingerprint-vs-802.11ad comparison."""

    side: int
    n_antennas: int
    overhead_symbols: float
    baseline_symbols: float
    ratio: float
    n_pairs: int
    success_prob: float
    unreachable: bool


def fingerprint_sweep(
    sides=(8, 16, 24, 32),
    sigma_p: float = 0.5,
    symbols_per_beam: int = 10,
    trials: int = 1000,
    scene_seed: int = 7,
    eval_seed: int = 9,
    snapshots: int = 20,
    top_k: int = 128,
    snr_db: float = -16.88,
    target_prob: float = 0.99,
    scene: SceneModel | None = None,
    db_cache: dict[int, FingerprintDatabase] | None = None,
) -> list[FingerprintSweepRow]:
    """Fingerprint training overhead against the 802.11ad sweep budget.

    One shared scene (``SceneModel.default(scene_seed)`` unless an explicit
    ``scene`` is given); per side s, square s-by-s arrays at both ends, so
    the per-device antenna count entering the 802.11ad formula is s^2. Both
    schemes spend ``symbols_per_beam`` symbols per trained sector/pair.

    ``db_cache`` maps side -> prebuilt database; compatible entries are
    reused, and every database used ends up in the cache.
    """
    if scene is None:
        scene = SceneModel.default(scene_seed)
    rows = []
    for side in sides:
        geom = ArrayGeometry.upa(side, side)
        db = None if db_cache is None else db_cache.get(side)
        if db is not None and not (db.scene == scene
                                   and db.snapshots == snapshots
                                   and db.top_k == top_k
                                   and db.info.get("tx") == geom
                                   and db.info.get("rx") == geom):
            db = None
        if db is None:
            db = build_fingerprint_db(scene, geom, geom,
                                      snapshots=snapshots, top_k=top_k)
        if db_cache is not None:
            db_cache[side] = db
        rep = fingerprint_overhead(
            db, scene, sigma_p, symbols_per_beam=symbols_per_beam,
            target_prob=target_prob, trials=trials, snr_db=snr_db,
            seed=eval_seed,
        )
        n_a = side * side
        baseline = ieee80211ad_overhead_antennas(n_a, float(symbols_per_beam))
        rows.append(FingerprintSweepRow(
            side=side,
            n_antennas=n_a,
            overhead_symbols=float(rep.overhead_symbols),
            baseline_symbols=baseline,
            ratio=rep.overhead_symbols / baseline,
            n_pairs=rep.n_pairs,
            success_prob=rep.success_prob,
            unreachable=rep.unreachable,
        ))
    return rows


def fingerprint_sweep_csv(rows: list[FingerprintSweepRow]) -> str:
    cols = ("side", "n_antennas", "overhead_symbols", "baseline_symbols",
            "ratio", "n_pairs", "success_prob", "unreachable")
    lines = [",".join(cols)]
    for row in rows:
        lines.append(",".join(
            f"{getattr(row, c):.10g}" if isinstance(getattr(row, c), float)
            else str(getattr(row, c)) for c in cols))
    return "\n".join(lines) + "\n"
