"""Compressive beam search by (weighted) basis pursuit denoising.

The narrowband mmWave channel is expressed on a beamspace angle grid; each
training beam pair contributes one observation y_m = w_m^H H f_m + noise and
one Kronecker-structured sensing row. The beam pair is read off the support
of the sparse solution. Weights derived from a sub-6 GHz angle spectrum
penalize grid directions the out-of-band information deems empty, and the
structured pipeline additionally shapes the training beams toward those
directions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import ArrayGeometry, steering_matrix
from .codebooks import AngleGrid, TrainingDictionary, structured_random_dictionary
from .util import ConfigError, derive_rng


@dataclass(frozen=True)
class BeamSearchProblem:
    """Sensing model for one compressive beam-search instance.

    sensing : (M, G_TX * G_RX) complex matrix; row m is the response of
        training pair m on the angle grids, flattened transmit-major.
    observations : (M,) complex vector, one entry per training pair.
    noise_std : linear standard deviation of the complex observation noise.
    grids : (transmit AngleGrid, receive AngleGrid).
    """

    sensing: np.ndarray
    observations: np.ndarray
    noise_std: float
    grids: tuple[AngleGrid, AngleGrid]

    def __post_init__(self):
        a = np.asarray(self.sensing, dtype=complex)
        y = np.asarray(self.observations, dtype=complex).ravel()
        if a.ndim != 2 or a.shape[0] < 1:
            raise ConfigError("sensing matrix must be 2-D with M >= 1")
        if y.size != a.shape[0]:
            raise ConfigError("observation length does not match sensing rows")
        gt, gr = self.grids
        if a.shape[1] != gt.size * gr.size:
            raise ConfigError("sensing columns do not match grid sizes")
        if not np.isfinite(a).all() or not np.isfinite(y).all():
            raise ConfigError("non-finite entries in problem data")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be nonnegative")
        object.__setattr__(self, "sensing", a)
        object.__setattr__(self, "observations", y)

    @property
    def n_measurements(self) -> int:
        return self.sensing.shape[0]

    @property
    def n_coefficients(self) -> int:
        return self.sensing.shape[1]


@dataclass(frozen=True)
class WeightVector:
    """Per-coefficient penalty weights, strictly positive and finite."""

    values: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size < 1:
            raise ConfigError("empty weight vector")
        if not np.isfinite(v).all() or (v <= 0).any():
            raise ConfigError("weights must be finite and positive")
        object.__setattr__(self, "values", v)

    @classmethod
    def uniform(cls, n: int) -> "WeightVector":
        return cls(np.ones(n))


@dataclass(frozen=True)
class SolverConfig:
    """Proximal-gradient solver settings.

    regularization None means "pick automatically": 2 * noise_std *
    sqrt(2 * log G) scaled by the largest sensing-column norm, times
    ``regularization_scale`` (which an explicit regularization ignores).
    """

    regularization: float | None = None
    regularization_scale: float = 1.0
    max_iterations: int = 500
    tolerance: float = 1e-8

    def __post_init__(self):
        if self.regularization is not None and self.regularization < 0:
            raise ConfigError("regularization must be nonnegative")
        if self.regularization_scale <= 0:
            raise ConfigError("regularization_scale must be positive")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if self.tolerance <= 0:
            raise ConfigError("tolerance must be positive")


@dataclass(frozen=True)
class SolveResult:
    """Solver output: final iterate plus the recorded objective path."""

    coefficients: np.ndarray
    objectives: np.ndarray
    iterations: int
    converged: bool


# ---------------------------------------------------------------------------
# Problem construction
# ---------------------------------------------------------------------------

def build_problem(
    h: np.ndarray,
    dictionary: TrainingDictionary,
    tx_geometry: ArrayGeometry,
    rx_geometry: ArrayGeometry,
    grids: tuple[AngleGrid, AngleGrid],
    noise_std: float = 0.0,
    seed=0,
) -> BeamSearchProblem:
    """Form observations and the Kronecker sensing matrix for a channel.

    Observation m is w_m^H H f_m plus circular complex noise of standard
    deviation ``noise_std``; sensing row m is the outer product of the
    transmit-grid response of f_m and the conjugated receive-grid response
    of w_m, flattened transmit-major. On-grid channels then satisfy
    y = sensing @ beamspace coefficients exactly (up to the noise).
    """
    h = np.asarray(h, dtype=complex)
    if h.shape != (rx_geometry.n_elements, tx_geometry.n_elements):
        raise ConfigError("channel matrix does not match array sizes")
    f = dictionary.transmit_matrix()
    w = dictionary.receive_matrix()
    if f.shape[0] != tx_geometry.n_elements or w.shape[0] != rx_geometry.n_elements:
        raise ConfigError("dictionary beams do not match array sizes")
    tx_grid, rx_grid = grids
    a_tx = steering_matrix(tx_geometry, tx_grid.angles)
    a_rx = steering_matrix(rx_geometry, rx_grid.angles)

    pairs = list(dictionary.pairs())
    m_count = len(pairs)
    v = np.empty((m_count, tx_grid.size), dtype=complex)
    u = np.empty((m_count, rx_grid.size), dtype=complex)
    y = np.empty(m_count, dtype=complex)
    vt_all = a_tx.conj().T @ f
    ur_all = a_rx.conj().T @ w
    hf = h @ f
    for m, (ti, ri) in enumerate(pairs):
        v[m] = vt_all[:, ti]
        u[m] = ur_all[:, ri]
        y[m] = w[:, ri].conj() @ hf[:, ti]
    sensing = (v[:, :, None] * u.conj()[:, None, :]).reshape(m_count, -1)

    if noise_std > 0:
        rng = seed if isinstance(seed, np.random.Generator) else derive_rng(seed)
        y = y + noise_std * (
            rng.standard_normal(m_count) + 1j * rng.standard_normal(m_count)
        ) / np.sqrt(2.0)
    return BeamSearchProblem(sensing, y, noise_std, (tx_grid, rx_grid))


# ---------------------------------------------------------------------------
# Solvers
# ---------------------------------------------------------------------------

def default_regularization(problem: BeamSearchProblem) -> float:
    """Universal-threshold heuristic scaled by the worst column norm."""
    g = problem.n_coefficients
    col = float(np.sqrt((np.abs(problem.sensing) ** 2).sum(axis=0)).max())
    return 2.0 * problem.noise_std * np.sqrt(2.0 * np.log(g)) * col


def bpdn(problem: BeamSearchProblem, config: SolverConfig | None = None) -> SolveResult:
    """Minimize 0.5*||y - Ax||^2 + lambda*||x||_1.

    Equivalent to weighted_bpdn with unit weights; see there for the
    algorithm and guarantees.
    """
    weights = WeightVector.uniform(problem.n_coefficients)
    return weighted_bpdn(problem, weights, config)


def weighted_bpdn(
    problem: BeamSearchProblem,
    weights: WeightVector,
    config: SolverConfig | None = None,
) -> SolveResult:
    """Minimize 0.5*||y - Ax||^2 + lambda * sum_i w_i |x_i|.

    Monotone accelerated proximal gradient with backtracking: the momentum
    candidate is kept only when it improves the objective, so the recorded
    objective path never increases. Stops once the relative objective
    decrease stays below the tolerance for five consecutive iterations, or
    at the iteration cap (then ``converged`` is False).
    """
    config = config or SolverConfig()
    a = problem.sensing
    y = problem.observations
    w = weights.values
    if w.size != problem.n_coefficients:
        raise ConfigError("weight length does not match coefficient count")
    lam = config.regularization
    if lam is None:
        lam = config.regularization_scale * default_regularization(problem)
    thresholds = lam * w

    if np.linalg.norm(y) == 0.0:
        x = np.zeros(problem.n_coefficients, dtype=complex)
        return SolveResult(x, np.zeros(1), 0, True)

    def f_val(x):
        r = a @ x - y
        return 0.5 * float(np.real(r.conj() @ r))

    def penalty(x):
        return float(thresholds @ np.abs(x))

    def prox(v, step):
        mag = np.abs(v)
        scale = np.maximum(0.0, 1.0 - step * thresholds / np.maximum(mag, 1e-300))
        return v * scale

    n = problem.n_coefficients
    x_prev = np.zeros(n, dtype=complex)
    z = x_prev.copy()
    obj_prev = f_val(x_prev) + penalty(x_prev)
    objectives = [obj_prev]
    # crude curvature estimate to seed backtracking
    lip = max(float((np.abs(a) ** 2).sum()), 1e-12)
    t_prev = 1.0
    stall = 0
    converged = False
    iterations = 0

    for k in range(config.max_iterations):
        iterations = k + 1
        grad = a.conj().T @ (a @ z - y)
        f_z = f_val(z)
        while True:
            u = prox(z - grad / lip, 1.0 / lip)
            du = u - z
            quad = f_z + float(np.real(grad.conj() @ du)) + 0.5 * lip * float(
                np.real(du.conj() @ du)
            )
            if f_val(u) <= quad + 1e-12 * max(1.0, abs(quad)):
                break
            lip *= 2.0
            if lip > 1e18:
                break
        obj_u = f_val(u) + penalty(u)
        if obj_u <= obj_prev:
            x_new, obj_new = u, obj_u
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_prev * t_prev))
            z = x_new + (t_prev / t_new) * (u - x_new) + (
                (t_prev - 1.0) / t_new
            ) * (x_new - x_prev)
        else:
            # candidate got worse: keep the iterate and restart the momentum
            x_new, obj_new = x_prev, obj_prev
            t_new = 1.0
            z = x_prev.copy()
        x_prev, t_prev = x_new, t_new
        objectives.append(obj_new)
        rel = (obj_prev - obj_new) / max(1.0, obj_prev)
        stall = stall + 1 if rel < config.tolerance else 0
        obj_prev = obj_new
        if stall >= 5:
            converged = True
            break

    objectives = np.asarray(objectives)
    if (np.diff(objectives) > 0).any():
        raise RuntimeError("objective increased; monotone step is broken")
    return SolveResult(x_prev, objectives, iterations, converged)


# ---------------------------------------------------------------------------
# Weights from out-of-band information
# ---------------------------------------------------------------------------

def oob_weights(
    spectra: tuple[np.ndarray, np.ndarray],
    grids: tuple[AngleGrid, AngleGrid],
    spread_steps: float = 2.0,
    floor: float = 0.1,
) -> WeightVector:
    """Penalty weights from sub-6 GHz transmit/receive angle spectra.

    Each unit-sum spectrum is smoothed with a truncated Gaussian kernel of
    standard deviation ``spread_steps`` grid steps (0 disables smoothing) to
    absorb angle mismatch between the bands. The joint score of grid pair
    (i, j) is the product of smoothed spectra; its weight is
    1 / (floor + score / max score), flattened transmit-major. All-zero
    spectra yield uniform unit weights with the degenerate flag set.
    """
    if spread_steps < 0:
        raise ConfigError("spread_steps must be nonnegative")
    if floor <= 0:
        raise ConfigError("floor must be positive")
    tx_grid, rx_grid = grids
    s_tx = _checked_spectrum(spectra[0], tx_grid.size)
    s_rx = _checked_spectrum(spectra[1], rx_grid.size)
    if s_tx is None or s_rx is None:
        return WeightVector(np.ones(tx_grid.size * rx_grid.size), degenerate=True)
    score = np.outer(_smooth(s_tx, spread_steps), _smooth(s_rx, spread_steps))
    top = score.max()
    if top <= 0.0:
        return WeightVector(np.ones(score.size), degenerate=True)
    return WeightVector((1.0 / (floor + score / top)).ravel())


def _checked_spectrum(s, expected: int) -> np.ndarray | None:
    s = np.asarray(s, dtype=float).ravel()
    if s.size != expected:
        raise ConfigError("spectrum length does not match grid size")
    if (s < 0).any() or not np.isfinite(s).all():
        raise ConfigError("spectrum must be nonnegative and finite")
    total = s.sum()
    if total <= 1e-300:
        return None
    if abs(total - 1.0) > 1e-6:
        raise ConfigError("spectrum must be normalized to unit sum")
    return s


def _smooth(s: np.ndarray, spread_steps: float) -> np.ndarray:
    if spread_steps == 0.0:
        return s
    half = int(np.ceil(4.0 * spread_steps))
    offsets = np.arange(-half, half + 1)
    kernel = np.exp(-0.5 * (offsets / spread_steps) ** 2)
    kernel /= kernel.sum()
    # center slice of the full convolution; np.convolve "same" misbehaves
    # when the kernel is longer than the spectrum
    return np.convolve(s, kernel, mode="full")[half:half + s.size]


def sub6_angle_spectra(
    h6: np.ndarray,
    tx_geometry: ArrayGeometry,
    rx_geometry: ArrayGeometry,
    grids: tuple[AngleGrid, AngleGrid],
) -> tuple[np.ndarray, np.ndarray]:
    """Beamspace periodograms of a (noisy) sub-6 channel on the target grids.

    Transmit spectrum: energy of H a_TX(angle) per transmit-grid angle;
    receive spectrum: energy of a_RX(angle)^H H per receive-grid angle. Both
    are returned normalized to unit sum (zeros stay zeros for a zero
    channel). The small sub-6 arrays make these deliberately coarse.
    """
    h6 = np.asarray(h6, dtype=complex)
    if h6.shape != (rx_geometry.n_elements, tx_geometry.n_elements):
        raise ConfigError("sub-6 channel does not match array sizes")
    tx_grid, rx_grid = grids
    a_tx = steering_matrix(tx_geometry, tx_grid.angles)
    a_rx = steering_matrix(rx_geometry, rx_grid.angles)
    s_tx = (np.abs(h6 @ a_tx) ** 2).sum(axis=0)
    s_rx = (np.abs(a_rx.conj().T @ h6) ** 2).sum(axis=1)
    return _unit_sum(s_tx), _unit_sum(s_rx)


def _unit_sum(s: np.ndarray) -> np.ndarray:
    total = s.sum()
    return s / total if total > 0 else s


def top_angles(spectrum: np.ndarray, grid: AngleGrid, count: int = 2,
               min_separation: int = 2) -> np.ndarray:
    """Angles of the strongest spectrum entries, greedily de-duplicated.

    Picks up to ``count`` grid angles in decreasing spectrum order while
    skipping candidates within ``min_separation`` grid steps of an already
    chosen one.
    """
    s = np.asarray(spectrum, dtype=float).ravel()
    if s.size != grid.size:
        raise ConfigError("spectrum length does not match grid size")
    if count < 1:
        raise ConfigError("count must be >= 1")
    order = np.argsort(s)[::-1]
    chosen: list[int] = []
    for idx in order:
        if len(chosen) >= count:
            break
        if all(abs(idx - c) >= min_separation for c in chosen):
            chosen.append(int(idx))
    return grid.angles[np.sort(chosen)]


# ---------------------------------------------------------------------------
# Selection and the structured pipeline
# ---------------------------------------------------------------------------

def select_beam_pair(
    coefficients: np.ndarray,
    grids: tuple[AngleGrid, AngleGrid],
    weights: WeightVector | None = None,
) -> tuple[int, int]:
    """Grid indices (transmit, receive) of the strongest coefficient.

    Ties resolve to the lowest flat index (transmit-major layout), so the
    selection is deterministic and invariant to positive scaling. When the
    solution is identically zero (everything fell below the solver's
    threshold) and penalty ``weights`` are given, the most-favored atom
    (smallest weight) is returned instead: with no usable measurements the
    prior is all that is left.
    """
    x = np.asarray(coefficients).ravel()
    tx_grid, rx_grid = grids
    if x.size != tx_grid.size * rx_grid.size:
        raise ConfigError("coefficient length does not match grid sizes")
    mag = np.abs(x)
    if weights is not None and not mag.any():
        if weights.values.size != x.size:
            raise ConfigError("weight length does not match coefficient count")
        flat = int(np.argmin(weights.values))
    else:
        flat = int(np.argmax(mag))
    return flat // rx_grid.size, flat % rx_grid.size


@dataclass(frozen=True)
class PipelineResult:
    """Structured weighted recovery output."""

    solve: SolveResult
    transmit_index: int
    receive_index: int
    dictionary: TrainingDictionary
    weights: WeightVector


def sw_bpdn_pipeline(
    h: np.ndarray,
    tx_geometry: ArrayGeometry,
    rx_geometry: ArrayGeometry,
    grids: tuple[AngleGrid, AngleGrid],
    oob_angles_tx,
    oob_angles_rx,
    n_measurements: int,
    min_gain: float,
    config: SolverConfig | None = None,
    seed: int = 0,
    noise_std: float = 0.0,
    spectra: tuple[np.ndarray, np.ndarray] | None = None,
    weights: WeightVector | None = None,
    spread_steps: float = 2.0,
) -> PipelineResult:
    """Structured weighted recovery: shaped dictionary + weighted solve.

    Builds a structured random dictionary keeping gain ``min_gain`` toward
    the out-of-band angles (per side), forms the compressive problem with
    observation noise from a stream derived from ``seed`` (the dictionary
    itself consumes ``seed`` directly), and runs weighted_bpdn. Weights come
    from, in order of precedence: ``weights``, ``spectra`` via oob_weights,
    or synthetic one-hot spectra placed at the grid points nearest each
    out-of-band angle.
    """
    tx_grid, rx_grid = grids
    same_setup = tx_geometry == rx_geometry and np.array_equal(
        np.atleast_1d(oob_angles_tx), np.atleast_1d(oob_angles_rx)
    )
    if same_setup:
        dictionary = structured_random_dictionary(
            tx_geometry, n_measurements, oob_angles_tx, min_gain, seed=seed
        )
    else:
        tx_part = structured_random_dictionary(
            tx_geometry, n_measurements, oob_angles_tx, min_gain,
            seed=seed, shape_rx=False,
        )
        rx_part = structured_random_dictionary(
            rx_geometry, n_measurements, oob_angles_rx, min_gain,
            seed=seed, shape_tx=False,
        )
        dictionary = TrainingDictionary(
            tx_part.transmit, rx_part.receive, pairing="zipped",
            info=tx_part.info,
        )
    problem = build_problem(
        h, dictionary, tx_geometry, rx_geometry, grids,
        noise_std=noise_std, seed=derive_rng(seed, 101),
    )
    if weights is None:
        if spectra is None:
            spectra = (
                _one_hot_spectrum(oob_angles_tx, tx_grid),
                _one_hot_spectrum(oob_angles_rx, rx_grid),
            )
        weights = oob_weights(spectra, grids, spread_steps=spread_steps)
    result = weighted_bpdn(problem, weights, config)
    ti, ri = select_beam_pair(result.coefficients, grids, weights)
    return PipelineResult(result, ti, ri, dictionary, weights)


def _one_hot_spectrum(angles, grid: AngleGrid) -> np.ndarray:
    s = np.zeros(grid.size)
    for a in np.atleast_1d(np.asarray(angles, dtype=float)):
        idx = int(np.argmin(np.abs(grid.sin_values - np.sin(a))))
        s[idx] += 1.0
    return s / s.sum()
