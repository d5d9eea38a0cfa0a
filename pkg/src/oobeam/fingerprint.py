"""Position-aided beam pointing and inverse multipath fingerprinting.

A transmitter serves a rectangular service region (a road segment) gridded
into square location bins. A synthetic urban scene - line reflectors placed
beside the region plus Bernoulli blockage of the line of sight - generates a
location-dependent multipath channel by mirror-image geometry. From it we
derive:

- pointing: the geometric bearing toward a (noisy) position estimate, and
  the array beamwidth that best trades gain against pointing error;
- fingerprinting: a database mapping each bin to its strongest beam pairs,
  queried in reverse to produce a short training list for beam alignment,
  with the training overhead measured in symbols.

Per-antenna SNR is fixed across the region (the channel gains carry no
distance attenuation); measurement of a candidate pair accumulates a
configurable number of symbols coherently.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import ArrayGeometry, PathSet, SPEED_OF_LIGHT, steering_vector
from .codebooks import AngleGrid, TrainingDictionary, steering_codebook
from .util import ConfigError, derive_rng, wilson_interval


@dataclass(frozen=True)
class PositionEstimate:
    """Planar position estimate (meters) with isotropic error std sigma."""

    x: float
    y: float
    sigma: float = 0.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ConfigError("sigma must be nonnegative")

    def perturbed(self, rng: np.random.Generator) -> "PositionEstimate":
        """Draw a noisy copy: each coordinate gets N(0, sigma^2) error."""
        return PositionEstimate(
            self.x + self.sigma * rng.standard_normal(),
            self.y + self.sigma * rng.standard_normal(),
            self.sigma,
        )


@dataclass(frozen=True)
class Wall:
    """Infinite reflector line holding one coordinate constant."""

    axis: str  # "x" or "y": which coordinate equals offset
    offset: float

    def __post_init__(self):
        if self.axis not in ("x", "y"):
            raise ConfigError("wall axis must be 'x' or 'y'")

    def mirror(self, x: float, y: float) -> tuple[float, float]:
        if self.axis == "y":
            return x, 2.0 * self.offset - y
        return 2.0 * self.offset - x, y


@dataclass(frozen=True)
class SceneModel:
    """Seeded synthetic propagation scene over a binned rectangular region.

    The transmitter sits at ``tx_location`` (height ``tx_height``); receivers
    live inside ``bounds`` at ``rx_height``. Each wall contributes one
    first-order reflection by mirror geometry; the line of sight is blocked
    independently per realization with probability ``p_block`` and each
    reflection is present with probability ``p_reflect`` carrying an
    amplitude loss drawn uniformly from ``reflection_loss_db``.
    """

    tx_location: tuple[float, float] = (0.0, 0.0)
    tx_height: float = 5.0
    rx_height: float = 1.5
    bounds: tuple[float, float, float, float] = (10.0, 40.0, -3.0, 3.0)
    bin_size: float = 1.0
    walls: tuple[Wall, ...] = ()
    p_block: float = 0.1
    p_reflect: float = 0.85
    reflection_loss_db: tuple[float, float] = (5.0, 15.0)
    seed: int = 0

    def __post_init__(self):
        x_min, x_max, y_min, y_max = self.bounds
        if x_min >= x_max or y_min >= y_max:
            raise ConfigError("empty scene bounds")
        if self.bin_size <= 0:
            raise ConfigError("bin_size must be positive")
        for span in (x_max - x_min, y_max - y_min):
            ratio = span / self.bin_size
            if abs(ratio - round(ratio)) > 1e-9:
                raise ConfigError("bins must tile the region exactly")
        if not 0.0 <= self.p_block <= 1.0 or not 0.0 <= self.p_reflect <= 1.0:
            raise ConfigError("probabilities must be in [0, 1]")
        lo, hi = self.reflection_loss_db
        if lo < 0 or hi < lo:
            raise ConfigError("invalid reflection loss range")

    @classmethod
    def default(cls, seed: int = 0) -> "SceneModel":
        """Road scene with three seeded side walls (building faces)."""
        rng = derive_rng(seed, 0)
        bounds = (20.0, 50.0, -3.0, 3.0)
        walls = (
            Wall("y", bounds[3] + rng.uniform(1.0, 4.0)),
            Wall("y", bounds[2] - rng.uniform(1.0, 4.0)),
            Wall("y", bounds[3] + rng.uniform(5.0, 9.0)),
        )
        return cls(bounds=bounds, walls=walls, seed=seed)

    @property
    def n_bins_x(self) -> int:
        return round((self.bounds[1] - self.bounds[0]) / self.bin_size)

    @property
    def n_bins_y(self) -> int:
        return round((self.bounds[3] - self.bounds[2]) / self.bin_size)

    @property
    def n_bins(self) -> int:
        return self.n_bins_x * self.n_bins_y

    def bin_index(self, x: float, y: float) -> int:
        """Bin containing (x, y); exact boundaries go to the lower bin."""
        ix = self._axis_index(x, self.bounds[0], self.bounds[1], self.n_bins_x)
        iy = self._axis_index(y, self.bounds[2], self.bounds[3], self.n_bins_y)
        return ix * self.n_bins_y + iy

    def _axis_index(self, v: float, lo: float, hi: float, n: int) -> int:
        if not lo <= v <= hi:
            raise ValueError(f"position {v} outside scene bounds [{lo}, {hi}]")
        u = (v - lo) / self.bin_size
        i = int(math.floor(u))
        if i >= 1 and u == i:
            i -= 1
        return min(i, n - 1)

    def bin_center(self, bin_id: int) -> tuple[float, float]:
        ix, iy = divmod(bin_id, self.n_bins_y)
        return (
            self.bounds[0] + (ix + 0.5) * self.bin_size,
            self.bounds[2] + (iy + 0.5) * self.bin_size,
        )

    def clamp(self, x: float, y: float) -> tuple[float, float]:
        """Project a position onto the scene bounds."""
        return (
            min(max(x, self.bounds[0]), self.bounds[1]),
            min(max(y, self.bounds[2]), self.bounds[3]),
        )


# ---------------------------------------------------------------------------
# Geometry and channel synthesis
# ---------------------------------------------------------------------------

def pointing_direction(
    tx_location: tuple[float, float], estimate: PositionEstimate
) -> tuple[float, float]:
    """LOS departure and arrival azimuths implied by a position estimate.

    The transmit array's boresight is the +x axis; the receive array faces
    it (boresights anti-parallel), under which convention the arrival
    azimuth equals the departure azimuth.
    """
    dx = estimate.x - tx_location[0]
    dy = estimate.y - tx_location[1]
    if dx == 0.0 and dy == 0.0:
        raise ValueError("estimate coincides with the transmitter")
    bearing = math.atan2(dy, dx)
    return bearing, bearing


def _direction_angles(dx: float, dy: float, dz: float) -> tuple[float, float]:
    """(azimuth, elevation) of a direction vector in a +x boresight frame."""
    az = math.atan2(dy, dx)
    el = math.atan2(dz, math.hypot(dx, dy))
    return az, el


def scene_paths(
    scene: SceneModel,
    position: tuple[float, float],
    tx_geometry: ArrayGeometry,
    rx_geometry: ArrayGeometry,
    rng: np.random.Generator,
) -> PathSet | None:
    """Multipath realization at a receiver position, or None if fully blocked.

    The LOS path has unit amplitude; each wall reflection is attenuated by
    its drawn loss. Gains are scaled by sqrt(N_TX * N_RX) so the per-antenna
    channel power is about one for an unblocked LOS. Angles are (azimuth,
    elevation) pairs for planar arrays, azimuths for linear ones.
    """
    tx3 = (scene.tx_location[0], scene.tx_location[1], scene.tx_height)
    rx3 = (position[0], position[1], scene.rx_height)
    amps: list[float] = []
    deps: list[tuple[float, float]] = []
    arrs: list[tuple[float, float]] = []
    lengths: list[float] = []

    # draw order fixed: LOS block, then per-wall presence and loss
    los_present = rng.random() >= scene.p_block
    if los_present:
        amps.append(1.0)
        d = np.subtract(rx3, tx3)
        deps.append(_direction_angles(d[0], d[1], d[2]))
        a = -d
        arrs.append(_direction_angles(-a[0], -a[1], a[2]))
        lengths.append(float(np.linalg.norm(d)))
    for wall in scene.walls:
        present = rng.random() < scene.p_reflect
        loss_db = rng.uniform(*scene.reflection_loss_db)
        if not present:
            continue
        mx, my = wall.mirror(rx3[0], rx3[1])
        d = np.subtract((mx, my, rx3[2]), tx3)
        dep = _direction_angles(d[0], d[1], d[2])
        tmx, tmy = wall.mirror(tx3[0], tx3[1])
        a = np.subtract((tmx, tmy, tx3[2]), rx3)
        arr = _direction_angles(-a[0], -a[1], a[2])
        if abs(dep[0]) >= np.pi / 2 or abs(arr[0]) >= np.pi / 2:
            continue  # reflection behind an array: not illuminated
        amps.append(10.0 ** (-loss_db / 20.0))
        deps.append(dep)
        arrs.append(arr)
        lengths.append(float(np.linalg.norm(d)))

    if not amps:
        return None
    scale = np.sqrt(tx_geometry.n_elements * rx_geometry.n_elements)
    phases = np.exp(2j * np.pi * rng.random(len(amps)))
    gains = scale * np.asarray(amps) * phases
    aod = _as_geometry_angles(deps, tx_geometry)
    aoa = _as_geometry_angles(arrs, rx_geometry)
    delays = np.asarray(lengths) / SPEED_OF_LIGHT
    return PathSet("mmwave", gains, aod, aoa, delays)


def _as_geometry_angles(pairs, geometry: ArrayGeometry) -> np.ndarray:
    if geometry.kind == "planar":
        return np.asarray(pairs, dtype=float)
    return np.asarray([p[0] for p in pairs], dtype=float)


def pair_power_matrix(
    paths: PathSet | None,
    tx_codebook: TrainingDictionary,
    rx_codebook: TrainingDictionary,
    tx_geometry: ArrayGeometry,
    rx_geometry: ArrayGeometry,
) -> np.ndarray:
    """Noiseless |w^H H f|^2 for every (rx beam, tx beam) pair.

    Uses the path factorization of H, never forming the channel matrix:
    shape (n_rx_beams, n_tx_beams).
    """
    f = tx_codebook.transmit_matrix()
    w = rx_codebook.receive_matrix()
    if paths is None:
        return np.zeros((w.shape[1], f.shape[1]))
    b = np.zeros((w.shape[1], f.shape[1]), dtype=complex)
    for p in range(paths.n_paths):
        a_rx = steering_vector(rx_geometry, _angle_of(paths.aoa, p))
        a_tx = steering_vector(tx_geometry, _angle_of(paths.aod, p))
        b += paths.gains[p] * np.outer(w.conj().T @ a_rx, a_tx.conj() @ f)
    return np.abs(b) ** 2


def _angle_of(angles: np.ndarray, idx: int):
    return tuple(angles[idx]) if angles.ndim == 2 else float(angles[idx])


def dft_codebook(geometry: ArrayGeometry) -> TrainingDictionary:
    """Critically sampled steering codebook (one beam per array dimension)."""
    if geometry.kind == "linear":
        return steering_codebook(geometry, AngleGrid.uniform_sin(geometry.counts[0]))
    return steering_codebook(
        geometry,
        (AngleGrid.uniform_sin(geometry.counts[0]),
         AngleGrid.uniform_sin(geometry.counts[1])),
    )


# ---------------------------------------------------------------------------
# Beamwidth selection
# ---------------------------------------------------------------------------

def beamwidth_family(geometry: ArrayGeometry) -> list[int]:
    """Active-element counts of the nested sub-array family, narrow first.

    Powers of two from the full aperture down to a single element; the index
    into this list is the "width index" (larger index = wider beam). The
    single-element member is the isotropic gain floor: every multi-element
    sub-array has pattern nulls, so without it the widest-beam limit of
    select_beamwidth would be a coin flip between near-tied candidates.
    """
    if geometry.kind != "linear":
        raise ConfigError("beamwidth family defined for linear arrays")
    n = geometry.counts[0]
    if n < 4 or n & (n - 1):
        raise ConfigError("need a power-of-two aperture of at least 4")
    sizes = []
    k = n
    while k >= 1:
        sizes.append(k)
        k //= 2
    return sizes


def select_beamwidth(
    geometry: ArrayGeometry,
    sigma_p: float,
    distance_m: float,
    trials: int = 500,
    seed: int = 0,
) -> int:
    """Width index maximizing mean gain under position-induced pointing error.

    Each trial perturbs the true receiver position (broadside at the given
    distance) by N(0, sigma_p^2) per coordinate, points a beam of every
    candidate width at the implied bearing and scores its gain toward the
    true bearing. Common random numbers across widths and, for sweeps over
    sigma_p, across calls with the same seed. Ties pick the wider beam.
    """
    if sigma_p < 0 or distance_m <= 0:
        raise ConfigError("sigma_p must be >= 0 and distance_m > 0")
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    sizes = beamwidth_family(geometry)
    n = geometry.counts[0]
    rng = derive_rng(seed)
    eps = rng.standard_normal((trials, 2))
    bearings = np.arctan2(sigma_p * eps[:, 1], distance_m + sigma_p * eps[:, 0])
    bearings = np.clip(bearings, -np.pi / 2, np.pi / 2)
    sin_b = np.sin(bearings)
    means = np.empty(len(sizes))
    for i, n_eff in enumerate(sizes):
        # inner product of the pointed sub-beam with the true-bearing (0)
        # full-array steering vector, via the geometric phase sum
        idx = np.arange(n_eff)
        phase = np.exp(-2j * np.pi * geometry.spacing * np.outer(sin_b, idx))
        inner = phase.sum(axis=1) / np.sqrt(n_eff * n)
        means[i] = float(np.mean(np.abs(inner) ** 2)) * n
    best = means.max()
    # widest among the (exactly) best-scoring widths
    return int(np.max(np.flatnonzero(means == best)))


# ---------------------------------------------------------------------------
# Fingerprint database
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FingerprintDatabase:
    """Per-bin beam-pair rankings by mean received power (descending).

    rankings[bin_id] is a list of (tx_beam, rx_beam, mean_power, count)
    tuples; every scene bin has an entry. ``top_k`` bounds the stored and
    therefore trainable ranking depth. The database keeps the scene it was
    built on, so position lookups need no extra context.
    """

    scene: SceneModel
    rankings: dict[int, list[tuple[int, int, float, int]]]
    n_tx_beams: int
    n_rx_beams: int
    snapshots: int
    top_k: int
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if set(self.rankings) != set(range(self.scene.n_bins)):
            raise ConfigError("rankings must cover every scene bin")
        for bin_id, entries in self.rankings.items():
            powers = [e[2] for e in entries]
            if any(p < 0 for p in powers):
                raise ConfigError(f"negative mean power in bin {bin_id}")
            if any(powers[i] < powers[i + 1] for i in range(len(powers) - 1)):
                raise ConfigError(f"ranking of bin {bin_id} not sorted")

    @property
    def n_bins(self) -> int:
        return len(self.rankings)


def build_fingerprint_db(
    scene: SceneModel,
    tx_geometry: ArrayGeometry,
    rx_geometry: ArrayGeometry,
    tx_codebook: TrainingDictionary | None = None,
    rx_codebook: TrainingDictionary | None = None,
    snapshots: int = 20,
    top_k: int = 128,
) -> FingerprintDatabase:
    """Rank beam pairs per location bin by mean noiseless received power.

    For every bin, ``snapshots`` channel realizations are drawn at seeded
    positions inside the bin and the power of every (TX, RX) beam pair from
    the codebooks (critically sampled steering codebooks by default) is
    averaged. Deterministic given (scene.seed, snapshots); bins are seeded
    independently, so a parallel build would give the same result.
    """
    if snapshots < 1:
        raise ConfigError("snapshots must be >= 1")
    if top_k < 1:
        raise ConfigError("top_k must be >= 1")
    tx_cb = tx_codebook if tx_codebook is not None else dft_codebook(tx_geometry)
    rx_cb = rx_codebook if rx_codebook is not None else dft_codebook(rx_geometry)
    n_tx = len(tx_cb.transmit)
    n_rx = len(rx_cb.receive)
    rankings: dict[int, list[tuple[int, int, float, int]]] = {}
    for bin_id in range(scene.n_bins):
        cx, cy = scene.bin_center(bin_id)
        half = scene.bin_size / 2.0
        mean_power = np.zeros((n_rx, n_tx))
        for snap in range(snapshots):
            rng = derive_rng(scene.seed, 1, bin_id, snap)
            pos = (cx + rng.uniform(-half, half), cy + rng.uniform(-half, half))
            paths = scene_paths(scene, pos, tx_geometry, rx_geometry, rng)
            mean_power += pair_power_matrix(paths, tx_cb, rx_cb,
                                            tx_geometry, rx_geometry)
        mean_power /= snapshots
        flat = np.argsort(mean_power, axis=None)[::-1][:top_k]
        rankings[bin_id] = [
            (int(f % n_tx), int(f // n_tx), float(mean_power.flat[f]), snapshots)
            for f in flat
        ]
    return FingerprintDatabase(
        scene, rankings, n_tx, n_rx, snapshots, top_k,
        info={"tx": tx_geometry, "rx": rx_geometry,
              "tx_codebook": tx_cb, "rx_codebook": rx_cb},
    )


def rank_beam_pairs(
    db: FingerprintDatabase, estimate: PositionEstimate
) -> list[tuple[int, int, float, int]]:
    """Stored ranking of the bin containing the position estimate.

    Raises ValueError for positions outside the scene bounds; exact bin
    boundaries resolve to the lower-index bin.
    """
    return db.rankings[db.scene.bin_index(estimate.x, estimate.y)]


# ---------------------------------------------------------------------------
# Power loss and training overhead
# ---------------------------------------------------------------------------

def power_loss_db(
    selected: tuple[int, int],
    channel: np.ndarray,
    tx_codebook: TrainingDictionary,
    rx_codebook: TrainingDictionary,
) -> float:
    """Loss of a selected (tx, rx) beam pair versus the exhaustive best.

    10*log10(best power / selected power) over the full codebook scan of
    |w^H H f|^2. Zero selected power with a nonzero best returns +inf; an
    all-zero channel returns 0 (no pair can do better than any other).
    """
    f = tx_codebook.transmit_matrix()
    w = rx_codebook.receive_matrix()
    powers = np.abs(w.conj().T @ np.asarray(channel, dtype=complex) @ f) ** 2
    return loss_from_powers(powers, selected)


def loss_from_powers(powers: np.ndarray, selected: tuple[int, int]) -> float:
    """power_loss_db on a precomputed (rx, tx) pair-power matrix."""
    ti, ri = selected
    p_sel = float(powers[ri, ti])
    p_best = float(powers.max())
    if p_best <= 0.0:
        return 0.0
    if p_sel <= 0.0:
        return float("inf")
    return 10.0 * math.log10(p_best / p_sel)


@dataclass(frozen=True)
class OverheadReport:
    """Result of the training-overhead search."""

    n_pairs: int
    overhead_symbols: int
    success_prob: float
    wilson_low: float
    wilson_high: float
    unreachable: bool
    success_curve: np.ndarray  # success probability per candidate count 1..K


def fingerprint_overhead(
    db: FingerprintDatabase,
    scene: SceneModel,
    sigma_p: float,
    symbols_per_beam: int = 10,
    target_prob: float = 0.99,
    max_loss_db: float = 3.0,
    trials: int = 1000,
    snr_db: float = -16.88,
    seed: int = 1,
) -> OverheadReport:
    """Smallest trained-pair count meeting the power-loss success target.

    Each trial draws a true position uniformly in the region, a channel
    realization there, and a position estimate with error std ``sigma_p``
    (clamped into bounds); the estimate's bin supplies the candidate
    ranking. Candidate measurements are |w^H H f + noise|^2 with noise at
    the per-antenna SNR reduced by coherent accumulation over
    ``symbols_per_beam`` symbols; training the top-N candidates selects the
    measured-best among them. Success means loss <= max_loss_db versus the
    exhaustive full-codebook best.

    Common random numbers: one noise draw per trial is shared by all
    candidates (and hence by all candidate counts N), so the measured
    ordering of contending pairs matches their true ordering and the
    success estimate is monotone non-decreasing in N.

    If even the full stored ranking misses the target, the report carries
    the unreachable flag and the full-codebook overhead.
    """
    if trials < 1000:
        raise ConfigError("need at least 1000 evaluation trials")
    if not 0.0 <= target_prob <= 1.0:
        raise ConfigError("target_prob must be in [0, 1]")
    if symbols_per_beam < 1 or max_loss_db < 0:
        raise ConfigError("invalid training parameters")
    if scene != db.scene:
        raise ConfigError("database was built on a different scene")
    tx_geometry = db.info["tx"]
    rx_geometry = db.info["rx"]
    tx_cb = db.info["tx_codebook"]
    rx_cb = db.info["rx_codebook"]
    k_max = max(len(v) for v in db.rankings.values())
    noise_var = 10.0 ** (-snr_db / 10.0) / symbols_per_beam

    success = np.zeros(k_max, dtype=int)
    for trial in range(trials):
        rng = derive_rng(seed, trial)
        x = rng.uniform(scene.bounds[0], scene.bounds[1])
        y = rng.uniform(scene.bounds[2], scene.bounds[3])
        paths = scene_paths(scene, (x, y), tx_geometry, rx_geometry, rng)
        powers = pair_power_matrix(paths, tx_cb, rx_cb, tx_geometry, rx_geometry)
        est = PositionEstimate(x, y, sigma_p).perturbed(rng)
        ex, ey = scene.clamp(est.x, est.y)
        candidates = db.rankings[scene.bin_index(ex, ey)]
        k = len(candidates)
        clean = np.array([powers[ri, ti] for ti, ri, _, _ in candidates])
        noise = np.sqrt(noise_var / 2.0) * complex(
            rng.standard_normal(), rng.standard_normal()
        )
        measured = np.abs(np.sqrt(clean) + noise) ** 2
        # prefix argmax (first-index ties, like np.argmax): the chosen
        # candidate changes only at strict improvements, so losses are
        # needed only for the few distinct choices
        running = np.maximum.accumulate(measured)
        prev = np.concatenate(([-np.inf], running[:-1]))
        chosen = np.where(measured > prev, np.arange(k), -1)
        chosen = np.maximum.accumulate(chosen)
        loss_of = {
            int(c): loss_from_powers(
                powers, (candidates[int(c)][0], candidates[int(c)][1]))
            for c in np.unique(chosen)
        }
        ok = np.array([loss_of[int(c)] for c in chosen]) <= max_loss_db
        if k < k_max:
            ok = np.concatenate([ok, np.repeat(ok[-1], k_max - k)])
        success += ok.astype(int)

    curve = success / trials
    meets = np.flatnonzero(curve >= target_prob)
    if meets.size:
        n_pairs = int(meets[0]) + 1
        unreachable = False
    else:
        n_pairs = db.n_tx_beams * db.n_rx_beams
        unreachable = True
    idx = min(n_pairs, k_max) - 1
    hits = int(round(curve[idx] * trials))
    lo, hi = wilson_interval(hits, trials)
    return OverheadReport(
        n_pairs=n_pairs,
        overhead_symbols=n_pairs * symbols_per_beam,
        success_prob=float(curve[idx]),
        wilson_low=lo,
        wilson_high=hi,
        unreachable=unreachable,
        success_curve=curve,
    )
