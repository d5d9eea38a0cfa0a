"""Spatially congruent sub-6 GHz / mmWave channel generation.

Implements the geometric channel machinery shared by every other module:
antenna array descriptions and steering vectors, congruent two-band path
generation, the 63-tap wideband mmWave channel with its 256-subcarrier
frequency response, and the link budget (path loss, SNR).

Conventions
-----------
- Angles are in radians; azimuth (and elevation for planar arrays) live in
  [-pi/2, pi/2].
- A steering vector entry n has phase +2*pi*spacing*n*sin(angle) and modulus
  1/sqrt(N), so every steering vector is unit norm.
- The sub-6 GHz channel is narrowband (a single matrix); the mmWave channel
  is a tapped delay line with a raised-cosine combined pulse (roll-off 1).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .util import ConfigError, derive_rng

SPEED_OF_LIGHT = 299792458.0


# ---------------------------------------------------------------------------
# Array geometry and steering vectors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform antenna array, linear ("linear") or planar ("planar").

    Parameters
    ----------
    kind : str
        "linear" for a ULA, "planar" for a UPA.
    counts : tuple of int
        Elements per axis: (N,) for a ULA, (N_h, N_v) for a UPA.
    spacing : float
        Element spacing in carrier wavelengths (default half wavelength).
    """

    kind: str
    counts: tuple[int, ...]
    spacing: float = 0.5

    def __post_init__(self):
        if self.kind not in ("linear", "planar"):
            raise ConfigError(f"unknown array kind {self.kind!r}")
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "counts", counts)
        expected = 1 if self.kind == "linear" else 2
        if len(counts) != expected:
            raise ConfigError(
                f"{self.kind} array needs {expected} axis count(s), got {counts}"
            )
        if any(c < 1 for c in counts):
            raise ConfigError("element counts must be positive")
        if not self.spacing > 0:
            raise ConfigError("element spacing must be positive")

    @property
    def n_elements(self) -> int:
        n = 1
        for c in self.counts:
            n *= c
        return n

    @classmethod
    def ula(cls, n: int, spacing: float = 0.5) -> "ArrayGeometry":
        return cls("linear", (n,), spacing)

    @classmethod
    def upa(cls, n_h: int, n_v: int | None = None, spacing: float = 0.5) -> "ArrayGeometry":
        return cls("planar", (n_h, n_h if n_v is None else n_v), spacing)


def _ula_response(n: int, spacing: float, spatial_freq) -> np.ndarray:
    """Phase ramp exp(j*2*pi*spacing*n*f) / sqrt(n) for f = sin(angle)."""
    f = np.asarray(spatial_freq, dtype=float)
    phases = 2.0 * np.pi * spacing * np.outer(np.arange(n), f)
    return np.exp(1j * phases) / np.sqrt(n)


def steering_vector(geometry: ArrayGeometry, angle) -> np.ndarray:
    """Array response to a plane wave from the given direction.

    Parameters
    ----------
    geometry : ArrayGeometry
    angle : float or (float, float)
        Azimuth in radians for a linear array; (azimuth, elevation) for a
        planar array. Both components must lie in [-pi/2, pi/2].

    Returns
    -------
    np.ndarray
        Unit-norm complex vector of length ``geometry.n_elements``. For a
        planar array the response is the Kronecker product of the horizontal
        response at sin(az)*cos(el) and the vertical response at sin(el).
    """
    if geometry.kind == "linear":
        az = float(np.atleast_1d(angle)[0]) if np.ndim(angle) else float(angle)
        _check_angle(az)
        return _ula_response(geometry.counts[0], geometry.spacing, np.sin(az))[:, 0]
    az, el = (float(a) for a in angle)
    _check_angle(az)
    _check_angle(el)
    n_h, n_v = geometry.counts
    a_h = _ula_response(n_h, geometry.spacing, np.sin(az) * np.cos(el))[:, 0]
    a_v = _ula_response(n_v, geometry.spacing, np.sin(el))[:, 0]
    return np.kron(a_h, a_v)


def steering_matrix(geometry: ArrayGeometry, angles) -> np.ndarray:
    """Stack steering vectors column-wise: shape (N, len(angles)).

    ``angles`` is a 1-D array of azimuths for linear arrays, or an (G, 2)
    array of (azimuth, elevation) rows for planar arrays.
    """
    if geometry.kind == "linear":
        a = np.asarray(angles, dtype=float).ravel()
        if a.size and (a.min() < -np.pi / 2 - 1e-12 or a.max() > np.pi / 2 + 1e-12):
            raise ValueError("azimuth outside [-pi/2, pi/2]")
        return _ula_response(geometry.counts[0], geometry.spacing, np.sin(a))
    a = np.asarray(angles, dtype=float).reshape(-1, 2)
    cols = [steering_vector(geometry, (az, el)) for az, el in a]
    return np.stack(cols, axis=1)


def _check_angle(x: float):
    if not (-np.pi / 2 - 1e-12 <= x <= np.pi / 2 + 1e-12):
        raise ValueError(f"angle {x} outside [-pi/2, pi/2]")


# ---------------------------------------------------------------------------
# Paths and congruence
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PathSet:
    """Geometric propagation paths for one band.

    gains are linear complex amplitudes; aod/aoa are radians (scalars per
    path for linear arrays, (az, el) pairs for planar); delays are seconds.
    """

    band: str
    gains: np.ndarray
    aod: np.ndarray
    aoa: np.ndarray
    delays: np.ndarray

    def __post_init__(self):
        gains = np.atleast_1d(np.asarray(self.gains, dtype=complex))
        aod = np.asarray(self.aod, dtype=float)
        aoa = np.asarray(self.aoa, dtype=float)
        delays = np.atleast_1d(np.asarray(self.delays, dtype=float))
        for name, arr in (("aod", aod), ("aoa", aoa)):
            if arr.shape[0] != gains.shape[0]:
                raise ConfigError(f"{name} length does not match gains")
            if arr.size and (np.abs(arr) > np.pi / 2 + 1e-12).any():
                raise ConfigError(f"{name} angles outside [-pi/2, pi/2]")
        if delays.shape[0] != gains.shape[0]:
            raise ConfigError("delays length does not match gains")
        if gains.shape[0] < 1:
            raise ConfigError("a PathSet needs at least one path")
        if (delays < 0).any():
            raise ConfigError("delays must be nonnegative")
        if self.band not in ("sub6", "mmwave"):
            raise ConfigError(f"unknown band {self.band!r}")
        object.__setattr__(self, "gains", gains)
        object.__setattr__(self, "aod", aod)
        object.__setattr__(self, "aoa", aoa)
        object.__setattr__(self, "delays", delays)

    @property
    def n_paths(self) -> int:
        return self.gains.shape[0]

    def check_delay_span(self, sample_period: float, n_taps: int, guard: int = 15):
        """Delays must leave room for the pulse tail inside the tap window."""
        limit = (n_taps - guard) * sample_period
        if (self.delays >= limit + 1e-15).any():
            raise ConfigError(
                f"path delay exceeds {n_taps - guard} sample periods; "
                "pulse tail would be truncated"
            )


@dataclass(frozen=True)
class CongruencePolicy:
    """How strongly mmWave paths mirror the sub-6 GHz angular structure.

    share_probability : chance a sub-6 path has a congruent mmWave twin.
    perturbation_std  : std (radians) of the angular offset applied to the
                        twin's departure and arrival angles.
    n_extra           : mmWave-only paths with independent angles.
    """

    share_probability: float = 1.0
    perturbation_std: float = 0.0
    n_extra: int = 1

    def __post_init__(self):
        if not 0.0 <= self.share_probability <= 1.0:
            raise ConfigError("share_probability must be in [0, 1]")
        if self.perturbation_std < 0:
            raise ConfigError("perturbation_std must be nonnegative")
        if self.n_extra < 0:
            raise ConfigError("n_extra must be nonnegative")


@dataclass(frozen=True)
class BandSetup:
    """Carrier, bandwidth and the two array geometries of one band."""

    carrier_hz: float
    bandwidth_hz: float
    tx: ArrayGeometry
    rx: ArrayGeometry

    def __post_init__(self):
        if self.carrier_hz <= 0 or self.bandwidth_hz <= 0:
            raise ConfigError("carrier and bandwidth must be positive")

    @property
    def sample_period(self) -> float:
        return 1.0 / self.bandwidth_hz


@dataclass(frozen=True)
class ChannelConfig:
    """Two-band setup plus path statistics for congruent generation."""

    sub6: BandSetup
    mmwave: BandSetup
    n_sub6_paths: int = 3
    angle_range: float = np.deg2rad(60.0)
    n_taps: int = 63
    n_subcarriers: int = 256
    cyclic_prefix: int = 64
    max_delay_taps: int = 48
    delay_guard_taps: int = 15
    path_decay: float = 0.15

    def __post_init__(self):
        if self.n_sub6_paths < 1:
            raise ConfigError("need at least one sub-6 path")
        if not 0 < self.angle_range <= np.pi / 2:
            raise ConfigError("angle_range must be in (0, pi/2]")
        if not 0 < self.path_decay <= 1:
            raise ConfigError("path_decay must be in (0, 1]")
        if self.max_delay_taps > self.n_taps - self.delay_guard_taps:
            raise ConfigError("max_delay_taps leaves no room for the pulse tail")

    @classmethod
    def default(cls, n_sub6: int = 4, n_mm: int = 32) -> "ChannelConfig":
        """Reference setup: 3.5 GHz / 1 MHz 4-element ULAs aiding a
        28 GHz / 320 MHz link with half-wavelength ULAs on both ends."""
        return cls(
            sub6=BandSetup(3.5e9, 1e6, ArrayGeometry.ula(n_sub6), ArrayGeometry.ula(n_sub6)),
            mmwave=BandSetup(28e9, 320e6, ArrayGeometry.ula(n_mm), ArrayGeometry.ula(n_mm)),
        )


def generate_congruent_channels(
    config: ChannelConfig, policy: CongruencePolicy, seed: int
) -> tuple[PathSet, PathSet]:
    """Draw a sub-6 GHz PathSet and a spatially congruent mmWave PathSet.

    Each sub-6 path spawns, with probability ``policy.share_probability``, a
    mmWave path whose departure and arrival angles equal the sub-6 ones plus
    independent Gaussian perturbations; otherwise the mmWave path gets fresh
    independent angles. ``policy.n_extra`` additional mmWave-only paths are
    always independent. Gains are complex Gaussian with average per-path
    power decaying geometrically (``config.path_decay``) in path order,
    scaled per band so the expected total channel energy is N_TX * N_RX.
    Congruent mmWave paths keep their sub-6 path index, so the power
    ordering is shared across bands and the extra mmWave-only paths land in
    the weakest slots; the sub-6 band is narrowband so its delays are zero.

    Deterministic given (config, policy, seed).
    """
    rng = derive_rng(seed)
    r = config.angle_range

    n6 = config.n_sub6_paths
    aod6 = rng.uniform(-r, r, size=n6)
    aoa6 = rng.uniform(-r, r, size=n6)
    gains6 = _normalized_gains(rng, n6, config.sub6, config.path_decay)
    sub6 = PathSet("sub6", gains6, aod6, aoa6, np.zeros(n6))

    shared = rng.random(n6) < policy.share_probability
    aod_mm = np.where(
        shared,
        np.clip(aod6 + policy.perturbation_std * rng.standard_normal(n6), -np.pi / 2, np.pi / 2),
        rng.uniform(-r, r, size=n6),
    )
    aoa_mm = np.where(
        shared,
        np.clip(aoa6 + policy.perturbation_std * rng.standard_normal(n6), -np.pi / 2, np.pi / 2),
        rng.uniform(-r, r, size=n6),
    )
    if policy.n_extra:
        aod_mm = np.concatenate([aod_mm, rng.uniform(-r, r, size=policy.n_extra)])
        aoa_mm = np.concatenate([aoa_mm, rng.uniform(-r, r, size=policy.n_extra)])
    n_mm = n6 + policy.n_extra
    gains_mm = _normalized_gains(rng, n_mm, config.mmwave, config.path_decay)
    delays = rng.uniform(0.0, config.max_delay_taps * config.mmwave.sample_period, size=n_mm)
    mmwave = PathSet("mmwave", gains_mm, aod_mm, aoa_mm, delays)
    mmwave.check_delay_span(config.mmwave.sample_period, config.n_taps, config.delay_guard_taps)
    return sub6, mmwave


def _normalized_gains(
    rng: np.random.Generator, n_paths: int, band: BandSetup, decay: float = 1.0
) -> np.ndarray:
    # E[sum |g|^2] = N_TX * N_RX; small-scale fading is complex Gaussian.
    # Average per-path power falls geometrically in path order (decay=1 is
    # flat), so earlier paths dominate on average.
    profile = decay ** np.arange(n_paths)
    profile *= band.tx.n_elements * band.rx.n_elements / profile.sum()
    return np.sqrt(profile / 2.0) * (
        rng.standard_normal(n_paths) + 1j * rng.standard_normal(n_paths)
    )


# ---------------------------------------------------------------------------
# Pulse shaping and the wideband channel
# ---------------------------------------------------------------------------

def raised_cosine(t, symbol_period: float, rolloff: float = 1.0):
    """Raised-cosine pulse (combined shaping + matched filter), unit peak.

    rc(t) = sinc(t/T) * cos(pi*b*t/T) / (1 - (2*b*t/T)^2), with the removable
    singularity at |t| = T/(2*b) evaluated analytically.
    """
    if symbol_period <= 0:
        raise ValueError("symbol_period must be positive")
    if rolloff < 0 or rolloff > 1:
        raise ValueError("rolloff must be in [0, 1]")
    x = np.asarray(t, dtype=float) / symbol_period
    if rolloff == 0.0:
        out = np.sinc(x)
    else:
        denom = 1.0 - (2.0 * rolloff * x) ** 2
        singular = np.isclose(denom, 0.0, atol=1e-9)
        safe = np.where(singular, 1.0, denom)
        out = np.sinc(x) * np.cos(np.pi * rolloff * x) / safe
        # limit value at t = +-T/(2b): (pi/4) * sinc(1/(2b))
        out = np.where(singular, (np.pi / 4.0) * np.sinc(1.0 / (2.0 * rolloff)), out)
    return out if np.ndim(t) else float(out)


@dataclass(frozen=True)
class WidebandChannel:
    """Tapped delay-line mmWave channel and its per-subcarrier response.

    taps: (n_taps, N_RX, N_TX) complex; subcarriers: (n_subcarriers, N_RX,
    N_TX) complex, the DFT of the zero-padded tap sequence along axis 0.
    """

    taps: np.ndarray
    subcarriers: np.ndarray
    sample_period: float

    @classmethod
    def from_taps(cls, taps: np.ndarray, sample_period: float, n_subcarriers: int = 256
                  ) -> "WidebandChannel":
        taps = np.asarray(taps, dtype=complex)
        if taps.ndim != 3:
            raise ConfigError("taps must have shape (n_taps, N_RX, N_TX)")
        if taps.shape[0] > n_subcarriers:
            raise ConfigError("more taps than subcarriers")
        return cls(taps, taps_to_subcarriers(taps, n_subcarriers), sample_period)

    @property
    def n_taps(self) -> int:
        return self.taps.shape[0]

    @property
    def n_subcarriers(self) -> int:
        return self.subcarriers.shape[0]


def paths_to_taps(
    paths: PathSet,
    rx_geometry: ArrayGeometry,
    tx_geometry: ArrayGeometry,
    sample_period: float,
    n_taps: int = 63,
    rolloff: float = 1.0,
) -> np.ndarray:
    """Sample the pulse-shaped geometric channel onto ``n_taps`` taps.

    Tap d accumulates gain * rc(d*T_s - delay) * a_RX(aoa) a_TX(aod)^H over
    all paths.
    """
    paths.check_delay_span(sample_period, n_taps)
    n_rx = rx_geometry.n_elements
    n_tx = tx_geometry.n_elements
    taps = np.zeros((n_taps, n_rx, n_tx), dtype=complex)
    grid = np.arange(n_taps) * sample_period
    for p in range(paths.n_paths):
        pulse = raised_cosine(grid - paths.delays[p], sample_period, rolloff)
        a_rx = steering_vector(rx_geometry, _path_angle(paths.aoa, p))
        a_tx = steering_vector(tx_geometry, _path_angle(paths.aod, p))
        outer = np.outer(a_rx, a_tx.conj())
        taps += paths.gains[p] * pulse[:, None, None] * outer[None, :, :]
    return taps


def _path_angle(angles: np.ndarray, idx: int):
    return tuple(angles[idx]) if angles.ndim == 2 else float(angles[idx])


def taps_to_subcarriers(taps: np.ndarray, n_subcarriers: int = 256) -> np.ndarray:
    """Per-subcarrier channel matrices: length-K DFT of the zero-padded taps."""
    taps = np.asarray(taps, dtype=complex)
    return np.fft.fft(taps, n=n_subcarriers, axis=0)


def narrowband_matrix(
    paths: PathSet, rx_geometry: ArrayGeometry, tx_geometry: ArrayGeometry
) -> np.ndarray:
    """Single-matrix channel: sum of gain * a_RX a_TX^H over paths."""
    n_rx = rx_geometry.n_elements
    n_tx = tx_geometry.n_elements
    h = np.zeros((n_rx, n_tx), dtype=complex)
    for p in range(paths.n_paths):
        a_rx = steering_vector(rx_geometry, _path_angle(paths.aoa, p))
        a_tx = steering_vector(tx_geometry, _path_angle(paths.aod, p))
        h += paths.gains[p] * np.outer(a_rx, a_tx.conj())
    return h


def observe_narrowband(
    h: np.ndarray, snr_db: float, n_snapshots: int, rng: np.random.Generator
) -> np.ndarray:
    """Noisy observation of a narrowband channel matrix.

    Entrywise additive complex Gaussian noise at the given per-entry SNR,
    variance reduced by coherent averaging over ``n_snapshots``.
    """
    if n_snapshots < 1:
        raise ConfigError("n_snapshots must be at least 1")
    sigma2 = 10.0 ** (-snr_db / 10.0) / n_snapshots
    noise = np.sqrt(sigma2 / 2.0) * (
        rng.standard_normal(h.shape) + 1j * rng.standard_normal(h.shape)
    )
    return h + noise


# ---------------------------------------------------------------------------
# Link budget
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinkBudget:
    """Inputs for the distance-dependent SNR of one band."""

    carrier_hz: float
    bandwidth_hz: float
    tx_power_dbm: float = 37.0
    path_loss_exponent: float = 3.0
    distance_m: float = 40.0
    noise_figure_db: float = 5.0
    reference_distance_m: float = 1.0

    def __post_init__(self):
        for name in ("carrier_hz", "bandwidth_hz", "distance_m", "reference_distance_m"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.path_loss_exponent <= 0:
            raise ConfigError("path_loss_exponent must be positive")

    def at_distance(self, distance_m: float) -> "LinkBudget":
        return LinkBudget(
            self.carrier_hz, self.bandwidth_hz, self.tx_power_dbm,
            self.path_loss_exponent, distance_m, self.noise_figure_db,
            self.reference_distance_m,
        )


def path_loss_db(budget: LinkBudget) -> float:
    """Close-in path loss: free-space at the reference distance, then the
    configured exponent beyond it."""
    if budget.distance_m < budget.reference_distance_m:
        raise ValueError("distance below the reference distance")
    wavelength = SPEED_OF_LIGHT / budget.carrier_hz
    fs_ref = 20.0 * np.log10(4.0 * np.pi * budget.reference_distance_m / wavelength)
    return float(
        fs_ref
        + 10.0 * budget.path_loss_exponent
        * np.log10(budget.distance_m / budget.reference_distance_m)
    )


def link_snr_db(budget: LinkBudget) -> float:
    """Pre-beamforming per-antenna SNR: TX power minus path loss minus the
    thermal noise floor (-174 dBm/Hz + 10 log10 BW + noise figure)."""
    noise_dbm = -174.0 + 10.0 * np.log10(budget.bandwidth_hz) + budget.noise_figure_db
    return float(budget.tx_power_dbm - path_loss_db(budget) - noise_dbm)
