"""Beam codebooks and training dictionaries.

Three beam families are produced here: plain steering codebooks (the
exhaustive-search baseline), phase-quantized random dictionaries used for
compressive beam search, and structured random dictionaries whose beams are
additionally forced to keep a minimum gain toward a set of externally
suggested angles.

Gains follow the convention of beam_gain: |b^H a(theta)|^2 * N, so a matched
unquantized beam scores exactly N (the array's peak gain) and thresholds are
naturally expressed as fractions of N.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import ArrayGeometry, _ula_response, steering_matrix, steering_vector
from .util import ConfigError, FeasibilityError, derive_rng


@dataclass(frozen=True)
class Beamformer:
    """Unit-norm analog beamforming vector.

    If ``quantized`` is set, every entry is (1/sqrt(N)) * exp(j*2*pi*q/2^bits)
    for an integer q, matching a phase-shifter implementation with ``bits``
    of resolution.
    """

    weights: np.ndarray
    quantized: bool = False
    bits: int | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=complex).ravel()
        if w.size < 1:
            raise ConfigError("empty beamformer")
        if abs(np.linalg.norm(w) - 1.0) > 1e-12:
            raise ConfigError("beamformer must be unit norm")
        if self.quantized:
            if not self.bits or self.bits < 1:
                raise ConfigError("quantized beam needs bits >= 1")
            levels = 2 ** self.bits
            q = np.angle(w) * levels / (2.0 * np.pi)
            if np.abs(q - np.round(q)).max() > 1e-9:
                raise ConfigError("quantized beam phases off the lattice")
            if np.abs(np.abs(w) - 1.0 / np.sqrt(w.size)).max() > 1e-12:
                raise ConfigError("quantized beam must have constant modulus")
        object.__setattr__(self, "weights", w)

    @property
    def n_elements(self) -> int:
        return self.weights.size


@dataclass(frozen=True)
class AngleGrid:
    """Strictly increasing angle grid, uniform in sin(angle) by default."""

    angles: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.angles, dtype=float).ravel()
        if a.size < 1:
            raise ConfigError("empty angle grid")
        if (np.diff(a) <= 0).any():
            raise ConfigError("grid angles must be strictly increasing")
        if np.abs(a).max() > np.pi / 2 + 1e-12:
            raise ConfigError("grid angles outside [-pi/2, pi/2]")
        object.__setattr__(self, "angles", a)

    @property
    def size(self) -> int:
        return self.angles.size

    @property
    def sin_values(self) -> np.ndarray:
        return np.sin(self.angles)

    @classmethod
    def uniform_sin(cls, n_points: int) -> "AngleGrid":
        """n_points angles with sin spanning [-1, 1) on a uniform lattice."""
        if n_points < 1:
            raise ConfigError("n_points must be positive")
        return cls(np.arcsin(-1.0 + 2.0 * np.arange(n_points) / n_points))

    @classmethod
    def for_array(cls, geometry: ArrayGeometry, oversample: int = 2) -> "AngleGrid":
        """Beamspace grid for a linear array: oversample * N points."""
        if geometry.kind != "linear":
            raise ConfigError("per-axis grids are built from linear geometries")
        if oversample < 1:
            raise ConfigError("oversample must be >= 1")
        return cls.uniform_sin(oversample * geometry.counts[0])


@dataclass(frozen=True)
class TrainingDictionary:
    """Transmit and receive beam lists plus the rule pairing them.

    "zipped" pairing uses (transmit[m], receive[m]) as measurement m and
    requires equal list lengths; "cartesian" enumerates every combination,
    transmit-major.
    """

    transmit: tuple[Beamformer, ...]
    receive: tuple[Beamformer, ...]
    pairing: str = "zipped"
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        tx = tuple(self.transmit)
        rx = tuple(self.receive)
        if len(tx) < 1 or len(rx) < 1:
            raise ConfigError("dictionary needs at least one beam per side")
        if self.pairing not in ("cartesian", "zipped"):
            raise ConfigError(f"unknown pairing rule {self.pairing!r}")
        if self.pairing == "zipped" and len(tx) != len(rx):
            raise ConfigError("zipped pairing needs equal-length beam lists")
        object.__setattr__(self, "transmit", tx)
        object.__setattr__(self, "receive", rx)

    @property
    def n_measurements(self) -> int:
        if self.pairing == "zipped":
            return len(self.transmit)
        return len(self.transmit) * len(self.receive)

    def transmit_matrix(self) -> np.ndarray:
        """Transmit beams stacked column-wise, shape (N_TX, M_TX)."""
        return np.stack([b.weights for b in self.transmit], axis=1)

    def receive_matrix(self) -> np.ndarray:
        """Receive beams stacked column-wise, shape (N_RX, M_RX)."""
        return np.stack([b.weights for b in self.receive], axis=1)

    def pairs(self):
        """Yield (tx_index, rx_index) measurement pairs in order."""
        if self.pairing == "zipped":
            for m in range(len(self.transmit)):
                yield m, m
        else:
            for t in range(len(self.transmit)):
                for r in range(len(self.receive)):
                    yield t, r


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

def steering_codebook(geometry: ArrayGeometry, grid) -> TrainingDictionary:
    """One quantization-free steering beam per grid angle, on both sides.

    ``grid`` is an AngleGrid for a linear array, or a pair of per-axis
    AngleGrids (horizontal, vertical) for a planar array; a single grid is
    reused on both axes. Planar beams enumerate the axis grids
    horizontal-major and are Kronecker products of per-axis responses.
    """
    if geometry.kind == "linear":
        if not isinstance(grid, AngleGrid):
            raise ConfigError("linear codebook needs a single AngleGrid")
        beams = tuple(
            Beamformer(steering_vector(geometry, a)) for a in grid.angles
        )
        info = {"angles": grid.angles.copy()}
    else:
        gh, gv = (grid, grid) if isinstance(grid, AngleGrid) else grid
        n_h, n_v = geometry.counts
        ah = _ula_response(n_h, geometry.spacing, gh.sin_values)
        av = _ula_response(n_v, geometry.spacing, gv.sin_values)
        beams = tuple(
            Beamformer(np.kron(ah[:, i], av[:, j]))
            for i in range(gh.size)
            for j in range(gv.size)
        )
        info = {"axis_angles": (gh.angles.copy(), gv.angles.copy())}
    return TrainingDictionary(beams, beams, pairing="cartesian", info=info)


def quantize_phases(beam: Beamformer, bits: int) -> Beamformer:
    """Snap each entry to the nearest point of the 2^bits phase lattice.

    The result has constant modulus 1/sqrt(N) (hence exactly unit norm) and
    carries the quantized flag. Already-quantized beams pass through
    unchanged.
    """
    if bits < 1:
        raise ConfigError("bits must be >= 1")
    levels = 2 ** bits
    q = np.mod(np.round(np.angle(beam.weights) * levels / (2.0 * np.pi)), levels)
    return _beam_from_lattice(q.astype(int), bits)


def _beam_from_lattice(q: np.ndarray, bits: int) -> Beamformer:
    n = q.size
    w = np.exp(2j * np.pi * q / (2 ** bits)) / np.sqrt(n)
    return Beamformer(w, quantized=True, bits=bits)


def _draw_lattice_beam(rng: np.random.Generator, n: int, bits: int) -> Beamformer:
    return _beam_from_lattice(rng.integers(0, 2 ** bits, size=n), bits)


def random_dictionary(
    geometry: ArrayGeometry, n_measurements: int, bits: int = 5, seed: int = 0
) -> TrainingDictionary:
    """Zipped dictionary of pseudo-random constant-modulus beams.

    Phases are drawn independently and uniformly from the 2^bits lattice;
    transmit beams are drawn first, then receive beams, so the output is
    fully determined by the seed.
    """
    if n_measurements < 1:
        raise ConfigError("n_measurements must be >= 1")
    rng = derive_rng(seed)
    n = geometry.n_elements
    tx = tuple(_draw_lattice_beam(rng, n, bits) for _ in range(n_measurements))
    rx = tuple(_draw_lattice_beam(rng, n, bits) for _ in range(n_measurements))
    return TrainingDictionary(tx, rx, pairing="zipped",
                              info={"bits": bits, "seed": seed})


def structured_random_dictionary(
    geometry: ArrayGeometry,
    n_measurements: int,
    oob_angles,
    min_gain: float,
    bits: int = 5,
    seed: int = 0,
    shape_tx: bool = True,
    shape_rx: bool = True,
    max_attempts: int = 1000,
) -> TrainingDictionary:
    """Random dictionary whose beams keep gain >= min_gain toward oob_angles.

    ``min_gain`` is a linear beam_gain threshold (matched beam scores N =
    number of elements). Each beam starts from a random lattice draw; if the
    threshold fails, the draw is mixed with its projection onto the span of
    the steering vectors of ``oob_angles`` with increasing weight, requantized
    and rechecked, falling back to a fresh draw when even full mixing fails.

    Raises FeasibilityError naming the worst-served angle when no beam is
    found within ``max_attempts`` draws. With min_gain = 0 the output equals
    random_dictionary(geometry, n_measurements, bits, seed) exactly.
    """
    angles = np.atleast_1d(np.asarray(oob_angles, dtype=float))
    if angles.size < 1:
        raise ConfigError("oob_angles must be nonempty")
    if min_gain < 0:
        raise ConfigError("min_gain must be nonnegative")
    if n_measurements < 1:
        raise ConfigError("n_measurements must be >= 1")
    rng = derive_rng(seed)
    n = geometry.n_elements
    steer = steering_matrix(geometry, angles)  # (N, K) unit columns
    # orthonormal basis of the span, for the projection repair step
    basis, _ = np.linalg.qr(steer)

    levels = 2 ** bits
    alphas = np.linspace(0.0, 1.0, 11)

    def shaped_beam() -> Beamformer:
        best_gain, best_angle = -1.0, angles[0]
        for _ in range(max_attempts):
            w0 = np.exp(2j * np.pi * rng.integers(0, levels, size=n) / levels)
            w0 /= np.sqrt(n)
            proj = basis @ (basis.conj().T @ w0)
            peak = np.argmax(np.abs(proj))
            if np.abs(proj[peak]) > 1e-12:
                proj = proj * np.exp(-1j * np.angle(proj[peak]))
            # evaluate the whole mixing ladder at once; quantization only
            # depends on entry phases, so normalization can be skipped
            mixes = np.outer(1.0 - alphas, w0) + np.outer(alphas, proj)
            live = np.abs(mixes).max(axis=1) >= 1e-12
            q = np.mod(np.round(np.angle(mixes) * levels / (2.0 * np.pi)),
                       levels).astype(int)
            wq = np.exp(2j * np.pi * q / levels) / np.sqrt(n)
            gains = np.abs(wq.conj() @ steer) ** 2 * n
            worst = gains.min(axis=1)
            ok = np.flatnonzero(live & (worst >= min_gain))
            if ok.size:
                return _beam_from_lattice(q[ok[0]], bits)
            if live.any():
                row = int(np.argmax(np.where(live, worst, -np.inf)))
                if worst[row] > best_gain:
                    best_gain = float(worst[row])
                    best_angle = angles[int(np.argmin(gains[row]))]
        raise FeasibilityError(
            f"no beam reached gain {min_gain:.4g} toward angle "
            f"{best_angle:.6f} rad after {max_attempts} attempts "
            f"(best {best_gain:.4g})"
        )

    def plain_beam() -> Beamformer:
        return _draw_lattice_beam(rng, n, bits)

    tx = tuple((shaped_beam if shape_tx else plain_beam)() for _ in range(n_measurements))
    rx = tuple((shaped_beam if shape_rx else plain_beam)() for _ in range(n_measurements))
    return TrainingDictionary(
        tx, rx, pairing="zipped",
        info={"bits": bits, "seed": seed, "min_gain": min_gain,
              "oob_angles": angles.copy()},
    )


def _gains_at(beam: Beamformer, steer: np.ndarray, n: int) -> np.ndarray:
    return np.abs(beam.weights.conj() @ steer) ** 2 * n


def quantize_dictionary(dictionary: TrainingDictionary, bits: int) -> TrainingDictionary:
    """Quantize every beam of a dictionary, keeping pairing and info."""
    return TrainingDictionary(
        tuple(quantize_phases(b, bits) for b in dictionary.transmit),
        tuple(quantize_phases(b, bits) for b in dictionary.receive),
        pairing=dictionary.pairing,
        info={**dictionary.info, "bits": bits},
    )


def beam_gain(beam: Beamformer, geometry: ArrayGeometry, angle) -> float:
    """Power gain of a beam toward a direction: |b^H a(angle)|^2 * N.

    Normalized so a matched unquantized steering beam scores N and an
    isotropic average over random beams scores about 1.
    """
    a = steering_vector(geometry, angle)
    return float(np.abs(beam.weights.conj() @ a) ** 2 * geometry.n_elements)


def default_min_gain(geometry: ArrayGeometry, fraction: float = 0.33) -> float:
    """Default structured-dictionary threshold: a fraction of the peak gain N."""
    if not 0.0 <= fraction <= 1.0:
        raise ConfigError("fraction must be in [0, 1]")
    return fraction * geometry.n_elements
