"""Spatial-correlation translation between frequency bands.

A receive array's spatial correlation R[m,n] = E[v_m v_n^*] is determined by
the angular power spectrum p(theta) through

    R[m,n] = integral p(theta) * exp(j*2*pi*d*(m-n)*sin(theta)) dtheta,

with d the element spacing in carrier wavelengths. Because the angular
spectrum is (approximately) shared between a sub-6 GHz and a mmWave link at
the same site, a correlation estimated on a small low-band array can be
translated to a much larger high-band array: parametrically, by fitting a
spectrum model and re-evaluating it on the target geometry, or
non-parametrically, by resampling the lag-domain correlation sequence and
extrapolating beyond the measured aperture.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate, interpolate, linalg, optimize, special
from scipy.stats import norm

from .channel import ArrayGeometry
from .util import ConfigError

FAMILIES = ("single-path", "uniform-sector", "gaussian")


@dataclass(frozen=True)
class SpatialCorrelation:
    """Hermitian PSD correlation matrix with its band and geometry."""

    matrix: np.ndarray
    band: str
    geometry: ArrayGeometry

    def __post_init__(self):
        r = np.asarray(self.matrix, dtype=complex)
        n = self.geometry.n_elements
        if r.shape != (n, n):
            raise ConfigError("correlation shape does not match geometry")
        scale = max(1.0, float(np.abs(r).max()))
        if np.abs(r - r.conj().T).max() > 1e-10 * scale:
            raise ConfigError("correlation must be Hermitian")
        trace = float(np.real(np.trace(r)))
        min_eig = float(np.linalg.eigvalsh(r)[0])
        if min_eig < -1e-8 * max(trace / n, 1e-300):
            raise ConfigError("correlation must be positive semidefinite")
        object.__setattr__(self, "matrix", r)

    @property
    def n_elements(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class AngularSpectrum:
    """Angular power density: mixture of up to 3 same-family components.

    Families: "single-path" (delta at the mean), "uniform-sector" (uniform
    over mean +- spread in physical angle), "gaussian" (truncated normal
    with the spread as standard deviation).
    """

    family: str
    means: np.ndarray
    spreads: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown spectrum family {self.family!r}")
        means = np.atleast_1d(np.asarray(self.means, dtype=float))
        spreads = np.atleast_1d(np.asarray(self.spreads, dtype=float))
        weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        k = means.size
        if not 1 <= k <= 3:
            raise ConfigError("between 1 and 3 components supported")
        if spreads.size != k or weights.size != k:
            raise ConfigError("component arrays must have equal length")
        if (np.abs(means) > np.pi / 2 + 1e-12).any():
            raise ConfigError("mean angles outside [-pi/2, pi/2]")
        if (spreads < 0).any():
            raise ConfigError("spreads must be nonnegative")
        if (weights < 0).any() or abs(weights.sum() - 1.0) > 1e-9:
            raise ConfigError("weights must be nonnegative and sum to 1")
        if self.family == "uniform-sector":
            if ((np.abs(means) + spreads) > np.pi / 2 + 1e-9).any():
                raise ConfigError("sector extends outside [-pi/2, pi/2]")
            if (spreads <= 0).any():
                raise ConfigError("sector half-width must be positive")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "spreads", spreads)
        object.__setattr__(self, "weights", weights)

    @property
    def n_components(self) -> int:
        return self.means.size

    @classmethod
    def single_path(cls, angle: float) -> "AngularSpectrum":
        return cls("single-path", [angle], [0.0], [1.0])

    @classmethod
    def uniform_sector(cls, mean: float, half_width: float) -> "AngularSpectrum":
        return cls("uniform-sector", [mean], [half_width], [1.0])

    @classmethod
    def gaussian(cls, mean: float, std: float) -> "AngularSpectrum":
        return cls("gaussian", [mean], [std], [1.0])


# ---------------------------------------------------------------------------
# Estimation and forward model
# ---------------------------------------------------------------------------

def sample_correlation(
    snapshots, geometry: ArrayGeometry, band: str = "sub6"
) -> SpatialCorrelation:
    """Average outer product of received snapshots, clipped to the PSD cone.

    ``snapshots`` is an (S, N) array or a list of length-N vectors, S >= 1.
    """
    v = np.asarray(snapshots, dtype=complex)
    if v.ndim == 1:
        v = v[None, :]
    if v.ndim != 2 or v.shape[0] < 1:
        raise ValueError("need at least one snapshot")
    if v.shape[1] != geometry.n_elements:
        raise ConfigError("snapshot length does not match geometry")
    r = v.T @ v.conj() / v.shape[0]
    r = 0.5 * (r + r.conj().T)
    evals = np.linalg.eigvalsh(r)
    if evals[0] < 0:
        r = _clip_psd(r)
    return SpatialCorrelation(r, band, geometry)


def _clip_psd(r: np.ndarray) -> np.ndarray:
    evals, vecs = np.linalg.eigh(r)
    evals = np.maximum(evals, 0.0)
    return (vecs * evals) @ vecs.conj().T


def correlation_from_spectrum(
    geometry: ArrayGeometry, spectrum: AngularSpectrum, band: str = "model"
) -> SpatialCorrelation:
    """Toeplitz correlation of a linear array under an angular spectrum.

    Single-path and uniform-sector components use closed forms (the sector
    via its Jacobi-Anger Bessel series); gaussian components use adaptive
    quadrature with absolute tolerance 1e-10 on a 12-sigma support truncated
    to the physical angle range.
    """
    if geometry.kind != "linear":
        raise ConfigError("correlation model supports linear arrays only")
    n = geometry.n_elements
    lag_args = 2.0 * np.pi * geometry.spacing * np.arange(n)
    r = np.zeros(n, dtype=complex)
    for mean, spread, weight in zip(spectrum.means, spectrum.spreads, spectrum.weights):
        r += weight * _component_lags(spectrum.family, mean, spread, lag_args)
    return SpatialCorrelation(linalg.toeplitz(r), band, geometry)


def _component_lags(family: str, mean: float, spread: float, c: np.ndarray) -> np.ndarray:
    if family == "single-path":
        return np.exp(1j * c * np.sin(mean))
    if family == "uniform-sector":
        return _sector_lags(mean - spread, mean + spread, c)
    return _gaussian_lags_quad(mean, spread, c)


def _sector_lags(lo: float, hi: float, c: np.ndarray) -> np.ndarray:
    """(1/(hi-lo)) * integral_lo^hi exp(j*c*sin(theta)) dtheta, per lag.

    Jacobi-Anger expansion: exp(j*c*sin(theta)) = sum_k J_k(c) exp(j*k*theta);
    each harmonic integrates in closed form. Truncation order grows with |c|
    since J_k(c) only decays for k beyond |c|.
    """
    out = np.empty(c.size, dtype=complex)
    span = hi - lo
    for i, ci in enumerate(c):
        k_max = int(abs(ci) + 12.0 * (abs(ci) ** (1.0 / 3.0) + 1.0) + 20)
        k = np.arange(-k_max, k_max + 1)
        jk = special.jv(k, ci)
        with np.errstate(divide="ignore", invalid="ignore"):
            ik = (np.exp(1j * k * hi) - np.exp(1j * k * lo)) / (1j * k * span)
        ik[k == 0] = 1.0
        out[i] = np.sum(jk * ik)
    return out


def _gaussian_support(mean: float, std: float) -> tuple[float, float]:
    lo = max(-np.pi / 2, mean - 12.0 * std)
    hi = min(np.pi / 2, mean + 12.0 * std)
    return lo, hi


def _gaussian_lags_quad(mean: float, std: float, c: np.ndarray) -> np.ndarray:
    if std == 0.0:
        return np.exp(1j * c * np.sin(mean))
    lo, hi = _gaussian_support(mean, std)
    mass = norm.cdf((hi - mean) / std) - norm.cdf((lo - mean) / std)

    def integrand(theta: float) -> np.ndarray:
        p = np.exp(-0.5 * ((theta - mean) / std) ** 2) / (
            std * np.sqrt(2.0 * np.pi) * mass
        )
        return p * np.exp(1j * c * np.sin(theta))

    value, _ = integrate.quad_vec(integrand, lo, hi, epsabs=1e-10, limit=2000)
    return value


_LEGGAUSS_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gauss_legendre_nodes(lo: float, hi: float, order: int = 201):
    if order not in _LEGGAUSS_CACHE:
        _LEGGAUSS_CACHE[order] = np.polynomial.legendre.leggauss(order)
    x, w = _LEGGAUSS_CACHE[order]
    theta = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
    return theta, 0.5 * (hi - lo) * w


def _gaussian_lags_fast(mean: float, std: float, c: np.ndarray) -> np.ndarray:
    """Fixed-order Gauss-Legendre version used inside fitting loops."""
    if std == 0.0:
        return np.exp(1j * c * np.sin(mean))
    lo, hi = _gaussian_support(mean, std)
    theta, w = _gauss_legendre_nodes(lo, hi)
    p = np.exp(-0.5 * ((theta - mean) / std) ** 2)
    p_w = p * w
    p_w /= p_w.sum()
    return np.exp(1j * np.outer(c, np.sin(theta))) @ p_w


def _model_lags(
    family: str, params: np.ndarray, c: np.ndarray, components: int = 1
) -> np.ndarray:
    """Mixture lag sequence from a packed parameter vector (fit internals)."""
    means, spreads, weights = _split_params(family, params, components)
    out = np.zeros(c.size, dtype=complex)
    for mean, spread, weight in zip(means, spreads, weights):
        if family == "gaussian":
            lags = _gaussian_lags_fast(mean, spread, c)
        elif family == "uniform-sector":
            lags = _sector_lags(mean - spread, mean + spread, c)
        else:
            lags = np.exp(1j * c * np.sin(mean))
        out += weight * lags
    return out


def _split_params(family: str, params: np.ndarray, components: int):
    """Packed layout: means, then spreads (absent for single-path), then the
    first components-1 mixture weights."""
    k = components
    means = params[:k]
    if family == "single-path":
        spreads = np.zeros(k)
        wfree = params[k:]
    else:
        spreads = params[k:2 * k]
        wfree = params[2 * k:]
    if k > 1:
        weights = np.concatenate([wfree, [1.0 - wfree.sum()]])
    else:
        weights = np.array([1.0])
    return means, spreads, weights


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

def fit_angular_spectrum(
    r_low,
    geometry_low: ArrayGeometry,
    family: str = "gaussian",
    components: int = 1,
) -> AngularSpectrum:
    """Spectrum parameters minimizing the Frobenius misfit to a correlation.

    Coarse mean-angle x spread grid search followed by Nelder-Mead
    refinement; deterministic for fixed inputs. The input is normalized by
    its mean diagonal first, so only the correlation shape matters.
    ``components`` > 1 fits a mixture (up to 3), initialized from the
    strongest beamspace peaks.
    """
    if family not in FAMILIES:
        raise ConfigError(f"unknown spectrum family {family!r}")
    if not 1 <= components <= 3:
        raise ConfigError("components must be between 1 and 3")
    if geometry_low.kind != "linear":
        raise ConfigError("fitting supports linear arrays only")
    r = _as_matrix(r_low)
    n = geometry_low.n_elements
    if r.shape != (n, n):
        raise ConfigError("correlation shape does not match geometry")
    trace = float(np.real(np.trace(r)))
    if trace <= 1e-300:
        raise ValueError("degenerate correlation: zero trace")
    r = r / (trace / n)
    lags = _lag_sequence(r)
    c = 2.0 * np.pi * geometry_low.spacing * np.arange(n)
    # weight lag k by its diagonal multiplicity to mirror the Frobenius norm
    lag_weights = np.concatenate([[float(n)], 2.0 * np.arange(n - 1, 0, -1.0)])

    def misfit(params: np.ndarray) -> float:
        if not _params_valid(family, params, components):
            return 1e6
        diff = np.abs(_model_lags(family, params, c, components) - lags) ** 2
        return float(lag_weights @ diff)

    if family == "single-path" and components == 1:
        x0 = np.array([_single_path_init(lags, geometry_low.spacing)])
    else:
        x0 = _grid_init(family, components, lags, c, misfit)
    best = optimize.minimize(
        misfit, x0, method="Nelder-Mead",
        options={"xatol": 1e-9, "fatol": 1e-12, "maxiter": 4000},
    )
    params = best.x if best.fun <= misfit(x0) else x0
    return _unpack_spectrum(family, params, components)


def _as_matrix(r) -> np.ndarray:
    if isinstance(r, SpatialCorrelation):
        return r.matrix
    return np.asarray(r, dtype=complex)


def _lag_sequence(r: np.ndarray) -> np.ndarray:
    """Average each subdiagonal: lag k estimate under Toeplitz structure."""
    n = r.shape[0]
    return np.array([np.mean(np.diagonal(r, offset=-k)) for k in range(n)])


def _single_path_init(lags: np.ndarray, spacing: float) -> float:
    z = np.sum(np.conj(lags[:-1]) * lags[1:]) if lags.size > 1 else 1.0 + 0j
    s = np.angle(z) / (2.0 * np.pi * spacing)
    return float(np.arcsin(np.clip(s, -1.0, 1.0)))


def _params_valid(family: str, params: np.ndarray, components: int) -> bool:
    means, spreads, weights = _split_params(family, params, components)
    if (np.abs(means) > np.pi / 2).any():
        return False
    if (spreads < 0).any():
        return False
    if family == "uniform-sector" and (
        (spreads <= 1e-6).any() or ((np.abs(means) + spreads) > np.pi / 2).any()
    ):
        return False
    if family == "gaussian" and (spreads < 1e-6).any():
        return False
    return not (weights < 0).any()


def _grid_init(family, components, lags, c, misfit) -> np.ndarray:
    means_grid = np.deg2rad(np.linspace(-75.0, 75.0, 31))
    if family == "gaussian":
        spread_grid = np.deg2rad(np.geomspace(0.2, 30.0, 25))
    elif family == "uniform-sector":
        spread_grid = np.deg2rad(np.linspace(0.5, 89.0, 25))
    else:
        spread_grid = np.array([0.0])
    if components == 1:
        best, best_val = None, np.inf
        for m in means_grid:
            for s in spread_grid:
                p = np.array([m]) if family == "single-path" else np.array([m, s])
                val = misfit(p)
                if val < best_val:
                    best, best_val = p, val
        return best
    # mixtures: place components at the strongest beamspace peaks
    probe = np.deg2rad(np.linspace(-85.0, 85.0, 121))
    response = np.exp(1j * np.outer(np.sin(probe), c))
    power = np.abs(response.conj() @ lags)
    order = np.argsort(power)[::-1]
    chosen: list[float] = []
    for idx in order:
        if len(chosen) >= components:
            break
        if all(abs(probe[idx] - a) > np.deg2rad(8.0) for a in chosen):
            chosen.append(float(probe[idx]))
    while len(chosen) < components:
        chosen.append(0.0)
    means = np.array(chosen)
    if family == "single-path":
        return np.concatenate([means, np.full(components - 1, 1.0 / components)])
    spreads = np.full(components, np.deg2rad(3.0))
    return np.concatenate([means, spreads, np.full(components - 1, 1.0 / components)])


def _unpack_spectrum(family, params, components) -> AngularSpectrum:
    means, spreads, weights = _split_params(family, params, components)
    return AngularSpectrum(family, means, spreads, weights)


# ---------------------------------------------------------------------------
# Translation
# ---------------------------------------------------------------------------

def parametric_translate(
    r_low,
    geometry_low: ArrayGeometry,
    geometry_high: ArrayGeometry,
    family: str = "gaussian",
    components: int = 1,
    band: str = "mmwave",
) -> SpatialCorrelation:
    """Fit a spectrum on the low band, re-evaluate it on the high geometry.

    The output is rescaled so its mean diagonal matches the input's, keeping
    received power comparable across bands.
    """
    r = _as_matrix(r_low)
    spectrum = fit_angular_spectrum(r, geometry_low, family, components)
    high = correlation_from_spectrum(geometry_high, spectrum, band=band)
    scale = float(np.real(np.trace(r))) / geometry_low.n_elements
    return SpatialCorrelation(high.matrix * scale, band, geometry_high)


def nonparametric_translate(
    r_low,
    geometry_low: ArrayGeometry,
    geometry_high: ArrayGeometry,
    band: str = "mmwave",
    taper_fraction: float = 0.5,
) -> SpatialCorrelation:
    """Resample the lag-domain correlation onto the high-band aperture.

    The Toeplitz lag sequence (subdiagonal averages) is interpreted as
    samples of a correlation function of antenna separation measured in
    carrier wavelengths. Inside the measured aperture the high-band lags are
    cubic-spline interpolated; beyond it the magnitude is tapered to zero
    with a raised-cosine window spanning ``taper_fraction`` of the
    unmeasured lag span while the phase continues the dominant linear trend.
    The rebuilt Toeplitz matrix is clipped to the PSD cone and its trace
    renormalized.
    """
    if geometry_low.kind != "linear" or geometry_high.kind != "linear":
        raise ConfigError("lag-domain translation supports linear arrays only")
    if not 0 < taper_fraction <= 1:
        raise ConfigError("taper_fraction must be in (0, 1]")
    r = _as_matrix(r_low)
    n_low = geometry_low.n_elements
    if r.shape != (n_low, n_low):
        raise ConfigError("correlation shape does not match geometry")
    lags_low = _lag_sequence(r)
    x_low = geometry_low.spacing * np.arange(n_low)
    n_high = geometry_high.n_elements
    x_high = geometry_high.spacing * np.arange(n_high)

    inside = x_high <= x_low[-1] + 1e-12
    lags_high = np.empty(n_high, dtype=complex)
    if n_low >= 4:
        spline = interpolate.CubicSpline(x_low, lags_low)
        lags_high[inside] = spline(x_high[inside])
    elif n_low >= 2:
        lags_high[inside] = np.interp(x_high[inside], x_low, lags_low.real) \
            + 1j * np.interp(x_high[inside], x_low, lags_low.imag)
    else:
        lags_high[inside] = lags_low[0]

    if not inside.all():
        x_last = x_low[-1]
        span = x_high[-1] - x_last
        window = taper_fraction * span
        if n_low > 1:
            step = x_low[1] - x_low[0]
            z = np.sum(np.conj(lags_low[:-1]) * lags_low[1:])
            slope = float(np.angle(z)) / step
        else:
            slope = 0.0
        mag_last = float(np.abs(lags_low[-1]))
        phase_last = float(np.angle(lags_low[-1]))
        out = x_high[~inside]
        dist = out - x_last
        mag = np.where(
            dist < window,
            mag_last * 0.5 * (1.0 + np.cos(np.pi * np.minimum(dist, window) / window)),
            0.0,
        ) if window > 0 else np.zeros_like(dist)
        lags_high[~inside] = mag * np.exp(1j * (phase_last + slope * dist))

    matrix = linalg.toeplitz(lags_high)
    matrix = 0.5 * (matrix + matrix.conj().T)
    matrix = _clip_psd(matrix)
    target_trace = n_high * float(np.real(lags_high[0]))
    trace = float(np.real(np.trace(matrix)))
    if trace > 0 and target_trace > 0:
        matrix *= target_trace / trace
    return SpatialCorrelation(matrix, band, geometry_high)


def correlation_nmse(r_hat, r_true) -> float:
    """Normalized squared Frobenius error between two correlation matrices."""
    a = _as_matrix(r_hat)
    b = _as_matrix(r_true)
    if a.shape != b.shape:
        raise ValueError("correlation shapes differ")
    denom = float(np.linalg.norm(b) ** 2)
    if denom <= 0.0:
        raise ValueError("reference correlation is zero")
    return float(np.linalg.norm(a - b) ** 2) / denom
