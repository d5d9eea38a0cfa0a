"""Run configuration: sectioned key-value text files.

A complete reference configuration ships with the package
(``DEFAULT_CONFIG``) and is the single source of truth for default
parameter values. User files override it section by section; the two band
sections must spell out their physical parameters in full, everything else
is optional. Validation happens here, before any computation starts, and
errors name the offending section and field.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .channel import ArrayGeometry, BandSetup, ChannelConfig, CongruencePolicy
from .fingerprint import SceneModel, Wall
from .harness import ExperimentConfig
from .translate import FAMILIES
from .util import ConfigError

DEFAULT_CONFIG = """\
# Reference setup: 4-element sub-6 GHz arrays aiding a 32-element
# 28 GHz link. Values here are the package defaults; user files
# override individual keys.

[sub6]
carrier_hz = 3.5e9
bandwidth_hz = 1e6
n_tx = 4
n_rx = 4
spacing = 0.5

[mmwave]
carrier_hz = 28e9
bandwidth_hz = 320e6
n_tx = 32
n_rx = 32
spacing = 0.5

[channel]
n_sub6_paths = 3
angle_range_deg = 60
n_taps = 63
n_subcarriers = 256
cyclic_prefix = 64
share_probability = 1.0
perturbation_std = 0.0
n_extra_paths = 1
path_decay = 0.15
realizations = 1

[link]
tx_power_dbm = 37
path_loss_exponent = 3
noise_figure_db = 5

[experiment]
methods = bpdn, w-bpdn, sw-bpdn
distances_m = 40
n_measurements = 36
coherence_symbols = 2048
trials = 100
master_seed = 0
oversample = 1
eta_mode = actual
min_gain_fraction = 0.33
n_prior_angles = 2
spread_steps = 2.0
sub6_snapshots = 100
regularization_scale = 0.15

[fingerprint]
sides = 8, 16, 24, 32
sigma_p = 0.5
symbols_per_beam = 10
trials = 1000
snapshots = 20
top_k = 128
snr_db = -16.88
target_prob = 0.99
save_databases = false
reuse_databases = false

[translate]
family = gaussian
components = 1
cases = 100
n_low = 4
n_high = 32
spacing = 0.5
snapshots = 0
snapshot_snr_db = 20
mean_range_deg = 45
spread_min_deg = 2
spread_max_deg = 8
"""

# Band sections in a user file must be self-contained; silently borrowing
# a default carrier for a custom band invites unit mistakes.
_REQUIRED = {
    "sub6": ("carrier_hz", "bandwidth_hz", "n_tx", "n_rx"),
    "mmwave": ("carrier_hz", "bandwidth_hz", "n_tx", "n_rx"),
}


def _parser() -> configparser.ConfigParser:
    return configparser.ConfigParser(inline_comment_prefixes=("#", ";"))


def read_config(path=None) -> configparser.ConfigParser:
    """Parse a config file over the shipped defaults; None = defaults only."""
    cp = _parser()
    cp.read_string(DEFAULT_CONFIG)
    if path is None:
        return cp
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    user = _parser()
    try:
        user.read_string(p.read_text(), source=str(p))
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from None
    for section, keys in _REQUIRED.items():
        if not user.has_section(section):
            raise ConfigError(f"missing section [{section}]")
        for key in keys:
            if not user.has_option(section, key):
                raise ConfigError(
                    f"[{section}] missing required field {key!r}")
    for section in user.sections():
        if not cp.has_section(section):
            cp.add_section(section)
        for key, value in user.items(section):
            cp.set(section, key, value)
    return cp


def config_text(cp: configparser.ConfigParser) -> str:
    """Effective configuration as deterministic text (the stored copy)."""
    out = []
    for section in cp.sections():
        out.append(f"[{section}]")
        for key in sorted(cp.options(section)):
            out.append(f"{key} = {cp.get(section, key)}")
        out.append("")
    return "\n".join(out)


def _get(cp, section, key, conv, check=None, requirement=""):
    raw = cp.get(section, key, fallback=None)
    if raw is None:
        raise ConfigError(f"[{section}] missing required field {key!r}")
    try:
        value = conv(raw)
    except ValueError:
        raise ConfigError(
            f"[{section}] {key} = {raw!r} is not a valid value") from None
    if check is not None and not check(value):
        raise ConfigError(f"[{section}] {key} = {raw} {requirement}")
    return value


def _get_bool(cp, section, key):
    raw = cp.get(section, key, fallback="false").strip().lower()
    if raw in ("true", "yes", "1", "on"):
        return True
    if raw in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"[{section}] {key} = {raw!r} is not a boolean")


def _split_list(raw: str) -> list[str]:
    return [t.strip() for t in raw.split(",") if t.strip()]


def _positive(v) -> bool:
    return v > 0


def build_band(cp, section: str) -> BandSetup:
    spacing = _get(cp, section, "spacing", float, _positive,
                   "must be positive")
    n_tx = _get(cp, section, "n_tx", int, lambda v: v >= 1, "must be >= 1")
    n_rx = _get(cp, section, "n_rx", int, lambda v: v >= 1, "must be >= 1")
    return BandSetup(
        _get(cp, section, "carrier_hz", float, _positive, "must be positive"),
        _get(cp, section, "bandwidth_hz", float, _positive,
             "must be positive"),
        ArrayGeometry.ula(n_tx, spacing),
        ArrayGeometry.ula(n_rx, spacing),
    )


def build_channel_config(cp) -> ChannelConfig:
    return ChannelConfig(
        sub6=build_band(cp, "sub6"),
        mmwave=build_band(cp, "mmwave"),
        n_sub6_paths=_get(cp, "channel", "n_sub6_paths", int,
                          lambda v: v >= 1, "must be >= 1"),
        angle_range=np.deg2rad(_get(
            cp, "channel", "angle_range_deg", float,
            lambda v: 0 < v <= 90, "must be in (0, 90]")),
        n_taps=_get(cp, "channel", "n_taps", int, _positive,
                    "must be positive"),
        n_subcarriers=_get(cp, "channel", "n_subcarriers", int, _positive,
                           "must be positive"),
        cyclic_prefix=_get(cp, "channel", "cyclic_prefix", int,
                           lambda v: v >= 0, "must be nonnegative"),
        path_decay=_get(cp, "channel", "path_decay", float,
                        lambda v: 0 < v <= 1, "must be in (0, 1]"),
    )


def build_congruence_policy(cp) -> CongruencePolicy:
    return CongruencePolicy(
        share_probability=_get(cp, "channel", "share_probability", float,
                               lambda v: 0 <= v <= 1, "must be in [0, 1]"),
        perturbation_std=_get(cp, "channel", "perturbation_std", float,
                              lambda v: v >= 0, "must be nonnegative"),
        n_extra=_get(cp, "channel", "n_extra_paths", int,
                     lambda v: v >= 0, "must be nonnegative"),
    )


def master_seed(cp, override: int | None = None) -> int:
    if override is not None:
        if override < 0:
            raise ConfigError("seed must be nonnegative")
        return int(override)
    return _get(cp, "experiment", "master_seed", int,
                lambda v: v >= 0, "must be nonnegative")


def build_experiment_config(cp, seed: int | None = None) -> ExperimentConfig:
    return ExperimentConfig(
        channel=build_channel_config(cp),
        methods=tuple(_split_list(cp.get("experiment", "methods"))),
        distances_m=tuple(
            float(t) for t in _split_list(cp.get("experiment", "distances_m"))),
        n_measurements=_get(cp, "experiment", "n_measurements", int,
                            _positive, "must be positive"),
        coherence_symbols=_get(cp, "experiment", "coherence_symbols", float,
                               _positive, "must be positive"),
        trials=_get(cp, "experiment", "trials", int, _positive,
                    "must be positive"),
        master_seed=master_seed(cp, seed),
        oversample=_get(cp, "experiment", "oversample", int,
                        lambda v: v >= 1, "must be >= 1"),
        eta_mode=cp.get("experiment", "eta_mode").strip(),
        min_gain_fraction=_get(cp, "experiment", "min_gain_fraction", float,
                               lambda v: 0 <= v < 1, "must be in [0, 1)"),
        n_prior_angles=_get(cp, "experiment", "n_prior_angles", int,
                            lambda v: v >= 1, "must be >= 1"),
        spread_steps=_get(cp, "experiment", "spread_steps", float,
                          lambda v: v >= 0, "must be nonnegative"),
        sub6_snapshots=_get(cp, "experiment", "sub6_snapshots", int,
                            lambda v: v >= 1, "must be >= 1"),
        regularization_scale=_get(cp, "experiment", "regularization_scale",
                                  float, _positive, "must be positive"),
        tx_power_dbm=_get(cp, "link", "tx_power_dbm", float),
        path_loss_exponent=_get(cp, "link", "path_loss_exponent", float,
                                _positive, "must be positive"),
        noise_figure_db=_get(cp, "link", "noise_figure_db", float,
                             lambda v: v >= 0, "must be nonnegative"),
    )


def build_scene(cp, default_seed: int) -> SceneModel:
    """Scene from an explicit [scene] section, else the seeded default."""
    if not cp.has_section("scene"):
        return SceneModel.default(default_seed)
    walls = []
    raw_walls = cp.get("scene", "walls", fallback="").strip()
    if raw_walls and raw_walls != "none":
        for token in _split_list(raw_walls):
            axis, _, offset = token.partition(":")
            if axis not in ("x", "y") or not offset:
                raise ConfigError(
                    f"[scene] walls entry {token!r} is not axis:offset")
            walls.append(Wall(axis, float(offset)))
    bounds = tuple(
        _get(cp, "scene", k, float)
        for k in ("x_min", "x_max", "y_min", "y_max"))
    return SceneModel(
        bounds=bounds,
        bin_size=_get(cp, "scene", "bin_size", float, _positive,
                      "must be positive"),
        walls=tuple(walls),
        p_block=_get(cp, "scene", "p_block", float,
                     lambda v: 0 <= v <= 1, "must be in [0, 1]"),
        p_reflect=_get(cp, "scene", "p_reflect", float,
                       lambda v: 0 <= v <= 1, "must be in [0, 1]"),
        reflection_loss_db=(
            _get(cp, "scene", "loss_db_lo", float),
            _get(cp, "scene", "loss_db_hi", float)),
        seed=_get(cp, "scene", "seed", int, lambda v: v >= 0,
                  "must be nonnegative"),
    )


@dataclass(frozen=True)
class FingerprintSettings:
    sides: tuple[int, ...]
    sigma_p: float
    symbols_per_beam: int
    trials: int
    snapshots: int
    top_k: int
    snr_db: float
    target_prob: float
    save_databases: bool
    reuse_databases: bool


def build_fingerprint_settings(cp) -> FingerprintSettings:
    sides = tuple(int(t) for t in _split_list(cp.get("fingerprint", "sides")))
    if not sides or any(s < 1 for s in sides):
        raise ConfigError("[fingerprint] sides must be positive integers")
    return FingerprintSettings(
        sides=sides,
        sigma_p=_get(cp, "fingerprint", "sigma_p", float,
                     lambda v: v >= 0, "must be nonnegative"),
        symbols_per_beam=_get(cp, "fingerprint", "symbols_per_beam", int,
                              _positive, "must be positive"),
        trials=_get(cp, "fingerprint", "trials", int, _positive,
                    "must be positive"),
        snapshots=_get(cp, "fingerprint", "snapshots", int, _positive,
                       "must be positive"),
        top_k=_get(cp, "fingerprint", "top_k", int, _positive,
                   "must be positive"),
        snr_db=_get(cp, "fingerprint", "snr_db", float),
        target_prob=_get(cp, "fingerprint", "target_prob", float,
                         lambda v: 0 < v < 1, "must be in (0, 1)"),
        save_databases=_get_bool(cp, "fingerprint", "save_databases"),
        reuse_databases=_get_bool(cp, "fingerprint", "reuse_databases"),
    )


@dataclass(frozen=True)
class TranslateSettings:
    family: str
    components: int
    cases: int
    n_low: int
    n_high: int
    spacing: float
    snapshots: int
    snapshot_snr_db: float
    mean_range: float
    spread_range: tuple[float, float]


def build_translate_settings(cp) -> TranslateSettings:
    family = cp.get("translate", "family").strip()
    if family not in FAMILIES:
        raise ConfigError(
            f"[translate] unknown family {family!r}; "
            f"valid: {', '.join(FAMILIES)}")
    spread_lo = _get(cp, "translate", "spread_min_deg", float,
                     lambda v: v >= 0, "must be nonnegative")
    spread_hi = _get(cp, "translate", "spread_max_deg", float,
                     lambda v: v >= spread_lo,
                     "must be >= spread_min_deg")
    return TranslateSettings(
        family=family,
        components=_get(cp, "translate", "components", int,
                        lambda v: 1 <= v <= 3, "must be in [1, 3]"),
        cases=_get(cp, "translate", "cases", int, _positive,
                   "must be positive"),
        n_low=_get(cp, "translate", "n_low", int, lambda v: v >= 1,
                   "must be >= 1"),
        n_high=_get(cp, "translate", "n_high", int, lambda v: v >= 1,
                    "must be >= 1"),
        spacing=_get(cp, "translate", "spacing", float, _positive,
                     "must be positive"),
        snapshots=_get(cp, "translate", "snapshots", int,
                       lambda v: v >= 0, "must be nonnegative"),
        snapshot_snr_db=_get(cp, "translate", "snapshot_snr_db", float),
        mean_range=np.deg2rad(_get(
            cp, "translate", "mean_range_deg", float,
            lambda v: 0 < v <= 90, "must be in (0, 90]")),
        spread_range=(np.deg2rad(spread_lo), np.deg2rad(spread_hi)),
    )
