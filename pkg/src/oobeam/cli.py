"""Command-line front end: config-driven experiments with on-disk artifacts.

Subcommands: gen-channels, beamsearch, fingerprint, covtranslate. Every run
targets an output directory protected by a lock file, stores the effective
configuration alongside the data files, and finishes by writing
manifest.json (tool version, config hash, master seed, timestamps, file
list). Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .channel import (ArrayGeometry, generate_congruent_channels,
                      narrowband_matrix, paths_to_taps)
from .config import (build_channel_config, build_congruence_policy,
                     build_experiment_config, build_fingerprint_settings,
                     build_scene, build_translate_settings, config_text,
                     master_seed, read_config, _get)
from .harness import (fingerprint_sweep, fingerprint_sweep_csv,
                      run_experiment, summary_csv)
from .matio import load_fingerprint_db, save_fingerprint_db, save_matrix
from .translate import (AngularSpectrum, correlation_from_spectrum,
                        correlation_nmse, nonparametric_translate,
                        parametric_translate, sample_correlation)
from .util import ConfigError, derive_rng, derive_seed

log = logging.getLogger("oobeam")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class OutputDir:
    """Lock-protected output directory that records every file written."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self.files: list[str] = []
        self._lock = self.path / ".lock"
        self._held = False

    def __enter__(self) -> "OutputDir":
        self.path.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self._lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RuntimeError(
                f"output directory {self.path} is in use (lock file "
                f"{self._lock.name} present); concurrent runs must target "
                "distinct directories") from None
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        self._held = True
        return self

    def __exit__(self, *exc):
        if self._held:
            self._lock.unlink(missing_ok=True)

    def write_text(self, name: str, text: str) -> None:
        (self.path / name).write_text(text)
        self.files.append(name)

    def save_matrix(self, name: str, array, metadata: dict) -> None:
        save_matrix(self.path / name, array, metadata)
        self.files.append(name)

    def save_database(self, name: str, db) -> None:
        save_fingerprint_db(self.path / name, db)
        self.files.append(name)


def _finish(out: OutputDir, cp, seed: int, started: str) -> None:
    # The manifest hash covers the stored config copy byte for byte, so a
    # reader can re-derive it from the directory alone. Manifest goes last.
    text = config_text(cp)
    out.write_text("config.ini", text)
    manifest = {
        "tool_version": __version__,
        "config_sha256": hashlib.sha256(text.encode()).hexdigest(),
        "master_seed": seed,
        "started": started,
        "finished": _now(),
        "outputs": sorted(out.files),
    }
    (out.path / "manifest.json").write_text(
        json.dumps(manifest, indent=2) + "\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_channels(cp, out: OutputDir, seed: int, args) -> None:
    chan = build_channel_config(cp)
    policy = build_congruence_policy(cp)
    count = _get(cp, "channel", "realizations", int,
                 lambda v: v >= 1, "must be >= 1")
    for i in range(count):
        s = derive_seed(seed, 0, i)
        sub6, mmwave = generate_congruent_channels(chan, policy, s)
        h6 = narrowband_matrix(sub6, chan.sub6.rx, chan.sub6.tx)
        taps = paths_to_taps(mmwave, chan.mmwave.rx, chan.mmwave.tx,
                             chan.mmwave.sample_period, chan.n_taps)
        out.save_matrix(f"sub6_{i:03d}.txt", h6,
                        {"band": "sub6", "seed": s, "realization": i})
        out.save_matrix(f"mmwave_taps_{i:03d}.txt", taps,
                        {"band": "mmwave", "seed": s, "realization": i})
    log.info("wrote %d congruent channel realizations", count)


def cmd_beamsearch(cp, out: OutputDir, seed: int, args) -> None:
    ec = build_experiment_config(cp, seed)
    records, rows = run_experiment(ec)
    out.write_text("summary.csv", summary_csv(rows))
    log.info("beam search sweep: %d records", len(records))


def cmd_fingerprint(cp, out: OutputDir, seed: int, args) -> None:
    fs = build_fingerprint_settings(cp)
    scene = build_scene(cp, default_seed=derive_seed(seed, 1))
    cache = {}
    if fs.reuse_databases:
        for side in fs.sides:
            path = out.path / f"fingerprint_db_{side}.txt"
            if path.is_file():
                cache[side] = load_fingerprint_db(path)
    rows = fingerprint_sweep(
        sides=fs.sides, sigma_p=fs.sigma_p,
        symbols_per_beam=fs.symbols_per_beam, trials=fs.trials,
        eval_seed=derive_seed(seed, 2), snapshots=fs.snapshots,
        top_k=fs.top_k, snr_db=fs.snr_db, target_prob=fs.target_prob,
        scene=scene, db_cache=cache,
    )
    out.write_text("fingerprint.csv", fingerprint_sweep_csv(rows))
    if fs.save_databases:
        for side, db in sorted(cache.items()):
            out.save_database(f"fingerprint_db_{side}.txt", db)
    for row in rows:
        log.info("side %d: overhead %.0f symbols, ratio %.4f",
                 row.side, row.overhead_symbols, row.ratio)


def _correlation_sqrt(r: np.ndarray) -> np.ndarray:
    evals, vecs = np.linalg.eigh(r)
    return vecs * np.sqrt(np.maximum(evals, 0.0))


def cmd_covtranslate(cp, out: OutputDir, seed: int, args) -> None:
    ts = build_translate_settings(cp)
    low = ArrayGeometry.ula(ts.n_low, ts.spacing)
    high = ArrayGeometry.ula(ts.n_high, ts.spacing)
    lines = ["case,seed,family,components,means_deg,spreads_deg,method,nmse"]
    for i in range(ts.cases):
        case_seed = derive_seed(seed, 3, i)
        rng = derive_rng(case_seed)
        k = ts.components
        means = rng.uniform(-ts.mean_range, ts.mean_range, size=k)
        if ts.family == "single-path":
            spreads = np.zeros(k)
        else:
            spreads = rng.uniform(*ts.spread_range, size=k)
        weights = rng.dirichlet(np.ones(k)) if k > 1 else np.ones(1)
        spectrum = AngularSpectrum(ts.family, means, spreads, weights)
        r_true_low = correlation_from_spectrum(low, spectrum, band="sub6")
        r_true_high = correlation_from_spectrum(high, spectrum, band="mmwave")
        if ts.snapshots > 0:
            root = _correlation_sqrt(r_true_low.matrix)
            sigma = 10.0 ** (-ts.snapshot_snr_db / 20.0)
            shape = (ts.snapshots, ts.n_low)
            w = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
            n = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
            snaps = w / np.sqrt(2) @ root.T + sigma / np.sqrt(2) * n
            r_low = sample_correlation(snaps, low).matrix
        else:
            r_low = r_true_low.matrix
        estimates = {
            "parametric": parametric_translate(
                r_low, low, high, family=ts.family, components=k),
            "nonparametric": nonparametric_translate(r_low, low, high),
        }
        meta = (f"{i},{case_seed},{ts.family},{k},"
                + ";".join(f"{np.degrees(m):.6g}" for m in means) + ","
                + ";".join(f"{np.degrees(s):.6g}" for s in spreads))
        for method in ("parametric", "nonparametric"):
            nmse = correlation_nmse(estimates[method].matrix,
                                    r_true_high.matrix)
            lines.append(f"{meta},{method},{nmse:.10g}")
    out.write_text("nmse.csv", "\n".join(lines) + "\n")
    log.info("translation ensemble: %d cases, %d rows",
             ts.cases, 2 * ts.cases)


COMMANDS = {
    "gen-channels": cmd_gen_channels,
    "beamsearch": cmd_beamsearch,
    "fingerprint": cmd_fingerprint,
    "covtranslate": cmd_covtranslate,
}

_HELP = {
    "gen-channels": "write congruent sub-6 GHz / mmWave channel files",
    "beamsearch": "run the beam-search method comparison, write summary.csv",
    "fingerprint": "fingerprint-vs-802.11ad overhead sweep",
    "covtranslate": "correlation translation NMSE ensemble",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oobeam",
        description="Out-of-band-aided mmWave beam alignment experiments.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, handler in COMMANDS.items():
        p = sub.add_parser(name, help=_HELP[name])
        p.add_argument("--config", type=Path, default=None,
                       help="config file (defaults: built-in reference setup)")
        p.add_argument("--out", type=Path, required=True,
                       help="output directory (one concurrent run per dir)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the master seed from the config")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads (reserved; runs are sequential)")
        p.add_argument("--quiet", action="store_true",
                       help="log warnings and errors only")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        log.error("--threads must be >= 1")
        return 2
    try:
        cp = read_config(args.config)
        seed = master_seed(cp, args.seed)
        started = _now()
        with OutputDir(args.out) as out:
            COMMANDS[args.command](cp, out, seed, args)
            _finish(out, cp, seed, started)
    except ConfigError as exc:
        log.error("%s", exc)
        return 2
    except Exception as exc:
        log.error("%s", exc)
        return 3
    return 0
