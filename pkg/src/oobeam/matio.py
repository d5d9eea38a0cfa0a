"""Versioned text-file formats: complex arrays and fingerprint databases.

Everything is line-oriented and binary-free so outputs can be diffed and
compared across implementations. Floats are written with repr-level
precision ("%.17g"), which round-trips IEEE doubles exactly; identical
inputs therefore produce byte-identical files.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .channel import ArrayGeometry
from .fingerprint import FingerprintDatabase, SceneModel, Wall, dft_codebook
from .util import ConfigError

MATRIX_MAGIC = "# oobeam-matrix 1"
DB_MAGIC = "# oobeam-fingerprint 1"


def _fmt(x: float) -> str:
    return f"{x:.17g}"


# ---------------------------------------------------------------------------
# complex arrays
# ---------------------------------------------------------------------------

def save_matrix(path, array, metadata: dict | None = None) -> None:
    """Write a complex array: header lines, then one entry per line.

    Entries are "re im" pairs in row-major order; the header records the
    shape and any string metadata (keys sorted for determinism).
    """
    arr = np.asarray(array, dtype=complex)
    lines = [MATRIX_MAGIC,
             "# shape: " + " ".join(str(d) for d in arr.shape)]
    for key in sorted(metadata or {}):
        value = str((metadata or {})[key])
        if "\n" in key or "\n" in value or ":" in key or key == "shape":
            raise ConfigError("metadata keys/values must be single-line, "
                              "keys without ':' and not 'shape'")
        lines.append(f"# {key}: {value}")
    flat = arr.ravel()
    lines.extend(f"{_fmt(v.real)} {_fmt(v.imag)}" for v in flat)
    Path(path).write_text("\n".join(lines) + "\n")


def load_matrix(path) -> tuple[np.ndarray, dict]:
    """Read an array written by save_matrix; returns (array, metadata)."""
    text = Path(path).read_text().splitlines()
    if not text or text[0] != MATRIX_MAGIC:
        raise ConfigError(f"{path}: not a recognized matrix file")
    shape = None
    metadata: dict[str, str] = {}
    body_start = 1
    for i, line in enumerate(text[1:], start=1):
        if not line.startswith("#"):
            body_start = i
            break
        key, _, value = line[1:].partition(":")
        key = key.strip()
        if key == "shape":
            try:
                shape = tuple(int(t) for t in value.split())
            except ValueError as exc:
                raise ConfigError(f"{path}: bad shape header") from exc
        else:
            metadata[key] = value.strip()
        body_start = i + 1
    if shape is None:
        raise ConfigError(f"{path}: missing shape header")
    values = []
    for line in text[body_start:]:
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ConfigError(f"{path}: malformed entry line {line!r}")
        values.append(complex(float(parts[0]), float(parts[1])))
    n_expected = int(np.prod(shape)) if shape else 0
    if len(values) != n_expected:
        raise ConfigError(
            f"{path}: expected {n_expected} entries, found {len(values)}")
    return np.asarray(values, dtype=complex).reshape(shape), metadata


# ---------------------------------------------------------------------------
# fingerprint databases
# ---------------------------------------------------------------------------

def _geometry_token(g: ArrayGeometry) -> str:
    counts = " ".join(str(c) for c in g.counts)
    return f"{g.kind} {counts} {_fmt(g.spacing)}"


def _parse_geometry(token: str) -> ArrayGeometry:
    parts = token.split()
    kind = parts[0]
    spacing = float(parts[-1])
    counts = tuple(int(c) for c in parts[1:-1])
    if kind == "linear":
        return ArrayGeometry.ula(counts[0], spacing)
    return ArrayGeometry.upa(counts[0], counts[1], spacing)


def save_fingerprint_db(path, db: FingerprintDatabase) -> None:
    """Persist a database: scene and array headers, then one line per
    ranking entry (bin, tx beam, rx beam, mean power, count)."""
    sc = db.scene
    walls = ",".join(f"{w.axis}:{_fmt(w.offset)}" for w in sc.walls) or "-"
    lines = [
        DB_MAGIC,
        "# scene: " + " ".join(_fmt(v) for v in (
            sc.tx_location[0], sc.tx_location[1], sc.tx_height, sc.rx_height,
            *sc.bounds, sc.bin_size, sc.p_block, sc.p_reflect,
            *sc.reflection_loss_db)) + f" {sc.seed}",
        f"# walls: {walls}",
        f"# tx_array: {_geometry_token(db.info['tx'])}",
        f"# rx_array: {_geometry_token(db.info['rx'])}",
        f"# beams: {db.n_tx_beams} {db.n_rx_beams}",
        f"# snapshots: {db.snapshots}",
        f"# top_k: {db.top_k}",
    ]
    for bin_id in sorted(db.rankings):
        for tx, rx, power, count in db.rankings[bin_id]:
            lines.append(f"{bin_id} {tx} {rx} {_fmt(power)} {count}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_fingerprint_db(path) -> FingerprintDatabase:
    """Rebuild a database written by save_fingerprint_db.

    The stored scene parameters reconstruct the exact SceneModel (floats
    round-trip), so the result interoperates with fingerprint_overhead's
    scene-consistency check.
    """
    text = Path(path).read_text().splitlines()
    if not text or text[0] != DB_MAGIC:
        raise ConfigError(f"{path}: not a recognized fingerprint database")
    headers: dict[str, str] = {}
    body_start = 1
    for i, line in enumerate(text[1:], start=1):
        if not line.startswith("#"):
            body_start = i
            break
        key, _, value = line[1:].partition(":")
        headers[key.strip()] = value.strip()
        body_start = i + 1
    try:
        s = headers["scene"].split()
        walls_text = headers["walls"]
        tx_geom = _parse_geometry(headers["tx_array"])
        rx_geom = _parse_geometry(headers["rx_array"])
        n_tx, n_rx = (int(t) for t in headers["beams"].split())
        snapshots = int(headers["snapshots"])
        top_k = int(headers["top_k"])
    except (KeyError, ValueError, IndexError) as exc:
        raise ConfigError(f"{path}: missing or malformed header") from exc
    walls = ()
    if walls_text != "-":
        walls = tuple(
            Wall(tok.split(":")[0], float(tok.split(":")[1]))
            for tok in walls_text.split(","))
    scene = SceneModel(
        tx_location=(float(s[0]), float(s[1])),
        tx_height=float(s[2]),
        rx_height=float(s[3]),
        bounds=(float(s[4]), float(s[5]), float(s[6]), float(s[7])),
        bin_size=float(s[8]),
        walls=walls,
        p_block=float(s[9]),
        p_reflect=float(s[10]),
        reflection_loss_db=(float(s[11]), float(s[12])),
        seed=int(s[13]),
    )
    rankings: dict[int, list[tuple[int, int, float, int]]] = {}
    for line in text[body_start:]:
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ConfigError(f"{path}: malformed ranking line {line!r}")
        bin_id = int(parts[0])
        rankings.setdefault(bin_id, []).append(
            (int(parts[1]), int(parts[2]), float(parts[3]), int(parts[4])))
    return FingerprintDatabase(
        scene, rankings, n_tx, n_rx, snapshots, top_k,
        info={"tx": tx_geom, "rx": rx_geom,
              "tx_codebook": dft_codebook(tx_geom),
              "rx_codebook": dft_codebook(rx_geom)},
    )
