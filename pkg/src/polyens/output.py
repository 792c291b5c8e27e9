"""Atomic file output and the spectra file formats."""

from __future__ import annotations

import hashlib
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

__all__ = [
    "canonical_hash",
    "atomic_write_text",
    "atomic_write_bytes",
    "write_spectra_csv",
    "read_spectra_csv",
    "write_spectra_binary",
    "read_spectra_binary",
]


def canonical_hash(obj) -> str:
    """sha256 of the canonical (sorted-key, compact) JSON encoding of ``obj``."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def atomic_write_bytes(path, data: bytes) -> None:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode())


def _header(config_hash: str, seed: int | None) -> str:
    lines = [f"# config-hash {config_hash}"]
    if seed is not None:
        lines.append(f"# seed {int(seed)}")
    return "\n".join(lines) + "\n"


def write_spectra_csv(spectra, config_hash: str, seed: int | None = None) -> str:
    """One row per trial, preceded by ``# config-hash`` and ``# seed`` lines."""
    S = np.atleast_2d(np.asarray(spectra, dtype=float))
    buf = io.StringIO()
    buf.write(_header(config_hash, seed))
    buf.write(",".join(f"x{j + 1}" for j in range(S.shape[1])) + "\n")
    for row in S:
        buf.write(",".join(repr(float(v)) for v in row) + "\n")
    return buf.getvalue()


def read_spectra_csv(text: str):
    """Inverse of :func:`write_spectra_csv`: ``(spectra, config_hash, seed)``."""
    meta = {}
    rows = []
    lines = text.splitlines()
    body = [ln for ln in lines if ln and not ln.startswith("#")]
    for ln in lines:
        if ln.startswith("#"):
            key, _, value = ln[1:].strip().partition(" ")
            meta[key] = value.strip()
    for ln in body[1:]:
        rows.append([float(v) for v in ln.split(",")])
    seed = meta.get("seed")
    return np.array(rows), meta.get("config-hash"), None if seed is None else int(seed)


_MAGIC = b"POLYENS-SPECTRA 1\n"


def write_spectra_binary(spectra, config_hash: str, seed: int | None = None) -> bytes:
    """Column-major little-endian float64 block behind a JSON header line."""
    S = np.atleast_2d(np.asarray(spectra, dtype="<f8"))
    header = {"config_hash": config_hash, "seed": seed, "trials": S.shape[0],
              "columns": S.shape[1]}
    head = json.dumps(header, sort_keys=True).encode() + b"\n"
    return _MAGIC + head + np.asfortranarray(S).tobytes(order="F")


def read_spectra_binary(data: bytes):
    if not data.startswith(_MAGIC):
        raise ValueError("not a spectra file")
    rest = data[len(_MAGIC):]
    head, _, body = rest.partition(b"\n")
    meta = json.loads(head)
    S = np.frombuffer(body, dtype="<f8").reshape((meta["trials"], meta["columns"]), order="F")
    return S.copy(), meta["config_hash"], meta["seed"]
