"""File formats: binary sample stacks, JSON model files and CSV matrices.

Stack files start with a fixed little-endian header

    magic  5 bytes  b"SPTC1"
    version  u16
    n, k1, k2  u32 each
    flags  u16  (bit 0: centered)

followed by ``n * k1 * k2`` little-endian float64 values, sample-major then
row-major.  Model files are JSON documents whose floats are written as
hexadecimal strings (``float.hex``) so a save/load round trip is exact.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import os
import struct
from pathlib import Path

import numpy as np

from .core import SampleStack, SptError
from .model import BandedTensor, SepPlusBandedCov
from .stationary import StationarySymbol

__all__ = [
    "FormatError",
    "STACK_MAGIC",
    "STACK_VERSION",
    "MODEL_SCHEMA",
    "write_stack",
    "read_stack",
    "encode_stack",
    "decode_stack",
    "model_to_dict",
    "model_from_dict",
    "save_model",
    "load_model",
    "write_matrix_csv",
    "read_matrix_csv",
    "import_csv",
    "export_csv",
    "config_hash",
]

STACK_MAGIC = b"SPTC1"
STACK_VERSION = 1
_HEADER = struct.Struct("<5sHIIIH")
FLAG_CENTERED = 1
MODEL_SCHEMA = "sptcov-model/1"


class FormatError(SptError, ValueError):
    """Malformed file; ``offset`` is the byte (or line) position of the problem."""

    def __init__(self, message, offset=None):
        self.offset = offset
        where = f" at byte {offset}" if offset is not None else ""
        super().__init__(f"{message}{where}")


# ---------------------------------------------------------------------------
# sample stacks


def encode_stack(stack: SampleStack) -> bytes:
    n, k1, k2 = stack.data.shape
    flags = FLAG_CENTERED if stack.centered else 0
    header = _HEADER.pack(STACK_MAGIC, STACK_VERSION, n, k1, k2, flags)
    return header + np.ascontiguousarray(stack.data, dtype="<f8").tobytes()


def decode_stack(buf: bytes) -> SampleStack:
    if len(buf) < _HEADER.size:
        raise FormatError(f"truncated header ({len(buf)} of {_HEADER.size} bytes)", len(buf))
    magic, version, n, k1, k2, flags = _HEADER.unpack_from(buf)
    if magic != STACK_MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != STACK_VERSION:
        raise FormatError(f"unsupported version {version}", 5)
    if n < 1 or k1 < 1 or k2 < 1:
        raise FormatError(f"empty dimensions n={n}, k1={k1}, k2={k2}", 7)
    if flags & ~FLAG_CENTERED:
        raise FormatError(f"unknown flag bits {flags:#x}", 19)
    want = n * k1 * k2 * 8
    have = len(buf) - _HEADER.size
    if have != want:
        raise FormatError(f"payload has {have} bytes, header implies {want}", _HEADER.size + min(have, want))
    data = np.frombuffer(buf, dtype="<f8", offset=_HEADER.size).reshape(n, k1, k2).astype(np.float64)
    bad = np.flatnonzero(~np.isfinite(data.ravel()))
    if bad.size:
        raise FormatError("non-finite value in payload", _HEADER.size + 8 * int(bad[0]))
    try:
        return SampleStack(data, centered=bool(flags & FLAG_CENTERED))
    except ValueError as exc:
        raise FormatError(str(exc), 19) from None


def write_stack(path, stack: SampleStack) -> None:
    Path(path).write_bytes(encode_stack(stack))


def read_stack(path) -> SampleStack:
    return decode_stack(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# model files


def _hex(a) -> list:
    return [float(v).hex() for v in np.asarray(a, dtype=np.float64).ravel()]


def _unhex(vals, shape) -> np.ndarray:
    return np.array([float.fromhex(v) for v in vals], dtype=np.float64).reshape(shape)


def config_hash(config: dict | None) -> str | None:
    if config is None:
        return None
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def model_to_dict(model: SepPlusBandedCov, provenance: dict | None = None) -> dict:
    doc = {
        "schema": MODEL_SCHEMA,
        "k1": model.k1,
        "k2": model.k2,
        "d": int(model.d),
        "scale_convention": model.scale_convention,
        "a1": _hex(model.a1),
        "a2": _hex(model.a2),
        "banded": {"kind": model.banded_kind},
        "provenance": dict(provenance or {}),
    }
    b = model.banded
    if isinstance(b, StationarySymbol):
        doc["banded"].update(band=b.band, symbol=_hex(b.s))
    elif isinstance(b, BandedTensor):
        doc["banded"].update(band=b.d, entries=_hex(b.b))
    return doc


def model_from_dict(doc: dict) -> SepPlusBandedCov:
    if doc.get("schema") != MODEL_SCHEMA:
        raise FormatError(f"unsupported model schema {doc.get('schema')!r}")
    try:
        k1, k2 = int(doc["k1"]), int(doc["k2"])
        a1 = _unhex(doc["a1"], (k1, k1))
        a2 = _unhex(doc["a2"], (k2, k2))
        spec = doc["banded"]
        kind = spec["kind"]
        if kind == "stationary":
            banded = StationarySymbol(_unhex(spec["symbol"], (2 * k1 - 1, 2 * k2 - 1)), band=spec.get("band"))
        elif kind == "banded":
            m = 2 * int(spec["band"]) - 1
            banded = BandedTensor(_unhex(spec["entries"], (k1, k2, m, m)))
        elif kind == "none":
            banded = None
        else:
            raise FormatError(f"unknown banded kind {kind!r}")
        return SepPlusBandedCov(
            a1, a2, banded, int(doc["d"]), doc.get("scale_convention", "a2-normalized"), dict(doc.get("provenance", {}))
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"model file is missing or mistypes field {exc}") from None
    except ValueError as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"invalid model content: {exc}") from None


def save_model(path, model: SepPlusBandedCov, provenance: dict | None = None) -> None:
    prov = dict(model.meta.get("provenance", {}))
    prov.update(provenance or {})
    Path(path).write_text(json.dumps(model_to_dict(model, prov), indent=1) + "\n")


def load_model(path) -> SepPlusBandedCov:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg}", exc.pos) from None
    return model_from_dict(doc)


# ---------------------------------------------------------------------------
# CSV matrices: comma separated, '.' decimal point, no header


def write_matrix_csv(path, x) -> None:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("CSV export needs a matrix")
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in x:
        w.writerow([repr(float(v)) for v in row])
    Path(path).write_text(buf.getvalue())


def read_matrix_csv(path) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise FormatError(f"{path}: non-numeric entry on line {lineno}") from None
    if not rows:
        raise FormatError(f"{path}: empty matrix")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise FormatError(f"{path}: ragged rows (widths {sorted(widths)})")
    return np.array(rows)


def import_csv(directory) -> SampleStack:
    """One CSV matrix per sample, taken in sorted file-name order."""
    files = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() == ".csv")
    if not files:
        raise FormatError(f"no .csv files in {directory}")
    mats = [read_matrix_csv(p) for p in files]
    shape = mats[0].shape
    for p, m in zip(files, mats):
        if m.shape != shape:
            raise FormatError(f"{p.name} has shape {m.shape}, expected {shape}")
    return SampleStack(np.stack(mats))


def export_csv(stack: SampleStack, directory, prefix: str = "sample") -> list:
    os.makedirs(directory, exist_ok=True)
    width = max(len(str(stack.n - 1)), 4)
    paths = []
    for i, x in enumerate(stack.data):
        p = Path(directory) / f"{prefix}_{i:0{width}d}.csv"
        write_matrix_csv(p, x)
        paths.append(p)
    return paths
