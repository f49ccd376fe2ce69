"""Binary checkpoints and CSV tables.

A state checkpoint is little-endian: magic ``PEA1``, format version (u32,
``1``), ``N1 N2 N3`` (u32), ``L1 L2 L3`` (f64), time (f64), then the
coefficient arrays of ``v1``, ``v2``, ``b`` as interleaved ``(re, im)``
f64 in row-major ``(k1, k2, m)`` order.

Mode sets and interpolation operators use the same magic with format
version ``2`` followed by a 4-byte type tag (``MSET`` or ``IOPR``), the grid
and box header, and a tag-specific payload.
"""
from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .functionals import InterpolationOperator, ModeSet, MultiplierK, build_mode_set
from .spectral import Domain, Grid, SpectralSpace, StateVector, norm

MAGIC = b"PEA1"
STATE_VERSION = 1
TAGGED_VERSION = 2
_HEADER = struct.Struct("<4sI")
_GEOM = struct.Struct("<3I3d")


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint file."""


def _geom_bytes(space: SpectralSpace) -> bytes:
    return _GEOM.pack(*space.shape, *space.domain.lengths)


def _read_geom(buf: bytes, offset: int):
    N1, N2, N3, L1, L2, L3 = _GEOM.unpack_from(buf, offset)
    try:
        space = SpectralSpace(Domain(L1, L2, L3), Grid(N1, N2, N3))
    except ValueError as exc:
        raise CheckpointError(f"invalid geometry in checkpoint: {exc}") from None
    return space, offset + _GEOM.size


def state_to_bytes(U: StateVector, t: float = 0.0) -> bytes:
    body = np.ascontiguousarray(U.coeffs, dtype="<c16").tobytes()
    return _HEADER.pack(MAGIC, STATE_VERSION) + _geom_bytes(U.space) + struct.pack("<d", t) + body


def state_from_bytes(buf: bytes, space: SpectralSpace | None = None) -> tuple[StateVector, float]:
    magic, version = _check_header(buf)
    if version != STATE_VERSION:
        raise CheckpointError(f"expected a state checkpoint (version {STATE_VERSION}), got version {version}")
    sp, off = _read_geom(buf, _HEADER.size)
    (t,) = struct.unpack_from("<d", buf, off)
    off += 8
    n = 3 * sp.size
    if len(buf) != off + 16 * n:
        raise CheckpointError(f"checkpoint body has {len(buf) - off} bytes, expected {16 * n}")
    c = np.frombuffer(buf, dtype="<c16", count=n, offset=off).astype(complex).reshape((3,) + sp.shape)
    if space is not None:
        if space != sp:
            raise CheckpointError(f"checkpoint geometry {sp} does not match {space}")
        sp = space
    return StateVector(sp, c), float(t)


def _check_header(buf: bytes):
    if len(buf) < _HEADER.size:
        raise CheckpointError("file too short for a checkpoint header")
    magic, version = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    return magic, version


def write_checkpoint(path, U: StateVector, t: float = 0.0) -> Path:
    path = Path(path)
    path.write_bytes(state_to_bytes(U, t))
    return path


def read_checkpoint(path, space: SpectralSpace | None = None) -> tuple[StateVector, float]:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    return state_from_bytes(buf, space)


# --- tagged objects -------------------------------------------------------------

def _tagged(tag: bytes, space: SpectralSpace, payload: bytes) -> bytes:
    return _HEADER.pack(MAGIC, TAGGED_VERSION) + tag + _geom_bytes(space) + payload


def _untag(buf: bytes, tag: bytes):
    _, version = _check_header(buf)
    if version != TAGGED_VERSION:
        raise CheckpointError(f"expected a tagged object (version {TAGGED_VERSION}), got version {version}")
    found = buf[_HEADER.size:_HEADER.size + 4]
    if found != tag:
        raise CheckpointError(f"expected tag {tag!r}, found {found!r}")
    return _read_geom(buf, _HEADER.size + 4)


def modeset_to_bytes(modes: ModeSet) -> bytes:
    payload = struct.pack("<I", modes.N) + np.ascontiguousarray(modes.labels, dtype="<i4").tobytes()
    return _tagged(b"MSET", modes.space, payload)


def modeset_from_bytes(buf: bytes) -> ModeSet:
    sp, off = _untag(buf, b"MSET")
    (N,) = struct.unpack_from("<I", buf, off)
    labels = np.frombuffer(buf, dtype="<i4", count=4 * N, offset=off + 4).reshape(N, 4)
    modes = build_mode_set(sp, N)
    if modes.N != N or not np.array_equal(modes.labels, labels):
        raise CheckpointError("stored mode labels do not match the canonical enumeration")
    return modes


def operator_to_bytes(R: InterpolationOperator) -> bytes:
    K = R.multiplier
    payload = struct.pack("<II", R.N, 0 if K is None else 1)
    if K is not None:
        name = K.name.encode()
        payload += struct.pack("<I", len(name)) + name + np.ascontiguousarray(K.symbol, dtype="<f8").tobytes()
    return _tagged(b"IOPR", R.space, payload)


def operator_from_bytes(buf: bytes) -> InterpolationOperator:
    sp, off = _untag(buf, b"IOPR")
    N, has_k = struct.unpack_from("<II", buf, off)
    off += 8
    K = None
    if has_k:
        (ln,) = struct.unpack_from("<I", buf, off)
        name = buf[off + 4:off + 4 + ln].decode()
        off += 4 + ln
        sym = np.frombuffer(buf, dtype="<f8", count=sp.size, offset=off).reshape(sp.shape).copy()
        K = MultiplierK(sp, sym, name)
    return InterpolationOperator(build_mode_set(sp, N), K)


def write_object(path, obj) -> Path:
    path = Path(path)
    if isinstance(obj, ModeSet):
        path.write_bytes(modeset_to_bytes(obj))
    elif isinstance(obj, InterpolationOperator):
        path.write_bytes(operator_to_bytes(obj))
    else:
        raise TypeError(f"cannot serialise {type(obj).__name__}")
    return path


def read_object(path):
    buf = Path(path).read_bytes()
    _check_header(buf)
    tag = buf[_HEADER.size:_HEADER.size + 4]
    if tag == b"MSET":
        return modeset_from_bytes(buf)
    if tag == b"IOPR":
        return operator_from_bytes(buf)
    raise CheckpointError(f"unknown object tag {tag!r}")


# --- CSV ------------------------------------------------------------------------

def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
    return path


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return int(x)
    return x


def write_trajectory(directory, trajectory, prefix: str = "state") -> Path:
    """One checkpoint per sample plus ``index.csv`` with (t, H, W1, W2) norms."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, (t, U) in enumerate(trajectory):
        name = f"{prefix}_{i:05d}.pea"
        write_checkpoint(d / name, U, t)
        rows.append((t, norm(U, "H"), norm(U, "W1"), norm(U, "W2"), name))
    return write_csv(d / "index.csv", ["t", "norm_H", "norm_W1", "norm_W2", "file"], rows)
