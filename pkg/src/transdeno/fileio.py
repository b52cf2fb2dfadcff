"""Tensor files, parameter checkpoints, and key=value config files.

Tensor file layout (all integers little-endian):

    8 bytes   magic b"GSTENSR1"
    u32       ndim
    u32 * ndim  dims
    u8        dtype code (1 = float32, 2 = float64)
    payload   row-major values, little-endian

Checkpoint layout:

    8 bytes   magic b"GSCKPT\\x00\\x00"
    u32       format version (1)
    u32       header length, then UTF-8 key=value lines echoing the config
    u32       record count
    records   sorted by path: u32 path length, UTF-8 path, then a tensor body
              (ndim, dims, dtype code, payload as above, without magic)
"""
from __future__ import annotations

import io
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .groupfc import DeGroFc, GroupFc
from .pipeline import TransDenoConfig, TransDenoParams

__all__ = [
    "FormatError",
    "ConfigError",
    "TENSOR_MAGIC",
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
    "atomic_write",
    "encode_tensor",
    "decode_tensor",
    "write_tensor",
    "read_tensor",
    "encode_checkpoint",
    "decode_checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "parse_kv",
    "format_kv",
]

TENSOR_MAGIC = b"GSTENSR1"
CHECKPOINT_MAGIC = b"GSCKPT\x00\x00"
CHECKPOINT_VERSION = 1

_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODE_OF = {"float32": 1, "float64": 2}


class FormatError(ValueError):
    """A file is truncated, corrupt, or of an unsupported version."""


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str = "<config>"):
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + message)
        self.line = line


def atomic_write(path, data: bytes) -> None:
    """Write ``data`` to ``path`` via a temp file and rename, so readers never see a partial file."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated data: need {n} bytes for {what} at offset {self.pos}, "
                              f"only {len(self.buf) - self.pos} left")
        out = bytes(self.buf[self.pos:self.pos + n])
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def done(self) -> bool:
        return self.pos == len(self.buf)


def _tensor_body(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype.name not in _CODE_OF:
        raise ValueError(f"only float32/float64 tensors are supported, got {arr.dtype}")
    out = io.BytesIO()
    out.write(struct.pack("<I", arr.ndim))
    for d in arr.shape:
        out.write(struct.pack("<I", d))
    out.write(struct.pack("<B", _CODE_OF[arr.dtype.name]))
    out.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())
    return out.getvalue()


def _read_tensor_body(r: _Reader) -> np.ndarray:
    ndim = r.u32("ndim")
    if ndim > 32:
        raise FormatError(f"implausible ndim {ndim}")
    dims = tuple(r.u32("dims") for _ in range(ndim))
    code = r.take(1, "dtype code")[0]
    if code not in _DTYPE_CODES:
        raise FormatError(f"unknown dtype code {code}")
    dt = _DTYPE_CODES[code]
    n = int(np.prod(dims, dtype=np.int64))
    payload = r.take(n * dt.itemsize, "payload")
    arr = np.frombuffer(payload, dtype=dt).reshape(dims)
    return arr.astype(dt.newbyteorder("="))


def encode_tensor(arr: np.ndarray) -> bytes:
    return TENSOR_MAGIC + _tensor_body(arr)


def decode_tensor(data: bytes) -> np.ndarray:
    r = _Reader(data)
    if r.take(8, "magic") != TENSOR_MAGIC:
        raise FormatError("not a tensor file (bad magic)")
    arr = _read_tensor_body(r)
    if not r.done():
        raise FormatError(f"{len(data) - r.pos} trailing bytes after payload")
    return arr


def write_tensor(path, arr: np.ndarray) -> None:
    atomic_write(path, encode_tensor(arr))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


# -- key=value config ---------------------------------------------------------

def parse_kv(text: str, schema: dict | None = None, source: str = "<config>",
             required=()) -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment.

    ``schema`` maps known keys to converters; unknown keys are rejected when
    a schema is given.  Errors carry the offending line number.
    """
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected key=value, got {raw.strip()!r}", lineno, source)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", lineno, source)
        if key in out:
            raise ConfigError(f"duplicate key {key!r}", lineno, source)
        if schema is not None:
            if key not in schema:
                raise ConfigError(f"unknown key {key!r}", lineno, source)
            try:
                value = schema[key](value)
            except ValueError as e:
                raise ConfigError(f"bad value for {key}: {e}", lineno, source) from None
        out[key] = value
    missing = [k for k in required if k not in out]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}", None, source)
    return out


def format_kv(d: dict) -> str:
    def fmt(v):
        if isinstance(v, (tuple, list)):
            return ",".join(str(x) for x in v)
        if isinstance(v, bool):
            return "true" if v else "false"
        return str(v)

    return "".join(f"{k}={fmt(v)}\n" for k, v in d.items())


def parse_bool(v: str) -> bool:
    v = v.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def parse_int_list(v: str) -> tuple:
    try:
        return tuple(int(x) for x in v.split(",") if x.strip())
    except ValueError:
        raise ValueError(f"not a comma-separated integer list: {v!r}") from None


MODEL_KEYS = {
    "H": int,
    "W": int,
    "C": int,
    "reduction": int,
    "group_counts": parse_int_list,
    "bilinear_convention": str,
    "transposition": parse_bool,
    "dtype": str,
}


def config_to_kv(cfg: TransDenoConfig) -> dict:
    return {k: getattr(cfg, k) for k in MODEL_KEYS}


# -- checkpoints --------------------------------------------------------------

def encode_checkpoint(p: TransDenoParams) -> bytes:
    header = format_kv(config_to_kv(p.config)).encode()
    out = io.BytesIO()
    out.write(CHECKPOINT_MAGIC)
    out.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
    out.write(header)
    arrays = p.named_arrays()
    out.write(struct.pack("<I", len(arrays)))
    for path in sorted(arrays):
        name = path.encode()
        out.write(struct.pack("<I", len(name)))
        out.write(name)
        out.write(_tensor_body(arrays[path]))
    return out.getvalue()


def _build_degrofc(prefix: str, cfg: TransDenoConfig, rec: dict) -> DeGroFc:
    def get(name):
        key = prefix + name
        if key not in rec:
            raise FormatError(f"checkpoint is missing parameter {key!r}")
        return rec.pop(key)

    branches = []
    cw = get("coeff.weight")
    cb = get("coeff.bias")
    for n in cfg.group_counts:
        branches.append(GroupFc(get(f"branch[{n}].weight"), get(f"branch[{n}].bias")))
    return DeGroFc(cfg.group_counts, cw, cb, branches, cfg.bilinear_convention)


def decode_checkpoint(data: bytes) -> TransDenoParams:
    r = _Reader(data)
    if r.take(8, "magic") != CHECKPOINT_MAGIC:
        raise FormatError("not a checkpoint (bad magic)")
    version = r.u32("version")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version} (this build reads {CHECKPOINT_VERSION})")
    hlen = r.u32("header length")
    try:
        header = r.take(hlen, "header").decode()
        cfg = TransDenoConfig(**parse_kv(header, MODEL_KEYS, "<checkpoint header>", required=MODEL_KEYS))
    except (UnicodeDecodeError, ValueError) as e:
        raise FormatError(f"bad checkpoint header: {e}") from None
    n = r.u32("record count")
    rec = {}
    prev = None
    for _ in range(n):
        plen = r.u32("path length")
        try:
            path = r.take(plen, "path").decode()
        except UnicodeDecodeError:
            raise FormatError("parameter path is not UTF-8") from None
        if prev is not None and path <= prev:
            raise FormatError(f"records out of order at {path!r}")
        prev = path
        arr = _read_tensor_body(r)
        if arr.dtype != np.dtype(cfg.dtype):
            raise FormatError(f"{path} is {arr.dtype}, header says {cfg.dtype}")
        rec[path] = arr
    if not r.done():
        raise FormatError("trailing bytes after the last record")
    try:
        stage1 = _build_degrofc("stage1.", cfg, rec)
        stage2 = _build_degrofc("stage2.", cfg, rec)
    except FormatError:
        raise
    except ValueError as e:  # shape checks in the dataclasses
        raise FormatError(f"inconsistent parameter shapes: {e}") from None
    if rec:
        raise FormatError(f"unexpected parameters: {sorted(rec)}")
    p = TransDenoParams(cfg, stage1, stage2)
    if (stage1.in_len, stage1.out_len) != (cfg.attended_len, cfg.hidden_len) or \
            (stage2.in_len, stage2.out_len) != (cfg.hidden_len, cfg.attended_len) or \
            stage1.coeff_weight.shape[1] != cfg.attended_len or stage2.coeff_weight.shape[1] != cfg.hidden_len:
        raise FormatError("parameter shapes do not match the config header")
    return p


def save_checkpoint(path, p: TransDenoParams) -> None:
    atomic_write(path, encode_checkpoint(p))


def load_checkpoint(path) -> TransDenoParams:
    return decode_checkpoint(Path(path).read_bytes())
