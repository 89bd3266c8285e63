"""Binary checkpoint/dataset formats, key=value configs and MNIST IDX ingestion.

Checkpoint ("SSSM")::

    b"SSSM" | u32 version | u32 header_len | header JSON | tensor payloads | u32 crc32

The JSON header holds ``kind``, the config echo, RNG state, free-form
metadata and a tensor table of ``(name, dtype, shape, offset, nbytes)``.
Payloads are little-endian and contiguous in table order.

Dataset ("SDN1")::

    b"SDN1" | u32 version | u64 count | u64 length |
    f64 tau | f64 v_th | f64 mean | f64 std | i64 seed |
    f32 inputs[count*length] | f32 targets[count*length] | u32 crc32

All integers little-endian. The CRC covers every preceding byte.
"""

from __future__ import annotations

import gzip
import json
import os
import struct
import zlib
from collections import OrderedDict
from pathlib import Path

import numpy as np
import torch

CKPT_MAGIC = b"SSSM"
CKPT_VERSION = 1
DATA_MAGIC = b"SDN1"
DATA_VERSION = 1
DATA_ENV = "SPIKINGSSM_DATA"

_DATA_HEADER = struct.Struct("<4sIQQddddq")


class FormatError(Exception):
    """Malformed, truncated or incompatible file."""


def _le(arr: np.ndarray) -> np.ndarray:
    return arr.astype(arr.dtype.newbyteorder("<"), copy=False)


def save_checkpoint(path, tensors: dict, kind: str, config: dict | None = None,
                    rng_state=None, meta: dict | None = None) -> None:
    table = []
    payloads = []
    offset = 0
    for name, value in tensors.items():
        arr = value.detach().cpu().numpy() if torch.is_tensor(value) else np.asarray(value)
        arr = _le(arr).copy(order="C")
        raw = arr.tobytes()
        table.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                      "offset": offset, "nbytes": len(raw)})
        payloads.append(raw)
        offset += len(raw)
    header = {"kind": kind, "config": config or {}, "rng_state": rng_state,
              "meta": meta or {}, "tensors": table}
    hbytes = json.dumps(header, sort_keys=True, default=_json_default).encode()
    body = CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(hbytes)) + hbytes + b"".join(payloads)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o)}")


def _check_crc(data: bytes) -> bytes:
    if len(data) < 8:
        raise FormatError("file truncated")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise FormatError("checksum mismatch (file corrupt or truncated)")
    return body


def load_checkpoint(path) -> tuple[OrderedDict, dict]:
    """Returns ``(tensors, header)``; tensors are torch tensors in table order."""
    data = Path(path).read_bytes()
    if data[:4] != CKPT_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {CKPT_MAGIC!r}")
    body = _check_crc(data)
    version, hlen = struct.unpack("<II", body[4:12])
    if version != CKPT_VERSION:
        raise FormatError(f"checkpoint version {version} unsupported (expected {CKPT_VERSION})")
    header = json.loads(body[12 : 12 + hlen])
    base = 12 + hlen
    tensors = OrderedDict()
    for entry in header["tensors"]:
        lo = base + entry["offset"]
        raw = body[lo : lo + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise FormatError(f"tensor {entry['name']!r} truncated")
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(tuple(entry["shape"]))
        tensors[entry["name"]] = torch.from_numpy(arr.astype(arr.dtype.newbyteorder("="), copy=True))
    return tensors, header


def save_dataset(path, dataset) -> None:
    m = dataset.meta
    count, length = dataset.inputs.shape
    head = _DATA_HEADER.pack(DATA_MAGIC, DATA_VERSION, count, length, float(m["tau"]),
                             float(m["v_th"]), float(m["mean"]), float(m["std"]), int(m["seed"]))
    body = (head + _le(np.ascontiguousarray(dataset.inputs, dtype=np.float32)).tobytes()
            + _le(np.ascontiguousarray(dataset.targets, dtype=np.float32)).tobytes())
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def load_dataset(path):
    from .sdn_training import SdnDataset

    data = Path(path).read_bytes()
    if data[:4] != DATA_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {DATA_MAGIC!r}")
    body = _check_crc(data)
    if len(body) < _DATA_HEADER.size:
        raise FormatError("dataset header truncated")
    _, version, count, length, tau, v_th, mean, std, seed = _DATA_HEADER.unpack_from(body)
    if version != DATA_VERSION:
        raise FormatError(f"dataset version {version} unsupported (expected {DATA_VERSION})")
    n = count * length
    expected = _DATA_HEADER.size + 8 * n
    if len(body) != expected:
        raise FormatError(f"dataset payload size {len(body)} != expected {expected}")
    arr = np.frombuffer(body, dtype="<f4", offset=_DATA_HEADER.size)
    inputs = arr[:n].reshape(count, length).astype(np.float32)
    targets = arr[n:].reshape(count, length).astype(np.float32)
    meta = {"tau": tau, "v_th": v_th, "mean": mean, "std": std, "seed": seed,
            "count": count, "length": length}
    return SdnDataset(inputs, targets, meta)


def dataset_header(path) -> dict:
    with open(path, "rb") as fh:
        head = fh.read(_DATA_HEADER.size)
    if len(head) < _DATA_HEADER.size or head[:4] != DATA_MAGIC:
        raise FormatError("not an SDN1 dataset")
    _, version, count, length, tau, v_th, mean, std, seed = _DATA_HEADER.unpack(head)
    return {"version": version, "count": count, "length": length, "tau": tau,
            "v_th": v_th, "mean": mean, "std": std, "seed": seed}


# ---- key=value configs ---------------------------------------------------

def _bool(v: str) -> bool:
    lv = v.strip().lower()
    if lv in ("1", "true", "yes", "on"):
        return True
    if lv in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _choice(*options):
    def parse(v: str) -> str:
        v = v.strip().lower()
        aliases = {"bn": "batch", "ln": "layer"}
        v = aliases.get(v, v)
        if v not in options:
            raise ValueError(f"{v!r} not in {options}")
        return v
    return parse


def _ranged(kind, lo=None, hi=None, lo_open=False):
    def parse(v: str):
        x = kind(v)
        if lo is not None and (x < lo or (lo_open and x == lo)):
            raise ValueError(f"{x} below allowed minimum {lo}")
        if hi is not None and x > hi:
            raise ValueError(f"{x} above allowed maximum {hi}")
        return x
    return parse


CONFIG_SCHEMA = {
    "depth": _ranged(int, 1),
    "H": _ranged(int, 1),
    "N": _ranged(int, 2),
    "norm": _choice("batch", "layer"),
    "pnorm": _bool,
    "dropout": _ranged(float, 0.0, 0.99),
    "lr": _ranged(float, 0.0, lo_open=True),
    "batch": _ranged(int, 1),
    "epochs": _ranged(int, 1),
    "wd": _ranged(float, 0.0),
    "delta_min": _ranged(float, 0.0, lo_open=True),
    "delta_max": _ranged(float, 0.0, lo_open=True),
    "tau": _ranged(float, 0.0, 1.0),
    "v_th": _ranged(float, 0.0, lo_open=True),
    "learn_threshold": _bool,
    "alpha": _ranged(float, 0.0, lo_open=True),
    "mode": _choice("bptt", "bptt_detached", "sltt", "sdn"),
    "seed": int,
    "train_count": _ranged(int, 1),
    "test_count": _ranged(int, 1),
    "permute": _bool,
    "permute_seed": int,
}

CONFIG_DEFAULTS = {
    "depth": 2, "H": 64, "N": 64, "norm": "layer", "pnorm": False, "dropout": 0.1,
    "lr": 0.01, "batch": 50, "epochs": 10, "wd": 0.01, "delta_min": 0.001,
    "delta_max": 0.1, "tau": 0.2, "v_th": 1.0, "learn_threshold": True, "alpha": 1.0,
    "mode": "sdn", "seed": 0, "permute": False, "permute_seed": 0,
}


def parse_config(text: str, overrides: dict | None = None) -> dict:
    """Parse ``key = value`` lines (``#`` comments); overrides win. Unknown keys raise."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value")
        k, v = (p.strip() for p in line.split("=", 1))
        raw[k] = v
    raw.update({k: str(v) for k, v in (overrides or {}).items() if v is not None})
    cfg = dict(CONFIG_DEFAULTS)
    for k, v in raw.items():
        if k not in CONFIG_SCHEMA:
            raise ValueError(f"unknown config key {k!r}")
        try:
            cfg[k] = CONFIG_SCHEMA[k](v)
        except ValueError as exc:
            raise ValueError(f"config key {k!r}: {exc}") from None
    if cfg["delta_min"] >= cfg["delta_max"]:
        raise ValueError("delta_min must be below delta_max")
    return cfg


def format_config(cfg: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.items())


# ---- MNIST IDX -----------------------------------------------------------

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801
_IDX_DTYPES = {0x08: np.uint8, 0x09: np.int8, 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


def _open(path):
    path = str(path)
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def read_idx(path) -> np.ndarray:
    with _open(path) as fh:
        data = fh.read()
    if len(data) < 4 or data[0] != 0 or data[1] != 0:
        raise FormatError(f"{path}: bad IDX magic")
    code, ndim = data[2], data[3]
    if code not in _IDX_DTYPES:
        raise FormatError(f"{path}: unknown IDX element type 0x{code:02x}")
    if len(data) < 4 + 4 * ndim:
        raise FormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", data[4 : 4 + 4 * ndim])
    dtype = np.dtype(_IDX_DTYPES[code])
    n = int(np.prod(dims)) if dims else 0
    payload = data[4 + 4 * ndim :]
    if len(payload) != n * dtype.itemsize:
        raise FormatError(f"{path}: payload holds {len(payload)} bytes, header implies {n * dtype.itemsize}")
    return np.frombuffer(payload, dtype=dtype).reshape(dims)


def write_idx(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    codes = {np.dtype(np.uint8): 0x08, np.dtype(np.int8): 0x09}
    if arr.dtype not in codes:
        raise ValueError("only uint8/int8 arrays are written")
    head = bytes([0, 0, codes[arr.dtype], arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(head + arr.tobytes())


_SPLITS = {"train": "train", "test": "t10k"}


def data_dir(path=None) -> Path:
    return Path(path or os.environ.get(DATA_ENV) or "data/mnist")


def _find(directory: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz"):
        if (directory / name).exists():
            return directory / name
    raise FileNotFoundError(f"{stem}[.gz] not found in {directory}")


def load_mnist(directory=None, split: str = "train", permute_seed: int | None = None,
               limit: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Sequential MNIST: (n, 784) float32 pixels in [0, 1] and int64 labels.

    With ``permute_seed`` a fixed pixel permutation drawn from that seed is
    applied to every image (psMNIST).
    """
    if split not in _SPLITS:
        raise ValueError("split must be 'train' or 'test'")
    d = data_dir(directory)
    prefix = _SPLITS[split]
    images = read_idx(_find(d, f"{prefix}-images-idx3-ubyte"))
    labels = read_idx(_find(d, f"{prefix}-labels-idx1-ubyte"))
    if images.ndim != 3 or labels.ndim != 1 or images.shape[0] != labels.shape[0]:
        raise FormatError(f"inconsistent MNIST shapes {images.shape} / {labels.shape}")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    seqs = images.reshape(images.shape[0], -1).astype(np.float32) / 255.0
    if permute_seed is not None:
        perm = np.random.default_rng(permute_seed).permutation(seqs.shape[1])
        seqs = seqs[:, perm]
    return seqs, labels.astype(np.int64)
