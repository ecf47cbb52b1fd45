"""Binary file formats for trials, checkpoints and frames, plus map text and config files.

All binary formats are little-endian.

Trial file::

    b"EEGT" | u32 version | u32 n_trials | u32 n_channels | u32 n_samples
    | f32 sample_rate | f32 interval_start | f32 interval_end
    | n_trials x u8 label
    | n_channels x (u32 byte length + UTF-8 channel label)
    | f32 samples, trial-major, channel-major, time-minor

Checkpoint::

    b"EEGM" | u32 version | u8 tag length + ASCII method tag
    | u32 JSON length + UTF-8 JSON metadata
    | u32 n_tensors
    | n_tensors x (u16 name length + UTF-8 name | u8 dtype code (4 = f32, 8 = f64)
                   | u8 ndim | ndim x u32 dim | raw values)

Frame sequence::

    b"FRMS" | u32 n_frames | u32 height | u32 width | u8 pixels frame-major, row-major
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

from .convnet import ConvNetConfig, ConvNetModel
from .errors import (
    BadMagicError,
    FileFormatError,
    InvalidInputError,
    TruncatedFileError,
    VersionMismatchError,
)
from .fbcsp import CspBandModel, FbcspModel
from .perturbation import CorrelationMap
from .rlda import RldaModel
from .signal import DecodingInterval, TrialSet

__all__ = [
    "TRIAL_MAGIC",
    "MODEL_MAGIC",
    "FRAME_MAGIC",
    "FORMAT_VERSION",
    "encode_trialset",
    "decode_trialset",
    "write_trialset",
    "read_trialset",
    "encode_checkpoint",
    "decode_checkpoint",
    "save_model",
    "load_model",
    "model_method",
    "encode_frames",
    "decode_frames",
    "write_frames",
    "read_frames",
    "format_map",
    "parse_map_text",
    "export_map",
    "parse_map",
    "read_config",
]

TRIAL_MAGIC = b"EEGT"
MODEL_MAGIC = b"EEGM"
FRAME_MAGIC = b"FRMS"
FORMAT_VERSION = 1

_TRIAL_HEADER = struct.Struct("<4sIIIIfff")
_FRAME_HEADER = struct.Struct("<4sIII")


class _Reader:
    """Cursor over a byte buffer that raises a truncation error on overrun."""

    def __init__(self, buf: bytes, what: str):
        self.buf = memoryview(buf)
        self.pos = 0
        self.what = what

    def take(self, n: int) -> memoryview:
        if n < 0 or self.pos + n > len(self.buf):
            raise TruncatedFileError(
                f"{self.what} is truncated: needed {n} bytes at offset {self.pos}, "
                f"only {len(self.buf) - self.pos} left"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def finish(self):
        if self.pos != len(self.buf):
            raise FileFormatError(
                f"{self.what} has {len(self.buf) - self.pos} unexpected trailing bytes"
            )


def _check_magic(buf: bytes, magic: bytes, what: str):
    if len(buf) < len(magic):
        raise TruncatedFileError(f"{what} is too short to hold a header")
    if bytes(buf[: len(magic)]) != magic:
        raise BadMagicError(
            f"not a {what}: expected magic {magic!r}, found {bytes(buf[:len(magic)])!r}"
        )


# ---------------------------------------------------------------------------
# trial files


def encode_trialset(trials: TrialSet) -> bytes:
    parts = [
        _TRIAL_HEADER.pack(
            TRIAL_MAGIC,
            FORMAT_VERSION,
            trials.n_trials,
            trials.n_channels,
            trials.n_samples,
            trials.sample_rate,
            trials.interval.start_s,
            trials.interval.end_s,
        ),
        trials.labels.astype(np.uint8).tobytes(),
    ]
    for label in trials.channel_labels:
        raw = label.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
    parts.append(np.ascontiguousarray(trials.data, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_trialset(buf: bytes) -> TrialSet:
    what = "trial file"
    _check_magic(buf, TRIAL_MAGIC, what)
    r = _Reader(buf, what)
    _, version, n_trials, n_channels, n_samples, rate, start, end = r.unpack(
        _TRIAL_HEADER.format
    )
    if version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"trial file version {version} is not supported (expected {FORMAT_VERSION})"
        )
    labels = np.frombuffer(r.take(n_trials), dtype=np.uint8).astype(np.int64)
    channel_labels = []
    for _ in range(n_channels):
        (length,) = r.unpack("<I")
        try:
            channel_labels.append(bytes(r.take(length)).decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise FileFormatError("channel label is not valid UTF-8") from exc
    count = n_trials * n_channels * n_samples
    data = np.frombuffer(r.take(4 * count), dtype="<f4").astype(np.float32)
    r.finish()
    try:
        return TrialSet(
            data=data.reshape(n_trials, n_channels, n_samples),
            labels=labels,
            sample_rate=float(rate),
            interval=DecodingInterval(float(start), float(end)),
            channel_labels=tuple(channel_labels),
        )
    except InvalidInputError as exc:
        raise FileFormatError(f"trial file content is invalid: {exc}") from exc


def write_trialset(trials: TrialSet, path) -> None:
    Path(path).write_bytes(encode_trialset(trials))


def read_trialset(path) -> TrialSet:
    return decode_trialset(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# checkpoints

_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


def encode_checkpoint(method: str, meta: dict, tensors: dict) -> bytes:
    tag = method.encode("ascii")
    meta_raw = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [
        MODEL_MAGIC,
        struct.pack("<IB", FORMAT_VERSION, len(tag)),
        tag,
        struct.pack("<I", len(meta_raw)),
        meta_raw,
        struct.pack("<I", len(tensors)),
    ]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        code = 4 if arr.dtype == np.float32 else 8
        name_raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(name_raw)) + name_raw)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return b"".join(parts)


def decode_checkpoint(buf: bytes) -> tuple[str, dict, dict]:
    what = "model checkpoint"
    _check_magic(buf, MODEL_MAGIC, what)
    r = _Reader(buf, what)
    r.take(4)
    version, tag_len = r.unpack("<IB")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"checkpoint version {version} is not supported (expected {FORMAT_VERSION})"
        )
    method = bytes(r.take(tag_len)).decode("ascii", errors="replace")
    (meta_len,) = r.unpack("<I")
    try:
        meta = json.loads(bytes(r.take(meta_len)).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FileFormatError("checkpoint metadata is not valid JSON") from exc
    (n_tensors,) = r.unpack("<I")
    tensors = {}
    for _ in range(n_tensors):
        (name_len,) = r.unpack("<H")
        name = bytes(r.take(name_len)).decode("utf-8")
        code, ndim = r.unpack("<BB")
        if code not in _DTYPES:
            raise FileFormatError(f"unknown dtype code {code} for tensor {name!r}")
        shape = r.unpack(f"<{ndim}I")
        dtype = _DTYPES[code]
        count = math.prod(shape)
        arr = np.frombuffer(r.take(dtype.itemsize * count), dtype=dtype)
        tensors[name] = arr.astype(dtype.newbyteorder("="), copy=True).reshape(shape)
    r.finish()
    return method, meta, tensors


def _convnet_to_parts(model: ConvNetModel):
    cfg = model.cfg
    meta = {
        "n_channels": cfg.n_channels,
        "n_samples": cfg.n_samples,
        "n_classes": cfg.n_classes,
        "n_filters": list(cfg.n_filters),
        "kernel_length": cfg.kernel_length,
        "pool_length": cfg.pool_length,
        "pool_stride": cfg.pool_stride,
        "dropout": cfg.dropout,
        "seed": cfg.seed,
        "buffers": sorted(model.buffers),
    }
    tensors = {k: v.astype(np.float32) for k, v in {**model.params, **model.buffers}.items()}
    return meta, tensors


def _convnet_from_parts(meta, tensors) -> ConvNetModel:
    cfg_keys = ("n_channels", "n_samples", "n_classes", "n_filters", "kernel_length",
                "pool_length", "pool_stride", "dropout", "seed")
    cfg = ConvNetConfig(**{k: meta[k] for k in cfg_keys})
    buffer_names = set(meta["buffers"])
    params = {k: v for k, v in tensors.items() if k not in buffer_names}
    buffers = {k: v for k, v in tensors.items() if k in buffer_names}
    return ConvNetModel(cfg, params, buffers, mode="eval")


def _rlda_to_parts(model: RldaModel, prefix=""):
    meta = {prefix + "bias": model.bias, prefix + "gamma": model.gamma,
            prefix + "feature_spec": model.feature_spec}
    return meta, {prefix + "weights": model.weights}


def _rlda_from_parts(meta, tensors, prefix="") -> RldaModel:
    return RldaModel(
        weights=tensors[prefix + "weights"],
        bias=meta[prefix + "bias"],
        gamma=meta[prefix + "gamma"],
        feature_spec=meta[prefix + "feature_spec"],
    )


def _fbcsp_to_parts(model: FbcspModel):
    meta, tensors = _rlda_to_parts(model.lda, prefix="lda.")
    meta.update(
        n_pairs=model.n_pairs,
        sample_rate=model.sample_rate,
        bands=[list(b.band) for b in model.bands],
    )
    for i, b in enumerate(model.bands):
        tensors[f"band{i:02d}.filters"] = b.filters
        tensors[f"band{i:02d}.eigenvalues"] = b.eigenvalues
    return meta, tensors


def _fbcsp_from_parts(meta, tensors) -> FbcspModel:
    bands = tuple(
        CspBandModel(
            band=(float(lo), float(hi)),
            filters=tensors[f"band{i:02d}.filters"],
            eigenvalues=tensors[f"band{i:02d}.eigenvalues"],
        )
        for i, (lo, hi) in enumerate(meta["bands"])
    )
    return FbcspModel(
        bands=bands,
        lda=_rlda_from_parts(meta, tensors, prefix="lda."),
        n_pairs=int(meta["n_pairs"]),
        sample_rate=float(meta["sample_rate"]),
    )


def model_method(model) -> str:
    if isinstance(model, ConvNetModel):
        return "convnet"
    if isinstance(model, RldaModel):
        return "rlda"
    if isinstance(model, FbcspModel):
        return "fbcsp"
    raise InvalidInputError(f"cannot serialize object of type {type(model).__name__}")


def save_model(model, path) -> None:
    """Write a checkpoint. ConvNet tensors are stored as f32, linear models as f64."""
    method = model_method(model)
    meta, tensors = {
        "convnet": _convnet_to_parts,
        "rlda": _rlda_to_parts,
        "fbcsp": _fbcsp_to_parts,
    }[method](model)
    Path(path).write_bytes(encode_checkpoint(method, meta, tensors))


def load_model(path):
    method, meta, tensors = decode_checkpoint(Path(path).read_bytes())
    builders = {
        "convnet": _convnet_from_parts,
        "rlda": _rlda_from_parts,
        "fbcsp": _fbcsp_from_parts,
    }
    if method not in builders:
        raise FileFormatError(f"unknown method tag {method!r} in checkpoint")
    try:
        return builders[method](meta, tensors)
    except (KeyError, TypeError, InvalidInputError) as exc:
        raise FileFormatError(f"inconsistent {method} checkpoint: {exc}") from exc


# ---------------------------------------------------------------------------
# frame sequences


def encode_frames(frames) -> bytes:
    arr = np.asarray(frames)
    if arr.ndim != 3:
        raise InvalidInputError("frames must have shape (n_frames, height, width)")
    if arr.dtype != np.uint8:
        if arr.size and (arr.min() < 0 or arr.max() > 255 or np.any(arr != np.round(arr))):
            raise InvalidInputError("frame pixels must be integers in 0..255")
        arr = arr.astype(np.uint8)
    return _FRAME_HEADER.pack(FRAME_MAGIC, *arr.shape) + np.ascontiguousarray(arr).tobytes()


def decode_frames(buf: bytes) -> np.ndarray:
    what = "frame file"
    _check_magic(buf, FRAME_MAGIC, what)
    r = _Reader(buf, what)
    _, n, h, w = r.unpack(_FRAME_HEADER.format)
    pixels = np.frombuffer(r.take(n * h * w), dtype=np.uint8).copy()
    r.finish()
    return pixels.reshape(n, h, w)


def write_frames(frames, path) -> None:
    Path(path).write_bytes(encode_frames(frames))


def read_frames(path) -> np.ndarray:
    return decode_frames(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# correlation map text


def _fmt(v: float) -> str:
    return "NA" if math.isnan(v) else f"{v:.6g}"


def format_map(cmap: CorrelationMap) -> str:
    """Headered text: one header line, then a ``class k`` block per class.

    Each block row is ``channel_label,v_0,...,v_{F-1}``; missing cells are ``NA``.
    """
    n_classes, n_channels, n_features = cmap.values.shape
    labels = tuple(cmap.channel_labels) or tuple(f"E{i + 1}" for i in range(n_channels))
    if len(labels) != n_channels:
        raise InvalidInputError("channel label count does not match the map")
    for lab in labels:
        if any(ch in lab for ch in ",\n\r") or not lab:
            raise InvalidInputError(f"channel label {lab!r} cannot be written to a map file")
    lines = [
        f"# axis_unit={cmap.axis_unit} axis_step={cmap.axis_step!r} n_classes={n_classes} "
        f"n_channels={n_channels} n_features={n_features} "
        f"n_iterations={cmap.n_iterations} sigma={cmap.sigma!r}"
    ]
    if n_channels:
        for c in range(n_classes):
            lines.append(f"class {c}")
            for ch in range(n_channels):
                row = ",".join(_fmt(v) for v in cmap.values[c, ch])
                lines.append(f"{labels[ch]},{row}" if n_features else labels[ch])
    return "\n".join(lines) + "\n"


def parse_map_text(text: str) -> CorrelationMap:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# "):
        raise FileFormatError("map file lacks its header line")
    try:
        header = dict(item.split("=", 1) for item in lines[0][2:].split())
        n_classes = int(header["n_classes"])
        n_channels = int(header["n_channels"])
        n_features = int(header["n_features"])
        axis_unit = header["axis_unit"]
        axis_step = float(header["axis_step"])
        n_iter = int(header["n_iterations"])
        sigma = float(header["sigma"])
    except (KeyError, ValueError) as exc:
        raise FileFormatError(f"malformed map header: {lines[0]!r}") from exc
    body = lines[1:]
    expected = n_classes * (n_channels + 1) if n_channels else 0
    if len(body) != expected:
        raise FileFormatError(f"map body has {len(body)} lines, expected {expected}")
    values = np.full((n_classes, n_channels, n_features), np.nan)
    labels = []
    pos = 0
    for c in range(n_classes if n_channels else 0):
        if body[pos] != f"class {c}":
            raise FileFormatError(f"expected 'class {c}' block, found {body[pos]!r}")
        pos += 1
        for ch in range(n_channels):
            cells = body[pos].split(",")
            pos += 1
            if len(cells) != n_features + 1:
                raise FileFormatError(f"row has {len(cells) - 1} values, expected {n_features}")
            if c == 0:
                labels.append(cells[0])
            try:
                values[c, ch] = [np.nan if v == "NA" else float(v) for v in cells[1:]]
            except ValueError as exc:
                raise FileFormatError(f"non-numeric map cell in row {cells[0]!r}") from exc
    return CorrelationMap(
        values=values,
        axis_unit=axis_unit,
        axis_step=axis_step,
        n_iterations=n_iter,
        sigma=sigma,
        channel_labels=tuple(labels),
    )


def export_map(cmap: CorrelationMap, path) -> None:
    Path(path).write_text(format_map(cmap), encoding="utf-8")


def parse_map(path) -> CorrelationMap:
    return parse_map_text(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# config files


def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment. Keys use ``_`` or ``-``."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FileFormatError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise FileFormatError(f"{path}:{lineno}: empty key")
        out[key.replace("-", "_")] = value
    return out
