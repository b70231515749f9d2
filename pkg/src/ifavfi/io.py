"""PNG frames, the EMAV weights container, FLO1 raw flow files, and flow colouring.

EMAV layout (little-endian)::

    b"EMAV" | u32 version | u16 len + utf-8 variant | u32 C, N1, N2, window
    u32 count | per parameter: u16 len + utf-8 name, 4 x u32 shape, f32 payload

Shapes with fewer than four axes are padded with trailing ones.

FLO1 layout: b"FLO1" | u32 width | u32 height | (u, v) f32 pairs, row-major.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .backbone import ModelConfig
from .synthesis import FrameInterpolator

WEIGHTS_MAGIC = b"EMAV"
WEIGHTS_VERSION = 1
FLOW_MAGIC = b"FLO1"


class WeightsFormatError(ValueError):
    pass


def read_png(path: str | Path) -> torch.Tensor:
    """8-bit RGB file -> (1, 3, H, W) float32 in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0).contiguous()


def quantize(image: torch.Tensor) -> np.ndarray:
    """(1, 3, H, W) or (3, H, W) floats -> (H, W, 3) uint8, round half away from zero."""
    arr = image.detach().cpu().numpy().astype(np.float64)
    if arr.ndim == 4:
        arr = arr[0]
    arr = np.clip(arr, 0.0, 1.0) * 255.0
    return np.floor(arr + 0.5).astype(np.uint8).transpose(1, 2, 0)


def write_png(path: str | Path, image: torch.Tensor | np.ndarray) -> None:
    arr = image if isinstance(image, np.ndarray) else quantize(image)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def _shape4(shape) -> tuple[int, int, int, int]:
    shape = tuple(int(s) for s in shape)
    if len(shape) > 4:
        raise WeightsFormatError(f"cannot store {len(shape)}-D tensor")
    return shape + (1,) * (4 - len(shape))


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def save_weights(model: FrameInterpolator, path: str | Path) -> None:
    cfg = model.cfg
    params = list(model.named_parameters())
    chunks = [
        WEIGHTS_MAGIC,
        struct.pack("<I", WEIGHTS_VERSION),
        _pack_str(cfg.variant),
        struct.pack("<4I", cfg.C, cfg.N1, cfg.N2, cfg.window_size),
        struct.pack("<I", len(params)),
    ]
    for name, p in params:
        chunks.append(_pack_str(name))
        chunks.append(struct.pack("<4I", *_shape4(p.shape)))
        chunks.append(p.detach().cpu().numpy().astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise WeightsFormatError(
                f"truncated weights file: need {n} bytes at offset {self.pos}, "
                f"only {len(self.data) - self.pos} left"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")


def read_weights(path: str | Path) -> tuple[ModelConfig, list[tuple[str, np.ndarray]]]:
    """Parse a weights file into its config and ordered (name, 4-D array) list."""
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != WEIGHTS_MAGIC:
        raise WeightsFormatError("not an EMAV weights file (bad magic)")
    (version,) = r.unpack("<I")
    if version != WEIGHTS_VERSION:
        raise WeightsFormatError(f"unsupported weights version {version}")
    variant = r.string()
    C, N1, N2, window = r.unpack("<4I")
    cfg = ModelConfig(C=C, N1=N1, N2=N2, window_size=window, variant=variant)
    (count,) = r.unpack("<I")
    entries = []
    for _ in range(count):
        name = r.string()
        shape = r.unpack("<4I")
        n = int(np.prod(shape))
        payload = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape)
        entries.append((name, payload))
    return cfg, entries


def load_weights(path: str | Path, model: FrameInterpolator | None = None) -> FrameInterpolator:
    """Load into ``model`` (checked against its config), or build a fresh one."""
    cfg, entries = read_weights(path)
    if model is None:
        model = FrameInterpolator(cfg, seed=None)
    elif model.cfg != cfg:
        expected = dict(model.named_parameters())
        for name, arr in entries:
            if name not in expected or _shape4(expected[name].shape) != arr.shape:
                raise WeightsFormatError(f"config mismatch ({cfg.variant} vs {model.cfg.variant}) at parameter {name}")
        raise WeightsFormatError(f"config mismatch: file {cfg} vs model {model.cfg}")
    params = list(model.named_parameters())
    if len(params) != len(entries):
        raise WeightsFormatError(f"parameter count mismatch: file {len(entries)} vs model {len(params)}")
    with torch.no_grad():
        for (name, p), (fname, arr) in zip(params, entries):
            if name != fname or _shape4(p.shape) != arr.shape:
                raise WeightsFormatError(
                    f"parameter mismatch at {name}: file has {fname} {arr.shape}, model expects {_shape4(p.shape)}"
                )
            p.copy_(torch.from_numpy(arr.astype(np.float32)).reshape(p.shape))
    return model


def write_flow(path: str | Path, flow: torch.Tensor | np.ndarray) -> None:
    """(2, H, W) or (1, 2, H, W) flow -> FLO1 file."""
    arr = flow.detach().cpu().numpy() if isinstance(flow, torch.Tensor) else np.asarray(flow)
    if arr.ndim == 4:
        arr = arr[0]
    _, h, w = arr.shape
    body = np.ascontiguousarray(arr.transpose(1, 2, 0)).astype("<f4").tobytes()
    Path(path).write_bytes(FLOW_MAGIC + struct.pack("<2I", w, h) + body)


def read_flow(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != FLOW_MAGIC:
        raise ValueError(f"{path}: not a FLO1 file")
    w, h = struct.unpack("<2I", data[4:12])
    arr = np.frombuffer(data[12:], dtype="<f4")
    if arr.size != 2 * h * w:
        raise ValueError(f"{path}: expected {2 * h * w} floats, found {arr.size}")
    return arr.reshape(h, w, 2).transpose(2, 0, 1).astype(np.float32)


def flow_to_color(flow: np.ndarray, percentile: float = 99.0) -> np.ndarray:
    """HSV wheel: hue = direction, saturation = magnitude / percentile; zero flow is white."""
    flow = np.asarray(flow, dtype=np.float64)
    u, v = flow[0], flow[1]
    mag = np.hypot(u, v)
    scale = np.percentile(mag, percentile)
    sat = np.clip(mag / scale, 0.0, 1.0) if scale > 0 else np.zeros_like(mag)
    hue = (np.arctan2(-v, u) % (2 * np.pi)) / (2 * np.pi)
    hsv = np.stack([hue * 255.0, sat * 255.0, np.full_like(mag, 255.0)], axis=-1)
    hsv = np.floor(hsv + 0.5).clip(0, 255).astype(np.uint8)
    return np.asarray(Image.fromarray(hsv, mode="HSV").convert("RGB"))
