"""PNG / WAV / manifest I/O."""

from __future__ import annotations

import hashlib
import json
import logging
import wave
from pathlib import Path

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)


def read_png(path) -> np.ndarray:
    """8-bit PNG as float RGB in [0, 1]; alpha is dropped, gray is expanded."""
    with Image.open(path) as im:
        if im.mode in ("RGBA", "LA") or "transparency" in im.info:
            log.warning("%s: dropping alpha channel", path)
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def quantize8(img) -> np.ndarray:
    """[0, 1] floats to uint8 with round-half-up."""
    x = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.floor(x * 255.0 + 0.5).astype(np.uint8)


def write_png(path, img) -> None:
    q = quantize8(img)
    if q.ndim == 3 and q.shape[2] == 1:
        q = np.repeat(q, 3, axis=2)
    if q.ndim == 2:
        q = np.stack([q] * 3, axis=2)
    Image.fromarray(q, "RGB").save(path)


def read_wav(path) -> tuple[np.ndarray, int]:
    """16-bit PCM mono WAV as floats in [-1, 1) (sample / 32768) and the rate."""
    with wave.open(str(path), "rb") as fh:
        if fh.getsampwidth() != 2:
            raise ValueError(f"{path}: only 16-bit PCM is supported")
        if fh.getnchannels() != 1:
            raise ValueError(
                f"{path}: {fh.getnchannels()} channels; convert to mono first "
                "(e.g. average the channels)"
            )
        rate = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0, rate


def write_wav(path, signal, rate: int) -> None:
    s = np.clip(np.asarray(signal, dtype=np.float64), -1.0, 32767.0 / 32768.0)
    pcm = np.floor(s * 32768.0 + 0.5).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(rate))
        fh.writeframes(pcm.tobytes())


def file_digest(*paths) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(Path(p).read_bytes())
    return h.hexdigest()


def array_digest(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def _jsonable(v):
    if isinstance(v, float) and not np.isfinite(v):
        return str(v)
    if isinstance(v, (np.floating, np.integer)):
        return _jsonable(v.item())
    if isinstance(v, tuple):
        return list(v)
    return v


def write_manifest(path, manifest: dict) -> None:
    clean = {k: (_jsonable(v) if not isinstance(v, dict) else {kk: _jsonable(vv) for kk, vv in v.items()})
             for k, v in manifest.items()}
    Path(path).write_text(json.dumps(clean, indent=2, sort_keys=True) + "\n")
