"""RIFF/WAVE reading and writing for the formats the toolchain exchanges.

Supports linear PCM at 16 or 24 bits and IEEE float32, any channel count
on the raw layer. The header's sample rate is authoritative: nothing here
resamples or second-guesses it.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .signals import SampledSignal

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE

ENCODINGS = ("pcm16", "pcm24", "float32")


def read_raw(path) -> tuple[np.ndarray, float]:
    """Read a WAV file as a float64 array shaped (n_samples, n_channels).

    Integer PCM is scaled to [-1, 1) full scale; float data is passed
    through. Returns ``(samples, sample_rate)``.
    """
    blob = Path(path).read_bytes()
    if len(blob) < 12 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise ValueError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(blob):
        chunk_id = blob[pos:pos + 4]
        size = struct.unpack_from("<I", blob, pos + 4)[0]
        body = blob[pos + 8:pos + 8 + size]
        if chunk_id == b"fmt ":
            fmt = body
        elif chunk_id == b"data":
            data = body
        pos += 8 + size + (size & 1)   # chunks are word-aligned

    if fmt is None or data is None:
        raise ValueError(f"{path}: missing fmt or data chunk")

    audio_format, n_channels, sample_rate, _, block_align, bits = \
        struct.unpack_from("<HHIIHH", fmt, 0)
    if audio_format == _WAVE_FORMAT_EXTENSIBLE:
        if len(fmt) < 26:
            raise ValueError(f"{path}: truncated extensible fmt chunk")
        audio_format = struct.unpack_from("<H", fmt, 24)[0]

    if n_channels < 1:
        raise ValueError(f"{path}: channel count {n_channels}")
    n_frames = len(data) // block_align if block_align else 0
    data = data[:n_frames * block_align]

    if audio_format == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        samples = np.frombuffer(data, dtype="<f4").astype(np.float64)
    elif audio_format == _WAVE_FORMAT_PCM and bits == 16:
        samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    elif audio_format == _WAVE_FORMAT_PCM and bits == 24:
        raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, 3)
        ints = (raw[:, 0].astype(np.int32)
                | (raw[:, 1].astype(np.int32) << 8)
                | (raw[:, 2].astype(np.int32) << 16))
        ints = np.where(ints >= 1 << 23, ints - (1 << 24), ints)
        samples = ints.astype(np.float64) / float(1 << 23)
    else:
        raise ValueError(
            f"{path}: unsupported format (tag 0x{audio_format:04x}, {bits} bit); "
            f"expected PCM 16/24 or float32")

    return samples.reshape(n_frames, n_channels), float(sample_rate)


def read(path) -> SampledSignal:
    """Read a mono or stereo WAV file as a :class:`SampledSignal`."""
    samples, rate = read_raw(path)
    if samples.shape[1] > 2:
        raise ValueError(
            f"{path}: {samples.shape[1]} channels; use read_raw for multichannel files")
    return SampledSignal(samples, rate)


def _encode(samples: np.ndarray, encoding: str) -> tuple[bytes, int, int]:
    """Return (payload, format_tag, bits_per_sample)."""
    if encoding == "float32":
        return samples.astype("<f4").tobytes(), _WAVE_FORMAT_IEEE_FLOAT, 32
    if encoding == "pcm16":
        clipped = np.clip(samples, -1.0, 32767.0 / 32768.0)
        ints = np.round(clipped * 32768.0).astype("<i2")
        return ints.tobytes(), _WAVE_FORMAT_PCM, 16
    if encoding == "pcm24":
        full = float(1 << 23)
        clipped = np.clip(samples, -1.0, (full - 1) / full)
        ints = np.round(clipped * full).astype(np.int32)
        flat = ints.reshape(-1)
        raw = np.empty((flat.size, 3), dtype=np.uint8)
        raw[:, 0] = flat & 0xFF
        raw[:, 1] = (flat >> 8) & 0xFF
        raw[:, 2] = (flat >> 16) & 0xFF
        return raw.tobytes(), _WAVE_FORMAT_PCM, 24
    raise ValueError(f"unknown encoding {encoding!r}; pick one of {ENCODINGS}")


def write_raw(path, samples: np.ndarray, sample_rate: float,
              encoding: str = "float32") -> None:
    """Write an (n_samples, n_channels) array as a WAV file."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[:, np.newaxis]
    if samples.ndim != 2:
        raise ValueError(f"samples must be 1-D or 2-D, got shape {samples.shape}")
    rate = int(round(sample_rate))
    if rate <= 0:
        raise ValueError(f"sample rate must be positive, got {sample_rate}")

    payload, format_tag, bits = _encode(samples, encoding)
    n_channels = samples.shape[1]
    block_align = n_channels * bits // 8
    byte_rate = rate * block_align

    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, format_tag, n_channels, rate, byte_rate, block_align, bits,
        b"data", len(payload))
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "wb") as fh:
        fh.write(header)
        fh.write(payload)
        if len(payload) & 1:
            fh.write(b"\x00")


def write(path, signal: SampledSignal, encoding: str = "float32") -> None:
    """Write a :class:`SampledSignal` as a WAV file."""
    write_raw(path, signal.data, signal.sample_rate, encoding)
