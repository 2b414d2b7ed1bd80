"""Uniform partitioned convolution for the live render path."""

from __future__ import annotations

import numpy as np

from .errors import BlockSizeError

DEFAULT_BLOCK_SIZE = 48


class PartitionedConvolver:
    """Streams one impulse-response channel at a fixed block size.

    The response is split into uniform partitions of ``block_size`` taps,
    each transformed at twice the block length. Every incoming block costs
    one forward FFT, one multiply-accumulate pass over the partition
    spectra, and one inverse FFT; the first half of each inverse transform
    is the circular wrap and gets discarded.

    Single-caller streaming state machine: construction allocates all
    state, ``process_block`` only reuses it (the NumPy transforms use
    bounded internal scratch; the delay line itself never grows).
    """

    def __init__(self, taps, block_size: int = DEFAULT_BLOCK_SIZE):
        taps = np.asarray(taps, dtype=np.float64)
        if taps.ndim != 1 or taps.size == 0:
            raise ValueError("taps must be a non-empty 1-D array")
        if not np.all(np.isfinite(taps)):
            raise ValueError("taps contain non-finite values")
        block_size = int(block_size)
        if block_size < 1:
            raise BlockSizeError(f"block size must be positive, got {block_size}")

        b = block_size
        n_parts = max(1, -(-taps.size // b))
        padded = np.zeros(n_parts * b)
        padded[:taps.size] = taps

        self.block_size = b
        self.n_partitions = n_parts
        self.n_taps = taps.size
        self._spectra = np.fft.rfft(padded.reshape(n_parts, b), n=2 * b, axis=1)
        self._delay_line = np.zeros((n_parts, b + 1), dtype=np.complex128)
        self._head = 0
        self._in_buf = np.zeros(2 * b)
        self._acc = np.zeros(b + 1, dtype=np.complex128)
        self._prod = np.zeros((n_parts, b + 1), dtype=np.complex128)

    def reset(self) -> None:
        """Clear the streaming state without touching the filter."""
        self._delay_line[:] = 0.0
        self._in_buf[:] = 0.0
        self._head = 0

    def process_block(self, block, out: np.ndarray | None = None,
                      accumulate: bool = False) -> np.ndarray:
        """Push one input block, get exactly one output block.

        With ``out`` given the result is written (or, with ``accumulate``,
        added) there instead of into a fresh array.
        """
        block = np.asarray(block, dtype=np.float64)
        b = self.block_size
        if block.shape != (b,):
            raise BlockSizeError(
                f"expected a block of {b} samples, got shape {block.shape}")

        self._in_buf[:b] = self._in_buf[b:]
        self._in_buf[b:] = block
        self._delay_line[self._head] = np.fft.rfft(self._in_buf)

        # Partition p needs the input spectrum from p blocks ago. Walking
        # back from the head splits the ring into two contiguous runs.
        k = self._head + 1
        np.multiply(self._spectra[:k], self._delay_line[self._head::-1],
                    out=self._prod[:k])
        if k < self.n_partitions:
            np.multiply(self._spectra[k:], self._delay_line[:self._head:-1],
                        out=self._prod[k:])
        np.sum(self._prod, axis=0, out=self._acc)

        self._head = (self._head + 1) % self.n_partitions
        fresh = np.fft.irfft(self._acc, 2 * b)[b:]
        if out is None:
            return fresh
        if accumulate:
            np.add(out, fresh, out=out)
        else:
            out[:] = fresh
        return out
