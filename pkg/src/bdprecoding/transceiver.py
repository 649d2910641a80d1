"""Uncoded QPSK link: modulation, transmission, receivers and error counting.

Symbols use the unnormalized alphabet ``{+-1 +- 1j}`` so that data vectors
are Gaussian integers and the lattice receiver's rounding is exact in the
absence of noise. Signal blocks have shape ``(..., N_R, L)``: one column per
channel use, optionally with leading batch axes.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .channel import ChannelSet, crandn
from .errors import (DimensionMismatch, LengthMismatch, MissingDecoder,
                     MissingTransform, OddBitCount)
from .precoding import PrecodingSolution, normalization_factor

__all__ = [
    "ALPHABET", "ReceivedVector", "qpsk_modulate", "qpsk_demodulate",
    "slice_qpsk", "random_symbols", "transmit", "svd_receive", "lr_receive",
    "direct_receive", "receive", "count_bit_errors",
]

# Gray map indexed by the two-bit pattern b0 b1
ALPHABET = np.array([1 + 1j, -1 + 1j, 1 - 1j, -1 - 1j])
ERASED_RTOL = 1e-10


class ReceivedVector(NamedTuple):
    samples: np.ndarray
    gamma: np.ndarray


def qpsk_modulate(bits: np.ndarray) -> np.ndarray:
    """Gray-map bit pairs along the last axis: 00, 01, 11, 10 -> +1+j, -1+j, -1-j, +1-j."""
    bits = np.asarray(bits)
    if bits.shape[-1] % 2:
        raise OddBitCount(f"{bits.shape[-1]} bits cannot be split into pairs")
    pairs = bits.reshape(bits.shape[:-1] + (-1, 2)).astype(np.int8)
    return (1 - 2 * pairs[..., 1]) + 1j * (1 - 2 * pairs[..., 0])


def qpsk_demodulate(symbols: np.ndarray) -> np.ndarray:
    """Inverse of :func:`qpsk_modulate` for alphabet points."""
    symbols = np.asarray(symbols)
    b0 = (symbols.imag < 0).astype(np.int8)
    b1 = (symbols.real < 0).astype(np.int8)
    return np.stack([b0, b1], axis=-1).reshape(symbols.shape[:-1] + (-1,))


def slice_qpsk(z: np.ndarray) -> np.ndarray:
    """Nearest alphabet point per entry; ties go to +1. NaN entries stay NaN."""
    z = np.asarray(z, dtype=complex)
    out = np.where(z.real < 0, -1.0, 1.0) + 1j * np.where(z.imag < 0, -1.0, 1.0)
    return np.where(np.isnan(z), np.nan + 0j, out)


def random_symbols(rng: np.random.Generator, n_rx: int, length: int,
                   batch: tuple = ()) -> np.ndarray:
    """Uniform QPSK block of shape ``batch + (n_rx, length)``."""
    bits = rng.integers(0, 2, size=batch + (length, 2 * n_rx))
    return np.swapaxes(qpsk_modulate(bits), -1, -2)


def _as_block(d: np.ndarray) -> np.ndarray:
    d = np.asarray(d)
    return d[:, None] if d.ndim == 1 else d


def transmit(cs: ChannelSet, sol: PrecodingSolution, d: np.ndarray,
             noise_var: float, rng: np.random.Generator = None,
             noise: np.ndarray = None) -> ReceivedVector:
    """Send ``d`` through channel ``cs`` with precoder ``sol``.

    The returned samples are already rescaled by ``sqrt(gamma)``:
    ``y = H P d + sqrt(gamma) n`` with ``n ~ CN(0, noise_var)``. Pass
    unit-variance ``noise`` instead of ``rng`` to reuse one noise draw
    across several precoders.
    """
    single = np.asarray(d).ndim == 1
    d = _as_block(d)
    if sol.assembled.shape[-1] != d.shape[-2] or sol.assembled.shape[-2] != cs.n_tx:
        raise DimensionMismatch("precoder does not match channel/data dimensions")
    p = sol.assembled
    gamma = normalization_factor(p, d, sol.xi)
    clean = cs.combined @ (p @ d)
    if noise is None:
        noise = crandn(rng, clean.shape)
    elif single:
        noise = np.asarray(noise)[:, None]
    samples = clean + np.sqrt(gamma * noise_var)[..., None, :] * noise
    if single:
        return ReceivedVector(samples[:, 0], gamma[0])
    return ReceivedVector(samples, gamma)


def _user_slices(sol: PrecodingSolution):
    start = 0
    for n in sol.user_rx:
        yield slice(start, start + n)
        start += n


def svd_receive(rv: ReceivedVector, sol: PrecodingSolution) -> np.ndarray:
    """Apply ``G_i``, equalize each stream by its gain and slice.

    Streams whose gain is below ``1e-10`` of the strongest stream are
    erased and returned as NaN.
    """
    if sol.decode is None or sol.stream_gain is None:
        raise MissingDecoder(f"{sol.kind} carries no decoding matrices")
    y = _as_block(rv.samples)
    out = np.empty(y.shape, dtype=complex)
    for sl, g, gain in zip(_user_slices(sol), sol.decode, sol.stream_gain):
        z = g @ y[..., sl, :]
        dead = gain <= ERASED_RTOL * np.max(gain, axis=-1, keepdims=True)
        safe = np.where(dead, 1.0, gain)
        z = z / safe[..., :, None]
        z = np.where(dead[..., :, None], np.nan, z)
        out[..., sl, :] = slice_qpsk(z)
    return out[..., 0] if np.ndim(rv.samples) == 1 else out


def _round_gauss(z: np.ndarray) -> np.ndarray:
    return np.rint(z.real) + 1j * np.rint(z.imag)


def lr_receive(rv: ReceivedVector, sol: PrecodingSolution,
               quantizer: str = "coset") -> np.ndarray:
    """Round to the lattice, map back with ``T_i`` and slice.

    ``quantizer="integer"`` rounds every entry to the nearest Gaussian
    integer. ``quantizer="coset"`` rounds to the transformed QPSK lattice
    ``2 Z[j] + T_i^-1 (1 + j)``, whose points are spaced 2 apart like the
    alphabet itself.
    """
    if sol.transforms is None:
        raise MissingTransform(f"{sol.kind} carries no unimodular transforms")
    if quantizer not in ("integer", "coset"):
        raise ValueError(f"unknown quantizer {quantizer!r}")
    y = _as_block(rv.samples)
    out = np.empty(y.shape, dtype=complex)
    for sl, tr in zip(_user_slices(sol), sol.transforms):
        yi = y[..., sl, :]
        t = tr.t
        if quantizer == "integer":
            z = _round_gauss(yi)
        else:
            offset = tr.inverse() @ np.full(t.shape[:-1] + (1,), 1 + 1j)
            z = 2 * _round_gauss((yi - offset) / 2) + offset
        out[..., sl, :] = slice_qpsk(t @ z)
    return out[..., 0] if np.ndim(rv.samples) == 1 else out


def direct_receive(rv: ReceivedVector, sol: PrecodingSolution) -> np.ndarray:
    """Slice the received samples as they are (channel-inversion precoders)."""
    return slice_qpsk(rv.samples)


def receive(rv: ReceivedVector, sol: PrecodingSolution,
            quantizer: str = "coset") -> np.ndarray:
    """Dispatch to the receiver matching the precoder family."""
    if sol.decode is not None:
        return svd_receive(rv, sol)
    if sol.transforms is not None:
        return lr_receive(rv, sol, quantizer)
    return direct_receive(rv, sol)


def count_bit_errors(d: np.ndarray, d_hat: np.ndarray) -> int:
    """Hamming distance between the Gray-demodulated bits of ``d`` and ``d_hat``.

    Erased (NaN) estimates count every bit of the symbol as wrong.
    """
    d, d_hat = np.asarray(d), np.asarray(d_hat)
    if d.shape != d_hat.shape:
        raise LengthMismatch(f"shapes differ: {d.shape} vs {d_hat.shape}")
    erased = np.isnan(d_hat)
    b = qpsk_demodulate(d)
    bh = qpsk_demodulate(np.where(erased, 0j, d_hat))
    wrong = (b != bh).reshape(erased.shape + (2,))
    wrong = wrong | erased[..., None]
    return int(np.sum(wrong))
