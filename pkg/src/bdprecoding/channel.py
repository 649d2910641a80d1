"""Multiuser MIMO downlink system model and channel generation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import InvalidCoefficient

__all__ = [
    "SystemConfig", "ChannelSet", "CsiErrorModel", "DimensionalityReport",
    "crandn", "generate_rayleigh", "exclusion_channel", "check_dimensionality",
    "matrix_rank", "correlation_matrix", "psd_sqrt", "apply_csi_error",
]

RANK_RTOL = 1e-10


@dataclass(frozen=True)
class SystemConfig:
    """Antenna layout and power budget of the downlink.

    ``user_rx`` lists the receive antennas of each user; ``xi`` is the
    total average transmit power and ``bits_per_symbol`` the modulation
    order in bits (2 for QPSK).
    """

    n_tx: int
    user_rx: tuple
    xi: float = None  # defaults to n_rx, i.e. unit power per receive antenna
    noise_var: float = 1.0
    bits_per_symbol: int = 2

    def __post_init__(self):
        object.__setattr__(self, "user_rx", tuple(int(n) for n in self.user_rx))
        if self.xi is None:
            object.__setattr__(self, "xi", float(self.n_rx))
        if self.n_tx < 1 or not self.user_rx or min(self.user_rx) < 1:
            raise ValueError("antenna counts must be >= 1")
        if self.n_tx < self.n_rx:
            raise ValueError(f"need n_tx >= n_rx, got {self.n_tx} < {self.n_rx}")
        if self.xi <= 0 or self.noise_var <= 0:
            raise ValueError("xi and noise_var must be positive")
        if self.bits_per_symbol < 1:
            raise ValueError("bits_per_symbol must be >= 1")

    @property
    def n_users(self) -> int:
        return len(self.user_rx)

    @property
    def n_rx(self) -> int:
        return sum(self.user_rx)

    @property
    def offsets(self) -> List[int]:
        """Row offset of each user inside the combined channel."""
        return list(np.concatenate([[0], np.cumsum(self.user_rx)[:-1]]).astype(int))

    def alpha(self, noise_var: Optional[float] = None) -> float:
        """Regularization factor ``N_R * sigma_n^2 / xi``."""
        nv = self.noise_var if noise_var is None else noise_var
        return self.n_rx * nv / self.xi

    def per_user_power(self) -> float:
        """Per-user power budget; the total is split evenly across users."""
        return self.xi / self.n_users

    def with_noise(self, noise_var: float) -> "SystemConfig":
        return SystemConfig(self.n_tx, self.user_rx, self.xi, noise_var,
                            self.bits_per_symbol)


@dataclass(frozen=True)
class ChannelSet:
    """Per-user channels ``H_i`` (``N_i x N_T``) and their row stack ``H``.

    ``combined`` may carry leading batch axes; ``per_user`` then holds views
    with the same batch axes.
    """

    combined: np.ndarray
    user_rx: tuple

    @classmethod
    def from_users(cls, per_user: Sequence[np.ndarray]) -> "ChannelSet":
        per_user = [np.asarray(h, dtype=complex) for h in per_user]
        return cls(np.concatenate(per_user, axis=-2),
                   tuple(h.shape[-2] for h in per_user))

    @classmethod
    def from_combined(cls, h: np.ndarray, user_rx: Sequence[int]) -> "ChannelSet":
        h = np.asarray(h, dtype=complex)
        if h.shape[-2] != sum(user_rx):
            raise ValueError("row count does not match user_rx")
        return cls(h, tuple(int(n) for n in user_rx))

    @property
    def per_user(self) -> List[np.ndarray]:
        out, start = [], 0
        for n in self.user_rx:
            out.append(self.combined[..., start:start + n, :])
            start += n
        return out

    @property
    def n_users(self) -> int:
        return len(self.user_rx)

    @property
    def n_tx(self) -> int:
        return self.combined.shape[-1]

    @property
    def n_rx(self) -> int:
        return self.combined.shape[-2]


@dataclass(frozen=True)
class CsiErrorModel:
    """Imperfect CSI ``H_e = H R_T^{1/2} + E`` with ``E ~ CN(0, sigma_e2)``."""

    sigma_e2: float = 0.0
    corr_r: complex = 0.0
    sqrt_kind: str = "hermitian"  # or "cholesky"

    def __post_init__(self):
        if self.sigma_e2 < 0:
            raise ValueError("sigma_e2 must be >= 0")
        if abs(self.corr_r) > 1:
            raise InvalidCoefficient("|r| must not exceed 1")
        if self.sqrt_kind not in ("hermitian", "cholesky"):
            raise ValueError(f"unknown square root kind {self.sqrt_kind!r}")


def crandn(rng: np.random.Generator, shape, var: float = 1.0) -> np.ndarray:
    """Circularly symmetric complex Gaussian samples with variance ``var``."""
    s = np.sqrt(var / 2)
    return s * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def generate_rayleigh(config: SystemConfig, rng: np.random.Generator,
                      batch: Optional[int] = None) -> ChannelSet:
    """Draw i.i.d. ``CN(0, 1)`` channels for every user."""
    shape = (config.n_rx, config.n_tx)
    if batch is not None:
        shape = (batch,) + shape
    return ChannelSet.from_combined(crandn(rng, shape), config.user_rx)


def exclusion_channel(cs: ChannelSet, i: int) -> np.ndarray:
    """Row stack of every user's channel except user ``i``."""
    if not 0 <= i < cs.n_users:
        raise IndexError(f"user index {i} out of range for {cs.n_users} users")
    blocks = [h for j, h in enumerate(cs.per_user) if j != i]
    if not blocks:
        return np.zeros(cs.combined.shape[:-2] + (0, cs.n_tx), dtype=complex)
    return np.concatenate(blocks, axis=-2)


def matrix_rank(a: np.ndarray, rtol: float = RANK_RTOL) -> int:
    """Numerical rank: singular values below ``rtol * sigma_max`` count as zero."""
    a = np.asarray(a)
    if a.size == 0:
        return 0
    s = np.linalg.svd(a, compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


@dataclass(frozen=True)
class DimensionalityReport:
    ok: bool
    ranks: tuple
    n_tx: int
    offending: tuple = field(default=())

    def __bool__(self) -> bool:
        return self.ok

    def describe(self) -> str:
        if self.ok:
            return "dimensionality constraint satisfied"
        users = ", ".join(str(i) for i in self.offending)
        return (f"n_tx={self.n_tx} does not exceed the interference rank "
                f"for user(s) {users} (ranks {self.ranks})")


def check_dimensionality(cs: ChannelSet) -> DimensionalityReport:
    """Require ``N_T > rank(Hbar_i)`` for every user."""
    if cs.combined.ndim != 2:
        raise ValueError("check_dimensionality expects a single channel draw")
    ranks = tuple(matrix_rank(exclusion_channel(cs, i)) for i in range(cs.n_users))
    bad = tuple(i for i, r in enumerate(ranks) if not cs.n_tx > r)
    return DimensionalityReport(not bad, ranks, cs.n_tx, bad)


def correlation_matrix(n_tx: int, r: complex) -> np.ndarray:
    """Exponential transmit correlation: ``R_ij = r^(j-i)`` above the diagonal."""
    if abs(r) > 1:
        raise InvalidCoefficient("|r| must not exceed 1")
    idx = np.arange(n_tx)
    lag = idx[None, :] - idx[:, None]
    upper = np.power(complex(r), np.abs(lag))
    return np.where(lag >= 0, upper, np.conj(upper))


def psd_sqrt(a: np.ndarray, kind: str = "hermitian") -> np.ndarray:
    """Square root of a Hermitian PSD matrix.

    ``hermitian`` returns the unique Hermitian PSD root ``S`` with ``S S = A``.
    ``cholesky`` returns upper-triangular ``C`` with ``C^H C = A`` so that
    ``H C`` has the same second-order statistics as ``H S``.
    """
    if kind == "cholesky":
        return np.conj(np.linalg.cholesky(a)).T
    w, v = np.linalg.eigh(a)
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ np.conj(v).T


def apply_csi_error(cs: ChannelSet, model: CsiErrorModel,
                    rng: np.random.Generator) -> ChannelSet:
    """Imperfect channel estimate seen by the transmitter."""
    h = cs.combined
    if model.corr_r != 0:
        root = psd_sqrt(correlation_matrix(cs.n_tx, model.corr_r), model.sqrt_kind)
        h = h @ root
    if model.sigma_e2 > 0:
        h = h + crandn(rng, h.shape, model.sigma_e2)
    else:
        h = h.copy()
    return ChannelSet(h, cs.user_rx)
