"""Block-diagonalization family and lattice-reduction-aided precoders.

Every builder here works on a single channel draw and, where it is cheap to
do so, on a stack of draws with leading batch axes. Lattice reduction is
inherently per matrix and is looped over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from .channel import ChannelSet, SystemConfig, exclusion_channel
from .errors import (DimensionMismatch, EmptyNullSpace, SingularEffectiveChannel,
                     UnsupportedPrecoder, ZeroSignal)
from .matkernel import (UnimodularTransform, clll_reduce, herm, qr_thin,
                        regularized_pinv, svd_full)

__all__ = [
    "KINDS", "SVD_KINDS", "LR_KINDS", "PrecodingSolution", "ResidualReport",
    "SecondFilter", "bd_first", "rbd_first", "sgmi_first", "gzi_first",
    "water_filling", "svd_second", "lr_zf_second", "lr_mmse_second",
    "assemble", "normalization_factor", "residual_report", "build_precoder",
]

SVD_KINDS = ("BD", "BD-WF", "RBD", "S-GMI")
LR_KINDS = ("LR-S-GMI-ZF", "LR-S-GMI-MMSE", "LR-GZI-ZF", "LR-GZI-MMSE")
KINDS = SVD_KINDS + ("GZI-ZF",) + LR_KINDS

ALPHA_FLOOR = 1e-12
NULL_RTOL = 1e-10
COND_LIMIT = 1e12


@dataclass
class PrecodingSolution:
    """Two-stage precoder ``P_i = P_i^a P_i^b`` for every user.

    ``stream_gain`` holds the per-stream amplitude seen after the decoding
    matrix (singular value times loading amplitude) and is only set for the
    SVD-receiver family, together with ``decode``. ``transforms`` is only set
    for the lattice-reduction-aided kinds.
    """

    kind: str
    first: List[np.ndarray]
    second: List[np.ndarray]
    assembled: np.ndarray
    m_i: List[int]
    xi: float
    alpha: float = 0.0
    decode: Optional[List[np.ndarray]] = None
    stream_gain: Optional[List[np.ndarray]] = None
    transforms: Optional[List[UnimodularTransform]] = None

    @property
    def user_rx(self) -> tuple:
        return tuple(p.shape[-1] for p in self.second)


class ResidualReport(NamedTuple):
    per_user_mui: List[float]
    gram_deviation: List[float]


class SecondFilter(NamedTuple):
    p_b: np.ndarray
    g: np.ndarray
    sigma: np.ndarray
    power: np.ndarray


# ---------------------------------------------------------------------------
# First-stage filters
# ---------------------------------------------------------------------------

def bd_first(hbar: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the null space of ``hbar``.

    The numerical rank uses ``1e-10 * sigma_max``. For a stack of matrices
    all members must share the same rank.
    """
    hbar = np.asarray(hbar, dtype=complex)
    n_tx = hbar.shape[-1]
    if hbar.shape[-2] == 0:
        return np.broadcast_to(np.eye(n_tx, dtype=complex),
                               hbar.shape[:-2] + (n_tx, n_tx)).copy()
    u, s, v = svd_full(hbar)
    smax = s[..., :1]
    ranks = np.sum(s > NULL_RTOL * smax, axis=-1)
    rank = int(np.max(ranks))
    if np.any(ranks != rank):
        raise EmptyNullSpace("interference ranks differ across the batch")
    if rank >= n_tx:
        raise EmptyNullSpace("interference channel has full column rank")
    return v[..., :, rank:]


def rbd_first(hbar: np.ndarray, alpha: float) -> np.ndarray:
    """Regularized first filter ``Vbar (Sbar^T Sbar + alpha I)^(-1/2)``."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    hbar = np.asarray(hbar, dtype=complex)
    n_tx = hbar.shape[-1]
    if hbar.shape[-2] == 0:
        return np.broadcast_to(np.eye(n_tx) / np.sqrt(alpha),
                               hbar.shape[:-2] + (n_tx, n_tx)).astype(complex)
    _, s, v = svd_full(hbar)
    sq = np.zeros(s.shape[:-1] + (n_tx,))
    sq[..., :s.shape[-1]] = s ** 2
    return v * (1.0 / np.sqrt(sq + alpha))[..., None, :]


def _inversion_first(h_inv: np.ndarray, user_rx: Sequence[int]) -> List[np.ndarray]:
    out, start = [], 0
    for n in user_rx:
        out.append(qr_thin(h_inv[..., :, start:start + n]).q)
        start += n
    return out


def sgmi_first(cs: ChannelSet, alpha: float) -> List[np.ndarray]:
    """One common MMSE inversion of ``H``, then a thin QR per user block."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return _inversion_first(regularized_pinv(cs.combined, alpha), cs.user_rx)


def gzi_first(cs: ChannelSet) -> List[np.ndarray]:
    """Zero-forcing counterpart of :func:`sgmi_first`; exact BD null spaces."""
    return _inversion_first(regularized_pinv(cs.combined, 0.0), cs.user_rx)


# ---------------------------------------------------------------------------
# Second-stage filters
# ---------------------------------------------------------------------------

def water_filling(sigma: np.ndarray, budget: float, noise_var: float) -> np.ndarray:
    """Water-filling powers ``p_l = max(0, mu - noise_var / sigma_l^2)``.

    ``mu`` is found exactly from the active set, so ``sum(p) == budget``
    up to rounding. Works on the last axis of ``sigma``.
    """
    sigma = np.asarray(sigma, dtype=float)
    with np.errstate(divide="ignore"):
        inv = np.where(sigma > 0, noise_var / np.maximum(sigma, 1e-300) ** 2, np.inf)
    order = np.argsort(inv, axis=-1)
    inv_sorted = np.take_along_axis(inv, order, axis=-1)
    n = sigma.shape[-1]
    k = np.arange(1, n + 1)
    finite = np.where(np.isfinite(inv_sorted), inv_sorted, 0.0)
    mu_k = (budget + np.cumsum(finite, axis=-1)) / k
    active = (mu_k > inv_sorted)
    n_active = np.sum(active, axis=-1, keepdims=True)
    mu = np.take_along_axis(mu_k, np.maximum(n_active - 1, 0), axis=-1)
    p = np.clip(mu - inv, 0.0, None)
    return p


def svd_second(h_eff: np.ndarray, kind: str = "RBD", loading: str = "NPL",
               budget: float = 1.0, noise_var: float = 1.0) -> SecondFilter:
    """SVD-based second filter and decoding matrix ``G = U^H``.

    The stream count is the number of rows of ``h_eff``; ``p_b`` keeps the
    matching leading right singular vectors. Water-filling (``loading="WF"``)
    is only offered for BD.
    """
    if kind not in ("BD", "RBD", "S-GMI"):
        raise UnsupportedPrecoder(kind)
    if loading not in ("NPL", "WF"):
        raise ValueError(f"unknown loading {loading!r}")
    if loading == "WF" and kind != "BD":
        raise UnsupportedPrecoder("water-filling is implemented for BD only")
    u, s, v = svd_full(h_eff)
    n_streams = h_eff.shape[-2]
    p_b = v[..., :, :n_streams]
    if loading == "WF":
        power = water_filling(s, budget, noise_var)
    else:
        power = np.ones_like(s)
    p_b = p_b * np.sqrt(power)[..., None, :]
    return SecondFilter(p_b, herm(u), s, power)


def _check_invertible(h: np.ndarray) -> None:
    cond = np.linalg.cond(h)
    if np.any(~np.isfinite(cond)) or np.any(cond > COND_LIMIT):
        raise SingularEffectiveChannel("effective channel is singular")


def _reduce_stack(mats: np.ndarray, delta: float):
    """CLLL on each matrix of a stack; returns reduced stack and transform."""
    batch = mats.shape[:-2]
    flat = mats.reshape((-1,) + mats.shape[-2:])
    reduced = np.empty_like(flat)
    n = flat.shape[-2]
    t_re = np.empty((flat.shape[0], n, n), dtype=np.int64)
    t_im = np.empty_like(t_re)
    for j, m in enumerate(flat):
        r, t = clll_reduce(m, delta)
        reduced[j], t_re[j], t_im[j] = r, t.re, t.im
    shape = batch + (n, n)
    return (reduced.reshape(mats.shape),
            UnimodularTransform(t_re.reshape(shape), t_im.reshape(shape)))


def lr_zf_second(h_eff: np.ndarray, delta: float = 0.75):
    """Zero-forcing inverse of the reduced effective channel.

    With ``h~ = T h_eff`` the filter is ``h~^H (h~ h~^H)^-1`` and
    ``h_eff @ p_b == T^-1``.
    """
    h_eff = np.asarray(h_eff, dtype=complex)
    _check_invertible(h_eff)
    reduced, t = _reduce_stack(h_eff, delta)
    return regularized_pinv(reduced, 0.0), t


def lr_mmse_second(h_eff: np.ndarray, alpha: float, delta: float = 0.75):
    """MMSE filter designed on the reduced extended channel ``[h_eff, sqrt(a) I]``.

    Returns the first ``M_i`` rows of the right inverse of the reduced
    extended channel, and its unimodular transform.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    h_eff = np.asarray(h_eff, dtype=complex)
    n_i, m_i = h_eff.shape[-2:]
    eye = np.broadcast_to(np.sqrt(alpha) * np.eye(n_i), h_eff.shape[:-2] + (n_i, n_i))
    ext = np.concatenate([h_eff, eye], axis=-1)
    reduced, t = _reduce_stack(ext, delta)
    full = regularized_pinv(reduced, 0.0)
    return full[..., :m_i, :], t


# ---------------------------------------------------------------------------
# Assembly and normalization
# ---------------------------------------------------------------------------

def assemble(first: Sequence[np.ndarray], second: Sequence[np.ndarray]) -> np.ndarray:
    """``[P_1^a ... P_K^a] @ blockdiag(P_1^b ... P_K^b)``."""
    if len(first) != len(second):
        raise DimensionMismatch("first and second filter lists differ in length")
    cols = []
    for i, (pa, pb) in enumerate(zip(first, second)):
        if pa.shape[-1] != pb.shape[-2]:
            raise DimensionMismatch(
                f"user {i}: P^a has {pa.shape[-1]} columns, P^b has {pb.shape[-2]} rows")
        cols.append(pa @ pb)
    return np.concatenate(cols, axis=-1)


def normalization_factor(p: np.ndarray, d: np.ndarray, xi: float):
    """Instantaneous power scaling ``gamma = ||P d||^2 / xi``.

    ``d`` is either one symbol vector or a ``(..., N_R, L)`` block of column
    vectors, in which case one factor per column is returned.
    """
    d = np.asarray(d)
    s = p @ d
    if d.ndim == 1:
        gamma = float(np.vdot(s, s).real) / xi
    else:
        gamma = np.sum(np.abs(s) ** 2, axis=-2) / xi
    if np.any(np.asarray(gamma) <= 0):
        raise ZeroSignal("precoded signal has zero energy")
    return gamma


def residual_report(cs: ChannelSet, sol: PrecodingSolution) -> ResidualReport:
    """Residual multiuser interference ``||Hbar_i P_i^a||_F`` per user.

    For RBD also reports ``||J J^H - I||_F`` with ``J = Hbar_i P_i^a``.
    Single draws only.
    """
    mui, dev = [], []
    for i in range(cs.n_users):
        hbar = exclusion_channel(cs, i)
        j = hbar @ sol.first[i]
        mui.append(float(np.linalg.norm(j)) if j.size else 0.0)
        if sol.kind == "RBD" and j.size:
            dev.append(float(np.linalg.norm(j @ herm(j) - np.eye(j.shape[0]))))
    return ResidualReport(mui, dev)


# ---------------------------------------------------------------------------
# Full constructions
# ---------------------------------------------------------------------------

def build_precoder(kind: str, cs: ChannelSet, cfg: SystemConfig,
                   delta: float = 0.75) -> PrecodingSolution:
    """Build a complete precoder of the given ``kind`` for channel ``cs``.

    ``cfg.noise_var`` sets the regularization ``alpha`` (floored at 1e-12)
    and the water-filling noise level.
    """
    if kind not in KINDS:
        raise UnsupportedPrecoder(kind)
    alpha = max(cfg.alpha(), ALPHA_FLOOR)
    per_user = cs.per_user
    K = cs.n_users

    if kind in ("BD", "BD-WF", "RBD"):
        if kind == "RBD":
            first = [rbd_first(exclusion_channel(cs, i), alpha) for i in range(K)]
        else:
            first = [bd_first(exclusion_channel(cs, i)) for i in range(K)]
    elif kind in ("S-GMI", "LR-S-GMI-ZF", "LR-S-GMI-MMSE"):
        first = sgmi_first(cs, alpha)
    else:
        first = gzi_first(cs)

    second, decode, gains, transforms = [], None, None, None
    h_eff = [h @ pa for h, pa in zip(per_user, first)]

    if kind in SVD_KINDS:
        decode, gains = [], []
        svd_kind = "BD" if kind == "BD-WF" else kind
        loading = "WF" if kind == "BD-WF" else "NPL"
        for he in h_eff:
            f = svd_second(he, svd_kind, loading, cfg.per_user_power(), cfg.noise_var)
            second.append(f.p_b)
            decode.append(f.g)
            gains.append(f.sigma * np.sqrt(f.power))
    elif kind == "GZI-ZF":
        for he in h_eff:
            _check_invertible(he)
            second.append(np.linalg.inv(he))
    else:
        transforms = []
        for he in h_eff:
            if kind.endswith("MMSE"):
                p_b, t = lr_mmse_second(he, alpha, delta)
            else:
                p_b, t = lr_zf_second(he, delta)
            second.append(p_b)
            transforms.append(t)

    return PrecodingSolution(
        kind=kind, first=first, second=second, assembled=assemble(first, second),
        m_i=[pa.shape[-1] for pa in first], xi=cfg.xi, alpha=alpha,
        decode=decode, stream_gain=gains, transforms=transforms)
