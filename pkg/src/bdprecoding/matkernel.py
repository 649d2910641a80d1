"""Complex matrix kernels: thin QR, SVD, regularized inversion and complex LLL.

All functions accept a single matrix. ``qr_thin``, ``svd_full`` and
``regularized_pinv`` also broadcast over leading batch axes, which the
Monte Carlo harness relies on to build many precoders at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import (DependentRows, NoConvergence, RankDeficient,
                     SingularGram)

__all__ = [
    "QrFactors", "SvdFactors", "UnimodularTransform", "FlopCounter",
    "herm", "qr_thin", "svd_full", "regularized_pinv", "clll_reduce",
    "gram_schmidt", "is_clll_reduced", "orthogonality_defect",
]

RANK_TOL = 1e-12
GRAM_COND_LIMIT = 1e12


def herm(a: np.ndarray) -> np.ndarray:
    """Conjugate transpose over the last two axes."""
    return np.conj(np.swapaxes(a, -1, -2))


class QrFactors(NamedTuple):
    q: np.ndarray
    r: np.ndarray


class SvdFactors(NamedTuple):
    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray


def qr_thin(a: np.ndarray) -> QrFactors:
    """Thin QR factorization with a real, non-negative diagonal of ``r``.

    Parameters
    ----------
    a : np.ndarray
        Complex array of shape ``(..., m, n)`` with ``m >= n``.

    Returns
    -------
    QrFactors
        ``q`` of shape ``(..., m, n)`` with orthonormal columns and upper
        triangular ``r`` of shape ``(..., n, n)``.

    Raises
    ------
    RankDeficient
        If any ``|r_kk| < 1e-12 * ||a||_F``.
    """
    a = np.asarray(a, dtype=complex)
    m, n = a.shape[-2:]
    if m < n:
        raise ValueError(f"qr_thin needs rows >= cols, got {m}x{n}")
    q, r = np.linalg.qr(a, mode="reduced")
    diag = np.diagonal(r, axis1=-2, axis2=-1)
    mag = np.abs(diag)
    scale = np.linalg.norm(a, axis=(-2, -1))
    if np.any(mag < RANK_TOL * scale[..., None]) or np.any(scale == 0):
        raise RankDeficient("QR: matrix does not have full column rank")
    phase = diag / mag
    q = q * phase[..., None, :]
    r = np.conj(phase)[..., :, None] * r
    # the rotated diagonal is real up to rounding; make it exactly so
    idx = np.arange(n)
    r[..., idx, idx] = mag
    return QrFactors(q, r)


def svd_full(a: np.ndarray) -> SvdFactors:
    """Full SVD ``a = u @ diag(sigma) @ v^H`` with descending ``sigma``.

    ``u`` and ``v`` are square unitary. ``sigma`` has ``min(m, n)`` entries.
    """
    a = np.asarray(a, dtype=complex)
    if not np.all(np.isfinite(a)):
        raise ValueError("svd_full: non-finite entries")
    try:
        u, s, vh = np.linalg.svd(a, full_matrices=True)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(str(exc)) from exc
    return SvdFactors(u, s, herm(vh))


def regularized_pinv(h: np.ndarray, alpha: float) -> np.ndarray:
    """Regularized right inverse ``H^H (H H^H + alpha I)^-1``.

    With ``alpha = 0`` this is the zero-forcing pseudo-inverse, which requires
    ``H H^H`` to be invertible.
    """
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    h = np.asarray(h, dtype=complex)
    nr = h.shape[-2]
    gram = h @ herm(h)
    if alpha > 0:
        gram = gram + alpha * np.eye(nr)
    else:
        cond = np.linalg.cond(gram)
        if np.any(~np.isfinite(cond)) or np.any(cond > GRAM_COND_LIMIT):
            raise SingularGram("H H^H is singular")
    # gram is Hermitian, so H^H gram^-1 = (gram^-1 H)^H
    return herm(np.linalg.solve(gram, h))


# ---------------------------------------------------------------------------
# Complex LLL
# ---------------------------------------------------------------------------

@dataclass
class FlopCounter:
    """Accumulates floating point operation counts.

    Weights: complex add 2, complex multiply 6, complex division 11,
    rounding 1 per real component, real operations 1.
    """

    total: float = 0.0

    def cadd(self, k: int = 1) -> None:
        self.total += 2 * k

    def cmul(self, k: int = 1) -> None:
        self.total += 6 * k

    def cdiv(self, k: int = 1) -> None:
        self.total += 11 * k

    def rnd(self, k: int = 1) -> None:
        self.total += 2 * k

    def real(self, k: int = 1) -> None:
        self.total += k


@dataclass(frozen=True)
class UnimodularTransform:
    """Square Gaussian-integer matrix with ``|det t| = 1``.

    Real and imaginary parts are held as integer arrays so that every
    update and the determinant check are exact.
    """

    re: np.ndarray
    im: np.ndarray = field(repr=False)

    @classmethod
    def identity(cls, n: int) -> "UnimodularTransform":
        return cls(np.eye(n, dtype=np.int64), np.zeros((n, n), dtype=np.int64))

    @classmethod
    def from_complex(cls, t: np.ndarray) -> "UnimodularTransform":
        t = np.asarray(t, dtype=complex)
        re, im = np.rint(t.real), np.rint(t.imag)
        if np.any(re != t.real) or np.any(im != t.imag):
            raise ValueError("entries are not Gaussian integers")
        return cls(re.astype(np.int64), im.astype(np.int64))

    @property
    def t(self) -> np.ndarray:
        return self.re + 1j * self.im

    @property
    def n(self) -> int:
        return self.re.shape[-1]

    def __getitem__(self, idx) -> "UnimodularTransform":
        """Select from the leading batch axes."""
        return UnimodularTransform(self.re[idx], self.im[idx])

    def abs_det_squared(self):
        """``|det t|^2`` computed exactly via the real 2n x 2n embedding.

        Returns an ``int``, or an integer array for a batched transform.
        """
        if self.re.ndim > 2:
            flat_re = self.re.reshape((-1,) + self.re.shape[-2:])
            flat_im = self.im.reshape(flat_re.shape)
            out = [UnimodularTransform(r, i).abs_det_squared()
                   for r, i in zip(flat_re, flat_im)]
            return np.array(out, dtype=object).reshape(self.re.shape[:-2])
        a = [[int(x) for x in row] for row in
             np.block([[self.re, -self.im], [self.im, self.re]])]
        return _bareiss_det(a)

    def is_unimodular(self) -> bool:
        return bool(np.all(np.asarray(self.abs_det_squared()) == 1))

    def inverse(self) -> np.ndarray:
        """Exact inverse as a complex array of Gaussian integers."""
        inv = np.linalg.inv(self.t)
        inv = np.rint(inv.real) + 1j * np.rint(inv.imag)
        if not np.array_equal(inv @ self.t, np.broadcast_to(np.eye(self.n), inv.shape)):
            raise ArithmeticError("transform is not unimodular")
        return inv


def _bareiss_det(a: list[list[int]]) -> int:
    """Fraction-free determinant of an integer matrix."""
    n = len(a)
    a = [row[:] for row in a]
    sign, prev = 1, 1
    for k in range(n - 1):
        if a[k][k] == 0:
            for i in range(k + 1, n):
                if a[i][k] != 0:
                    a[k], a[i] = a[i], a[k]
                    sign = -sign
                    break
            else:
                return 0
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) // prev
        prev = a[k][k]
    return sign * a[n - 1][n - 1]


def gram_schmidt(b: np.ndarray, counter: Optional[FlopCounter] = None):
    """Unnormalized Gram-Schmidt over the rows of ``b``.

    Returns the orthogonalized rows, the coefficient matrix ``mu`` (unit
    lower triangular, ``b = mu @ bstar``) and squared row norms of ``bstar``.
    """
    n, m = b.shape
    bstar = np.array(b, dtype=complex)
    mu = np.eye(n, dtype=complex)
    norms = np.zeros(n)
    for k in range(n):
        for l in range(k):
            mu[k, l] = np.vdot(bstar[l], b[k]) / norms[l]
            bstar[k] -= mu[k, l] * bstar[l]
        norms[k] = np.vdot(bstar[k], bstar[k]).real
        if counter is not None:
            # per l: inner product, division, row update; then squared norm
            counter.cmul(k * (2 * m))
            counter.cadd(k * (2 * m - 1))
            counter.cdiv(k)
            counter.real(4 * m - 1)
    return bstar, mu, norms


def _round_gauss(z: complex) -> complex:
    return complex(np.rint(z.real), np.rint(z.imag))


def clll_reduce(basis: np.ndarray, delta: float = 0.75,
                counter: Optional[FlopCounter] = None,
                max_iter: int = 100_000):
    """Complex LLL reduction of the rows of ``basis``.

    Parameters
    ----------
    basis : np.ndarray
        ``(n, m)`` complex array with linearly independent rows.
    delta : float
        Lovasz parameter in ``(0.5, 1]``.
    counter : FlopCounter, optional
        If given, floating point operations are accumulated into it.

    Returns
    -------
    reduced : np.ndarray
        The reduced basis, equal to ``t.t @ basis``.
    t : UnimodularTransform

    Raises
    ------
    DependentRows
        If Gram-Schmidt yields a vanishing row.
    """
    if not 0.5 < delta <= 1.0:
        raise ValueError("delta must lie in (0.5, 1]")
    b = np.array(basis, dtype=complex)
    if b.ndim != 2:
        raise ValueError("basis must be a 2-D array")
    n = b.shape[0]
    t_re = np.eye(n, dtype=np.int64)
    t_im = np.zeros((n, n), dtype=np.int64)
    scale = np.linalg.norm(b) ** 2

    def orthogonalize():
        bstar, mu, norms = gram_schmidt(b, counter)
        if np.any(norms <= 1e-24 * scale) or scale == 0:
            raise DependentRows("basis rows are linearly dependent")
        return mu, norms

    def size_reduce(k: int, l: int) -> None:
        q = _round_gauss(mu[k, l])
        if counter is not None:
            counter.rnd()
        if q == 0:
            return
        qr, qi = int(q.real), int(q.imag)
        b[k] -= q * b[l]
        t_re[k], t_im[k] = (t_re[k] - qr * t_re[l] + qi * t_im[l],
                            t_im[k] - qr * t_im[l] - qi * t_re[l])
        mu[k, :l + 1] -= q * mu[l, :l + 1]
        if counter is not None:
            m = b.shape[1]
            counter.cmul(m + n + l + 1)
            counter.cadd(m + n + l + 1)

    mu, norms = orthogonalize()
    k = 1
    it = 0
    while k < n:
        it += 1
        if it > max_iter:
            raise NoConvergence("CLLL exceeded its iteration budget")
        size_reduce(k, k - 1)
        lhs = norms[k]
        rhs = (delta - abs(mu[k, k - 1]) ** 2) * norms[k - 1]
        if counter is not None:
            counter.real(6)
        if lhs < rhs:
            b[[k - 1, k]] = b[[k, k - 1]]
            t_re[[k - 1, k]] = t_re[[k, k - 1]]
            t_im[[k - 1, k]] = t_im[[k, k - 1]]
            mu, norms = orthogonalize()
            k = max(k - 1, 1)
        else:
            for l in range(k - 2, -1, -1):
                size_reduce(k, l)
            k += 1
    return b, UnimodularTransform(t_re, t_im)


def is_clll_reduced(b: np.ndarray, delta: float = 0.75,
                    tol: float = 1e-9) -> bool:
    """Check complex size reduction and the Lovasz condition on rows of ``b``."""
    _, mu, norms = gram_schmidt(np.asarray(b, dtype=complex))
    n = b.shape[0]
    for k in range(n):
        for l in range(k):
            if abs(mu[k, l].real) > 0.5 + tol or abs(mu[k, l].imag) > 0.5 + tol:
                return False
    for k in range(1, n):
        if norms[k] < (delta - abs(mu[k, k - 1]) ** 2) * norms[k - 1] * (1 - tol):
            return False
    return True


def orthogonality_defect(b: np.ndarray) -> float:
    """``prod ||b_k|| / |det|`` for a square basis (rows); 1 iff orthogonal."""
    b = np.asarray(b, dtype=complex)
    lengths = np.prod(np.linalg.norm(b, axis=1))
    return float(lengths / abs(np.linalg.det(b)))

