"""Dense complex Hermitian positive-definite linear algebra.

Factorization is Cholesky only: every covariance handled here is Hermitian
PD by construction, so a failed factorization signals degenerate data
rather than a reason to fall back to a different solver. Matrices are
small (N on the order of 8..16) and always dense.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

__all__ = [
    "NotPositiveDefinite",
    "HermitianPd",
    "cholesky",
    "solve",
    "whiten",
    "quad_form",
    "logdet",
    "accumulate_outer",
    "factor_pd",
    "solve_factored",
]

# Relative Frobenius asymmetry allowed before an input is rejected; sums of
# conjugate-symmetric outer products stay many orders below this.
_HERMITIAN_RTOL = 1e-12


class NotPositiveDefinite(ArithmeticError):
    """A Cholesky pivot was not strictly positive (degenerate covariance)."""


class HermitianPd:
    """Hermitian positive-definite matrix with a lazily cached Cholesky factor.

    Input is validated to be Hermitian within 1e-12 relative Frobenius error,
    then stored symmetrized as (H + H^H)/2 so accumulation round-off cannot
    leak into the factorization. The factor is computed on first use and
    reused by every solve against the same matrix.
    """

    __slots__ = ("_m", "_factor", "_inv_factor")

    def __init__(self, entries):
        a = np.asarray(entries, dtype=np.complex128)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {a.shape}")
        if not np.isfinite(a).all():
            raise ValueError("matrix entries must be finite")
        scale = np.linalg.norm(a)
        asym = np.linalg.norm(a - a.conj().T)
        if scale > 0.0 and asym > _HERMITIAN_RTOL * scale:
            raise ValueError(
                f"matrix is not Hermitian (relative asymmetry {asym / scale:.3e})"
            )
        self._m = (a + a.conj().T) / 2.0
        self._factor = None
        self._inv_factor = None

    @property
    def matrix(self) -> np.ndarray:
        return self._m

    @property
    def n(self) -> int:
        return self._m.shape[0]

    def _cho(self):
        if self._factor is None:
            try:
                self._factor = cho_factor(self._m, lower=True, check_finite=False)
            except np.linalg.LinAlgError as exc:
                raise NotPositiveDefinite(
                    f"{self.n}x{self.n} matrix is not positive definite: {exc}"
                ) from None
        return self._factor

    def _inv_chol(self):
        # L^{-1}, cached: repeated whitening then costs one small matmul
        # instead of a triangular solve per call.
        if self._inv_factor is None:
            self._inv_factor = solve_triangular(
                self._cho()[0], np.eye(self.n), lower=True, check_finite=False
            )
        return self._inv_factor

    def __repr__(self) -> str:
        return f"HermitianPd(n={self.n})"


def cholesky(h: HermitianPd) -> np.ndarray:
    """Lower-triangular L with L @ L^H equal to the matrix of ``h``."""
    return np.tril(h._cho()[0])


def solve(h: HermitianPd, b) -> np.ndarray:
    """h^{-1} b through the cached factor (two triangular solves)."""
    return cho_solve(h._cho(), np.asarray(b, dtype=np.complex128), check_finite=False)


def whiten(h: HermitianPd, b) -> np.ndarray:
    """L^{-1} b for the cached lower factor L (half of a full solve)."""
    return h._inv_chol() @ np.asarray(b, dtype=np.complex128)


def quad_form(h: HermitianPd, x, y) -> complex:
    """y^H h^{-1} x without ever forming the inverse."""
    return complex(np.vdot(y, solve(h, x)))


def logdet(h: HermitianPd) -> float:
    """log det of the matrix of ``h`` (real; twice the log factor diagonal)."""
    d = np.real(np.diag(h._cho()[0]))
    return float(2.0 * np.log(d).sum())


def accumulate_outer(acc, x, w: float) -> np.ndarray:
    """acc + w * x x^H with an exactly conjugate-symmetric rank-one term.

    The raw outer product is not bitwise Hermitian under fused complex
    multiplies, so the term is symmetrized explicitly; halving is exact.
    """
    if w < 0.0:
        raise ValueError("outer-product weight must be nonnegative")
    x = np.asarray(x, dtype=np.complex128)
    term = w * np.outer(x, x.conj())
    term = (term + term.conj().T) / 2.0
    return np.asarray(acc, dtype=np.complex128) + term


def factor_pd(a: np.ndarray, jitter: float = 0.0):
    """Symmetrize and Cholesky-factor a raw array, for use with
    :func:`solve_factored`.

    When ``jitter`` > 0 and the first factorization fails, retries once with
    ``jitter * tr(a)/n`` added to the diagonal; raises
    :class:`NotPositiveDefinite` if that also fails.
    """
    sym = (a + a.conj().T) / 2.0
    try:
        return cho_factor(sym, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        if jitter > 0.0:
            n = sym.shape[0]
            loaded = sym + (jitter * np.real(np.trace(sym)) / n) * np.eye(n)
            try:
                return cho_factor(loaded, lower=True, check_finite=False)
            except np.linalg.LinAlgError:
                pass
        raise NotPositiveDefinite(
            "matrix is not positive definite"
            + (" even after diagonal loading" if jitter > 0.0 else "")
        ) from None


def solve_factored(factor, b) -> np.ndarray:
    """a^{-1} b given a factor from :func:`factor_pd`."""
    return cho_solve(factor, np.asarray(b, dtype=np.complex128), check_finite=False)
