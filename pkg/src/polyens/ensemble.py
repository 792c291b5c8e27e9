"""Polynomial ensembles: normalisation, joint density, kernel, average characteristic polynomial."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .basis import (
    BasisError,
    BasisFunction,
    Domain,
    FunctionBasis,
    gram_matrix,
    integrate_over_domain,
)

__all__ = [
    "EnsembleError",
    "KernelConditionError",
    "NonEnsembleWarning",
    "PolynomialEnsemble",
    "CorrelationKernel",
    "MonicPolynomial",
    "moment_matrix",
    "ensemble_from_basis",
    "vandermonde",
    "joint_density",
    "andreief_det",
    "correlation_kernel",
    "average_char_poly",
    "span_equal",
]

KERNEL_COND_LIMIT = 1e12
NEGATIVE_DENSITY_TOL = -1e-12


class EnsembleError(ValueError):
    pass


class KernelConditionError(EnsembleError):
    def __init__(self, message, condition):
        super().__init__(message)
        self.condition = condition


class NonEnsembleWarning(UserWarning):
    """The density formula went negative: the basis does not define an ensemble."""


def _moments(basis: FunctionBasis, rows: int) -> np.ndarray:
    n = basis.n
    powers = np.arange(rows)

    def build(x, F):
        with np.errstate(over="ignore", invalid="ignore"):
            xp = x[:, None] ** powers[None, :]
            prod = xp[:, :, None] * F[:, None, :]
            prod = np.where(F[:, None, :] == 0.0, 0.0, prod)
        return prod.reshape(x.size, rows * n)

    return integrate_over_domain(basis.functions, basis.domain, build).reshape(rows, n)


def moment_matrix(basis: FunctionBasis) -> np.ndarray:
    """``M[j, k] = ∫ x^j f_k(x) dx`` for ``j, k = 0..n-1``."""
    return _moments(basis, basis.n)


@dataclass(frozen=True, eq=False)
class PolynomialEnsemble:
    """Density ``Δ_n(x) det[f_k(x_j)] / z_n`` with ``z_n = n! det M``."""

    basis: FunctionBasis
    moment_matrix: np.ndarray = field(repr=False)
    z_n: float

    @property
    def n(self) -> int:
        return self.basis.n

    @property
    def domain(self) -> Domain:
        return self.basis.domain


def ensemble_from_basis(basis: FunctionBasis) -> PolynomialEnsemble:
    M = moment_matrix(basis)
    det = np.linalg.det(M)
    hadamard = np.prod(np.linalg.norm(M, axis=0))
    if not np.isfinite(det) or abs(det) <= 1e-13 * hadamard:
        raise EnsembleError(f"moment matrix is singular (det={det:.3g}); "
                            "the ensemble cannot be normalised in this basis")
    M.setflags(write=False)
    return PolynomialEnsemble(basis, M, math.factorial(basis.n) * det)


def vandermonde(x) -> np.ndarray:
    """``Δ_n(x) = prod_{j<k} (x_k - x_j)`` over the last axis."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    out = np.ones(x.shape[:-1])
    for j in range(n):
        for k in range(j + 1, n):
            out = out * (x[..., k] - x[..., j])
    return out


def joint_density(ens: PolynomialEnsemble, points) -> float | np.ndarray:
    """Evaluate the ensemble density at one point set (shape ``(n,)``) or a batch ``(..., n)``."""
    x = np.asarray(points, dtype=float)
    if x.shape[-1:] != (ens.n,):
        raise ValueError(f"expected {ens.n} points, got shape {x.shape}")
    if ens.domain is Domain.HALF_LINE and np.any(x < 0):
        raise ValueError("points must lie on the half-line [0, inf)")
    F = ens.basis(x)  # (..., n_points, n_functions)
    value = vandermonde(x) * np.linalg.det(F) / ens.z_n
    if np.any(value < NEGATIVE_DENSITY_TOL):
        warnings.warn(f"joint density is negative (min {np.min(value):.3g}); the basis "
                      "does not define a probability density", NonEnsembleWarning,
                      stacklevel=2)
    return float(value) if np.ndim(value) == 0 else value


def _as_function(f):
    if isinstance(f, BasisFunction):
        return f
    return BasisFunction(f, getattr(f, "__name__", "phi"))


def andreief_det(phis: Sequence[Callable], psis: Sequence[Callable], domain: Domain) -> float:
    """``det[∫ phi_j psi_k]``, the right-hand side of Andreief's identity divided by n!."""
    phis = [_as_function(f) for f in phis]
    psis = [_as_function(f) for f in psis]
    n = len(phis)
    if len(psis) != n or n == 0:
        raise ValueError("need two non-empty families of equal length")

    def build(_x, F):
        P, Q = F[:, :n], F[:, n:]
        return (P[:, :, None] * Q[:, None, :]).reshape(-1, n * n)

    A = integrate_over_domain(phis + psis, domain, build).reshape(n, n)
    return float(np.linalg.det(A))


@dataclass(frozen=True, eq=False)
class MonicPolynomial:
    """Coefficients in increasing degree; the last one is exactly 1."""

    degree: int
    coefficients: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float)
        if c.shape != (self.degree + 1,) or c[-1] != 1.0:
            raise ValueError("coefficients must have length degree+1 and end in 1")
        object.__setattr__(self, "coefficients", c)

    def __call__(self, x):
        return np.polynomial.polynomial.polyval(x, self.coefficients)


def _lu_nopivot(M):
    n = M.shape[0]
    L = np.eye(n)
    U = M.astype(float).copy()
    for k in range(n - 1):
        if U[k, k] == 0.0:
            raise EnsembleError("a leading principal minor of the moment matrix vanishes")
        for i in range(k + 1, n):
            L[i, k] = U[i, k] / U[k, k]
            U[i, k:] -= L[i, k] * U[k, k:]
    return L, U


@dataclass(frozen=True, eq=False)
class CorrelationKernel:
    """``K_n(x, y) = sum_{j,k} x^j C[j, k] f_k(y)`` with ``C = M^{-T}``."""

    coeff: np.ndarray
    basis: FunctionBasis
    moments: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.basis.n

    def __call__(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        X = x[..., None] ** np.arange(self.n)
        F = self.basis(y)
        return np.einsum("...j,jk,...k->...", X, self.coeff, F)

    def diagonal(self, x):
        """The one-point function ``K_n(x, x)``."""
        return self(x, x)

    def biorthogonal_families(self):
        """Coefficients ``(A, B)`` with ``P_j = sum_i A[j, i] x^i`` monic and ``Q_k = sum_l B[k, l] f_l``."""
        L, U = _lu_nopivot(self.moments)
        A = np.linalg.inv(L)
        B = np.linalg.inv(U).T
        return A, B

    def P(self, j, x):
        A, _ = self.biorthogonal_families()
        return np.polynomial.polynomial.polyval(x, A[j])

    def Q(self, k, y):
        _, B = self.biorthogonal_families()
        return self.basis(y) @ B[k]

    def trace(self) -> float:
        """``∫ K_n(x, x) dx``; equals ``n`` for a well-formed kernel."""
        powers = np.arange(self.n)

        def build(x, F):
            X = x[:, None] ** powers
            return np.einsum("mj,jk,mk->m", X, self.coeff, F)

        return float(integrate_over_domain(self.basis.functions, self.basis.domain, build))

    def reproducing_residual(self, grid) -> float:
        """``max |∫ K(x, z) K(z, y) dz - K(x, y)|`` over ``x, y`` in ``grid``."""
        grid = np.asarray(grid, dtype=float)
        g = grid.size
        powers = np.arange(self.n)
        Xg = grid[:, None] ** powers  # (g, n)
        Fg = self.basis(grid)  # (g, n)

        def build(z, F):
            left = F @ self.coeff.T @ Xg.T  # (m, g): K(x_i, z)
            right = (z[:, None] ** powers) @ self.coeff @ Fg.T  # (m, g): K(z, y_l)
            return (left[:, :, None] * right[:, None, :]).reshape(z.size, g * g)

        KK = integrate_over_domain(self.basis.functions, self.basis.domain, build).reshape(g, g)
        direct = self(grid[:, None], grid[None, :])
        return float(np.abs(KK - direct).max())

    def biorthogonality_residual(self) -> float:
        """``max |∫ P_j Q_k - δ_jk|`` with both integrals done by quadrature."""
        A, B = self.biorthogonal_families()
        n = self.n
        powers = np.arange(n)

        def build(x, F):
            P = (x[:, None] ** powers) @ A.T
            Q = F @ B.T
            return (P[:, :, None] * Q[:, None, :]).reshape(x.size, n * n)

        G = integrate_over_domain(self.basis.functions, self.basis.domain, build).reshape(n, n)
        return float(np.abs(G - np.eye(n)).max())


def correlation_kernel(ens: PolynomialEnsemble) -> CorrelationKernel:
    M = np.asarray(ens.moment_matrix)
    cond = np.linalg.cond(M)
    if not cond < KERNEL_COND_LIMIT:
        raise KernelConditionError(f"moment matrix condition number {cond:.3g} exceeds "
                                   f"{KERNEL_COND_LIMIT:.0e}", cond)
    C = np.linalg.inv(M).T
    return CorrelationKernel(C, ens.basis, M)


def average_char_poly(ens: PolynomialEnsemble) -> MonicPolynomial:
    """``P_n(x) = E[prod (x - x_j)]``: the monic degree-n polynomial orthogonal to every ``f_k``."""
    n = ens.n
    ext = _moments(ens.basis, n + 1)
    if not np.all(np.isfinite(ext)):
        raise EnsembleError("moments of order n diverge")
    lower = np.linalg.solve(ext[:n].T, -ext[n])
    return MonicPolynomial(n, np.append(lower, 1.0))


def span_equal(a: FunctionBasis, b: FunctionBasis, tol: float = 1e-8) -> bool:
    """Whether two bases span the same space.

    The Gram matrix of all ``2n`` functions, scaled to unit diagonal, must
    have exactly ``n`` eigenvalues above ``tol`` times the largest.
    """
    if a.domain is not b.domain:
        raise BasisError("bases live on different domains")
    if a.n != b.n:
        raise BasisError("bases have different sizes")
    G = gram_matrix(a.functions + b.functions, a.domain)
    d = np.sqrt(np.diag(G))
    if np.any(d == 0):
        raise BasisError("a basis function vanishes identically")
    w = np.linalg.eigvalsh(G / np.outer(d, d))
    rank = int(np.sum(w > tol * w[-1]))
    return rank == a.n
