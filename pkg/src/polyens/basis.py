"""Function bases: the ``f_1, ..., f_n`` that define a polynomial ensemble."""

from __future__ import annotations

import enum
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .proxy import ChebyshevProxy
from .quadrature import QuadratureError, integrate

__all__ = [
    "Domain",
    "Decay",
    "BasisError",
    "UnknownFamilyError",
    "NonIntegrableError",
    "SingularBasisError",
    "BasisFunction",
    "FunctionBasis",
    "make_basis",
    "laguerre",
    "hermite",
    "indicator",
    "tabulated",
    "integrate_over_domain",
    "gram_matrix",
]

# accuracy used for integrals over the whole domain (moments, Gram matrices)
DOMAIN_EPSABS = 1e-14
DOMAIN_EPSREL = 1e-11
GRAM_COND_LIMIT = 1e12


class Domain(enum.Enum):
    WHOLE_LINE = "whole-line"
    HALF_LINE = "half-line"

    @property
    def lower(self) -> float:
        return 0.0 if self is Domain.HALF_LINE else -math.inf


class Decay(enum.Enum):
    EXPONENTIAL = "exponential"
    GAUSSIAN_TAIL = "gaussian-tail"
    COMPACT_SUPPORT = "compact-support"


class BasisError(ValueError):
    pass


class UnknownFamilyError(BasisError):
    pass


class NonIntegrableError(BasisError):
    pass


class SingularBasisError(BasisError):
    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


@dataclass(frozen=True, eq=False)
class BasisFunction:
    """A real function on the line, vectorised over numpy arrays.

    ``support`` is a closed interval outside which the function is taken
    to be zero; the evaluator is never called there.  ``breakpoints``
    lists interior points where the function is not smooth, which the
    quadrature uses as panel edges.  ``scale`` is a characteristic length
    used to map infinite ranges.
    """

    evaluator: Callable[[np.ndarray], np.ndarray]
    label: str = "f"
    decay: Decay = Decay.EXPONENTIAL
    support: tuple[float, float] = (-math.inf, math.inf)
    breakpoints: tuple[float, ...] = ()
    scale: float = 1.0
    quadrature_backed: bool = False
    _proxy: dict = field(default_factory=dict, init=False, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        lo, hi = self.support
        inside = (x >= lo) & (x <= hi)
        if inside.all():
            out = np.asarray(self.evaluator(x), dtype=float) + out
        elif inside.any():
            out[inside] = self.evaluator(x[inside])
        return float(out) if out.ndim == 0 else out

    def for_nesting(self) -> "BasisFunction":
        """Cheap stand-in for use inside another integral.

        Closed-form functions are returned unchanged; quadrature-backed
        ones get a piecewise Chebyshev proxy, built once and shared.  An
        infinite support is cut where the function becomes negligible, and
        the returned function reports the cut support.
        """
        if not self.quadrature_backed:
            return self
        with self._lock:
            proxy = self._proxy.get("cheb")
            if proxy is None:
                proxy = ChebyshevProxy(self.__call__, self.support,
                                       breakpoints=self.breakpoints, scale=self.scale)
                self._proxy["cheb"] = proxy
        support = (max(self.support[0], proxy.lo), min(self.support[1], proxy.hi))
        bps = tuple(p for p in self.breakpoints if support[0] < p < support[1])
        return BasisFunction(proxy, self.label, self.decay, support, bps, self.scale)

    def with_label(self, label: str) -> "BasisFunction":
        return BasisFunction(self.evaluator, label, self.decay, self.support,
                             self.breakpoints, self.scale, self.quadrature_backed)


def _panel_edges(functions: Sequence[BasisFunction], domain: Domain):
    lo = max(min(f.support[0] for f in functions), domain.lower)
    hi = max(f.support[1] for f in functions)
    cuts = {lo, hi}
    for f in functions:
        for p in (*f.support, *f.breakpoints):
            if lo < p < hi:
                cuts.add(p)
    if lo < 0.0 < hi:
        cuts.add(0.0)
    return np.array(sorted(cuts))


def integrate_over_domain(functions: Sequence[BasisFunction], domain: Domain, build,
                          *, epsabs=DOMAIN_EPSABS, epsrel=DOMAIN_EPSREL):
    """Integrate ``build(x, F)`` over the domain, ``F[:, k] = functions[k](x)``.

    The range is cut at every support edge and breakpoint so that each
    panel sees a smooth integrand.  Quadrature-backed functions are
    sampled through their proxies.
    """
    functions = [f.for_nesting() for f in functions]
    edges = _panel_edges(functions, domain)
    scale = max(f.scale for f in functions)

    def integrand(x, _owner):
        F = np.stack([f(x) for f in functions], axis=-1) if x.size else np.zeros((0, len(functions)))
        return build(x, F)

    res = integrate(integrand, edges[:-1], edges[1:], epsabs=epsabs, epsrel=epsrel,
                    scale=scale)
    return res.value.sum(axis=0)


def gram_matrix(functions: Sequence[BasisFunction], domain: Domain) -> np.ndarray:
    """Matrix of inner products ``∫ f_j f_k`` over the domain."""
    k = len(functions)
    iu = np.triu_indices(k)

    def build(_x, F):
        return (F[:, :, None] * F[:, None, :])[:, iu[0], iu[1]]

    upper = integrate_over_domain(functions, domain, build)
    G = np.zeros((k, k))
    G[iu] = upper
    G[(iu[1], iu[0])] = upper
    return G


def _normalized_condition(G):
    d = np.sqrt(np.diag(G))
    if np.any(d == 0):
        return math.inf
    C = G / np.outer(d, d)
    w = np.linalg.eigvalsh(C)
    return math.inf if w[0] <= 0 else w[-1] / w[0]


@dataclass(frozen=True, eq=False)
class FunctionBasis:
    """Ordered functions ``f_1..f_n`` sharing one domain.

    Construction checks that ``|x|^j |f_k|`` is integrable for
    ``j <= 2n`` and that the Gram matrix is numerically nonsingular;
    pass ``validate=False`` to skip both (e.g. for a deliberately
    degenerate intermediate).
    """

    domain: Domain
    functions: tuple[BasisFunction, ...]
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "functions", tuple(self.functions))
        if not self.functions:
            raise BasisError("a basis needs at least one function")
        if self.domain is Domain.HALF_LINE:
            for f in self.functions:
                if f.support[0] < 0.0:
                    raise BasisError(f"{f.label}: support {f.support} leaves the half-line")
        if self.validate:
            self._check_integrable()
            self._check_independent()

    def _check_integrable(self):
        n = self.n
        power = 2 * n

        def build(x, F):
            ax = np.abs(x)[:, None]
            absF = np.abs(F)
            with np.errstate(over="ignore", invalid="ignore"):
                high = np.where(absF == 0.0, 0.0, absF * ax ** power)
            return np.concatenate([absF, high], axis=1)

        try:
            vals = integrate_over_domain(self.functions, self.domain, build,
                                         epsabs=1e-12, epsrel=1e-8)
        except QuadratureError as exc:
            raise NonIntegrableError(
                f"|x|^j |f_k| is not integrable for some j <= {power}: {exc}") from exc
        if not np.all(np.isfinite(vals)) or np.any(vals > 1e300):
            raise NonIntegrableError(f"|x|^j |f_k| is not integrable for some j <= {power}")

    def _check_independent(self):
        G = gram_matrix(self.functions, self.domain)
        cond = _normalized_condition(G)
        if not cond < GRAM_COND_LIMIT:
            raise SingularBasisError(
                f"Gram matrix is numerically singular (condition {cond:.3g})", condition=cond)

    @property
    def n(self) -> int:
        return len(self.functions)

    def __len__(self):
        return self.n

    def __iter__(self):
        return iter(self.functions)

    def __getitem__(self, k):
        return self.functions[k]

    def __call__(self, x) -> np.ndarray:
        """Values of all functions; shape ``x.shape + (n,)``."""
        x = np.asarray(x, dtype=float)
        return np.stack([f(x) for f in self.functions], axis=-1)

    @property
    def labels(self) -> list[str]:
        return [f.label for f in self.functions]

    def recombine(self, R, *, validate=True) -> "FunctionBasis":
        """Basis ``g_k = sum_j R[j, k] f_j``; ``R`` has ``n`` rows and any number of columns."""
        R = np.asarray(R, dtype=float)
        if R.ndim != 2 or R.shape[0] != self.n or R.shape[1] < 1:
            raise BasisError(f"recombination matrix must have {self.n} rows")
        parts = self.functions
        lo = min(f.support[0] for f in parts)
        hi = max(f.support[1] for f in parts)
        bps = tuple(sorted({p for f in parts for p in (*f.breakpoints, *f.support)
                            if lo < p < hi}))
        decay = parts[0].decay if len({f.decay for f in parts}) == 1 else Decay.EXPONENTIAL
        out = []
        for k in range(R.shape[1]):
            col = R[:, k]

            def ev(x, col=col):
                return sum(c * f(x) for c, f in zip(col, parts) if c != 0.0) + 0.0 * x

            out.append(BasisFunction(ev, f"comb{k + 1}", decay, (lo, hi), bps,
                                     max(f.scale for f in parts),
                                     any(f.quadrature_backed for f in parts)))
        return FunctionBasis(self.domain, tuple(out), validate)


def laguerre(nu: int, n: int) -> FunctionBasis:
    """``f_k(x) = x^(nu+k-1) e^(-x)`` on the half-line."""
    if n < 1 or nu < 0:
        raise BasisError("laguerre needs n >= 1 and nu >= 0")
    funcs = []
    for k in range(1, n + 1):
        a = nu + k - 1
        funcs.append(BasisFunction(lambda x, a=a: x ** a * np.exp(-x), f"x^{a} e^-x",
                                   Decay.EXPONENTIAL, (0.0, math.inf)))
    return FunctionBasis(Domain.HALF_LINE, tuple(funcs))


def hermite(n: int) -> FunctionBasis:
    """``f_k(x) = x^(k-1) e^(-x^2/2)`` on the whole line."""
    if n < 1:
        raise BasisError("hermite needs n >= 1")
    funcs = []
    for k in range(1, n + 1):
        funcs.append(BasisFunction(lambda x, a=k - 1: x ** a * np.exp(-0.5 * x * x),
                                   f"x^{k - 1} e^-x^2/2", Decay.GAUSSIAN_TAIL))
    return FunctionBasis(Domain.WHOLE_LINE, tuple(funcs))


def indicator(intervals: Sequence[Sequence[float]]) -> FunctionBasis:
    """Indicators of open intervals ``(a_k, b_k)``."""
    funcs = []
    for a, b in intervals:
        a, b = float(a), float(b)
        if not a < b or not (math.isfinite(a) and math.isfinite(b)):
            raise BasisError(f"bad indicator interval ({a}, {b})")
        funcs.append(BasisFunction(lambda x, a=a, b=b: ((x > a) & (x < b)).astype(float),
                                   f"chi({a:g},{b:g})", Decay.COMPACT_SUPPORT, (a, b)))
    if not funcs:
        raise BasisError("indicator basis needs at least one interval")
    domain = Domain.HALF_LINE if all(f.support[0] >= 0 for f in funcs) else Domain.WHOLE_LINE
    return FunctionBasis(domain, tuple(funcs))


def tabulated(table) -> FunctionBasis:
    """Linear interpolation of the columns of ``[[x, f1, ..., fn], ...]``; zero outside."""
    table = np.asarray(table, dtype=float)
    if table.ndim != 2 or table.shape[1] < 2 or table.shape[0] < 2:
        raise BasisError("table must have rows [x, f1, ..., fn] with at least two rows")
    xs = table[:, 0]
    if np.any(np.diff(xs) <= 0):
        raise BasisError("table abscissae must be strictly increasing")
    support = (float(xs[0]), float(xs[-1]))
    bps = tuple(float(v) for v in xs[1:-1])
    funcs = []
    for k in range(1, table.shape[1]):
        col = table[:, k]
        funcs.append(BasisFunction(lambda x, col=col: np.interp(x, xs, col, left=0.0, right=0.0),
                                   f"table[{k}]", Decay.COMPACT_SUPPORT, support, bps))
    domain = Domain.HALF_LINE if support[0] >= 0 else Domain.WHOLE_LINE
    return FunctionBasis(domain, tuple(funcs))


def make_basis(spec) -> FunctionBasis:
    """Build a basis from a descriptor such as ``{"family": "laguerre", "nu": 0, "n": 2}``.

    Families: ``laguerre`` (``nu``, ``n``), ``hermite`` (``n``),
    ``indicator`` (``intervals``, default ``(k-1, k)`` for ``k = 1..n``)
    and ``tabulated`` (``table``).
    """
    if isinstance(spec, FunctionBasis):
        return spec
    family = str(spec.get("family", "")).lower()
    if family == "laguerre":
        return laguerre(int(spec.get("nu", 0)), int(spec["n"]))
    if family == "hermite":
        return hermite(int(spec["n"]))
    if family == "indicator":
        intervals = spec.get("intervals")
        if intervals is None:
            intervals = [(k - 1, k) for k in range(1, int(spec["n"]) + 1)]
        basis = indicator(intervals)
    elif family == "tabulated":
        basis = tabulated(spec["table"])
    else:
        raise UnknownFamilyError(f"unknown basis family {spec.get('family')!r}")
    if "n" in spec and int(spec["n"]) != basis.n:
        raise BasisError(f"descriptor says n={spec['n']} but defines {basis.n} functions")
    return basis
