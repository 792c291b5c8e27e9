"""Operators that map the basis of one polynomial ensemble to the basis of another.

Each matrix operation (multiplying by a Ginibre matrix or a truncated
unitary, cutting out a principal block, adding or appending a Gaussian
vector, bordering a Hermitian matrix) sends the functions ``f_k`` to new
functions ``g_k`` given by a one-dimensional integral.  The ``g_k``
returned here are evaluators that run that integral on demand; when they
become the input of a further transform they are replaced by Chebyshev
proxies (see :meth:`BasisFunction.for_nesting`) so that a chain of steps
costs linear rather than exponential time.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .basis import (
    BasisError,
    BasisFunction,
    Decay,
    Domain,
    FunctionBasis,
    integrate_over_domain,
)
from .quadrature import DivergenceError, QuadratureError, integrate

__all__ = [
    "TransformError",
    "PipelineError",
    "StepKind",
    "PipelineStep",
    "parse_step",
    "parse_pipeline",
    "gamma_kernel",
    "beta_kernel",
    "chi_kernel",
    "mellin_convolve",
    "ginibre_transform",
    "truncation_transform",
    "posdef_restrict_transform",
    "restriction_transform",
    "rank_one_add_transform",
    "rank_one_extend_transform",
    "border_extend_transform",
    "apply_step",
    "apply_pipeline",
    "output_size",
]

# accuracy of each pointwise evaluation of a transformed function
EVAL_EPSABS = 1e-300
EVAL_EPSREL = 1e-11
# exponent above which e^(x^2/2) f(x) is treated as an overflow
OVERFLOW_EXPONENT = 700.0
# restriction pivot: last function whose integral is at least this fraction of the largest
PIVOT_FRACTION = 1e-3
# sample points of the convergence probe for an anchor at 0 or infinity
_PROBE_POINTS = np.geomspace(0.25, 8.0, 8)


class TransformError(BasisError):
    pass


class PipelineError(TransformError):
    """A pipeline step failed; ``index`` is its zero-based position."""

    def __init__(self, message, index, step=None):
        super().__init__(message)
        self.index = index
        self.step = step


class StepKind(enum.Enum):
    GINIBRE_PRODUCT = "ginibre-product"
    TRUNCATION_PRODUCT = "truncation-product"
    RESTRICT = "restrict"
    POSDEF_RESTRICT = "posdef-restrict"
    RANK_ONE_ADD = "rank-one-add"
    RANK_ONE_EXTEND = "rank-one-extend"
    BORDER_EXTEND = "border-extend"


_STEP_ALIASES = {k.value.replace("-", ""): k for k in StepKind}


@dataclass(frozen=True)
class PipelineStep:
    """One transformation with its integer parameters ``nu``, ``m`` and anchor ``c``."""

    kind: StepKind
    nu: int | None = None
    m: int | None = None
    c: float = 1.0

    def __post_init__(self):
        k = self.kind
        needs_nu = k in (StepKind.GINIBRE_PRODUCT, StepKind.TRUNCATION_PRODUCT,
                         StepKind.POSDEF_RESTRICT, StepKind.RANK_ONE_EXTEND)
        needs_m = k in (StepKind.TRUNCATION_PRODUCT, StepKind.POSDEF_RESTRICT)
        if needs_nu and self.nu is None:
            raise TransformError(f"{k.value} needs nu")
        if needs_m and self.m is None:
            raise TransformError(f"{k.value} needs m")
        if self.nu is not None and self.nu < 0:
            raise TransformError(f"{k.value}: nu must be >= 0")
        if k is StepKind.RANK_ONE_EXTEND:
            if self.nu < 1:
                raise TransformError("rank-one-extend needs nu >= 1")
            if not (self.c >= 0.0):
                raise TransformError("rank-one-extend anchor c must lie in [0, inf]")
        if k is StepKind.POSDEF_RESTRICT and self.nu < 1:
            raise TransformError("posdef-restrict needs nu >= 1")

    def to_dict(self) -> dict:
        out = {"step": self.kind.value}
        if self.nu is not None:
            out["nu"] = self.nu
        if self.m is not None:
            out["m"] = self.m
        if self.kind is StepKind.RANK_ONE_EXTEND:
            out["c"] = "zero" if self.c == 0 else "infinity" if math.isinf(self.c) else self.c
        return out


def parse_step(spec) -> PipelineStep:
    """Read ``{"step": name, "nu": int?, "m": int?, "c": number|"zero"|"infinity"}``."""
    if isinstance(spec, PipelineStep):
        return spec
    name = str(spec.get("step", "")).lower().replace("-", "").replace("_", "")
    kind = _STEP_ALIASES.get(name)
    if kind is None:
        raise TransformError(f"unknown pipeline step {spec.get('step')!r}")
    c = spec.get("c", 1.0)
    if isinstance(c, str):
        words = {"zero": 0.0, "infinity": math.inf, "inf": math.inf}
        if c.lower() not in words:
            raise TransformError(f"anchor c must be a number, 'zero' or 'infinity', not {c!r}")
        c = words[c.lower()]
    nu = spec.get("nu")
    m = spec.get("m")
    return PipelineStep(kind, None if nu is None else int(nu), None if m is None else int(m),
                        float(c))


def parse_pipeline(specs) -> list[PipelineStep]:
    return [parse_step(s) for s in specs]


# ---------------------------------------------------------------------------
# integral-valued functions

def _safe(f, u):
    """``f(u)`` with far-out overflow artefacts (inf * 0) replaced by 0."""
    with np.errstate(all="ignore"):
        v = np.asarray(f(u), dtype=float)
    bad = ~np.isfinite(v)
    if bad.any():
        far = bad & ~(np.abs(u) < 1e4)
        v = np.where(far, 0.0, v)
    return v


def _integral_values(y, lo, hi, cuts, integrand, *, scale=1.0, center=0.0,
                     epsabs=EVAL_EPSABS, epsrel=EVAL_EPSREL):
    """``∫_lo^hi integrand(x, i) dx`` for every point ``y[i]``.

    ``cuts`` is an array ``(len(y), K)`` of candidate interior panel
    edges (NaN for none); they are clipped into each range.  ``lo > hi``
    yields the negated integral.
    """
    npt = y.size
    sign = np.where(lo <= hi, 1.0, -1.0)
    a, b = np.minimum(lo, hi), np.maximum(lo, hi)
    if cuts is None or cuts.shape[1] == 0:
        edges = np.stack([a, b], axis=1)
    else:
        inner = np.where(np.isnan(cuts), a[:, None], cuts)
        inner = np.clip(inner, a[:, None], b[:, None])
        edges = np.sort(np.concatenate([a[:, None], inner, b[:, None]], axis=1), axis=1)
    k = edges.shape[1] - 1
    left = edges[:, :-1].ravel()
    right = edges[:, 1:].ravel()
    point = np.repeat(np.arange(npt), k)
    scale = np.broadcast_to(np.asarray(scale, dtype=float), (npt,))
    center = np.broadcast_to(np.asarray(center, dtype=float), (npt,))

    def func(x, owner):
        return integrand(x, point[owner])

    res = integrate(func, left, right, epsabs=epsabs, epsrel=epsrel,
                    scale=np.repeat(scale, k), center=np.repeat(center, k),
                    raise_on_failure=False)
    value = np.bincount(point, weights=res.value, minlength=npt) * sign
    ok = np.bincount(point, weights=~res.converged, minlength=npt) == 0
    ok &= np.isfinite(value)
    if not ok.all():
        bad = y[~ok]
        raise DivergenceError(
            f"integral does not converge at {bad.size} point(s), e.g. y={bad[0]:.6g}",
            points=bad)
    return value


def _pointwise(compute):
    """Wrap ``compute(flat_y)`` into an evaluator accepting any array shape."""

    def evaluator(y):
        y = np.asarray(y, dtype=float)
        flat = y.ravel()
        if flat.size == 0:
            return np.zeros(y.shape)
        return compute(flat).reshape(y.shape)

    return evaluator


def _finite_points(values) -> tuple[float, ...]:
    return tuple(sorted({float(v) for v in values if np.isfinite(v)}))


# ---------------------------------------------------------------------------
# Mellin convolution

def gamma_kernel(nu: int) -> BasisFunction:
    """``x^nu e^(-x)`` on the half-line."""
    def ev(x):
        with np.errstate(all="ignore"):
            out = np.exp(-x) * x ** nu
        return np.where(np.isfinite(x), out, 0.0)

    return BasisFunction(ev, f"x^{nu} e^-x", Decay.EXPONENTIAL, (0.0, math.inf),
                         scale=float(nu + 1))


def beta_kernel(nu: int, beta: int) -> BasisFunction:
    """``x^nu (1 - x)^beta`` on ``[0, 1]``."""
    return BasisFunction(lambda x: x ** nu * (1.0 - x) ** beta, f"x^{nu} (1-x)^{beta}",
                         Decay.COMPACT_SUPPORT, (0.0, 1.0))


def chi_kernel(k: int) -> BasisFunction:
    """``x^k`` restricted to ``(0, 1)``."""
    return beta_kernel(k, 0).with_label(f"x^{k} on (0,1)")


def mellin_convolve(kernel: BasisFunction, f: BasisFunction, *, epsabs=EVAL_EPSABS,
                    epsrel=EVAL_EPSREL) -> BasisFunction:
    """``y -> ∫_0^inf kernel(x) f(y/x) dx/x`` for half-line functions.

    The integral runs in ``s = ln x`` so that ``dx/x`` becomes ``ds`` and
    the endpoint ``x = 0`` moves to ``-inf``.  The ``x``-range is cut down
    to where both factors can be nonzero, and kinks of either factor
    become panel edges.
    """
    if kernel.support[0] < 0 or f.support[0] < 0:
        raise TransformError("Mellin convolution needs functions on the half-line")
    fn = f.for_nesting()
    kn = kernel.for_nesting()
    kc, kd = kn.support
    fa, fb = fn.support
    k_bps = np.array([p for p in (kc, kd, *kn.breakpoints) if 0 < p < math.inf])
    f_bps = np.array([p for p in (fa, fb, *fn.breakpoints) if 0 < p < math.inf])
    center_shift = 0.5 * (math.log(kernel.scale) - math.log(f.scale))

    def compute(y):
        out = np.zeros(y.size)
        pos = y >= 0
        yy = y[pos]
        with np.errstate(divide="ignore", invalid="ignore"):
            x_lo = np.maximum(kc, np.where(np.isinf(fb), 0.0, yy / fb))
            x_hi = np.minimum(kd, np.where(fa > 0, yy / fa, math.inf))
            live = x_lo < x_hi
            s_lo = np.log(x_lo[live])
            s_hi = np.log(x_hi[live])
            yl = yy[live]
            cuts = [np.broadcast_to(np.log(k_bps), (yl.size, k_bps.size))]
            if f_bps.size:
                cuts.append(np.log(yl[:, None] / f_bps[None, :]))
            cuts = np.concatenate(cuts, axis=1) if cuts else None
            cuts = np.where(np.isfinite(cuts), cuts, np.nan)
            center = 0.5 * np.log(np.maximum(yl, 1e-300)) + center_shift

        def integrand(s, i):
            with np.errstate(over="ignore"):
                x = np.exp(s)
            kv = _safe(kn, x)
            with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
                u = yl[i] / x
            fv = _safe(fn, u)
            return np.where((kv == 0.0) | (fv == 0.0), 0.0, kv * fv)

        vals = np.zeros(yy.size)
        if live.any():
            vals[live] = _integral_values(yl, s_lo, s_hi, cuts, integrand, center=center,
                                          epsabs=epsabs, epsrel=epsrel)
        out[pos] = vals
        return out

    lo = 0.0 if (kernel.support[0] == 0 or f.support[0] == 0) else kc * fa
    hi = kernel.support[1] * f.support[1]
    bps = _finite_points(p * q for p in (*k_bps,) for q in (*f_bps,) if lo < p * q < hi)
    decay = Decay.COMPACT_SUPPORT if math.isfinite(hi) else Decay.EXPONENTIAL
    return BasisFunction(_pointwise(compute), f"({kernel.label})*({f.label})", decay,
                         (lo, hi), bps, kernel.scale * f.scale, quadrature_backed=True)


def _require_half_line(basis, what):
    if basis.domain is not Domain.HALF_LINE:
        raise TransformError(f"{what} needs a basis on the half-line")


def ginibre_transform(basis: FunctionBasis, nu: int) -> FunctionBasis:
    """Basis after multiplying by an independent ``(n+nu) x l`` Ginibre matrix.

    ``g_k(y) = ∫_0^inf x^nu e^(-x) f_k(y/x) dx/x``.
    """
    _require_half_line(basis, "ginibre_transform")
    if nu < 0:
        raise TransformError("nu must be >= 0")
    kernel = gamma_kernel(nu)
    return FunctionBasis(Domain.HALF_LINE, tuple(mellin_convolve(kernel, f) for f in basis))


def truncation_transform(basis: FunctionBasis, m: int, nu: int) -> FunctionBasis:
    """Basis after multiplying by an ``(n+nu) x l`` truncation of an ``m x m`` Haar unitary.

    ``g_k(y) = ∫_0^1 x^nu (1-x)^(m-n-nu-1) f_k(y/x) dx/x``.  The same
    functions describe the nonzero eigenvalues of an ``(n+nu)`` principal
    block of ``U X U*`` for a rank-``n`` positive semidefinite ``m x m``
    matrix ``X``.
    """
    _require_half_line(basis, "truncation_transform")
    n = basis.n
    if nu < 0:
        raise TransformError("nu must be >= 0")
    if m < n + nu + 1:
        raise TransformError(f"need m >= n + nu + 1 (m={m}, n={n}, nu={nu})")
    kernel = beta_kernel(nu, m - n - nu - 1)
    return FunctionBasis(Domain.HALF_LINE, tuple(mellin_convolve(kernel, f) for f in basis))


def posdef_restrict_transform(basis: FunctionBasis, m: int, nu: int) -> FunctionBasis:
    """Nonzero eigenvalues of an ``(n+nu)`` block of a rank-``n`` ``m x m`` matrix."""
    n = basis.n
    if not 1 <= nu <= m - n - 1:
        raise TransformError(f"need 1 <= nu <= m - n - 1 (m={m}, n={n}, nu={nu})")
    return truncation_transform(basis, m, nu)


# ---------------------------------------------------------------------------
# restriction to a principal block

def _zero_integral_combinations(integrals):
    """Coefficient matrix ``R`` (n x n-1) whose columns have zero integral."""
    n = integrals.size
    big = np.abs(integrals).max()
    if not big > 0:
        raise TransformError("every basis function integrates to zero; the restricted "
                             "ensemble is not determined by this basis")
    # threshold pivoting: prefer the last function, as long as it is not tiny
    candidates = np.flatnonzero(np.abs(integrals) >= PIVOT_FRACTION * big)
    p = int(candidates[-1])
    R = np.zeros((n, n - 1))
    col = 0
    for j in range(n):
        if j == p:
            continue
        R[j, col] = 1.0
        R[p, col] = -integrals[j] / integrals[p]
        col += 1
    return R, p


def _primitive(f: BasisFunction, domain: Domain, label: str, *, epsabs=EVAL_EPSABS,
               epsrel=EVAL_EPSREL) -> BasisFunction:
    """``y -> ∫_lower^y f`` for a function whose total integral is zero.

    Past the middle of the support the equivalent ``-∫_y^inf f`` is used,
    so that both tails are computed without cancellation.
    """
    lo, hi = f.support
    lo = max(lo, domain.lower)
    if math.isfinite(lo) and math.isfinite(hi):
        mid = 0.5 * (lo + hi)
    elif domain is Domain.WHOLE_LINE and not math.isfinite(lo):
        mid = 0.0 if not math.isfinite(hi) else hi - f.scale
    else:
        mid = lo + f.scale
    bps = np.array([p for p in f.breakpoints if lo < p < hi])

    def compute(y):
        out = np.zeros(y.size)
        inside = (y > lo) & (y < hi)
        yy = y[inside]
        # ∫_lo^y f below the middle, ∫_hi^y f = -∫_y^hi f above it
        start = np.where(yy <= mid, lo, hi)
        cuts = np.broadcast_to(bps, (yy.size, bps.size)) if bps.size else None

        def integrand(x, i):
            return _safe(f, x)

        out[inside] = _integral_values(yy, start, yy, cuts, integrand, scale=f.scale,
                                       epsabs=epsabs, epsrel=epsrel)
        return out

    return BasisFunction(_pointwise(compute), label, f.decay, (lo, hi),
                         tuple(float(p) for p in bps), f.scale, quadrature_backed=True)


def restriction_transform(basis: FunctionBasis) -> FunctionBasis:
    """Eigenvalue basis of the ``(n-1) x (n-1)`` principal block of ``U X U*``.

    The functions are combined into ``n - 1`` combinations with zero
    integral, and each is replaced by its primitive from the left end of
    the domain.
    """
    n = basis.n
    if n < 2:
        raise TransformError("restriction needs a basis with at least two functions")
    nested = [f.for_nesting() for f in basis]

    def build(_x, F):
        return F

    integrals = np.atleast_1d(integrate_over_domain(nested, basis.domain, build))
    R, _ = _zero_integral_combinations(integrals)
    combos = FunctionBasis(basis.domain, tuple(nested), validate=False).recombine(
        R, validate=False)
    out = []
    for k in range(n - 1):
        out.append(_primitive(combos[k], basis.domain, f"prim(comb{k + 1})"))
    return FunctionBasis(basis.domain, tuple(out))


# ---------------------------------------------------------------------------
# rank-one modifications

def rank_one_add_transform(basis: FunctionBasis) -> FunctionBasis:
    """Basis after ``X -> X + v v*`` (or appending a Gaussian row).

    ``g_k(y) = ∫_0^inf e^(-x) f_k(y - x) dx = ∫_-inf^y e^(u - y) f_k(u) du``.
    """
    out = []
    for f in basis:
        fn = f.for_nesting()
        fa, fb = fn.support
        fa = max(fa, basis.domain.lower)
        bps = np.array([p for p in fn.breakpoints if fa < p < fb])

        def compute(y, fn=fn, fa=fa, fb=fb, bps=bps):
            out_ = np.zeros(y.size)
            live = y > fa
            yy = y[live]
            upper = np.minimum(yy, fb)
            lower = np.full(yy.size, fa)
            cuts = np.broadcast_to(bps, (yy.size, bps.size)) if bps.size else None

            def integrand(u, i):
                fv = _safe(fn, u)
                return np.where(fv == 0.0, 0.0, np.exp(u - yy[i]) * fv)

            out_[live] = _integral_values(yy, lower, upper, cuts, integrand,
                                          scale=fn.scale, center=np.minimum(yy, 0.0))
            return out_

        g_bps = _finite_points([p for p in (*fn.breakpoints, fb) if p > fa])
        out.append(BasisFunction(_pointwise(compute), f"e^-x conv ({f.label})",
                                 Decay.EXPONENTIAL, (fa, math.inf), g_bps,
                                 f.scale + 1.0, quadrature_backed=True))
    return FunctionBasis(basis.domain, tuple(out))


def _weight_function(nu: int) -> BasisFunction:
    def ev(y):
        with np.errstate(all="ignore"):
            out = np.exp(-y) * y ** (nu - 1)
        return np.where(np.isfinite(y), out, 0.0)

    return BasisFunction(ev, f"y^{nu - 1} e^-y", Decay.EXPONENTIAL, (0.0, math.inf))


def _extend_function(f: BasisFunction, nu: int, c: float) -> BasisFunction:
    """``y -> y^(nu-1) ∫_c^y x^(-nu) e^(x-y) f(x) dx`` (both exponentials merged)."""
    fn = f.for_nesting()
    fa, fb = fn.support
    fa = max(fa, 0.0)
    bps = np.array([p for p in fn.breakpoints if fa < p < fb])

    def compute(y):
        out = np.zeros(y.size)
        live = y > 0
        yy = y[live]
        a = np.full(yy.size, c)
        b = yy.copy()
        sign = np.where(a <= b, 1.0, -1.0)
        lo = np.clip(np.minimum(a, b), fa, fb)
        hi = np.clip(np.maximum(a, b), fa, fb)
        cuts = np.broadcast_to(bps, (yy.size, bps.size)) if bps.size else None

        def integrand(x, i):
            fv = _safe(fn, x)
            with np.errstate(all="ignore"):
                w = np.exp(x - yy[i]) * x ** (-nu)
                return np.where(fv == 0.0, 0.0, w * fv)

        vals = _integral_values(yy, lo, hi, cuts, integrand, scale=fn.scale)
        with np.errstate(all="ignore"):
            out[live] = sign * vals * yy ** (nu - 1)
        return out

    return BasisFunction(_pointwise(compute), f"ext({f.label})", Decay.EXPONENTIAL,
                         (0.0, math.inf), _finite_points(p for p in (*bps, fb) if p > 0),
                         max(f.scale, float(nu)), quadrature_backed=True)


def rank_one_extend_transform(basis: FunctionBasis, nu: int, c: float = 1.0) -> FunctionBasis:
    """Basis after appending a Gaussian column to an ``(n+nu) x n`` matrix.

    ``g_1(y) = y^(nu-1) e^(-y)`` and
    ``g_(k+1)(y) = y^(nu-1) e^(-y) ∫_c^y x^(-nu) e^x f_k(x) dx``.

    Parameters
    ----------
    nu : int
        Number of zero eigenvalues of ``X X*`` before the step, at least 1.
    c : float
        Anchor of the integrals.  Any ``c`` in ``(0, inf)`` gives the same
        span; ``0`` and ``inf`` are accepted after a convergence probe.
    """
    _require_half_line(basis, "rank_one_extend_transform")
    if nu < 1:
        raise TransformError("rank_one_extend_transform needs nu >= 1")
    if not c >= 0.0:
        raise TransformError("anchor c must lie in [0, inf]")
    funcs = [_weight_function(nu)] + [_extend_function(f, nu, c) for f in basis]
    if c == 0.0 or math.isinf(c):
        for g in funcs[1:]:
            probe = _PROBE_POINTS * max(g.scale, 1.0)
            try:
                vals = g(probe)
            except QuadratureError as exc:
                raise TransformError(
                    f"integrals anchored at c={c} diverge for {g.label}") from exc
            if not np.all(np.isfinite(vals)):
                raise TransformError(f"integrals anchored at c={c} diverge for {g.label}")
    return FunctionBasis(Domain.HALF_LINE, tuple(funcs))


def _border_function(f: BasisFunction) -> BasisFunction:
    """``y -> ∫_0^y e^((x^2 - y^2)/2) f(x) dx``."""
    fn = f.for_nesting()
    fa, fb = fn.support
    bps = np.array([p for p in (*fn.breakpoints, fa, fb) if np.isfinite(p) and p != 0.0])

    def compute(y):
        lo = np.clip(np.minimum(0.0, y), fa, fb)
        hi = np.clip(np.maximum(0.0, y), fa, fb)
        sign = np.where(y >= 0, 1.0, -1.0)
        cuts = np.broadcast_to(bps, (y.size, bps.size)) if bps.size else None

        def integrand(x, i):
            fv = _safe(fn, x)
            expo = 0.5 * (x * x - y[i] * y[i])
            prod = np.where(fv == 0.0, 0.0, np.exp(expo) * fv)
            bad = ~np.isfinite(prod) | (expo > OVERFLOW_EXPONENT)
            if bad.any():
                raise DivergenceError(
                    f"e^(x^2/2) f(x) overflows at x={x[bad][0]:.6g}", points=x[bad][:1])
            return prod

        return sign * _integral_values(y, lo, hi, cuts, integrand, scale=fn.scale)

    return BasisFunction(_pointwise(compute), f"border({f.label})", Decay.GAUSSIAN_TAIL,
                         (-math.inf, math.inf), (), max(f.scale, 1.0), quadrature_backed=True)


def border_extend_transform(basis: FunctionBasis) -> FunctionBasis:
    """Basis after bordering a Hermitian matrix with a Gaussian row and column.

    ``g_1(y) = e^(-y^2/2)`` and ``g_(k+1)(y) = ∫_0^y e^((x^2 - y^2)/2) f_k(x) dx``.
    """
    if basis.domain is not Domain.WHOLE_LINE:
        raise TransformError("border_extend_transform needs a basis on the whole line")
    g1 = BasisFunction(lambda y: np.exp(-0.5 * y * y), "e^-y^2/2", Decay.GAUSSIAN_TAIL)
    return FunctionBasis(Domain.WHOLE_LINE, (g1, *(_border_function(f) for f in basis)))


# ---------------------------------------------------------------------------
# pipelines

def output_size(n: int, step: PipelineStep) -> int:
    if step.kind is StepKind.RESTRICT:
        return n - 1
    if step.kind in (StepKind.RANK_ONE_EXTEND, StepKind.BORDER_EXTEND):
        return n + 1
    return n


def apply_step(basis: FunctionBasis, step: PipelineStep) -> FunctionBasis:
    k = step.kind
    if k is StepKind.GINIBRE_PRODUCT:
        return ginibre_transform(basis, step.nu)
    if k is StepKind.TRUNCATION_PRODUCT:
        return truncation_transform(basis, step.m, step.nu)
    if k is StepKind.RESTRICT:
        return restriction_transform(basis)
    if k is StepKind.POSDEF_RESTRICT:
        return posdef_restrict_transform(basis, step.m, step.nu)
    if k is StepKind.RANK_ONE_ADD:
        return rank_one_add_transform(basis)
    if k is StepKind.RANK_ONE_EXTEND:
        return rank_one_extend_transform(basis, step.nu, step.c)
    if k is StepKind.BORDER_EXTEND:
        return border_extend_transform(basis)
    raise TransformError(f"unhandled step {k}")


def apply_pipeline(basis: FunctionBasis, steps: Sequence) -> FunctionBasis:
    """Apply ``steps`` left to right; a failure names the offending step index."""
    current = basis
    for i, spec in enumerate(steps):
        try:
            step = parse_step(spec)
            current = apply_step(current, step)
        except (BasisError, QuadratureError) as exc:
            raise PipelineError(f"step {i} ({spec if isinstance(spec, dict) else step.kind.value})"
                                f" failed: {exc}", i, spec) from exc
    return current
