"""Checks that sampled spectra follow the predicted polynomial ensembles."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .basis import Domain, FunctionBasis
from .ensemble import (
    CorrelationKernel,
    PolynomialEnsemble,
    average_char_poly,
    correlation_kernel,
    ensemble_from_basis,
    vandermonde,
)
from .quadrature import integrate
from .rmt import ExperimentConfig, sample_spectra
from .transforms import StepKind, apply_pipeline, parse_step

__all__ = [
    "VerificationError",
    "InterlacingMode",
    "interlacing_mask",
    "check_interlacing",
    "conditional_spectral_density",
    "Histogram",
    "empirical_density",
    "predicted_level_density",
    "equal_probability_edges",
    "bin_probabilities",
    "density_distance",
    "char_poly_coefficients",
    "acp_z_scores",
    "Check",
    "VerificationReport",
    "DEFAULT_THRESHOLDS",
    "run_verification",
]

DEFAULT_THRESHOLDS = {"l1": 0.05, "acp_z": 3.0, "interlacing_failures": 0.0}
DEFAULT_BINS = 40
_TAIL = 1e-13


class VerificationError(ValueError):
    pass


class InterlacingMode(enum.Enum):
    """Inequality chain between a parent spectrum ``x`` and a child ``y``.

    MINOR: ``x1 < y1 < x2 < ... < y_(n-1) < xn`` (principal block of order n-1).
    POSDEF_MINOR: ``0 < y1 < x1 < y2 < ... < yn < xn`` (one row and column
    removed from a positive semidefinite matrix of rank n).
    RANK_ONE_ADD: ``x1 < y1 < x2 < ... < xn < yn``.
    RANK_ONE_EXTEND: ``0 < y1 < x1 < ... < xn < y_(n+1)``.
    BORDER: ``y1 < x1 < y2 < ... < xn < y_(n+1)``.
    """

    MINOR = "minor"
    POSDEF_MINOR = "posdef-minor"
    RANK_ONE_ADD = "rank-one-add"
    RANK_ONE_EXTEND = "rank-one-extend"
    BORDER = "border"


_CHILD_LEN = {
    InterlacingMode.MINOR: -1,
    InterlacingMode.POSDEF_MINOR: 0,
    InterlacingMode.RANK_ONE_ADD: 0,
    InterlacingMode.RANK_ONE_EXTEND: 1,
    InterlacingMode.BORDER: 1,
}


def _as_mode(mode) -> InterlacingMode:
    return mode if isinstance(mode, InterlacingMode) else InterlacingMode(str(mode).lower())


def _chain(x, y, mode):
    """Interleave parent and child into the sequence that must increase strictly."""
    n = x.shape[-1]
    k = y.shape[-1]
    if k != n + _CHILD_LEN[mode]:
        raise VerificationError(f"{mode.value}: parent of length {n} needs a child of length "
                                f"{n + _CHILD_LEN[mode]}, got {k}")
    B = x.shape[:-1]
    zero = np.zeros(B + (1,))
    if mode is InterlacingMode.MINOR:
        parts = [x[..., :1]] + [np.stack([y[..., j], x[..., j + 1]], -1) for j in range(k)]
    elif mode is InterlacingMode.POSDEF_MINOR:
        parts = [zero] + [np.stack([y[..., j], x[..., j]], -1) for j in range(n)]
    elif mode is InterlacingMode.RANK_ONE_ADD:
        parts = [np.stack([x[..., j], y[..., j]], -1) for j in range(n)]
    elif mode is InterlacingMode.RANK_ONE_EXTEND:
        parts = [zero] + [np.stack([y[..., j], x[..., j]], -1) for j in range(n)] + [y[..., -1:]]
    else:
        parts = [np.stack([y[..., j], x[..., j]], -1) for j in range(n)] + [y[..., -1:]]
    return np.concatenate(parts, axis=-1)


def interlacing_mask(parents, children, mode) -> np.ndarray:
    """Row-wise :func:`check_interlacing` for stacks of spectra."""
    mode = _as_mode(mode)
    x = np.atleast_2d(np.asarray(parents, dtype=float))
    y = np.atleast_2d(np.asarray(children, dtype=float))
    seq = _chain(x, y, mode)
    return np.all(np.diff(seq, axis=-1) > 0, axis=-1)


def check_interlacing(parent, child, mode) -> bool:
    """Whether ``child`` strictly interlaces ``parent`` in the sense of ``mode``."""
    return bool(interlacing_mask(parent, child, mode)[0])


def conditional_spectral_density(parent, child, mode, *, m: int | None = None) -> float:
    """Density of the child spectrum given the parent, on ordered tuples.

    MINOR: ``(n-1)! Δ(y) / Δ(x)``.
    POSDEF_MINOR (needs ``m``, the order of the matrix):
    ``(m-1)!/(m-n-1)! prod y^(m-n-1) / x^(m-n) Δ(y)/Δ(x)``.
    RANK_ONE_ADD: ``prod e^(-(y_j - x_j)) Δ(y)/Δ(x)``.
    BORDER: ``(2π)^(-1/2) prod e^(-y^2/2) prod e^(x^2/2) Δ(y)/Δ(x)``.
    Zero when the interlacing fails.
    """
    mode = _as_mode(mode)
    x = np.asarray(parent, dtype=float)
    y = np.asarray(child, dtype=float)
    if x.ndim != 1 or y.ndim != 1:
        raise VerificationError("parent and child must be 1-D spectra")
    if np.any(np.diff(x) <= 0):
        raise VerificationError("parent spectrum must be strictly increasing")
    n = x.size
    if not check_interlacing(x, y, mode):
        return 0.0
    ratio = vandermonde(y) / vandermonde(x)
    if mode is InterlacingMode.MINOR:
        return float(math.factorial(n - 1) * ratio)
    if mode is InterlacingMode.POSDEF_MINOR:
        if m is None or m < n + 1:
            raise VerificationError("posdef-minor density needs m >= n + 1")
        const = math.factorial(m - 1) / math.factorial(m - n - 1)
        logs = (m - n - 1) * np.log(y).sum() - (m - n) * np.log(x).sum()
        return float(const * math.exp(logs) * ratio)
    if mode is InterlacingMode.RANK_ONE_ADD:
        return float(math.exp(-(y - x).sum()) * ratio)
    if mode is InterlacingMode.BORDER:
        expo = -0.5 * (y * y).sum() + 0.5 * (x * x).sum()
        return float(math.exp(expo) * ratio / math.sqrt(2.0 * math.pi))
    raise VerificationError(f"no closed-form conditional density for mode {mode.value}")


# ---------------------------------------------------------------------------
# level densities

@dataclass(frozen=True)
class Histogram:
    """Pooled eigenvalue counts on bins ``[e_i, e_(i+1))``."""

    edges: np.ndarray
    counts: np.ndarray
    total: int
    below: int = 0
    above: int = 0

    def __post_init__(self):
        if self.counts.shape != (self.edges.size - 1,):
            raise VerificationError("counts must have one entry per bin")
        if self.counts.sum() + self.below + self.above != self.total:
            raise VerificationError("counts and out-of-range tallies must add up to total")

    @property
    def outside(self) -> int:
        return self.below + self.above


def _edges(edges):
    e = np.asarray(edges, dtype=float)
    if e.ndim != 1 or e.size < 2 or np.any(np.diff(e) <= 0):
        raise VerificationError("edges must be a strictly increasing vector")
    return e


def empirical_density(spectra, edges) -> Histogram:
    """Pool every eigenvalue of every spectrum into half-open bins."""
    e = _edges(edges)
    if isinstance(spectra, np.ndarray):
        values = spectra.ravel()
    else:
        spectra = list(spectra)
        if not spectra:
            raise VerificationError("no spectra given")
        values = np.concatenate([np.ravel(s) for s in spectra])
    if values.size == 0:
        raise VerificationError("no eigenvalues given")
    idx = np.searchsorted(e, values, side="right") - 1
    below = int(np.sum(idx < 0))
    above = int(np.sum(idx >= e.size - 1))
    inside = (idx >= 0) & (idx < e.size - 1)
    counts = np.bincount(idx[inside], minlength=e.size - 1)
    return Histogram(e, counts, int(values.size), below, above)


def predicted_level_density(ens, x):
    """One-point function ``K_n(x, x)`` (integrates to ``n``)."""
    kernel = ens if isinstance(ens, CorrelationKernel) else correlation_kernel(ens)
    out = kernel.diagonal(np.asarray(x, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def bin_probabilities(density: Callable, edges, n: int = 1) -> np.ndarray:
    """``∫_bin density / n`` for every bin (infinite outer edges allowed)."""
    e = _edges(edges)

    def f(x, _owner):
        return np.asarray(density(x), dtype=float) / n

    return integrate(f, e[:-1], e[1:], epsabs=1e-12, epsrel=1e-9).value


def density_distance(h: Histogram, predicted: Callable, n: int = 1) -> float:
    """Binned L1 distance between the normalised histogram and ``predicted / n``.

    Mass outside the bins is compared as one more cell, so the result lies
    in ``[0, 2]``.
    """
    if h.total <= 0:
        raise VerificationError("histogram is empty")
    P = bin_probabilities(predicted, h.edges, n)
    emp = h.counts / h.total
    inside = np.abs(emp - P).sum()
    outside = abs(h.outside / h.total - (1.0 - P.sum()))
    return float(min(2.0, inside + outside))


def _support_range(density, domain: Domain, scale=1.0):
    """Finite window outside which ``density`` carries negligible mass."""
    def reach(anchor, direction):
        offs = scale * 2.0 ** np.arange(-3, 41)
        vals = np.abs(density(anchor + direction * offs)) * offs
        peak = vals.max()
        small = vals <= _TAIL * peak
        tail = np.flip(np.cumprod(np.flip(small))).astype(bool)
        hits = np.flatnonzero(tail)
        return anchor + direction * (offs[hits[0]] if hits.size else offs[-1])

    lo = 0.0 if domain is Domain.HALF_LINE else reach(0.0, -1.0)
    hi = reach(0.0 if domain is Domain.WHOLE_LINE else 0.0, +1.0)
    return lo, hi


def equal_probability_edges(density: Callable, n: int, domain: Domain, bins: int = DEFAULT_BINS,
                            *, scale: float = 1.0, cells: int = 400) -> np.ndarray:
    """Bin edges with (nearly) equal predicted mass in every bin.

    The outer edges are the ends of the domain (``0`` or ``-inf``, and
    ``+inf``); interior edges invert the cumulative distribution of
    ``density / n`` tabulated on ``cells`` sub-intervals.
    """
    lo, hi = _support_range(density, domain, scale)
    grid = np.linspace(lo, hi, cells + 1)

    def f(x, _owner):
        return np.asarray(density(x), dtype=float) / n

    mass = integrate(f, grid[:-1], grid[1:], epsabs=1e-13, epsrel=1e-9).value
    cdf = np.concatenate([[0.0], np.cumsum(np.maximum(mass, 0.0))])
    cdf /= cdf[-1]
    targets = np.arange(1, bins) / bins
    # strictly increasing copy of the cdf for inversion
    keep = np.concatenate([[True], np.diff(cdf) > 0])
    inner = np.interp(targets, cdf[keep], grid[keep])
    first = domain.lower
    edges = np.concatenate([[first], inner, [math.inf]])
    return np.unique(edges)


# ---------------------------------------------------------------------------
# average characteristic polynomial

def char_poly_coefficients(spectra) -> np.ndarray:
    """Coefficients (increasing degree) of ``prod_j (x - x_j)`` for each spectrum."""
    S = np.atleast_2d(np.asarray(spectra, dtype=float))
    B, n = S.shape
    c = np.zeros((B, n + 1))
    c[:, 0] = 1.0
    # multiply by (x - s) one root at a time; c holds increasing-degree coefficients
    for j in range(n):
        shifted = np.zeros_like(c)
        shifted[:, 1:] = c[:, :-1]
        c = shifted - S[:, j:j + 1] * c
    return c


def acp_z_scores(spectra, predicted: np.ndarray) -> np.ndarray:
    """``(mean - predicted) / standard error`` for every non-leading coefficient."""
    C = char_poly_coefficients(spectra)[:, :-1]
    B = C.shape[0]
    if B < 2:
        raise VerificationError("need at least two spectra for standard errors")
    mean = C.mean(axis=0)
    se = C.std(axis=0, ddof=1) / math.sqrt(B)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (mean - np.asarray(predicted)[:-1]) / se
    return np.where(se > 0, z, np.where(np.isclose(mean, predicted[:-1]), 0.0, np.inf))


# ---------------------------------------------------------------------------
# reports

@dataclass(frozen=True)
class Check:
    name: str
    value: float
    threshold: float

    @property
    def passed(self) -> bool:
        return bool(self.value <= self.threshold)

    def to_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "threshold": self.threshold,
                "passed": self.passed}


@dataclass
class VerificationReport:
    """Outcome of one verification run; passes when every check passes."""

    config_hash: str
    trials: int
    rejected: int
    seed: int
    checks: list[Check]
    plot: dict = field(default_factory=dict, repr=False)
    details: dict = field(default_factory=dict, repr=False)

    @property
    def primary(self) -> Check:
        return self.checks[0]

    @property
    def statistic(self) -> str:
        return self.primary.name

    @property
    def value(self) -> float:
        return self.primary.value

    @property
    def threshold(self) -> float:
        return self.primary.threshold

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "trials": self.trials,
            "rejected_degenerate": self.rejected,
            "statistic": self.statistic,
            "value": self.value,
            "threshold": self.threshold,
            "passed": self.passed,
            "checks": [c.to_dict() for c in self.checks],
            "details": self.details,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        lines = [f"config hash  {self.config_hash}",
                 f"seed         {self.seed}",
                 f"trials       {self.trials}",
                 f"rejected     {self.rejected}",
                 "",
                 f"{'check':<26}{'value':>14}{'threshold':>14}  result"]
        for c in self.checks:
            lines.append(f"{c.name:<26}{c.value:>14.6g}{c.threshold:>14.6g}  "
                         f"{'pass' if c.passed else 'FAIL'}")
        lines.append("")
        lines.append(f"overall      {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines) + "\n"

    def plot_csv(self) -> str:
        rows = ["x,empirical,predicted"]
        for x, e, p in zip(self.plot.get("x", ()), self.plot.get("empirical", ()),
                           self.plot.get("predicted", ())):
            rows.append(f"{x!r},{e!r},{p!r}")
        return "\n".join(rows) + "\n"


def _last_step_mode(steps, n: int) -> InterlacingMode | None:
    if not steps:
        return None
    last = steps[-1]
    k = last.kind
    if k is StepKind.RESTRICT:
        return InterlacingMode.MINOR
    if k is StepKind.POSDEF_RESTRICT:
        # a single removed row and column gives a strict chain; larger cuts do not
        return InterlacingMode.POSDEF_MINOR if last.nu == last.m - n - 1 else None
    if k is StepKind.RANK_ONE_ADD:
        return InterlacingMode.RANK_ONE_ADD
    if k is StepKind.RANK_ONE_EXTEND:
        return InterlacingMode.RANK_ONE_EXTEND
    if k is StepKind.BORDER_EXTEND:
        return InterlacingMode.BORDER
    return None


def run_verification(config: ExperimentConfig, basis: FunctionBasis, steps: Sequence = (),
                     *, thresholds: dict | None = None, threads: int = 1,
                     bins: int = DEFAULT_BINS) -> VerificationReport:
    """Sample the matrix pipeline and compare it with the transformed basis.

    Checks, in order: binned L1 distance of the pooled level density
    (``l1``), the largest ACP coefficient z-score (``acp_z``), and, when
    the last step has an interlacing law, the fraction of trials that
    violate it (``interlacing_failures``).
    """
    th = dict(DEFAULT_THRESHOLDS)
    th.update(thresholds or {})
    if int(config.trials) < 1:
        raise VerificationError("verification needs at least one trial")
    steps = [parse_step(s) for s in steps]
    if len(steps) != len(config.steps):
        raise VerificationError(f"function pipeline has {len(steps)} steps but the matrix "
                                f"pipeline has {len(config.steps)}")
    for i, (a, b) in enumerate(zip(steps, config.steps)):
        if a.kind is not b.kind:
            raise VerificationError(f"step {i}: function step {a.kind.value} does not match "
                                    f"matrix step {b.kind.value}")

    predicted_basis = apply_pipeline(basis, steps)
    ens = ensemble_from_basis(predicted_basis)
    kernel = correlation_kernel(ens)
    n = ens.n

    mode = _last_step_mode(config.steps, n)
    sample = sample_spectra(config, threads=threads, keep_parents=mode is not None)
    spectra = sample.spectra
    if spectra.shape[1] != n:
        raise VerificationError(f"sampled spectra have {spectra.shape[1]} values but the "
                                f"predicted ensemble has n={n}")

    density = kernel.diagonal
    scale = max(f.scale for f in predicted_basis)
    edges = equal_probability_edges(density, n, predicted_basis.domain, bins, scale=scale)
    hist = empirical_density(spectra, edges)
    P = bin_probabilities(density, edges, n)
    l1 = float(min(2.0, np.abs(hist.counts / hist.total - P).sum()
                   + abs(hist.outside / hist.total - (1.0 - P.sum()))))
    checks = [Check("level-density-l1", l1, th["l1"])]

    acp = average_char_poly(ens)
    z = acp_z_scores(spectra, acp.coefficients)
    checks.append(Check("acp-max-abs-z", float(np.max(np.abs(z))), th["acp_z"]))

    details = {
        "n": n,
        "bins": int(edges.size - 1),
        "acp_predicted": acp.coefficients.tolist(),
        "acp_monte_carlo": char_poly_coefficients(spectra).mean(axis=0).tolist(),
        "acp_z": [float(v) for v in z],
    }
    if mode is not None:
        ok = interlacing_mask(sample.parents, spectra, mode)
        rate = float(1.0 - ok.mean())
        checks.append(Check("interlacing-failure-rate", rate, th["interlacing_failures"]))
        details["interlacing_mode"] = mode.value

    finite = np.isfinite(edges[:-1]) & np.isfinite(edges[1:])
    width = np.diff(edges)[finite]
    centres = 0.5 * (edges[:-1] + edges[1:])[finite]
    plot = {
        "x": centres.tolist(),
        "empirical": (hist.counts[finite] / hist.total / width).tolist(),
        "predicted": (P[finite] / width).tolist(),
    }
    return VerificationReport(sample.config_hash, int(config.trials), sample.rejected,
                              sample.seed, checks, plot, details)
