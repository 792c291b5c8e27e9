"""Batched adaptive Gauss-Legendre quadrature.

Many one-dimensional integrals, each with its own limits, are refined
together: every refinement round evaluates the integrand once, on the
nodes of all active panels of all integrals.  This keeps nested
integrals (a transformed basis function evaluated on a vector of points)
inside numpy instead of a Python loop per point.

Infinite limits are mapped onto ``[0, 1)`` with ``x = a + s t / (1 - t)``;
a doubly infinite range is split at ``center`` first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "EPSABS",
    "EPSREL",
    "QuadratureError",
    "DivergenceError",
    "QuadResult",
    "integrate",
    "integrate_scalar",
]

EPSABS = 1e-10
EPSREL = 1e-8

_GL_X, _GL_W = np.polynomial.legendre.leggauss(10)
_T = 0.5 * (_GL_X + 1.0)
_W = 0.5 * _GL_W

_FINITE, _UPPER_INF, _LOWER_INF = 0, 1, 2
# most panels one integral may hold at once
_MAX_ACTIVE = 20_000
# memory guard over all integrals of one call
_MAX_TOTAL = 500_000
# leftover error allowed above the requested tolerance before giving up
_SLACK = 1e3
# errors below this multiple of ∫|f| are rounding noise
_ROUNDOFF = 50 * np.finfo(float).eps


class QuadratureError(ArithmeticError):
    """Adaptive refinement did not reach the requested tolerance."""

    def __init__(self, message, error=None, indices=()):
        super().__init__(message)
        self.error = error
        self.indices = tuple(int(i) for i in indices)


class DivergenceError(QuadratureError):
    """The integral diverges (or overflows) at one or more evaluation points."""

    def __init__(self, message, points=(), error=None):
        super().__init__(message, error=error)
        self.points = tuple(float(p) for p in np.ravel(points))


@dataclass(frozen=True)
class QuadResult:
    value: np.ndarray
    error: np.ndarray
    converged: np.ndarray


def _map(t, kind, base, length, scale):
    """Return x(t) and dx/dt for each segment kind."""
    x = np.empty_like(t)
    jac = np.empty_like(t)
    fin = kind == _FINITE
    x[fin] = base[fin] + length[fin] * t[fin]
    jac[fin] = length[fin]
    inf = ~fin
    if inf.any():
        ti = t[inf]
        u = ti / (1.0 - ti)
        d = scale[inf] / (1.0 - ti) ** 2
        sgn = np.where(kind[inf] == _UPPER_INF, 1.0, -1.0)
        x[inf] = base[inf] + sgn * scale[inf] * u
        jac[inf] = d
    return x, jac


def integrate(func, a, b, *, epsabs=EPSABS, epsrel=EPSREL, scale=1.0, center=0.0,
              max_depth=100, raise_on_failure=True) -> QuadResult:
    """Integrate ``func`` over ``[a[i], b[i]]`` for every ``i`` at once.

    Parameters
    ----------
    func : callable
        ``func(x, owner)`` receives a 1-D array of abscissae and an
        integer array of the same length naming the integral each
        abscissa belongs to.  It returns values of shape ``(len(x),)`` or
        ``(len(x), K)`` for a vector-valued integrand.
    a, b : array_like
        Limits, broadcast together; may be infinite.  ``a > b`` yields
        the negated integral over ``[b, a]``.
    epsabs, epsrel : float
        Target error ``max(epsabs, epsrel * |I|)`` per integral and per
        component of a vector integrand.
    scale : float or array_like
        Length scale of the map used on infinite ranges.
    center : float or array_like
        Split point for ranges infinite at both ends.

    Returns
    -------
    QuadResult
        ``value`` has shape ``(N,)`` or ``(N, K)``.
    """
    a, b, scale, center = np.broadcast_arrays(
        np.atleast_1d(np.asarray(a, dtype=float)),
        np.atleast_1d(np.asarray(b, dtype=float)),
        np.atleast_1d(np.asarray(scale, dtype=float)),
        np.atleast_1d(np.asarray(center, dtype=float)),
    )
    a, b = a.ravel(), b.ravel()
    scale, center = scale.ravel(), center.ravel()
    n_int = a.size
    sign = np.where(a <= b, 1.0, -1.0)
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    if np.isnan(lo).any() or np.isnan(hi).any():
        raise ValueError("integration limits must not be NaN")

    # segments: (owner, kind, base, length, scale)
    seg = {"owner": [], "kind": [], "base": [], "length": [], "scale": []}

    def add(owner, kind, base, length, s):
        seg["owner"].append(owner)
        seg["kind"].append(np.full(owner.size, kind))
        seg["base"].append(base)
        seg["length"].append(length)
        seg["scale"].append(s)

    idx = np.arange(n_int)
    live = lo < hi
    fin = live & np.isfinite(lo) & np.isfinite(hi)
    add(idx[fin], _FINITE, lo[fin], hi[fin] - lo[fin], scale[fin])
    up = live & np.isfinite(lo) & np.isposinf(hi)
    add(idx[up], _UPPER_INF, lo[up], np.zeros(up.sum()), scale[up])
    dn = live & np.isneginf(lo) & np.isfinite(hi)
    add(idx[dn], _LOWER_INF, hi[dn], np.zeros(dn.sum()), scale[dn])
    both = live & np.isneginf(lo) & np.isposinf(hi)
    add(idx[both], _LOWER_INF, center[both], np.zeros(both.sum()), scale[both])
    add(idx[both], _UPPER_INF, center[both], np.zeros(both.sum()), scale[both])

    s_owner = np.concatenate(seg["owner"]).astype(np.intp)
    s_kind = np.concatenate(seg["kind"])
    s_base = np.concatenate(seg["base"])
    s_len = np.concatenate(seg["length"])
    s_scale = np.concatenate(seg["scale"])
    n_seg_of_owner = np.bincount(s_owner, minlength=n_int).astype(float)

    ncomp = None

    def rule(p_seg, ta, tb):
        nonlocal ncomp
        t = ta[:, None] + (tb - ta)[:, None] * _T[None, :]
        seg_rep = np.repeat(p_seg, _T.size)
        x, jac = _map(t.ravel(), s_kind[seg_rep], s_base[seg_rep], s_len[seg_rep],
                      s_scale[seg_rep])
        vals = np.asarray(func(x, s_owner[seg_rep]), dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if ncomp is None:
            ncomp = vals.shape[1]
        vals = vals.reshape(ta.size, _T.size, ncomp)
        jw = (jac.reshape(ta.size, _T.size) * _W[None, :]) * (tb - ta)[:, None]
        with np.errstate(invalid="ignore", over="ignore"):
            out = np.einsum("pq,pqk->pk", jw, vals)
            mag = np.einsum("pq,pqk->pk", np.abs(jw), np.abs(vals))
        return out, mag

    # four starting panels per segment
    starts = np.linspace(0.0, 1.0, 5)
    p_seg = np.repeat(np.arange(s_owner.size), 4)
    p_a = np.tile(starts[:-1], s_owner.size)
    p_b = np.tile(starts[1:], s_owner.size)
    p_depth = np.zeros(p_seg.size, dtype=int)

    if p_seg.size == 0:
        # every integral has an empty range
        zero = np.zeros(n_int)
        probe = np.asarray(func(np.zeros(0), np.zeros(0, dtype=np.intp)), dtype=float)
        if probe.ndim == 2:
            zero = np.zeros((n_int, probe.shape[1]))
        return QuadResult(zero, np.zeros(n_int), np.ones(n_int, dtype=bool))

    p_whole = rule(p_seg, p_a, p_b)[0]
    acc_val = np.zeros((n_int, ncomp))
    acc_abs = np.zeros((n_int, ncomp))
    acc_err = np.zeros((n_int, ncomp))
    forced = np.zeros(n_int, dtype=bool)
    bad = np.zeros(n_int, dtype=bool)

    while p_seg.size:
        active = np.bincount(s_owner[p_seg], minlength=n_int)
        if active.max() > _MAX_ACTIVE or p_seg.size > _MAX_TOTAL:
            owners = np.flatnonzero(active >= min(_MAX_ACTIVE, active.max()))
            raise QuadratureError("adaptive quadrature exceeded its panel budget",
                                  indices=owners)
        mid = 0.5 * (p_a + p_b)
        halves, mags = rule(np.concatenate([p_seg, p_seg]), np.concatenate([p_a, mid]),
                            np.concatenate([mid, p_b]))
        left, right = halves[: p_seg.size], halves[p_seg.size:]
        est = left + right
        mag = mags[: p_seg.size] + mags[p_seg.size:]
        owner = s_owner[p_seg]

        finite = np.isfinite(est).all(axis=1) & np.isfinite(p_whole).all(axis=1)
        if not finite.all():
            bad[owner[~finite]] = True
        err = np.abs(est - p_whole)
        err[~finite] = 0.0
        est[~finite] = 0.0
        mag[~finite] = 0.0
        keep_live = ~bad[owner]

        tot = acc_val.copy()
        np.add.at(tot, owner, est)
        tot_err = acc_err.copy()
        np.add.at(tot_err, owner, err)
        tot_abs = acc_abs.copy()
        np.add.at(tot_abs, owner, mag)
        tol = np.maximum(np.maximum(epsabs, epsrel * np.abs(tot)), _ROUNDOFF * tot_abs)
        owner_done = (tot_err <= tol).all(axis=1)

        width = p_b - p_a
        share = (width / n_seg_of_owner[owner])[:, None]
        local_ok = ((err <= tol[owner] * share) | (err <= _ROUNDOFF * mag)).all(axis=1)
        exhausted = (p_depth >= max_depth) | (
            width <= 8 * np.finfo(float).eps * np.maximum(np.abs(p_a), np.abs(p_b)))
        accept = owner_done[owner] | local_ok | exhausted | ~keep_live
        forced_now = exhausted & ~(owner_done[owner] | local_ok)
        forced[owner[forced_now]] = True

        acc = accept & keep_live
        np.add.at(acc_val, owner[acc], est[acc])
        np.add.at(acc_err, owner[acc], err[acc])
        np.add.at(acc_abs, owner[acc], mag[acc])

        ref = ~accept
        p_seg = np.concatenate([p_seg[ref], p_seg[ref]])
        p_a, p_b = np.concatenate([p_a[ref], mid[ref]]), np.concatenate([mid[ref], p_b[ref]])
        p_whole = np.concatenate([left[ref], right[ref]])
        p_depth = np.concatenate([p_depth[ref], p_depth[ref]]) + 1

    value = acc_val * sign[:, None]
    tol = np.maximum(np.maximum(epsabs, epsrel * np.abs(value)), _ROUNDOFF * acc_abs)
    converged = ~bad & ~(forced & (acc_err > _SLACK * tol).any(axis=1))
    acc_err = acc_err.max(axis=1)
    if raise_on_failure and not converged.all():
        failed = np.flatnonzero(~converged)
        if bad[failed].any():
            raise DivergenceError(
                f"integrand is not finite for {int(bad.sum())} of {n_int} integrals",
                points=failed, error=acc_err[failed])
        raise QuadratureError(
            f"quadrature did not converge for {failed.size} of {n_int} integrals "
            f"(worst error estimate {acc_err[failed].max():.3g})",
            error=acc_err[failed], indices=failed)
    if ncomp == 1:
        value = value[:, 0]
    return QuadResult(value, acc_err, converged)


def integrate_scalar(f, a, b, **kwargs) -> float:
    """Integrate a vectorised ``f(x)`` over a single interval."""
    res = integrate(lambda x, _owner: f(x), a, b, **kwargs)
    return float(res.value[0])
