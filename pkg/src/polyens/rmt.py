"""Random matrices and the matrix-level counterparts of every transform.

All samplers are batched: they draw a stack of independent matrices of
shape ``(batch, rows, cols)`` so that one numpy call handles a whole
chunk of Monte Carlo trials.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .transforms import PipelineStep, StepKind, parse_step

__all__ = [
    "RmtError",
    "DegeneracyError",
    "RngStream",
    "MatrixState",
    "sample_ginibre",
    "sample_haar_unitary",
    "sample_gue",
    "hermitian_eigenvalues",
    "squared_singular_values",
    "nonzero_eigenvalues",
    "numerical_rank",
    "initial_state",
    "matrix_step",
    "extract_spectrum",
    "ExperimentConfig",
    "SpectraSample",
    "sample_spectra",
    "sample_pipeline_spectrum",
]

RANK_CUTOFF = 1e-10
DEGENERACY_GAP = 1e-12
EIG_RESIDUAL = 1e-10
CHUNK_TRIALS = 2000
MAX_REDRAW_ROUNDS = 50
EXTRACTIONS = ("eig", "ssv", "nonzero-eig")


class RmtError(ValueError):
    pass


class DegeneracyError(RmtError):
    pass


class RngStream:
    """Independent random stream identified by ``(seed, stream)``.

    Two instances with the same pair produce the same draws.  Streams with
    different ids are statistically independent (``SeedSequence`` spawn
    keys).
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        if not (0 <= self.seed < 2 ** 64 and 0 <= self.stream < 2 ** 64):
            raise RmtError("seed and stream id must be 64-bit unsigned integers")
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream})"

    def normal(self, shape, scale=1.0) -> np.ndarray:
        return self.generator.normal(0.0, scale, size=shape)

    def complex_normal(self, shape) -> np.ndarray:
        """Real and imaginary parts independent with variance 1/2."""
        s = math.sqrt(0.5)
        return self.normal(shape, s) + 1j * self.normal(shape, s)


def _batch_shape(batch, *dims):
    return dims if batch is None else (batch, *dims)


def sample_ginibre(rows: int, cols: int, rng: RngStream, batch: int | None = None) -> np.ndarray:
    """Matrix of independent standard complex Gaussians (``E|z|^2 = 1``)."""
    if rows < 1 or cols < 1:
        raise RmtError("rows and cols must be >= 1")
    return rng.complex_normal(_batch_shape(batch, rows, cols))


def sample_haar_unitary(m: int, rng: RngStream, batch: int | None = None) -> np.ndarray:
    """Haar unitary via QR of a Ginibre matrix with the phases of ``diag(R)`` removed."""
    if m < 1:
        raise RmtError("m must be >= 1")
    for _attempt in range(2):
        Z = sample_ginibre(m, m, rng, batch)
        Q, R = np.linalg.qr(Z)
        d = np.diagonal(R, axis1=-2, axis2=-1)
        if np.all(np.abs(d) > 1e-300):
            return Q * (d / np.abs(d))[..., None, :]
    raise RmtError("QR of the Ginibre sample broke down twice")


def sample_gue(n: int, rng: RngStream, batch: int | None = None) -> np.ndarray:
    """GUE matrix: real N(0,1) diagonal, complex off-diagonal with N(0,1/2) parts."""
    if n < 1:
        raise RmtError("n must be >= 1")
    A = sample_ginibre(n, n, rng, batch)
    return (A + np.conj(np.swapaxes(A, -1, -2))) / math.sqrt(2.0)


def _herm_check(X):
    Xh = np.conj(np.swapaxes(X, -1, -2))
    scale = max(1.0, float(np.abs(X).max()) if X.size else 1.0)
    if np.abs(X - Xh).max(initial=0.0) > 1e-12 * scale:
        raise RmtError("matrix is not Hermitian")


def hermitian_eigenvalues(X, *, check: bool = True) -> np.ndarray:
    """Ascending eigenvalues of a Hermitian matrix or a stack of them."""
    X = np.asarray(X)
    if check:
        _herm_check(X)
    try:
        w, V = np.linalg.eigh(X)
    except np.linalg.LinAlgError as exc:
        raise RmtError(f"eigensolver failed: {exc}") from exc
    if check:
        resid = np.abs(X @ V - V * w[..., None, :]).max(axis=(-2, -1))
        norm = np.abs(w).max(axis=-1)
        if np.any(resid > EIG_RESIDUAL * np.maximum(norm, 1e-300)):
            raise RmtError("eigen-decomposition residual too large")
    return w


def squared_singular_values(X) -> np.ndarray:
    """Ascending eigenvalues of ``X* X`` (one per column; zeros if rows < cols)."""
    X = np.asarray(X)
    rows, cols = X.shape[-2:]
    try:
        s = np.linalg.svd(X, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise RmtError(f"SVD failed: {exc}") from exc
    s2 = s[..., ::-1] ** 2
    if rows < cols:
        pad = np.zeros(s2.shape[:-1] + (cols - rows,))
        s2 = np.concatenate([pad, s2], axis=-1)
    return s2


def numerical_rank(eigenvalues) -> np.ndarray:
    """Number of eigenvalues above ``RANK_CUTOFF`` times the largest one."""
    w = np.asarray(eigenvalues)
    top = np.abs(w).max(axis=-1, keepdims=True)
    return np.sum(w > RANK_CUTOFF * top, axis=-1)


def nonzero_eigenvalues(w, count: int | None = None) -> np.ndarray:
    """The largest ``count`` eigenvalues (default: the numerical rank of the first row)."""
    w = np.asarray(w)
    if count is None:
        count = int(np.atleast_1d(numerical_rank(w)).ravel()[0])
    return w[..., w.shape[-1] - count:]


# ---------------------------------------------------------------------------
# matrix-level steps

@dataclass(frozen=True)
class MatrixState:
    """A batch of matrices and how their spectrum is read.

    ``hermitian`` states are square Hermitian ``X`` (eigenvalues); the
    others are rectangular ``X`` whose squared singular values are the
    eigenvalues of ``X* X``.
    """

    matrix: np.ndarray
    hermitian: bool

    @property
    def batch(self) -> int:
        return self.matrix.shape[0]

    @property
    def rows(self) -> int:
        return self.matrix.shape[-2]

    @property
    def cols(self) -> int:
        return self.matrix.shape[-1]


def _as_state(X, hermitian=None) -> tuple[MatrixState, bool]:
    if isinstance(X, MatrixState):
        return X, False
    X = np.asarray(X, dtype=complex)
    single = X.ndim == 2
    if single:
        X = X[None]
    if hermitian is None:
        hermitian = X.shape[-1] == X.shape[-2] and np.allclose(
            X, np.conj(np.swapaxes(X, -1, -2)), rtol=0, atol=1e-12)
    return MatrixState(X, bool(hermitian)), single


def _conj_t(A):
    return np.conj(np.swapaxes(A, -1, -2))


def _vector(rng, batch, length, forced):
    if forced is not None:
        v = np.asarray(forced, dtype=complex)
        return np.broadcast_to(v, (batch, length)).copy()
    return rng.complex_normal((batch, length))


def _posdef_rank(state: MatrixState) -> int:
    if state.hermitian:
        w = hermitian_eigenvalues(state.matrix, check=False)
    else:
        w = squared_singular_values(state.matrix)
    ranks = np.unique(numerical_rank(w))
    if ranks.size != 1:
        raise RmtError("matrices in the batch have different ranks")
    return int(ranks[0])


def matrix_step(X, step, rng: RngStream, *, v=None, c=None, hermitian=None):
    """Apply one pipeline step to a matrix (or a :class:`MatrixState` batch).

    Parameters
    ----------
    X : array_like or MatrixState
        A single matrix, a stack ``(batch, rows, cols)``, or a state.
        Plain arrays are taken as Hermitian when square and conjugate
        symmetric, unless ``hermitian`` says otherwise.
    step : PipelineStep or dict
    rng : RngStream
    v, c : optional
        Force the Gaussian vector and, for bordering, the corner entry.

    Returns
    -------
    Same kind of object as ``X``.
    """
    step = parse_step(step)
    state, single = _as_state(X, hermitian)
    out = _apply(state, step, rng, v, c)
    if isinstance(X, MatrixState):
        return out
    return out.matrix[0] if single else out.matrix


def _apply(state: MatrixState, step: PipelineStep, rng, v, c) -> MatrixState:
    A = state.matrix
    B = state.batch
    k = step.kind
    if k is StepKind.GINIBRE_PRODUCT:
        if state.hermitian:
            raise RmtError("ginibre-product acts on a rectangular matrix")
        l, n = state.rows, state.cols
        if n > l:
            raise RmtError(f"ginibre-product needs rows >= cols (got {l} x {n})")
        G = sample_ginibre(n + step.nu, l, rng, B)
        return MatrixState(G @ A, False)
    if k is StepKind.TRUNCATION_PRODUCT:
        if state.hermitian:
            raise RmtError("truncation-product acts on a rectangular matrix")
        l, n, m, nu = state.rows, state.cols, step.m, step.nu
        if not n <= l <= m:
            raise RmtError(f"truncation-product needs n <= l <= m (n={n}, l={l}, m={m})")
        if m < n + nu + 1:
            raise RmtError(f"truncation-product needs m >= n + nu + 1 (m={m}, n={n}, nu={nu})")
        U = sample_haar_unitary(m, rng, B)
        return MatrixState(U[:, : n + nu, :l] @ A, False)
    if k is StepKind.RESTRICT:
        n = state.cols
        if n < 2:
            raise RmtError("restrict needs a matrix of order at least 2")
        U = sample_haar_unitary(n, rng, B)
        if state.hermitian:
            Y = (U @ A @ _conj_t(U))[:, : n - 1, : n - 1]
            return MatrixState(0.5 * (Y + _conj_t(Y)), True)
        return MatrixState((A @ U)[:, :, : n - 1], False)
    if k is StepKind.POSDEF_RESTRICT:
        m, nu = step.m, step.nu
        size = state.rows
        if size != m:
            raise RmtError(f"posdef-restrict(m={m}) needs an m x m positive semidefinite "
                           f"matrix (got order {size})")
        n = _posdef_rank(state)
        if not 1 <= nu <= m - n - 1:
            raise RmtError(f"posdef-restrict needs 1 <= nu <= m - n - 1 (m={m}, n={n}, nu={nu})")
        U = sample_haar_unitary(m, rng, B)
        if state.hermitian:
            Y = (U @ A @ _conj_t(U))[:, : n + nu, : n + nu]
            return MatrixState(0.5 * (Y + _conj_t(Y)), True)
        return MatrixState(U[:, : n + nu, :] @ A, False)
    if k is StepKind.RANK_ONE_ADD:
        if state.hermitian:
            w = _vector(rng, B, state.rows, v)
            return MatrixState(A + w[:, :, None] * np.conj(w)[:, None, :], True)
        w = _vector(rng, B, state.cols, v)
        return MatrixState(np.concatenate([A, np.conj(w)[:, None, :]], axis=1), False)
    if k is StepKind.RANK_ONE_EXTEND:
        if state.hermitian:
            n = _posdef_rank(state)
            if state.rows - n != step.nu:
                raise RmtError(f"rank-one-extend(nu={step.nu}) needs exactly nu zero "
                               f"eigenvalues (order {state.rows}, rank {n})")
            w = _vector(rng, B, state.rows, v)
            return MatrixState(A + w[:, :, None] * np.conj(w)[:, None, :], True)
        if state.rows - state.cols != step.nu:
            raise RmtError(f"rank-one-extend(nu={step.nu}) needs an (n+nu) x n matrix "
                           f"(got {state.rows} x {state.cols})")
        w = _vector(rng, B, state.rows, v)
        return MatrixState(np.concatenate([A, w[:, :, None]], axis=2), False)
    if k is StepKind.BORDER_EXTEND:
        if not state.hermitian:
            raise RmtError("border-extend acts on a Hermitian matrix")
        n = state.rows
        w = _vector(rng, B, n, v)
        corner = (np.broadcast_to(np.asarray(c, dtype=float), (B,)) if c is not None
                  else rng.normal((B,)))
        Y = np.zeros((B, n + 1, n + 1), dtype=complex)
        Y[:, :n, :n] = A
        Y[:, :n, n] = w
        Y[:, n, :n] = np.conj(w)
        Y[:, n, n] = corner
        return MatrixState(Y, True)
    raise RmtError(f"unhandled step {k}")


# ---------------------------------------------------------------------------
# initial models and extraction

def initial_state(spec: dict, rng: RngStream, batch: int) -> MatrixState:
    """Draw ``batch`` copies of the initial matrix model.

    Models: ``{"model": "ginibre", "rows": l, "cols": n}``,
    ``{"model": "gue", "n": n}``,
    ``{"model": "fixed", "spectrum": [...], "zeros": k}`` (``diag`` under a
    fresh Haar conjugation, with ``k`` extra zero eigenvalues) and
    ``{"model": "wishart", "size": m, "rank": n}`` (``G G*`` for an
    ``m x n`` Ginibre ``G``).
    """
    model = str(spec.get("model", "")).lower()
    if model == "ginibre":
        return MatrixState(sample_ginibre(int(spec["rows"]), int(spec["cols"]), rng, batch), False)
    if model == "gue":
        return MatrixState(sample_gue(int(spec["n"]), rng, batch), True)
    if model == "fixed":
        x = np.concatenate([np.zeros(int(spec.get("zeros", 0))),
                            np.asarray(spec["spectrum"], dtype=float)])
        if x.size < 1:
            raise RmtError("fixed spectrum must not be empty")
        U = sample_haar_unitary(x.size, rng, batch)
        X = (U * x[None, None, :]) @ _conj_t(U)
        return MatrixState(0.5 * (X + _conj_t(X)), True)
    if model == "wishart":
        m, n = int(spec["size"]), int(spec["rank"])
        if not 1 <= n <= m:
            raise RmtError("wishart needs 1 <= rank <= size")
        G = sample_ginibre(m, n, rng, batch)
        X = G @ _conj_t(G)
        return MatrixState(0.5 * (X + _conj_t(X)), True)
    raise RmtError(f"unknown initial model {spec.get('model')!r}")


def extract_spectrum(state: MatrixState, extract: str) -> np.ndarray:
    """Spectra of a batch: ``eig``, ``ssv`` or ``nonzero-eig`` (rank cutoff 1e-10)."""
    if extract == "eig":
        if not state.hermitian:
            raise RmtError("'eig' extraction needs a Hermitian matrix; use 'ssv'")
        return hermitian_eigenvalues(state.matrix, check=False)
    if extract == "ssv":
        if state.hermitian:
            raise RmtError("'ssv' extraction needs a rectangular matrix; use 'eig'")
        return squared_singular_values(state.matrix)
    if extract == "nonzero-eig":
        if state.hermitian:
            w = hermitian_eigenvalues(state.matrix, check=False)
        else:
            w = squared_singular_values(state.matrix)
        return w
    raise RmtError(f"unknown extraction {extract!r}")


# ---------------------------------------------------------------------------
# experiments

@dataclass(frozen=True)
class ExperimentConfig:
    """Matrix-level experiment: initial model, steps, extraction, trials, seed."""

    initial: dict
    steps: tuple[PipelineStep, ...] = ()
    extract: str = "eig"
    trials: int = 1000
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(parse_step(s) for s in self.steps))
        if self.extract not in EXTRACTIONS:
            raise RmtError(f"extract must be one of {EXTRACTIONS}")
        if int(self.trials) < 0:
            raise RmtError("trials must be >= 0")
        if self.seed is not None and not 0 <= int(self.seed) < 2 ** 64:
            raise RmtError("seed must be a 64-bit unsigned integer")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict) or "initial" not in d:
            raise RmtError("experiment config needs an 'initial' model")
        seed = d.get("seed")
        return cls(dict(d["initial"]), tuple(d.get("steps", ())), d.get("extract", "eig"),
                   int(d.get("trials", 1000)), None if seed is None else int(seed))

    def to_dict(self) -> dict:
        return {"initial": self.initial, "steps": [s.to_dict() for s in self.steps],
                "extract": self.extract, "trials": int(self.trials), "seed": self.seed}

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return ExperimentConfig(self.initial, self.steps, self.extract, self.trials, int(seed))

    def config_hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


@dataclass
class SpectraSample:
    """Spectra of all trials, with the pre-last-step spectra when requested."""

    spectra: np.ndarray
    parents: np.ndarray | None
    rejected: int
    config_hash: str
    seed: int
    extra: dict = field(default_factory=dict)


def _degenerate(w):
    if w.shape[-1] < 2:
        return np.zeros(w.shape[0], dtype=bool)
    gaps = np.diff(w, axis=-1)
    scale = np.maximum(1.0, np.abs(w).max(axis=-1))
    return (gaps < DEGENERACY_GAP * scale[:, None]).any(axis=-1)


def _run_chunk(config: ExperimentConfig, size: int, stream: int, keep_parents: bool):
    rng = RngStream(config.seed, stream)
    steps = config.steps
    spectra, parents = [], []
    rejected = 0
    need = size
    count = {}
    for _round in range(MAX_REDRAW_ROUNDS):
        state = initial_state(config.initial, rng, need)
        parent = None
        for i, step in enumerate(steps):
            if keep_parents and i == len(steps) - 1:
                parent = _trim(extract_spectrum(state, config.extract), config.extract,
                               count, "parent")
            try:
                state = _apply(state, step, rng, None, None)
            except RmtError as exc:
                raise RmtError(f"step {i} ({step.kind.value}) failed: {exc}") from exc
        child = _trim(extract_spectrum(state, config.extract), config.extract, count, "child")
        bad = _degenerate(child)
        if parent is not None:
            bad |= _degenerate(parent)
        bad |= ~np.isfinite(child).all(axis=-1)
        good = ~bad
        spectra.append(child[good])
        if parent is not None:
            parents.append(parent[good])
        rejected += int(bad.sum())
        need = int(bad.sum())
        if need == 0:
            break
    else:
        raise DegeneracyError(f"could not draw non-degenerate spectra after "
                              f"{MAX_REDRAW_ROUNDS} rounds")
    return (np.concatenate(spectra), np.concatenate(parents) if keep_parents and parents
            else None, rejected)


def _trim(w, extract, count, key):
    """For ``nonzero-eig`` keep the top ``rank`` eigenvalues, fixed on first use."""
    if extract != "nonzero-eig":
        return w
    if key not in count:
        count[key] = int(np.bincount(numerical_rank(w)).argmax())
    k = count[key]
    out = w[..., w.shape[-1] - k:]
    # trials of a different rank are degenerate; poison them so they are redrawn
    wrong = numerical_rank(w) != k
    if wrong.any():
        out = out.copy()
        out[wrong] = np.nan
    return out


def sample_spectra(config: ExperimentConfig, *, threads: int = 1, keep_parents: bool = False,
                   chunk: int = CHUNK_TRIALS) -> SpectraSample:
    """Run ``config.trials`` independent trials.

    Trials are split into chunks of ``chunk``; chunk ``i`` draws from
    ``RngStream(seed, i)``, so results do not depend on ``threads``.
    A seed of ``None`` is replaced by fresh OS entropy, recorded in the
    result.
    """
    if config.seed is None:
        config = config.with_seed(int(np.random.SeedSequence().entropy % 2 ** 63))
    trials = int(config.trials)
    if trials < 1:
        raise RmtError("need at least one trial")
    sizes = [min(chunk, trials - s) for s in range(0, trials, chunk)]
    jobs = list(enumerate(sizes))

    def run(job):
        i, size = job
        return _run_chunk(config, size, i, keep_parents)

    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, jobs))
    else:
        parts = [run(j) for j in jobs]
    spectra = np.concatenate([p[0] for p in parts])
    parents = np.concatenate([p[1] for p in parts]) if keep_parents else None
    rejected = sum(p[2] for p in parts)
    return SpectraSample(spectra, parents, rejected, config.config_hash(), int(config.seed))


def sample_pipeline_spectrum(config: ExperimentConfig, rng: RngStream) -> np.ndarray:
    """One trial: draw the initial model, apply every step, extract the spectrum."""
    state = initial_state(config.initial, rng, 1)
    for i, step in enumerate(config.steps):
        try:
            state = _apply(state, step, rng, None, None)
        except RmtError as exc:
            raise RmtError(f"step {i} ({step.kind.value}) failed: {exc}") from exc
    w = extract_spectrum(state, config.extract)
    if config.extract == "nonzero-eig":
        w = nonzero_eigenvalues(w)
    return w[0]
