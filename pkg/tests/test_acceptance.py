"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line (see ``conftest.py``); the lines are
printed again in the terminal summary of the pytest run.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate as sint
from scipy import stats

from oracles import monic_laguerre, tensor_gauss_laguerre
from polyens.basis import BasisFunction, Domain, hermite, laguerre, make_basis
from polyens.cli import main
from polyens.ensemble import (
    andreief_det,
    average_char_poly,
    correlation_kernel,
    ensemble_from_basis,
    span_equal,
)
from polyens.rmt import ExperimentConfig, sample_spectra
from polyens.transforms import (
    apply_pipeline,
    border_extend_transform,
    ginibre_transform,
    parse_pipeline,
    restriction_transform,
    truncation_transform,
)
from polyens.verify import (
    acp_z_scores,
    conditional_spectral_density,
    interlacing_mask,
    run_verification,
)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
L1_MAX = 0.05

pytestmark = pytest.mark.slow


def load(name):
    raw = json.loads((CONFIGS / name).read_text())
    return (make_basis(raw["basis"]), parse_pipeline(raw["pipeline"]),
            ExperimentConfig.from_dict(raw["experiment"]))


def verify_config(name, rec):
    basis, steps, cfg = load(name)
    assert cfg.trials == 10_000
    rep = run_verification(cfg, basis, steps, threads=1)
    rec.note(f"{name}: L1 {rep.value:.4f}, max|z| {rep.checks[1].value:.2f}")
    assert rep.value < L1_MAX
    assert rep.passed, rep.to_text()
    return rep


def test_criterion_01_ginibre_product(record):
    with record(1, "Ginibre product: L1 < 0.05 at 10^4 trials, under 60 s") as rec:
        t0 = time.perf_counter()
        verify_config("ginibre-product.json", rec)
        elapsed = time.perf_counter() - t0
        rec.note(f"{elapsed:.1f} s")
        assert elapsed < 60


def test_criterion_02_truncation(record):
    with record(2, "Truncation product: L1 < 0.05; m=1000 rescaled basis within 2e-2") as rec:
        verify_config("truncation-product.json", rec)

        # large m: T behaves like G / sqrt(m), so m^nu g^(m)(y/m) -> g(y)
        b = laguerre(1, 2)
        m, nu = 1000, 1
        big = truncation_transform(b, m, nu)
        lim = ginibre_transform(b, nu)
        y = np.linspace(0.0, 15.0, 61)
        scaled = m ** nu * big(y / m)
        target = lim(y)
        err = np.max(np.abs(scaled - target)) / np.max(np.abs(target))
        Km = correlation_kernel(ensemble_from_basis(big))
        Kg = correlation_kernel(ensemble_from_basis(lim))
        derr = np.max(np.abs(Km.diagonal(y / m) / m - Kg.diagonal(y))) / Kg.diagonal(y).max()
        rec.note(f"basis rel err {err:.2e}, level density rel err {derr:.2e}")
        assert err < 2e-2
        assert derr < 2e-2


def test_criterion_03_restriction(record):
    with record(3, "Restriction: hermite(n) -> hermite(n-1) spans for n=2..5; GUE minors L1") as rec:
        for n in range(2, 6):
            assert span_equal(restriction_transform(hermite(n)), hermite(n - 1), tol=1e-8), n
        rec.note("spans n=2..5 equal")
        verify_config("restrict-hermite3.json", rec)


def test_criterion_04_laguerre_induction(record):
    with record(4, "Laguerre induction to (4,3): span laguerre(1,3); L1 < 0.05") as rec:
        basis, steps, _ = load("laguerre-induction.json")
        assert [s.kind.value for s in steps] == ["rank-one-add", "rank-one-extend",
                                                 "rank-one-add", "rank-one-extend",
                                                 "rank-one-add"]
        assert span_equal(apply_pipeline(basis, steps), laguerre(1, 3), tol=1e-8)
        rec.note("span equal")
        verify_config("laguerre-induction.json", rec)

        # plain 4x3 Ginibre squared singular values against laguerre(1, 3)
        cfg = ExperimentConfig({"model": "ginibre", "rows": 4, "cols": 3}, [], "ssv", 10_000, 42)
        rep = run_verification(cfg, laguerre(1, 3))
        rec.note(f"ginibre(4,3): L1 {rep.value:.4f}")
        assert rep.value < L1_MAX and rep.passed


def test_criterion_05_gue_induction(record):
    with record(5, "GUE induction: two border steps span hermite(3); g3 exact; L1") as rec:
        out = apply_pipeline(hermite(1), parse_pipeline([{"step": "border-extend"}] * 2))
        assert span_equal(out, hermite(3), tol=1e-8)
        assert span_equal(border_extend_transform(border_extend_transform(hermite(1))),
                          hermite(3), tol=1e-8)
        y = np.linspace(-5.0, 5.0, 41)
        y = y[y != 0]
        worst = 0.0
        for k in (1, 2):
            exact = y ** k * np.exp(-0.5 * y * y) / k
            worst = max(worst, np.max(np.abs(out[k](y) / exact - 1)))
        rec.note(f"g_(k+1) max rel err {worst:.1e}")
        assert worst < 1e-8
        verify_config("gue-bordering.json", rec)


@pytest.mark.parametrize("family", ["laguerre", "hermite"])
def test_criterion_06_kernel_identities(record, family):
    with record(6, "Kernel identities (trace, reproducing, biorthogonality), n <= 4") as rec:
        worst = [0.0, 0.0, 0.0]
        for n in range(1, 5):
            basis = laguerre(0, n) if family == "laguerre" else hermite(n)
            K = correlation_kernel(ensemble_from_basis(basis))
            lo, hi = (0.0, np.inf) if family == "laguerre" else (-np.inf, np.inf)
            # independent trace by adaptive quadrature of K(x, x)
            tr = sint.quad(K.diagonal, lo, hi, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
            assert abs(K.trace() - n) < 1e-8
            assert abs(tr - n) < 1e-8
            grid = np.linspace(0.2, 6.0, 10) if family == "laguerre" else np.linspace(-3, 3, 10)
            rep = K.reproducing_residual(grid)
            bio = K.biorthogonality_residual()
            # one reproducing pair cross-checked with scipy
            x0, y0 = grid[2], grid[7]
            kk = sint.quad(lambda z: K(x0, z) * K(z, y0), lo, hi, epsabs=1e-13, limit=200)[0]
            assert abs(kk - K(x0, y0)) < 1e-6
            assert rep < 1e-6
            assert bio < 1e-8
            worst = [max(worst[0], abs(tr - n)), max(worst[1], rep), max(worst[2], bio)]
        rec.note(f"{family}: trace {worst[0]:.1e}, reproducing {worst[1]:.1e}, "
                 f"biorthogonality {worst[2]:.1e}")


def _brute_force_andreief(phis, psis, n):
    def integrand(x):
        A = np.array([[f(xk) for xk in x] for f in phis])
        B = np.array([[g(xk) for xk in x] for g in psis])
        return np.linalg.det(A) * np.linalg.det(B)
    return tensor_gauss_laguerre(integrand, n, nodes=12) / math.factorial(n)


@pytest.mark.parametrize("n", [2, 3])
def test_criterion_07_andreief(record, n):
    with record(7, "Andreief identity vs brute-force quadrature, n = 2, 3") as rec:
        phis = [lambda x, j=j: x ** j * np.exp(-x / 2) for j in range(n)]
        psis = [lambda x, k=k: (1 + x) * x ** (k + 1) * np.exp(-x / 2) for k in range(n)]
        want = _brute_force_andreief(phis, psis, n)
        got = andreief_det([BasisFunction(f, "phi", support=(0, math.inf)) for f in phis],
                           [BasisFunction(g, "psi", support=(0, math.inf)) for g in psis],
                           Domain.HALF_LINE)
        rel = abs(got - want) / abs(want)
        rec.note(f"n={n}: {got:.10g} vs {want:.10g}")
        assert rel < 1e-6


INTERLACING_RUNS = {
    "minor": ({"model": "gue", "n": 3}, [{"step": "restrict"}], "eig"),
    "posdef-minor": ({"model": "wishart", "size": 4, "rank": 2},
                     [{"step": "posdef-restrict", "m": 4, "nu": 1}], "nonzero-eig"),
    "rank-one-add": ({"model": "gue", "n": 3}, [{"step": "rank-one-add"}], "eig"),
    "border": ({"model": "gue", "n": 3}, [{"step": "border-extend"}], "eig"),
}


@pytest.mark.parametrize("mode", list(INTERLACING_RUNS))
def test_criterion_08_interlacing(record, mode):
    with record(8, "Interlacing laws hold in 10^4/10^4 samples; rejections < 10") as rec:
        initial, steps, extract = INTERLACING_RUNS[mode]
        s = sample_spectra(ExperimentConfig(initial, steps, extract, 10_000, 42),
                           keep_parents=True)
        ok = interlacing_mask(s.parents, s.spectra, mode)
        rec.note(f"{mode}: {int(ok.sum())}/10000, rejected {s.rejected}")
        assert ok.all()
        assert s.rejected < 10


def _normalisation(mode, parent, m=None):
    f = lambda *y: conditional_spectral_density(parent, sorted(y), mode, m=m)  # noqa: E731
    x = parent
    opts = {"epsabs": 1e-10, "epsrel": 1e-10}
    if mode == "minor":
        if len(x) == 2:
            return sint.quad(f, x[0], x[1])[0]
        return sint.nquad(f, [[x[0], x[1]], [x[1], x[2]]], opts=opts)[0]
    if mode == "posdef-minor":
        if len(x) == 1:
            return sint.quad(f, 0, x[0])[0]
        return sint.nquad(f, [[0, x[0]], [x[0], x[1]]], opts=opts)[0]
    if mode == "rank-one-add":
        if len(x) == 1:
            return sint.quad(f, x[0], np.inf)[0]
        return sint.nquad(f, [[x[0], x[1]], [x[1], np.inf]], opts=opts)[0]
    if len(x) == 1:
        return sint.nquad(f, [[-np.inf, x[0]], [x[0], np.inf]], opts=opts)[0]
    return sint.nquad(f, [[-np.inf, x[0]], [x[0], x[1]], [x[1], np.inf]], opts=opts)[0]


def test_criterion_09_conditional_densities(record):
    with record(9, "Conditional densities: KS p > 0.001 at 10^5; normalised within 1e-4") as rec:
        cfg = ExperimentConfig({"model": "fixed", "spectrum": [0, 1]}, [{"step": "restrict"}],
                               "eig", 100_000, 42)
        p_minor = stats.kstest(sample_spectra(cfg).spectra[:, 0], "uniform").pvalue
        cfg = ExperimentConfig({"model": "fixed", "spectrum": [0]}, [{"step": "rank-one-add"}],
                               "eig", 100_000, 42)
        p_add = stats.kstest(sample_spectra(cfg).spectra[:, 0], "expon").pvalue
        rec.note(f"KS p minor {p_minor:.3f}, rank-one-add {p_add:.3f}")
        assert p_minor > 0.001 and p_add > 0.001

        cases = [("minor", [0.0, 1.0], None), ("minor", [-1.0, 0.5, 2.0], None),
                 ("posdef-minor", [1.3], 4), ("posdef-minor", [0.4, 1.7], 5),
                 ("rank-one-add", [0.0], None), ("rank-one-add", [-0.5, 1.2], None),
                 ("border", [0.0], None), ("border", [-0.3, 0.8], None)]
        worst = 0.0
        for mode, parent, m in cases:
            worst = max(worst, abs(_normalisation(mode, parent, m) - 1.0))
        rec.note(f"max |integral - 1| {worst:.1e}")
        assert worst < 1e-4


def test_criterion_10_acp(record):
    with record(10, "ACP: Monte Carlo within 3 standard errors; P_1(x) = x - 1") as rec:
        p1 = average_char_poly(ensemble_from_basis(laguerre(0, 1)))
        assert np.allclose(p1.coefficients, [-1.0, 1.0], rtol=0, atol=1e-12)
        pred = average_char_poly(ensemble_from_basis(laguerre(0, 2))).coefficients
        assert np.allclose(pred, monic_laguerre(0, 2), atol=1e-10)
        cfg = ExperimentConfig({"model": "ginibre", "rows": 2, "cols": 2}, [], "ssv",
                               100_000, 42)
        z = acp_z_scores(sample_spectra(cfg).spectra, pred)
        rec.note("z = " + ", ".join(f"{v:.2f}" for v in z))
        assert np.all(np.abs(z) < 3)


def test_criterion_11_negative_control(record, tmp_path, capsys):
    with record(11, "Negative control: gue(2) vs laguerre(0,2) gives L1 > 0.3, exit 1") as rec:
        out = tmp_path / "neg.json"
        code = main(["verify", "--config", str(CONFIGS / "negative-control.json"),
                     "--format", "json", "--out", str(out), "--threads", "1"])
        capsys.readouterr()
        rep = json.loads(out.read_text())
        rec.note(f"L1 {rep['value']:.3f}, exit {code}")
        assert code == 1
        assert rep["value"] > 0.3
        assert rep["passed"] is False
