"""Quick invariant suite behind ``epivar selfcheck``.

Each check returns ``(passed, detail)``; none trains a network, so the whole
suite runs in a few seconds.
"""
import numpy as np

from . import krr
from ._random import rng
from .chi2 import chi2_cdf, chi2_quantile
from .estimators import influence
from .ntk import KernelConfig, ntk_gram, population_ntk
from .oracle import decompose

__all__ = ["CHECKS", "run_selfcheck"]


def _kernel_diagonal():
    gen = rng(0, 1)
    worst = 0.0
    for depth in (1, 2, 3):
        X = gen.normal(size=(20, 3))
        K = ntk_gram(X, KernelConfig(depth=depth)).entries
        expect = (depth + 1) * np.sum(X**2, axis=1)
        worst = max(worst, float(np.max(np.abs(np.diag(K) - expect) / expect)))
    return worst < 1e-12, f"max relative diagonal error {worst:.2e}"


def _kernel_psd_symmetric():
    X = rng(0, 2).normal(size=(30, 4))
    K = ntk_gram(X, KernelConfig(depth=2)).entries
    asym = float(np.max(np.abs(K - K.T)))
    lam_min = float(np.linalg.eigvalsh(K).min())
    return asym == 0.0 and lam_min > -1e-10 * np.abs(K).max(), f"asymmetry {asym:.1e}, min eigenvalue {lam_min:.2e}"


def _kernel_homogeneity():
    gen = rng(0, 3)
    x, z = gen.normal(size=3), gen.normal(size=3)
    base = population_ntk(x, z)
    err = max(abs(population_ntk(c * x, z) - c * base) / abs(base) for c in (0.5, 2.0, 7.0))
    err2 = abs(population_ntk(3 * x, 3 * z) - 9 * base) / abs(base)
    return max(err, err2) < 1e-12, f"homogeneity error {max(err, err2):.2e}"


def _orthogonal_value():
    v = population_ntk(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    return abs(v - 1 / np.pi) < 1e-15, f"K(e1, e2) = {v!r}"


def _decomposition_identities():
    gen = rng(0, 4)
    worst = 0.0
    for _ in range(1000):
        vs, ve = gen.uniform(0, 1, size=2)
        m = int(gen.integers(2, 50))
        tau2, s2n = decompose(vs, ve, m, warn=False)
        worst = max(worst, abs(tau2 + s2n - vs) / max(vs, 1e-300), abs(s2n + tau2 / m - ve) / max(ve, 1e-300))
    return worst < 1e-12, f"max relative identity error {worst:.2e}"


def _chi2_roundtrip():
    worst = 0.0
    for df in (1, 2, 4, 9, 49):
        for p in (0.025, 0.5, 0.975):
            worst = max(worst, abs(chi2_cdf(df, chi2_quantile(df, p)) - p))
    return worst < 1e-10, f"max |cdf(quantile(p)) - p| {worst:.2e}"


def _influence_mixture():
    gen = rng(0, 5)
    X = gen.normal(size=(8, 2))
    y = gen.normal(size=8)
    lam, eps = 0.1, 1e-5
    z_x, z_y, x0 = gen.normal(size=2), float(gen.normal()), gen.normal(size=2)
    model = krr.fit((X, y), lam)
    analytic = influence(model, (z_x, z_y), x0)
    # refit on the mixture (1 - eps) * empirical + eps * delta_z with weighted squared loss
    Xa = np.vstack([X, z_x])
    w = np.r_[np.full(8, (1 - eps) / 8), eps]
    K = ntk_gram(Xa, KernelConfig()).entries
    c = np.linalg.solve(np.diag(w) @ K + lam * np.eye(9), w * np.r_[y, z_y])
    k0 = np.array([population_ntk(x0, xi) for xi in Xa])
    fd = (k0 @ c - krr.predict(model, x0)) / eps
    rel = abs(fd - analytic) / max(abs(analytic), 1e-12)
    return rel < 1e-3, f"relative gap to eps-mixture refit {rel:.2e}"


CHECKS = {
    "kernel-diagonal": _kernel_diagonal,
    "kernel-psd-symmetric": _kernel_psd_symmetric,
    "kernel-homogeneity": _kernel_homogeneity,
    "kernel-orthogonal-1/pi": _orthogonal_value,
    "decomposition-identities": _decomposition_identities,
    "chi2-quantile-roundtrip": _chi2_roundtrip,
    "influence-vs-mixture-refit": _influence_mixture,
}


def run_selfcheck(out=print):
    """Run every check, report one line each, return True iff all pass."""
    ok = True
    for name, check in CHECKS.items():
        try:
            passed, detail = check()
        except Exception as exc:  # a crashing check is a failed check
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        ok &= passed
        out(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
    return ok
