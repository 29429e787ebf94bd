"""Epistemic variance estimators.

IF
    Data variance ``Var(hbar(x0))`` from the NTK ridge predictor's influence
    function, ``(1/n^2) sum_i IF(z_i)^2``. No network training.
EV
    Procedural variance from the sample variance of ``m`` networks trained on
    the same data with independent initializations.
BA
    Variance of an ``m'``-member deep ensemble, ``sigma^2/n + tau^2/m'``, from
    ``K = m'`` single networks each trained on one of ``K`` disjoint batches.

EV and BA carry chi-squared pivot intervals,
``[s / (q_hi / dof), s / (q_lo / dof)]`` with ``q`` the chi-squared quantiles
at ``1 - alpha/2`` and ``alpha/2``.
"""
from dataclasses import dataclass, field

import numpy as np

from . import _random
from ._validation import as_vector, check_positive_int
from .chi2 import chi2_quantile
from .exceptions import (
    BatchTooSmallError,
    InputError,
    InsufficientReplicationsError,
    TrainingDivergedError,
    UnsupportedLambdaError,
)
from .network import as_trainer
from .ntk import population_ntk

__all__ = [
    "VarianceEstimate",
    "chi2_interval",
    "influence",
    "influence_all",
    "data_variance_if",
    "ensemble_predictions",
    "ensemble_variance",
    "batch_indices",
    "batching_from_predictions",
    "batching",
]

METHODS = ("IF", "EV", "BA")


@dataclass(frozen=True)
class VarianceEstimate:
    value: float
    method: str
    ci: tuple = None
    ci_level: float = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise InputError(f"unknown method {self.method!r}")
        if not self.value >= 0:
            raise InputError(f"variance estimate must be >= 0, got {self.value!r}")


def _check_level(ci_level):
    if not 0.0 < ci_level < 1.0:
        raise InputError(f"ci_level must lie in (0, 1), got {ci_level!r}")
    return float(ci_level)


def chi2_interval(point, dof, ci_level):
    """Chi-squared pivot interval for a variance-type statistic with ``dof`` degrees of freedom."""
    alpha = 1.0 - _check_level(ci_level)
    q_hi = chi2_quantile(dof, 1.0 - alpha / 2.0)
    q_lo = chi2_quantile(dof, alpha / 2.0)
    return (point / (q_hi / dof), point / (q_lo / dof))


def _require_positive_lambda(model):
    if not model.lam > 0:
        raise UnsupportedLambdaError("the influence function needs lambda > 0 (it scales with 1/lambda)")


def influence(model, z, x0):
    """Influence of a point mass at ``z = (z_x, z_y)`` on ``hbar(x0)``.

    ``IF(z) = K(x0, X)^T (K + lambda n I)^{-1} M_z(X) - M_z(x0)`` with
    ``M_z(x) = hbar(x) - h0(x) - (z_y - hbar(z_x)) K(z_x, x) / lambda``.
    """
    _require_positive_lambda(model)
    d = model.inputs.shape[1]
    z_x = as_vector(z[0], "z_x", dim=d)
    z_y = float(z[1])
    x0 = as_vector(x0, "x0", dim=d)
    lam = model.lam
    pts = np.vstack([x0, z_x])
    k_pts = model.kernel_to(pts)
    k0, kz = k_pts
    hbar_x0, hbar_z = model.h0(pts) + k_pts @ model.alpha
    h0_x0 = model.h0(x0[None, :])[0]
    k_z_x0 = population_ntk(z_x, x0, model.kernel_config)
    resid = z_y - hbar_z
    m_train = model.gram.entries @ model.alpha - (resid / lam) * kz
    m_x0 = hbar_x0 - h0_x0 - (resid / lam) * k_z_x0
    return float(k0 @ model.solve(m_train) - m_x0)


def influence_all(model, x0):
    """Influence of every training pair ``(x_i, y_i)`` at ``x0``.

    With ``v = (K + lambda n I)^{-1} K(X, x0)`` this is
    ``(v^T K alpha - K(x0, X)^T alpha) - (r_i / lambda)((K v)_i - K(x_i, x0))``,
    where ``r_i = y_i - hbar(x_i)``; one triangular solve pair covers all ``n`` points.
    """
    _require_positive_lambda(model)
    x0 = as_vector(x0, "x0", dim=model.inputs.shape[1])
    K = model.gram.entries
    k0 = model.kernel_to(x0[None, :])[0]
    v = model.solve(k0)
    Kalpha = K @ model.alpha
    common = v @ Kalpha - k0 @ model.alpha
    resid = model.labels - (model.h0_values + Kalpha)
    return common - (resid / model.lam) * (K @ v - k0)


def data_variance_if(model, x0):
    """``(1/n^2) sum_i IF(z_i)^2`` over the training pairs; point estimate only."""
    infl = influence_all(model, x0)
    n = infl.shape[0]
    value = float(infl @ infl) / n**2
    return VarianceEstimate(value=value, method="IF", meta={"n": n, "lambda": model.lam})


def ensemble_predictions(trainer, data, x0, m, seed):
    """Predictions at ``x0`` of ``m`` networks trained on ``data`` with derived seeds.

    ``trainer`` is a NetConfig or a ``(data, seed, x0) -> float`` callable.
    Member ``i`` uses seed ``derive_seed(seed, i)``.
    """
    m = check_positive_int(m, "m")
    trainer = as_trainer(trainer)
    out = []
    for i in range(m):
        s = _random.derive_seed(seed, i)
        try:
            out.append(float(trainer(data, s, x0)))
        except TrainingDivergedError as exc:
            exc.context.update(member=i)
            raise
    return np.asarray(out)


def ensemble_variance(predictions, ci_level=0.95):
    """Sample variance of ensemble members with its chi-squared interval."""
    p = as_vector(predictions, "predictions")
    m = p.shape[0]
    if m < 2:
        raise InsufficientReplicationsError(f"ensemble variance needs m >= 2 predictions, got {m}")
    value = float(np.var(p, ddof=1))
    ci = chi2_interval(value, m - 1, ci_level)
    return VarianceEstimate(value=value, method="EV", ci=ci, ci_level=ci_level, meta={"m": m})


def batch_indices(n, k, seed):
    """Seeded shuffle of ``range(n)`` cut into ``k`` contiguous batches of ``n // k``.

    The ``n mod k`` leftover points are dropped so every batch has equal size.
    """
    k = check_positive_int(k, "k", minimum=2)
    if n < 2 * k:
        raise BatchTooSmallError(f"need n >= 2k for {k} batches, got n={n}")
    perm = _random.rng(seed, 0).permutation(n)
    size = n // k
    return [perm[i * size:(i + 1) * size] for i in range(k)]


def batching_from_predictions(psi, ci_level=0.95):
    """``S^2 / K`` from ``K`` batch predictors, with the chi-squared pivot interval."""
    psi = as_vector(psi, "batch predictions")
    k = psi.shape[0]
    if k < 2:
        raise InsufficientReplicationsError(f"batching needs at least 2 batches, got {k}")
    value = float(np.var(psi, ddof=1)) / k
    ci = chi2_interval(value, k - 1, ci_level)
    return VarianceEstimate(value=value, method="BA", ci=ci, ci_level=ci_level, meta={"k": k})


def batching(data, k, trainer, x0, ci_level=0.95, seed=0):
    """Batching estimate of the ``k``-member deep ensemble's epistemic variance.

    One network per batch (not an ensemble per batch). ``trainer`` is a
    NetConfig or a callable ``trainer(batch, seed, x0)`` returning the trained
    prediction at ``x0``; see :class:`epivar.network.NetTrainer`. ``seed``
    drives the shuffle, and batch ``i`` is trained with seed
    ``derive_seed(seed, 1, i)``.
    """
    trainer = as_trainer(trainer)
    batches = batch_indices(data.n, k, seed)
    psi = []
    for i, idx in enumerate(batches):
        batch = data.subset(idx, batch=i)
        try:
            psi.append(float(trainer(batch, _random.derive_seed(seed, 1, i), x0)))
        except TrainingDivergedError as exc:
            exc.context.update(batch=i)
            raise
    est = batching_from_predictions(psi, ci_level)
    est.meta.update(n=data.n, batch_size=data.n // k, seed=int(seed), predictions=psi)
    return est
