"""Retraining-based ground truth for the variance decomposition.

Each of ``J`` trials draws a fresh dataset and trains ``m'`` networks on it
with independent initializations. Across trials,

    Var(single)   = sigma^2/n + tau^2
    Var(ensemble) = sigma^2/n + tau^2 / m'

so the two empirical variances determine both components:

    tau^2       = m'/(m'-1) (Var(single) - Var(ensemble))
    sigma^2/n   = m'/(m'-1) Var(ensemble) - Var(single)/(m'-1)
"""
import warnings
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from . import _random
from ._parallel import pmap
from ._validation import as_vector, check_positive_int
from .datagen import sample
from .exceptions import InputError, InsufficientReplicationsError, TrainingDivergedError
from .network import as_trainer

__all__ = [
    "SINGLE_MODEL_MODES",
    "GroundTruth",
    "empirical_variance",
    "decompose",
    "ground_truth",
    "ensemble_size_curve",
    "fit_inverse_size",
]

SINGLE_MODEL_MODES = ("member-average", "first-member")


@dataclass(frozen=True)
class GroundTruth:
    var_single: float
    var_ensemble: float
    tau2: float
    sigma2_over_n: float
    j: int
    m_prime: int
    seeds: tuple
    predictions: np.ndarray = field(repr=False, default=None)
    single_model: str = "member-average"
    warnings: tuple = ()
    # the constant procedural bias cancels in every variance and is not estimated
    bias: str = "not estimated"

    def as_dict(self):
        return {
            "var_single": self.var_single,
            "var_ensemble": self.var_ensemble,
            "tau2": self.tau2,
            "sigma2_over_n": self.sigma2_over_n,
            "ensemble_total": self.var_ensemble,
            "j": self.j,
            "m_prime": self.m_prime,
            "single_model": self.single_model,
            "warnings": list(self.warnings),
            "bias": self.bias,
        }


def empirical_variance(values):
    """Unbiased sample variance ``(1/(J-1)) sum_j (h_j - mean)^2``."""
    v = as_vector(values, "values")
    if v.shape[0] < 2:
        raise InsufficientReplicationsError(f"need at least 2 trials, got {v.shape[0]}")
    return float(np.var(v, ddof=1))


def decompose(var_single, var_ensemble, m_prime, warn=True):
    """Split single/ensemble variances into ``(tau2, sigma2_over_n)``.

    Negative components can arise from sampling noise; they are returned
    unchanged (clipping would bias them) and a ``RuntimeWarning`` is issued.
    """
    if isinstance(m_prime, bool) or int(m_prime) != m_prime or m_prime < 2:
        raise InputError(f"m_prime must be an integer >= 2, got {m_prime!r}")
    m = float(m_prime)
    tau2 = m / (m - 1.0) * (var_single - var_ensemble)
    sigma2_over_n = m / (m - 1.0) * var_ensemble - var_single / (m - 1.0)
    if warn and (tau2 < 0 or sigma2_over_n < 0):
        warnings.warn(
            f"negative decomposed variance (tau2={tau2:.3g}, sigma2_over_n={sigma2_over_n:.3g})",
            RuntimeWarning,
            stacklevel=2,
        )
    return tau2, sigma2_over_n


def _run_trial(t, spec, n, x0, m_prime, seed, trainer, sampler):
    data_seed = _random.derive_seed(seed, 0, t)
    data = sampler(spec, n, data_seed)
    preds = np.empty(m_prime)
    for k in range(m_prime):
        try:
            preds[k] = trainer(data, _random.derive_seed(seed, 1, t, k), x0)
        except TrainingDivergedError as exc:
            exc.context.update(trial=t, member=k)
            raise
    return data_seed, preds


def ground_truth(spec, net_config, n, x0, j, m_prime, seed, sampler=None,
                 single_model="member-average", workers=1):
    """Brute-force ``Var(single)``, ``Var(ensemble)`` and their decomposition.

    Parameters
    ----------
    spec : SyntheticSpec
    net_config : NetConfig or callable
        A NetConfig, or a trainer ``(data, seed, x0) -> float``.
    n : int
        Training set size per trial.
    x0 : array-like
    j : int
        Number of trials (fresh datasets), at least 2.
    m_prime : int
        Networks per trial, at least 2.
    seed : int
        Trial ``t`` samples data with ``derive_seed(seed, 0, t)`` and member
        ``k`` trains with ``derive_seed(seed, 1, t, k)``.
    sampler : callable, optional
        ``(spec, n, seed) -> Dataset``; defaults to :func:`epivar.datagen.sample`.
    single_model : {"member-average", "first-member"}
        How ``Var(single)`` is formed from the ``J x m'`` prediction table:
        the across-trial variance of member 1 only, or that variance averaged
        over all members. Both are unbiased for the single-model variance; the
        member average cancels the cross term between data and procedural
        noise and is much less noisy at small ``J``.
    workers : int
        Trials are distributed over this many processes.
    """
    j = check_positive_int(j, "j")
    if j < 2:
        raise InsufficientReplicationsError(f"ground truth needs j >= 2 trials, got {j}")
    if isinstance(m_prime, bool) or int(m_prime) != m_prime or m_prime < 2:
        raise InputError(f"m_prime must be an integer >= 2, got {m_prime!r}")
    if single_model not in SINGLE_MODEL_MODES:
        raise InputError(f"single_model must be one of {SINGLE_MODEL_MODES}, got {single_model!r}")
    trainer = as_trainer(net_config)
    sampler = sampler or sample
    x0 = as_vector(x0, "x0")
    run = partial(_run_trial, spec=spec, n=n, x0=x0, m_prime=int(m_prime), seed=seed,
                  trainer=trainer, sampler=sampler)
    results = pmap(run, range(j), workers)
    seeds = tuple(r[0] for r in results)
    preds = np.vstack([r[1] for r in results])
    var_ensemble = empirical_variance(preds.mean(axis=1))
    if single_model == "first-member":
        var_single = empirical_variance(preds[:, 0])
    else:
        var_single = float(np.mean([empirical_variance(preds[:, k]) for k in range(preds.shape[1])]))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        tau2, s2n = decompose(var_single, var_ensemble, m_prime)
    for w in caught:
        warnings.warn(w.message, w.category, stacklevel=2)
    return GroundTruth(
        var_single=var_single,
        var_ensemble=var_ensemble,
        tau2=tau2,
        sigma2_over_n=s2n,
        j=j,
        m_prime=int(m_prime),
        seeds=seeds,
        predictions=preds,
        single_model=single_model,
        warnings=tuple(str(w.message) for w in caught),
    )


def ensemble_size_curve(predictions, sizes):
    """Across-trial variance of size-``s`` ensembles for each ``s`` in ``sizes``.

    The ``m`` members of each trial are cut into ``m // s`` disjoint groups of
    ``s``; the variance of the group means is averaged over groups.
    """
    P = np.asarray(predictions, dtype=np.float64)
    m = P.shape[1]
    out = []
    for s in sizes:
        s = check_positive_int(s, "ensemble size")
        if s > m:
            raise InputError(f"ensemble size {s} exceeds the {m} members per trial")
        groups = m // s
        out.append(float(np.mean([
            empirical_variance(P[:, g * s:(g + 1) * s].mean(axis=1)) for g in range(groups)
        ])))
    return np.asarray(out)


def fit_inverse_size(sizes, variances):
    """Least-squares ``variance = intercept + slope / size``; returns ``(slope, intercept)``.

    The slope estimates the procedural variance and the intercept the data
    variance of the ensemble predictor.
    """
    x = 1.0 / np.asarray(sizes, dtype=np.float64)
    slope, intercept = np.polyfit(x, np.asarray(variances, dtype=np.float64), 1)
    return float(slope), float(intercept)
