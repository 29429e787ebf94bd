"""NTK kernel ridge regression: the initialization-averaged network predictor.

In the wide-network limit, averaging trained networks over the random
initialization gives

    hbar(x0) = h0(x0) + K(x0, X)^T (K + lambda n I)^{-1} (y - h0(X)),

with ``h0(x) = E[h(theta_0; x)]``. Under N(0, 1) initialization of a bias-free
network the output layer is independent and zero-mean, so ``h0 = 0``
("analytic-zero"). The "empirical-average" mode instead averages ``m0``
freshly initialized networks.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from . import _random
from ._validation import as_matrix, as_vector, check_positive_int
from .exceptions import IllConditionedError, InputError
from .network import NetConfig, init_params, predict_batch
from .ntk import KernelConfig, ntk_cross, ntk_gram

__all__ = ["H0_MODES", "KrrModel", "fit", "predict", "h0_baseline", "NTKRidgeRegressor"]

H0_MODES = ("analytic-zero", "empirical-average")
JITTER_LADDER = (1e-10, 1e-9, 1e-8)
MAX_CONDITION = 1e12


def h0_baseline(mode, config, m0, points, seed):
    """Initialization mean ``E[h(theta_0; x)]`` at each of ``points``.

    ``analytic-zero`` returns zeros. ``empirical-average`` averages ``m0``
    untrained networks whose seeds are derived from ``seed``.
    """
    X = as_matrix(points, "points")
    if mode == "analytic-zero":
        return np.zeros(X.shape[0])
    if mode != "empirical-average":
        raise InputError(f"unknown h0 mode {mode!r}; expected one of {H0_MODES}")
    m0 = check_positive_int(m0, "m0")
    if config is None:
        raise InputError("empirical-average h0 needs a NetConfig")
    total = np.zeros(X.shape[0])
    for i in range(m0):
        total += predict_batch(init_params(config, _random.derive_seed(seed, i)), X)
    return total / m0


@dataclass(frozen=True)
class KrrModel:
    gram: object
    lam: float
    alpha: np.ndarray
    labels: np.ndarray
    h0_mode: str
    h0_values: np.ndarray
    factor: tuple = field(repr=False)
    jitter: float = 0.0
    residual: float = 0.0
    h0_config: object = None
    h0_m0: int = 0
    h0_seed: int = 0

    @property
    def inputs(self):
        return self.gram.inputs

    @property
    def n(self):
        return self.alpha.shape[0]

    @property
    def kernel_config(self):
        return self.gram.config

    def solve(self, b):
        """``(K + lambda n I + jitter I)^{-1} b`` using the cached factorization."""
        return linalg.cho_solve(self.factor, b)

    def kernel_to(self, X):
        """``K(X_i, x_j)`` against the training inputs, shape (len(X), n)."""
        return ntk_cross(X, self.inputs, self.kernel_config)

    def h0(self, X):
        return h0_baseline(self.h0_mode, self.h0_config, self.h0_m0, X, self.h0_seed)

    def fitted_values(self):
        """``hbar`` at the training inputs."""
        return self.h0_values + self.gram.entries @ self.alpha


def _factorize(A, start_jitter, scale):
    ladder = [start_jitter] + [max(start_jitter, j * scale) for j in JITTER_LADDER]
    for jitter in ladder:
        try:
            Aj = A + jitter * np.eye(A.shape[0]) if jitter else A
            return linalg.cho_factor(Aj, lower=True, check_finite=False), jitter
        except linalg.LinAlgError:
            continue
    raise IllConditionedError(
        f"Cholesky factorization failed after jitter escalation up to {ladder[-1]:.3g}"
    )


def fit(data, lam, config=None, h0_mode="analytic-zero", net_config=None, m0=0, seed=0):
    """Fit the NTK ridge predictor on ``data`` (a Dataset or ``(X, y)``).

    ``lam = 0`` is allowed only when the Gram matrix has condition number
    below ``1e12``.

    Raises
    ------
    IllConditionedError
        Factorization fails after three jitter escalations.
    """
    config = config or KernelConfig()
    X, y = (data.inputs, data.labels) if hasattr(data, "inputs") else data
    X = as_matrix(X, "inputs")
    y = as_vector(y, "labels", dim=X.shape[0])
    lam = float(lam)
    if not (lam >= 0 and np.isfinite(lam)):
        raise InputError(f"lambda must be a finite non-negative number, got {lam!r}")
    gram = ntk_gram(X, config)
    n = X.shape[0]
    if lam == 0:
        cond = np.linalg.cond(gram.entries)
        if not cond < MAX_CONDITION:
            raise IllConditionedError(f"lambda=0 needs a well-conditioned Gram matrix; condition number {cond:.3g}")
    h0_values = h0_baseline(h0_mode, net_config, m0, X, seed)
    target = y - h0_values
    A = gram.entries + lam * n * np.eye(n)
    factor, jitter = _factorize(A, config.jitter, gram.mean_diagonal)
    alpha = linalg.cho_solve(factor, target)
    denom = max(np.linalg.norm(target), np.finfo(float).tiny)
    residual = float(np.linalg.norm(A @ alpha - target) / denom) if np.any(target) else 0.0
    return KrrModel(
        gram=gram,
        lam=lam,
        alpha=alpha,
        labels=y,
        h0_mode=h0_mode,
        h0_values=h0_values,
        factor=factor,
        jitter=jitter,
        residual=residual,
        h0_config=net_config,
        h0_m0=m0,
        h0_seed=seed,
    )


def predict(model, x0):
    """``hbar(x0)`` for a single point (returns float) or rows of a matrix."""
    arr = np.asarray(x0, dtype=np.float64)
    single = arr.ndim == 1
    X = as_matrix(arr, "x0")
    if X.shape[1] != model.inputs.shape[1]:
        raise InputError(f"x0 has dimension {X.shape[1]}, model expects {model.inputs.shape[1]}")
    out = model.h0(X) + model.kernel_to(X) @ model.alpha
    return float(out[0]) if single else out


class NTKRidgeRegressor(RegressorMixin, BaseEstimator):
    """scikit-learn regressor for the NTK ridge predictor.

    Parameters
    ----------
    reg_lambda : float
        Ridge strength; the system solved is ``K + reg_lambda * n * I``.
    depth : int
        Hidden layers of the network whose NTK is used.
    jitter : float
    h0_mode : {"analytic-zero", "empirical-average"}
    m0 : int
        Networks averaged for ``empirical-average``.
    hidden_widths : tuple of int
        Architecture of the networks used by ``empirical-average``.
    random_state : int
    """

    def __init__(self, reg_lambda=1e-3, depth=1, jitter=0.0, h0_mode="analytic-zero",
                 m0=100, hidden_widths=(1024,), random_state=0):
        self.reg_lambda = reg_lambda
        self.depth = depth
        self.jitter = jitter
        self.h0_mode = h0_mode
        self.m0 = m0
        self.hidden_widths = hidden_widths
        self.random_state = random_state

    def fit(self, X, y):
        X = as_matrix(X, "X")
        y = as_vector(y, "y", dim=X.shape[0])
        net_config = None
        if self.h0_mode == "empirical-average":
            widths = tuple(self.hidden_widths)
            if len(widths) != self.depth:
                raise InputError(f"hidden_widths {widths} inconsistent with depth={self.depth}")
            net_config = NetConfig(input_dim=X.shape[1], hidden_widths=widths)
        self.model_ = fit((X, y), self.reg_lambda, KernelConfig(depth=self.depth, jitter=self.jitter),
                          h0_mode=self.h0_mode, net_config=net_config, m0=self.m0,
                          seed=self.random_state)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return predict(self.model_, as_matrix(X, "X"))

    def influence(self, z_x, z_y, x0):
        """Influence of contaminating the data at ``(z_x, z_y)`` on ``hbar(x0)``."""
        from .estimators import influence

        check_is_fitted(self, "model_")
        return influence(self.model_, (z_x, z_y), x0)

    def data_variance(self, x0):
        """Influence-function estimate of ``Var(hbar(x0))`` over data draws."""
        from .estimators import data_variance_if

        check_is_fitted(self, "model_")
        return data_variance_if(self.model_, x0)
