"""Bias-free fully-connected ReLU network in NTK parameterization.

Layers are ``f_l = W_l g_{l-1}``, ``g_l = sqrt(2/d_l) relu(f_l)``, ``g_0 = x``
and the scalar output is ``h(x) = W_{L+1} g_L``. Every weight is drawn i.i.d.
N(0, 1); the ``sqrt(2/d_l)`` factors live in the architecture, not in the
initialization.

Training minimizes ``(1/n) sum_i (h(x_i) - y_i)^2 + lambda |theta - theta_0|^2``
with full-batch gradient descent from a seeded initialization. The seed is
the only source of randomness, so ``(config, data, seed)`` fully determines
the trained network.
"""
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from . import _random
from ._validation import as_matrix, as_vector, check_positive_int
from .exceptions import InputError, TrainingDivergedError

__all__ = [
    "NetConfig",
    "TrainedNet",
    "init_params",
    "forward",
    "predict_batch",
    "param_gradient",
    "loss_and_gradient",
    "train",
    "auto_learning_rate",
    "NetTrainer",
    "as_trainer",
    "WideReLURegressor",
]

DIVERGENCE_FACTOR = 1e6


@dataclass(frozen=True)
class NetConfig:
    """Architecture and optimizer settings.

    ``learning_rate`` must be positive; see :func:`auto_learning_rate` for a
    data-dependent step close to gradient flow. Gradient descent is stable
    roughly when ``learning_rate * lambda_max(2K/n + 2 lambda) < 2``, with
    ``K`` the NTK Gram matrix of the training inputs.
    """

    input_dim: int
    hidden_widths: tuple = (1024,)
    reg_lambda: float = 1e-3
    learning_rate: float = 1e-2
    max_epochs: int = 5000
    loss_tol: float = 1e-8

    def __post_init__(self):
        check_positive_int(self.input_dim, "input_dim")
        widths = tuple(int(w) for w in np.atleast_1d(self.hidden_widths))
        if not widths:
            raise InputError("hidden_widths must be non-empty")
        for w in widths:
            check_positive_int(w, "hidden width")
        object.__setattr__(self, "hidden_widths", widths)
        if not (self.reg_lambda >= 0 and np.isfinite(self.reg_lambda)):
            raise InputError(f"reg_lambda must be >= 0, got {self.reg_lambda!r}")
        if not (self.learning_rate > 0 and np.isfinite(self.learning_rate)):
            raise InputError(f"learning_rate must be > 0, got {self.learning_rate!r}")
        check_positive_int(self.max_epochs, "max_epochs", minimum=0)
        if not self.loss_tol >= 0:
            raise InputError(f"loss_tol must be >= 0, got {self.loss_tol!r}")

    @property
    def depth(self):
        return len(self.hidden_widths)

    @property
    def layer_shapes(self):
        dims = (self.input_dim,) + self.hidden_widths + (1,)
        return [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]

    def replace(self, **changes):
        params = {k: getattr(self, k) for k in self.__dataclass_fields__}
        params.update(changes)
        return NetConfig(**params)


@dataclass
class TrainedNet:
    weights: list
    init_weights: list
    seed: int
    config: NetConfig
    train_loss_trace: list = field(default_factory=list)

    @property
    def input_dim(self):
        return self.weights[0].shape[1]

    @property
    def n_params(self):
        return sum(w.size for w in self.weights)

    def displacement_norm(self):
        """``|theta - theta_0|_2``."""
        return float(np.sqrt(sum(np.vdot(w - w0, w - w0) for w, w0 in zip(self.weights, self.init_weights))))


def init_params(config, seed):
    """Draw ``theta_0`` with i.i.d. standard normal entries from ``seed``."""
    gen = _random.rng(seed)
    weights = [gen.standard_normal(shape) for shape in config.layer_shapes]
    return TrainedNet(
        weights=weights,
        init_weights=[w.copy() for w in weights],
        seed=int(seed),
        config=config,
    )


class _Buffers:
    """Preallocated per-layer arrays for repeated passes over the same ``n`` points.

    Reusing them avoids a fresh multi-megabyte allocation (and its page
    faults) for every layer of every epoch.
    """

    def __init__(self, weights, n):
        hidden = [W.shape[0] for W in weights[:-1]]
        self.pre = [np.empty((w, n)) for w in hidden]
        self.post = [np.empty((w, n)) for w in hidden]
        self.mask = [np.empty((w, n)) for w in hidden]


def _forward_cache(weights, X, buffers=None):
    """Forward pass on the columns of ``X.T``; returns output and layer caches."""
    # X is C-contiguous, so post[0].T is too; that keeps the first-layer
    # weight gradient on the fast matmul path
    G = np.ascontiguousarray(X).T
    pre, post = [], [G]
    for l, W in enumerate(weights[:-1]):
        if buffers is None:
            F = W @ G
            G = np.maximum(F, 0.0)
        else:
            F = np.matmul(W, G, out=buffers.pre[l])
            G = np.maximum(F, 0.0, out=buffers.post[l])
        G *= np.sqrt(2.0 / W.shape[0])
        pre.append(F)
        post.append(G)
    h = (weights[-1] @ G)[0]
    return h, pre, post


def _backward(weights, pre, post, r, buffers=None):
    """Gradient of ``sum_i r_i h(x_i)`` with respect to every weight matrix."""
    grads = [None] * len(weights)
    grads[-1] = (post[-1] @ r)[None, :]
    # the last hidden layer's upstream gradient is rank one: outer(w_out, r)
    upstream = weights[-1][0]
    delta = None
    for l in range(len(weights) - 2, -1, -1):
        scale = np.sqrt(2.0 / weights[l].shape[0])
        if buffers is None:
            mask = (pre[l] > 0).astype(np.float64)
        else:
            mask = np.greater(pre[l], 0.0, out=buffers.mask[l])
        if delta is None:
            row = scale * upstream
            # (mask * r) @ G^T == mask @ (r[:, None] * G^T), avoiding a (d_l, n) temporary
            grads[l] = (mask @ (r[:, None] * post[l].T)) * row[:, None]
            if l > 0:
                dF = mask * r
                dF *= row[:, None]
        else:
            dF = mask * delta
            dF *= scale
            grads[l] = dF @ post[l].T
        if l > 0:
            delta = weights[l].T @ dF
    return grads


def forward(net, x):
    """Scalar network output ``h(x)``."""
    x = as_vector(x, "x", dim=net.input_dim)
    return float(_forward_cache(net.weights, x[None, :])[0][0])


def predict_batch(net, X):
    X = as_matrix(X, "X")
    if X.shape[1] != net.input_dim:
        raise InputError(f"X has {X.shape[1]} columns, network expects {net.input_dim}")
    return _forward_cache(net.weights, X)[0]


def param_gradient(net, x):
    """``grad_theta h(theta; x)`` as a list shaped like ``net.weights``."""
    x = as_vector(x, "x", dim=net.input_dim)
    _, pre, post = _forward_cache(net.weights, x[None, :])
    return _backward(net.weights, pre, post, np.ones(1))


def _loss_parts(weights, init_weights, X, y, lam, buffers=None):
    h, pre, post = _forward_cache(weights, X, buffers)
    res = h - y
    n = y.shape[0]
    diffs = [w - w0 for w, w0 in zip(weights, init_weights)]
    reg = sum(float(np.vdot(dw, dw)) for dw in diffs)
    loss = float(res @ res) / n + lam * reg
    return loss, res, pre, post, diffs


def loss_and_gradient(net, X, y, reg_lambda=None):
    """Regularized square loss and its gradient at the net's current weights."""
    lam = net.config.reg_lambda if reg_lambda is None else reg_lambda
    X = as_matrix(X, "X")
    y = as_vector(y, "y", dim=X.shape[0])
    loss, res, pre, post, diffs = _loss_parts(net.weights, net.init_weights, X, y, lam)
    grads = _backward(net.weights, pre, post, (2.0 / y.shape[0]) * res)
    for g, dw in zip(grads, diffs):
        g += 2.0 * lam * dw
    return loss, grads


def _unpack(data):
    if hasattr(data, "inputs"):
        return data.inputs, data.labels
    X, y = data
    return X, y


def train(config, data, seed, _context=None):
    """Full-batch gradient descent from ``init_params(config, seed)``.

    Stops after ``config.max_epochs`` updates or once the absolute change in
    training loss falls below ``config.loss_tol``. The loss recorded at index
    ``t`` of ``train_loss_trace`` is evaluated before update ``t``.

    Raises
    ------
    TrainingDivergedError
        If the loss becomes non-finite or exceeds ``1e6`` times its initial value.
    """
    X, y = _unpack(data)
    X = as_matrix(X, "inputs")
    y = as_vector(y, "labels", dim=X.shape[0])
    if X.shape[1] != config.input_dim:
        raise InputError(f"data has dimension {X.shape[1]}, config expects {config.input_dim}")
    net = init_params(config, seed)
    W = net.weights
    W0 = net.init_weights
    lam = config.reg_lambda
    lr = config.learning_rate
    n = y.shape[0]
    trace = net.train_loss_trace
    buffers = _Buffers(W, n)
    prev = None
    for epoch in range(config.max_epochs + 1):
        loss, res, pre, post, diffs = _loss_parts(W, W0, X, y, lam, buffers)
        if not np.isfinite(loss) or (trace and loss > DIVERGENCE_FACTOR * trace[0]):
            raise TrainingDivergedError(epoch, loss, _context)
        trace.append(loss)
        if epoch == config.max_epochs or (prev is not None and abs(prev - loss) < config.loss_tol):
            break
        prev = loss
        grads = _backward(W, pre, post, (2.0 / n) * res, buffers)
        for w, g, dw in zip(W, grads, diffs):
            g += 2.0 * lam * dw
            g *= lr
            w -= g
    return net


def auto_learning_rate(X, config, safety=1.0):
    """Step size ``safety / lambda_max`` for the linearized loss Hessian.

    The Hessian of the training loss in the wide-network limit is
    ``(2/n) J^T J + 2 lambda``, whose nonzero spectrum matches ``(2/n) K + 2 lambda``
    with ``K`` the population NTK Gram matrix. ``safety=1`` is half the
    gradient-descent stability bound.
    """
    from .ntk import KernelConfig, ntk_gram

    X = as_matrix(X, "X")
    K = ntk_gram(X, KernelConfig(depth=config.depth)).entries
    top = float(np.linalg.eigvalsh(K)[-1])
    return safety / (2.0 * top / X.shape[0] + 2.0 * config.reg_lambda)


class NetTrainer:
    """Callable ``(data, seed, x0) -> h(x0)`` that trains one network.

    With ``auto_lr=True`` the step size is recomputed for every training set
    via :func:`auto_learning_rate` (scaled by ``lr_safety``) and
    ``config.learning_rate`` is ignored.
    """

    def __init__(self, config, auto_lr=False, lr_safety=1.0):
        self.config = config
        self.auto_lr = auto_lr
        self.lr_safety = lr_safety

    def config_for(self, X):
        if not self.auto_lr:
            return self.config
        return self.config.replace(learning_rate=auto_learning_rate(X, self.config, self.lr_safety))

    def fit(self, data, seed):
        X, _ = _unpack(data)
        return train(self.config_for(X), data, seed)

    def __call__(self, data, seed, x0):
        return forward(self.fit(data, seed), x0)

    def __repr__(self):
        return f"NetTrainer({self.config!r}, auto_lr={self.auto_lr}, lr_safety={self.lr_safety})"


def as_trainer(obj):
    """Accept a NetConfig or any ``(data, seed, x0) -> float`` callable."""
    if isinstance(obj, NetConfig):
        return NetTrainer(obj)
    if callable(obj):
        return obj
    raise InputError(f"expected a NetConfig or a trainer callable, got {type(obj).__name__}")


class WideReLURegressor(RegressorMixin, BaseEstimator):
    """scikit-learn regressor wrapping :func:`train`.

    Parameters
    ----------
    hidden_widths : tuple of int
    reg_lambda : float
    learning_rate : float or "auto"
        ``"auto"`` picks :func:`auto_learning_rate` from the training inputs.
    max_epochs : int
    loss_tol : float
    random_state : int
    """

    def __init__(self, hidden_widths=(1024,), reg_lambda=1e-3, learning_rate=1e-2,
                 max_epochs=5000, loss_tol=1e-8, random_state=0):
        self.hidden_widths = hidden_widths
        self.reg_lambda = reg_lambda
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.loss_tol = loss_tol
        self.random_state = random_state

    def _config(self, d, X=None):
        cfg = NetConfig(input_dim=d, hidden_widths=tuple(self.hidden_widths),
                        reg_lambda=self.reg_lambda, max_epochs=self.max_epochs,
                        loss_tol=self.loss_tol)
        if self.learning_rate == "auto":
            return cfg.replace(learning_rate=auto_learning_rate(X, cfg))
        return cfg.replace(learning_rate=float(self.learning_rate))

    def fit(self, X, y):
        X = as_matrix(X, "X")
        y = as_vector(y, "y", dim=X.shape[0])
        config = self._config(X.shape[1], X)
        self.net_ = train(config, (X, y), self.random_state)
        self.learning_rate_ = config.learning_rate
        self.n_features_in_ = X.shape[1]
        self.n_epochs_ = len(self.net_.train_loss_trace) - 1
        return self

    def predict(self, X):
        check_is_fitted(self, "net_")
        return predict_batch(self.net_, X)
