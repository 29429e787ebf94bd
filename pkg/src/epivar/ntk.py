"""Neural tangent kernel of bias-free fully-connected ReLU networks.

The population kernel follows the layer recursion

    Sigma_0(x, x') = x.x'
    Sigma_l        = 2 E[relu(u) relu(v)],   (u, v) ~ N(0, Lambda_l)
    Sigma'_l       = 2 E[step(u) step(v)]
    K(x, x')       = sum_{l=1}^{L+1} Sigma_{l-1} prod_{s=l}^{L+1} Sigma'_s,  Sigma'_{L+1} = 1

where ``Lambda_l`` is the 2x2 covariance built from ``Sigma_{l-1}``. For ReLU
both Gaussian expectations have arc-cosine closed forms, which is what we
evaluate. The sum is accumulated Horner-style, ``K <- K * Sigma'_l + Sigma_l``,
so a depth-L kernel costs L closed-form steps per pair.
"""
from dataclasses import dataclass, field

import numpy as np

from ._validation import as_matrix, as_vector, check_dims, check_positive_int
from .exceptions import InputError

__all__ = [
    "KernelConfig",
    "GramMatrix",
    "population_ntk",
    "ntk_cross",
    "ntk_gram",
    "empirical_ntk",
]


@dataclass(frozen=True)
class KernelConfig:
    """Population NTK settings.

    Parameters
    ----------
    depth : int
        Number of hidden layers ``L``.
    activation : str
        Only ``"relu"`` is supported.
    jitter : float
        Absolute value added to the Gram diagonal before factorization.
    """

    depth: int = 1
    activation: str = "relu"
    jitter: float = 0.0

    def __post_init__(self):
        check_positive_int(self.depth, "depth")
        if self.activation != "relu":
            raise InputError(f"unsupported activation {self.activation!r}; only 'relu'")
        if not np.isfinite(self.jitter) or self.jitter < 0:
            raise InputError(f"jitter must be a finite non-negative number, got {self.jitter!r}")


@dataclass(frozen=True)
class GramMatrix:
    entries: np.ndarray
    inputs: np.ndarray
    config: KernelConfig = field(default_factory=KernelConfig)
    # rows whose input is the zero vector (kernel defined as 0 by continuity)
    degenerate_rows: tuple = ()

    @property
    def n(self):
        return self.entries.shape[0]

    @property
    def mean_diagonal(self):
        return float(np.mean(np.diag(self.entries)))


def _theta_minus_sin(theta):
    """``theta - sin(theta)`` without cancellation for small angles."""
    t2 = theta * theta
    series = theta * t2 / 6.0 * (1.0 - t2 / 20.0 * (1.0 - t2 / 42.0 * (1.0 - t2 / 72.0)))
    return np.where(theta < 1e-2, series, theta - np.sin(theta))


def _relu_step(theta):
    """One layer of the ReLU arc-cosine recursion in angle form.

    With ``a, b`` the (preserved) squared norms and ``theta`` the angle of the
    previous layer's covariance,

        Sigma_l  = sqrt(ab) J(theta),  J = (sin(theta) + (pi - theta) cos(theta)) / pi
        Sigma'_l = (pi - theta) / pi

    and the next angle is ``arccos J``. ``1 - J`` is evaluated as
    ``((pi - theta) 2 sin^2(theta/2) + theta - sin(theta)) / pi`` so that
    nearly parallel inputs keep full relative precision through every layer.

    Returns ``(J, Sigma'_l, next_theta)``.
    """
    one_minus_j = ((np.pi - theta) * 2.0 * np.sin(theta / 2.0) ** 2 + _theta_minus_sin(theta)) / np.pi
    one_minus_j = np.clip(one_minus_j, 0.0, 1.0)
    j = 1.0 - one_minus_j
    dsigma = (np.pi - theta) / np.pi
    next_theta = 2.0 * np.arcsin(np.sqrt(one_minus_j / 2.0))
    return j, dsigma, next_theta


# pairs with |cos| above this get their input angle from the vectors themselves
_COLLINEAR = 1.0 - 1e-4


def _input_angles(a, b, c, rows=None, cols=None):
    """Angles between input pairs with squared norms ``a, b`` and dot products ``c``.

    ``arctan2(sqrt(ab - c^2), c)`` loses about half the digits for nearly
    (anti)parallel inputs, so when the vectors are available (``rows(idx)``
    and ``cols(idx)`` return them for entry positions ``idx``) those pairs
    use Kahan's ``2 atan2(|u - v|, |u + v|)`` on the unit vectors.
    """
    ab = a * b
    theta = np.arctan2(np.sqrt(np.maximum(ab - c * c, 0.0)), c)
    if rows is None:
        return theta
    near = np.abs(c) > _COLLINEAR * np.sqrt(ab)
    if np.any(near):
        idx = np.nonzero(near)
        u = rows(idx)
        v = cols(idx)
        u = u / np.linalg.norm(u, axis=-1, keepdims=True)
        v = v / np.linalg.norm(v, axis=-1, keepdims=True)
        theta[idx] = 2.0 * np.arctan2(np.linalg.norm(u - v, axis=-1), np.linalg.norm(u + v, axis=-1))
    return theta


def _recursion(a, b, c, depth, rows=None, cols=None):
    """Vectorised kernel from input Gram terms ``a=|x|^2, b=|x'|^2, c=x.x'``.

    Horner form of ``K = sum_l Sigma_{l-1} prod_{s>=l} Sigma'_s``:
    ``K <- K Sigma'_l + Sigma_l`` starting from ``K = Sigma_0 = c``.
    """
    a, b, c = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (a, b, c)))
    degenerate = (a == 0.0) | (b == 0.0)
    # substitute harmless values where a norm vanishes; those entries are zeroed below
    a_s = np.where(degenerate, 1.0, a)
    b_s = np.where(degenerate, 1.0, b)
    c_s = np.where(degenerate, 0.0, c)
    root = np.sqrt(a_s * b_s)
    theta = _input_angles(a_s, b_s, c_s, rows, cols)
    K = c_s.copy()
    # for ReLU with He scaling the diagonal is preserved, Sigma_l(x, x) = |x|^2,
    # so each layer only changes the angle
    for _ in range(depth):
        j, dsig, theta = _relu_step(theta)
        K = K * dsig + root * j
    return np.where(degenerate, 0.0, K), degenerate


def population_ntk(x, x_prime, config=None, return_info=False):
    """Population NTK ``K(x, x')`` for a depth-``L`` ReLU network.

    Parameters
    ----------
    x, x_prime : array-like of shape (d,)
    config : KernelConfig, optional
    return_info : bool
        If true, also return ``{"degenerate": bool}``; degenerate means one of
        the inputs was the zero vector and the value was set to 0.

    Examples
    --------
    >>> round(population_ntk([1, 0], [0, 1]), 6)
    0.31831
    """
    config = config or KernelConfig()
    x = as_vector(x, "x")
    x_prime = as_vector(x_prime, "x_prime")
    check_dims(x, x_prime, "x and x_prime")
    a = float(np.dot(x, x))
    b = float(np.dot(x_prime, x_prime))
    c = float(np.dot(x, x_prime))
    val, deg = _recursion([a], [b], [c], config.depth, lambda i: x[None, :], lambda i: x_prime[None, :])
    value = float(val[0])
    if return_info:
        return value, {"degenerate": bool(deg[0])}
    return value


def ntk_cross(X, Z, config=None):
    """Kernel matrix ``K(X_i, Z_j)`` of shape (len(X), len(Z))."""
    config = config or KernelConfig()
    X = as_matrix(X, "X")
    Z = as_matrix(Z, "Z")
    check_dims(X, Z, "X and Z")
    a = np.einsum("ij,ij->i", X, X)[:, None]
    b = np.einsum("ij,ij->i", Z, Z)[None, :]
    c = X @ Z.T
    K, _ = _recursion(a, b, c, config.depth, lambda idx: X[idx[0]], lambda idx: Z[idx[1]])
    return K


def ntk_gram(inputs, config=None):
    """Symmetric NTK Gram matrix over ``inputs``.

    Only the upper triangle is computed; it is mirrored into the lower one so
    the result is exactly symmetric. Diagonal entries come from the same
    recursion and equal ``(L+1)|x_i|^2`` up to rounding.
    """
    config = config or KernelConfig()
    X = as_matrix(inputs, "inputs")
    n = X.shape[0]
    sq = np.einsum("ij,ij->i", X, X)
    iu, ju = np.triu_indices(n)
    c = np.einsum("ij,ij->i", X[iu], X[ju])
    upper, _ = _recursion(sq[iu], sq[ju], c, config.depth,
                          lambda idx: X[iu[idx]], lambda idx: X[ju[idx]])
    K = np.empty((n, n))
    K[iu, ju] = upper
    K[ju, iu] = upper
    degenerate = tuple(int(i) for i in np.flatnonzero(sq == 0.0))
    return GramMatrix(entries=K, inputs=X, config=config, degenerate_rows=degenerate)


def empirical_ntk(net, x, x_prime):
    """Finite-width NTK ``<grad_theta h(x), grad_theta h(x')>`` at the net's weights."""
    from .network import param_gradient

    d = net.input_dim
    x = as_vector(x, "x", dim=d)
    x_prime = as_vector(x_prime, "x_prime", dim=d)
    gx = param_gradient(net, x)
    if np.array_equal(x, x_prime):
        gz = gx
    else:
        gz = param_gradient(net, x_prime)
    return float(sum(np.vdot(a, b) for a, b in zip(gx, gz)))
