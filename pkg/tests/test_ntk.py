import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from epivar.exceptions import InputError
from epivar.network import NetConfig, TrainedNet, init_params, param_gradient
from epivar.ntk import KernelConfig, empirical_ntk, ntk_cross, ntk_gram, population_ntk

from oracles import mc_ntk_depth1

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def vec(d):
    return arrays(np.float64, d, elements=finite).filter(lambda v: np.linalg.norm(v) > 1e-3)


# -- documented values ---------------------------------------------------

def test_equal_inputs_depth1():
    assert population_ntk([1, 0], [1, 0]) == 2.0


def test_equal_inputs_depth2():
    assert population_ntk([1, 0], [1, 0], KernelConfig(depth=2)) == 3.0


def test_orthogonal_unit_inputs_match_monte_carlo():
    est, se = mc_ntk_depth1(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    value = population_ntk([1, 0], [0, 1])
    assert abs(value - est) <= 3 * se
    assert value == pytest.approx(1 / np.pi, abs=1e-15)


@pytest.mark.parametrize("seed", [1, 2])
def test_general_pair_matches_monte_carlo(seed):
    g = np.random.default_rng(seed)
    x, z = g.normal(size=3), g.normal(size=3)
    est, se = mc_ntk_depth1(x, z, draws=4_000_000, seed=seed)
    assert abs(population_ntk(x, z) - est) <= 3 * se


def test_gram_single_row():
    np.testing.assert_array_equal(ntk_gram([[1.0, 0.0]]).entries, [[2.0]])


def test_gram_orthonormal_rows():
    K = ntk_gram(np.eye(2)).entries
    np.testing.assert_allclose(K, [[2, 1 / np.pi], [1 / np.pi, 2]], rtol=0, atol=1e-15)


def test_gram_scaling_by_two(gen):
    X = gen.normal(size=(6, 3))
    np.testing.assert_allclose(ntk_gram(2 * X).entries, 4 * ntk_gram(X).entries, rtol=1e-13)


def test_gram_matches_pointwise_and_cross(gen):
    X = gen.normal(size=(7, 3))
    cfg = KernelConfig(depth=2)
    K = ntk_gram(X, cfg).entries
    P = np.array([[population_ntk(a, b, cfg) for b in X] for a in X])
    np.testing.assert_allclose(K, P, rtol=1e-14)
    np.testing.assert_allclose(ntk_cross(X, X, cfg), K, rtol=1e-14)


def test_zero_input_is_degenerate():
    v, info = population_ntk([0, 0], [0, 0], return_info=True)
    assert v == 0.0 and info["degenerate"]
    assert population_ntk([0, 0], [1, 2]) == 0.0
    assert ntk_gram([[0.0, 0.0], [1.0, 0.0]]).degenerate_rows == (0,)


def test_dimension_mismatch():
    with pytest.raises(InputError):
        population_ntk([1, 0], [1, 0, 0])


@pytest.mark.parametrize("bad", [dict(depth=0), dict(activation="tanh"), dict(jitter=-1.0)])
def test_kernel_config_validation(bad):
    with pytest.raises(InputError):
        KernelConfig(**bad)


# -- invariants ----------------------------------------------------------

@pytest.mark.parametrize("depth", [1, 2, 3])
def test_diagonal_identity(depth, gen):
    cfg = KernelConfig(depth=depth)
    for _ in range(100):
        x = gen.normal(size=int(gen.integers(1, 6))) * gen.uniform(0.01, 10)
        expect = (depth + 1) * np.dot(x, x)
        assert abs(population_ntk(x, x, cfg) - expect) <= 1e-12 * expect


@given(vec(3), vec(3), st.integers(1, 3))
def test_symmetry(x, z, depth):
    cfg = KernelConfig(depth=depth)
    assert population_ntk(x, z, cfg) == population_ntk(z, x, cfg)


@given(vec(3), vec(3), st.sampled_from([0.5, 2.0, 10.0]), st.integers(1, 3))
def test_degree_two_homogeneity(x, z, c, depth):
    cfg = KernelConfig(depth=depth)
    base = population_ntk(x, z, cfg)
    scaled = population_ntk(c * x, c * z, cfg)
    assert abs(scaled - c * c * base) <= 1e-12 * max(abs(c * c * base), np.linalg.norm(c * x) * np.linalg.norm(c * z))


@given(vec(4), vec(4), st.integers(1, 3))
def test_cauchy_schwarz(x, z, depth):
    cfg = KernelConfig(depth=depth)
    kxz = population_ntk(x, z, cfg)
    assert kxz**2 <= population_ntk(x, x, cfg) * population_ntk(z, z, cfg) * (1 + 1e-12)


def test_psd_on_random_sets(gen):
    for _ in range(50):
        n, d = int(gen.integers(1, 33)), int(gen.integers(1, 6))
        K = ntk_gram(gen.normal(size=(n, d)) * gen.uniform(0.1, 5), KernelConfig(depth=int(gen.integers(1, 4)))).entries
        np.testing.assert_array_equal(K, K.T)
        assert np.linalg.eigvalsh(K).min() >= -1e-10 * np.diag(K).max()
        np.linalg.cholesky(K + 1e-6 * n * np.eye(n))


# -- empirical NTK -------------------------------------------------------

def test_empirical_ntk_self_is_nonnegative(gen):
    net = init_params(NetConfig(input_dim=3, hidden_widths=(64, 32)), 0)
    for _ in range(5):
        x = gen.normal(size=3)
        assert empirical_ntk(net, x, x) >= 0


def test_empirical_ntk_orthogonal_width_1024():
    cfg = NetConfig(input_dim=2, hidden_widths=(1024,))
    vals = [empirical_ntk(init_params(cfg, s), [1, 0], [0, 1]) for s in range(20)]
    assert abs(np.mean(vals) - 1 / np.pi) <= 0.1 / np.pi


def _empirical_gram(net, X):
    G = np.array([np.concatenate([g.ravel() for g in param_gradient(net, x)]) for x in X])
    return G @ G.T


def test_width_convergence():
    X = np.random.default_rng(7).normal(size=(8, 2))
    K = ntk_gram(X).entries
    errs = []
    for width in (256, 1024, 4096):
        cfg = NetConfig(input_dim=2, hidden_widths=(width,))
        errs.append(np.mean([np.abs(_empirical_gram(init_params(cfg, s), X) - K).mean() for s in range(20)]))
    assert errs[0] > errs[1] > errs[2]


def test_empirical_ntk_depth2_close_to_population():
    X = np.random.default_rng(3).normal(size=(4, 2))
    cfg = NetConfig(input_dim=2, hidden_widths=(1024, 1024))
    Ke = np.mean([_empirical_gram(init_params(cfg, s), X) for s in range(10)], axis=0)
    np.testing.assert_allclose(Ke, ntk_gram(X, KernelConfig(depth=2)).entries, rtol=0.1)


def test_param_gradient_finite_differences(gen):
    """Every coordinate of the output gradient against central differences, step 1e-5."""
    cfg = NetConfig(input_dim=2, hidden_widths=(5, 4))
    net = init_params(cfg, 3)
    x = gen.normal(size=2)
    grads = param_gradient(net, x)
    from epivar.network import forward

    h = 1e-5
    for li, W in enumerate(net.weights):
        for idx in np.ndindex(W.shape):
            plus = [w.copy() for w in net.weights]
            minus = [w.copy() for w in net.weights]
            plus[li][idx] += h
            minus[li][idx] -= h
            fp = forward(TrainedNet(plus, net.init_weights, 0, cfg, []), x)
            fm = forward(TrainedNet(minus, net.init_weights, 0, cfg, []), x)
            fd = (fp - fm) / (2 * h)
            g = grads[li][idx]
            assert abs(fd - g) <= 1e-5 * max(abs(g), 1e-3), (li, idx, fd, g)
