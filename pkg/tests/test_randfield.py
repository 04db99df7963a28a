import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pde_sgd import randfield as rf


def test_example1_eigenvalues_descending_and_first_mode():
    spec = rf.kl_example1()
    ev = spec.eigenvalues
    assert len(ev) == 20
    assert np.all(np.diff(ev) <= 0)
    assert ev[0] == pytest.approx(0.25 * math.exp(-math.pi * 2 * 0.25), rel=1e-15)
    assert spec.eigenpairs[0].modes == (1, 1)


def test_example1_bound_formula():
    spec = rf.kl_example1()
    spread = 2 * math.sqrt(3) * sum(math.sqrt(v) for v in spec.eigenvalues)
    assert spec.a_min == pytest.approx(5 - spread, rel=1e-14)
    lo, hi = rf.certify_bounds(spec, n_samples=2000)
    assert spec.a_min <= lo and hi <= spec.a_max


def test_example1_rejects_nonpositive_coefficient():
    with pytest.raises(rf.FieldError):
        rf.kl_example1(a0=0.5)
    with pytest.raises(rf.FieldError):
        rf.kl_example1(l=0.0)


@given(st.floats(0.2, 3.0), st.integers(1, 12))
def test_separable_roots_solve_their_equations(l, count):
    w = rf.separable_exp_roots(l, count)
    assert np.all(np.diff(w) > 0)
    assert np.max(np.abs(rf.root_residuals(w, l))) <= 1e-12
    # the raw (unscaled) forms also vanish
    assert np.allclose(1 / l - w[0::2] * np.tan(w[0::2] / 2), 0, atol=1e-8 * np.max(w) ** 2)


def test_separable_root_ordering_first_values():
    w = rf.separable_exp_roots(1.0, 3)
    # w0 in (0, pi), w1 in (pi, 2 pi), ...
    for i, x in enumerate(w):
        assert i * math.pi < x < (i + 1) * math.pi


def test_eigenfunctions_orthonormal():
    w = rf.separable_exp_roots(1.0, 10)
    x, wts = np.polynomial.legendre.leggauss(200)
    F = rf.eigenfunctions_1d(w, 0.5 * x)
    G = (F * (0.5 * wts)[:, None]).T @ F
    assert np.abs(G - np.eye(len(w))).max() <= 1e-8


def test_eigenfunctions_solve_integral_equation():
    l = 1.0
    w = rf.separable_exp_roots(l, 3)
    lam = rf.eigenvalues_1d(w, l)
    s, wts = np.polynomial.legendre.leggauss(400)
    s = 0.5 * s
    for x in (-0.3, 0.1, 0.45):
        # kernel has a kink at x; split the quadrature
        lhs = 0.0
        for a, b in ((-0.5, x), (x, 0.5)):
            ss = 0.5 * (a + b) + 0.5 * (b - a) * (2 * s)
            ww = (b - a) / 2 * wts
            lhs = lhs + (ww * np.exp(-np.abs(x - ss) / l)) @ rf.eigenfunctions_1d(w, ss)
        assert np.allclose(lhs, lam * rf.eigenfunctions_1d(w, np.array([x]))[0], atol=1e-10)


def test_example2_structure():
    spec = rf.kl_example2()
    assert spec.m == 100 and spec.noise.dim == 100
    assert np.all(np.diff(spec.eigenvalues) <= 0)
    assert spec.eigenpairs[0].modes == (1, 1)
    xi = spec.noise.sample(np.random.default_rng(0))
    assert np.all(np.abs(xi) <= 100)


def test_example2_zero_noise_gives_exp_a0():
    spec = rf.kl_example2()
    f = rf.FieldRealization(spec, np.zeros(100))
    assert np.allclose(f(np.random.default_rng(0).uniform(size=(20, 2))), math.e, rtol=1e-15)


def test_truncated_normal_support_and_termination():
    noise = rf.TruncatedNormalNoise(0.0, 1.0, -0.5, 0.5, 50)
    xi = noise.sample(np.random.default_rng(1))
    assert np.all(np.abs(xi) <= 0.5)
    stuck = rf.TruncatedNormalNoise(0.0, 1e-3, 10.0, 11.0, 1, max_attempts=5)
    with pytest.raises(rf.FieldError):
        stuck.sample(np.random.default_rng(0))


def test_example3_values():
    spec = rf.example3()
    f = rf.FieldRealization(spec, np.array([3.5, 1.5]))
    assert f(np.array([[0.3, 0.75], [0.3, 0.25]])).tolist() == [3.5, 1.5]
    assert spec.bounds == (1.0, 4.0)
    assert rf.example3_modified().bounds == (1.0, 5.1)
    with pytest.raises(rf.FieldError):
        rf.FieldRealization(spec, np.array([5.0, 1.5]))
    with pytest.raises(rf.FieldError):
        rf.example3(((0.0, 1.0), (1.0, 2.0)))


@pytest.mark.parametrize("factory,p", [(rf.kl_example1, 1.0), (rf.kl_example2, 0.5), (rf.example3, 1.0)])
def test_regularity_exponent(factory, p):
    assert factory().p == p


def test_realization_rejects_wrong_length():
    with pytest.raises(rf.FieldError):
        rf.FieldRealization(rf.kl_example1(), np.zeros(3))


@given(st.integers(0, 2**32 - 1))
def test_sampling_reproducible(seed):
    spec = rf.kl_example1()
    a = spec.sample(np.random.default_rng(seed)).xi
    b = spec.sample(np.random.default_rng(seed)).xi
    assert np.array_equal(a, b)
    assert spec.noise.in_support(a)
