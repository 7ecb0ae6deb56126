import numpy as np
import pytest
from scipy import integrate

from abram.errors import InvalidInputError, PreconditionError
from abram.geometry import Ball
from abram.oracle import (AdversarialDensity, EmpiricalMeasure, F, cube_root_bins, density, grad_F, mean,
                          simpson_weights, tv_distance_1d, wasserstein2_1d)
from abram.potentials import (FunctionPotential, coupled_quadratic_1d, linear_quadratic, mollified_quadratic,
                              shifted_quadratic_1d, zero_potential)
from abram.rng import stream

GAMMAS = [0.0, 0.1, 1.0, 10.0, 1000.0]
EPS = [0.025, 0.1, 0.4, 1.0]
POTENTIALS = {
    "shifted": lambda: shifted_quadratic_1d(0.1),
    "coupled": coupled_quadratic_1d,
    "zero": zero_potential,
    "linear_quadratic": lambda: linear_quadratic(1),
    "mollified": lambda: mollified_quadratic(1, 0.3),
}


def test_simpson_weights_agree_with_scipy():
    x = np.linspace(-0.7, 1.3, 101)
    f = np.exp(np.sin(3 * x))
    assert simpson_weights(101, -0.7, 1.3) @ f == pytest.approx(integrate.simpson(f, x=x), rel=1e-13)


def test_simpson_weights_need_odd_count():
    for n in (1, 2, 100):
        with pytest.raises(PreconditionError):
            simpson_weights(n, 0, 1)


@pytest.mark.parametrize("name", POTENTIALS)
@pytest.mark.parametrize("gamma", GAMMAS)
def test_density_integrates_to_one(name, gamma):
    for eps in EPS:
        d = AdversarialDensity(POTENTIALS[name](), gamma, Ball(eps), [0.3])
        assert abs(d.integral() - 1.0) < 1e-8
        assert np.all(d.values >= 0)
        assert density(eps * 1.01, d) == 0.0


def test_density_examples():
    d = AdversarialDensity(shifted_quadratic_1d(0.1), 0.0, Ball(0.4))
    assert np.allclose(d.values, 1.25, rtol=1e-12)
    d = AdversarialDensity(shifted_quadratic_1d(0.1), 1000.0, Ball(0.4))
    assert d.nodes[np.argmax(d.values), 0] == -0.4
    d = AdversarialDensity(shifted_quadratic_1d(0.1), 0.1, Ball(0.1))
    assert np.all(np.abs(d.values / 5.0 - 1) < 0.02)


def test_density_rejects_tiny_grid():
    with pytest.raises(PreconditionError):
        AdversarialDensity(zero_potential(), 1.0, Ball(1.0), grid=1).values


def test_F_examples():
    d = AdversarialDensity(coupled_quadratic_1d(), 0.0, Ball(1.0))
    assert F([0.0], d) == pytest.approx(1 / 6, abs=1e-12)
    d = AdversarialDensity(linear_quadratic(1), 0.0, Ball(1.0))
    assert F([0.0], d) == pytest.approx(1 / 3, abs=1e-12)
    d = AdversarialDensity(coupled_quadratic_1d(), 10.0, Ball(1.0))
    assert F([0.0], d) <= min(F([0.1], d), F([-0.1], d))


def _fd(d, t, h=1e-5):
    return (F([t + h], d) - F([t - h], d)) / (2 * h)


@pytest.mark.parametrize("gamma", [0.1, 0.5, 1.0, 3.0, 10.0])
@pytest.mark.parametrize("theta", [-1.0, -0.4, 0.0, 0.3, 0.9])
def test_grad_F_matches_fd(gamma, theta):
    d = AdversarialDensity(coupled_quadratic_1d(), gamma, Ball(1.0))
    g, fd = grad_F([theta], d)[0], _fd(d, theta)
    assert abs(g - fd) <= 1e-6 * max(1.0, abs(fd))


def test_grad_F_matches_fd_all_shipped():
    for name, make in POTENTIALS.items():
        for gamma in GAMMAS:
            for eps in EPS:
                d = AdversarialDensity(make(), gamma, Ball(eps))
                g, fd = grad_F([0.37], d)[0], _fd(d, 0.37)
                assert abs(g - fd) <= 1e-6 * max(1.0, abs(fd)), (name, gamma, eps)


def test_grad_F_gamma_zero_is_plain_mean():
    d = AdversarialDensity(coupled_quadratic_1d(), 0.0, Ball(1.0))
    assert abs(grad_F([0.0], d)[0]) < 1e-14
    assert grad_F([0.5], d)[0] == pytest.approx(0.5, abs=1e-12)


def test_mean_examples():
    for eps in EPS:
        assert abs(mean(AdversarialDensity(shifted_quadratic_1d(0.1), 0.0, Ball(eps)))[0]) < 1e-12
    m = mean(AdversarialDensity(shifted_quadratic_1d(0.1), 1000.0, Ball(0.4)))[0]
    assert abs(m + 0.4) < 0.01
    assert abs(mean(AdversarialDensity(shifted_quadratic_1d(0.0), 5.0, Ball(0.4)))[0]) < 1e-10


def test_weak_limit_concentrates_at_maximiser():
    d = AdversarialDensity(shifted_quadratic_1d(0.1), 1e4, Ball(0.4))
    x = d.nodes[:, 0]
    assert d.expect((np.abs(x + 0.4) <= 0.02).astype(float)) > 0.99


def test_F_and_mean_continuous_in_theta():
    for make in POTENTIALS.values():
        d = AdversarialDensity(make(), 10.0, Ball(0.4))
        assert abs(F([0.2], d) - F([0.2 + 1e-6], d)) < 1e-4
        assert abs(mean(d.at([0.2]))[0] - mean(d.at([0.2 + 1e-6]))[0]) < 1e-4


def test_two_dimensional_grid():
    p = linear_quadratic(2)
    d = AdversarialDensity(p, 0.0, Ball(1.0, "l2", 2), [0.0, 0.0])
    # Simpson on a tensor grid cut to the disc: area converges slowly, value is ~1 after normalisation
    assert abs(d.integral() - 1.0) < 1e-12
    assert abs(F([0.0, 0.0], d) - 0.5) < 5e-3  # E||xi||^2 = 1/2 on the unit disc
    box = AdversarialDensity(p, 0.0, Ball(1.0, "linf", 2), [0.0, 0.0])
    assert F([0.0, 0.0], box) == pytest.approx(2 / 3, abs=1e-10)


def test_empirical_measure_basics():
    m = EmpiricalMeasure(np.array([0.1, 0.3, -0.2]))
    assert m.points.shape == (3, 1)
    assert m.weights.sum() == pytest.approx(1.0)
    with pytest.raises(InvalidInputError):
        EmpiricalMeasure(np.zeros((0, 1)))


def test_wasserstein_examples():
    a = EmpiricalMeasure(stream(0, 0).uniform(-1, 1, 500))
    assert wasserstein2_1d(a, a) == 0.0
    assert wasserstein2_1d(EmpiricalMeasure([0.1]), EmpiricalMeasure([0.3])) == pytest.approx(0.2, abs=1e-15)
    big = EmpiricalMeasure(stream(1, 0).uniform(-1, 1, 100_000))
    assert wasserstein2_1d(big, AdversarialDensity(zero_potential(), 0.0, Ball(1.0))) < 0.01


def test_wasserstein_unequal_sizes():
    a = EmpiricalMeasure([0.0, 1.0])
    b = EmpiricalMeasure([0.0, 0.0, 1.0, 1.0])
    assert wasserstein2_1d(a, b) == pytest.approx(0.0, abs=1e-15)
    c = EmpiricalMeasure([0.0, 0.0, 0.0])
    assert wasserstein2_1d(a, c) == pytest.approx(np.sqrt(0.5), abs=1e-12)


def test_tv_examples():
    edges = np.linspace(-1, 1, 41)
    u = lambda x: np.where(np.abs(x) <= 1, 0.5, 0.0)
    half = lambda x: np.where((x >= 0) & (x <= 1), 1.0, 0.0)
    assert tv_distance_1d(u, u, edges) == 0.0
    assert tv_distance_1d(u, half, edges) == pytest.approx(0.5, abs=1e-3)
    left = np.full(100, -0.5)
    right = np.full(100, 0.5)
    assert tv_distance_1d(left, right, edges) == 1.0


def test_tv_of_samples_against_density():
    d = AdversarialDensity(shifted_quadratic_1d(0.1), 10.0, Ball(0.4))
    xs = d.sample(200_000, stream(3, 0))
    edges = np.linspace(-0.4, 0.4, cube_root_bins(len(xs)) + 1)
    assert tv_distance_1d(xs, d, edges) < 0.02


def test_cube_root_bins():
    assert cube_root_bins(1000) == 10
    assert cube_root_bins(10**9) == 200
