import cmath

import numpy as np
import pytest

import qpdnls


@pytest.fixture(scope="module")
def model():
    return qpdnls.Model()


def test_reference_spectrum(model):
    assert model.half_width == 200
    assert model.e(1) < 0.0 < 4.0 < model.e(2)
    phi = model.phi(1)
    assert phi.shape == (401,)
    assert abs(np.dot(phi, phi) - 1.0) < 1e-12
    assert abs(np.dot(phi, model.phi(2))) < 1e-12


def test_nonresonance_examples():
    assert qpdnls.check_nonresonance(-0.5, 4.5)["pass"]
    bad = qpdnls.check_nonresonance(-0.5, -0.1)
    assert not bad["pass"]
    assert bad["violations"][0] == 2


def test_quasi_periodic_solution(model):
    sol = model.solve_qp(0.1, 0.1)
    assert sol["stationarity_residual"] < 1e-9
    assert 0.0 < abs(sol["eps"][0]) < 1e-5
    z1, z2 = 0.1, cmath.rect(0.1, 0.4)
    rot = cmath.rect(1.0, 1.1)
    assert np.linalg.norm(model.psi(rot * z1, rot * z2) - rot * model.psi(z1, z2)) < 1e-14
    # Warm-started from a cached neighbour, so zero only to roundoff.
    assert np.linalg.norm(model.correction(0.1, 0.0)) < 1e-15


def test_decompose_recovers_coordinates(model):
    z1, z2 = cmath.rect(0.08, 0.3), cmath.rect(0.05, -2.0)
    rng = np.random.default_rng(0)
    w = np.zeros(401, dtype=complex)
    w[170:231] = rng.normal(size=61) + 1j * rng.normal(size=61)
    for j in (1, 2):
        p = model.phi(j)
        w -= np.dot(p, w) * p
    w *= 0.01 / np.linalg.norm(w)
    eta = model.rmap(z1, z2, w)
    got1, got2, got_eta, iters = model.decompose(model.psi(z1, z2) + eta)
    assert abs(got1 - z1) < 1e-8 and abs(got2 - z2) < 1e-8
    assert np.linalg.norm(got_eta - eta) < 1e-8
    assert iters >= 1


def test_evolution_tracks_the_rotating_solution(model):
    sol = model.solve_qp(0.1, 0.1)
    run = model.evolve(model.psi(0.1, 0.1), dt=0.01, T=5.0, record_stride=100, track=True)
    assert np.max(np.abs(np.array(run["l2"]) - run["l2"][0])) < 1e-12
    z1 = np.array(run["z1"])
    expected = 0.1 * np.exp(-1j * sol["freq"][0] * np.array(run["t"]))
    assert np.max(np.abs(z1 - expected)) < 1e-6


def test_errors_carry_codes():
    with pytest.raises(qpdnls.QpdnlsError) as info:
        qpdnls.Model(sites=[], N=50)
    assert info.value.code == "WrongDiscreteCount"


def test_decay_exponent_of_the_free_laplacian():
    slope, _ = qpdnls.decay_exponent([(0, 0.0)], N=600, t_min=10.0, t_max=250.0)
    assert -0.40 < slope < -0.28
