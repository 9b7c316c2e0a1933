import numpy as np
import pytest

from thermoforge import constitutive as cm
from thermoforge import kinematics as kin
from thermoforge.constitutive import NeuralThermoModel

from conftest import random_F


def fd_stress(model, F, s, h=1e-6):
    P = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            Fp, Fm = F.copy(), F.copy()
            Fp[i, j] += h
            Fm[i, j] -= h
            P[i, j] = (model.internal_energy(Fp, s) - model.internal_energy(Fm, s)) / (2 * h)
    return P


def test_rest_state_normalization(model):  # [TRIVIAL] e(I,0)=0, P(I,0)=0, T(I,0)=T0
    I = np.eye(3)
    assert model.auxiliary_energy(I, 0.0) == 0.0
    assert model.internal_energy(I, 0.0) == 0.0
    P, T = model.stress_and_temperature(I, 0.0)
    assert np.abs(P).max() < 1e-10
    assert abs(T - model.T0) < 1e-8 * model.T0


def test_growth_energy_values():  # [TRIVIAL] / [DERIVED] 10 - 7 ln 2
    assert cm.growth_energy(np.eye(3), 1.0) == 0.0
    assert np.all(cm.growth_energy_gradient(np.eye(3), 1.0) == 0.0)
    assert cm.growth_energy(np.diag([2.0, 1.0, 1.0]), 1.0) == pytest.approx(10 - 7 * np.log(2), abs=1e-14)


def test_stress_and_temperature_match_fd(model, rng):  # [DERIVED] FD oracle
    for F in random_F(rng, 5, 0.15):
        s = rng.uniform(-2.0, 2.0)
        P, T = model.stress_and_temperature(F, s)
        assert np.allclose(P, fd_stress(model, F, s), rtol=1e-6, atol=1e-6 * np.abs(P).max())
        h = 1e-5
        T_fd = (model.internal_energy(F, s + h) - model.internal_energy(F, s - h)) / (2 * h)
        assert T == pytest.approx(T_fd, rel=1e-6)


def test_separate_convexity(model, rng):  # [DERIVED] secant oracle
    specs, params = model.specs, model.params
    for _ in range(200):
        a, b = rng.uniform(-0.5, 0.5, (2, 3))
        s = rng.uniform(-1, 1)
        f = lambda x: cm.aux_energy_core(specs, params, x[0], x[1], x[2], s)
        lam = 0.3
        assert f(lam * a + (1 - lam) * b) <= lam * f(a) + (1 - lam) * f(b) + 1e-12
        s1, s2 = rng.uniform(-1, 1, 2)
        g = lambda t: cm.aux_energy_core(specs, params, a[0], a[1], a[2], t)
        assert g(lam * s1 + (1 - lam) * s2) <= lam * g(s1) + (1 - lam) * g(s2) + 1e-12


def test_temperature_increases_with_entropy(model):  # [DERIVED] strict convexity in s
    s = np.linspace(-3, 3, 61)
    F = np.broadcast_to(np.diag([1.05, 0.98, 1.0]), (61, 3, 3))
    T = model.temperature_of(F, s)
    assert np.all(np.diff(T) > 0)
    assert np.all(model.temperature_slope(F, s) > 0)


def test_invalid_rest_derivative_is_reported():  # [TRIVIAL]
    m = NeuralThermoModel.initialize(0)
    params = {k: [dict(l) for l in v] for k, v in m.params.items()}
    # flip the entropy networks so that de/ds at rest is negative
    for name in ("FICNN_Fs", "FICNN_s"):
        params[name] = [{k: (-abs(v) - 1.0 if k == "V" else v) for k, v in l.items()} for l in params[name]]
    with pytest.raises(cm.ModelInvalidError):
        cm.normalization_constants(m.specs, params, 1.0)


def test_fixed_mode_uses_unit_factor():  # [TRIVIAL]
    m = NeuralThermoModel.initialize(1, nT_mode="fixed")
    assert m.constants()[1] == 1.0


def test_objectivity(model, rng):  # [DERIVED] rotation oracle
    for n, F in enumerate(random_F(rng, 20, 0.15)):
        Q = kin.random_rotation(n)
        s = rng.uniform(-1, 1)
        e = model.internal_energy(F, s)
        assert model.internal_energy(Q @ F, s) == pytest.approx(e, rel=1e-10, abs=1e-12)
        assert model.internal_energy(F @ Q, s) == pytest.approx(e, rel=1e-10, abs=1e-12)
        assert np.allclose(Q @ model.piola_stress(F, s), model.piola_stress(Q @ F, s), rtol=1e-9, atol=1e-9)


def test_dissipation_properties(model, rng):  # [TRIVIAL] / [DERIVED]
    F = random_F(rng, 200, 0.15)
    s = rng.uniform(-1, 1, 200)
    g = rng.standard_normal((200, 3))
    assert np.all(model.dissipation_potential(np.zeros((200, 3)), F, s) == 0.0)
    assert np.all(model.heat_flux(np.zeros((200, 3)), F, s) == 0.0)
    phi = model.dissipation_potential(g, F, s)
    assert np.all(phi >= 0.0)
    q = model.heat_flux(g, F, s)
    assert np.all(np.einsum("ni,ni->n", q, g) >= -1e-12)
    # secant convexity along random directions
    d = rng.standard_normal((200, 3))
    f = lambda t: model.dissipation_potential(g + t * d, F, s)
    assert np.all(f(0.0) <= 0.5 * f(-1.0) + 0.5 * f(1.0) + 1e-12)


def test_heat_flux_matches_fd(model, rng):  # [DERIVED] FD oracle
    F = random_F(rng, 1, 0.1)[0]
    g = np.array([0.3, -0.2, 0.5])
    q = model.heat_flux(g, F, 0.4)
    h = 1e-6
    fd = [(model.dissipation_potential(g + h * e, F, 0.4) - model.dissipation_potential(g - h * e, F, 0.4)) / (2 * h) for e in np.eye(3)]
    assert np.allclose(q, fd, rtol=1e-6)


def test_heat_flux_symmetry(model, rng):  # [DERIVED] material symmetry of q
    F = random_F(rng, 10, 0.1)
    g = rng.standard_normal((10, 3))
    for n in range(10):
        Q = kin.random_rotation(n + 77)
        q = model.heat_flux(g[n], F[n], 0.2)
        q_rot = model.heat_flux(Q.T @ g[n], F[n] @ Q, 0.2)
        assert np.allclose(Q.T @ q, q_rot, rtol=1e-9, atol=1e-12)
        assert model.dissipation_potential(Q.T @ g[n], F[n] @ Q, 0.2) == pytest.approx(
            model.dissipation_potential(g[n], F[n], 0.2), rel=1e-10)


def test_entropy_solve_rest_state(model):  # [TRIVIAL]
    assert model.solve_entropy(np.eye(3), model.T0) == pytest.approx(0.0, abs=1e-12)


def test_entropy_solve_residual_and_quadratic_convergence(model, rng):  # [DERIVED] logged residuals
    F = random_F(rng, 50, 0.1)
    T = rng.uniform(250, 350, 50)
    log = cm.EntropySolveLog()
    s = model.solve_entropy(F, T, log=log)
    assert np.abs(model.temperature_of(F, s) - T).max() < 1e-10 * model.T0
    r = np.array(log.residuals)
    r = r[r > 1e-14]
    # observed order log(r_{k+1}/r_k) / log(r_k/r_{k-1}) over the final iterations
    orders = np.log(r[2:] / r[1:-1]) / np.log(r[1:-1] / r[:-2])
    assert orders[-1] > 1.8


def test_entropy_solve_agrees_with_bisection(model, rng):  # [DERIVED] bisection oracle
    from scipy.optimize import brentq

    F = random_F(rng, 5, 0.1)
    T = rng.uniform(260, 340, 5)
    s = model.solve_entropy(F, T)
    for n in range(5):
        root = brentq(lambda x: model.temperature_of(F[n], x) - T[n], -50, 50, xtol=1e-14)
        assert s[n] == pytest.approx(root, abs=1e-8)


def test_entropy_solve_convergence_error(model):  # [TRIVIAL]
    with pytest.raises(cm.ConvergenceError):
        cm.solve_entropy(model, np.eye(3), np.array([400.0]), max_iter=1, fallback=False)


def test_mlp_anchoring_and_determinism(model):  # [TRIVIAL]
    assert model.entropy_mlp_predict(np.eye(3), model.T0) == 0.0
    F = np.diag([1.1, 1.0, 0.95])
    assert model.entropy_mlp_predict(F, 310.0) == model.entropy_mlp_predict(F, 310.0)


def test_unit_scaling_is_consistent():  # [DERIVED] physical response independent of internal units
    a = NeuralThermoModel.initialize(3, temperature_scale=1.0, energy_scale=1.0)
    b = a.with_params(a.params)
    F = np.diag([1.02, 0.99, 1.0])
    assert np.array_equal(a.piola_stress(F, 0.3), b.piola_stress(F, 0.3))
