import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from thermoforge import kinematics as kin
from thermoforge.diffcore import DomainError

from conftest import random_F


def test_rest_state_invariants():  # [TRIVIAL]
    inv = kin.invariants(np.eye(3))
    assert (inv.I1, inv.I2, inv.J) == (3.0, 3.0, 1.0)
    assert inv.shifted() == (0.0, 0.0, 0.0)


def test_uniaxial_stretch_invariants():  # [DERIVED] C = diag(4,1,1), cof C = diag(1,4,4)
    inv = kin.invariants(np.diag([2.0, 1.0, 1.0]))
    assert (inv.I1, inv.I2, inv.J) == (6.0, 9.0, 2.0)


def test_negative_determinant_rejected():  # [TRIVIAL]
    with pytest.raises(DomainError):
        kin.invariants(np.diag([-1.0, 1.0, 1.0]))


def test_invariant_derivatives_vs_fd(rng):  # [DERIVED] FD oracle
    F = random_F(rng, 1)[0]
    d = kin.invariant_derivatives(F)
    h = 1e-6
    for k, name in enumerate(("I1", "I2", "J")):
        fd = np.zeros((3, 3))
        for i in range(3):
            for j in range(3):
                Fp, Fm = F.copy(), F.copy()
                Fp[i, j] += h
                Fm[i, j] -= h
                fd[i, j] = (getattr(kin.invariants(Fp), name) - getattr(kin.invariants(Fm), name)) / (2 * h)
        assert np.allclose(d[k], fd, rtol=1e-6, atol=1e-8)


def test_cofactor_matches_inverse(rng):  # [DERIVED] cof A = det(A) A^-T
    F = random_F(rng, 20)
    ref = np.linalg.det(F)[:, None, None] * np.linalg.inv(F).transpose(0, 2, 1)
    assert np.allclose(kin.cofactor(F), ref, atol=1e-13)


def test_thermal_gradient_examples():  # [TRIVIAL] / [DERIVED]
    assert np.all(kin.thermal_gradient(np.zeros(3), 300.0) == 0.0)
    assert kin.thermal_gradient(np.array([4.0, 0, 0]), 2.0).tolist() == [-2.0, 0.0, 0.0]
    with pytest.raises(DomainError):
        kin.thermal_gradient(np.zeros(3), 0.0)


def test_thermal_gradient_of_exponential_profile():  # [DERIVED] g = -d(ln T)/dx = 1
    x = 0.37
    T = 300.0 * np.exp(-x)
    grad = np.array([-300.0 * np.exp(-x), 0, 0])
    assert np.allclose(kin.thermal_gradient(grad, T), [1.0, 0, 0], atol=1e-15)


def test_dissipation_invariants(rng):  # [TRIVIAL] / [DERIVED] bilinear-form oracle
    z = kin.dissipation_invariants(np.zeros(3), random_F(rng, 1)[0])
    assert z.as_array().tolist() == [0.0, 0.0, 0.0]
    g = rng.standard_normal(3)
    d = kin.dissipation_invariants(g, np.eye(3)).as_array()
    assert np.allclose(d, np.linalg.norm(g), rtol=1e-15)
    F = random_F(rng, 10)
    gs = rng.standard_normal((10, 3))
    C = F.transpose(0, 2, 1) @ F
    i5 = kin.dissipation_invariants(gs, F).I5_bar
    assert np.allclose(i5**2, np.einsum("ni,nij,nj->n", gs, C, gs), rtol=1e-12)


def test_random_rotation_properties():  # [TRIVIAL]
    for seed in range(20):
        Q = kin.random_rotation(seed)
        assert np.abs(Q.T @ Q - np.eye(3)).max() < 1e-12
        assert abs(np.linalg.det(Q) - 1.0) < 1e-12
    assert np.array_equal(kin.random_rotation(5), kin.random_rotation(5))


def test_isotropy_of_invariants(rng):  # [DERIVED] rotation-invariance oracle
    F = random_F(rng, 100)
    for n in range(100):
        Q = kin.random_rotation(n)
        a = kin.invariants(F[n])
        for G in (Q @ F[n], F[n] @ Q):
            b = kin.invariants(G)
            for x, y in ((a.I1, b.I1), (a.I2, b.I2), (a.J, b.J)):
                assert abs(x - y) <= 1e-10 * abs(x)


def test_material_symmetry_of_dissipation_invariants(rng):  # [DERIVED]
    F = random_F(rng, 100)
    g = rng.standard_normal((100, 3))
    for n in range(100):
        Q = kin.random_rotation(n + 1000)
        a = kin.dissipation_invariants(g[n], F[n]).as_array()
        b = kin.dissipation_invariants(Q.T @ g[n], F[n] @ Q).as_array()
        assert np.allclose(a, b, rtol=1e-10)


def test_uniaxial_incompressible():  # [TRIVIAL]
    F = kin.uniaxial_incompressible(np.array([1.5, 0.8]))
    assert np.allclose(np.linalg.det(F), 1.0)
    assert F[0, 0, 0] == 1.5


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, 3, elements=st.floats(-5, 5)), arrays(np.float64, (3, 3), elements=st.floats(-0.3, 0.3)),
       st.sampled_from([-2.0, 0.5]))
def test_property_homogeneity(g, dF, alpha):  # [DERIVED] absolute homogeneity of norms
    F = np.eye(3) + dF
    a = kin.dissipation_invariants(alpha * g, F).as_array()
    b = abs(alpha) * kin.dissipation_invariants(g, F).as_array()
    assert np.allclose(a, b, rtol=1e-12, atol=1e-300)
