import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from gammastring.curve import PiecewiseAffineCurve, mollify
from gammastring.density import frobenius, single_well_so3
from gammastring.errors import FrameError
from gammastring.frame import (ManifoldPath, normal_field, optimal_cross_sections, smoothstep,
                               tailored_frame, transition)
from gammastring.tensor import det3

E1, E2, E3 = np.eye(3)
SQ2 = math.sqrt(2.0)


def two_segment():
    c = PiecewiseAffineCurve.from_slopes([E1, (E1 + E2) / SQ2], 0.5)
    return c, mollify(c, 3, 0.1)


# transition -------------------------------------------------------------------


def test_transition_values():
    psi, dpsi = transition(np.array([0.0, 0.5, 1.0]))
    assert np.allclose(psi, [0, 0.5, 1], atol=1e-15)
    assert np.allclose(dpsi[[0, 2]], 0)
    psi, _ = transition(np.array([0.02, 0.98, -1.0, 2.0]))
    assert np.array_equal(psi, [0, 1, 0, 1])


def test_transition_slope_bound():
    _, dpsi = transition(np.linspace(0, 1, 100001))
    assert np.abs(dpsi).max() <= 2.0


def test_transition_second_derivative_is_consistent():
    t = np.linspace(0.1, 0.9, 101)
    h = 1e-6
    _, d1, d2 = transition(t, second=True)
    fd = (transition(t + h)[1] - transition(t - h)[1]) / (2 * h)
    assert np.allclose(d2, fd, atol=1e-5)
    S, dS, _ = smoothstep(np.array([0.0, 1.0]))
    assert np.array_equal(S, [0, 1]) and np.array_equal(dS, [0, 0])


# moving frames -------------------------------------------------------------------


def test_straight_curve_frame():
    c = mollify(PiecewiseAffineCurve.from_slopes([E1], 1.0), 3, 0.1)
    fr = normal_field(c)
    n, dn, _ = fr.normal(np.linspace(0, 1, 11))
    assert np.allclose(n, E2) and np.allclose(dn, 0)
    assert np.allclose(fr.binormal(np.linspace(0, 1, 11)), E3)


def test_scaled_slope_binormal_length():
    c = mollify(PiecewiseAffineCurve.from_slopes([2 * E1], 1.0), 3, 0.1)
    b = normal_field(c).binormal(np.array([0.5]))
    assert np.linalg.norm(b) == pytest.approx(0.5)


def test_moving_frame_invariants():
    c = mollify(PiecewiseAffineCurve.from_slopes([E1, E2, E1 + E3, -E2], 1.0), 3, 0.2)
    fr = normal_field(c)
    t = np.linspace(0, c.length, 4001)
    n, _, _ = fr.normal(t)
    du = c.derivative(t)
    assert np.max(np.abs(np.einsum("ij,ij->i", n, du))) <= 1e-10
    assert np.max(np.abs(np.linalg.norm(n, axis=1) - 1)) <= 1e-10
    assert np.max(np.abs(det3(du, n, fr.binormal(t)) - 1)) <= 1e-10
    affine = ~c.in_window(t)
    seg = c.source.segment_index(t[affine])
    for i, normal in enumerate(fr.segment_normals()):
        assert np.allclose(n[affine][seg == i], normal, atol=1e-14)


def test_moving_frame_derivatives_match_finite_differences():
    _, c = two_segment()
    fr = normal_field(c)
    t = np.linspace(0.41, 0.59, 37)
    h = 1e-6
    n, dn, d2n = fr.normal(t)
    fd1 = (fr.normal(t + h)[0] - fr.normal(t - h)[0]) / (2 * h)
    fd2 = (fr.normal(t + h)[1] - fr.normal(t - h)[1]) / (2 * h)
    assert np.allclose(dn, fd1, atol=1e-6)
    assert np.allclose(d2n, fd2, atol=1e-4)


# cross sections ----------------------------------------------------------------


def test_cross_section_single_well_e1():
    (A,) = optimal_cross_sections(PiecewiseAffineCurve.from_slopes([E1], 1.0), single_well_so3(),
                                  normals=[E2])
    assert np.allclose(A, np.column_stack([E2, E3]), atol=1e-6)


def test_cross_section_frobenius():
    (A,) = optimal_cross_sections(PiecewiseAffineCurve.from_slopes([E1], 1.0), frobenius())
    assert np.sum(A**2) == pytest.approx(2.0, rel=1e-8)


def test_cross_section_growth_and_determinant():
    slopes = [0.3 * E1, 2.5 * E2, E1 + E3, 0.7 * (E2 - E3), 0.1 * E1, 6 * E3]
    c = PiecewiseAffineCurve.from_slopes(slopes, 1.0)
    for model in (single_well_so3(), frobenius()):
        for xi, A in zip(c.slopes, optimal_cross_sections(c, model)):
            r = np.linalg.norm(xi)
            assert np.linalg.det(np.column_stack([xi, A])) == pytest.approx(1.0, abs=1e-10)
            # |A|^2 behaves like 2/r for small slopes, so C = 2 suffices for both models
            assert np.sum(A**2) <= 2.0 * (r**2 + 1 / r + 1)


# tailored frame --------------------------------------------------------------------


def test_tailored_frame_two_segment():
    c, s = two_segment()
    fr = normal_field(s)
    A = optimal_cross_sections(c, single_well_so3(), fr.segment_normals())
    tf = tailored_frame(s, fr, A)
    t = np.linspace(0, s.length, 10000)
    assert np.max(np.abs(tf.determinant(t) - 1)) <= 1e-9
    for (a, b), Ai, xi in zip(tf.inner_windows(), A, c.slopes):
        x = np.linspace(a, b, 50)
        F = tf.matrix(x)
        assert np.allclose(F, np.column_stack([xi, Ai])[None], atol=1e-12)
    f = tf.fields(t)
    assert np.linalg.norm(f.n, axis=1).max() < tf.R
    assert np.linalg.norm(np.cross(f.du, f.n), axis=1).min() > tf.r
    const = tf.bound_constant()
    print(f"measured frame bound constant C = {const:.4f}")
    assert 0 < const < 10


def test_tailored_frame_derivatives():
    c, s = two_segment()
    fr = normal_field(s)
    tf = tailored_frame(s, fr, optimal_cross_sections(c, single_well_so3(), fr.segment_normals()))
    t = np.linspace(0.01, 0.99, 397)
    h = 1e-6
    f, fp, fm = tf.fields(t), tf.fields(t + h), tf.fields(t - h)
    assert np.allclose(f.dn, (fp.n - fm.n) / (2 * h), atol=1e-4)
    assert np.allclose(f.db, (fp.b - fm.b) / (2 * h), atol=1e-4)
    assert np.allclose(f.d2n, (fp.dn - fm.dn) / (2 * h), atol=1e-2)
    assert np.allclose(f.d2b, (fp.db - fm.db) / (2 * h), atol=1e-2)


def test_tailored_frame_aligned_targets():
    c = PiecewiseAffineCurve.from_slopes([E1, E2], 0.5)
    s = mollify(c, 3, 0.1)
    fr = normal_field(s)
    normals = fr.segment_normals()
    A = [np.column_stack([nr, np.cross(xi, nr) * 2.0]) for xi, nr in zip(c.slopes, normals)]
    A = [np.column_stack([a[:, 0], a[:, 1] / np.linalg.det(np.column_stack([xi, a]))])
         for a, xi in zip(A, c.slopes)]
    tf = tailored_frame(s, fr, A)
    t = np.linspace(0, 1, 2001)
    f = tf.fields(t)
    assert np.allclose(f.n, fr.normal(t)[0], atol=1e-14)
    assert np.max(np.abs(tf.determinant(t) - 1)) <= 1e-12


def test_tailored_frame_rejects_bad_input():
    c, s = two_segment()
    fr = normal_field(s)
    A = optimal_cross_sections(c, single_well_so3(), fr.segment_normals())
    with pytest.raises(FrameError):
        tailored_frame(s, fr, A[:1])
    with pytest.raises(FrameError):
        tailored_frame(s, fr, A, delta=0.5, eta=0.5)


# manifold paths -------------------------------------------------------------------


def test_constant_path():
    p = ManifoldPath(np.eye(3), np.eye(3))
    t = np.linspace(0, 1, 5)
    assert np.allclose(p.value(t), np.eye(3))
    assert np.allclose(p.derivative(t), 0)


def test_so3_quarter_turn():
    R = Rotation.from_rotvec([0, 0, math.pi / 2]).as_matrix()
    p = ManifoldPath(np.eye(3), R, "SO3")
    half = Rotation.from_rotvec([0, 0, math.pi / 4]).as_matrix()
    assert np.allclose(p.value(0.5)[0], half, atol=1e-14)
    P = p.value(np.linspace(0, 1, 100))
    assert np.max(np.abs(np.einsum("tji,tjk->tik", P, P) - np.eye(3))) <= 1e-12
    assert np.allclose(p.value(1.0)[0], R, atol=1e-14)


def test_so3_constant_speed_and_derivatives():
    F0 = Rotation.from_rotvec([0.2, -0.4, 0.1]).as_matrix()
    F1 = Rotation.from_rotvec([-1.0, 0.5, 2.0]).as_matrix()
    p = ManifoldPath(F0, F1)
    t = np.linspace(0, 1, 101)
    speed = np.linalg.norm(p.derivative(t), axis=(1, 2))
    assert np.max(np.abs(speed / speed[0] - 1)) <= 1e-8
    assert speed[0] == pytest.approx(p.speed, rel=1e-12)
    h = 1e-6
    fd = (p.derivative(t + h, 1) - p.derivative(t - h, 1)) / (2 * h)
    assert np.allclose(p.derivative(t, 2), fd, atol=1e-6)


def test_sl3_diagonal_path():
    p = ManifoldPath(np.eye(3), np.diag([2.0, 1.0, 0.5]), "SL3")
    t = np.linspace(0, 1, 51)
    P = p.value(t)
    ref = np.zeros_like(P)
    ref[:, 0, 0], ref[:, 1, 1], ref[:, 2, 2] = 2.0**t, 1.0, 2.0**-t
    assert np.allclose(P, ref, atol=1e-13)
    assert np.max(np.abs(np.linalg.det(P) - 1)) <= 1e-10


def test_sl3_general_endpoints():
    rng = np.random.default_rng(5)
    for _ in range(20):
        F0, F1 = rng.normal(size=(2, 3, 3))
        F0 /= np.cbrt(np.linalg.det(F0))
        # F1 on the same component as F0: positive determinant
        F1 *= np.sign(np.linalg.det(F1))
        F1 /= np.cbrt(np.linalg.det(F1))
        p = ManifoldPath(F0, F1, "SL3")
        assert np.allclose(p.value(0.0)[0], F0, atol=1e-10)
        assert np.allclose(p.value(1.0)[0], F1, atol=1e-9)
        assert np.max(np.abs(np.linalg.det(p.value(np.linspace(0, 1, 21))) - 1)) <= 1e-10


def test_path_rejects_non_members():
    with pytest.raises(ValueError):
        ManifoldPath(np.eye(3), np.diag([2.0, 1.0, 1.0]))
    with pytest.raises(ValueError):
        ManifoldPath(np.eye(3), np.diag([2.0, 1.0, 0.5]), "SO3")
    with pytest.raises(ValueError):
        ManifoldPath(np.eye(3), np.eye(3), "GL3")
    with pytest.raises(ValueError):
        ManifoldPath(np.eye(3), np.eye(3)).derivative(0.5, 3)
