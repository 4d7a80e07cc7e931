import numpy as np
import pytest

from gammastring.curve import PiecewiseAffineCurve, mollify
from gammastring.errors import ConditioningError, DomainEscapeError
from gammastring.frame import normal_field, tailored_frame
from gammastring.recovery import (AffineFiber, build_path_deformation, build_tube, compose,
                                  det_check, fd_rescaled_gradient, inner_perturbation,
                                  interior_nodes, write_field)
from gammastring.tensor import BoxGrid, LinearField, det_matrix, sup_norm

from builders import E1, E2, E3, loglog_slope, right_angle_path, tube, two_segment_frame
from oracles import affine_phi

SMALL = (65, 9, 17)


class AffineDet:
    """Stand-in deformation whose determinant is ``1 + a + b x3`` on every fiber."""

    def __init__(self, a=0.0, b=0.0, eps=0.1):
        self.a, self.b, self.eps = a, b, eps
        self.domain = BoxGrid(shape=SMALL)

    def fiber(self, x1, x2):
        x1 = np.asarray(x1, dtype=float)
        c0 = np.full(x1.shape, 1.0 + self.a)
        c1 = np.full(x1.shape, self.b)
        return AffineFiber(c0, c1, np.zeros(x1.shape + (3,)), np.zeros(x1.shape + (3,)))


@pytest.fixture(scope="module")
def frame():
    return two_segment_frame()


@pytest.fixture(scope="module")
def tube_sweep(frame):
    """Tube deformations and perturbations for eps = 2^-4 .. 2^-9 on a coarse grid."""
    out = []
    for k in range(4, 10):
        v = tube(2.0**-k, SMALL, frame)
        out.append((2.0**-k, v, inner_perturbation(v)))
    return out


# tube deformation ---------------------------------------------------------------


def test_straight_tube_is_scaling():
    c = PiecewiseAffineCurve.from_slopes([E1], 1.0)
    s = mollify(c, 3, 0.1)
    fr = normal_field(s)
    tf = tailored_frame(s, fr, [np.column_stack([E2, E3])])
    v = build_tube(s, tf, 0.05, BoxGrid(shape=SMALL))
    x = BoxGrid(shape=SMALL).nodes(outer=True).reshape(-1, 3)
    assert np.allclose(v.value(x), x * [1, 0.05, 0.05], atol=1e-15)
    assert np.allclose(v.det(x), 1, atol=1e-15)
    assert v.det_error(BoxGrid(shape=SMALL)) == pytest.approx(0, abs=1e-14)


def test_tube_gradient_matches_finite_differences(frame):
    v = tube(2.0**-5, SMALL, frame)
    x = interior_nodes(BoxGrid(shape=SMALL))
    fd = fd_rescaled_gradient(v, x, 1e-5)
    assert np.max(np.abs(fd - v.rescaled(x))) <= 1e-6


def test_tube_fiber_matches_determinant(frame):
    v = tube(2.0**-4, SMALL, frame)
    g = BoxGrid(shape=SMALL).nodes(outer=True).reshape(-1, 3)
    assert np.allclose(v.det(g), det_matrix(v.rescaled(g)), atol=1e-12)
    h = 1e-6
    num = np.stack([(v.det(g + h * e) - v.det(g - h * e)) / (2 * h) for e in np.eye(3)], axis=-1)
    assert np.allclose(v.det_grad(g), num, atol=1e-5)


def test_tube_rates(tube_sweep):
    eps = np.array([e for e, _, _ in tube_sweep])
    grid = BoxGrid(shape=SMALL)
    det_c1 = [v.det_error(grid, order=1) for _, v, _ in tube_sweep]
    assert loglog_slope(eps, det_c1) >= 0.9
    # distance to the midline map x -> u(x1) in C^1
    dist = []
    x = grid.nodes().reshape(-1, 3)
    for e, v, _ in tube_sweep:
        mid = v.curve.value(x[:, 0])
        J = v.jacobian(x)
        J[:, :, 0] -= v.curve.derivative(x[:, 0])
        dist.append(sup_norm(v.value(x) - mid, 1, J, 1))
    assert loglog_slope(eps, dist) >= 0.9


# path deformation ---------------------------------------------------------------


def test_single_segment_path_is_affine():
    c = PiecewiseAffineCurve.from_slopes([E1], 1.0)
    v = build_path_deformation(c, [np.column_stack([E2, E3])], "SO3", 0.3, 0.1,
                               BoxGrid(shape=SMALL))
    x = BoxGrid(shape=SMALL).nodes(outer=True).reshape(-1, 3)
    assert np.allclose(v.value(x), x * [1, 0.1, 0.1], atol=1e-15)
    assert np.array_equal(v.det(x), np.ones(len(x)))


def test_path_is_continuous_across_windows():
    v = right_angle_path(2.0**-6, 0.3, SMALL)
    rng = np.random.default_rng(0)
    for a, b in v.windows:
        for edge in (a, b):
            y = rng.uniform(-1, 1, (20, 2))
            lo = np.column_stack([np.full(20, edge - 1e-13), y])
            hi = np.column_stack([np.full(20, edge + 1e-13), y])
            assert np.max(np.abs(v.value(lo) - v.value(hi))) <= 1e-12


def test_path_gradient_matches_finite_differences():
    v = right_angle_path(2.0**-6, 0.3, SMALL)
    x = interior_nodes(BoxGrid(shape=SMALL))
    x = x[v.in_window(x[:, 0])]
    assert len(x) > 0
    fd = fd_rescaled_gradient(v, x, 1e-6)
    assert np.max(np.abs(fd - v.rescaled(x))) <= 1e-5
    assert np.allclose(v.det(x), det_matrix(v.rescaled(x)), atol=1e-12)


def test_path_determinant_rates_and_bounds():
    beta = 0.3
    eps = 2.0 ** -np.arange(4, 11)
    grid = BoxGrid(shape=(129, 9, 17))
    det0, sup, dP = [], [], []
    for e in eps:
        v = right_angle_path(e, beta, grid.shape)
        x = grid.nodes(outer=True).reshape(-1, 3)
        det0.append(v.det_error(grid, order=0))
        sup.append(np.linalg.norm(v.rescaled(x), axis=(1, 2)).max())
        a, b = v.windows[0]
        _, _, d, _ = v._window_matrices(0, np.linspace(a, b, 2001))
        dP.append(np.linalg.norm(d, axis=(1, 2)).max() * e**beta)
        off = ~v.in_window(x[:, 0])
        assert np.array_equal(v.det(x[off]), np.ones(off.sum()))
    assert loglog_slope(eps, det0) == pytest.approx(1 - beta, abs=0.15)
    assert max(sup) / min(sup) <= 1.5
    assert max(dP) / min(dP) <= 1.0 + 1e-9 and min(dP) > 0


def test_path_window_must_fit():
    with pytest.raises(ValueError):
        right_angle_path(2.0**-3, 0.3, SMALL)


# inner perturbation ---------------------------------------------------------------


def test_unit_determinant_gives_identity():
    p = inner_perturbation(AffineDet())
    x3 = p.grid.nodes()[..., 2]
    assert np.max(np.abs(p.phi - x3)) <= 1e-14
    assert np.max(np.abs(p.d1)) == 0 and np.max(np.abs(p.d2)) == 0
    assert np.max(np.abs(p.d3 - 1)) <= 1e-15


@pytest.mark.parametrize("a", [-0.3, 0.2, 0.9])
def test_constant_determinant_closed_form(a):
    p = inner_perturbation(AffineDet(a=a))
    x3 = p.grid.nodes()[..., 2]
    assert np.max(np.abs(p.phi - x3 / (1 + a))) <= 1e-10
    assert np.max(np.abs(p.d3 - 1 / (1 + a))) <= 1e-10


def test_affine_determinant_against_quadratic_root():
    p = inner_perturbation(AffineDet(a=0.1, b=0.4))
    x3 = p.grid.nodes()[..., 2]
    assert np.max(np.abs(p.phi - affine_phi(1.1, 0.4, x3))) <= 1e-10
    assert p.residual <= 1e-9


def test_conditioning_and_escape_errors():
    with pytest.raises(ConditioningError):
        inner_perturbation(AffineDet(a=-0.55))
    with pytest.raises(DomainEscapeError):
        inner_perturbation(AffineDet(a=-0.6), lower=0.1)
    with pytest.raises(ValueError):
        inner_perturbation(AffineDet(), step=0.0)


def test_perturbation_invariants(tube_sweep):
    for _, v, p in tube_sweep:
        assert np.all(p.phi[..., p.grid.shape[2] // 2] == 0)
        assert np.all(np.diff(p.phi, axis=-1) > 0)
        assert np.all(np.abs(p.phi) <= 1)
        nodes = p.grid.nodes()
        y = nodes.copy()
        y[..., 2] = p.phi
        assert np.max(np.abs(p.d3 * v.det(y) - 1)) <= 1e-9
        assert p.lower_bound >= 0.5


def test_perturbation_rates(tube_sweep):
    eps = np.array([e for e, _, _ in tube_sweep])
    gamma = 1.0
    c1 = [p.c1_error() for _, _, p in tube_sweep]
    assert loglog_slope(eps, c1) >= gamma - 0.2
    comps = [p.component_errors() for _, _, p in tube_sweep]
    for key in ("d3", "phi", "d1", "d2"):
        assert loglog_slope(eps, [c[key] for c in comps]) >= gamma - 0.2


def test_evaluate_matches_nodes(tube_sweep):
    _, v, p = tube_sweep[2]
    x = p.grid.nodes().reshape(-1, 3)[::7]
    phi, dphi = p.evaluate(x)
    assert np.max(np.abs(phi - p.phi.reshape(-1)[::7])) <= 1e-9
    assert np.max(np.abs(dphi[:, 2] - p.d3.reshape(-1)[::7])) <= 1e-9


def test_path_perturbation_off_window_is_exact():
    v = right_angle_path(2.0**-6, 0.3, SMALL)
    p = inner_perturbation(v, BoxGrid(shape=SMALL), gamma=0.4)
    u = compose(v, p)
    x = interior_nodes(p.grid)
    off = x[~v.in_window(x[:, 0])]
    assert np.max(np.abs(u.value(off) - v.value(off))) <= 1e-12
    assert np.max(np.abs(u.rescaled(off) - v.rescaled(off))) <= 1e-12


# composition ----------------------------------------------------------------


def test_trivial_composition():
    v = right_angle_path(2.0**-6, 0.3, SMALL)
    c = PiecewiseAffineCurve.from_slopes([E1], 1.0)
    straight = build_path_deformation(c, [np.column_stack([E2, E3])], "SO3", 0.3, 0.1,
                                      BoxGrid(shape=SMALL))
    u = compose(straight, inner_perturbation(straight))
    x = interior_nodes(BoxGrid(shape=SMALL))
    assert np.max(np.abs(u.value(x) - straight.value(x))) <= 1e-14
    with pytest.raises(ValueError):
        compose(v, inner_perturbation(straight))


def test_composed_tube(tube_sweep):
    eps = np.array([e for e, _, _ in tube_sweep])
    diffs = []
    for _, v, p in tube_sweep:
        u = compose(v, p)
        x = interior_nodes(p.grid)
        assert np.max(np.abs(u.det(x) - 1)) <= 1e-8
        diffs.append(sup_norm(u.value(x) - v.value(x), 1, u.jacobian(x) - v.jacobian(x), 1))
    assert loglog_slope(eps, diffs) >= 1.8


def test_det_check_linear_field():
    f = LinearField(np.eye(3), 0.1, domain=BoxGrid(shape=SMALL))
    assert det_check(f, 1e-4) <= 1e-10
    with pytest.raises(ValueError):
        det_check(f, 0.0)


def test_det_check_path_field_off_window_margin():
    v = right_angle_path(2.0**-6, 0.3, SMALL)
    u = compose(v, inner_perturbation(v, BoxGrid(shape=SMALL), gamma=0.4))
    assert det_check(u, 1e-4, BoxGrid(shape=SMALL)) <= 1e-6


def test_write_field(tmp_path, tube_sweep):
    _, v, p = tube_sweep[-1]
    u = compose(v, p)
    grid = BoxGrid(shape=(5, 3, 3))
    path = tmp_path / "field.txt"
    write_field(u, path, grid)
    data = np.loadtxt(path)
    assert data.shape == (45, 7)
    assert np.allclose(data[:, 6], 1, atol=1e-8)
    assert path.read_text().startswith("# x1 x2 x3 u1 u2 u3 det")
