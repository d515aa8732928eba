import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hypoflow import oracles, target as tg
from hypoflow.errors import AliasingError, ConfigurationError, DomainError, TubeExitError
from hypoflow.flow import Perturbation, winding_map

from conftest import fixture

TARGETS = {k: tg.build_target(k) for k in tg.TARGET_KINDS}


def tube_point(kind, raw):
    """Map a raw vector to a point whose block radii lie in [0.6, 1.6]."""
    t = TARGETS[kind]
    y = np.array(raw[: t.K], dtype=float)
    for b in t.blocks:
        n = np.linalg.norm(y[b])
        y[b] = y[b] / n * (0.6 + (n % 1.0)) if n > 1e-3 else np.eye(b.stop - b.start)[0]
    return y


vec4 = arrays(np.float64, 4, elements=st.floats(-3, 3))


@pytest.mark.parametrize("kind", tg.TARGET_KINDS)
@given(raw=vec4)
@settings(max_examples=60, deadline=None)
def test_projection_idempotent_and_orthogonal(kind, raw):
    t = TARGETS[kind]
    y = tube_point(kind, raw)
    p = tg.project(t, y)
    assert tg.on_manifold(t, p)
    assert np.allclose(tg.project(t, p), p, atol=1e-14)
    # residual is normal: orthogonal to the tangent space at p
    J = tg.projection_jacobian(t, p)
    assert np.allclose(J @ (y - p), 0.0, atol=1e-12)
    # at p the Jacobian is the tangent projector
    assert np.allclose(J @ J, J, atol=1e-12)
    assert np.allclose(J, J.T, atol=1e-14)


@pytest.mark.parametrize("kind", tg.TARGET_KINDS)
@given(raw=vec4, v=vec4, w=vec4)
@settings(max_examples=30, deadline=None)
def test_projection_derivatives_match_finite_differences(kind, raw, v, w):
    t = TARGETS[kind]
    y = tube_point(kind, raw)
    v, w = v[: t.K], w[: t.K]
    d1, d2 = oracles.fd_projection_derivatives(lambda q: tg.project(t, q), y, v, w)
    scale = 1 + np.linalg.norm(v) * np.linalg.norm(w)
    assert np.allclose(tg.projection_jacobian(t, y) @ v, d1, atol=1e-6 * (1 + np.linalg.norm(v)))
    assert np.allclose(tg.hessian_contraction(t, y, v, w), d2, atol=1e-5 * scale)


def test_second_fundamental_requires_point_on_target():
    t = TARGETS["Circle"]
    with pytest.raises(DomainError):
        tg.second_fundamental_contraction(t, np.array([1.1, 0.0]), np.array([0, 1.0]), np.array([0, 1.0]))
    # unit circle: II(v, v) = -|v|^2 p for tangent v
    p = np.array([np.cos(0.4), np.sin(0.4)])
    v = np.array([-p[1], p[0]]) * 2.0
    assert np.allclose(tg.second_fundamental_contraction(t, p, v, v), -4.0 * p)


def test_tube_exit_reports_node():
    t = TARGETS["Circle"]
    y = np.tile([1.0, 0.0], (5, 1))
    y[3] = [0.05, 0.0]
    with pytest.raises(TubeExitError) as exc:
        tg.project(t, y)
    assert exc.value.node == 3


def test_tube_defect_examples():
    t = TARGETS["Circle"]
    h3 = 0.125
    on = np.tile([0.0, 1.0], (4, 1))
    assert tg.tube_defect(t, on, h3) == 0.0
    off = on * 1.5  # each residual has length 0.5
    assert tg.tube_defect(t, off, h3) == pytest.approx(4 * 0.25 * h3)


def test_geodesic_distance():
    c, T2, S = TARGETS["Circle"], TARGETS["FlatTorus2"], TARGETS["Sphere2"]
    assert tg.geodesic_distance(c, np.array([1.0, 0]), np.array([-1.0, 0])) == pytest.approx(np.pi)
    a = tg.from_angles(T2, np.array([[0.1, -3.0]]))
    b = tg.from_angles(T2, np.array([[0.5, 3.0]]))
    assert tg.geodesic_distance(T2, a, b)[0] == pytest.approx(np.hypot(0.4, 2 * np.pi - 6.0))
    assert tg.geodesic_distance(S, np.array([0, 0, 1.0]), np.array([1.0, 0, 0])) == pytest.approx(np.pi / 2)


def test_from_angles_rejects_sphere():
    with pytest.raises(ConfigurationError):
        tg.from_angles(TARGETS["Sphere2"], np.zeros(3))


@given(a=st.floats(-50, 50))
def test_wrap_angle_range(a):
    w = float(tg.wrap_angle(a))
    assert -np.pi <= w < np.pi
    assert np.isclose(np.cos(w), np.cos(a)) and np.isclose(np.sin(w), np.sin(a))


@pytest.mark.parametrize("kind,windings,expected", [
    ("ContactTorus", (1, 0, 0), (1, 0, 0)),
    ("ContactTorus", (2, -1, 1), (2, -1, 1)),
    ("CommutingTorus", (0, 0, -1), (0, 0, -1)),
    ("HeisenbergNilmanifold", (1, 1, 0), (1, 1, 0)),
])
def test_winding_of_affine_maps(kind, windings, expected):
    f = fixture(kind, 15)
    u = winding_map(f, TARGETS["Circle"], [windings])
    assert tg.winding_numbers(u.target, u.values, f.grid) == expected


@given(amp=st.floats(0.0, 0.5), phase=st.floats(0, 6.28), rot=st.floats(-np.pi, np.pi))
@settings(max_examples=20, deadline=None)
def test_winding_invariant_under_perturbation_and_rotation(amp, phase, rot):
    f = fixture("ContactTorus", 9)
    t = TARGETS["Circle"]
    u = winding_map(f, t, [(1, -1, 0)], Perturbation(amp, (1, 1, 1), phase))
    R = np.array([[np.cos(rot), -np.sin(rot)], [np.sin(rot), np.cos(rot)]])
    assert tg.winding_numbers(t, u.values @ R.T, f.grid) == (1, -1, 0)


def test_aliasing_detected():
    f = fixture("ContactTorus", 5)
    t = TARGETS["Circle"]
    i = f.grid.unravel(np.arange(f.grid.size))[0]
    u = tg.from_angles(t, np.pi * (i % 2))  # neighbours antipodal
    with pytest.raises(AliasingError):
        tg.winding_numbers(t, u, f.grid)


def test_undersampled_winding_aliases():
    # 3 turns over 5 nodes steps by 6 pi / 5 > pi: indistinguishable from -2 turns
    f = fixture("ContactTorus", 5)
    u = winding_map(f, TARGETS["Circle"], [(3, 0, 0)])
    assert tg.winding_numbers(u.target, u.values, f.grid) == (-2, 0, 0)


def test_curvature_classes():
    assert TARGETS["Sphere2"].curvature_class is tg.CurvatureClass.POSITIVE
    assert TARGETS["FlatTorus2"].circle_factors == 2 and TARGETS["FlatTorus2"].K == 4
