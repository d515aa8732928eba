"""Closed-form fixture values, each checked against an independent oracle."""

import numpy as np
import pytest

from hypoflow import ccgeom, flow, manifold, operator as opm, oracles
from hypoflow import target as tg

from conftest import fixture, sub_laplacian

TP = 2 * np.pi


@pytest.mark.parametrize("kind,value", [("ContactTorus", -TP), ("HeisenbergNilmanifold", -1.0)])
def test_torsion_constant(kind, value):
    f = fixture(kind)
    assert np.allclose(f.torsion[0, 0, 1], value, atol=1e-12)


@pytest.mark.parametrize("kind", ["ContactTorus", "HeisenbergNilmanifold"])
def test_bracket_oracle_agreement(kind):
    f = fixture(kind)
    pts = f.samples["points"][::13]
    h = f.frame.horizontal
    s = manifold.sample_frame(f.frame, pts)
    analytic = manifold.bracket(s["horizontal"][0], s["horizontal_jac"][0], s["horizontal"][1], s["horizontal_jac"][1])
    assert np.abs(analytic - oracles.fd_bracket(h[0].coeffs, h[1].coeffs, pts)).max() <= 1e-10


def test_contact_distance_along_x():
    # at z = 0, e1 = d_x: the x-segment is horizontal
    f = fixture("ContactTorus", 21)
    d = ccgeom.cc_distance_field(f, 0)
    h = 1 / 21
    for i in (1, 2):
        assert abs(d[f.grid.index(i, 0, 0)] - i * h) <= 3 * h


def test_first_derivative_at_origin():
    f = fixture("ContactTorus", 21)
    x = f.samples["points"][:, 0]
    D1 = sub_laplacian("ContactTorus", 21).derivatives[0]
    assert (D1 @ np.sin(TP * x))[0] == pytest.approx(TP, rel=1e-3)


def test_contact_laplacian_of_sin_x():
    f = fixture("ContactTorus", 21)
    x = f.samples["points"][:, 0]
    Lu = sub_laplacian("ContactTorus", 21).matrix @ np.sin(TP * x)
    assert abs(Lu[0]) < 1e-10
    node = int(f.grid.nearest_node(np.array([[0.25, 0.0, 0.0]]))[0])
    xn = f.samples["points"][node, 0]
    assert Lu[node] == pytest.approx(-TP**2 * np.sin(TP * xn), rel=1e-2)


def test_heisenberg_laplacian_of_sin_x():
    f = fixture("HeisenbergNilmanifold", 21)
    u = np.sin(TP * f.samples["points"][:, 0])
    assert np.abs(sub_laplacian("HeisenbergNilmanifold", 21).matrix @ u + TP**2 * u).max() < 1e-2 * TP**2


def test_heat_eigenpair_against_dense_exponential():
    op = sub_laplacian("ContactTorus", 9)
    u = np.sin(TP * fixture("ContactTorus", 9).samples["points"][:, 2])
    want = np.exp(-TP**2 * 0.01) * u
    dense = oracles.dense_heat(op, 0.01) @ u
    assert np.abs(dense - want).max() <= 1e-3 * np.abs(want).max()


def test_heat_matches_dense_and_converges_to_eigenpair():
    op = sub_laplacian("ContactTorus", 9)
    u = np.sin(TP * fixture("ContactTorus", 9).samples["points"][:, 2])
    dense = oracles.dense_heat(op, 0.01) @ u
    assert np.abs(opm.heat_apply(op, u, 0.01, dt=1e-4) - dense).max() <= 1e-3 * np.abs(dense).max()
    errs = []
    for n in (9, 15, 21):
        z = fixture("ContactTorus", n).samples["points"][:, 2]
        got = opm.heat_apply(sub_laplacian("ContactTorus", n), np.sin(TP * z), 0.01, "KrylovExp")
        errs.append(np.abs(got - np.exp(-TP**2 * 0.01) * np.sin(TP * z)).max())
    orders = np.log(np.array(errs[:-1]) / errs[1:]) / np.log(np.array([15 / 9, 21 / 15]))
    assert np.all(orders > 3.5)


def test_kernel_diagonal_bound_and_gradient_exponent():
    f = fixture("ContactTorus", 15)
    op = sub_laplacian("ContactTorus", 15)
    d = ccgeom.cc_distance_field(f, 0)
    rep = opm.kernel_bound_check(op, d, [0.005, 0.01, 0.02, 0.05], 0)
    assert rep.bounded and rep.product_variation <= 10.0
    assert rep.grad_exponent > 0.1


def test_flat_torus_projection_example():
    t = tg.build_target("FlatTorus2")
    assert np.allclose(tg.project(t, np.array([0.5, 0, 0, 2.0])), [1, 0, 0, 1])
    # oracle: minimise over angle pairs
    a = np.linspace(-np.pi, np.pi, 3601)
    y = np.array([0.5, 0, 0, 2.0])
    best = [a[np.argmin((np.cos(a) - y[2 * k]) ** 2 + (np.sin(a) - y[2 * k + 1]) ** 2)] for k in range(2)]
    assert np.allclose(tg.from_angles(t, np.array([best]))[0], [1, 0, 0, 1], atol=1e-3)


@pytest.mark.parametrize("kind,p,v,want", [
    ("Circle", [1.0, 0], [0, 1.0], [-1.0, 0]),
    ("Sphere2", [0, 0, 1.0], [1.0, 0, 0], [0, 0, -1.0]),
])
def test_second_fundamental_examples(kind, p, v, want):
    t = tg.build_target(kind)
    p, v = np.array(p), np.array(v)
    got = tg.second_fundamental_contraction(t, p, v, v)
    _, fd = oracles.fd_projection_derivatives(lambda q: tg.project(t, q), p, v, v)
    assert np.allclose(got, want, atol=1e-12)
    assert np.allclose(fd, want, atol=1e-6)


def test_tube_defect_constant_offset():
    f = fixture("ContactTorus")
    u = np.tile([1.1, 0.0], (f.grid.size, 1))
    assert tg.tube_defect(tg.build_target("Circle"), u, f.h3) == pytest.approx(0.01)


def test_winding_survives_small_perturbation():
    f = fixture("ContactTorus", 15)
    u = flow.winding_map(f, tg.build_target("Circle"), [(1, 0, 0)], flow.Perturbation(0.1, "random", seed=1),
                         op=sub_laplacian("ContactTorus", 15))
    assert tg.winding_numbers(u.target, u.values, f.grid) == (1, 0, 0)


@pytest.mark.parametrize("kind,w", [("ContactTorus", (1, 1, 1)), ("HeisenbergNilmanifold", (1, -1, 0))])
def test_affine_tension_vanishes(kind, w):
    # Fourier modes are eigenvectors of every difference operator, so the discrete
    # tension of an affine winding is zero up to rounding, which is stronger than O(h^2)
    for n in (9, 15, 21):
        u = flow.winding_map(fixture(kind, n), tg.build_target("Circle"), [w], op=sub_laplacian(kind, n))
        assert np.abs(flow.intrinsic_tension(u)).max() < 1e-9


def test_exact_winding_is_nearly_stationary():
    dt = 1e-3
    for n in (9, 15):
        u = flow.winding_map(fixture("ContactTorus", n), tg.build_target("Circle"), [(1, 0, 0)],
                             op=sub_laplacian("ContactTorus", n))
        v = flow.step(u, dt, "SemiImplicitProjected")
        bound = dt * np.abs(flow.intrinsic_tension(u)).max()
        assert np.abs(v.values - u.values).max() <= 1.01 * bound + 1e-15


def test_exact_winding_stops_immediately_on_fine_grid():
    u = flow.winding_map(fixture("ContactTorus", 21), tg.build_target("Circle"), [(1, 0, 0)],
                         op=sub_laplacian("ContactTorus", 21))
    traj = flow.run_flow(u, flow.FlowConfig())
    assert traj.stop_reason == "tension_tol" and traj.steps == 0
