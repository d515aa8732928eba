import numpy as np
import pytest

from hypoflow import manifold, oracles
from hypoflow.errors import ConfigurationError
from hypoflow.manifold import FrameField, GridSpec, VectorField, Wrap

from conftest import fixture

FOUR_PI2 = 4 * np.pi**2


def test_grid_rejects_even_dims():
    with pytest.raises(ConfigurationError, match="odd"):
        GridSpec((8, 9, 9))


def test_twist_needs_square_yz():
    with pytest.raises(ConfigurationError):
        GridSpec((9, 9, 11), Wrap.TWIST)


def test_unknown_fixture_lists_registry():
    with pytest.raises(ConfigurationError, match="ContactTorus"):
        manifold.build_fixture("Engel", 9)


@pytest.mark.parametrize("n", [4, 3, 10])
def test_bad_size(n):
    with pytest.raises(ConfigurationError):
        manifold.build_fixture("ContactTorus", n)


def test_twist_shift_is_a_bijection():
    g = GridSpec((7, 7, 7), Wrap.TWIST)
    for ax in range(3):
        for off in (1, -1, 2):
            assert np.array_equal(np.sort(g.shift(ax, off)), np.arange(g.size))
            # shifting back undoes the shift
            assert np.array_equal(g.shift(ax, off)[g.shift(ax, -off)], np.arange(g.size))


def test_twist_wrap_rule():
    # (x + 1, y, z) is identified with (x, y, z - y)
    g = GridSpec((5, 5, 5), Wrap.TWIST)
    i, j, k = 4, 2, 1
    node = int(g.index(i, j, k))
    assert g.shift(0, 1)[node] == g.index(0, j, (k - j) % 5)


def test_orthonormal_frames(kind):
    assert manifold.gram_deviation(fixture(kind)) < 1e-12


@pytest.mark.parametrize("kind,expected", [
    ("ContactTorus", FOUR_PI2), ("HeisenbergNilmanifold", 1.0), ("CommutingTorus", 0.0)])
def test_eta_min_matches_oracle(kind, expected):
    f = fixture(kind)
    assert f.eta_min == pytest.approx(expected, abs=1e-10)
    pts = f.samples["points"][::7]
    ref = oracles.oracle_eta(f.frame, pts)
    assert np.allclose(f.eta_field[0, ::7], ref, atol=1e-8)


def test_step2_flags():
    assert manifold.verify_bracket_generating(fixture("ContactTorus")).step2
    assert manifold.verify_bracket_generating(fixture("HeisenbergNilmanifold")).step2
    assert not manifold.verify_bracket_generating(fixture("CommutingTorus")).step2


def test_zeta_vanishes_on_fixtures(kind):
    f = fixture(kind)
    assert np.abs(f.zeta).max() < 1e-12
    pts = f.samples["points"][::11]
    assert np.abs(oracles.oracle_zeta(f.frame, pts)).max() < 1e-8


def warped_frame():
    """``g = dx^2 + dy^2 + phi(x)^2 dz^2`` with fibre ``xi = d_z / phi``; the fibres bend, so zeta != 0."""
    tp = 2 * np.pi

    def phi(x):
        return 1.0 + 0.3 * np.sin(tp * x)

    def dphi(x):
        return 0.3 * tp * np.cos(tp * x)

    def zero(x, y, z):
        return np.zeros_like(x + y + z)

    def e1(x, y, z):
        o = zero(x, y, z)
        return np.stack([o + 1, o, o])

    def e2(x, y, z):
        o = zero(x, y, z)
        return np.stack([o, o + 1, o])

    def xi(x, y, z):
        o = zero(x, y, z)
        return np.stack([o, o, 1.0 / phi(x + o)])

    def xi_jac(x, y, z):
        o = zero(x, y, z)
        J = np.zeros((3, 3) + o.shape)
        J[2, 0] = -dphi(x + o) / phi(x + o) ** 2
        return J

    def zjac(x, y, z):
        return np.zeros((3, 3) + zero(x, y, z).shape)

    def metric(x, y, z):
        o = zero(x, y, z)
        g = np.zeros((3, 3) + o.shape)
        g[0, 0] = g[1, 1] = 1.0
        g[2, 2] = phi(x + o) ** 2
        return g

    return FrameField((VectorField("e1", e1, zjac), VectorField("e2", e2, zjac)),
                      (VectorField("xi", xi, xi_jac),), metric), phi, dphi


def test_nonzero_zeta_matches_christoffel_oracle():
    frame, phi, dphi = warped_frame()
    f = manifold.make_fixture("Warped", GridSpec((9, 9, 9)), frame)
    assert manifold.gram_deviation(f) < 1e-12
    pts = f.samples["points"]
    ref = oracles.oracle_zeta(frame, pts)
    assert np.abs(f.zeta).max() > 0.5
    assert np.allclose(f.zeta, ref, atol=1e-7)
    # closed form: the fibre circles curve towards decreasing phi
    x = pts[:, 0]
    assert np.allclose(f.zeta[0], -dphi(x) / phi(x), atol=1e-12)
    assert np.allclose(f.zeta[1], 0.0)


def test_torsion_antisymmetric(kind):
    T = fixture(kind).torsion
    assert np.allclose(T, -np.swapaxes(T, 1, 2))


def test_eta_is_quadratic(kind):
    f = fixture(kind)
    assert np.allclose(manifold.eta(f, [2.0]), 4 * manifold.eta(f, [1.0]))


def test_summary_roundtrip():
    s = manifold.fixture_summary(fixture("HeisenbergNilmanifold"))
    assert s["wrap"] == "HeisenbergTwist"
    assert s["flags"] == {"is_riemannian_foliation": True, "is_tense": True}
