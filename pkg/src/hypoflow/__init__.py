"""Sub-Riemannian heat semigroups and subelliptic harmonic map heat flow on periodic grids."""

__version__ = "0.1.0"

from .manifold import FIXTURE_KINDS, build_fixture  # noqa: E402
from .target import TARGET_KINDS, build_target  # noqa: E402

__all__ = ["__version__", "FIXTURE_KINDS", "TARGET_KINDS", "build_fixture", "build_target"]
