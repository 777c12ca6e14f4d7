import numpy as np
import pytest

from magnetoforge.material import LinearLaw, fit_energy, saturating_curve
from magnetoforge.mesh import build_mesh, generate_box

REF_TET = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])


@pytest.fixture(scope="session")
def steel():
    return fit_energy(saturating_curve(1000.0, 1.6))


@pytest.fixture(scope="session")
def air():
    return LinearLaw()


@pytest.fixture
def ref_tet():
    return build_mesh(REF_TET, [[0, 1, 2, 3]], [1])


@pytest.fixture(scope="session")
def box2_incl():
    """n=2 box whose single steel subcube is the lower corner one (48 tets)."""
    return generate_box(2, ((0.0, 0.0, 0.0), (0.5, 0.5, 0.5)))


def write_text(path, text):
    path.write_text(text)
    return path
