import numpy as np
import pytest

from tetdtn import fem, fixtures, meshing


@pytest.fixture(scope="session")
def unit_right_tet():
    from tetdtn.geometry import Tetrahedron
    return Tetrahedron([(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)])


@pytest.fixture(scope="session")
def regular_tet():
    from tetdtn.geometry import Tetrahedron
    s3, s23 = np.sqrt(3.0), np.sqrt(2.0 / 3.0)
    return Tetrahedron([(0, 0, 0), (1, 0, 0), (0.5, s3 / 2, 0),
                        (0.5, s3 / 6, s23)])


@pytest.fixture(scope="session")
def two_tet_field():
    return fixtures.two_tet()


@pytest.fixture(scope="session")
def octa8_field():
    return fixtures.octahedron_center()


@pytest.fixture(scope="session")
def octa8_mesh(octa8_field):
    aug = meshing.AugmentedDomain(R=0.75, q0_tilde=octa8_field.vs.Q0)
    return meshing.build_mesh(octa8_field.partition, levels=2, augmented=aug)


@pytest.fixture(scope="session")
def octa8_freq():
    return fem.FrequencySpec(omega=2.5, omega0=1.0, omega1=3.0, R=0.75)


def random_tetrahedron(rng, scale=1.0, min_quality=0.05):
    """Random non-degenerate tetrahedron with bounded aspect."""
    from tetdtn import geometry
    while True:
        v = rng.normal(size=(4, 3)) * scale
        t = geometry.Tetrahedron(v)
        try:
            r = geometry.insphere_radius(t)
        except Exception:
            continue
        if r / t.diameter > min_quality:
            return t
