import pathlib
import sys

import pytest
from hypothesis import HealthCheck, settings

from meshtex.camera import stock_schedule
from meshtex.diffusion import make_schedule
from meshtex.fixtures import unit_cube, unit_quad, uv_sphere
from meshtex.geometry import load_obj, normalize_to_unit_sphere

DATA_DIR = pathlib.Path(__file__).parent / "data"


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance checklist after capture is torn down."""
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok in results:
        terminalreporter.write_line(
            f"[ACCEPTANCE] {name}: {'PASS' if ok else 'FAIL'}"
        )

settings.register_profile(
    "suite",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def cube_obj_path():
    return DATA_DIR / "cube.obj"


@pytest.fixture(scope="session")
def quad_obj_path():
    return DATA_DIR / "quad.obj"


@pytest.fixture(scope="session")
def cube_mesh(cube_obj_path):
    return load_obj(cube_obj_path)


@pytest.fixture(scope="session")
def quad_mesh(quad_obj_path):
    return load_obj(quad_obj_path)


@pytest.fixture(scope="session")
def sphere_mesh():
    mesh, _ = normalize_to_unit_sphere(uv_sphere())
    return mesh


@pytest.fixture(scope="session")
def norm_cube():
    """Generated cube fixture, normalized the way the pipeline does it."""
    mesh, _ = normalize_to_unit_sphere(unit_cube())
    return mesh


@pytest.fixture(scope="session")
def norm_quad():
    mesh, _ = normalize_to_unit_sphere(unit_quad())
    return mesh


@pytest.fixture(scope="session")
def stock_views():
    return stock_schedule()


@pytest.fixture(scope="session")
def sched30():
    return make_schedule()
