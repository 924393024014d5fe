import numpy as np
import pytest

from geneo_dd import fem, materials, mesh
from geneo_dd.elements import HEX8


@pytest.fixture(scope="session")
def plate_grid():
    lam = materials.Laminate(tuple(materials.Ply("ply", t, 0.23) for t in materials.PLATE_SEQUENCE))
    spec = mesh.GridSpec((100.0, 20.0), (20, 5), materials.laminate_layers(lam))
    return mesh.build_layer_cake(spec, HEX8)


def cantilever_bcs(thickness, q=1e-5):
    return fem.BoundarySpec(
        is_dirichlet=lambda x, i: x[:, 0] < 1e-6,
        neumann_traction=lambda x, n: np.where((x[:, 2] > thickness - 1e-6)[:, None], np.array([0.0, 0.0, -q]), 0.0),
    )


@pytest.fixture(scope="session")
def plate_system(plate_grid):
    C = materials.region_stiffness(plate_grid.spec.layer_stack, materials.default_materials())
    return fem.assemble(plate_grid, C, cantilever_bcs(plate_grid.spec.thickness))


def small_elastic_problem(cells=(6, 3, 3), element_type=HEX8, clamp=True):
    """Isotropic bar, clamped at x=0 when ``clamp``; a few thousand dofs at most."""
    spec = mesh.box_spec((float(cells[0]), float(cells[1]), float(cells[2])), cells)
    grid = mesh.build_layer_cake(spec, element_type)
    C = {0: materials.isotropic_stiffness(1.0, 0.3)}
    bcs = fem.BoundarySpec(
        is_dirichlet=(lambda x, i: x[:, 0] < 1e-9) if clamp else None,
        body_force=lambda x: np.tile([0.0, 0.0, -1.0], (len(x), 1)),
    )
    return grid, fem.assemble(grid, C, bcs)


def small_diffusion_problem(cells=(8, 8, 4), contrast=1.0):
    spec = mesh.box_spec(tuple(float(c) for c in cells), cells)
    grid = mesh.build_layer_cake(spec, HEX8)
    k = np.ones(grid.n_cells)
    k[grid.cell_ijk()[:, 2] % 2 == 1] = contrast
    K = np.stack([k, k, k], axis=1)
    bcs = fem.BoundarySpec(is_dirichlet=lambda x, i: x[:, 2] < 1e-9, body_force=lambda x: np.ones((len(x), 1)))
    return grid, fem.assemble(grid, K, bcs)


# -- acceptance reporting ---------------------------------------------------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n, title = marker.args
    entry = _CRITERIA.setdefault(n, {"title": title, "ok": True, "seen": False, "notes": []})
    if call.when == "call" or (call.when == "setup" and call.excinfo is not None):
        entry["seen"] = True
        if call.excinfo is not None:
            entry["ok"] = False
            entry["notes"].append(f"{item.name}: {call.excinfo.typename}")
        entry["notes"] += [str(v) for k, v in item.user_properties if k == "summary"]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        if not e["seen"]:
            continue
        status = "PASS" if e["ok"] else "FAIL"
        detail = "; ".join(e["notes"])
        terminalreporter.write_line(f"criterion {n:>2} {status}  {e['title']}" + (f"  [{detail}]" if detail else ""))
