"""Stress recovery, interlaminar failure index, scalar outputs and legacy VTK files."""

import csv
from dataclasses import dataclass

import numpy as np

from .elements import VTK_CELL_TYPE, QuadratureRule
from .fem import cell_dofs, physical_gradients, strain_displacement
from .materials import stress_rotation


@dataclass(eq=False)
class StressField:
    # (n_cells, 6) Voigt order 11, 22, 33, 23, 13, 12
    stress: np.ndarray
    region: np.ndarray

    def __len__(self):
        return len(self.stress)


@dataclass(frozen=True)
class Allowables:
    s33: float = 61.0
    s13: float = 97.0
    s23: float = 94.0

    def __post_init__(self):
        if min(self.s33, self.s13, self.s23) <= 0:
            raise ValueError("allowables must be positive")


def region_orientations(grid):
    """Ply angle per region id from the grid's layer stack (empty without one)."""
    if grid.spec is None:
        return {}
    return {layer.region_id: layer.orientation for layer in grid.spec.layer_stack}


def centroid_strain(u, grid):
    """Engineering strain (n_cells, 6) at every element centroid."""
    rule = QuadratureRule(np.zeros((1, 3)), np.array([8.0]))
    G, _ = physical_gradients(grid.cell_nodes_xyz(), grid.element_type, rule)
    B = strain_displacement(G)[:, 0]
    ue = np.asarray(u)[cell_dofs(grid, 3)]
    return np.einsum("ckj,cj->ck", B, ue)


def recover_stress(u, grid, stiffness, scale=1.0, material_frame=True):
    """Centroid stress C eps per element, times ``scale`` (e.g. 1e3 for GPa -> MPa).

    ``stiffness`` maps region id to the (rotated) 6x6 matrix used in assembly. With
    ``material_frame`` the result is rotated back into each ply's material axes.
    """
    eps = centroid_strain(u, grid)
    C = np.stack([stiffness[r] for r in grid.cell_region])
    sig = scale * np.einsum("ckl,cl->ck", C, eps)
    if material_frame:
        angles = region_orientations(grid)
        for r, theta in angles.items():
            if theta == 0.0:
                continue
            sel = grid.cell_region == r
            # sigma_global = T(theta) sigma_material
            sig[sel] = sig[sel] @ np.linalg.inv(stress_rotation(theta)).T
    return StressField(sig, grid.cell_region.copy())


def camanho(sigma, allowables=Allowables()):
    """Quadratic delamination index; only tensile through-thickness stress counts.

    ``sigma`` is a Voigt 6-vector or an (n, 6) array.
    """
    s = np.asarray(sigma, dtype=float)
    s33 = np.maximum(s[..., 2], 0.0)
    return np.sqrt((s33 / allowables.s33) ** 2 + (s[..., 4] / allowables.s13) ** 2 + (s[..., 3] / allowables.s23) ** 2)


def interface_cells(grid, interface_regions=None):
    """Cells of resin interface layers, taken from the layer stack unless given."""
    if interface_regions is None:
        if grid.spec is None:
            return np.zeros(0, dtype=np.int64)
        interface_regions = {l.region_id for l in grid.spec.layer_stack if l.material_id == "resin"}
    return np.flatnonzero(np.isin(grid.cell_region, list(interface_regions)))


def failure_load(q_applied, F_max):
    """q / F_max; an infinite load when nothing is stressed."""
    if F_max < 0:
        raise ValueError("failure index must be non-negative")
    return float("inf") if F_max == 0 else q_applied / F_max


def max_displacement(u, component=2, ncomp=3):
    u = np.asarray(u)
    if u.size == 0:
        return 0.0
    return float(np.abs(u[component::ncomp]).max())


def write_vtk(
    path, grid, point_vectors=None, cell_scalars=None, cell_tensors=None, point_scalars=None, title="geneo_dd output"
):
    """Legacy ASCII VTK unstructured grid.

    ``point_vectors``: name -> (n_nodes, 3); ``point_scalars``: name -> (n_nodes,);
    ``cell_scalars``: name -> (n_cells,);
    ``cell_tensors``: name -> (n_cells, 6) Voigt stresses written as symmetric 3x3.
    """
    point_vectors = point_vectors or {}
    cell_scalars = cell_scalars or {}
    cell_tensors = cell_tensors or {}
    point_scalars = point_scalars or {}
    nn, nc = grid.n_nodes, grid.n_cells
    conn = grid.cell_connectivity
    npc = conn.shape[1]
    for name, v in point_vectors.items():
        if np.shape(v) != (nn, 3):
            raise ValueError(f"point field {name} must have shape ({nn}, 3)")
    for name, v in point_scalars.items():
        if len(v) != nn:
            raise ValueError(f"point field {name} must have {nn} entries")
    for name, v in {**cell_scalars, **cell_tensors}.items():
        if len(v) != nc:
            raise ValueError(f"cell field {name} must have {nc} entries")

    def block(a, fmt):
        return "\n".join(" ".join(fmt % x for x in row) for row in np.atleast_2d(a)) + "\n"

    with open(path, "w") as fh:
        fh.write(f"# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {nn} double\n")
        fh.write(block(grid.node_coordinates, "%.10g"))
        fh.write(f"CELLS {nc} {nc * (npc + 1)}\n")
        fh.write(block(np.hstack([np.full((nc, 1), npc), conn]), "%d"))
        fh.write(f"CELL_TYPES {nc}\n")
        fh.write("\n".join([str(VTK_CELL_TYPE[grid.element_type])] * nc) + "\n")
        if point_vectors or point_scalars:
            fh.write(f"POINT_DATA {nn}\n")
            for name, v in point_vectors.items():
                fh.write(f"VECTORS {name} double\n")
                fh.write(block(v, "%.10g"))
            for name, v in point_scalars.items():
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                fh.write("\n".join("%.10g" % x for x in np.asarray(v, dtype=float)) + "\n")
        if cell_scalars or cell_tensors:
            fh.write(f"CELL_DATA {nc}\n")
            for name, v in cell_scalars.items():
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                fh.write("\n".join("%.10g" % x for x in np.asarray(v, dtype=float)) + "\n")
            for name, v in cell_tensors.items():
                s = np.asarray(v, dtype=float)
                full = s[:, [0, 5, 4, 5, 1, 3, 4, 3, 2]]
                fh.write(f"TENSORS {name} double\n")
                fh.write(block(full, "%.10g"))


def write_interface_profile(path, grid, stress, F, cells):
    """CSV of centroid coordinates, stress and failure index on the given cells."""
    ctr = grid.cell_nodes_xyz(cells).mean(axis=1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell", "x", "y", "z", "s11", "s22", "s33", "s23", "s13", "s12", "F"])
        for c, x, s, f in zip(cells, ctr, stress.stress[cells], F):
            w.writerow([int(c), *(f"{v:.8g}" for v in x), *(f"{v:.8g}" for v in s), f"{f:.8g}"])
