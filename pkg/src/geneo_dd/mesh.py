"""Layered structured hexahedral grids and overlapping Cartesian decompositions."""

import csv
import logging
from dataclasses import dataclass, field
from itertools import product

import numpy as np
import scipy.sparse as sp

from .elements import HEX8, SERENDIPITY20, REFERENCE_NODES, default_rule, shape_basis

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Layer:
    region_id: int
    thickness: float
    elements: int
    orientation: float = 0.0
    material_id: str = ""


@dataclass(frozen=True)
class GridSpec:
    """Geometry of a layered box: in-plane extents/cells and a through-thickness layer stack."""

    extents: tuple
    cells_per_axis: tuple
    layer_stack: tuple
    transformation_id: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "layer_stack", tuple(self.layer_stack))
        if len(self.extents) != 2 or len(self.cells_per_axis) != 2:
            raise ValueError("extents and cells_per_axis give the two in-plane axes")
        if any(e <= 0 for e in self.extents):
            raise ValueError("extents must be positive")
        if any(int(n) < 1 for n in self.cells_per_axis):
            raise ValueError("zero cells on an in-plane axis")
        if not self.layer_stack:
            raise ValueError("layer stack is empty")
        for layer in self.layer_stack:
            if layer.thickness <= 0:
                raise ValueError(f"non-positive layer thickness {layer.thickness}")
            if layer.elements < 1:
                raise ValueError("every layer needs at least one element")

    @property
    def thickness(self):
        return float(sum(layer.thickness for layer in self.layer_stack))

    @property
    def layer_interfaces(self):
        """z-coordinates of layer boundaries, bottom to top."""
        return np.concatenate([[0.0], np.cumsum([layer.thickness for layer in self.layer_stack])])

    @property
    def n_cells(self):
        return int(np.prod(self.cells_per_axis)) * sum(layer.elements for layer in self.layer_stack)


def box_spec(extents, cells, region_id=0):
    """Single-layer box [0,Lx]x[0,Ly]x[0,Lz] with cells (nx, ny, nz)."""
    return GridSpec(tuple(extents[:2]), tuple(cells[:2]), (Layer(region_id, float(extents[2]), int(cells[2])),))


def read_stacking_csv(path, extents, cells_per_axis):
    """Read a layer stack CSV with header
    ``region_id,orientation_deg,thickness,elements_through_layer,material_id``."""
    layers = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            layers.append(
                Layer(
                    region_id=int(row["region_id"]),
                    thickness=float(row["thickness"]),
                    elements=int(row["elements_through_layer"]),
                    orientation=float(row["orientation_deg"]),
                    material_id=row["material_id"].strip(),
                )
            )
    return GridSpec(tuple(extents), tuple(cells_per_axis), tuple(layers))


def write_stacking_csv(path, spec):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["region_id", "orientation_deg", "thickness", "elements_through_layer", "material_id"])
        for layer in spec.layer_stack:
            w.writerow([layer.region_id, layer.orientation, layer.thickness, layer.elements, layer.material_id])


@dataclass(frozen=True, eq=False)
class StructuredGrid:
    node_coordinates: np.ndarray
    cell_connectivity: np.ndarray
    cell_region: np.ndarray
    element_type: str
    cell_shape: tuple
    # integer lattice position of each node; lattice spacing is 1 (HEX8) or 2 (serendipity) per cell
    node_lattice: np.ndarray
    spec: GridSpec = None

    @property
    def n_nodes(self):
        return len(self.node_coordinates)

    @property
    def n_cells(self):
        return len(self.cell_connectivity)

    @property
    def lattice_step(self):
        return 1 if self.element_type == HEX8 else 2

    def cell_ijk(self, cells=None):
        nx, ny, _ = self.cell_shape
        c = np.arange(self.n_cells) if cells is None else np.asarray(cells)
        return np.stack([c % nx, (c // nx) % ny, c // (nx * ny)], axis=1)

    def cell_index(self, i, j, k):
        nx, ny, _ = self.cell_shape
        return i + nx * (j + ny * k)

    def cell_nodes_xyz(self, cells=None):
        conn = self.cell_connectivity if cells is None else self.cell_connectivity[cells]
        return self.node_coordinates[conn]

    def with_coordinates(self, coords):
        return StructuredGrid(
            np.asarray(coords, dtype=float),
            self.cell_connectivity,
            self.cell_region,
            self.element_type,
            self.cell_shape,
            self.node_lattice,
            self.spec,
        )


def build_layer_cake(spec, element_type=HEX8):
    """Tensor-product hexahedral grid; each layer gets ``elements`` uniform element sheets."""
    if element_type not in (HEX8, SERENDIPITY20):
        raise ValueError(f"unknown element type {element_type!r}")
    nx, ny = (int(n) for n in spec.cells_per_axis)
    xs = np.linspace(0.0, spec.extents[0], nx + 1)
    ys = np.linspace(0.0, spec.extents[1], ny + 1)
    zs = [0.0]
    regions = []
    for layer in spec.layer_stack:
        z0 = zs[-1]
        zs.extend(z0 + layer.thickness * np.arange(1, layer.elements + 1) / layer.elements)
        regions.extend([layer.region_id] * layer.elements)
    zs = np.array(zs)
    # pin the top exactly to the summed thickness
    zs[-1] = spec.thickness
    nz = len(zs) - 1

    step = 1 if element_type == HEX8 else 2
    axes = [_refine_axis(a, step) for a in (xs, ys, zs)]
    lshape = tuple(len(a) for a in axes)
    lat = np.stack(np.meshgrid(*[np.arange(n) for n in lshape], indexing="ij"), axis=-1).reshape(-1, 3, order="F")
    if step == 2:
        lat = lat[(lat % 2).sum(axis=1) <= 1]
    lookup = -np.ones(lshape, dtype=np.int64)
    lookup[lat[:, 0], lat[:, 1], lat[:, 2]] = np.arange(len(lat))
    coords = np.stack([axes[a][lat[:, a]] for a in range(3)], axis=1)

    cijk = np.stack(np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij"), axis=-1).reshape(
        -1, 3, order="F"
    )
    offsets = ((REFERENCE_NODES[element_type] + 1) * step // 2).astype(np.int64)
    pos = cijk[:, None, :] * step + offsets[None, :, :]
    conn = lookup[pos[..., 0], pos[..., 1], pos[..., 2]]
    assert (conn >= 0).all()

    cell_region = np.array(regions)[cijk[:, 2]]
    grid = StructuredGrid(coords, conn, cell_region, element_type, (nx, ny, nz), lat, spec)
    return grid


def _refine_axis(a, step):
    if step == 1:
        return a
    out = np.empty(2 * len(a) - 1)
    out[0::2] = a
    out[1::2] = 0.5 * (a[:-1] + a[1:])
    return out


def jacobian_determinants(grid, rule=None, cells=None):
    """det(dx/dxi) at every quadrature point, shape (n_cells, n_qp)."""
    rule = rule or default_rule(grid.element_type)
    _, dN = shape_basis(grid.element_type, rule.points)
    X = grid.cell_nodes_xyz(cells)
    J = np.einsum("cna,qnb->cqab", X, dN)
    return np.linalg.det(J)


def check_jacobians(grid, rule=None):
    det = jacobian_determinants(grid, rule)
    bad = np.flatnonzero((det <= 0).any(axis=1))
    if bad.size:
        raise ValueError(f"{bad.size} cells have non-positive Jacobian (first: cell {bad[0]})")


def apply_transformation(grid, point_map):
    """Map node coordinates through ``point_map`` ((n, 3) -> (n, 3)); connectivity is kept."""
    new = np.asarray(point_map(grid.node_coordinates.copy()), dtype=float)
    if new.shape != grid.node_coordinates.shape:
        raise ValueError("point map must return an array of the same shape")
    out = grid.with_coordinates(new)
    check_jacobians(out)
    return out


# -- named transformations --------------------------------------------------------------


def identity_map():
    return lambda x: x


def scaling_map(factors):
    f = np.broadcast_to(np.asarray(factors, dtype=float), (3,))
    return lambda x: x * f


def graded_layer_positions(n, bias):
    """Normalised node positions in [0, 1] for ``n`` elements graded geometrically.

    Element sizes grow from both ends toward the middle; largest/smallest = ``bias``.
    """
    if n < 3:
        return np.linspace(0.0, 1.0, n + 1)
    depth = np.minimum(np.arange(n), np.arange(n)[::-1])
    ratio = bias ** (1.0 / depth.max())
    sizes = ratio**depth
    return np.concatenate([[0.0], np.cumsum(sizes) / sizes.sum()])


def z_grading_map(spec, bias):
    """Piecewise map of z grading the elements of each layer toward both of its interfaces."""
    interfaces = spec.layer_interfaces
    src, dst = [0.0], [0.0]
    for layer, z0, z1 in zip(spec.layer_stack, interfaces[:-1], interfaces[1:]):
        n = layer.elements
        uniform = np.linspace(0.0, 1.0, n + 1)[1:]
        graded = graded_layer_positions(n, bias)[1:]
        src.extend(z0 + (z1 - z0) * uniform)
        dst.extend(z0 + (z1 - z0) * graded)
    src, dst = np.array(src), np.array(dst)

    def zmap(x):
        # piecewise linear between element sheets; midside nodes land mid-element
        out = x.copy()
        out[:, 2] = np.interp(x[:, 2], src, dst)
        return out

    return zmap


def cylindrical_bend_map(radius):
    """Wrap the x-axis onto a circular arc of the given inner radius (z measured outward)."""

    def bend(x):
        out = x.copy()
        angle = x[:, 0] / radius
        r = radius + x[:, 2]
        out[:, 0] = r * np.sin(angle)
        out[:, 2] = r * np.cos(angle) - radius
        return out

    return bend


def named_transformation(name, spec, **params):
    if name in (None, "", "identity"):
        return identity_map()
    if name == "scale":
        return scaling_map(params.get("factors", 1.0))
    if name == "z_grading":
        return z_grading_map(spec, params.get("bias", 10.0))
    if name == "cylindrical_bend":
        return cylindrical_bend_map(params.get("radius", 10.0))
    raise ValueError(f"unknown transformation {name!r}")


# -- decomposition --------------------------------------------------------------------


@dataclass(eq=False)
class OverlappingDecomposition:
    num_subdomains: int
    partition_shape: tuple
    overlap_layers: int
    ncomp: int
    cell_owner: np.ndarray
    subdomain_cells: list
    overlap_cells: list
    subdomain_nodes: list
    interior_boundary_nodes: list
    node_multiplicity: np.ndarray
    neighbor_lists: list
    # per subdomain, per axis: (lo, hi) cell range of the extended and the owner block
    extended_ranges: list = field(default_factory=list)
    owner_ranges: list = field(default_factory=list)

    def _dofs(self, nodes):
        nodes = np.asarray(nodes, dtype=np.int64)
        return (nodes[:, None] * self.ncomp + np.arange(self.ncomp)).ravel()

    def subdomain_dofs(self, j):
        return self._dofs(self.subdomain_nodes[j])

    @property
    def interior_boundary_dofs(self):
        return [self._dofs(n) for n in self.interior_boundary_nodes]

    @property
    def dof_multiplicity(self):
        return np.repeat(self.node_multiplicity, self.ncomp)

    def overlap_axes(self, j):
        """Axes along which subdomain ``j`` was extended into a neighbor block."""
        ext, own = self.extended_ranges[j], self.owner_ranges[j]
        return [a for a in range(3) if ext[a] != own[a]]


def _block_edges(n, parts):
    sizes = [n // parts + (1 if i < n % parts else 0) for i in range(parts)]
    return np.concatenate([[0], np.cumsum(sizes)])


def decompose(grid, partition_shape, overlap, ncomp=3):
    """Cartesian block partition of the cells, each block grown by ``overlap`` cell layers.

    The growth is a box dilation (face, edge and corner neighbors) clipped at the domain
    boundary, so every node of an owner block is interior to its extended subdomain.
    """
    shape = tuple(int(p) for p in partition_shape)
    if len(shape) != 3 or any(p < 1 for p in shape):
        raise ValueError("partition_shape needs three positive integers")
    N = int(np.prod(shape))
    if N > grid.n_cells:
        raise ValueError(f"{N} subdomains exceed the {grid.n_cells} cells")
    if any(p > n for p, n in zip(shape, grid.cell_shape)):
        raise ValueError(f"partition {shape} does not fit cell grid {grid.cell_shape}")
    if overlap < 0:
        raise ValueError("overlap must be non-negative")

    edges = [_block_edges(n, p) for n, p in zip(grid.cell_shape, shape)]
    ijk = grid.cell_ijk()
    block_of_cell = np.stack([np.searchsorted(edges[a], ijk[:, a], side="right") - 1 for a in range(3)], axis=1)
    cell_owner = block_of_cell[:, 0] + shape[0] * (block_of_cell[:, 1] + shape[1] * block_of_cell[:, 2])

    conn = grid.cell_connectivity
    subdomain_cells, owner_ranges, extended_ranges, blocks = [], [], [], []
    for bk, bj, bi in product(range(shape[2]), range(shape[1]), range(shape[0])):
        b = (bi, bj, bk)
        own = tuple((int(edges[a][b[a]]), int(edges[a][b[a] + 1])) for a in range(3))
        ext = tuple((max(lo - overlap, 0), min(hi + overlap, grid.cell_shape[a])) for a, (lo, hi) in enumerate(own))
        mask = np.ones(grid.n_cells, dtype=bool)
        for a in range(3):
            mask &= (ijk[:, a] >= ext[a][0]) & (ijk[:, a] < ext[a][1])
        cells = np.flatnonzero(mask)
        swallowed = {tuple(x) for x in np.unique(block_of_cell[cells], axis=0)}
        far = [s for s in swallowed if max(abs(s[a] - b[a]) for a in range(3)) > 1]
        if far:
            log.warning("overlap %d lets block %s reach non-adjacent blocks %s", overlap, b, far)
        subdomain_cells.append(cells)
        owner_ranges.append(own)
        extended_ranges.append(ext)
        blocks.append(b)

    count = np.zeros(grid.n_cells, dtype=np.int64)
    for cells in subdomain_cells:
        count[cells] += 1
    overlap_cells = [cells[count[cells] >= 2] for cells in subdomain_cells]

    subdomain_nodes, boundary_nodes = [], []
    node_mult = np.zeros(grid.n_nodes, dtype=np.int64)
    for cells in subdomain_cells:
        nodes = np.unique(conn[cells])
        inside = np.zeros(grid.n_cells, dtype=bool)
        inside[cells] = True
        outside_nodes = np.unique(conn[~inside]) if (~inside).any() else np.empty(0, dtype=np.int64)
        subdomain_nodes.append(nodes)
        boundary_nodes.append(np.intersect1d(nodes, outside_nodes, assume_unique=True))
        node_mult[nodes] += 1

    rows = np.concatenate([np.full(len(n), j) for j, n in enumerate(subdomain_nodes)])
    cols = np.concatenate(subdomain_nodes)
    member = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(N, grid.n_nodes))
    touch = (member @ member.T).tocoo()
    neighbors = [[] for _ in range(N)]
    for r, c in zip(touch.row, touch.col):
        if r != c:
            neighbors[r].append(int(c))
    neighbors = [sorted(nb) for nb in neighbors]

    return OverlappingDecomposition(
        num_subdomains=N,
        partition_shape=shape,
        overlap_layers=int(overlap),
        ncomp=int(ncomp),
        cell_owner=cell_owner,
        subdomain_cells=subdomain_cells,
        overlap_cells=overlap_cells,
        subdomain_nodes=subdomain_nodes,
        interior_boundary_nodes=boundary_nodes,
        node_multiplicity=node_mult,
        neighbor_lists=neighbors,
        extended_ranges=extended_ranges,
        owner_ranges=owner_ranges,
    )


def write_grid_vtk(grid, path):
    from .postprocess import write_vtk

    write_vtk(path, grid, cell_scalars={"region": grid.cell_region})
