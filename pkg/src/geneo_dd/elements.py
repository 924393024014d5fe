"""Reference hexahedral elements and tensor Gauss rules.

Local node ordering follows VTK: the 8 corners of the reference cube
(counter-clockwise on the bottom face, then the top face), followed for the
serendipity element by the 12 edge midpoints in the order
(0-1, 1-2, 2-3, 3-0, 4-5, 5-6, 6-7, 7-4, 0-4, 1-5, 2-6, 3-7).
"""

from dataclasses import dataclass

import numpy as np

HEX8 = "HEX8"
SERENDIPITY20 = "SERENDIPITY20"
ELEMENT_TYPES = (HEX8, SERENDIPITY20)

_CORNERS = np.array(
    [
        [-1, -1, -1],
        [1, -1, -1],
        [1, 1, -1],
        [-1, 1, -1],
        [-1, -1, 1],
        [1, -1, 1],
        [1, 1, 1],
        [-1, 1, 1],
    ],
    dtype=float,
)
EDGES = [(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (6, 7), (7, 4), (0, 4), (1, 5), (2, 6), (3, 7)]
_MIDSIDES = np.array([(_CORNERS[a] + _CORNERS[b]) / 2 for a, b in EDGES])

REFERENCE_NODES = {
    HEX8: _CORNERS,
    SERENDIPITY20: np.vstack([_CORNERS, _MIDSIDES]),
}
# VTK cell type ids
VTK_CELL_TYPE = {HEX8: 12, SERENDIPITY20: 25}


def n_nodes(element_type):
    return len(REFERENCE_NODES[element_type])


def shape_basis(element_type, xi):
    """Shape function values and reference gradients.

    ``xi`` is a single reference point of shape (3,) or a stack (m, 3).
    Returns ``(values, grads)`` with shapes (..., n) and (..., n, 3).
    """
    xi = np.asarray(xi, dtype=float)
    single = xi.ndim == 1
    pts = np.atleast_2d(xi)
    if pts.shape[-1] != 3:
        raise ValueError("reference points must be 3-vectors")
    if np.any(np.abs(pts) > 1.0 + 1e-12):
        raise ValueError("reference point outside [-1, 1]^3")

    if element_type == HEX8:
        N, dN = _hex8(pts)
    elif element_type == SERENDIPITY20:
        N, dN = _serendipity20(pts)
    else:
        raise ValueError(f"unknown element type {element_type!r}")
    if single:
        return N[0], dN[0]
    return N, dN


def _hex8(pts):
    c = _CORNERS
    # factors (m, 8, 3): 1 + xi_a * c_a
    f = 1.0 + pts[:, None, :] * c[None, :, :]
    N = 0.125 * f.prod(axis=2)
    dN = np.empty(pts.shape[:1] + (8, 3))
    dN[..., 0] = 0.125 * c[:, 0] * f[..., 1] * f[..., 2]
    dN[..., 1] = 0.125 * c[:, 1] * f[..., 0] * f[..., 2]
    dN[..., 2] = 0.125 * c[:, 2] * f[..., 0] * f[..., 1]
    return N, dN


def _serendipity20(pts):
    m = pts.shape[0]
    N = np.empty((m, 20))
    dN = np.empty((m, 20, 3))
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]

    for a, (ci, cj, ck) in enumerate(_CORNERS):
        fx, fy, fz = 1 + ci * x, 1 + cj * y, 1 + ck * z
        s = ci * x + cj * y + ck * z - 2
        N[:, a] = 0.125 * fx * fy * fz * s
        dN[:, a, 0] = 0.125 * ci * fy * fz * (s + fx)
        dN[:, a, 1] = 0.125 * cj * fx * fz * (s + fy)
        dN[:, a, 2] = 0.125 * ck * fx * fy * (s + fz)

    for e, node in enumerate(_MIDSIDES):
        a = 8 + e
        zero_axis = int(np.flatnonzero(node == 0)[0])
        others = [ax for ax in range(3) if ax != zero_axis]
        t = pts[:, zero_axis]
        u, v = pts[:, others[0]], pts[:, others[1]]
        cu, cv = node[others[0]], node[others[1]]
        bubble = 1 - t * t
        fu, fv = 1 + cu * u, 1 + cv * v
        N[:, a] = 0.25 * bubble * fu * fv
        dN[:, a, zero_axis] = -0.5 * t * fu * fv
        dN[:, a, others[0]] = 0.25 * bubble * cu * fv
        dN[:, a, others[1]] = 0.25 * bubble * fu * cv
    return N, dN


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray

    @property
    def degree(self):
        """Per-axis polynomial degree integrated exactly."""
        n = round(len(self.weights) ** (1 / 3))
        return 2 * n - 1


def gauss_rule(n_per_axis, dim=3):
    """Tensor-product Gauss-Legendre rule on [-1, 1]^dim."""
    x, w = np.polynomial.legendre.leggauss(n_per_axis)
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    wgrids = np.meshgrid(*([w] * dim), indexing="ij")
    points = np.stack([g.ravel(order="F") for g in grids], axis=1)
    weights = np.prod([g.ravel(order="F") for g in wgrids], axis=0)
    return QuadratureRule(points, weights)


def default_rule(element_type):
    """Full Gauss integration: 2^3 points for HEX8, 3^3 for the serendipity element."""
    return gauss_rule(2 if element_type == HEX8 else 3)


def face_nodes(element_type, axis, side):
    """Local node indices lying on the reference face ``xi_axis = side`` (side = -1 or +1)."""
    ref = REFERENCE_NODES[element_type]
    return np.flatnonzero(ref[:, axis] == side)
