"""Constitutive data: orthotropic and isotropic Voigt stiffness, ply rotation, permeability fields.

Voigt ordering is (11, 22, 33, 23, 13, 12) with engineering shear strains.
Moduli are in GPa.
"""

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

MANDEL = np.array([1.0, 1.0, 1.0, np.sqrt(2.0), np.sqrt(2.0), np.sqrt(2.0)])


@dataclass(frozen=True)
class OrthotropicParams:
    E11: float
    E22: float
    E33: float
    G12: float
    G13: float
    G23: float
    nu12: float
    nu13: float
    nu23: float


# ply and resin values used throughout the laminate examples
PLY = OrthotropicParams(E11=162.0, E22=10.0, E33=10.0, G12=5.2, G13=5.2, G23=3.5, nu12=0.35, nu13=0.35, nu23=0.5)
RESIN_E, RESIN_NU = 10.0, 0.35


def _check_spd(C, what):
    if not np.allclose(C, C.T, rtol=0, atol=1e-12 * np.abs(C).max()):
        raise ValueError(f"{what} is not symmetric")
    if np.linalg.eigvalsh(C).min() <= 0:
        raise ValueError(f"{what} is not positive definite")


def orthotropic_compliance(p):
    S = np.zeros((6, 6))
    S[0, 0], S[1, 1], S[2, 2] = 1 / p.E11, 1 / p.E22, 1 / p.E33
    S[0, 1] = S[1, 0] = -p.nu12 / p.E11
    S[0, 2] = S[2, 0] = -p.nu13 / p.E11
    S[1, 2] = S[2, 1] = -p.nu23 / p.E22
    S[3, 3], S[4, 4], S[5, 5] = 1 / p.G23, 1 / p.G13, 1 / p.G12
    return S


def orthotropic_stiffness(p):
    """Inverse of the orthotropic compliance; raises if the parameters are inadmissible."""
    if min(p.E11, p.E22, p.E33, p.G12, p.G13, p.G23) <= 0:
        raise ValueError("moduli must be positive")
    S = orthotropic_compliance(p)
    if np.linalg.eigvalsh(S).min() <= 0:
        raise ValueError("compliance is not positive definite")
    if max(p.nu12, p.nu13, p.nu23) >= 0.5:
        log.info("Poisson ratio at the isotropic incompressibility bound (%s)", p)
    C = np.linalg.inv(S)
    C = 0.5 * (C + C.T)
    _check_spd(C, "orthotropic stiffness")
    return C


def lame(E, nu):
    return E * nu / ((1 + nu) * (1 - 2 * nu)), E / (2 * (1 + nu))


def isotropic_stiffness(E, nu):
    if E <= 0:
        raise ValueError("E must be positive")
    if not -1 < nu < 0.5:
        raise ValueError("nu must lie in (-1, 0.5)")
    lam, mu = lame(E, nu)
    C = np.zeros((6, 6))
    C[:3, :3] = lam
    C[[0, 1, 2], [0, 1, 2]] += 2 * mu
    C[[3, 4, 5], [3, 4, 5]] = mu
    return C


def stress_rotation(theta_deg):
    """Voigt matrix T with sigma_global = T sigma_material for a ply rotated by theta about z."""
    t = np.deg2rad(theta_deg)
    c, s = np.cos(t), np.sin(t)
    return np.array(
        [
            [c * c, s * s, 0, 0, 0, -2 * c * s],
            [s * s, c * c, 0, 0, 0, 2 * c * s],
            [0, 0, 1, 0, 0, 0],
            [0, 0, 0, c, s, 0],
            [0, 0, 0, -s, c, 0],
            [c * s, -c * s, 0, 0, 0, c * c - s * s],
        ]
    )


def rotate_stiffness(C, theta_deg):
    T = stress_rotation(theta_deg)
    Cr = T @ C @ T.T
    return 0.5 * (Cr + Cr.T)


def to_mandel(C):
    return C * np.outer(MANDEL, MANDEL)


def normalize_orientation(theta):
    """Map an angle in degrees into (-90, 90]."""
    t = (theta + 90.0) % 180.0 - 90.0
    return 90.0 if t == -90.0 else t


@dataclass(frozen=True)
class Ply:
    material_id: str
    orientation: float
    thickness: float


@dataclass(frozen=True)
class Laminate:
    plies: tuple
    interface_material: tuple = (RESIN_E, RESIN_NU)
    interface_thickness: float = 0.02

    def __post_init__(self):
        for ply in self.plies:
            if ply.thickness <= 0:
                raise ValueError("ply thickness must be positive")
            if not -90.0 < ply.orientation <= 90.0:
                raise ValueError(f"orientation {ply.orientation} outside (-90, 90]")

    @property
    def thickness(self):
        return sum(p.thickness for p in self.plies) + self.interface_thickness * (len(self.plies) - 1)


def expand_stacking(sequence):
    """Expand tokens like ``"-+45"``/``"+-45"``, ``0``, ``90`` into ply angles.

    ``"-+45"`` stands for the pair (-45, +45) and ``"+-45"`` for (+45, -45).
    """
    out = []
    for tok in sequence:
        if isinstance(tok, str) and tok[:2] in ("+-", "-+"):
            a = float(tok[2:])
            out.extend([a, -a] if tok[0] == "+" else [-a, a])
        else:
            out.append(float(tok))
    return [normalize_orientation(t) for t in out]


# [-+45 / 0 / 90 / +-45 / -+45 / 90 / 0 / +-45]
PLATE_SEQUENCE = expand_stacking(["-+45", 0, 90, "+-45", "-+45", 90, 0, "+-45"])


def laminate_layers(laminate, elements_per_ply=2, elements_per_interface=1):
    """GridSpec layer stack for a laminate; ply k gets region k, interfaces region ``len(plies)``."""
    from .mesh import Layer

    resin_region = len(laminate.plies)
    layers = []
    for k, ply in enumerate(laminate.plies):
        if k:
            layers.append(Layer(resin_region, laminate.interface_thickness, elements_per_interface, 0.0, "resin"))
        layers.append(Layer(k, ply.thickness, elements_per_ply, ply.orientation, ply.material_id))
    return layers


def region_stiffness(layer_stack, materials):
    """Rotated stiffness per region id; ``materials`` maps material_id -> unrotated 6x6 C."""
    out = {}
    for layer in layer_stack:
        C = rotate_stiffness(materials[layer.material_id], layer.orientation)
        if layer.region_id in out and not np.allclose(out[layer.region_id], C):
            raise ValueError(f"region {layer.region_id} has conflicting material data")
        out[layer.region_id] = C
    return out


def default_materials():
    return {"ply": orthotropic_stiffness(PLY), "resin": isotropic_stiffness(RESIN_E, RESIN_NU)}


# -- permeability ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PermeabilityField:
    """Cell-wise diagonal permeability, arrays ordered x fastest then y then z."""

    Kx: np.ndarray
    Ky: np.ndarray
    Kz: np.ndarray
    dims: tuple

    def __post_init__(self):
        n = int(np.prod(self.dims))
        for name in ("Kx", "Ky", "Kz"):
            a = getattr(self, name)
            if a.shape != (n,):
                raise ValueError(f"{name} has {a.size} entries, expected {n}")
            if not (a > 0).all():
                raise ValueError(f"{name} has non-positive entries")

    @property
    def n_cells(self):
        return int(np.prod(self.dims))

    def diag(self):
        """(n_cells, 3) array of diagonal entries."""
        return np.stack([self.Kx, self.Ky, self.Kz], axis=1)

    @property
    def ranges(self):
        return {n: (float(getattr(self, n).min()), float(getattr(self, n).max())) for n in ("Kx", "Ky", "Kz")}

    @property
    def contrast(self):
        d = self.diag()
        return float(d.max() / d.min())

    def subsample(self, stride):
        """Keep every ``stride``-th cell per axis (floor of dims / stride cells)."""
        nx, ny, nz = self.dims
        new = tuple(n // stride for n in self.dims)
        if min(new) < 1:
            raise ValueError("stride larger than the field")

        def take(a):
            a3 = a.reshape((nz, ny, nx))
            return a3[: new[2] * stride : stride, : new[1] * stride : stride, : new[0] * stride : stride].ravel()

        return PermeabilityField(take(self.Kx), take(self.Ky), take(self.Kz), new)


SPE10_DIMS = (60, 220, 85)
SPE10_EXTENTS = (1200.0, 2200.0, 170.0)


def load_spe10(path, dims=SPE10_DIMS):
    """Parse an SPE10-format permeability file: three blocks (Kx, Ky, Kz) of prod(dims) values."""
    n = int(np.prod(dims))
    with open(path) as fh:
        values = np.array(fh.read().split(), dtype=float)
    if values.size < 3 * n:
        raise ValueError(f"file holds {values.size} values, expected {3 * n}")
    values = values[: 3 * n]
    if not (values > 0).all():
        raise ValueError("permeability file contains non-positive values")
    return PermeabilityField(values[:n].copy(), values[n : 2 * n].copy(), values[2 * n :].copy(), tuple(dims))


def write_spe10(path, field, per_line=6):
    data = np.concatenate([field.Kx, field.Ky, field.Kz])
    with open(path, "w") as fh:
        for start in range(0, data.size, per_line):
            fh.write(" ".join(f"{v:.6e}" for v in data[start : start + per_line]))
            fh.write("\n")
