import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geneo_dd import materials as m


def test_ply_stiffness_spd_and_anisotropic():
    C = m.orthotropic_stiffness(m.PLY)
    assert np.abs(C - C.T).max() < 1e-12 * np.abs(C).max()
    assert np.linalg.eigvalsh(C).min() > 0
    assert C[0, 0] > 10 * C[1, 1]


def test_ply_normal_block_matches_dense_inversion():
    p = m.PLY
    # independent oracle: the normal-stress compliance block inverted on its own
    S3 = np.array(
        [
            [1 / p.E11, -p.nu12 / p.E11, -p.nu13 / p.E11],
            [-p.nu12 / p.E11, 1 / p.E22, -p.nu23 / p.E22],
            [-p.nu13 / p.E11, -p.nu23 / p.E22, 1 / p.E33],
        ]
    )
    C = m.orthotropic_stiffness(p)
    assert np.allclose(C[:3, :3], np.linalg.inv(S3), rtol=1e-12)
    assert np.allclose(np.diag(C)[3:], [p.G23, p.G13, p.G12])


def test_isotropic_limit():
    E, nu = 7.0, 0.3
    G = E / (2 * (1 + nu))
    p = m.OrthotropicParams(E, E, E, G, G, G, nu, nu, nu)
    assert np.allclose(m.orthotropic_stiffness(p), m.isotropic_stiffness(E, nu), atol=1e-10)


def test_resin_shear_modulus():
    _, mu = m.lame(m.RESIN_E, m.RESIN_NU)
    assert mu == pytest.approx(3.7037037, rel=1e-6)
    assert m.isotropic_stiffness(m.RESIN_E, m.RESIN_NU)[3, 3] == pytest.approx(mu)


def test_zero_poisson_decouples():
    assert m.isotropic_stiffness(5.0, 0.0)[0, 1] == 0


@settings(max_examples=40, deadline=None)
@given(E=st.floats(0.1, 1e3), nu=st.floats(-0.9, 0.49))
def test_isotropic_spd(E, nu):
    C = m.isotropic_stiffness(E, nu)
    ev = np.linalg.eigvalsh(C)
    _, mu = m.lame(E, nu)
    assert ev.min() > 0
    assert np.allclose(np.linalg.eigvalsh(C[3:, 3:]), mu)
    assert ev.min() >= min(mu, E / (1 - 2 * nu)) * (1 - 1e-10)


@pytest.mark.parametrize("nu", [0.5, 0.7, -1.0])
def test_inadmissible_poisson(nu):
    with pytest.raises(ValueError):
        m.isotropic_stiffness(1.0, nu)


def test_inadmissible_orthotropic():
    with pytest.raises(ValueError):
        m.orthotropic_stiffness(m.OrthotropicParams(1, 1, 1, 1, 1, 1, 0.9, 0.9, 0.9))
    with pytest.raises(ValueError):
        m.orthotropic_stiffness(m.OrthotropicParams(-1, 1, 1, 1, 1, 1, 0.1, 0.1, 0.1))


def test_rotation_special_angles():
    C = m.orthotropic_stiffness(m.PLY)
    assert np.allclose(m.rotate_stiffness(C, 0.0), C)
    C90 = m.rotate_stiffness(C, 90.0)
    assert C90[0, 0] == pytest.approx(C[1, 1])
    assert C90[1, 1] == pytest.approx(C[0, 0])
    back = m.rotate_stiffness(m.rotate_stiffness(C, 45.0), -45.0)
    assert np.abs(back - C).max() < 1e-12 * np.abs(C).max()


@settings(max_examples=40, deadline=None)
@given(theta=st.floats(-180, 180))
def test_rotation_preserves_spectrum(theta):
    C = m.orthotropic_stiffness(m.PLY)
    ev0 = np.linalg.eigvalsh(m.to_mandel(C))
    ev1 = np.linalg.eigvalsh(m.to_mandel(m.rotate_stiffness(C, theta)))
    assert np.abs(ev1 - ev0).max() < 1e-10 * ev0.max()


def test_rotation_matches_tensor_transformation():
    # oracle: rotate the full fourth-order tensor directly
    C = m.orthotropic_stiffness(m.PLY)
    theta = 30.0
    pairs = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)]
    T4 = np.zeros((3, 3, 3, 3))
    for I, (i, j) in enumerate(pairs):
        for J, (k, l) in enumerate(pairs):
            for a, b in {(i, j), (j, i)}:
                for c, d in {(k, l), (l, k)}:
                    T4[a, b, c, d] = C[I, J]
    t = np.deg2rad(theta)
    R = np.array([[np.cos(t), -np.sin(t), 0], [np.sin(t), np.cos(t), 0], [0, 0, 1]])
    Tr = np.einsum("ai,bj,ck,dl,ijkl->abcd", R, R, R, R, T4)
    Cr = np.array([[Tr[i, j, k, l] for (k, l) in pairs] for (i, j) in pairs])
    assert np.allclose(m.rotate_stiffness(C, theta), Cr, atol=1e-10 * np.abs(C).max())


def test_stacking_expansion_and_laminate():
    assert m.expand_stacking(["-+45", 0, "+-45", 90]) == [-45, 45, 0, 45, -45, 90]
    assert m.PLATE_SEQUENCE == [-45, 45, 0, 90, 45, -45, -45, 45, 90, 0, 45, -45]
    lam = m.Laminate(tuple(m.Ply("ply", t, 0.23) for t in m.PLATE_SEQUENCE))
    assert lam.thickness == pytest.approx(2.98)
    from geneo_dd.mesh import GridSpec

    assert GridSpec((1, 1), (1, 1), m.laminate_layers(lam)).thickness == pytest.approx(lam.thickness)
    with pytest.raises(ValueError):
        m.Laminate((m.Ply("ply", 120.0, 0.2),))


def test_orientation_normalization():
    assert m.normalize_orientation(-90.0) == 90.0
    assert m.normalize_orientation(135.0) == -45.0


def test_region_stiffness_conflict():
    from geneo_dd.mesh import Layer

    mats = m.default_materials()
    with pytest.raises(ValueError):
        m.region_stiffness([Layer(0, 1.0, 1, 0.0, "ply"), Layer(0, 1.0, 1, 45.0, "ply")], mats)


def _field(dims, seed=0):
    rng = np.random.default_rng(seed)
    n = int(np.prod(dims))
    return m.PermeabilityField(*(10 ** rng.uniform(-3, 3, n) for _ in range(3)), dims)


def test_spe10_round_trip(tmp_path):
    f = _field((6, 5, 4))
    m.write_spe10(tmp_path / "k.dat", f)
    g = m.load_spe10(tmp_path / "k.dat", (6, 5, 4))
    for a in ("Kx", "Ky", "Kz"):
        assert np.allclose(getattr(g, a), getattr(f, a), rtol=1e-6)


def test_spe10_homogeneous(tmp_path):
    (tmp_path / "ones.dat").write_text(" ".join(["1.0"] * 3 * 24))
    f = m.load_spe10(tmp_path / "ones.dat", (2, 3, 4))
    assert f.contrast == 1.0 and f.n_cells == 24


def test_spe10_short_file(tmp_path):
    (tmp_path / "short.dat").write_text("1 2 3")
    with pytest.raises(ValueError):
        m.load_spe10(tmp_path / "short.dat", (2, 2, 2))


def test_subsample_dims_and_bounds():
    f = _field((60, 22, 17))
    s = f.subsample(2)
    assert s.dims == (30, 11, 8)
    for a in ("Kx", "Ky", "Kz"):
        lo, hi = f.ranges[a]
        assert lo <= getattr(s, a).min() and getattr(s, a).max() <= hi
    # value of subsampled cell (i, j, k) is full cell (2i, 2j, 2k)
    full = f.Kx.reshape(17, 22, 60)
    assert s.Kx.reshape(8, 11, 30)[3, 4, 5] == full[6, 8, 10]
