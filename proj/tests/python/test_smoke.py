import math

import numpy as np
import pytest

import pifukit


def test_version():
    assert pifukit.version()


def test_icosphere_round_trip(tmp_path):
    s = pifukit.icosphere(3, 0.5)
    assert s.is_watertight()
    assert s.signed_volume() == pytest.approx(4 / 3 * math.pi * 0.125, rel=0.03)
    path = tmp_path / "s.obj"
    pifukit.save_obj(s, path)
    back = pifukit.load_mesh(path)
    np.testing.assert_allclose(back.vertices, s.vertices, atol=1e-6)
    assert (back.faces == s.faces).all()


def test_mesh_from_arrays():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    f = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    t = pifukit.TriMesh(v, f)
    assert t.is_watertight()
    assert t.signed_volume() == pytest.approx(1 / 6)
    with pytest.raises(pifukit.Error):
        pifukit.TriMesh(v[:, :2], f)


def test_samplers():
    s = pifukit.icosphere(4, 0.8)
    spatial = pifukit.spatial_samples(s, {"n_total": 1700, "seed": 3})
    assert spatial.shape == (1700, 4)
    assert set(np.unique(spatial[:, 3])) <= {0.0, 1.0}
    for x, y, z, label in spatial[:50]:
        assert (label == 1.0) == pifukit.is_inside(s, x, y, z)
    dos = pifukit.dos_samples(s, {"n_total": 1000, "seed": 3})
    assert ((dos[:, 3] >= 0) & (dos[:, 3] <= 1)).all()
    assert pifukit.dos_label(0.0, 0.05) == 0.5
    with pytest.raises(pifukit.Error):
        pifukit.dos_samples(s, {"sigma_dos": 0})


def test_render_center_pixel():
    fig = pifukit.make_shape({"kind": "capsule_figure"})
    maps = pifukit.render_maps(fig, 64, yaw=0.3)
    assert maps["rel_depth"].shape == (64, 64, 1)
    assert maps["rel_depth"][32, 32, 0] == 0.0
    assert maps["mask"][32, 32, 0] == 1.0
    assert maps["parse"].shape[2] == maps["parse_classes"]
    assert maps["camera"]["resolution"] == 64


def test_marching_cubes_and_metrics():
    g = 48
    axis = np.linspace(-1.1, 1.1, g)
    z, y, x = np.meshgrid(axis, axis, axis, indexing="ij")
    values = 0.5 + (0.7 - np.sqrt(x * x + y * y + z * z))
    mesh = pifukit.marching_cubes(values)
    assert mesh.is_watertight()
    ref = pifukit.icosphere(5, 0.7)
    assert pifukit.chamfer(mesh, ref, 20000) < 1e-3
    assert pifukit.roughness(ref) < 0.25
    report = pifukit.evaluate(mesh, ref, {"yaw": 0.0, "scale": 64 / 2.2, "resolution": 64}, n=5000)
    assert report["fin_iou"] is None
    assert report["normal_err"] < 0.2
    assert pifukit.region_iou(mesh, ref, (-0.2, -0.2, -0.2), (0.2, 0.2, 0.2)) == 1.0
