import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import brute_chamfer, linear_nn, voxel_set
from tpvp.geometry import (CloudFormatError, PointCloud, SpatialIndex, chamfer_distance, load_cloud,
                           nearest_neighbor_distance, save_cloud, voxel_downsample, voxel_keys)

coords = st.floats(-0.1, 0.1, allow_nan=False, allow_infinity=False)
clouds = arrays(np.float64, st.tuples(st.integers(1, 40), st.just(3)), elements=coords)


def test_point_cloud_rejects_nan():
    with pytest.raises(ValueError):
        PointCloud(np.array([[0.0, np.nan, 0.0]]))


def test_point_cloud_is_read_only():
    c = PointCloud(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        c.points[0, 0] = 1.0


def test_downsample_cube_corners_collapse_to_center():
    corners = np.array([[x, y, z] for x in (0, 0.001) for y in (0, 0.001) for z in (0, 0.001)]) + 0.0005
    out = voxel_downsample(PointCloud(corners), 0.004)
    assert len(out) == 1
    np.testing.assert_allclose(out.points[0], [0.001, 0.001, 0.001], atol=1e-15)


def test_downsample_two_distinct_voxels():
    out = voxel_downsample(PointCloud(np.array([[0.001, 0, 0], [0.011, 0, 0]])), 0.004)
    assert len(out) == 2


def test_downsample_empty_is_empty():
    assert voxel_downsample(PointCloud.empty(), 0.004).is_empty


def test_downsample_count_matches_hash_grid(rng):
    pts = rng.uniform(0, 0.12, size=(10_000, 3))
    out = voxel_downsample(PointCloud(pts), 0.004)
    assert len(out) == len(voxel_set(pts, 0.004))


def test_boundary_point_goes_to_higher_voxel():
    assert voxel_keys(np.array([[0.004, 0.0, -0.004]]), 0.004).tolist() == [[1, 0, -1]]


@given(clouds, st.sampled_from([0.002, 0.004, 0.01]))
def test_downsample_covers_every_input_point(pts, size):
    out = voxel_downsample(PointCloud(pts), size)
    assert len(out) <= len(pts)
    d = SpatialIndex(out).distances(pts)
    assert np.all(d <= size * np.sqrt(3) + 1e-12)


def test_nearest_neighbor_examples():
    assert nearest_neighbor_distance(SpatialIndex(PointCloud(np.zeros((1, 3)))), [0.003, 0, 0]) == pytest.approx(0.003)
    two = SpatialIndex(PointCloud(np.array([[0.0, 0, 0], [1.0, 0, 0]])))
    assert nearest_neighbor_distance(two, [0.6, 0, 0]) == pytest.approx(0.4)


def test_nearest_neighbor_matches_linear_scan(rng):
    pts = rng.uniform(-1, 1, size=(1000, 3))
    index = SpatialIndex(PointCloud(pts))
    for q in rng.uniform(-1, 1, size=(100, 3)):
        assert nearest_neighbor_distance(index, q) == pytest.approx(linear_nn(pts, q), rel=0, abs=1e-15)


def test_spatial_index_empty_raises():
    with pytest.raises(ValueError):
        SpatialIndex(PointCloud.empty())


def test_chamfer_examples():
    a = PointCloud(np.zeros((1, 3)))
    assert chamfer_distance(a, a) == 0.0
    assert chamfer_distance(a, PointCloud(np.array([[0.002, 0, 0]]))) == pytest.approx(0.002)
    with pytest.raises(ValueError):
        chamfer_distance(a, PointCloud.empty())


def test_chamfer_matches_double_loop(rng):
    a, b = rng.normal(size=(500, 3)), rng.normal(size=(500, 3)) + 0.1
    assert chamfer_distance(PointCloud(a), PointCloud(b)) == pytest.approx(brute_chamfer(a, b), rel=1e-12)


@given(clouds, clouds)
def test_chamfer_symmetric(a, b):
    ca, cb = PointCloud(a), PointCloud(b)
    assert abs(chamfer_distance(ca, cb) - chamfer_distance(cb, ca)) < 1e-12


@pytest.mark.parametrize("ext", [".xyz", ".ply"])
def test_round_trip(tmp_path, rng, ext):
    c = PointCloud(rng.uniform(-0.1, 0.1, size=(10_000, 3)))
    save_cloud(c, tmp_path / f"c{ext}")
    back = load_cloud(tmp_path / f"c{ext}")
    assert len(back) == len(c)
    assert np.abs(back.points - c.points).max() < 1e-6


def test_load_small_files(tmp_path):
    (tmp_path / "a.xyz").write_text("0 0 0\n0.1 0.2 0.3\n1 1 1\n")
    assert len(load_cloud(tmp_path / "a.xyz")) == 3
    rows = "\n".join(f"{i * 0.001} 0 0 255" for i in range(100))
    header = ("ply\nformat ascii 1.0\ncomment test\nelement vertex 100\nproperty float x\nproperty float y\n"
              "property float z\nproperty uchar red\nelement face 0\nproperty list uchar int vertex_indices\n"
              "end_header\n")
    (tmp_path / "b.ply").write_text(header + rows + "\n")
    assert len(load_cloud(tmp_path / "b.ply")) == 100


def test_malformed_xyz_names_line(tmp_path):
    (tmp_path / "bad.xyz").write_text("0 0 0\n0 zero 0\n")
    with pytest.raises(CloudFormatError, match=":2:"):
        load_cloud(tmp_path / "bad.xyz")


def test_binary_ply_rejected(tmp_path):
    (tmp_path / "b.ply").write_bytes(b"ply\nformat binary_little_endian 1.0\nelement vertex 1\nend_header\n")
    with pytest.raises(CloudFormatError, match="binary"):
        load_cloud(tmp_path / "b.ply")


def test_unknown_extension(tmp_path):
    with pytest.raises(CloudFormatError):
        load_cloud(tmp_path / "c.pcd")
    with pytest.raises(CloudFormatError):
        save_cloud(PointCloud(np.zeros((1, 3))), tmp_path / "c.obj")
