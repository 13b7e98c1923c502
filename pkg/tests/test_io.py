import struct

import numpy as np
import pytest

from regkit import PointCloud, load_point_cloud, load_reference_points, save_point_cloud_ply
from regkit.errors import EmptyCloud, ParseError

ASCII_PLY_3 = """ply
format ascii 1.0
comment three points
element vertex 3
property float x
property float y
property float z
end_header
0 0 0
1.5 2.5 3.5
-1 -2 -3
"""

OBJ_CUBE = """# cube
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
v 0 0 1
v 1 0 1
v 1 1 1
v 0 1 1
f 1 2 3
f 1 3 4
f 5 6 7
f 5 7 8
f 1 2 6
f 1 6 5
f 2 3 7
f 2 7 6
f 3 4 8
f 3 8 7
f 4 1 5
f 4 5 8
"""


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_ascii_ply_readback(tmp_path):
    cloud = load_point_cloud(_write(tmp_path, "tri.ply", ASCII_PLY_3))
    assert len(cloud) == 3
    assert np.allclose(cloud.points[1], [1.5, 2.5, 3.5])
    assert cloud.normals is None


def test_obj_cube_vertices_only(tmp_path):
    cloud = load_point_cloud(_write(tmp_path, "cube.obj", OBJ_CUBE))
    assert len(cloud) == 8
    assert cloud.normals is None


def test_binary_ply_roundtrip(tmp_path):
    pts = np.array([[0.0, 1.0, 2.0], [3.0, 4.0, 5.0]], dtype=np.float32)
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        "element vertex 2\n"
        "property float x\nproperty float y\nproperty float z\n"
        "end_header\n"
    )
    path = tmp_path / "bin.ply"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(pts.tobytes())
    cloud = load_point_cloud(path)
    assert len(cloud) == 2
    assert np.allclose(cloud.points, pts)


def test_truncated_binary_ply_raises(tmp_path):
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        "element vertex 10\n"
        "property float x\nproperty float y\nproperty float z\n"
        "end_header\n"
    )
    path = tmp_path / "trunc.ply"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(struct.pack("<fff", 1.0, 2.0, 3.0))  # one vertex of ten
    with pytest.raises(ParseError):
        load_point_cloud(path)


def test_zero_vertices_is_empty_cloud(tmp_path):
    text = (
        "ply\nformat ascii 1.0\nelement vertex 0\n"
        "property float x\nproperty float y\nproperty float z\nend_header\n"
    )
    with pytest.raises(EmptyCloud):
        load_point_cloud(_write(tmp_path, "empty.ply", text))


def test_bad_magic_raises(tmp_path):
    with pytest.raises(ParseError):
        load_point_cloud(_write(tmp_path, "bad.ply", "not a ply\n"))


def test_format_mismatch_raises(tmp_path):
    path = _write(tmp_path, "tri.ply", ASCII_PLY_3)
    with pytest.raises(ParseError):
        load_point_cloud(path, format="ply-binary-le")


def test_writer_roundtrip_with_attributes(tmp_path, rng):
    normals = rng.normal(size=(20, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    cloud = PointCloud(
        rng.normal(size=(20, 3)) * 10,
        normals=normals,
        curvatures=rng.uniform(0, 0.3, 20),
    )
    path = tmp_path / "out.ply"
    save_point_cloud_ply(cloud, path)
    again = load_point_cloud(path)
    assert np.allclose(again.points, cloud.points, atol=1e-8)
    assert np.allclose(again.normals, cloud.normals, atol=1e-8)
    assert np.allclose(again.curvatures, cloud.curvatures, atol=1e-8)


def test_reference_points_csv(tmp_path):
    path = tmp_path / "gt.csv"
    path.write_text("x_mm,y_mm,z_mm\n1,2,3\n4,5,6\n")
    pts = load_reference_points(path)
    assert pts.shape == (2, 3)
    assert np.allclose(pts[1], [4, 5, 6])


def test_reference_points_headerless_csv(tmp_path):
    path = tmp_path / "gt.csv"
    path.write_text("1.0,2.0,3.0\n")
    assert load_reference_points(path).shape == (1, 3)


def test_vertex_after_other_ascii_element(tmp_path):
    text = (
        "ply\nformat ascii 1.0\n"
        "element frame 2\nproperty float stamp\n"
        "element vertex 1\n"
        "property float x\nproperty float y\nproperty float z\n"
        "end_header\n"
        "0.1\n0.2\n"
        "7 8 9\n"
    )
    cloud = load_point_cloud(_write(tmp_path, "multi.ply", text))
    assert np.allclose(cloud.points, [[7, 8, 9]])
