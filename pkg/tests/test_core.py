import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from conftest import depth_field, disparity_field, gray, sparse_depth
from s3_core import (
    CameraIntrinsics, ConfidencePatch, ConfigError, CostVolume, DenseField, DomainError, PointCloud3D,
    RasterFormat, RasterFormatError, Representation, RepresentationError, SparseSignalMap, backproject,
    depth_to_disparity, disparity_to_depth, load_config, project, read_intrinsics, read_key_value,
    read_points, read_raster, write_intrinsics, write_key_value, write_points, write_raster,
)
from s3_expansion import AdhocConfig


class TestDomainTypes:
    def test_invalid_pixels_hold_zero(self):
        field = DenseField([[1.0, 7.0]], [[True, False]], Representation.DEPTH)
        assert field.values[0, 1] == 0.0
        assert field.dims == (1, 2)

    def test_fields_are_read_only(self):
        field = depth_field([[1.0, 2.0]])
        with pytest.raises(ValueError):
            field.values[0, 0] = 5.0

    def test_unitless_field_bounded(self):
        with pytest.raises(DomainError):
            DenseField([[1.5]], [[True]], Representation.UNITLESS)

    def test_nan_on_valid_pixel_rejected(self):
        with pytest.raises(DomainError):
            depth_field([[np.nan]])

    def test_image_range(self):
        with pytest.raises(DomainError):
            gray([[1.2]])
        assert gray(np.zeros((2, 3))).channels == 1

    def test_sparse_rejects_duplicates_and_bounds(self):
        with pytest.raises(DomainError):
            sparse_depth(4, 4, [(1, 1, 2.0), (1, 1, 3.0)])
        with pytest.raises(DomainError):
            sparse_depth(4, 4, [(4, 0, 2.0)])
        with pytest.raises(DomainError):
            sparse_depth(4, 4, [(0, 0, 0.0)])

    def test_sparse_helpers(self):
        sparse = sparse_depth(3, 3, [(0, 0, 2.0), (2, 1, 4.0)])
        dense = sparse.to_dense()
        assert dense.valid.sum() == 2
        assert dense.values[2, 1] == 4.0
        assert len(sparse.subset([1])) == 1
        assert sparse.subset([1]).points == [(2, 1, 4.0)]
        field = depth_field(np.full((3, 3), 5.0), valid=np.eye(3, dtype=bool))
        assert_array_equal(np.isnan(sparse.values_at(field)), [False, True])
        assert SparseSignalMap.from_dense(dense).points == sparse.points

    def test_patch_center_must_be_one(self):
        with pytest.raises(DomainError):
            ConfidencePatch(0, (1, 1), 1, 0, 0, np.full((3, 3), 0.5), 2.0)
        patch = ConfidencePatch(0, (1, 1), 1, 0, 0, [[0, 0, 0], [0, 1, 0], [0, 0, 0]], 2.0)
        assert (patch.bottom, patch.right) == (3, 3)

    def test_cost_volume_promotes_single_feature(self):
        cv = CostVolume(np.ones((2, 3, 4)))
        assert (cv.height, cv.width, cv.max_disparity, cv.features) == (2, 3, 4, 1)

    def test_point_cloud_needs_positive_z(self):
        with pytest.raises(DomainError):
            PointCloud3D([[0.0, 0.0, -1.0]], [0], [0], 1, 1)


class TestRasters:
    def test_pfm_depth_keeps_validity(self, tmp_path):
        valid = np.array([[True, False], [True, True]])
        field = depth_field([[1.5, 0.0], [2.25, 80.0]], valid)
        write_raster(field, tmp_path / "d.pfm")
        back = read_raster(tmp_path / "d.pfm")
        assert_array_equal(back.valid, valid)
        assert_array_equal(back.values, field.values)
        assert back.representation is Representation.DEPTH

    def test_pfm_color_image(self, tmp_path):
        img = gray(np.stack([np.full((2, 2), 0.25), np.full((2, 2), 0.5), np.eye(2)], axis=2))
        write_raster(img, tmp_path / "i.pfm")
        back = read_raster(tmp_path / "i.pfm", representation=None)
        assert_array_equal(back.values, img.values)

    def test_pfm_rows_are_stored_bottom_up(self, tmp_path):
        write_raster(depth_field([[1.0], [2.0]]), tmp_path / "d.pfm")
        payload = (tmp_path / "d.pfm").read_bytes()[-8:]
        assert_array_equal(np.frombuffer(payload, "<f4"), [2.0, 1.0])

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.pfm").write_bytes(b"P6\n1 1\n-1.0\n\x00\x00\x80\x3f")
        with pytest.raises(RasterFormatError) as info:
            read_raster(tmp_path / "x.pfm")
        assert info.value.reason == "malformed header"
        assert info.value.offset == 0

    def test_truncated_payload_offset(self, tmp_path):
        write_raster(depth_field(np.ones((3, 3))), tmp_path / "d.pfm")
        cut = (tmp_path / "d.pfm").read_bytes()[:-5]
        (tmp_path / "d.pfm").write_bytes(cut)
        with pytest.raises(RasterFormatError) as info:
            read_raster(tmp_path / "d.pfm")
        assert info.value.reason == "truncated payload"
        assert info.value.offset == len(cut)

    def test_negative_value_located(self, tmp_path):
        header = b"Pf\n2 1\n-1.0\n"
        (tmp_path / "n.pfm").write_bytes(header + np.array([1.0, -1.0], "<f4").tobytes())
        with pytest.raises(RasterFormatError) as info:
            read_raster(tmp_path / "n.pfm")
        assert info.value.reason == "out-of-range"
        assert info.value.offset == len(header) + 4

    def test_png16_depth(self, tmp_path):
        valid = np.array([[True, True, False]])
        field = depth_field([[1.5, 10.25, 0.0]], valid)
        write_raster(field, tmp_path / "d.png", RasterFormat.PNG16)
        back = read_raster(tmp_path / "d.png", RasterFormat.PNG16, Representation.DEPTH)
        assert_array_equal(back.valid, valid)
        assert_array_equal(back.values, field.values)

    def test_png16_rejects_confidence_and_overflow(self, tmp_path):
        conf = DenseField([[0.5]], [[True]], Representation.UNITLESS)
        with pytest.raises(RasterFormatError, match="representation mismatch"):
            write_raster(conf, tmp_path / "c.png", RasterFormat.PNG16)
        with pytest.raises(RasterFormatError, match="value exceeds format range"):
            write_raster(depth_field([[300.0]]), tmp_path / "far.png", RasterFormat.PNG16)

    def test_png8_image(self, tmp_path):
        img = gray(np.array([[0, 51, 255]]) / 255.0)
        write_raster(img, tmp_path / "g.png", RasterFormat.PNG8)
        back = read_raster(tmp_path / "g.png", RasterFormat.PNG8)
        assert_allclose(back.values, img.values)


class TestPointsAndConfig:
    def test_points_file(self, tmp_path):
        sparse = sparse_depth(5, 6, [(0, 1, 2.5), (4, 5, 0.1)])
        write_points(sparse, tmp_path / "s.txt")
        back = read_points(tmp_path / "s.txt")
        assert back.points == sparse.points
        assert back.dims == (5, 6)

    def test_malformed_record_offset(self, tmp_path):
        text = "# rows=4 cols=4 repr=depth\n1,1,2.0\nbad\n"
        (tmp_path / "s.txt").write_text(text)
        with pytest.raises(RasterFormatError) as info:
            read_points(tmp_path / "s.txt")
        assert info.value.reason == "malformed record"
        assert info.value.offset == text.index("bad")

    def test_key_value_file(self, tmp_path):
        (tmp_path / "c.cfg").write_text("# comment\n\ntau = 0.1\nhalf_size=4\n")
        assert read_key_value(tmp_path / "c.cfg") == {"tau": "0.1", "half_size": "4"}
        (tmp_path / "bad.cfg").write_text("tau 0.1\n")
        with pytest.raises(ConfigError):
            read_key_value(tmp_path / "bad.cfg")
        with pytest.raises(ConfigError):
            read_key_value(tmp_path / "missing.cfg")

    def test_load_config_overrides_and_unknown_keys(self, tmp_path):
        write_key_value(tmp_path / "a.cfg", {"tau": 0.1, "half_size": 4})
        cfg = load_config(AdhocConfig, tmp_path / "a.cfg", {"half_size": 6, "tau": None})
        assert (cfg.tau, cfg.half_size) == (0.1, 6)
        with pytest.raises(ConfigError, match="gamma"):
            load_config(AdhocConfig, overrides={"gamma": 1})
        with pytest.raises(ConfigError):
            load_config(AdhocConfig, overrides={"tau": -1})

    def test_intrinsics_file(self, tmp_path, intrinsics):
        write_intrinsics(intrinsics, tmp_path / "k.txt")
        assert read_intrinsics(tmp_path / "k.txt") == intrinsics


class TestCamera:
    def test_depth_disparity_conversion(self, intrinsics):
        disp = disparity_field([[10.0, 25.0]], np.array([[True, False]]))
        depth = disparity_to_depth(disp, intrinsics)
        assert depth.values[0, 0] == pytest.approx(100.0 * 0.5 / 10.0)
        assert not depth.valid[0, 1]
        assert_allclose(depth_to_disparity(depth, intrinsics).values, disp.values)

    def test_sparse_conversion(self, intrinsics):
        sparse = sparse_depth(4, 4, [(1, 2, 5.0)])
        assert depth_to_disparity(sparse, intrinsics).values[0] == pytest.approx(10.0)
        assert depth_to_disparity(sparse, intrinsics).representation is Representation.DISPARITY

    def test_zero_disparity_rejected(self, intrinsics):
        with pytest.raises(DomainError):
            disparity_to_depth(disparity_field([[0.0]]), intrinsics)

    def test_wrong_representation(self, intrinsics):
        with pytest.raises(RepresentationError):
            depth_to_disparity(disparity_field([[3.0]]), intrinsics)

    def test_backproject_then_project(self, intrinsics):
        rng = np.random.default_rng(0)
        depth = depth_field(rng.uniform(2.0, 30.0, size=(24, 32)))
        cloud = backproject(depth, intrinsics)
        assert len(cloud) == 24 * 32
        sparse = project(cloud, intrinsics)
        assert_allclose(sparse.to_dense().values, depth.values)

    def test_backproject_pixel(self, intrinsics):
        cloud = backproject(sparse_depth(24, 32, [(1, 25, 4.0)]), intrinsics)
        assert_allclose(cloud.xyz[0], [(25 - 15.5) * 4.0 / 100.0, (1 - 11.5) * 4.0 / 100.0, 4.0])

    def test_nearest_point_wins(self):
        intr = CameraIntrinsics(50.0, 2.0, 2.0, 0.1)
        cloud = PointCloud3D([[0.0, 0.0, 5.0], [0.0, 0.0, 3.0]], [2, 2], [2, 2], 5, 5)
        sparse = project(cloud, intr)
        assert sparse.points == [(2, 2, 3.0)]
