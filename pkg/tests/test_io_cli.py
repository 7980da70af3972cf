import struct

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from splitkit.core import Gaussian2, Scene2, Scene3
from splitkit.io_cli import (BadMagicError, FormatError, SceneFormatError,
                             SizeMismatchError, UnsupportedVersionError,
                             format_trace_row, main, parse_config_file,
                             read_image, read_scene, scene_bytes, write_image,
                             write_scene, write_trace, write_events)
from splitkit.densify_controller import DensifyEvent
from splitkit.las_split import SplitConstants, las_split_batch_2d

from test_core import random_gaussian3

HEADER_SIZE = 15              # magic + version + dims + count
RECORD_BYTES = {2: 36, 3: 56}  # float32 payload per primitive


def scene3_of(rng, count, capacity=None):
    return Scene3.from_gaussians(
        [random_gaussian3(rng) for _ in range(count)],
        capacity or max(count, 1))


def scene2_of(rng, count, capacity=None):
    gaussians = [
        Gaussian2(rng.normal(size=2), rng.normal(scale=0.3, size=2),
                  rng.uniform(0, np.pi), rng.normal(), rng.random(3))
        for _ in range(count)
    ]
    return Scene2.from_gaussians(gaussians, capacity or max(count, 1))


def pack_scene(dims, count, payload_floats):
    header = struct.pack("<4sHBQ", b"IGSP", 1, dims, count)
    return header + np.asarray(payload_floats, dtype="<f4").tobytes()


class TestSceneRoundTrip:
    def test_3d_fields_survive_exactly(self, tmp_path):
        rng = np.random.default_rng(50)
        scene = scene3_of(rng, 17)
        path = tmp_path / "a.igsp"
        write_scene(scene, path)
        loaded = read_scene(path)
        assert isinstance(loaded, Scene3)
        assert loaded.count == 17
        assert_array_equal(loaded.positions, scene.positions)
        assert_array_equal(loaded.log_scales, scene.log_scales)
        assert_array_equal(loaded.opacity_logits, scene.opacity_logits)
        assert_array_equal(loaded.colors, scene.colors)
        # stored rotations are unit quaternions already; reload is exact
        assert_allclose(loaded.rotations, scene.rotations, atol=1e-7)

    def test_2d_fields_survive_exactly(self, tmp_path):
        rng = np.random.default_rng(51)
        scene = scene2_of(rng, 9)
        path = tmp_path / "b.igsp"
        write_scene(scene, path)
        loaded = read_scene(path)
        assert isinstance(loaded, Scene2)
        assert_array_equal(loaded.positions, scene.positions)
        assert_array_equal(loaded.log_scales, scene.log_scales)
        assert_array_equal(loaded.thetas, scene.thetas)
        assert_array_equal(loaded.opacity_logits, scene.opacity_logits)
        assert_array_equal(loaded.colors, scene.colors)

    def test_empty_scene_is_header_only(self, tmp_path):
        path = tmp_path / "empty.igsp"
        write_scene(Scene2.empty(4), path)
        assert path.stat().st_size == HEADER_SIZE
        loaded = read_scene(path)
        assert loaded.count == 0

    def test_file_size_is_exactly_header_plus_records(self, tmp_path):
        rng = np.random.default_rng(52)
        scene = scene3_of(rng, 1000)
        path = tmp_path / "big.igsp"
        write_scene(scene, path)
        assert path.stat().st_size == HEADER_SIZE + 1000 * RECORD_BYTES[3]

    def test_rewrite_is_byte_identical(self, tmp_path):
        rng = np.random.default_rng(53)
        scene = scene3_of(rng, 64)
        first = scene_bytes(scene)
        path = tmp_path / "c.igsp"
        write_scene(scene, path)
        again = scene_bytes(read_scene(path))
        assert first == again

    def test_rejects_non_scene_objects(self, tmp_path):
        with pytest.raises(TypeError):
            write_scene(object(), tmp_path / "nope.igsp")


class TestSceneFormatErrors:
    def write_bytes(self, tmp_path, data):
        path = tmp_path / "x.igsp"
        path.write_bytes(data)
        return path

    def test_bad_magic(self, tmp_path):
        rng = np.random.default_rng(54)
        good = scene_bytes(scene2_of(rng, 2))
        path = self.write_bytes(tmp_path, b"JUNK" + good[4:])
        with pytest.raises(BadMagicError):
            read_scene(path)

    def test_unsupported_version(self, tmp_path):
        data = struct.pack("<4sHBQ", b"IGSP", 9, 2, 0)
        with pytest.raises(UnsupportedVersionError):
            read_scene(self.write_bytes(tmp_path, data))

    def test_invalid_dims(self, tmp_path):
        data = struct.pack("<4sHBQ", b"IGSP", 1, 4, 0)
        with pytest.raises(SceneFormatError):
            read_scene(self.write_bytes(tmp_path, data))

    def test_payload_too_short_and_too_long(self, tmp_path):
        rng = np.random.default_rng(55)
        good = scene_bytes(scene2_of(rng, 3))
        with pytest.raises(SizeMismatchError):
            read_scene(self.write_bytes(tmp_path, good[:-4]))
        with pytest.raises(SizeMismatchError):
            read_scene(self.write_bytes(tmp_path, good + b"\x00" * 8))

    def test_every_truncation_length_raises_cleanly(self, tmp_path):
        rng = np.random.default_rng(56)
        good = scene_bytes(scene2_of(rng, 2))
        for cut in range(len(good)):
            path = self.write_bytes(tmp_path, good[:cut])
            with pytest.raises(SceneFormatError):
                read_scene(path)

    def test_quaternions_renormalized_on_load(self, tmp_path):
        # one primitive, rotation stored at twice unit length
        floats = ([0.0, 0.0, 0.0] + [0.0, 0.0, 0.0]
                  + [2.0, 0.0, 0.0, 0.0] + [0.0] + [0.5, 0.5, 0.5])
        path = self.write_bytes(tmp_path, pack_scene(3, 1, floats))
        loaded = read_scene(path)
        assert_allclose(loaded.rotations[0], [1.0, 0.0, 0.0, 0.0], atol=1e-7)

    def test_zero_quaternion_is_rejected(self, tmp_path):
        floats = ([0.0, 0.0, 0.0] + [0.0, 0.0, 0.0]
                  + [0.0, 0.0, 0.0, 0.0] + [0.0] + [0.5, 0.5, 0.5])
        path = self.write_bytes(tmp_path, pack_scene(3, 1, floats))
        with pytest.raises(SceneFormatError):
            read_scene(path)

    def test_count_capacity_after_load_allows_growth(self, tmp_path):
        rng = np.random.default_rng(57)
        path = tmp_path / "grow.igsp"
        write_scene(scene2_of(rng, 3), path)
        loaded = read_scene(path)
        assert loaded.capacity >= max(loaded.count, 1)


class TestImageIo:
    def test_pgm_two_pixels(self, tmp_path):
        path = tmp_path / "two.pgm"
        path.write_bytes(b"P5\n2 1\n255\n" + bytes([0, 255]))
        img = read_image(path)
        assert img.shape == (1, 2)
        assert_array_equal(img, [[0.0, 1.0]])

    def test_ppm_color_order(self, tmp_path):
        path = tmp_path / "c.ppm"
        path.write_bytes(b"P6\n1 1\n255\n" + bytes([255, 0, 128]))
        img = read_image(path)
        assert img.shape == (1, 1, 3)
        assert_allclose(img[0, 0], [1.0, 0.0, 128 / 255])

    def test_comments_in_header(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# made by hand\n2 2\n# another\n255\n"
                         + bytes([10, 20, 30, 40]))
        img = read_image(path)
        assert img.shape == (2, 2)
        assert_allclose(img, np.array([[10, 20], [30, 40]]) / 255.0)

    def test_write_then_read_recovers_quantized_values(self, tmp_path):
        rng = np.random.default_rng(58)
        img = rng.random((7, 5, 3))
        path = tmp_path / "r.ppm"
        write_image(path, img)
        loaded = read_image(path)
        # round-trip error bounded by the 8-bit quantization step
        assert np.abs(loaded - img).max() <= 0.5 / 255

    def test_write_read_write_is_byte_stable(self, tmp_path):
        rng = np.random.default_rng(59)
        img = rng.random((6, 6))
        p1, p2 = tmp_path / "a.pgm", tmp_path / "b.pgm"
        write_image(p1, img)
        write_image(p2, read_image(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_values_clamp_on_write(self, tmp_path):
        path = tmp_path / "clamp.pgm"
        write_image(path, np.array([[-1.0, 2.0]]))
        assert_array_equal(read_image(path), [[0.0, 1.0]])

    def test_rejects_wide_maxval(self, tmp_path):
        path = tmp_path / "wide.pgm"
        path.write_bytes(b"P5\n1 1\n65535\n\x00\x00")
        with pytest.raises(FormatError):
            read_image(path)

    def test_rejects_bad_magic(self, tmp_path):
        path = tmp_path / "bad.img"
        path.write_bytes(b"P4\n1 1\n255\n\x00")
        with pytest.raises(FormatError):
            read_image(path)

    def test_rejects_short_raster(self, tmp_path):
        path = tmp_path / "short.pgm"
        path.write_bytes(b"P5\n4 4\n255\n" + bytes(3))
        with pytest.raises(FormatError):
            read_image(path)

    def test_rejects_bad_write_shapes(self, tmp_path):
        with pytest.raises(ValueError):
            write_image(tmp_path / "x.pgm", np.zeros((4, 4, 2)))


class TestTraceAndConfigFiles:
    def test_trace_row_formatting_preserves_floats(self):
        row = (3, 0.125, 9.030899869919434, 64, 0.02, 0.000128)
        text = format_trace_row(row)
        step, loss, psnr_db, count, slr, plr = text.split(",")
        assert (int(step), int(count)) == (3, 64)
        assert float(loss) == 0.125
        assert float(psnr_db) == 9.030899869919434
        assert float(slr) == 0.02 and float(plr) == 0.000128

    def test_write_trace_layout(self, tmp_path):
        path = tmp_path / "trace.csv"
        write_trace(path, [(0, 0.5, 3.0103, 4, 0.02, 1e-4)])
        lines = path.read_text().splitlines()
        assert lines[0] == "iter,loss,psnr,count,scale_lr,pos_lr"
        assert lines[1].startswith("0,0.5,")
        assert len(lines) == 2

    def test_write_events_layout(self, tmp_path):
        path = tmp_path / "events.csv"
        write_events(path, [DensifyEvent(500, 7, 3, 19)])
        assert path.read_text() == ("step,eligible,split,count_after\n"
                                    "500,7,3,19\n")

    def test_parse_config_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("# comment\n"
                        "iters = 200\n"
                        "grad-threshold=0.5  # inline\n"
                        "\n"
                        "policy=edge\n")
        cfg = parse_config_file(path)
        assert cfg == {"iters": "200", "grad_threshold": "0.5",
                       "policy": "edge"}

    def test_parse_config_rejects_bare_words(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("justaword\n")
        with pytest.raises(FormatError):
            parse_config_file(path)


def write_target(tmp_path, size=16):
    """Small PPM target with a bright square on a dark ramp."""
    img = np.zeros((size, size, 3))
    img[:, :, 0] = np.linspace(0.0, 0.4, size)[None, :]
    img[size // 4:size // 2, size // 4:size // 2] = 1.0
    path = tmp_path / "target.ppm"
    write_image(path, img)
    return path


class TestCli:
    def test_no_arguments_is_usage_error(self, capsys):
        assert main([]) == 1
        assert "usage" in capsys.readouterr().err.lower()

    def test_unknown_command_is_usage_error(self, capsys):
        assert main(["frobnicate"]) == 1

    def test_missing_file_is_io_error(self, tmp_path, capsys):
        out = tmp_path / "o.pgm"
        assert main(["edge-map", "--input", str(tmp_path / "absent.ppm"),
                     "--output", str(out)]) == 2
        assert "io error" in capsys.readouterr().err

    def test_bad_value_is_data_error(self, tmp_path, capsys):
        target = write_target(tmp_path)
        out = tmp_path / "o.pgm"
        assert main(["edge-map", "--input", str(target), "--output", str(out),
                     "--sigma", "0"]) == 3

    def test_edge_map_writes_importance_image(self, tmp_path):
        target = write_target(tmp_path)
        out = tmp_path / "edges.pgm"
        assert main(["edge-map", "--input", str(target),
                     "--output", str(out)]) == 0
        edges = read_image(out)
        assert edges.shape == (16, 16)
        assert edges.max() > 0.0

    def test_metrics_identity(self, tmp_path, capsys):
        target = write_target(tmp_path)
        assert main(["metrics", "--a", str(target), "--b", str(target)]) == 0
        assert capsys.readouterr().out.strip() == "psnr=100.000 ssim=1.000"

    def test_metrics_mismatched_shapes(self, tmp_path, capsys):
        a = write_target(tmp_path)
        b = tmp_path / "b.pgm"
        write_image(b, np.zeros((4, 4)))
        assert main(["metrics", "--a", str(a), "--b", str(b)]) == 3

    def test_split_grows_scene(self, tmp_path):
        rng = np.random.default_rng(60)
        src = tmp_path / "in.igsp"
        dst = tmp_path / "out.igsp"
        write_scene(scene2_of(rng, 3), src)
        assert main(["split", "--scene", str(src), "--mask", "0,2",
                     "--out", str(dst)]) == 0
        assert read_scene(dst).count == 5

    def test_split_matches_library_route(self, tmp_path):
        rng = np.random.default_rng(61)
        scene = scene2_of(rng, 4, capacity=16)
        src = tmp_path / "in.igsp"
        dst = tmp_path / "out.igsp"
        write_scene(scene, src)
        assert main(["split", "--scene", str(src), "--mask", "1,3",
                     "--out", str(dst)]) == 0
        mask = np.array([False, True, False, True])
        las_split_batch_2d(scene, mask, SplitConstants())
        loaded = read_scene(dst)
        assert_array_equal(loaded.positions, scene.positions.astype(np.float32))
        assert_array_equal(loaded.log_scales, scene.log_scales.astype(np.float32))

    def test_split_mask_out_of_range(self, tmp_path, capsys):
        rng = np.random.default_rng(62)
        src = tmp_path / "in.igsp"
        write_scene(scene2_of(rng, 3), src)
        assert main(["split", "--scene", str(src), "--mask", "7",
                     "--out", str(tmp_path / "o.igsp")]) == 3
        assert "out of range" in capsys.readouterr().err

    def test_split_budget_exceeded(self, tmp_path, capsys):
        rng = np.random.default_rng(63)
        src = tmp_path / "in.igsp"
        write_scene(scene2_of(rng, 3), src)
        assert main(["split", "--scene", str(src), "--mask", "0,1,2",
                     "--budget", "4", "--out",
                     str(tmp_path / "o.igsp")]) == 3
        err = capsys.readouterr().err
        assert "budget" in err or "capacity" in err

    def test_split_budget_below_count(self, tmp_path, capsys):
        rng = np.random.default_rng(64)
        src = tmp_path / "in.igsp"
        write_scene(scene2_of(rng, 3), src)
        assert main(["split", "--scene", str(src), "--mask", "0",
                     "--budget", "2", "--out",
                     str(tmp_path / "o.igsp")]) == 3

    def test_split_budget_allows_exact_fit(self, tmp_path):
        rng = np.random.default_rng(65)
        src = tmp_path / "in.igsp"
        dst = tmp_path / "o.igsp"
        write_scene(scene2_of(rng, 3), src)
        assert main(["split", "--scene", str(src), "--mask", "0",
                     "--budget", "4", "--out", str(dst)]) == 0
        assert read_scene(dst).count == 4

    def test_corrupt_scene_is_data_error(self, tmp_path, capsys):
        src = tmp_path / "bad.igsp"
        src.write_bytes(b"JUNKJUNKJUNKJUNK")
        assert main(["split", "--scene", str(src), "--mask", "0",
                     "--out", str(tmp_path / "o.igsp")]) == 3


def train2d_args(target, tmp_path, prefix, extra=()):
    return ["train2d", "--target", str(target),
            "--iters", "40", "--n-init", "4", "--budget", "8",
            "--out-scene", str(tmp_path / f"{prefix}.igsp"),
            "--out-render", str(tmp_path / f"{prefix}.ppm"),
            "--trace", str(tmp_path / f"{prefix}.csv"),
            "--events", str(tmp_path / f"{prefix}-events.csv"),
            *extra]


class TestTrain2dCli:
    def test_smoke_writes_all_outputs(self, tmp_path, capsys):
        target = write_target(tmp_path)
        assert main(train2d_args(target, tmp_path, "run")) == 0
        out = capsys.readouterr().out
        assert out.startswith("final: iters=40 count=")
        scene = read_scene(tmp_path / "run.igsp")
        assert 4 <= scene.count <= 8
        render = read_image(tmp_path / "run.ppm")
        assert render.shape == (16, 16, 3)
        trace = (tmp_path / "run.csv").read_text().splitlines()
        assert len(trace) == 41  # header + one row per iteration
        events = (tmp_path / "run-events.csv").read_text().splitlines()
        assert events[0] == "step,eligible,split,count_after"

    def test_paired_runs_are_byte_identical(self, tmp_path, capsys):
        target = write_target(tmp_path)
        assert main(train2d_args(target, tmp_path, "a")) == 0
        assert main(train2d_args(target, tmp_path, "b")) == 0
        capsys.readouterr()
        for ext in (".igsp", ".ppm", ".csv", "-events.csv"):
            assert ((tmp_path / f"a{ext}").read_bytes()
                    == (tmp_path / f"b{ext}").read_bytes()), ext

    def test_no_densify_flag_freezes_count(self, tmp_path, capsys):
        target = write_target(tmp_path)
        assert main(train2d_args(target, tmp_path, "nd",
                                 ["--no-densify"])) == 0
        assert "count=4 " in capsys.readouterr().out
        events = (tmp_path / "nd-events.csv").read_text().splitlines()
        assert len(events) == 1  # header only

    def test_config_file_supplies_defaults_flags_override(self, tmp_path,
                                                          capsys):
        target = write_target(tmp_path)
        cfg = tmp_path / "run.cfg"
        cfg.write_text("iters=15\nn-init=4\nbudget=8\n")
        args = ["train2d", "--target", str(target), "--config", str(cfg),
                "--trace", str(tmp_path / "t.csv")]
        assert main(args) == 0
        assert len((tmp_path / "t.csv").read_text().splitlines()) == 16

        assert main(args + ["--iters", "10"]) == 0
        assert len((tmp_path / "t.csv").read_text().splitlines()) == 11
        capsys.readouterr()

    def test_bad_config_value_is_data_error(self, tmp_path, capsys):
        target = write_target(tmp_path)
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("iters=0\n")
        assert main(["train2d", "--target", str(target),
                     "--config", str(cfg)]) == 3

    def test_bad_flag_value_is_usage_error(self, tmp_path):
        target = write_target(tmp_path)
        assert main(["train2d", "--target", str(target),
                     "--iters", "ten"]) == 1
