"""Scene serialization, netpbm image IO, config parsing, and the CLI.

Scenes persist in a fixed little-endian binary layout: a 15-byte header
(magic "IGSP", u16 version, u8 dims, u64 count) followed by column-wise
float32 blocks in the order positions, log_scales, rotation (quaternion
in 3D, angle in 2D), opacity_logits, colors. The layout is bit-exact by
construction, so round-trips are byte-compare testable. Images use binary
PGM (P5) and PPM (P6) with maxval 255 only. All writes go through a
temp-file rename so readers never observe partial files.
"""

from __future__ import annotations

import argparse
import os
import struct
import sys
import tempfile

import numpy as np

from .core import Scene2, Scene3
from .densify_controller import EVENT_CSV_HEADER
from .edge_pipeline import (gaussian_blur_5x5, median_normalize, nms_thin,
                            sobel_gradients, to_grayscale)
from .las_split import (BudgetError, SplitConstants, las_split_batch,
                        las_split_batch_2d)
from .schedule import ExpSchedule, default_schedules
from .splat2d import (TRACE_CSV_HEADER, TrainConfig, desk_scale_densify_config,
                      psnr, ssim, train)

SCENE_MAGIC = b"IGSP"
SCENE_VERSION = 1
_HEADER = struct.Struct("<4sHBQ")
# floats per record: positions + log_scales + rotation + opacity + color
RECORD_FLOATS = {2: 2 + 2 + 1 + 1 + 3, 3: 3 + 3 + 4 + 1 + 3}


class FormatError(ValueError):
    """Corrupt or unsupported file payload."""


class SceneFormatError(FormatError):
    """Scene file violates the binary layout."""


class BadMagicError(SceneFormatError):
    pass


class UnsupportedVersionError(SceneFormatError):
    pass


class SizeMismatchError(SceneFormatError):
    pass


def _atomic_write_bytes(path, data: bytes):
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _scene_columns(scene):
    if isinstance(scene, Scene3):
        return 3, (scene.positions, scene.log_scales, scene.rotations,
                   scene.opacity_logits, scene.colors)
    if isinstance(scene, Scene2):
        return 2, (scene.positions, scene.log_scales, scene.thetas,
                   scene.opacity_logits, scene.colors)
    raise TypeError(f"expected Scene2 or Scene3, got {type(scene).__name__}")


def scene_bytes(scene) -> bytes:
    """Serialize a scene to its canonical byte string."""
    dims, columns = _scene_columns(scene)
    scene.validate()
    header = _HEADER.pack(SCENE_MAGIC, SCENE_VERSION, dims, scene.count)
    payload = b"".join(
        np.ascontiguousarray(col, dtype="<f4").tobytes() for col in columns)
    return header + payload


def write_scene(scene, path):
    _atomic_write_bytes(path, scene_bytes(scene))


def read_scene(path):
    """Load a Scene2 or Scene3, validating layout and renormalizing quaternions."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != SCENE_MAGIC:
        if len(data) < 4 and SCENE_MAGIC.startswith(data):
            raise SizeMismatchError(f"truncated header: {len(data)} bytes")
        raise BadMagicError(f"bad magic {data[:4]!r}")
    if len(data) < _HEADER.size:
        raise SizeMismatchError(f"truncated header: {len(data)} bytes")
    _, version, dims, count = _HEADER.unpack_from(data)
    if version != SCENE_VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}")
    if dims not in RECORD_FLOATS:
        raise SceneFormatError(f"dims must be 2 or 3, got {dims}")
    expected = _HEADER.size + count * RECORD_FLOATS[dims] * 4
    if len(data) != expected:
        raise SizeMismatchError(
            f"payload size {len(data) - _HEADER.size} does not match "
            f"count {count} (expected {expected - _HEADER.size})")

    def block(offset_floats, shape):
        start = _HEADER.size + offset_floats * count * 4
        width = int(np.prod(shape, dtype=int)) if shape else 1
        flat = np.frombuffer(data, dtype="<f4", count=count * width, offset=start)
        return flat.reshape((count, *shape)).astype(np.float32)

    capacity = max(count, 1)
    if dims == 3:
        quats = block(6, (4,))
        norms = np.linalg.norm(quats.astype(np.float64), axis=1)
        if not np.all(np.isfinite(norms)) or np.any(norms <= 0.0):
            raise SceneFormatError("degenerate quaternion in payload")
        quats = (quats / norms[:, None]).astype(np.float32)
        return Scene3(block(0, (3,)), block(3, (3,)), quats, block(10, ()),
                      block(11, (3,)), capacity=capacity)
    return Scene2(block(0, (2,)), block(2, (2,)), block(4, ()), block(5, ()),
                  block(6, (3,)), capacity=capacity)


def _header_ints(data: bytes, pos: int, n: int):
    """Parse n whitespace-separated decimal tokens, honoring # comments."""
    vals = []
    while len(vals) < n:
        while pos < len(data):
            ch = data[pos:pos + 1]
            if ch == b"#":
                nl = data.find(b"\n", pos)
                pos = len(data) if nl < 0 else nl + 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while (pos < len(data) and not data[pos:pos + 1].isspace()
               and data[pos:pos + 1] != b"#"):
            pos += 1
        token = data[start:pos]
        if not token.isdigit():
            raise FormatError(f"malformed image header near byte {start}")
        vals.append(int(token))
    return vals, pos


def read_image(path) -> np.ndarray:
    """Read binary PGM (P5) to (H, W) or PPM (P6) to (H, W, 3), values in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported image magic {magic!r}")
    channels = 1 if magic == b"P5" else 3
    (width, height, maxval), pos = _header_ints(data, 2, 3)
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval} (only 255)")
    if width < 1 or height < 1:
        raise FormatError(f"bad image dimensions {width}x{height}")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise FormatError("missing raster separator")
    raster = data[pos + 1:]
    if len(raster) != width * height * channels:
        raise FormatError(f"raster size {len(raster)} does not match "
                          f"{width}x{height}x{channels}")
    pixels = np.frombuffer(raster, dtype=np.uint8).astype(np.float64) / 255.0
    shape = (height, width) if channels == 1 else (height, width, 3)
    return pixels.reshape(shape)


def write_image(path, image):
    """Write (H, W) as PGM P5 or (H, W, 3) as PPM P6, maxval 255."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        magic = b"P5"
    elif image.ndim == 3 and image.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"expected (H, W) or (H, W, 3) image, got {image.shape}")
    height, width = image.shape[:2]
    raster = np.clip(np.floor(image * 255.0 + 0.5), 0, 255).astype(np.uint8)
    header = b"%s\n%d %d\n255\n" % (magic, width, height)
    _atomic_write_bytes(path, header + raster.tobytes())


def format_trace_row(row) -> str:
    step, loss, psnr_db, count, scale_lr, pos_lr = row
    return f"{step},{loss!r},{psnr_db!r},{count},{scale_lr!r},{pos_lr!r}"


def write_trace(path, rows):
    lines = [TRACE_CSV_HEADER, *(format_trace_row(r) for r in rows)]
    _atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("ascii"))


def write_events(path, events):
    lines = [EVENT_CSV_HEADER, *(e.as_csv_row() for e in events)]
    _atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("ascii"))


def parse_config_file(path) -> dict:
    """Read plain key=value lines; '#' comments and blank lines are skipped.

    Keys are normalized to use underscores so they match the CLI flag names.
    """
    values = {}
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{lineno}: expected key=value")
            key, _, val = line.partition("=")
            values[key.strip().replace("-", "_")] = val.strip()
    return values


class UsageError(Exception):
    """Bad command line; carries the message to print before exit 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _index_list(text: str):
    try:
        return [int(tok) for tok in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="splitkit",
                     description="Edge-aware Gaussian splitting toolkit")
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="<command>")

    edge = sub.add_parser("edge-map",
                          help="compute an edge-importance map from an image")
    edge.add_argument("--input", required=True, help="source PGM/PPM")
    edge.add_argument("--output", required=True, help="destination PGM")
    edge.add_argument("--sigma", type=float, default=1.0,
                      help="blur kernel sigma (default 1.0)")
    edge.add_argument("--no-nms", action="store_true",
                      help="skip thinning, emit raw gradient magnitude")
    edge.add_argument("--no-median", action="store_true",
                      help="skip median normalization")
    edge.set_defaults(func=_cmd_edge_map)

    split = sub.add_parser("split", help="long-axis split selected primitives")
    split.add_argument("--scene", required=True, help="input scene file")
    split.add_argument("--mask", required=True, type=_index_list,
                       help="comma-separated primitive indices to split")
    split.add_argument("--alpha", type=float, default=SplitConstants.alpha,
                       help="displacement and long-axis shrink factor")
    split.add_argument("--gamma", type=float, default=SplitConstants.gamma_axis,
                       help="secondary-axis shrink factor")
    split.add_argument("--beta", type=float, default=SplitConstants.beta,
                       help="opacity shrink factor")
    split.add_argument("--budget", type=int,
                       help="hard cap on primitives after the split "
                           "(default: grow as needed)")
    split.add_argument("--out", required=True, help="output scene file")
    split.set_defaults(func=_cmd_split)

    tr = sub.add_parser("train2d", help="fit 2D splats to a target image")
    tr.add_argument("--target", required=True, help="target PPM image")
    tr.add_argument("--config", help="key=value defaults file (flags override)")
    tr.add_argument("--iters", type=int)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--budget", type=int)
    tr.add_argument("--n-init", type=int)
    tr.add_argument("--no-densify", action="store_true")
    tr.add_argument("--policy", choices=("product", "edge", "grad"))
    tr.add_argument("--densify-interval", type=int)
    tr.add_argument("--densify-from", type=int)
    tr.add_argument("--densify-until", type=int)
    tr.add_argument("--warmup-steps", type=int)
    tr.add_argument("--scale-lr", type=float)
    tr.add_argument("--scale-lr-final", type=float)
    tr.add_argument("--pos-lr", type=float)
    tr.add_argument("--pos-lr-final", type=float)
    tr.add_argument("--grad-threshold", type=float)
    tr.add_argument("--out-scene", help="write the fitted scene here")
    tr.add_argument("--out-render", help="write the final render as PPM")
    tr.add_argument("--trace", help="write the per-iteration trace CSV here")
    tr.add_argument("--events", help="write the densify event CSV here")
    tr.set_defaults(func=_cmd_train2d)

    met = sub.add_parser("metrics", help="PSNR and SSIM between two images")
    met.add_argument("--a", required=True, help="first image")
    met.add_argument("--b", required=True, help="second image")
    met.set_defaults(func=_cmd_metrics)
    return parser


def _cmd_edge_map(args) -> int:
    image = read_image(args.input)
    gray = to_grayscale(image) if image.ndim == 3 else image
    grad = sobel_gradients(gaussian_blur_5x5(gray, args.sigma))
    scores = grad.magnitude if args.no_nms else nms_thin(grad)
    if not args.no_median:
        scores = median_normalize(scores)
    write_image(args.output, np.clip(scores, 0.0, 1.0))
    return 0


def _cmd_split(args) -> int:
    scene = read_scene(args.scene)
    mask = np.zeros(scene.count, dtype=bool)
    for idx in args.mask:
        if not 0 <= idx < scene.count:
            raise ValueError(f"mask index {idx} out of range for "
                             f"{scene.count} primitives")
        mask[idx] = True
    constants = SplitConstants(alpha=args.alpha, gamma_axis=args.gamma,
                               beta=args.beta)
    if args.budget is not None:
        if args.budget < scene.count:
            raise BudgetError(
                f"budget {args.budget} is below the current count {scene.count}")
        scene.capacity = args.budget
    else:
        # splitting grows the scene; lift capacity to the worst case first
        scene.capacity = max(scene.capacity, scene.count + int(mask.sum()))
    if isinstance(scene, Scene2):
        las_split_batch_2d(scene, mask, constants)
    else:
        las_split_batch(scene, mask, constants)
    write_scene(scene, args.out)
    return 0


def _resolve(args, file_cfg: dict, key: str, cast, default):
    flag = getattr(args, key)
    if flag is not None:
        return flag
    if key in file_cfg:
        return cast(file_cfg[key])
    return default


def _cmd_train2d(args) -> int:
    target = read_image(args.target)
    if target.ndim == 2:
        target = np.stack([target] * 3, axis=-1)
    file_cfg = parse_config_file(args.config) if args.config else {}

    iters = _resolve(args, file_cfg, "iters", int, 3000)
    budget = _resolve(args, file_cfg, "budget", int, 256)
    base = desk_scale_densify_config(iters, budget)
    densify = desk_scale_densify_config(
        iters, budget,
        interval=_resolve(args, file_cfg, "densify_interval", int,
                          base.interval),
        window_start=_resolve(args, file_cfg, "densify_from", int,
                              base.window_start),
        window_end=_resolve(args, file_cfg, "densify_until", int,
                            base.window_end),
        warmup_steps=_resolve(args, file_cfg, "warmup_steps", int,
                              base.warmup_steps),
        grad_threshold=_resolve(args, file_cfg, "grad_threshold", float,
                                base.grad_threshold),
        policy=args.policy or file_cfg.get("policy", base.policy),
    )

    scale_default, pos_default = default_schedules(iters)
    scale_sched = ExpSchedule.from_endpoints(
        _resolve(args, file_cfg, "scale_lr", float, scale_default.lr_init),
        _resolve(args, file_cfg, "scale_lr_final", float, scale_default.lr_final),
        0, iters)
    pos_sched = ExpSchedule.from_endpoints(
        _resolve(args, file_cfg, "pos_lr", float, pos_default.lr_init),
        _resolve(args, file_cfg, "pos_lr_final", float, pos_default.lr_final),
        0, iters)

    cfg = TrainConfig(
        total_iters=iters,
        seed=_resolve(args, file_cfg, "seed", int, 0),
        n_init=_resolve(args, file_cfg, "n_init", int, 64),
        budget=budget,
        densify_enabled=not args.no_densify,
        densify=densify,
        scale_schedule=scale_sched,
        pos_schedule=pos_sched,
    )
    result = train(target, cfg)
    if args.out_scene:
        write_scene(result.scene, args.out_scene)
    if args.out_render:
        write_image(args.out_render, result.final_image)
    if args.trace:
        write_trace(args.trace, result.trace)
    if args.events:
        write_events(args.events, result.events)
    print(f"final: iters={iters} count={result.scene.count} "
          f"psnr={result.final_psnr:.3f}")
    return 0


def _cmd_metrics(args) -> int:
    image_a = read_image(args.a)
    image_b = read_image(args.b)
    print(f"psnr={psnr(image_a, image_b):.3f} ssim={ssim(image_a, image_b):.3f}")
    return 0


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except OSError as exc:
        print(f"splitkit: io error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, BudgetError, ValueError) as exc:
        print(f"splitkit: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
