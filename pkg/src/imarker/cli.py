"""Command-line frontend.

Global flags (``--config``, ``--seed``, ``--verbose``, ``--dry-run``) are
accepted before or after the subcommand. A config file holds flat
``key = value`` lines whose keys are the long option names (dashes or
underscores); explicit command-line flags win over the file.

Exit codes: 0 success, 1 usage, 2 data, 3 algorithm failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_ALGO = 0, 1, 2, 3

log = logging.getLogger("imarker")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class AlgorithmError(Exception):
    pass


# ------------------------------------------------------------------ config

def read_config(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out: dict[str, str] = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (p.strip() for p in body.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _floats(n: int):
    def conv(text: str) -> tuple[float, ...]:
        vals = tuple(float(v) for v in text.replace(",", " ").split())
        if len(vals) != n:
            raise ValueError(f"expected {n} numbers, got {len(vals)}")
        return vals
    conv.__name__ = f"{n} numbers"
    return conv


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(v for v in text.replace(",", " ").split())


def _flag(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


class _Opts:
    """Option table shared by argparse and the config-file resolver."""

    def __init__(self, parser: argparse.ArgumentParser):
        self.parser = parser
        self.specs: dict[str, tuple] = {}

    def add(self, name: str, conv, default, help: str, **kw):
        dest = name.lstrip("-").replace("-", "_")
        self.specs[dest] = (conv, default)
        if conv is bool:
            self.parser.add_argument(name, dest=dest, action="store_const", const=True, default=None,
                                     help=help)
        else:
            self.parser.add_argument(name, dest=dest, type=conv, default=None, help=help, **kw)


def _global_flags(p: argparse.ArgumentParser, top: bool) -> None:
    d = None if top else argparse.SUPPRESS
    p.add_argument("--config", default=d, help="flat key = value file; flags override it")
    p.add_argument("--seed", type=int, default=d, help="seed for every random draw")
    p.add_argument("--verbose", "-v", action="count", default=d, help="more logging")
    p.add_argument("--dry-run", action="store_true", default=d,
                   help="print the resolved configuration and exit")


def _param_options(o: _Opts) -> None:
    from .pipelines import PipelineParams

    base = PipelineParams()
    cr, gr = base.color_range, base.gray_range
    o.add("--theta", int, base.theta, "subtraction threshold (0-255)")
    o.add("--erode-radius", int, base.erode_radius, "erosion radius in pixels")
    o.add("--erode-iters", int, base.erode_iters, "erosion iterations")
    o.add("--blur-sigma", float, base.blur_sigma, "post-processing blur sigma")
    o.add("--rethreshold", int, base.rethreshold, "binarization level after blurring")
    o.add("--color-range", _floats(6), (cr.h_low, cr.h_high, cr.s_low, cr.s_high, cr.v_low, cr.v_high),
          "h_low h_high s_low s_high v_low v_high (mask)")
    o.add("--gray-range", _floats(2), (float(gr.low), float(gr.high)), "low high (range)")
    o.add("--invert", bool, False, "also look for dark-ink markers")
    o.add("--no-refine", bool, False, "skip gray-level corner refinement")
    o.add("--min-side", float, 10.0, "smallest marker side in pixels")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, _Opts]]:
    parser = argparse.ArgumentParser(prog="imarker", description="Polarization-revealed marker toolkit.")
    parser.add_argument("--version", action="version", version=f"imarker {__version__}")
    _global_flags(parser, top=True)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    tables: dict[str, _Opts] = {}

    def command(name: str, help: str) -> tuple[argparse.ArgumentParser, _Opts]:
        p = sub.add_parser(name, help=help, description=help)
        _global_flags(p, top=False)
        o = _Opts(p)
        tables[name] = o
        return p, o

    p, o = command("detect", "run a detection pipeline over a dataset and emit JSON lines")
    o.add("--pipeline", str, None, "dual | temporal | mask | range", choices=("dual", "temporal", "mask", "range"))
    o.add("--dataset", str, None, "dataset directory")
    o.add("--calibration", str, None, "homography file (required for dual)")
    o.add("--intrinsics", str, None, "intrinsics file; enables pose output")
    o.add("--marker-size", float, 0.07, "marker side in metres")
    o.add("--dictionary", str, None, "dictionary file (default: bundled 4x4_50)")
    o.add("--output", str, None, "output file (default stdout)")
    o.add("--fps", float, 30.0, "nominal frame rate for datasets without timestamps")
    o.add("--limit", int, None, "stop after this many outputs")
    o.add("--no-timing", bool, False, "emit stage_ms as null so output is reproducible")
    _param_options(o)

    p, o = command("simulate", "render a dataset and ground truth from a scene file")
    p.add_argument("scene", nargs="?", help="scene file (default: bundled example)")
    o.add("--output", str, None, "output directory")
    o.add("--frames", int, None, "override the scene's frame count")
    o.add("--mode", str, None, "override the scene's mode", choices=("dual", "temporal", "camouflage", "uv"))

    p, o = command("calibrate-align", "estimate the camera-2 to camera-1 homography")
    p.add_argument("cam1", nargs="?", help="reference frame (camera 1)")
    p.add_argument("cam2", nargs="?", help="moving frame (camera 2)")
    o.add("--output", str, None, "homography file to write")
    o.add("--min-inliers", int, 8, "RANSAC consensus needed (at least 4)")
    o.add("--inlier-tol", float, 2.0, "RANSAC inlier tolerance in pixels")

    bench = sub.add_parser("bench", help="desk-scale evaluations", description="desk-scale evaluations")
    _global_flags(bench, top=False)
    bsub = bench.add_subparsers(dest="bench_command", metavar="SUBCOMMAND")

    def bcommand(name: str, help: str) -> tuple[argparse.ArgumentParser, _Opts]:
        p = bsub.add_parser(name, help=help, description=help)
        _global_flags(p, top=False)
        o = _Opts(p)
        tables["bench " + name] = o
        return p, o

    p, o = bcommand("profile", "five-stage timing profile")
    o.add("--pipeline", _str_list, ("range", "mask", "temporal", "dual"), "pipelines to profile")
    o.add("--dataset", str, None, "dataset directory (single pipeline); default renders one")
    o.add("--workdir", str, None, "where rendered profile datasets go (default: next to output)")
    o.add("--calibration", str, None, "homography file for a dual dataset")
    o.add("--frames", int, 40, "frames averaged")
    o.add("--output", str, "timing.csv", "CSV to write")
    _param_options(o)

    p, o = bcommand("range", "maximum detection distance versus viewing angle")
    o.add("--pipeline", _str_list, ("range", "mask", "temporal", "dual"), "pipelines to sweep")
    o.add("--marker-size", _float_list, (0.07, 0.06), "marker sides in metres")
    o.add("--angles", _float_list, None, "viewing angles in degrees")
    o.add("--distances", _float_list, None, "ascending distances in metres")
    o.add("--trials", int, 20, "trials per cell")
    o.add("--noise-sigma", float, 3.0, "gaussian pixel noise")
    o.add("--output", str, "range_sweep.csv", "CSV to write")
    _param_options(o)

    p, o = bcommand("pose", "pose error versus viewing angle")
    o.add("--pipeline", _str_list, ("range", "mask", "temporal", "dual"), "pipelines to sweep")
    o.add("--angles", _float_list, None, "viewing angles in degrees")
    o.add("--distance", float, 0.5, "marker distance in metres")
    o.add("--trials", int, 20, "trials per angle")
    o.add("--noise-sigma", float, 3.0, "gaussian pixel noise (0 for a noise-free sweep)")
    o.add("--output", str, "pose_sweep.csv", "CSV to write")
    _param_options(o)

    p, o = bcommand("compare", "Markdown report from cached sweep CSVs")
    o.add("--range-csv", str, "range_sweep.csv", "range sweep CSV")
    o.add("--pose-csv", str, "pose_sweep.csv", "pose sweep CSV")
    o.add("--timing-csv", str, "timing.csv", "timing CSV")
    o.add("--clutter-csv", str, "clutter.csv", "clutter scenario CSV (computed when missing)")
    o.add("--clutter-trials", int, 10, "trials for the clutter scenario")
    o.add("--gap-threshold", float, 0.10, "allowed static/dynamic range gap")
    o.add("--output", str, "report.md", "report to write")

    d = sub.add_parser("dict", help="marker dictionaries", description="marker dictionaries")
    _global_flags(d, top=False)
    dsub = d.add_subparsers(dest="dict_command", metavar="SUBCOMMAND")
    p = dsub.add_parser("generate", help="generate a dictionary", description="generate a dictionary")
    _global_flags(p, top=False)
    o = _Opts(p)
    tables["dict generate"] = o
    o.add("--count", int, 50, "number of markers")
    o.add("--grid", int, 4, "inner grid size")
    o.add("--min-hamming", int, 4, "minimum rotation-aware distance")
    o.add("--output", str, None, "file to write (default stdout)")
    p = dsub.add_parser("verify", help="check a dictionary's distance invariant",
                        description="check a dictionary's distance invariant")
    _global_flags(p, top=False)
    p.add_argument("path", nargs="?", help="dictionary file (default: bundled)")
    tables["dict verify"] = _Opts(p)
    return parser, tables


def resolve(args: argparse.Namespace, table: _Opts | None) -> dict:
    """Defaults, then config file, then explicit flags."""
    cfg = read_config(args.config) if getattr(args, "config", None) else {}
    out: dict = {}
    specs = table.specs if table else {}
    for key in cfg:
        if key not in specs and key not in ("seed", "verbose", "scene", "cam1", "cam2", "path"):
            raise UsageError(f"config key {key!r} is not an option of this command")
    for dest, (conv, default) in specs.items():
        val = getattr(args, dest, None)
        if val is None and dest in cfg:
            try:
                val = (_flag if conv is bool else conv)(cfg[dest])
            except ValueError as exc:
                raise UsageError(f"config key {dest!r}: {exc}") from None
        out[dest] = default if val is None else val
    for dest in ("scene", "cam1", "cam2", "path"):
        if hasattr(args, dest):
            out[dest] = getattr(args, dest) or cfg.get(dest)
    seed = getattr(args, "seed", None)
    if seed is None and "seed" in cfg:
        try:
            seed = int(cfg["seed"])
        except ValueError:
            raise UsageError("config key 'seed' must be an integer") from None
    out["seed"] = seed
    return out


def _params(c: dict):
    from .imgcore import ColorRangeHSV, GrayRange
    from .pipelines import PipelineParams

    kw = dict(theta=c["theta"], erode_radius=c["erode_radius"], erode_iters=c["erode_iters"],
              blur_sigma=c["blur_sigma"], rethreshold=c["rethreshold"], invert=c["invert"],
              min_side=c["min_side"], refine=not c["no_refine"])
    if c.get("color_range") is not None:
        kw["color_range"] = ColorRangeHSV(*c["color_range"])
    if c.get("gray_range") is not None:
        lo, hi = c["gray_range"]
        kw["gray_range"] = GrayRange(int(lo), int(hi))
    try:
        return PipelineParams(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _jsonable(c: dict) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(c.items())}


# ---------------------------------------------------------------- commands

def cmd_detect(c: dict, out) -> int:
    from .align import Homography
    from .marker import Dictionary, default_dictionary
    from .pipelines import DatasetError, run_dataset
    from .pose import CameraIntrinsics, MarkerGeometry

    if not c["pipeline"]:
        raise UsageError("detect needs --pipeline")
    if not c["dataset"]:
        raise UsageError("detect needs --dataset")
    if c["pipeline"] == "dual" and not c["calibration"]:
        raise UsageError("the dual pipeline needs --calibration (see calibrate-align)")
    params = _params(c)
    root = Path(c["dataset"])
    if not root.is_dir():
        raise DataError(f"{root}: no such dataset directory")
    try:
        h = Homography.load(c["calibration"]) if c["calibration"] else None
        d = Dictionary.load(c["dictionary"]) if c["dictionary"] else default_dictionary()
        K = CameraIntrinsics.load(c["intrinsics"]) if c["intrinsics"] else None
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from None
    geometry = MarkerGeometry(c["marker_size"]) if K is not None else None
    sink = open(c["output"], "w") if c["output"] else out
    n = 0
    try:
        for res in run_dataset(c["pipeline"], root, params, d, homography=h, intrinsics=K,
                               geometry=geometry, fps=c["fps"], limit=c["limit"]):
            if c["no_timing"]:
                res.stage_ms = None
            for line in res.to_json_lines():
                sink.write(line + "\n")
                n += 1
    except DatasetError as exc:
        raise DataError(str(exc)) from None
    finally:
        if sink is not out:
            sink.close()
    log.info("%d detections", n)
    return EXIT_OK


def cmd_simulate(c: dict, out) -> int:
    from . import simulator as sim

    scene = c["scene"] or str(sim.example_scene_path())
    if not c["output"]:
        raise UsageError("simulate needs --output DIR")
    overrides = {}
    if c["seed"] is not None:
        overrides["seed"] = str(c["seed"])
    if c["frames"] is not None:
        overrides["frames"] = str(c["frames"])
    if c["mode"] is not None:
        overrides["mode"] = c["mode"]
    try:
        spec = sim.load_scene(scene, overrides)
    except OSError as exc:
        raise DataError(f"cannot read scene {scene}: {exc}") from None
    except sim.SceneError as exc:
        raise DataError(f"{scene}: {exc}") from None
    path = sim.write_dataset(spec, c["output"])
    print(f"wrote {spec.mode} dataset with {spec.frames} frames to {path}", file=out)
    return EXIT_OK


def cmd_calibrate(c: dict, out) -> int:
    from .align import CalibrationError, DegenerateConfigurationError, calibrate_alignment
    from .imgcore import FrameFormatError, read_frame, to_grayscale

    if not c["cam1"] or not c["cam2"] or not c["output"]:
        raise UsageError("calibrate-align needs CAM1 CAM2 --output FILE")
    if c["min_inliers"] < 4:
        raise UsageError("--min-inliers must be at least 4")
    try:
        f1, f2 = read_frame(c["cam1"]), read_frame(c["cam2"])
    except (OSError, ValueError, FrameFormatError) as exc:
        raise DataError(str(exc)) from None
    f1 = to_grayscale(f1) if f1.data.ndim == 3 else f1
    f2 = to_grayscale(f2) if f2.data.ndim == 3 else f2
    if f1.shape != f2.shape:
        raise DataError(f"frame sizes differ: {f1.shape} vs {f2.shape}")
    try:
        h = calibrate_alignment(f1, f2, inlier_tol=c["inlier_tol"], seed=c["seed"] or 0,
                                min_inliers=c["min_inliers"])
    except (CalibrationError, DegenerateConfigurationError) as exc:
        raise AlgorithmError(f"calibration failed: {exc}") from None
    h.save(c["output"])
    print(f"inliers {h.inlier_count}, inlier rms {h.inlier_rms:.4f} px; saved {c['output']}", file=out)
    return EXIT_OK


def _sweep_template(c: dict, marker_size: float = 0.07):
    from . import bench, simulator as sim

    return bench.sweep_scene(marker_size, sim.NoiseModel(gaussian_sigma=c["noise_sigma"]))


def _check_pipelines(names) -> list[str]:
    from .pipelines import PIPELINES

    bad = [p for p in names if p not in PIPELINES]
    if bad:
        raise UsageError(f"unknown pipeline(s): {', '.join(bad)}")
    return list(names)


def cmd_bench_profile(c: dict, out) -> int:
    from . import bench
    from .align import CalibrationError, Homography
    from .pipelines import DatasetError

    names = _check_pipelines(c["pipeline"])
    params = _params(c)
    if c["dataset"]:
        if len(names) != 1:
            raise UsageError("--dataset profiles exactly one --pipeline")
        datasets = {names[0]: Path(c["dataset"])}
    else:
        work = Path(c["workdir"] or Path(c["output"]).resolve().parent / "profile_data")
        datasets = bench.make_profile_datasets(work, c["frames"], bench.WARMUP_FRAMES, pipelines=tuple(names))
    h = None
    if c["calibration"]:
        try:
            h = Homography.load(c["calibration"])
        except (OSError, ValueError) as exc:
            raise DataError(str(exc)) from None
    timings = []
    for p in names:
        try:
            t = bench.profile(p, datasets[p], c["frames"], params=params, homography=h if p == "dual" else None)
        except (DatasetError, ValueError) as exc:
            raise DataError(str(exc)) from None
        except CalibrationError as exc:
            raise AlgorithmError(str(exc)) from None
        timings.append(t)
        log.info("%s: %.2f ms", p, t.sum)
    bench.write_timing_csv(c["output"], timings)
    for t in timings:
        print(f"{t.pipeline:9s} " + " ".join(f"{s}={getattr(t, s):.2f}" for s in bench.STAGES)
              + f" total={t.sum:.2f} ms", file=out)
    return EXIT_OK


def cmd_bench_range(c: dict, out) -> int:
    from . import bench

    names = _check_pipelines(c["pipeline"])
    params = _params(c)
    angles = c["angles"] or bench.DEFAULT_ANGLES
    distances = c["distances"] or bench.DEFAULT_DISTANCES
    if list(distances) != sorted(distances):
        raise UsageError("--distances must be ascending")
    runs = []
    for size in c["marker_size"]:
        for p in names:
            res = bench.sweep_detection_range(angles, distances, p, _sweep_template(c, size), c["trials"],
                                              seed=c["seed"] or 0, params=params)
            runs.append((p, size, res))
            log.info("%s %.0f cm: %s", p, size * 100, [r.max_distance for r in res])
    bench.write_range_csv(c["output"], runs)
    print(f"wrote {c['output']}", file=out)
    return EXIT_OK


def cmd_bench_pose(c: dict, out) -> int:
    from . import bench

    names = _check_pipelines(c["pipeline"])
    params = _params(c)
    angles = c["angles"] or bench.DEFAULT_ANGLES
    rows_all = []
    for p in names:
        res, rows = bench.sweep_pose_error(angles, p, _sweep_template(c), c["trials"], distance=c["distance"],
                                           seed=c["seed"] or 0, params=params)
        rows_all.append((p, rows))
        log.info("%s: %s", p, [r.pose_mean_error for r in res])
    bench.write_pose_csv(c["output"], rows_all)
    print(f"wrote {c['output']}", file=out)
    return EXIT_OK


def cmd_bench_compare(c: dict, out) -> int:
    from . import bench

    if not Path(c["range_csv"]).is_file():
        raise DataError(f"{c['range_csv']}: run 'bench range' first")
    clutter = Path(c["clutter_csv"])
    if not clutter.is_file():
        rates = bench.clutter_scenario(c["clutter_trials"], seed=c["seed"] or 0)
        bench.write_clutter_csv(clutter, rates, c["clutter_trials"])
    try:
        report = bench.compare_pipelines(c["range_csv"], c["pose_csv"], clutter, c["timing_csv"],
                                         c["gap_threshold"])
    except (ValueError, KeyError) as exc:
        raise DataError(f"malformed sweep CSV: {exc}") from None
    Path(c["output"]).write_text(report)
    print(f"wrote {c['output']}", file=out)
    return EXIT_OK


def cmd_dict_generate(c: dict, out) -> int:
    from .marker import DictionaryExhaustedError, generate_dictionary

    try:
        d = generate_dictionary(c["count"], c["grid"], c["min_hamming"], seed=c["seed"] or 0)
    except DictionaryExhaustedError as exc:
        raise AlgorithmError(str(exc)) from None
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if c["output"]:
        d.save(c["output"])
    else:
        out.write(d.to_text())
    return EXIT_OK


def cmd_dict_verify(c: dict, out) -> int:
    from .marker import Dictionary, DictionaryInvariantError, default_dictionary

    try:
        d = Dictionary.load(c["path"]) if c["path"] else default_dictionary()
    except DictionaryInvariantError as exc:
        raise AlgorithmError(f"invalid dictionary: {exc}") from None
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read dictionary: {exc}") from None
    observed = d.verify()
    print(f"{len(d)} markers, grid {d.grid_n}x{d.grid_n}, declared min distance {d.min_hamming}, "
          f"observed {observed}: ok", file=out)
    return EXIT_OK


COMMANDS = {
    "detect": cmd_detect,
    "simulate": cmd_simulate,
    "calibrate-align": cmd_calibrate,
    "bench profile": cmd_bench_profile,
    "bench range": cmd_bench_range,
    "bench pose": cmd_bench_pose,
    "bench compare": cmd_bench_compare,
    "dict generate": cmd_dict_generate,
    "dict verify": cmd_dict_verify,
}


def main(argv: list[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    parser, tables = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: --help exits 0, bad usage exits 2
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    name = args.command
    if name == "bench":
        name = f"bench {args.bench_command}" if args.bench_command else None
    elif name == "dict":
        name = f"dict {args.dict_command}" if args.dict_command else None
    if not name:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    level = logging.WARNING - 10 * min(2, getattr(args, "verbose", None) or 0)
    logging.basicConfig(level=level, format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = resolve(args, tables.get(name))
        if getattr(args, "dry_run", False):
            out.write(json.dumps({"command": name, **_jsonable(cfg)}, indent=2) + "\n")
            return EXIT_OK
        return COMMANDS[name](cfg, out)
    except UsageError as exc:
        print(f"imarker: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"imarker: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except AlgorithmError as exc:
        print(f"imarker: {exc}", file=sys.stderr)
        return EXIT_ALGO


if __name__ == "__main__":
    sys.exit(main())
