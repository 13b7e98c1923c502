"""Command-line interface.

Exit codes: 0 success, 2 registration/tracking failure, 1 usage or
configuration errors.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from dataclasses import fields

from .cloud import RigidTransform
from .coarse import CoarseConfig
from .correction import (
    RegionSpec,
    apply_region_correction,
    fit_region_correction,
    pair_ground_truth,
)
from .errors import ConfigError, RegkitError
from .icp import IcpConfig
from .io import load_point_cloud, load_reference_points, save_point_cloud_ply
from .pipeline import register_clouds
from .tracking import (
    read_frame_stream,
    replay_sequence,
    tracker_init,
    write_pose_stream,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _coerce(value: str, target_type):
    if target_type is bool:
        return value.strip().lower() in ("1", "true", "yes", "on")
    return target_type(value)


def _config_from_section(section, config_cls):
    """Build a config dataclass from an INI section, keeping defaults."""
    kwargs = {}
    by_name = {f.name: f for f in fields(config_cls)}
    for key, raw in section.items():
        if key not in by_name:
            raise ConfigError(f"unknown option {key!r} for {config_cls.__name__}")
        f = by_name[key]
        if raw.strip().lower() == "none":
            kwargs[key] = None
        elif f.type in ("float | None", "bool | None"):
            base = float if "float" in f.type else bool
            kwargs[key] = _coerce(raw, base)
        elif f.type == "bool":
            kwargs[key] = _coerce(raw, bool)
        elif f.type == "int":
            kwargs[key] = int(raw)
        elif f.type == "str":
            kwargs[key] = raw
        else:
            kwargs[key] = float(raw)
    return config_cls(**kwargs)


def _load_configs(path):
    coarse_cfg, icp_cfg = None, None
    if path:
        parser = configparser.ConfigParser()
        if not parser.read(path):
            raise ConfigError(f"{path}: not found or unreadable")
        if parser.has_section("coarse"):
            coarse_cfg = _config_from_section(parser["coarse"], CoarseConfig)
        if parser.has_section("icp"):
            icp_cfg = _config_from_section(parser["icp"], IcpConfig)
    return coarse_cfg, icp_cfg


def _cmd_register(args) -> int:
    source = load_point_cloud(args.source)
    target = load_point_cloud(args.target)
    coarse_cfg, icp_cfg = _load_configs(args.config)
    report = register_clouds(source, target, coarse_cfg, icp_cfg, seed=args.seed)
    with open(args.out, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    print(
        f"registration {'succeeded' if report.success else 'FAILED'}: "
        f"inlier rmse {report.refine.inlier_rmse_mm:.3f} mm, "
        f"pose written to {args.out}"
    )
    return 0 if report.success else 2


def _cmd_correct(args) -> int:
    scene = load_point_cloud(args.scene)
    ground_truth = load_reference_points(args.gt)
    try:
        cx, cy, cz, radius = (float(v) for v in args.region.split(","))
    except ValueError:
        print("error: --region expects cx,cy,cz,r", file=sys.stderr)
        return 1
    region = RegionSpec((cx, cy, cz), radius)
    pairs = pair_ground_truth(ground_truth, scene, region)
    model = fit_region_correction(pairs, region)
    corrected = apply_region_correction(scene, model)
    save_point_cloud_ply(corrected, args.out)
    with open(args.model, "w") as fh:
        fh.write(model.to_json())
    print(
        f"corrected {corrected.meta['corrected_points']} points, "
        f"fit residual {model.residual_rms_mm:.3f} mm rms over {model.pair_count} pairs"
    )
    return 0


def _cmd_track(args) -> int:
    model = load_point_cloud(args.model)
    with open(args.init) as fh:
        init_pose = RigidTransform.from_dict(json.load(fh))
    state = tracker_init(model, registration_pose=init_pose, latency_ms=args.latency_ms)
    poses, report = replay_sequence(state, read_frame_stream(args.frames))
    write_pose_stream(poses, args.out)
    print(
        f"tracked {report['tracked_frames']}/{report['frames']} frames, "
        f"median {report['median_compute_ms']:.1f} ms/frame"
    )
    return 0 if report["tracked_frames"] > 0 else 2


def _cmd_benchmark(args) -> int:
    from .benchmark import run_suite

    summary = run_suite(args.config, args.out_dir)
    for label, table in summary["tables"].items():
        print(f"[{label}] lambda={table['lambda']}")
        for row in table["rows"]:
            print(
                f"  {row['method']:<16} rmse {row['median_rmse_mm']:.3f} mm  "
                f"runtime {row['median_runtime_ms']:.1f} ms  score {row['score']:.1f}"
            )
    return 0


def main(argv=None) -> int:
    parser = _Parser(prog="regkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("register", help="align a source cloud onto a target cloud")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True, help="pose JSON output path")
    p.add_argument("--config", default=None, help="INI file with [coarse]/[icp] sections")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_register)

    p = sub.add_parser("correct", help="fit and apply a region-specific correction")
    p.add_argument("--scene", required=True)
    p.add_argument("--gt", required=True, help="ground-truth points (CSV or PLY)")
    p.add_argument("--region", required=True, help="cx,cy,cz,r in mm")
    p.add_argument("--out", required=True, help="corrected PLY output")
    p.add_argument("--model", required=True, help="correction model JSON output")
    p.set_defaults(func=_cmd_correct)

    p = sub.add_parser("track", help="replay a frame stream against a model")
    p.add_argument("--model", required=True)
    p.add_argument("--frames", required=True, help="directory with frames.index")
    p.add_argument("--init", required=True, help="registration pose JSON")
    p.add_argument("--out", required=True, help="poses JSONL output")
    p.add_argument("--latency-ms", type=float, default=0.0)
    p.set_defaults(func=_cmd_track)

    p = sub.add_parser("benchmark", help="run the synthetic benchmark suite")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_benchmark)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except RegkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
