"""Command-line surface: scene generation, pose pipeline, evaluation,
codec round-trips, and the wall-building simulation.

Every subcommand is deterministic given --seed; rerunning writes
byte-identical structured output.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import fileio
from .cloud import PointCloud, RansacParams, read_ply, write_ply
from .codec import EncodingConfig, decode, encode_mask, read_tensor, write_tensor
from .geom import rotated_nms
from .metrics import evaluate
from .pipeline import PipelineConfig, StageError, estimate_brick_pose
from .pose import BrickDims, NoiseModel, PlacementCriteria, simulate_wall
from .synth import CameraModel, random_clutter_spec, render_scene


def _parse_dims(text: str) -> BrickDims:
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("dims must be L,W,H in meters")
    return BrickDims(*parts)


def _parse_vec3(text: str) -> np.ndarray:
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected x,y,z")
    return np.array(parts)


def cmd_synth(args) -> int:
    os.makedirs(args.out_dir, exist_ok=True)
    scenes = []
    for i in range(args.n_scenes):
        spec = random_clutter_spec(
            seed=np.random.SeedSequence((args.seed, i, 0)),
            n_bricks=args.bricks,
            dims=args.dims,
            noise_sigma=args.sigma,
        )
        render = render_scene(spec, seed=np.random.SeedSequence((args.seed, i, 1)))
        name = f"scene_{i:04d}"
        files = fileio.write_scene_bundle(os.path.join(args.out_dir, name), render, spec, args.seed)
        scenes.append({"dir": name, "files": sorted(files), "n_visible": len(render.boxes)})
    manifest = {"seed": args.seed, "n_scenes": args.n_scenes, "scenes": scenes}
    fileio.dump_json(manifest, os.path.join(args.out_dir, "manifest.json"))
    print(f"wrote {args.n_scenes} scene bundle(s) under {args.out_dir}")
    return 0


def cmd_pose(args) -> int:
    cloud = read_ply(args.cloud)
    boxes = fileio.read_boxes(args.box)
    if not boxes:
        raise fileio.FormatError(f"{args.box}: no boxes")
    box = boxes[args.box_index]
    config = PipelineConfig(
        plane=RansacParams(args.ransac_iters, args.ransac_thresh, seed=args.seed),
        line=RansacParams(args.ransac_iters, args.ransac_thresh, min_inliers=10, seed=args.seed),
        face_tol=args.face_tol,
    )
    result = estimate_brick_pose(cloud, box, args.dims, config)
    doc = result.pose.to_dict(result.face)
    doc["edge_lengths"] = sorted(result.edge_lengths, reverse=True)
    fileio.dump_json(doc, args.out)
    if args.debug_dir:
        _dump_stages(args.debug_dir, result)
    print(f"face {result.face.value}, pose written to {args.out}")
    return 0


def _dump_stages(debug_dir, result) -> None:
    os.makedirs(debug_dir, exist_ok=True)
    sub = result.brick_cloud
    write_ply(sub.select(result.plane.inlier_indices), os.path.join(debug_dir, "inliers.ply"))
    write_ply(sub.select(result.boundary), os.path.join(debug_dir, "boundary.ply"))
    if result.corners:
        corner_pts = np.array([c.point for c in result.corners])
        write_ply(PointCloud(corner_pts), os.path.join(debug_dir, "corners.ply"))
    fileio.dump_json(
        [
            {
                "anchor": line.anchor.tolist(),
                "direction": line.direction.tolist(),
                "n_inliers": int(len(line.inlier_indices)),
            }
            for line in result.lines
        ],
        os.path.join(debug_dir, "lines.json"),
    )
    fileio.dump_json(
        [{"corner_i": a, "corner_j": b, "length": length} for a, b, length in result.edges],
        os.path.join(debug_dir, "edges.json"),
    )
    fileio.dump_json(
        {
            "centroid": result.surface.centroid.tolist(),
            "major": result.surface.major.tolist(),
            "minor": result.surface.minor.tolist(),
            "normal": result.surface.normal.tolist(),
        },
        os.path.join(debug_dir, "surface.json"),
    )


def cmd_eval(args) -> int:
    boxes = fileio.read_boxes(args.pred)
    mask = fileio.read_mask(args.gt)
    if args.nms:
        boxes = rotated_nms(boxes, args.iou_thresh)
    report = evaluate(boxes, mask, mode=args.mode, iou_threshold=args.iou_thresh)
    fileio.dump_json(report.to_dict(), args.out)
    p = "n/a" if report.precision is None else f"{report.precision:.3f}"
    m = "n/a" if report.map is None else f"{report.map:.3f}"
    print(f"P {p}  R {report.recall:.3f}  mAP {m}  -> {args.out}")
    return 0


def cmd_simulate(args) -> int:
    noise = NoiseModel(args.sigma_t, args.sigma_r)
    counts = simulate_wall(
        dims=args.dims,
        noise=noise,
        rounds=args.rounds,
        layers=args.layers,
        seed=args.seed,
        criteria=PlacementCriteria(),
        up=args.up,
    )
    table = {
        "rounds": args.rounds,
        "noise": {"sigma_translation_m": args.sigma_t, "sigma_rotation_deg": args.sigma_r},
        "successful_rounds": {f"layer-{i + 2}": c for i, c in enumerate(counts)},
    }
    fileio.dump_json(table, args.out)
    print("  ".join(f"layer-{i + 2}: {c}/{args.rounds}" for i, c in enumerate(counts)))
    return 0


def cmd_codec(args) -> int:
    mask = fileio.read_mask(args.gt)
    cfg = EncodingConfig(cell=args.cell_size, conf_threshold=args.conf_thresh)
    tensor = encode_mask(mask, cfg)
    os.makedirs(args.out_dir, exist_ok=True)
    tensor_path = os.path.join(args.out_dir, "targets.tensor")
    write_tensor(tensor, tensor_path)
    decoded = decode(read_tensor(tensor_path, cfg), cfg)
    fileio.dump_json([b.to_dict() for b in decoded], os.path.join(args.out_dir, "decoded_boxes.json"))
    print(f"encoded {len(decoded)} instance(s); tensor + decoded boxes in {args.out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="brickvision",
        description="Rotated-box brick perception toolkit: synthetic scenes, "
        "pose pipeline, evaluation, codec, wall simulation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render random clutter scene bundles")
    p.add_argument("--n-scenes", type=int, default=1)
    p.add_argument("--bricks", type=int, default=6)
    p.add_argument("--sigma", type=float, default=0.0, help="depth noise (m) along rays")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dims", type=_parse_dims, default=BrickDims(0.20, 0.09, 0.06), help="L,W,H meters")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pose", help="estimate a brick pose from a cloud and one box")
    p.add_argument("--cloud", required=True, help="registered ASCII PLY")
    p.add_argument("--box", required=True, help="rotated-box JSON (object or list)")
    p.add_argument("--box-index", type=int, default=0)
    p.add_argument("--dims", type=_parse_dims, default=BrickDims(0.20, 0.09, 0.06))
    p.add_argument("--ransac-iters", type=int, default=500)
    p.add_argument("--ransac-thresh", type=float, default=0.005, help="meters")
    p.add_argument("--face-tol", type=float, default=0.01, help="edge-length tolerance (m)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="pose.json")
    p.add_argument("--debug-dir", default=None, help="write per-stage artifacts here")
    p.set_defaults(func=cmd_pose)

    p = sub.add_parser("eval", help="score predicted boxes against a scene bundle")
    p.add_argument("--pred", required=True, help="predicted boxes JSON")
    p.add_argument("--gt", required=True, help="scene bundle directory")
    p.add_argument("--mode", choices=["rotated", "upright"], default="rotated")
    p.add_argument("--iou-thresh", type=float, default=0.5)
    p.add_argument("--nms", action="store_true", help="apply rotated NMS before scoring")
    p.add_argument("--out", default="report.json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", help="wall-building simulation with chained placement noise")
    p.add_argument("--rounds", type=int, default=25)
    p.add_argument("--layers", type=int, default=6)
    p.add_argument("--sigma-t", type=float, default=0.0, help="translation noise (m)")
    p.add_argument("--sigma-r", type=float, default=0.0, help="per-axis rotation noise (deg)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dims", type=_parse_dims, default=BrickDims(0.20, 0.09, 0.06))
    p.add_argument("--up", type=_parse_vec3, default=np.array([0.0, 0.0, 1.0]), help="up vector x,y,z")
    p.add_argument("--out", default="table.json")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("codec", help="encode a bundle's mask to a grid tensor and decode it back")
    p.add_argument("--gt", required=True, help="scene bundle directory")
    p.add_argument("--cell-size", type=int, default=16)
    p.add_argument("--conf-thresh", type=float, default=0.5)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_codec)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error at stage {exc.stage}: {exc.cause}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
