"""Command-line entry point: ``evrot simulate|track|panorama|evaluate``."""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import EvrotError
from .evaluation import evaluate, format_report, read_trajectory, write_report, write_trajectory
from .events import parse_event_stream, write_events
from .geometry import load_camera, save_camera
from .panorama import PanoramaSpec, render_events, render_panorama, write_pgm
from .pipeline import PipelineConfig, run_odometry, write_outputs
from .sim import iter_simulated_events, ground_truth, make_preset
from .spherical_map import load_map_points

log = logging.getLogger("evrot")


def _simulate(args):
    preset = make_preset(args.preset, rate_scale=args.rate_scale, duration=args.duration, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_camera(preset.camera, out / "camera.txt")
    n = 0
    with open(out / "events.txt", "w") as fh:
        for chunk in iter_simulated_events(preset.scene, preset.profile, preset.camera, preset.pixel_threshold):
            write_events(chunk, fh)
            n += len(chunk)
    if n == 0:
        raise EvrotError("the simulated sequence produced no events")
    write_trajectory(ground_truth(preset.profile), out / "groundtruth.txt")
    (out / "config.txt").write_text(PipelineConfig(camera=preset.camera, camera_path=Path("camera.txt")).to_text())
    log.info("wrote %d events over %.3f s to %s", n, preset.profile.duration, out)


def _track(args):
    overrides = {"f": args.fps, "n": args.n, "theta_t": args.theta_t, "voxel_size": args.voxel, "k": args.k}
    config = PipelineConfig.load(args.config, overrides)
    events = Path(args.events)
    if not events.is_file():
        raise EvrotError(f"event file {events} does not exist")
    result = run_odometry(config, events, stream=args.stream)
    out = write_outputs(result, args.out)
    s = result.summary()
    log.info("%d frames (%d held, %d failed), %d keyframes, %d map points, %.2fx real time -> %s",
             s["frames"], s["held"], s["failed"], s["keyframes"], s["map_points"], s["realtime_ratio"], out)


def _panorama(args):
    spec = PanoramaSpec(width=args.width, height=args.height, phi_h=np.deg2rad(args.phi_h),
                        phi_v=np.deg2rad(args.phi_v), percentile=args.percentile)
    if args.map:
        points = load_map_points(args.map)
        if not len(points):
            log.warning("map %s is empty; writing an all-zero image", args.map)
        img = render_panorama(points, spec)
    else:
        if not (args.traj and args.camera):
            raise EvrotError("--events needs --traj and --camera")
        camera = load_camera(args.camera)
        events = parse_event_stream(Path(args.events), camera.width, camera.height)
        img = render_events(events, read_trajectory(args.traj), camera, spec, window=args.window)
    if not img.counts.any():
        log.warning("no point fell inside the panorama; the image is all zero")
    write_pgm(img.image, args.out)


def _evaluate(args):
    report = evaluate(read_trajectory(args.est), read_trajectory(args.gt), alignment=not args.no_align,
                      delta_deg=args.delta)
    if args.out:
        write_report(report, args.out)
    sys.stdout.write(format_report(report))


def build_parser():
    p = argparse.ArgumentParser(prog="evrot", description="Rotational event-camera odometry and mapping.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="write a synthetic event sequence with ground truth")
    s.add_argument("--preset", choices=["dm", "ld"], default="dm")
    s.add_argument("--rate-scale", type=float, default=1.0)
    s.add_argument("--duration", type=float, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_simulate)

    t = sub.add_parser("track", help="estimate rotations and build the spherical map")
    t.add_argument("--config", required=True)
    t.add_argument("--events", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--fps", type=float)
    t.add_argument("--n", type=int)
    t.add_argument("--theta-t", type=float)
    t.add_argument("--voxel", type=float)
    t.add_argument("--k", type=int)
    t.add_argument("--stream", action="store_true", help="read the event file in chunks")
    t.set_defaults(func=_track)

    r = sub.add_parser("panorama", help="render a cylindrical panorama to PGM")
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--map")
    src.add_argument("--events")
    r.add_argument("--traj")
    r.add_argument("--camera")
    r.add_argument("--width", type=int, default=2000)
    r.add_argument("--height", type=int, default=1000)
    r.add_argument("--phi-h", type=float, default=360.0, help="horizontal span (deg)")
    r.add_argument("--phi-v", type=float, default=90.0, help="vertical field of view (deg)")
    r.add_argument("--percentile", type=float, default=0.9)
    r.add_argument("--window", type=float, default=0.2e-3, help="event window after each pose (s)")
    r.add_argument("--out", required=True)
    r.set_defaults(func=_panorama)

    e = sub.add_parser("evaluate", help="compare an estimate with ground truth")
    e.add_argument("--est", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--no-align", action="store_true")
    e.add_argument("--delta", type=float, default=10.0, help="RPE window (deg)")
    e.add_argument("--out")
    e.set_defaults(func=_evaluate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (EvrotError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
