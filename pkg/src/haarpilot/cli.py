"""Command-line entry points: train, detect, evaluate, fly-sim, endpoint, summary, synth, convert.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import boost, dataset, detect, pilot, synthetic, wire
from .haar import WindowSpec
from .imaging import GrayImage, ImageError
from .labels import GESTURES, GestureLabel

log = logging.getLogger("haarpilot")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3
MODEL_SUFFIX = ".cascade"
IMAGE_SUFFIXES = {".pgm", ".pnm", ".png", ".jpg", ".jpeg", ".bmp"}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@contextmanager
def _output(path):
    """Text sink for ``--out``; ``None`` or ``-`` means stdout."""
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", newline="\n", encoding="utf-8") as fh:
            yield fh


def _need_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"{what} not found: {p}")
    return p


def _load_models(models) -> list[boost.Cascade]:
    d = Path(models)
    if d.is_file():
        paths = [d]
    elif d.is_dir():
        paths = sorted(d.glob(f"*{MODEL_SUFFIX}"))
    else:
        raise DataError(f"model path not found: {d}")
    if not paths:
        raise DataError(f"no *{MODEL_SUFFIX} files in {d}")
    out = []
    for p in paths:
        try:
            out.append(boost.load_cascade(p))
        except (OSError, boost.CascadeParseError) as exc:
            raise DataError(f"cannot load model {p}: {exc}") from exc
    labels = [c.label for c in out]
    if len(set(labels)) != len(labels):
        raise DataError(f"duplicate model labels in {d}: {', '.join(map(str, labels))}")
    return out


def _scan_config(args) -> detect.ScanConfig:
    try:
        return detect.ScanConfig(
            scale_factor=args.scale_factor,
            min_neighbors=args.min_neighbors,
            min_size=args.min_size,
        )
    except detect.ConfigError as exc:
        raise UsageError(str(exc)) from exc


def _images(path) -> list[Path]:
    p = Path(path)
    if p.is_dir():
        return sorted(q for q in p.iterdir() if q.suffix.lower() in IMAGE_SUFFIXES)
    if p.is_file():
        return [p]
    raise DataError(f"input not found: {p}")


# --------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    ann_path = _need_file(args.positives, "annotation file")
    neg_path = _need_file(args.negatives, "negatives list")
    spec = WindowSpec(args.window)
    try:
        label = GestureLabel.parse(args.label)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    anns = dataset.parse_annotations(ann_path)
    batch = dataset.extract_samples(anns, spec)
    for f in batch.failures:
        print(f"warning: skipped {f.path} {f.rect}: {f.reason}", file=sys.stderr)
    pool = [dataset.load_image(p) for p in dataset.read_path_list(neg_path)]
    config = boost.TrainConfig(
        max_stages=args.max_stages,
        min_detection=args.min_detection,
        max_false_positive=args.max_false_positive,
        max_stumps=args.max_stumps,
        seed=args.seed,
        window=spec,
        neg_draw_factor=args.neg_draw_factor,
    )
    t0 = time.perf_counter()
    try:
        result = boost.fit_cascade(batch.samples, pool, config, label)
    except boost.TrainingCollapseError as exc:
        print(f"error: training collapsed at stage {exc.stage}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except boost.DegenerateDataError as exc:
        raise DataError(str(exc)) from exc
    wall = time.perf_counter() - t0
    boost.save_cascade(result.cascade, args.out)
    lines = [
        f"model {args.out}",
        f"label {label.value}",
        f"positives {len(batch.samples)} skipped {len(batch.failures)}",
        f"stop {result.stop_reason}",
        "stage,stumps,detection_rate,false_positive_rate,converged",
    ]
    for k, s in enumerate(result.stages, 1):
        lines.append(f"{k},{len(s.stage.stumps)},{s.detection_rate:.6f},{s.false_positive_rate:.6f},{int(s.converged)}")
    lines.append(f"wall_time_s {wall:.2f}")
    report = "\n".join(lines) + "\n"
    if args.report:
        Path(args.report).write_text(report)
    else:
        sys.stderr.write(report)
    return EXIT_OK


def _burn_box(arr: np.ndarray, r) -> None:
    x1, y1 = r.x + r.w - 1, r.y + r.h - 1
    arr[r.y, r.x : x1 + 1] = 255
    arr[y1, r.x : x1 + 1] = 255
    arr[r.y : y1 + 1, r.x] = 255
    arr[r.y : y1 + 1, x1] = 255


def cmd_detect(args) -> int:
    cascades = _load_models(args.models)
    cfg = _scan_config(args)
    paths = _images(args.input)
    if args.annotate:
        Path(args.annotate).mkdir(parents=True, exist_ok=True)
    rows = []
    for p in paths:
        img = dataset.load_image(p)
        found = detect.detect_all(img, cascades, cfg)
        counts = []
        for label, dets in found.items():
            counts.append(f"{label.value}={len(dets)}")
            rows.extend((p.name, label, d) for d in dets)
        print(f"{p.name}: {' '.join(counts)}", file=sys.stderr)
        if args.annotate:
            arr = img.data.copy()
            for dets in found.values():
                for d in dets:
                    _burn_box(arr, d.rect)
            dataset.write_pgm(GrayImage.from_array(arr), Path(args.annotate) / (p.stem + ".pgm"))
    with _output(args.out) as fh:
        detect.write_detections_csv(rows, fh)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    manifest = dataset.parse_manifest(_need_file(args.manifest, "manifest"))
    cascades = _load_models(args.models)
    report = dataset.evaluate(manifest, cascades, _scan_config(args))
    with _output(args.out) as fh:
        report.to_csv(fh)
    _print_summary(report)
    return EXIT_OK


def _fmt(x):
    return "n/a" if x is None else f"{x:.4f}"


def _print_summary(report: dataset.EvalReport) -> None:
    err = sys.stderr
    print(f"grand average {_fmt(report.grand_average())}", file=err)
    for d in dataset.Distance:
        print(f"{d.value} average {_fmt(report.marginal(d))}", file=err)
    best = report.best_row()
    if best:
        print(f"best row {best[0]} average {best[1]:.4f}", file=err)
    gaps = report.axis_gaps()
    order = report.significance_order()
    print(
        "condition significance (by marginal gap): " + ", ".join(f"{k} {gaps[k]:.4f}" for k in order),
        file=err,
    )


def cmd_fly_sim(args) -> int:
    world = pilot.World.load(_need_file(args.world, "world file")) if args.world else pilot.World()
    gmap = pilot.GestureMap.load(_need_file(args.map, "gesture map")) if args.map else pilot.GestureMap()
    session = None
    if args.wire:
        try:
            host, port = wire.parse_destination(args.wire)
        except wire.WireError as exc:
            raise UsageError(str(exc)) from exc
        session = wire.Session(host, port)
    sim = pilot.Pilot(world, gmap, on_tick=session.send_tick if session else None)
    try:
        if args.script:
            for label in pilot.read_label_script(_need_file(args.script, "label script")):
                sim.feed(label)
                if session:
                    session.pump()
        else:
            if not args.models:
                raise UsageError("--frames needs --models")
            cascades = _load_models(args.models)
            cfg = _scan_config(args)
            for p in _images(args.frames):
                label, det = detect.classify_gesture(dataset.load_image(p), cascades, cfg)
                est = detect.estimate_distance(det.rect.w) if det is not None else None
                sim.feed(label, est)
                if session:
                    session.pump()
    finally:
        if session:
            session.close()
    with _output(args.out) as fh:
        pilot.write_trace(sim.trace, fh)
    s = sim.state
    print(f"final {s.mode.value} x={s.position[0]!r} y={s.position[1]!r} z={s.position[2]!r}", file=sys.stderr)
    if session:
        print(f"sent {len(session.log)} datagrams to {session.address[0]}:{session.address[1]}", file=sys.stderr)
    return EXIT_OK


def cmd_endpoint(args) -> int:
    try:
        host, port = wire.parse_destination(args.bind, bind=True)
    except wire.WireError as exc:
        raise UsageError(str(exc)) from exc
    ep = wire.SimDroneEndpoint(host, port)
    print(f"listening on {ep.address[0]}:{ep.address[1]}", file=sys.stderr, flush=True)
    ep.start()
    try:
        if args.duration is None:
            while True:
                time.sleep(0.5)
        else:
            time.sleep(args.duration)
    except KeyboardInterrupt:
        pass
    finally:
        ep.stop()
    with _output(args.out) as fh:
        fh.write(ep.snapshot().csv())
    return EXIT_OK


def cmd_summary(args) -> int:
    entries = dataset.read_dataset_list(_need_file(args.datasets, "dataset list"))
    s = dataset.summarize(entries)
    with _output(args.out) as fh:
        fh.write("gesture,positives,negatives\n")
        for label in sorted(s.positives, key=lambda g: g.rank):
            fh.write(f"{label.value},{s.positives[label]},{s.negatives[label]}\n")
        fh.write(f"total,{s.total_images},\n")
    return EXIT_OK


def cmd_convert(args) -> int:
    try:
        from PIL import Image
    except ImportError as exc:
        raise DataError("PNG conversion needs Pillow (pip install Pillow)") from exc
    src = _need_file(args.input, "input image")
    try:
        with Image.open(src) as im:
            img = GrayImage.from_array(np.asarray(im.convert("L")))
    except OSError as exc:
        raise DataError(f"cannot read image {src}: {exc}") from exc
    dataset.write_pgm(img, args.output)
    return EXIT_OK


def cmd_synth(args) -> int:
    """Write a procedural dataset: annotated positives, negatives lists and a scene manifest."""
    out = Path(args.out)
    rng = np.random.default_rng(args.seed)
    labels = [GestureLabel.parse(g) for g in args.gestures.split(",")] if args.gestures else list(GESTURES)
    (out / "negatives").mkdir(parents=True, exist_ok=True)
    shared = []
    for i in range(args.negatives):
        maker = synthetic.cluttered_background if i % 3 else synthetic.clear_background
        arr = maker(args.frame, args.frame, rng)
        if i % 4 == 3:
            arr = synthetic.dim(arr, 0.4, rng)
        name = f"negatives/n{i:04d}.pgm"
        dataset.write_pgm(GrayImage.from_array(arr), out / name)
        shared.append(name)
    pos_files = {}
    for g in labels:
        d = out / "positives" / g.value
        d.mkdir(parents=True, exist_ok=True)
        lines = []
        for i in range(args.positives):
            side = int(rng.integers(24, args.frame // 2 + 1))
            x = int(rng.integers(0, args.frame - side + 1))
            y = int(rng.integers(0, args.frame - side + 1))
            bg = (synthetic.cluttered_background if i % 2 else synthetic.clear_background)(args.frame, args.frame, rng)
            patch = synthetic.render_gesture(g, side, rng, bg[y : y + side, x : x + side])
            name = f"positives/{g.value}/p{i:04d}.pgm"
            dataset.write_pgm(GrayImage.from_array(synthetic.compose(bg, patch, x, y)), out / name)
            lines.append(f"{name} 1 {x} {y} {side} {side}")
        (out / f"{g.value}.ann").write_text("\n".join(lines) + "\n")
        pos_files[g] = [ln.split()[0] for ln in lines]
    with open(out / "datasets.txt", "w") as ds:
        for g in labels:
            others = [n for h in labels if h is not g for n in pos_files[h][: args.positives // 4]]
            (out / f"{g.value}.neg").write_text("\n".join(shared + others) + "\n")
            ds.write(f"{g.value} {g.value}.ann {g.value}.neg\n")
    if args.scenes:
        (out / "scenes").mkdir(exist_ok=True)
        rows = [",".join(dataset.MANIFEST_HEADER)]
        for tag in dataset.ALL_TAGS:
            for g in labels:
                for i in range(args.scenes):
                    arr, _ = synthetic.scene_frame(g, tag, rng)
                    name = f"scenes/{'_'.join(tag.tokens())}_{g.value}_{i:03d}.pgm"
                    dataset.write_pgm(GrayImage.from_array(arr), out / name)
                    rows.append(f"{name},{g.value},{','.join(tag.tokens())}")
        (out / "manifest.csv").write_text("\n".join(rows) + "\n")
    print(f"wrote synthetic dataset to {out}", file=sys.stderr)
    return EXIT_OK


# --------------------------------------------------------------------------


def _scan_flags(p):
    p.add_argument("--scale-factor", type=float, default=1.25, help="scale step between pyramid levels")
    p.add_argument("--min-neighbors", type=int, default=3, help="raw detections needed per group")
    p.add_argument("--min-size", type=int, default=None, help="smallest window side in pixels")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="haarpilot", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train one gesture cascade")
    p.add_argument("--positives", required=True, help="annotation file")
    p.add_argument("--negatives", required=True, help="file listing background images")
    p.add_argument("--label", required=True, help="gesture label stored in the model")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--report", help="training report path (default stderr)")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--window", type=int, default=20)
    p.add_argument("--max-stages", type=int, default=20)
    p.add_argument("--min-detection", type=float, default=0.995)
    p.add_argument("--max-false-positive", type=float, default=0.5)
    p.add_argument("--max-stumps", type=int, default=200)
    p.add_argument("--neg-draw-factor", type=int, default=100)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="scan images with the gesture cascades")
    p.add_argument("input", help="image file or directory")
    p.add_argument("--models", required=True, help="directory of *.cascade files")
    p.add_argument("--out", help="detections CSV (default stdout)")
    p.add_argument("--annotate", help="directory for PGMs with boxes burned in")
    _scan_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="accuracy matrix over a tagged manifest")
    p.add_argument("manifest")
    p.add_argument("--models", required=True)
    p.add_argument("--out", help="report CSV (default stdout)")
    _scan_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("fly-sim", help="classify, debounce, plan and simulate a flight")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--script", help="text file of gesture labels, one frame each (Palm*3 repeats)")
    src.add_argument("--frames", help="directory of frames to classify")
    p.add_argument("--models")
    p.add_argument("--world", help="world file with operator/obstacle lines")
    p.add_argument("--map", help="gesture=command map file")
    p.add_argument("--wire", help="host:port of a drone endpoint to mirror commands to")
    p.add_argument("--out", help="trace CSV (default stdout)")
    _scan_flags(p)
    p.set_defaults(func=cmd_fly_sim)

    p = sub.add_parser("endpoint", help="run the simulated drone endpoint")
    p.add_argument("--bind", default=f"127.0.0.1:{wire.DEFAULT_PORT}")
    p.add_argument("--duration", type=float, help="seconds to run (default until interrupted)")
    p.add_argument("--out", help="final state CSV (default stdout)")
    p.set_defaults(func=cmd_endpoint)

    p = sub.add_parser("summary", help="dataset image counts per gesture")
    p.add_argument("datasets", help="lines of 'gesture annotation_file negatives_list'")
    p.add_argument("--out")
    p.set_defaults(func=cmd_summary)

    p = sub.add_parser("synth", help="write a procedural gesture dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--gestures", help="comma-separated subset (default all five)")
    p.add_argument("--positives", type=int, default=200)
    p.add_argument("--negatives", type=int, default=60)
    p.add_argument("--frame", type=int, default=96)
    p.add_argument("--scenes", type=int, default=0, help="scene frames per condition and gesture")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("convert", help="convert an image (PNG etc.) to PGM; needs Pillow")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_convert)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (
        DataError,
        dataset.PgmError,
        dataset.AnnotationError,
        dataset.DatasetIOError,
        pilot.WorldParseError,
        boost.CascadeParseError,
        ImageError,
        FileNotFoundError,
    ) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (wire.TransportError, OSError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
