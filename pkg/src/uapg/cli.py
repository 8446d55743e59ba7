"""Command-line surface: UAP training, perturbation application, the
per-image attack, stability evaluation and report/CSV/figure emission.

Commands are driven by a TOML config file plus overriding flags; the merged
effective config is embedded in every report for provenance. Timing and
cache statistics go to stderr so artifacts stay byte-identical for a fixed
seed. Exit codes: 0 ok, 2 config, 3 metric/bridge, 4 evaluation grid,
5 codec.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import attack, stability
from .codec import CodecSpec
from .errors import ConfigError, UapgError
from .figures import render_report_figures
from .imaging import (
    ImageTensor,
    apply_perturbation,
    contrast_mask,
    read_perturbation,
    read_png,
    read_y4m,
    scale_to_amplitude,
    write_perturbation,
    write_png,
    write_y4m,
)
from .metrics import resolve_metric


@dataclass
class RunConfig:
    seed: int = 0
    jobs: int = 1
    out_dir: Path = Path(".")
    cache_dir: Path | None = None
    raw: dict = field(default_factory=dict)


def _load_config(args) -> RunConfig:
    raw: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = tomllib.loads(path.read_text())
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"cannot parse config {path}: {e}") from e
    cfg = RunConfig(raw=raw)
    cfg.seed = int(raw.get("seed", cfg.seed))
    cfg.jobs = int(raw.get("jobs", cfg.jobs))
    if "out_dir" in raw:
        cfg.out_dir = Path(raw["out_dir"])
    if "cache_dir" in raw:
        cfg.cache_dir = Path(raw["cache_dir"])
    if args.seed is not None:
        cfg.seed = args.seed
    if args.jobs is not None:
        if args.jobs < 1:
            raise ConfigError(f"--jobs must be >= 1, got {args.jobs}")
        cfg.jobs = args.jobs
    if args.out is not None:
        cfg.out_dir = Path(args.out)
    if args.cache_dir is not None:
        cfg.cache_dir = Path(args.cache_dir)
    return cfg


def _fit_to_tile(img: ImageTensor, th: int, tw: int):
    """Center-crop (upscaling first when too small) so the image matches the
    perturbation tile; reports whether it had to adjust."""
    arr = img.data
    h, w = arr.shape[:2]
    adjusted = False
    if h < th or w < tw:
        ry = -(-th // h)
        rx = -(-tw // w)
        r = max(ry, rx)
        arr = arr.repeat(r, axis=0).repeat(r, axis=1)
        h, w = arr.shape[:2]
        adjusted = True
    if h > th or w > tw:
        y0 = (h - th) // 2
        x0 = (w - tw) // 2
        arr = arr[y0:y0 + th, x0:x0 + tw]
        adjusted = True
    return ImageTensor(arr), adjusted


def _load_image_dir(path: Path, th: int, tw: int):
    if not path.is_dir():
        raise ConfigError(f"image directory not found: {path}")
    files = sorted(p for p in path.iterdir()
                   if p.suffix.lower() == ".png")
    if not files:
        raise ConfigError(f"no PNG images in {path}")
    images = []
    adjusted = 0
    for f in files:
        img = read_png(f)
        if img.channels == 1:
            img = ImageTensor(np.repeat(img.data, 3, axis=2))
        img, adj = _fit_to_tile(img, th, tw)
        adjusted += adj
        images.append(img)
    if adjusted:
        print(f"note: {adjusted}/{len(files)} images were center-fit to "
              f"{th}x{tw}", file=sys.stderr)
    return images


def _sanitize(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in name)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _load_config(args)
    section = cfg.raw.get("train", {})
    metric_spec = args.metric or section.get("metric")
    images_dir = args.images or section.get("images")
    if not metric_spec:
        raise ConfigError("no metric given (use --metric or [train] metric)")
    if not images_dir:
        raise ConfigError(
            "no image directory given (use --images or [train] images)"
        )
    tile = section.get("tile", [256, 256])
    th, tw = int(tile[0]), int(tile[1])
    train_cfg = attack.TrainConfig(
        epochs=args.epochs if args.epochs is not None
        else int(section.get("epochs", 5)),
        batch_size=args.batch_size if args.batch_size is not None
        else int(section.get("batch_size", 8)),
        learning_rate=args.learning_rate if args.learning_rate is not None
        else float(section.get("learning_rate", 0.001)),
        clip_bound=args.clip_bound if args.clip_bound is not None
        else float(section.get("clip_bound", 0.1)),
        seed=cfg.seed,
        shuffle=bool(section.get("shuffle", True)),
    )
    metric = resolve_metric(metric_spec)
    images = _load_image_dir(Path(images_dir), th, tw)

    t0 = time.perf_counter()
    result = attack.train_uap(metric, images, train_cfg, tile_shape=(th, tw))
    elapsed = time.perf_counter() - t0

    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    stem = args.name or _sanitize(metric.descriptor.name)
    pert_path = cfg.out_dir / f"{stem}.uapp"
    log_path = cfg.out_dir / f"{stem}_train_log.csv"
    write_perturbation(pert_path, result.perturbation)
    log_path.write_text(attack.training_log_csv(result.log_rows))

    max_abs = float(np.abs(result.perturbation.data).max())
    print(f"perturbation: {pert_path}")
    print(f"training log: {log_path}")
    print(f"final max|p|: {max_abs!r}")
    print(f"final-epoch mean loss: {result.epoch_losses[-1]!r}")
    print(f"trained in {elapsed:.2f}s "
          f"(score evals {metric.counters.score_calls}, "
          f"gradient evals {metric.counters.gradient_calls})",
          file=sys.stderr)
    return 0


def cmd_apply(args) -> int:
    cfg = _load_config(args)
    if args.amplitude <= 0:
        raise ConfigError(f"--amplitude must be > 0, got {args.amplitude}")
    pert_path = Path(args.perturbation)
    if not pert_path.exists():
        raise ConfigError(f"perturbation file not found: {pert_path}")
    pert = scale_to_amplitude(read_perturbation(pert_path), args.amplitude)
    src = Path(args.input)
    if not src.exists():
        raise ConfigError(f"input not found: {src}")
    dst = Path(args.output)
    dst.parent.mkdir(parents=True, exist_ok=True)
    if src.suffix.lower() == ".y4m":
        video = read_y4m(src)
        frames = []
        for f in video.frames:
            mask = contrast_mask(f) if args.csf else None
            frames.append(apply_perturbation(f, pert, mask))
        out = type(video)(tuple(frames), video.rate_num, video.rate_den)
        write_y4m(dst, out)
    else:
        img = read_png(src)
        mask = contrast_mask(img) if args.csf else None
        write_png(dst, apply_perturbation(img, pert, mask))
    print(f"wrote {dst}")
    return 0


def cmd_attack_image(args) -> int:
    _load_config(args)
    metric = resolve_metric(args.metric)
    src = Path(args.input)
    if not src.exists():
        raise ConfigError(f"input not found: {src}")
    img = read_png(src)
    mcfg = attack.MadcConfig(steps=args.steps, mse_budget=args.mse_budget,
                             step_size=args.step_size)
    t0 = time.perf_counter()
    result = attack.madc_attack(metric, img, mcfg)
    elapsed = time.perf_counter() - t0
    if args.output:
        out = Path(args.output)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_png(out, result.image)
        print(f"wrote {out}")
    print(f"score before: {result.initial_score!r}")
    print(f"score after:  {result.final_score!r}")
    print(f"gain:         {result.final_score - result.initial_score!r}")
    print(f"mse used:     {result.mse!r} (budget {args.mse_budget!r})")
    if result.zero_gradient:
        print("warning: zero gradient at start; image returned unchanged")
    c = metric.counters
    print(f"evaluations: total={c.total} score={c.score_calls} "
          f"gradient={c.gradient_calls}")
    print(f"wall time: {elapsed:.3f}s", file=sys.stderr)
    return 0


def _codec_specs(codec_section: dict):
    kind = codec_section.get("kind", "mock")
    if kind == "mock":
        qualities = codec_section.get("qualities")
        if not qualities:
            raise ConfigError("[eval.codec] needs qualities = [...] "
                              "for the mock codec")
        return [CodecSpec("mock", quality=float(q)) for q in qualities]
    if kind == "external":
        bitrates = codec_section.get("bitrates")
        if not bitrates:
            raise ConfigError("[eval.codec] needs bitrates = [...] "
                              "for an external codec")
        return [
            CodecSpec(
                "external",
                encode_template=codec_section.get("encode_template"),
                decode_template=codec_section.get("decode_template"),
                target_bitrate=float(b),
            )
            for b in bitrates
        ]
    raise ConfigError(f"unknown codec kind {kind!r}")


def cmd_eval_stability(args) -> int:
    cfg = _load_config(args)
    section = cfg.raw.get("eval")
    if not section:
        raise ConfigError("config lacks an [eval] section")
    video_paths = section.get("videos") or []
    if not video_paths:
        raise ConfigError("[eval] videos list is empty")
    metric_entries = section.get("metrics") or []
    if not metric_entries:
        raise ConfigError("[eval] needs at least one [[eval.metrics]] entry")

    videos = []
    for vp in video_paths:
        path = Path(vp)
        if not path.exists():
            raise ConfigError(f"video not found: {path}")
        videos.append((path.stem, read_y4m(path)))

    metrics = []
    perturbations = {}
    for entry in metric_entries:
        spec = entry.get("spec")
        if not spec:
            raise ConfigError("[[eval.metrics]] entry lacks spec")
        metric = resolve_metric(spec)
        name = metric.descriptor.name
        ppath = entry.get("perturbation")
        if not ppath:
            raise ConfigError(f"metric {name!r} lacks a perturbation file")
        ppath = Path(ppath)
        if not ppath.exists():
            raise ConfigError(
                f"perturbation file for metric {name!r} not found: {ppath}"
            )
        metrics.append(metric)
        perturbations[name] = read_perturbation(ppath)

    amplitudes = tuple(float(a) for a in
                       section.get("amplitudes", (0.02, 0.04, 0.06, 0.08)))
    eval_cfg = stability.EvalConfig(
        videos=videos,
        rate_points=_codec_specs(section.get("codec", {})),
        target_metrics=metrics,
        amplitudes=amplitudes,
        proxy_cap=float(section.get("proxy_cap", 99.0)),
    )
    cache = stability.EvalCache(cfg.cache_dir)
    t0 = time.perf_counter()
    report = stability.run_stability_pipeline(
        eval_cfg, perturbations, cache=cache, jobs=cfg.jobs,
    )
    elapsed = time.perf_counter() - t0
    report.config = {
        "seed": cfg.seed,
        "jobs": cfg.jobs,
        "out_dir": str(cfg.out_dir),
        "cache_dir": str(cfg.cache_dir) if cfg.cache_dir else None,
        "eval": section,
    }

    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    report_path = cfg.out_dir / (args.report_name or "report.json")
    report_path.write_text(stability.report_to_json(report))

    ranked = sorted(report.metrics.items(), key=lambda kv: -kv[1].stability)
    width = max(len(n) for n, _ in ranked)
    print(f"{'metric'.ljust(width)}  stability score")
    for name, ev in ranked:
        print(f"{name.ljust(width)}  {ev.stability!r}")
    print(f"report: {report_path}", file=sys.stderr)
    print(f"evaluated in {elapsed:.2f}s (cache hits {cache.hits}, "
          f"misses {cache.misses})", file=sys.stderr)
    return 0


def cmd_report_csv(args) -> int:
    import json

    cfg = _load_config(args)
    report_path = Path(args.report) if args.report else (
        cfg.out_dir / "report.json"
    )
    if not report_path.exists():
        raise ConfigError(f"report not found: {report_path}")
    report = json.loads(report_path.read_text())
    if report.get("schema") != stability.REPORT_SCHEMA:
        raise ConfigError(
            f"unsupported report schema {report.get('schema')!r}; "
            f"expected {stability.REPORT_SCHEMA!r}"
        )
    try:
        stability.validate_report(report)
    except Exception as e:
        raise ConfigError(f"report does not match the published schema: "
                          f"{e}") from e
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    for fname, text in stability.report_csvs(report).items():
        path = cfg.out_dir / fname
        path.write_text(text)
        print(f"wrote {path}")
    if args.figures:
        for path in render_report_figures(report, cfg.out_dir):
            print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uapg",
        description="Train score-inflating universal perturbations against "
                    "no-reference quality metrics and rate each metric's "
                    "robustness from RD curves.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file")
    common.add_argument("--seed", type=int, help="seed for every stochastic "
                        "component (overrides config)")
    common.add_argument("--jobs", type=int, help="parallel grid jobs")
    common.add_argument("--cache-dir", help="on-disk score/frame cache")
    common.add_argument("--out", help="output directory")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-uap", parents=[common],
                       help="train a universal perturbation for one metric")
    p.add_argument("--metric", help='metric spec, e.g. "builtin:tinyconv" '
                   'or "external:<command>"')
    p.add_argument("--images", help="directory of PNG training images")
    p.add_argument("--name", help="output file stem (default: metric name)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--clip-bound", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("apply-uap", parents=[common],
                       help="apply a trained perturbation to an image/video")
    p.add_argument("--perturbation", required=True, help="UAPP file")
    p.add_argument("--amplitude", type=float, required=True,
                   help="max-abs amplitude to rescale to (> 0)")
    p.add_argument("--csf", action="store_true",
                   help="weight the perturbation by a local-contrast mask")
    p.add_argument("input", help="PNG image or Y4M video")
    p.add_argument("output", help="output path (matching format)")
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("attack-image", parents=[common],
                       help="per-image gradient attack under an MSE budget")
    p.add_argument("--metric", required=True)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--mse-budget", type=float, default=0.0004)
    p.add_argument("--step-size", type=float, default=0.001)
    p.add_argument("--output", help="write the attacked image here")
    p.add_argument("input", help="PNG image")
    p.set_defaults(func=cmd_attack_image)

    p = sub.add_parser("eval-stability", parents=[common],
                       help="run the full RD-curve stability evaluation")
    p.add_argument("--report-name", help="report filename "
                   "(default report.json)")
    p.set_defaults(func=cmd_eval_stability)

    p = sub.add_parser("report-csv", parents=[common],
                       help="emit CSV tables and figures from a report")
    p.add_argument("--report", help="report JSON "
                   "(default <out>/report.json)")
    fig = p.add_mutually_exclusive_group()
    fig.add_argument("--figures", dest="figures", action="store_true",
                     default=True)
    fig.add_argument("--no-figures", dest="figures", action="store_false")
    p.set_defaults(func=cmd_report_csv)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UapgError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
