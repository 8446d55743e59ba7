"""RD-curve assembly and the metric-stability rating.

Procedure per target metric: build RD curves with and without perturbation
preprocessing, min/max-normalize target curves per metric and proxy curves
pooled across metrics, turn normalized-area differences into per-amplitude
(target gain, proxy loss) dependence points averaged over videos, and score
each metric as -100x the area under its gain-versus-loss dependence over the
proxy-loss interval common to all metrics. Negative scores mean the metric
is gameable; positive scores mean it resists the attack.

Proxy-loss sign: losses are baseline-minus-attacked areas, so positive loss
means quality degradation (the report records this convention).
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codec import CodecSpec, compress
from .errors import (
    DegenerateMetricError,
    EvalGridError,
    IncompleteGridError,
    IntervalError,
    NoOverlapError,
    ParameterError,
    UapgError,
)
from .imaging import (
    ImageTensor,
    VideoFrames,
    apply_perturbation,
    psnr,
    scale_to_amplitude,
)
from .metrics import Metric

REPORT_SCHEMA = "uapg-report/1"
PROXY_LOSS_SIGN = "baseline-minus-attacked (positive = quality degradation)"


# ---------------------------------------------------------------------------
# Curves
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RDCurve:
    """Ordered (bitrate, score) points for one video x metric x amplitude
    (amplitude None = unattacked)."""

    points: tuple
    video: str = ""
    metric: str = ""
    amplitude: float | None = None

    def __post_init__(self):
        pts = tuple((float(b), float(s)) for b, s in self.points)
        if len(pts) < 2:
            raise ParameterError(f"RD curve needs >= 2 points, got {len(pts)}")
        for (b0, s0), (b1, s1) in zip(pts, pts[1:]):
            if not b1 > b0:
                raise ParameterError(
                    f"bitrates must strictly increase: {b0} then {b1}"
                )
        for b, s in pts:
            if not (np.isfinite(b) and np.isfinite(s)):
                raise ParameterError("curve contains non-finite values")
        object.__setattr__(self, "points", pts)

    def bitrates(self) -> np.ndarray:
        return np.array([b for b, _ in self.points])

    def scores(self) -> np.ndarray:
        return np.array([s for _, s in self.points])

    def with_scores(self, scores) -> "RDCurve":
        pts = tuple((b, float(s)) for (b, _), s in zip(self.points, scores))
        return RDCurve(pts, self.video, self.metric, self.amplitude)


@dataclass(frozen=True)
class DependencePoint:
    proxy_loss: float
    target_gain: float
    amplitude: float


def _normalize(curves, what: str):
    scores = np.concatenate([c.scores() for c in curves])
    lo, hi = float(scores.min()), float(scores.max())
    if hi == lo:
        raise DegenerateMetricError(
            f"{what} scores are constant ({lo}) over the dataset; "
            "min/max normalization is undefined"
        )
    span = hi - lo
    normed = [c.with_scores((c.scores() - lo) / span) for c in curves]
    return normed, (lo, hi)


def normalize_target_curves(curves):
    """Min/max-normalize one metric's full curve set ((K+1)*N curves) to
    [0, 1]; returns the curves and the (min, max) used."""
    if not curves:
        raise ParameterError("no curves to normalize")
    return _normalize(curves, f"target metric {curves[0].metric!r}")


def normalize_proxy_curves(curves):
    """Same as normalize_target_curves but pooled over every metric's runs
    (M*N*(K+1) curves), so all metrics share one proxy scale."""
    if not curves:
        raise ParameterError("no curves to normalize")
    return _normalize(curves, "proxy metric")


def curve_area(curve: RDCurve) -> float:
    """Trapezoidal area under the curve after mapping its bitrate span
    affinely onto [0, 1]."""
    b = curve.bitrates()
    s = curve.scores()
    x = (b - b[0]) / (b[-1] - b[0])
    area = 0.0
    for i in range(len(x) - 1):
        area += 0.5 * (x[i + 1] - x[i]) * (s[i] + s[i + 1])
    return float(area)


def _restrict(curve: RDCurve, lo: float, hi: float) -> RDCurve:
    """Clip a curve to [lo, hi] with linear interpolation at the endpoints."""
    b = curve.bitrates()
    s = curve.scores()
    inner = [(float(bb), float(ss)) for bb, ss in zip(b, s) if lo < bb < hi]
    pts = ([(lo, float(np.interp(lo, b, s)))] + inner
           + [(hi, float(np.interp(hi, b, s)))])
    return RDCurve(tuple(pts), curve.video, curve.metric, curve.amplitude)


def gain(attacked: RDCurve, baseline: RDCurve) -> float:
    """Area difference (attacked minus baseline) over the bitrate range
    where both curves are determined. Returns 0 for a single-point overlap."""
    lo = max(attacked.points[0][0], baseline.points[0][0])
    hi = min(attacked.points[-1][0], baseline.points[-1][0])
    if lo > hi:
        raise NoOverlapError(
            f"curves share no bitrate range: "
            f"[{attacked.points[0][0]}, {attacked.points[-1][0]}] vs "
            f"[{baseline.points[0][0]}, {baseline.points[-1][0]}]"
        )
    if lo == hi:
        return 0.0
    return curve_area(_restrict(attacked, lo, hi)) - curve_area(
        _restrict(baseline, lo, hi)
    )


def proxy_loss(attacked: RDCurve, baseline: RDCurve) -> float:
    """Proxy degradation, sign-flipped so positive = worse quality."""
    return gain(baseline, attacked)


def build_dependence(gains: dict, losses: dict, videos, amplitudes):
    """Average per-video gains/losses into one dependence point per
    amplitude. Keys are (video, amplitude); a missing cell aborts."""
    points = []
    for amp in amplitudes:
        gvals, lvals = [], []
        for vid in videos:
            key = (vid, amp)
            if key not in gains or key not in losses:
                raise IncompleteGridError(
                    f"missing gain/loss for video {vid!r} at amplitude {amp}"
                )
            gvals.append(gains[key])
            lvals.append(losses[key])
        points.append(DependencePoint(
            float(np.mean(lvals)), float(np.mean(gvals)), float(amp)
        ))
    return points


def _dependence_path(points):
    """Sorted, duplicate-collapsed piecewise-linear gain(loss) path."""
    by_loss: dict[float, list[float]] = {}
    for pt in points:
        by_loss.setdefault(pt.proxy_loss, []).append(pt.target_gain)
    xs = sorted(by_loss)
    ys = [float(np.mean(by_loss[x])) for x in xs]
    return np.array(xs), np.array(ys)


def stability_score(dependences: dict) -> tuple[dict, tuple[float, float]]:
    """-100x the area under each metric's gain-vs-loss dependence over the
    proxy-loss interval where every metric's dependence is determined.

    Returns ({metric: score}, (interval_lo, interval_hi)). A zero-width
    common interval (including single-point dependences) yields score 0.
    """
    if not dependences:
        raise ParameterError("no dependences given")
    paths = {}
    for name, pts in dependences.items():
        if not pts:
            raise ParameterError(f"metric {name!r} has no dependence points")
        paths[name] = _dependence_path(pts)
    lo = max(xs[0] for xs, _ in paths.values())
    hi = min(xs[-1] for xs, _ in paths.values())
    if lo > hi:
        ranges = {n: (float(xs[0]), float(xs[-1]))
                  for n, (xs, _) in paths.items()}
        raise IntervalError(
            f"metrics' proxy-loss ranges share no interval: {ranges}"
        )
    scores = {}
    for name, (xs, ys) in paths.items():
        if lo == hi or len(xs) < 2:
            scores[name] = 0.0
            continue
        grid = [lo] + [float(x) for x in xs if lo < x < hi] + [hi]
        vals = np.interp(grid, xs, ys)
        area = 0.0
        for i in range(len(grid) - 1):
            area += 0.5 * (grid[i + 1] - grid[i]) * (vals[i] + vals[i + 1])
        score = -100.0 * area
        scores[name] = 0.0 if score == 0.0 else float(score)
    return scores, (float(lo), float(hi))


# ---------------------------------------------------------------------------
# Evaluation cache
# ---------------------------------------------------------------------------

def video_hash(video: VideoFrames) -> str:
    h = hashlib.sha256()
    h.update(
        f"{len(video.frames)}|{video.height}|{video.width}"
        f"|{video.rate_num}/{video.rate_den}".encode()
    )
    for f in video.frames:
        h.update(np.ascontiguousarray(f.data).tobytes())
    return h.hexdigest()


def _key(*parts: str) -> str:
    return hashlib.sha256("\x1f".join(parts).encode()).hexdigest()


class EvalCache:
    """On-disk memo of scores and decoded frames, keyed by content hash.

    Score entries make warm re-runs free of metric evaluations; frame
    entries let runs with added metrics reuse compression results.
    """

    def __init__(self, root=None):
        self.root = Path(root) if root else None
        self.hits = 0
        self.misses = 0
        if self.root:
            (self.root / "scores").mkdir(parents=True, exist_ok=True)
            (self.root / "frames").mkdir(parents=True, exist_ok=True)

    def score_get(self, key: str):
        if not self.root:
            return None
        path = self.root / "scores" / f"{key}.json"
        if not path.exists():
            self.misses += 1
            return None
        self.hits += 1
        return float(json.loads(path.read_text())["value"])

    def score_put(self, key: str, value: float) -> None:
        if self.root:
            path = self.root / "scores" / f"{key}.json"
            path.write_text(json.dumps({"value": value}))

    def frames_get(self, key: str):
        if not self.root:
            return None
        path = self.root / "frames" / f"{key}.npz"
        if not path.exists():
            self.misses += 1
            return None
        with np.load(path) as z:
            frames = tuple(ImageTensor(a) for a in z["frames"])
            video = VideoFrames(frames, int(z["rate_num"]), int(z["rate_den"]))
            bitrate = float(z["bitrate"])
        self.hits += 1
        return video, bitrate

    def frames_put(self, key: str, video: VideoFrames,
                   bitrate: float) -> None:
        if self.root:
            np.savez_compressed(
                self.root / "frames" / f"{key}.npz",
                frames=np.stack([f.data for f in video.frames]),
                bitrate=bitrate, rate_num=video.rate_num,
                rate_den=video.rate_den,
            )


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

@dataclass
class EvalConfig:
    """Everything one stability evaluation needs besides the perturbations:
    named videos, amplitude grid, rate points, target metrics, proxy cap."""

    videos: list          # [(video_id, VideoFrames)]
    rate_points: list     # [CodecSpec]
    target_metrics: list  # [Metric]
    amplitudes: tuple = (0.02, 0.04, 0.06, 0.08)
    proxy_cap: float = 99.0

    def __post_init__(self):
        if not self.videos:
            raise ParameterError("need at least one video")
        if not self.target_metrics:
            raise ParameterError("need at least one target metric")
        if len(self.rate_points) < 2:
            raise ParameterError(
                "need at least two rate points to draw an RD curve"
            )
        amps = tuple(float(a) for a in self.amplitudes)
        if not amps:
            raise ParameterError("need at least one amplitude")
        if any(a <= 0 for a in amps):
            raise ParameterError("amplitudes must be positive")
        if any(b <= a for a, b in zip(amps, amps[1:])):
            raise ParameterError("amplitudes must strictly increase")
        object.__setattr__(self, "amplitudes", amps)


@dataclass
class MetricEvaluation:
    name: str
    target_min: float
    target_max: float
    target_raw: list
    target_norm: list
    proxy_raw: list
    proxy_norm: list
    per_video: list        # dicts: video, amplitude, target_gain, proxy_loss
    dependence: list
    stability: float = float("nan")


@dataclass
class StabilityReport:
    proxy_min: float
    proxy_max: float
    proxy_cap: float
    common_interval: tuple
    metrics: dict            # name -> MetricEvaluation
    config: dict = field(default_factory=dict)


def _cell_points(metric: Metric, variant: VideoFrames, pristine: VideoFrames,
                 variant_key: str, pristine_key: str, spec: CodecSpec,
                 cache: EvalCache, proxy_cap: float, scratch_dir):
    """Compress one video variant at one rate point and score it; returns
    (bitrate, target_score, proxy_score)."""
    codec_token = spec.cache_token()
    frames_key = _key("frames", variant_key, codec_token)
    cached = cache.frames_get(frames_key)
    if cached is None:
        result = compress(variant, spec, scratch_dir)
        decoded, bitrate = result.video, result.measured_bitrate
        cache.frames_put(frames_key, decoded, bitrate)
    else:
        decoded, bitrate = cached

    score_key = _key("score", metric.descriptor.name, variant_key,
                     codec_token)
    target = cache.score_get(score_key)
    if target is None:
        target = float(np.mean([metric.score(f) for f in decoded.frames]))
        cache.score_put(score_key, target)

    proxy_key = _key("proxy", "psnr", repr(proxy_cap), pristine_key,
                     variant_key, codec_token)
    proxy = cache.score_get(proxy_key)
    if proxy is None:
        proxy = float(np.mean([
            psnr(ref, dec, proxy_cap)
            for ref, dec in zip(pristine.frames, decoded.frames)
        ]))
        cache.score_put(proxy_key, proxy)
    return bitrate, target, proxy


def run_stability_pipeline(cfg: EvalConfig, perturbations: dict,
                           cache: EvalCache | None = None, jobs: int = 1,
                           scratch_dir=None) -> StabilityReport:
    """Full evaluation: build the (metric x video x amplitude x rate) grid,
    then normalize, integrate and score.

    `perturbations` maps metric name -> trained Perturbation. Grid errors
    propagate with their cell coordinates attached; a partial grid never
    silently averages over holes.
    """
    cache = cache or EvalCache(None)
    names = [m.descriptor.name for m in cfg.target_metrics]
    if len(set(names)) != len(names):
        raise ParameterError(f"duplicate metric names in config: {names}")
    for name in names:
        if name not in perturbations:
            raise ParameterError(f"no perturbation supplied for {name!r}")

    pristine_keys = {vid: video_hash(video) for vid, video in cfg.videos}

    # Build cells: one per (metric, video, variant); each covers all rates.
    cells = []
    for metric in cfg.target_metrics:
        name = metric.descriptor.name
        pert = perturbations[name]
        for vid, video in cfg.videos:
            for amp in (None, *cfg.amplitudes):
                cells.append((metric, name, pert, vid, video, amp))

    def eval_cell(cell):
        metric, name, pert, vid, video, amp = cell
        tag = f"metric={name}, video={vid}, amplitude={amp}"
        try:
            if amp is None:
                variant = video
                variant_key = pristine_keys[vid]
            else:
                scaled = scale_to_amplitude(pert, amp)
                variant = VideoFrames(
                    tuple(apply_perturbation(f, scaled)
                          for f in video.frames),
                    video.rate_num, video.rate_den,
                )
                variant_key = video_hash(variant)
            points = [
                _cell_points(metric, variant, video, variant_key,
                             pristine_keys[vid], spec, cache, cfg.proxy_cap,
                             scratch_dir)
                for spec in cfg.rate_points
            ]
            points.sort(key=lambda p: p[0])
            try:
                target_curve = RDCurve(
                    tuple((b, t) for b, t, _ in points), vid, name, amp
                )
                proxy_curve = RDCurve(
                    tuple((b, x) for b, _, x in points), vid, "psnr", amp
                )
            except ParameterError as e:
                raise EvalGridError(str(e)) from e
            return target_curve, proxy_curve
        except UapgError as e:
            raise e.tagged(tag)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(eval_cell, cells))
    else:
        results = [eval_cell(c) for c in cells]

    target_curves: dict[str, dict] = {n: {} for n in names}
    proxy_curves: dict[str, dict] = {n: {} for n in names}
    for cell, (tc, pc) in zip(cells, results):
        _, name, _, vid, _, amp = cell
        target_curves[name][(vid, amp)] = tc
        proxy_curves[name][(vid, amp)] = pc

    # Steps 1-3: normalization
    all_proxy = [proxy_curves[n][k] for n in names
                 for k in sorted(proxy_curves[n],
                                 key=lambda k: (k[0], k[1] is not None, k[1] or 0.0))]
    proxy_norm_all, (pmin, pmax) = normalize_proxy_curves(all_proxy)
    proxy_norm_map: dict[str, dict] = {n: {} for n in names}
    idx = 0
    for n in names:
        for k in sorted(proxy_curves[n],
                        key=lambda k: (k[0], k[1] is not None, k[1] or 0.0)):
            proxy_norm_map[n][k] = proxy_norm_all[idx]
            idx += 1

    evaluations: dict[str, MetricEvaluation] = {}
    dependences: dict[str, list] = {}
    vid_ids = [vid for vid, _ in cfg.videos]
    for metric in cfg.target_metrics:
        name = metric.descriptor.name
        keys = sorted(target_curves[name],
                      key=lambda k: (k[0], k[1] is not None, k[1] or 0.0))
        raw = [target_curves[name][k] for k in keys]
        norm, (tmin, tmax) = normalize_target_curves(raw)
        norm_map = dict(zip(keys, norm))

        # Steps 4-5: per-video areas over the common bitrate range
        gains: dict = {}
        losses: dict = {}
        per_video = []
        for vid in vid_ids:
            base_t = norm_map[(vid, None)]
            base_p = proxy_norm_map[name][(vid, None)]
            for amp in cfg.amplitudes:
                tag = f"metric={name}, video={vid}, amplitude={amp}"
                try:
                    g = gain(norm_map[(vid, amp)], base_t)
                    l = proxy_loss(proxy_norm_map[name][(vid, amp)], base_p)
                except UapgError as e:
                    raise e.tagged(tag)
                gains[(vid, amp)] = g
                losses[(vid, amp)] = l
                per_video.append({
                    "video": vid, "amplitude": amp,
                    "target_gain": g, "proxy_loss": l,
                })
        # Step 6-7: dependence
        dep = build_dependence(gains, losses, vid_ids, cfg.amplitudes)
        dependences[name] = dep
        evaluations[name] = MetricEvaluation(
            name=name, target_min=tmin, target_max=tmax,
            target_raw=raw, target_norm=norm,
            proxy_raw=[proxy_curves[name][k] for k in keys],
            proxy_norm=[proxy_norm_map[name][k] for k in keys],
            per_video=per_video, dependence=dep,
        )

    scores, interval = stability_score(dependences)
    for name, score in scores.items():
        evaluations[name].stability = score
    return StabilityReport(
        proxy_min=pmin, proxy_max=pmax, proxy_cap=cfg.proxy_cap,
        common_interval=interval, metrics=evaluations,
    )


# ---------------------------------------------------------------------------
# Report serialization
# ---------------------------------------------------------------------------

def _curve_dict(c: RDCurve) -> dict:
    return {
        "video": c.video,
        "metric": c.metric,
        "amplitude": c.amplitude,
        "points": [[b, s] for b, s in c.points],
    }


def report_to_dict(report: StabilityReport) -> dict:
    metrics = {}
    for name, ev in report.metrics.items():
        metrics[name] = {
            "target_min": ev.target_min,
            "target_max": ev.target_max,
            "stability_score": ev.stability,
            "target_curves": [_curve_dict(c) for c in ev.target_raw],
            "target_curves_normalized": [_curve_dict(c)
                                         for c in ev.target_norm],
            "proxy_curves": [_curve_dict(c) for c in ev.proxy_raw],
            "proxy_curves_normalized": [_curve_dict(c)
                                        for c in ev.proxy_norm],
            "per_video": ev.per_video,
            "dependence": [
                {"amplitude": d.amplitude, "proxy_loss": d.proxy_loss,
                 "target_gain": d.target_gain}
                for d in ev.dependence
            ],
        }
    return {
        "schema": REPORT_SCHEMA,
        "proxy": {
            "name": "psnr",
            "cap_db": report.proxy_cap,
            "colorspace": "rgb (BT.601 full-range from YCbCr)",
            "loss_sign": PROXY_LOSS_SIGN,
            "min": report.proxy_min,
            "max": report.proxy_max,
        },
        "common_proxy_loss_interval": list(report.common_interval),
        "config": report.config,
        "metrics": metrics,
    }


def report_to_json(report: StabilityReport) -> str:
    doc = report_to_dict(report)
    validate_report(doc)
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def validate_report(doc: dict) -> None:
    """Check a report dict against the published uapg-report/1 schema."""
    import jsonschema

    from .report_schema import REPORT_SCHEMA_V1

    jsonschema.validate(doc, REPORT_SCHEMA_V1)


def _fmt(x) -> str:
    return repr(float(x))


def report_csvs(report_dict: dict) -> dict:
    """CSV exports from a report dict: raw RD points, dependence points and
    the stability-score table. Returns {filename: text}."""
    rd_lines = ["metric,video,amplitude,bitrate,target_score,proxy_score"]
    dep_lines = ["metric,amplitude,proxy_loss,target_gain"]
    score_lines = ["metric,stability_score"]
    metrics = report_dict["metrics"]
    for name in sorted(metrics):
        entry = metrics[name]
        proxy_by_key = {
            (c["video"], c["amplitude"]): c for c in entry["proxy_curves"]
        }
        for c in entry["target_curves"]:
            pc = proxy_by_key[(c["video"], c["amplitude"])]
            amp = "" if c["amplitude"] is None else _fmt(c["amplitude"])
            for (b, t), (_, p) in zip(c["points"], pc["points"]):
                rd_lines.append(
                    f"{name},{c['video']},{amp},{_fmt(b)},{_fmt(t)},{_fmt(p)}"
                )
        for d in entry["dependence"]:
            dep_lines.append(
                f"{name},{_fmt(d['amplitude'])},{_fmt(d['proxy_loss'])},"
                f"{_fmt(d['target_gain'])}"
            )
    ranked = sorted(metrics.items(),
                    key=lambda kv: -kv[1]["stability_score"])
    for name, entry in ranked:
        score_lines.append(f"{name},{_fmt(entry['stability_score'])}")
    return {
        "rd_points.csv": "\n".join(rd_lines) + "\n",
        "dependence.csv": "\n".join(dep_lines) + "\n",
        "stability_scores.csv": "\n".join(score_lines) + "\n",
    }
