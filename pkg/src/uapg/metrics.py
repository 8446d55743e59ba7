"""Metric abstraction, built-in differentiable toy scorers, a
finite-difference gradient oracle and the client for bridged external
metrics.

Built-in weights come from compile-time seeds so scores are identical across
processes and refactors. All built-ins are pure: scoring never mutates the
handle beyond its evaluation counters.
"""

from __future__ import annotations

import base64
import json
import shlex
import subprocess
import threading
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import BridgeError, CapabilityError, ConfigError, ShapeError
from .imaging import ImageTensor

LINEAR_SEED = 0x11EA7
TINYCONV_SEED = 0x7C0DE
NOISEGUARD_WEIGHT = 25.0  # keeps 100 - k*mean|lap| inside [0, 100]


@dataclass(frozen=True)
class MetricDescriptor:
    """Name, nominal score range and capabilities of a scorer.

    `score_hi` doubles as the normalization constant of the training loss,
    keeping loss values O(1) across metrics."""

    name: str
    score_lo: float
    score_hi: float
    supports_gradient: bool
    kind: str  # "built-in" | "external"

    def __post_init__(self):
        if not self.name:
            raise ConfigError("metric name must be non-empty")
        if not self.score_lo < self.score_hi:
            raise ConfigError(
                f"score range invalid: [{self.score_lo}, {self.score_hi}]"
            )


class EvalCounters:
    """Running tally of semantic metric evaluations (thread-safe)."""

    def __init__(self):
        self._lock = threading.Lock()
        self.score_calls = 0
        self.gradient_calls = 0

    def add(self, score: int = 0, gradient: int = 0) -> None:
        with self._lock:
            self.score_calls += score
            self.gradient_calls += gradient

    @property
    def total(self) -> int:
        return self.score_calls + self.gradient_calls


def _as_array(img) -> np.ndarray:
    if isinstance(img, ImageTensor):
        return img.data
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3:
        raise ShapeError(f"metric input must be (H, W, C), got {arr.shape}")
    return arr


class Metric:
    """Uniform handle: descriptor plus score/gradient over (H, W, C) rasters.

    Accepts ImageTensor or a bare array; bare arrays are evaluated as-is
    (no [0, 1] clamping), which is what the training loss and the
    finite-difference oracle rely on.
    """

    descriptor: MetricDescriptor

    def __init__(self):
        self.counters = EvalCounters()

    def score(self, image) -> float:
        arr = _as_array(image)
        self.counters.add(score=1)
        return float(self._score(arr))

    def gradient(self, image) -> np.ndarray:
        self._require_gradient()
        arr = _as_array(image)
        self.counters.add(gradient=1)
        return self._gradient(arr)

    def score_and_gradient(self, image) -> tuple[float, np.ndarray]:
        """One forward pass worth of both outputs where the scorer can fuse
        them; counted as one score plus one gradient evaluation."""
        self._require_gradient()
        arr = _as_array(image)
        self.counters.add(score=1, gradient=1)
        return self._score_and_gradient(arr)

    def _require_gradient(self) -> None:
        if not self.descriptor.supports_gradient:
            raise CapabilityError(
                f"metric {self.descriptor.name!r} does not provide gradients"
            )

    # subclass surface
    def _score(self, arr: np.ndarray) -> float:
        raise NotImplementedError

    def _gradient(self, arr: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _score_and_gradient(self, arr: np.ndarray):
        return float(self._score(arr)), self._gradient(arr)


class MeanScorer(Metric):
    """score = 100 * mean pixel value. Gameable by construction: any
    positive field raises it."""

    def __init__(self):
        super().__init__()
        self.descriptor = MetricDescriptor("mean", 0.0, 100.0, True, "built-in")

    def _score(self, arr):
        return 100.0 * float(arr.mean())

    def _gradient(self, arr):
        return np.full_like(arr, 100.0 / arr.size)


class LinearScorer(Metric):
    """score = 100 * <w, x> / n with fixed seeded signed weights.

    Weight magnitudes are drawn from [0.25, 1] so every element's gradient
    is bounded away from zero and box-constrained ascent saturates the whole
    field. Weights are generated per input shape from the same seed.
    """

    def __init__(self):
        super().__init__()
        self.descriptor = MetricDescriptor(
            "linear", -100.0, 100.0, True, "built-in"
        )
        self._cache: dict[tuple, np.ndarray] = {}
        self._lock = threading.Lock()

    def weights(self, shape: tuple) -> np.ndarray:
        key = tuple(int(s) for s in shape)
        with self._lock:
            w = self._cache.get(key)
            if w is None:
                rng = np.random.default_rng(
                    np.random.SeedSequence([LINEAR_SEED, *key])
                )
                mag = rng.uniform(0.25, 1.0, size=key)
                sign = rng.integers(0, 2, size=key) * 2 - 1
                w = sign * mag
                w.flags.writeable = False
                self._cache[key] = w
        return w

    def _score(self, arr):
        w = self.weights(arr.shape)
        return 100.0 * float(np.vdot(w, arr)) / arr.size

    def _gradient(self, arr):
        return 100.0 * self.weights(arr.shape) / arr.size


def _conv2d_same(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """3x3 stride-1 correlation with zero padding. x (H,W,Cin),
    w (3,3,Cin,Cout), b (Cout,)."""
    h, wd = x.shape[:2]
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    out = np.zeros((h, wd, w.shape[3])) + b
    for di in range(3):
        for dj in range(3):
            out += xp[di:di + h, dj:dj + wd, :] @ w[di, dj]
    return out


def _conv2d_same_input_grad(dout: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Gradient of _conv2d_same w.r.t. its input."""
    h, wd = dout.shape[:2]
    q = np.pad(dout, ((1, 1), (1, 1), (0, 0)))
    dx = np.zeros((h, wd, w.shape[2]))
    for di in range(3):
        for dj in range(3):
            dx += q[2 - di:2 - di + h, 2 - dj:2 - dj + wd, :] @ w[di, dj].T
    return dx


class TinyConvScorer(Metric):
    """Fixed-seed 2-layer CNN: conv 3->8, ReLU, conv 8->4, ReLU, global
    average pool, affine, sigmoid * 100.

    A genuinely nonlinear scorer with a non-constant gradient, small enough
    to attack on a laptop. Backprop is analytic (no autodiff dependency).
    """

    W1_STD = 0.5
    W2_STD = 0.35
    HEAD_STD = 1.5
    # centers the pre-sigmoid activation near 0 for typical unit-interval
    # noise (pooled head input sits near -2 for this seed)
    HEAD_BIAS = 2.0

    def __init__(self):
        super().__init__()
        self.descriptor = MetricDescriptor(
            "tinyconv", 0.0, 100.0, True, "built-in"
        )
        rng = np.random.default_rng(np.random.SeedSequence(TINYCONV_SEED))
        self.w1 = rng.normal(0.0, self.W1_STD, (3, 3, 3, 8))
        self.b1 = rng.normal(0.0, 0.1, 8)
        self.w2 = rng.normal(0.0, self.W2_STD, (3, 3, 8, 4))
        self.b2 = rng.normal(0.0, 0.1, 4)
        self.head_w = rng.normal(0.0, self.HEAD_STD, 4)
        self.head_b = self.HEAD_BIAS
        for a in (self.w1, self.b1, self.w2, self.b2, self.head_w):
            a.flags.writeable = False

    def _forward(self, arr, want_grad: bool):
        if arr.shape[2] != 3:
            raise ShapeError("tinyconv expects 3-channel input")
        a1 = _conv2d_same(arr, self.w1, self.b1)
        h1 = np.maximum(a1, 0.0)
        a2 = _conv2d_same(h1, self.w2, self.b2)
        h2 = np.maximum(a2, 0.0)
        pool = h2.mean(axis=(0, 1))
        z = float(pool @ self.head_w + self.head_b)
        sig = float(expit(z))
        score = 100.0 * sig
        if not want_grad:
            return score, None
        dz = 100.0 * sig * (1.0 - sig)
        dpool = dz * self.head_w
        npix = arr.shape[0] * arr.shape[1]
        dh2 = np.broadcast_to(dpool / npix, h2.shape) * (a2 > 0.0)
        dh1 = _conv2d_same_input_grad(dh2, self.w2) * (a1 > 0.0)
        dx = _conv2d_same_input_grad(dh1, self.w1)
        return score, dx

    def _score(self, arr):
        return self._forward(arr, want_grad=False)[0]

    def _gradient(self, arr):
        return self._forward(arr, want_grad=True)[1]

    def _score_and_gradient(self, arr):
        return self._forward(arr, want_grad=True)


class NoiseGuardScorer(Metric):
    """score = 100 - k * mean |4-neighbour Laplacian|, per channel with edge
    replication. Punishes high-frequency energy, so additive noise lowers it:
    an attack-resistant reference point. No gradient (|.| kink)."""

    def __init__(self):
        super().__init__()
        self.descriptor = MetricDescriptor(
            "noiseguard", 0.0, 100.0, False, "built-in"
        )

    @staticmethod
    def _laplacian(arr: np.ndarray) -> np.ndarray:
        p = np.pad(arr, ((1, 1), (1, 1), (0, 0)), mode="edge")
        return (p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:]
                - 4.0 * arr)

    def _score(self, arr):
        return 100.0 - NOISEGUARD_WEIGHT * float(
            np.abs(self._laplacian(arr)).mean()
        )


def builtin_registry() -> dict[str, Metric]:
    """Fresh handles for every built-in scorer, keyed by name."""
    metrics = [MeanScorer(), LinearScorer(), TinyConvScorer(),
               NoiseGuardScorer()]
    return {m.descriptor.name: m for m in metrics}


def resolve_metric(spec: str) -> Metric:
    """Instantiate a metric from a CLI spec string: "builtin:<name>" or
    "external:<command line>"."""
    if spec.startswith("builtin:"):
        name = spec[len("builtin:"):]
        registry = builtin_registry()
        if name not in registry:
            raise ConfigError(
                f"unknown built-in metric {name!r}; "
                f"available: {sorted(registry)}"
            )
        return registry[name]
    if spec.startswith("external:"):
        return ExternalMetric(spec[len("external:"):])
    raise ConfigError(
        f"metric spec must start with 'builtin:' or 'external:', got {spec!r}"
    )


def finite_diff_gradient(metric: Metric, image, h: float = 1e-4) -> np.ndarray:
    """Central-difference gradient oracle.

    Perturbed inputs are evaluated without clamping so the quotient matches
    the analytic derivative at interior points.
    """
    if h <= 0:
        raise ConfigError(f"step h must be > 0, got {h}")
    base = _as_array(image).copy()
    grad = np.empty_like(base)
    flat = base.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        sp = metric.score(base)
        flat[i] = orig - h
        sm = metric.score(base)
        flat[i] = orig
        gflat[i] = (sp - sm) / (2.0 * h)
    return grad


# ---------------------------------------------------------------------------
# External (bridged) metrics
# ---------------------------------------------------------------------------

def _encode_image(arr: np.ndarray) -> dict:
    return {
        "height": int(arr.shape[0]),
        "width": int(arr.shape[1]),
        "channels": int(arr.shape[2]),
        "data": base64.b64encode(arr.astype("<f4").tobytes()).decode("ascii"),
    }


class ExternalMetric(Metric):
    """Client for a metric served by a subprocess speaking line-delimited
    JSON: ops info/score/gradient with base64 f32 raster payloads.

    One handle owns one subprocess and one serial request stream; use it
    from one thread at a time (calls are internally serialized).
    """

    def __init__(self, command: str):
        super().__init__()
        self._command = command
        self._next_id = 0
        self._io_lock = threading.Lock()
        argv = shlex.split(command)
        if not argv:
            raise ConfigError("external metric command is empty")
        try:
            self._proc = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                text=True, bufsize=1,
            )
        except OSError as e:
            raise BridgeError(
                f"cannot start bridge {command!r}: {e}", retryable=False
            ) from e
        info = self._request({"op": "info"})
        self.descriptor = MetricDescriptor(
            str(info["name"]), float(info["score_lo"]),
            float(info["score_hi"]), bool(info["supports_gradient"]),
            "external",
        )

    def _request(self, body: dict) -> dict:
        with self._io_lock:
            req_id = self._next_id
            self._next_id += 1
            req = {"id": req_id, **body}
            try:
                self._proc.stdin.write(json.dumps(req) + "\n")
                self._proc.stdin.flush()
                line = self._proc.stdout.readline()
            except (BrokenPipeError, OSError) as e:
                raise BridgeError(
                    f"bridge transport failed: {e}", retryable=True
                ) from e
        if not line:
            code = self._proc.poll()
            raise BridgeError(
                f"bridge closed its stream (exit code {code})", retryable=True
            )
        try:
            resp = json.loads(line)
        except json.JSONDecodeError as e:
            raise BridgeError(
                f"bridge sent malformed JSON: {line[:200]!r}", retryable=False
            ) from e
        if resp.get("id") != req_id:
            raise BridgeError(
                f"bridge response id {resp.get('id')} != request id {req_id}",
                retryable=False,
            )
        if not resp.get("ok", False):
            raise BridgeError(
                f"bridge error: {resp.get('error', 'unspecified')}",
                retryable=False,
            )
        return resp

    def _score(self, arr):
        resp = self._request({"op": "score", "image": _encode_image(arr)})
        return float(resp["score"])

    def _gradient(self, arr):
        resp = self._request({"op": "gradient", "image": _encode_image(arr)})
        raw = base64.b64decode(resp["gradient"])
        expected = arr.size * 4
        if len(raw) != expected:
            raise BridgeError(
                f"gradient payload is {len(raw)} bytes, expected {expected}",
                retryable=False,
            )
        return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(
            arr.shape
        )

    def close(self) -> None:
        proc = getattr(self, "_proc", None)
        if proc is None or proc.poll() is not None:
            return
        try:
            proc.stdin.close()
            proc.wait(timeout=5)
        except Exception:
            proc.kill()
            proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass
