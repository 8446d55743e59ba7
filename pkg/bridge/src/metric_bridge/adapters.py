"""Metric adapters served over the bridge protocol.

Every adapter receives unit-interval RGB rasters shaped (H, W, C); whatever
resizing or normalization a wrapped model wants happens inside its adapter,
so clients stay metric-agnostic.

Built-ins:
  mean     scripted fake metric (100 * mean pixel) used by protocol tests
  toyconv  tiny fixed-seed torch CNN in float64, gradient via autograd

Real NR metrics (paq2piq, linearity, vsfa, mdtvsfa, koncept512, nima, spaq)
load lazily and need their weights installed; see BRIDGE README for the
per-metric fetch instructions. A generic "module:pkg.mod:factory" spec loads
a user-supplied adapter factory for anything else.
"""

from __future__ import annotations

import importlib

import numpy as np


class AdapterError(RuntimeError):
    pass


class AdapterUnavailable(AdapterError):
    """The adapter exists but its model/weights are not installed."""


class MeanPixelAdapter:
    """100 * mean pixel value; matches the toolkit's built-in MeanScorer."""

    name = "mean"
    score_lo = 0.0
    score_hi = 100.0
    supports_gradient = True

    def score(self, arr: np.ndarray) -> float:
        return 100.0 * float(arr.mean())

    def gradient(self, arr: np.ndarray) -> np.ndarray:
        return np.full_like(arr, 100.0 / arr.size)


class ToyConvAdapter:
    """Fixed-seed conv->ReLU->pool->affine->sigmoid scorer in float64.

    Small enough for wire-level finite-difference checks on 8x8 crops;
    double precision keeps the difference quotient clean.
    """

    name = "toyconv"
    score_lo = 0.0
    score_hi = 100.0
    supports_gradient = True
    SEED = 20240

    def __init__(self, device: str = "cpu"):
        try:
            import torch
        except ImportError as e:
            raise AdapterUnavailable(
                "toyconv needs torch (pip install torch)"
            ) from e
        self._torch = torch
        torch.manual_seed(self.SEED)
        try:
            torch.use_deterministic_algorithms(True)
        except Exception:
            pass
        self._device = torch.device(device)
        self._conv = torch.nn.Conv2d(3, 4, 3, padding=1).double()
        self._head = torch.nn.Linear(4, 1).double()
        self._conv.to(self._device)
        self._head.to(self._device)
        for p in self._conv.parameters():
            p.requires_grad_(False)
        for p in self._head.parameters():
            p.requires_grad_(False)

    def _forward(self, x):
        torch = self._torch
        h = torch.relu(self._conv(x))
        pooled = h.mean(dim=(2, 3))
        z = self._head(pooled)
        return 100.0 * torch.sigmoid(z).squeeze()

    def _to_tensor(self, arr: np.ndarray):
        chw = np.moveaxis(arr, 2, 0)[None]  # (1, C, H, W)
        return self._torch.tensor(chw, dtype=self._torch.float64,
                                  device=self._device)

    def score(self, arr: np.ndarray) -> float:
        if arr.shape[2] != 3:
            raise AdapterError("toyconv expects 3 channels")
        with self._torch.no_grad():
            return float(self._forward(self._to_tensor(arr)))

    def gradient(self, arr: np.ndarray) -> np.ndarray:
        if arr.shape[2] != 3:
            raise AdapterError("toyconv expects 3 channels")
        x = self._to_tensor(arr).requires_grad_(True)
        self._forward(x).backward()
        grad = x.grad[0].detach().cpu().numpy()
        return np.moveaxis(grad, 0, 2)


class PyiqaAdapter:
    """Wraps a pyiqa model (pip install pyiqa downloads weights on first
    use). Input transform: unit-interval RGB -> NCHW float32, resized by the
    model's own preprocessing."""

    supports_gradient = True

    def __init__(self, model_name: str, score_lo: float, score_hi: float,
                 device: str = "cpu"):
        try:
            import pyiqa
            import torch
        except ImportError as e:
            raise AdapterUnavailable(
                f"{model_name} needs pyiqa and torch: pip install pyiqa"
            ) from e
        self._torch = torch
        self.name = model_name
        self.score_lo = score_lo
        self.score_hi = score_hi
        self._device = torch.device(device)
        self._model = pyiqa.create_metric(
            model_name, device=self._device, as_loss=True
        )

    def _to_tensor(self, arr: np.ndarray):
        chw = np.moveaxis(arr, 2, 0)[None]
        return self._torch.tensor(chw, dtype=self._torch.float32,
                                  device=self._device)

    def score(self, arr: np.ndarray) -> float:
        with self._torch.no_grad():
            return float(self._model(self._to_tensor(arr)))

    def gradient(self, arr: np.ndarray) -> np.ndarray:
        x = self._to_tensor(arr).requires_grad_(True)
        self._model(x).backward()
        grad = x.grad[0].detach().cpu().numpy()
        return np.moveaxis(grad, 0, 2).astype(np.float64)


def _module_factory(path: str, device: str):
    """Load "module:pkg.mod:factory"; the factory gets the device string and
    returns an adapter object (name/score range/score/gradient)."""
    mod_name, _, attr = path.partition(":")
    if not mod_name or not attr:
        raise AdapterError(
            f"module spec must look like pkg.mod:factory, got {path!r}"
        )
    module = importlib.import_module(mod_name)
    factory = getattr(module, attr)
    return factory(device)


# The published nominal ranges double as loss-normalization constants on the
# client side; pyiqa model names in parentheses where one exists.
_REAL_METRICS = {
    "paq2piq": ("paq2piq", 0.0, 100.0),
    "koncept512": ("koncept512", 0.0, 100.0),
    "nima": ("nima", 0.0, 10.0),
    "linearity": (None, 0.0, 100.0),
    "spaq": (None, 0.0, 100.0),
    "vsfa": (None, 0.0, 1.0),
    "mdtvsfa": (None, 0.0, 1.0),
}

_REPO_HINTS = {
    "linearity": "https://github.com/lidq92/LinearityIQA",
    "spaq": "https://github.com/h4nwei/SPAQ",
    "vsfa": "https://github.com/lidq92/VSFA",
    "mdtvsfa": "https://github.com/lidq92/MDTVSFA",
}


def load_adapter(spec: str, device: str = "cpu"):
    if spec == "mean":
        return MeanPixelAdapter()
    if spec == "toyconv":
        return ToyConvAdapter(device)
    if spec.startswith("module:"):
        return _module_factory(spec[len("module:"):], device)
    if spec in _REAL_METRICS:
        pyiqa_name, lo, hi = _REAL_METRICS[spec]
        if pyiqa_name is not None:
            return PyiqaAdapter(pyiqa_name, lo, hi, device)
        hint = _REPO_HINTS.get(spec, "its reference repository")
        raise AdapterUnavailable(
            f"{spec} has no pyiqa backend; install the reference model from "
            f"{hint} and expose it via --metric module:<pkg.mod:factory> "
            "(see README)"
        )
    raise AdapterError(
        f"unknown metric {spec!r}; built-ins: mean, toyconv; real metrics: "
        f"{sorted(_REAL_METRICS)}; or module:<pkg.mod:factory>"
    )
