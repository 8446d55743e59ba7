"""Exception taxonomy shared by the whole toolkit.

Every exception carries an ``exit_code`` so the CLI can map failures onto its
stable exit-code contract: 0 ok, 2 config, 3 metric/bridge, 4 evaluation
grid, 5 codec.
"""

from __future__ import annotations


class UapgError(Exception):
    exit_code = 1

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.details = details
        self.grid_tag: str | None = None

    def tagged(self, tag: str) -> "UapgError":
        """Attach evaluation-grid coordinates to an error propagating out of
        a grid cell, preserving the original class (and exit code)."""
        self.grid_tag = tag
        return self

    def __str__(self) -> str:
        base = super().__str__()
        if self.grid_tag:
            return f"{base} [grid cell: {self.grid_tag}]"
        return base


class ConfigError(UapgError):
    exit_code = 2


class ParameterError(ConfigError):
    """A value outside an operation's documented domain."""


class ShapeError(ConfigError):
    """Array dimensions do not agree with what the operation requires."""


class FormatError(ConfigError):
    """Malformed input file. ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int | None = None, **details):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message, offset=offset, **details)
        self.offset = offset


class DegeneratePerturbationError(ConfigError):
    """All-zero perturbation cannot be rescaled to an amplitude."""


class MetricError(UapgError):
    exit_code = 3


class CapabilityError(MetricError):
    """The metric does not support the requested operation (e.g. gradients)."""


class BridgeError(MetricError):
    """External-metric transport failure. ``retryable`` is True when the
    request may be reissued (e.g. after respawning the bridge process)."""

    def __init__(self, message: str, retryable: bool = False, **details):
        super().__init__(message, retryable=retryable, **details)
        self.retryable = retryable


class EvalGridError(UapgError):
    exit_code = 4


class DegenerateMetricError(EvalGridError):
    """The metric is constant over the dataset; min/max normalization is
    undefined."""


class NoOverlapError(EvalGridError):
    """Two RD curves share no bitrate range."""


class IncompleteGridError(EvalGridError):
    """A (video, amplitude) cell is missing from the evaluation grid."""


class IntervalError(EvalGridError):
    """The metrics' proxy-loss ranges have an empty common interval."""


class CodecError(UapgError):
    exit_code = 5

    def __init__(self, message: str, diagnostics: str = "", **details):
        super().__init__(message, **details)
        self.diagnostics = diagnostics
