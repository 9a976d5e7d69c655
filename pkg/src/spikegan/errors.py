"""Exception types raised across the package.

Every error derives from :class:`SpikeGANError` so callers (and the CLI) can
catch the whole family at once. Most also derive from the closest builtin
so generic ``except ValueError`` handlers keep working.
"""


class SpikeGANError(Exception):
    """Base class for all package errors."""

    #: short machine-readable code used by the CLI error prefix
    code = "error"


class InvalidSpecError(SpikeGANError, ValueError):
    code = "invalid-spec"


class InvalidInputError(SpikeGANError, ValueError):
    code = "invalid-input"


class DataError(SpikeGANError, ValueError):
    code = "data"


class TooShortError(SpikeGANError, ValueError):
    code = "too-short"


class DegenerateScaleError(SpikeGANError, ValueError):
    code = "degenerate-scale"


class SplitInfeasibleError(SpikeGANError, ValueError):
    code = "split-infeasible"

    def __init__(self, partition, message=None):
        self.partition = partition
        super().__init__(message or f"split infeasible: partition {partition!r} would be empty")


class FormatError(SpikeGANError, ValueError):
    code = "format"


class CorruptionError(SpikeGANError, ValueError):
    code = "corruption"


class ShapeError(SpikeGANError, ValueError):
    code = "shape"


class DomainError(SpikeGANError, ArithmeticError):
    code = "domain"


class DegenerateBatchError(SpikeGANError, ValueError):
    code = "degenerate-batch"


class InvalidRateError(SpikeGANError, ValueError):
    code = "invalid-rate"


class ConfigurationError(SpikeGANError, ValueError):
    code = "config"


class LabelError(SpikeGANError, ValueError):
    code = "label"


class DivergenceError(SpikeGANError, FloatingPointError):
    code = "divergence"

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")


class EmptyEvaluationError(SpikeGANError, ValueError):
    code = "empty-evaluation"


class RunError(SpikeGANError, RuntimeError):
    """A Monte Carlo run failed; wraps the original error with the run index."""

    code = "run-failed"

    def __init__(self, run, cause):
        self.run = run
        self.cause = cause
        super().__init__(f"run {run} failed: {cause}")


class SearchFailureError(SpikeGANError, RuntimeError):
    code = "search-failure"

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        lines = "; ".join(f"trial {i}: {d}" for i, d in enumerate(self.diagnostics))
        super().__init__(f"all trials failed ({lines})")
