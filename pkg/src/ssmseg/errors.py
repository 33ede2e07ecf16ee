"""Exception hierarchy with stable, module-qualified error codes.

The CLI maps these onto exit status 2 (data/validation errors) and prints
the ``code`` in its machine-readable error line.
"""


class ToolkitError(Exception):
    """Base class for all domain errors raised by this package."""

    code = "toolkit.error"

    @property
    def message(self) -> str:
        return str(self.args[0]) if self.args else ""


class MeshFormatError(ToolkitError):
    code = "mesh.format"


class LabelError(ToolkitError):
    code = "labels.invalid"


class CorrespondenceError(ToolkitError):
    code = "cohort.correspondence"


class AlignmentError(ToolkitError):
    code = "ssm.alignment"


class DimensionMismatch(ToolkitError):
    code = "core.dimension"


class ConfigError(ToolkitError):
    code = "config.invalid"


class UndefinedMetricError(ToolkitError):
    code = "eval.undefined_metric"


class MissingPredictionsError(ToolkitError):
    code = "eval.missing_predictions"

    def __init__(self, message: str, missing_ids: tuple[str, ...] = ()):
        super().__init__(message)
        self.missing_ids = tuple(missing_ids)


class TrainingError(ToolkitError):
    code = "segmenter.training"
