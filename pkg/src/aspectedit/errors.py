"""Exception types shared across the editing pipeline."""


class AspectEditError(Exception):
    """Base class for all library errors."""


class InvalidArgumentError(AspectEditError, ValueError):
    """An argument violates a documented precondition."""


class ShapeError(AspectEditError, ValueError):
    """Tensor or mask shapes are incompatible."""


class InvalidScheduleError(AspectEditError, ValueError):
    """A variance/noise schedule violates its invariants (or is singular)."""


class UnknownConditioningError(AspectEditError, KeyError):
    """A conditioning label does not resolve in the backend's label map."""


class BackendError(AspectEditError, RuntimeError):
    """A noise-prediction backend failed; carries optional (branch, step) context."""

    def __init__(self, message, branch=None, step=None):
        super().__init__(message)
        self.branch = branch
        self.step = step


class SchemaError(AspectEditError, ValueError):
    """A structured document is missing a required field or has a bad type."""


class ValidationError(AspectEditError, ValueError):
    """A parsed document references out-of-range indices or inconsistent spans."""


class CompositionError(AspectEditError, ValueError):
    """Textual application of edit actions failed (index drift)."""


class MissingMaskError(AspectEditError, ValueError):
    """An edit-type rule needs an attention mask that was not supplied."""


class MissingFeatureError(AspectEditError, ValueError):
    """Cross-branch control needs self-attention features the context lacks."""


class EmptyPlanError(AspectEditError, ValueError):
    """Branch allocation was asked to run on an empty group assignment."""


class EmptyRegionError(AspectEditError, ValueError):
    """A metric was restricted to an empty mask region."""


class UnsupportedBackendError(AspectEditError, RuntimeError):
    """A metric ID requires an external adapter that is not registered."""


class InternalConsistencyError(AspectEditError, RuntimeError):
    """A recorded trace violates an engine invariant."""
