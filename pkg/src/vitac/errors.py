"""Exception hierarchy shared by every stage of the pipeline."""


class VitacError(Exception):
    """Base class for all errors raised by this package."""


# signal preprocessing
class WindowOutOfBounds(VitacError):
    pass


class BadOffset(VitacError):
    pass


# simulator
class ThresholdUnreachable(VitacError):
    pass


# embedding network
class ShapeMismatch(VitacError):
    pass


class NonFiniteLoss(VitacError):
    def __init__(self, batch_index: int, epoch: int):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch_index}")
        self.batch_index = batch_index
        self.epoch = epoch


class GradientMismatch(VitacError):
    def __init__(self, failing: dict):
        names = ", ".join(f"{k} ({v:.3g})" for k, v in failing.items())
        super().__init__(f"gradient check failed for: {names}")
        self.failing = failing


# tactile-to-text database
class ModelMismatch(VitacError):
    pass


class KTooLarge(VitacError):
    pass


class MissingDescription(VitacError):
    pass


class CorruptFile(VitacError):
    pass


class FingerprintMismatch(VitacError):
    pass


# VLM bridge
class TemplateSlotMissing(VitacError):
    pass


class UnknownLabel(VitacError):
    pass


class VlmBackendError(VitacError):
    pass


class TransportError(VlmBackendError):
    pass


class AuthMissing(VlmBackendError):
    pass


class RateLimited(VlmBackendError):
    pass


class MalformedResponse(VlmBackendError):
    pass


# evaluation
class EmptyRecords(VitacError):
    pass


class StageError(VitacError):
    """Wraps a failure with the name of the pipeline stage that raised it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
