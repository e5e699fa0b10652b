"""Exception hierarchy shared by all masskit modules."""


class MasskitError(Exception):
    """Base class for every error raised by masskit."""


class NonPositiveDefinite(MasskitError):
    pass


class DerivativeBlowup(MasskitError):
    pass


class GridMismatch(MasskitError):
    pass


class InsufficientSlices(MasskitError):
    pass


class DecayViolation(MasskitError):
    pass


class NonConvergent(MasskitError):
    pass


class NonPositiveArea(MasskitError):
    pass


class ParabolicityLost(MasskitError):
    pass


class LapseBlowup(MasskitError):
    pass


class StepUnderflow(MasskitError):
    pass


class PreconditionViolated(MasskitError):
    pass


class BridgeDegenerate(MasskitError):
    pass


class DeltaTooLarge(MasskitError):
    pass


class KernelInvalid(MasskitError):
    pass


class SolverDiverged(MasskitError):
    pass


class QuadratureUnderResolved(MasskitError):
    pass


class NonPositiveFactor(MasskitError):
    pass


class NotInExtensionClass(MasskitError):
    pass


class DegenerateInput(MasskitError):
    pass


class StageError(MasskitError):
    """Wraps an error raised inside one pipeline stage."""

    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


class SnapshotFormatError(MasskitError):
    pass
