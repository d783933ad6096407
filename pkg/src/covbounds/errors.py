"""Exception and warning types raised across the package."""


class CovBoundsError(Exception):
    """Base class for all package errors."""


class PartitionError(CovBoundsError):
    pass


class UnobservedVariableError(CovBoundsError):
    def __init__(self, variables):
        self.variables = tuple(variables)
        names = ", ".join(str(v + 1) for v in self.variables)
        super().__init__(f"variables observed in no block: {names}")


class ConsistencyError(CovBoundsError):
    pass


class NotPSDError(CovBoundsError):
    def __init__(self, min_eigenvalue):
        self.min_eigenvalue = float(min_eigenvalue)
        super().__init__(f"matrix is not PSD (lambda_min={self.min_eigenvalue:.6g})")


class NotSymmetricError(CovBoundsError):
    pass


class SingularBlockError(CovBoundsError):
    def __init__(self, block, condition=None):
        self.block = block
        self.condition = condition
        msg = f"ill-conditioned covariance block {block}"
        if condition is not None:
            msg += f" (condition number {condition:.3g})"
        super().__init__(msg)


class InfeasibleCompletionError(CovBoundsError):
    pass


class StepUnderflowError(CovBoundsError):
    pass


class MaxInnerIterError(CovBoundsError):
    pass


class LikelihoodDecreaseError(CovBoundsError):
    pass


class DomainError(CovBoundsError, ValueError):
    pass


class NoFeasiblePointError(CovBoundsError):
    pass


class BoundaryError(CovBoundsError):
    pass


class SpecInfeasibleError(CovBoundsError):
    pass


class DesignInfeasibleError(CovBoundsError):
    pass


class MissingArtifactError(CovBoundsError):
    pass


class MaxIterWarning(UserWarning):
    pass
