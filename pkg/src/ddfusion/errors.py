"""Exception types shared across the package."""


class StructuralError(ValueError):
    """A request is inconsistent with the graph/variable structure."""


class NumericalError(RuntimeError):
    """A linear-algebra operation failed or is too ill-conditioned.

    ``condition`` carries an estimate of the offending condition number
    when one is available.
    """

    def __init__(self, msg, condition=None):
        super().__init__(msg)
        self.condition = condition


class NegativeInformationError(NumericalError):
    """Fusion removed more information than the receiving robot holds.

    This indicates broken conservativeness bookkeeping; runs abort rather
    than clamp.
    """
