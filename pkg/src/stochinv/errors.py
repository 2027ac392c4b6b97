"""Exception hierarchy shared by all stochinv modules."""


class StochinvError(Exception):
    """Base class for all errors raised by this package."""


class InvalidParameterError(StochinvError):
    """A numeric or structural parameter is out of its legal range."""


class InvalidArgumentError(StochinvError):
    """Arguments are individually fine but mutually inconsistent."""


class StructureDefinitionError(StochinvError):
    """A structure definition violated the recursion contract
    (bad partition, non-shrinking key set, double-masked partition)."""


class InvalidTraceError(StochinvError):
    """A trace cannot have been produced by the given definition."""


class InfeasibleGraphError(StochinvError):
    """The input graph admits no structure of the requested kind."""


class InstanceTooLargeError(StochinvError):
    """Exhaustive enumeration exceeded its trace cap."""

    def __init__(self, cap, reached):
        super().__init__(
            f"enumeration exceeded the cap of {cap} traces "
            f"(at least {reached} found)"
        )
        self.cap = cap
        self.reached = reached


class InvalidControlVariateError(StochinvError):
    """A control variate failed its gradient self-test."""
