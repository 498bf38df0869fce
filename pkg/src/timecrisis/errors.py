"""Exception types shared across the package."""


class TimeCrisisError(Exception):
    """Base class for all package-specific errors."""


class BlowupError(TimeCrisisError):
    """State became nonfinite during integration."""

    def __init__(self, time: float):
        self.time = time
        super().__init__(f"nonfinite state encountered at t = {time:.6g}")


class NonTransverseError(TimeCrisisError):
    """Trajectory touches the crisis-set boundary tangentially, or a crossing
    lacks the transversality needed by the certificate construction."""


class StructureError(TimeCrisisError):
    """Crossing structure is inconsistent (non-alternating directions,
    mismatched counts, invalid crossing vector)."""
