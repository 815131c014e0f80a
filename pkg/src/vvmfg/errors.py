class CflError(ValueError):
    """The time step is too large for a monotone / positivity-preserving update."""

    def __init__(self, message: str, admissible_dt: float):
        super().__init__(f"{message} (admissible dt <= {admissible_dt:.6g})")
        self.admissible_dt = admissible_dt


class DivergenceError(RuntimeError):
    """A solver produced a non-finite value or an inadmissible state."""
