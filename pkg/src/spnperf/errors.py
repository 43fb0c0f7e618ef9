"""Exception hierarchy shared by all backends."""


class SpnError(Exception):
    """Base class for every error raised by spnperf."""


class NetValidationError(SpnError, ValueError):
    pass


class GuardSyntaxError(NetValidationError):
    def __init__(self, message: str, position: int, text: str = ""):
        self.position = position
        self.text = text
        super().__init__(f"{message} at position {position}" + (f" in {text!r}" if text else ""))


class UnknownPlaceError(NetValidationError, KeyError):
    def __init__(self, place: str):
        self.place = place
        super().__init__(f"unknown place id {place!r}")

    def __str__(self):
        return self.args[0]


class UnknownTransitionError(NetValidationError, KeyError):
    def __init__(self, transition: str):
        self.transition = transition
        super().__init__(f"unknown transition id {transition!r}")

    def __str__(self):
        return self.args[0]


class TransitionNotEnabledError(SpnError):
    pass


class VanishingLoopError(SpnError):
    pass


class StateSpaceExceededError(SpnError):
    def __init__(self, max_states: int):
        self.max_states = max_states
        super().__init__(f"state space exceeds max_states={max_states}")


class NonConvergenceError(SpnError):
    pass


class SpecError(SpnError, ValueError):
    """Invalid sweep / DoE / parameter specification."""
