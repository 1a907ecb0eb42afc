"""Exceptions raised by sig_recognition."""


class SigRecognitionError(Exception):
    pass


class InputError(SigRecognitionError, ValueError):
    """Malformed or inconsistent input."""


class DimensionMismatchError(InputError):
    pass


class UnreachableGoalError(InputError):
    pass


class SamplingError(SigRecognitionError):
    """Fewer distinct trajectories than requested were found within the attempt budget."""

    def __init__(self, message, found=0, trajectories=None):
        super().__init__(message)
        self.found = found
        self.trajectories = trajectories or []


class EpisodeTerminated(SigRecognitionError):
    """An observation matched a goal state, so the episode is over."""

    def __init__(self, timestep, goal, posterior=None):
        super().__init__(f"Observation at t={timestep} reached goal {goal!r}")
        self.timestep = timestep
        self.goal = goal
        self.posterior = posterior


class ValidationViolation(SigRecognitionError):
    pass
