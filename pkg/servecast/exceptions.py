"""
servecast exceptions

Every error raised on purpose by the library derives from ServecastException,
so the command line can turn them into a one-line message and exit status 1.
"""

from __future__ import annotations


class ServecastException(Exception):
    """Base class for all servecast exceptions"""


class SpecError(ServecastException):
    """A hardware, model, trace, profile or config file could not be parsed or validated"""

    def __init__(
        self,
        message: str,
        *,
        path: str | None = None,
        field: str | None = None,
        line: int | None = None,
    ) -> None:
        super().__init__(message)
        self.message = message
        self.path = path
        self.field = field
        self.line = line

    def __str__(self) -> str:
        location = ""
        if self.path is not None:
            location = str(self.path)
            if self.line is not None:
                location += f":{self.line}"
        if self.field is not None:
            location = f"{location} [{self.field}]" if location else f"[{self.field}]"
        return f"{location}: {self.message}" if location else self.message


class InvariantError(SpecError):
    """A value violates a documented invariant"""


class ConfigError(SpecError):
    """The servecast configuration file is invalid"""


class TraceError(SpecError):
    """A trace file is malformed: missing header, duplicate ids or negative lengths"""


class ModelDoesNotFitError(ServecastException):
    """The model weights do not fit into the aggregate device memory"""

    def __init__(self, model: str, hardware: str, weight_bytes: float, capacity_bytes: float) -> None:
        super().__init__(model, hardware)
        self.model = model
        self.hardware = hardware
        self.weight_bytes = weight_bytes
        self.capacity_bytes = capacity_bytes

    def __str__(self) -> str:
        return (
            f"{self.model} needs {self.weight_bytes / 1e9:.1f} GB of weights but "
            f"{self.hardware} offers {self.capacity_bytes / 1e9:.1f} GB"
        )


class ProfileError(ServecastException):
    """A latency profile is missing, unknown or evaluated out of range"""


class PipelineError(ServecastException):
    """A nano-batch split or an operation graph is invalid"""


class ScheduleError(ServecastException):
    """A unit assignment cannot be scheduled on the budget"""


class InfeasibleError(ScheduleError):
    """No candidate schedule satisfies the unit budget"""


class SimulationError(ServecastException):
    """The serving simulator was configured inconsistently"""
