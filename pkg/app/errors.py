"""Exception hierarchy shared by the services and the command line.

Every error carries the process exit code the CLI returns for it.
"""


class AidError(Exception):
    exit_code = 1


class InputOutputError(AidError):
    """A file could not be read or written."""

    exit_code = 2


class InvalidInputError(AidError):
    """Input data or configuration violates a documented invariant."""

    exit_code = 3


class DuplicateSpanError(InvalidInputError):
    def __init__(self, span_id: str):
        super().__init__(f"duplicate span_id {span_id!r}")
        self.span_id = span_id


class DuplicatePairError(InvalidInputError):
    pass


class CycleError(InvalidInputError):
    def __init__(self, cycle):
        rendered = " -> ".join([edge[0] for edge in cycle] + [cycle[0][0]])
        super().__init__(f"topology contains a cycle: {rendered}")
        self.cycle = list(cycle)


class ResourceGuardError(InvalidInputError):
    pass


class InvalidArgumentError(InvalidInputError, ValueError):
    pass


class EvaluationError(AidError):
    """Predictions and labels share no candidate pair."""

    exit_code = 4
