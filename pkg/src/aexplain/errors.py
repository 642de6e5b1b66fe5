"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class AExplainError(Exception):
    """Base class for domain errors (CLI exit status 1)."""


# -- series ingestion -------------------------------------------------------


class MalformedRow(AExplainError):
    def __init__(self, row: int, reason: str) -> None:
        super().__init__(f"row {row}: {reason}")
        self.row = row
        self.reason = reason


class NonMonotonicTime(AExplainError):
    def __init__(self, row: int, reason: str = "timestamp not strictly increasing") -> None:
        super().__init__(f"row {row}: {reason}")
        self.row = row


class EmptyInput(AExplainError):
    pass


# -- constraints --------------------------------------------------------------


class SchemaError(AExplainError):
    pass


class DomainArityError(SchemaError):
    pass


class MissingSensor(AExplainError):
    pass


class InsufficientWindow(AExplainError):
    pass


# -- knowledge ----------------------------------------------------------------


class KnowledgeError(AExplainError):
    pass


class EmptyExactSet(KnowledgeError):
    pass


class OverlapError(KnowledgeError):
    pass


class DanglingConstraint(UserWarning):
    """A representation names a constraint the active catalog lacks."""


# -- matching / explanation ---------------------------------------------------


class ConstraintMismatch(AExplainError):
    pass


class NotACandidate(AExplainError):
    pass


class UncoverableFeatures(AExplainError):
    def __init__(self, uncovered) -> None:
        super().__init__(f"{len(uncovered)} explicable feature(s) have no coverer")
        self.uncovered = tuple(uncovered)


class InstanceTooLarge(AExplainError):
    pass


class Infeasible(AExplainError):
    pass


class UnknownBaseline(AExplainError):
    pass


class KindMismatch(AExplainError):
    pass


# -- harness ------------------------------------------------------------------


class GenerationFailure(AExplainError):
    pass


class UnknownEvent(AExplainError):
    pass
