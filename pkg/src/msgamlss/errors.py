"""Exception hierarchy shared across the package."""

from __future__ import annotations


class MSGamlssError(Exception):
    """Base class for all errors raised by :mod:`msgamlss`."""

    kind = "error"

    def record(self) -> dict:
        """Machine-readable form used by the CLI error channel."""
        return {"error": self.kind, "type": type(self).__name__, "message": str(self)}


class DomainError(MSGamlssError, ValueError):
    """Parameter or response outside the family's domain or support."""

    kind = "rejected-input"


class DegeneracyError(MSGamlssError, RuntimeError):
    """The estimation problem degenerated (empty state, singular chain)."""

    kind = "estimation-degeneracy"


class DegenerateLearnerError(MSGamlssError, ValueError):
    """A base-learner cannot be fitted on the given covariate."""

    kind = "degenerate-base-learner"


class NoCandidateError(MSGamlssError, ValueError):
    """Every candidate base-learner for a parameter is degenerate."""

    kind = "no-candidate"


class ConfigError(MSGamlssError, ValueError):
    kind = "config"


class DataError(MSGamlssError, ValueError):
    kind = "data"
