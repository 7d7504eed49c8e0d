"""Exception hierarchy shared across the package.

Every error raised by paramstudy derives from :class:`StudyError` so callers
(CLI, service) can map failures to exit codes / HTTP statuses in one place.
"""


class StudyError(Exception):
    """Base class for all paramstudy errors."""


# --- study model / parsing ---------------------------------------------------

class UnrecognizedTemplate(StudyError):
    """Prompt text matches neither the analysis nor the optimization template."""


class MalformedRange(StudyError):
    """A parsed range has lower >= upper."""


class MissingTarget(StudyError):
    """A near/below goal clause carries no numeric target."""


class SchemaError(StudyError):
    """Study file violates the schema; message carries the field path."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class ValidationError(StudyError):
    """A structural invariant of the study model is violated."""


# --- sampling ----------------------------------------------------------------

class DegenerateRange(StudyError):
    """lower >= upper where a proper interval is required."""


class ZeroNominal(StudyError):
    """Cannot derive a default range around a zero nominal value."""


# --- backend -----------------------------------------------------------------

class UnresolvedToken(StudyError):
    """A template token has no value to substitute."""

    def __init__(self, token: str, file: str):
        self.token = token
        self.file = file
        super().__init__(f"token @{{{token}}} in {file} has no value")


class NoMatch(StudyError):
    """QoI extraction found no matching file or pattern."""


class NonNumericCapture(StudyError):
    """The regex capture is not parseable as a number."""


class EmptyColumn(StudyError):
    """The CSV aggregate column has no numeric entries."""


class InsufficientData(StudyError):
    """Too few successful runs to fit anything."""


# --- surrogates --------------------------------------------------------------

class RankDeficient(StudyError):
    """Design matrix is rank-deficient or too ill-conditioned to solve."""


class DuplicateAbscissae(StudyError):
    """Fewer than two distinct x values in a 1-D fit."""


# --- active subspace ---------------------------------------------------------

class ZeroGradient(StudyError):
    """OLS coefficient vector is (numerically) zero; no direction exists."""


class EigenNoConvergence(StudyError):
    """Jacobi rotations did not reduce off-diagonal mass within the sweep budget."""


class BootstrapDegenerate(StudyError):
    """More than half of the bootstrap resamples were rank-deficient."""


# --- optimization ------------------------------------------------------------

class UnsupportedGoal(StudyError):
    """Goal kind cannot be compiled into a plain objective."""


class ValidationUnavailable(StudyError):
    """The validation run at the optimum could not be completed."""
