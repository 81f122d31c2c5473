"""Exception taxonomy shared by all epicontrol modules.

Input-side problems (bad files, bad config, bad user values) derive from
InputError and map to CLI exit code 2; violations of internal state
invariants derive from InternalError and map to exit code 3.
"""


class EpiControlError(Exception):
    """Base class for all epicontrol errors."""


class InputError(EpiControlError):
    """A problem with user-supplied data or configuration."""


class InternalError(EpiControlError):
    """An internal invariant was violated during a run."""


class InvalidPopulation(InputError):
    """Population too small to seed an epidemic (N < 2)."""


class DateOutOfSchedule(InputError):
    """A date lookup fell outside the parameter schedule span."""


class DenominatorNonpositive(InternalError):
    """N - D - Q - H <= 0: the active mixing population vanished."""

    def __init__(self, msg: str, day: int | None = None, scenario: int | None = None):
        super().__init__(msg)
        self.day = day
        self.scenario = scenario


class MalformedCsv(InputError):
    """Mobility CSV header or row could not be interpreted."""


class RegionNotFound(InputError):
    """No rows matched the requested region in the mobility CSV."""


class GapInDates(InputError):
    """The filtered mobility series has non-contiguous dates."""


class RankDeficient(InputError):
    """Regression design matrix is numerically singular."""


class UncontrolledRunMissing(EpiControlError):
    """A ratio statistic was requested but the companion u=0 ensemble was not computed."""


class ConfigParseError(InputError):
    """Config file could not be parsed (syntax error)."""


class ConfigValidationError(InputError):
    """Config parsed but violated one or more invariants.

    Carries the full list of violations, not just the first.
    """

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = list(violations)
