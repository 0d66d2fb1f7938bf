"""Exception types shared across the package."""


class WaterlabError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(WaterlabError):
    """A value violates a documented invariant; the message names the field."""


class IntegrationDivergenceError(WaterlabError):
    """A plant integration step produced a non-finite flow."""

    def __init__(self, t: float, q: float):
        super().__init__(f"integration diverged at t={t!r} s (flow became {q!r})")
        self.t = t
        self.q = q


class FitError(WaterlabError):
    """A least-squares fit is underdetermined or rank deficient."""


class PositivityError(WaterlabError):
    """A reference signal is not strictly positive over one period."""


class ScenarioError(WaterlabError):
    """Scenario file rejected; carries the full list of problems found."""

    def __init__(self, errors: list[str]):
        super().__init__("scenario invalid:\n" + "\n".join(f"  - {e}" for e in errors))
        self.errors = list(errors)
