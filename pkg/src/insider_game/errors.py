"""Exception hierarchy shared by every module.

Each error carries a stable ``code`` used as the CLI exit status and a short
``label`` printed in ``ERROR <label>: <detail>`` lines.
"""


class GameError(Exception):
    code = 1
    label = "GameError"

    def detail(self):
        return str(self)


class InputError(GameError):
    code = 9
    label = "InvalidInput"


class ConstraintViolation(InputError):
    label = "ConstraintViolation"

    def __init__(self, name, t=None, value=None, message=""):
        self.name = name
        self.t = t
        self.value = value
        where = "" if t is None else f" at t={t:g}"
        val = "" if value is None else f" (value={value!r})"
        extra = f": {message}" if message else ""
        super().__init__(f"{name}{where}{val}{extra}")


class ParseError(InputError):
    label = "ParseError"

    def __init__(self, line, message):
        self.line = line
        self.message = message
        super().__init__(f"line {line}: {message}")


class UnknownKey(InputError):
    label = "UnknownKey"

    def __init__(self, key):
        self.key = key
        super().__init__(f"unknown key {key!r}")


class DomainError(InputError):
    label = "DomainError"


class ModeMismatch(GameError):
    code = 2
    label = "ModeMismatch"

    def __init__(self, message, nearest=None):
        self.nearest = nearest
        hint = f" (nearest supported mode: {nearest})" if nearest else ""
        super().__init__(message + hint)


class UnsupportedInsider(ModeMismatch):
    label = "UnsupportedInsider"


class ExperimentalFeature(ModeMismatch):
    label = "ExperimentalFeature"


class AdmissibilityBreach(GameError):
    code = 3
    label = "AdmissibilityBreach"

    def __init__(self, path, t, what=""):
        self.path = path
        self.t = t
        super().__init__(f"path {path} at t={t:g}{': ' + what if what else ''}")


class GeneratorBreach(AdmissibilityBreach):
    label = "GeneratorBreach"


class ShootingDiverged(GameError):
    code = 4
    label = "ShootingDiverged"


class RegressionIllConditioned(GameError):
    code = 4
    label = "RegressionIllConditioned"


class NestedMCBudgetExceeded(GameError):
    code = 4
    label = "NestedMCBudgetExceeded"


class NoBracket(GameError):
    code = 5
    label = "NoBracket"


class SingularConfiguration(GameError):
    code = 6
    label = "SingularConfiguration"


class GridTooCoarse(GameError):
    code = 7
    label = "GridTooCoarse"
