"""Exception hierarchy. ``exit_code`` is what the CLI returns for each class."""


class SentkitError(Exception):
    exit_code = 1


class DimensionError(SentkitError, ValueError):
    exit_code = 2


class InputError(SentkitError, ValueError):
    exit_code = 2


class FormatError(InputError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line


class ConfigError(SentkitError):
    exit_code = 2


class CheckpointError(SentkitError):
    exit_code = 2


class NonFiniteError(SentkitError, FloatingPointError):
    exit_code = 1


class TrainingError(SentkitError):
    exit_code = 1


class EvaluationError(SentkitError):
    exit_code = 1


class DegenerateInputError(EvaluationError):
    pass
