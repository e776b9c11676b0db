"""Exception types raised across the package.

Every error carries the name of the subsystem that raised it so the CLI can
print module-tagged messages.
"""


class SlamError(Exception):
    module = "somaslam"

    def __init__(self, message: str = "", *, module: str | None = None):
        super().__init__(message)
        if module is not None:
            self.module = module

    def __str__(self) -> str:
        return f"[{self.module}] {super().__str__()}"


class InvalidArgumentError(SlamError, ValueError):
    module = "core"


class ParseError(SlamError, ValueError):
    module = "datasetio"

    def __init__(self, message: str, path=None, line_number: int | None = None):
        where = "" if path is None else str(path)
        if line_number is not None:
            where += f":{line_number}" if where else f"line {line_number}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line_number = line_number


class ValidationError(ParseError):
    pass


class OptimizationError(SlamError, RuntimeError):
    module = "optimizer"


class EvaluationError(SlamError, RuntimeError):
    module = "evaluation"


class ConfigError(SlamError, ValueError):
    module = "cli"
