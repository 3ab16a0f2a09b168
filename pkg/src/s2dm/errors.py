class ContractError(ValueError):
    """A caller broke an operation's precondition."""


class NumericError(ArithmeticError):
    """NaN or Inf produced by a numerical routine."""


class ConfigError(ValueError):
    pass


class ParseError(ValueError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"line {line}: "
        super().__init__(where + message)
