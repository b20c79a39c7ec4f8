"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`NoukError`.
Validation-type errors map to CLI exit code 2, numerical ones to exit code 3.
"""


class NoukError(Exception):
    exit_code = 3


class ParseError(NoukError):
    exit_code = 2

    def __init__(self, line, message):
        self.line = line
        self.message = message
        super().__init__(f"line {line}: {message}")


class ValidationError(NoukError):
    exit_code = 2


class UnsupportedOrder(NoukError):
    exit_code = 2


class NotSeparable(NoukError):
    exit_code = 2


class MethodUnavailable(NoukError):
    exit_code = 2


class UnsupportedFunction(NoukError):
    exit_code = 2


class DegenerateDiffusion(NoukError):
    def __init__(self, mode):
        self.mode = mode
        super().__init__(f"b_{mode}(t0) = 0: direction space undefined at mode {mode}")


class IntegratorFailure(NoukError):
    pass


class NotSmoothing(NoukError):
    def __init__(self, modes):
        self.modes = tuple(int(m) for m in modes)
        listed = ", ".join(str(m) for m in self.modes)
        super().__init__(f"smoothing fails: zero covariance along transported mode(s) {listed}")


class KernelComponent(NoukError):
    def __init__(self, index):
        self.index = int(index)
        super().__init__(f"vector has a component along kernel direction {self.index}")


class RankDeficient(NoukError):
    pass


class RangeError(NoukError):
    pass


class DivergentSingularity(NoukError):
    pass


class DegenerateFit(NoukError):
    pass
