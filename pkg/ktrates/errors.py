class KtRatesError(Exception):
    pass


class UsageError(KtRatesError, ValueError):
    pass


class RangeError(KtRatesError, ValueError):
    pass


class DomainError(KtRatesError, ValueError):
    pass


class ResourceError(KtRatesError, RuntimeError):
    pass


class SearchFailure(KtRatesError, RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
