from typing import Optional, Sequence, Tuple


class MemauditError(Exception):
    pass


class ConfigurationError(MemauditError):
    pass


class InvalidDatasetError(ConfigurationError):
    pass


class InvalidPlanError(ConfigurationError):
    pass


class DimensionMismatchError(ConfigurationError, ValueError):
    def __init__(self, expected: int, got: int, what: str = 'observation'):
        super().__init__(f'{what} has dimension {got}, expected {expected}')
        self.expected = expected
        self.got = got


class NumericError(MemauditError, ValueError):
    pass


class FitError(MemauditError):
    def __init__(
        self,
        message: str,
        family: Optional[str] = None,
        coordinates: Optional[Tuple[int, int]] = None,
    ):
        if coordinates is not None:
            message = f'{message} (fold {coordinates})'
        super().__init__(message)
        self.family = family
        self.coordinates = coordinates


class PartialTableError(MemauditError):
    def __init__(self, failed: Sequence[Tuple[int, int]]):
        super().__init__(
            f'log-probability table is partial, failed fits: {list(failed)}; '
            'pass force=True to aggregate the surviving fits'
        )
        self.failed = tuple(failed)


class FormatError(MemauditError, ValueError):
    pass


class ReportFormatError(FormatError):
    pass


class ReportVersionError(ReportFormatError):
    def __init__(self, found, supported: int):
        super().__init__(f'unsupported report version {found!r}, expected {supported}')
        self.found = found
        self.supported = supported
