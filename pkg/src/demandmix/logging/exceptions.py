from typing import Any, List, Optional, Tuple


class DemandMixException(Exception):
    def __init__(self, message: str, exception: Optional[Exception] = None) -> None:
        super().__init__()
        self.message = message
        self.exception = exception

    def __str__(self) -> str:
        return f"{type(self).__name__}: {self.message}"


class InvalidInputException(DemandMixException):
    pass


class InvalidUnitException(DemandMixException):
    def __init__(self, invalid_unit: Any) -> None:
        super().__init__(
            message=(
                "Invalid units: expected a distance unit string but received"
                f" {type(invalid_unit)} ({invalid_unit})."
            ),
            exception=None,
        )


class NotPositiveDefiniteException(DemandMixException):
    def __init__(self, message: str, component: Optional[int] = None) -> None:
        super().__init__(message=message)
        self.component = component


class DomainException(DemandMixException):
    pass


class DegenerateRegionException(DemandMixException):
    def __init__(self, message: str, blocks: Optional[List[int]] = None) -> None:
        super().__init__(message=message)
        self.blocks = blocks or []


class DegenerateDataException(DemandMixException):
    pass


class ProprietyException(DemandMixException):
    pass


class SamplerException(DemandMixException):
    def __init__(
        self, message: str, iteration: int, exception: Optional[Exception] = None
    ) -> None:
        super().__init__(message=message, exception=exception)
        self.iteration = iteration

    def __str__(self) -> str:
        return f"SamplerException (iteration {self.iteration}): {self.message}"


class UnavailableForecastException(DemandMixException):
    pass


class DiagnosticException(DemandMixException):
    pass


class DegenerateScenarioException(DemandMixException):
    pass


class MalformedInputException(DemandMixException):
    def __init__(
        self, message: str, rejected: Optional[List[Tuple[int, str]]] = None
    ) -> None:
        super().__init__(message=message)
        self.rejected = rejected or []


class ArchiveVersionException(DemandMixException):
    def __init__(self, found: int, expected: int) -> None:
        super().__init__(
            message=(
                f"Draw archive format version {found} is not supported"
                f" (expected {expected})."
            )
        )
        self.found = found
        self.expected = expected


class ArchiveDecodeException(DemandMixException):
    def __init__(self, message: str, offset: int) -> None:
        super().__init__(message=f"{message} (byte offset {offset})")
        self.offset = offset


class ConfigException(DemandMixException):
    pass


class DemandMixWarning(Warning):
    def __init__(self, *args: object) -> None:
        super().__init__(*args)
