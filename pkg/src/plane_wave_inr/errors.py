from __future__ import annotations


class ContractError(ValueError):
    pass


class DimensionError(ContractError):
    pass


class FormatError(ValueError):
    def __init__(self, message: str, offset: int | None = None) -> None:
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class SpecParseError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str = "") -> None:
        where = source or "<spec>"
        if line is not None:
            where = f"{where}:{line}"
        super().__init__(f"{where}: {message}")
        self.line = line
        self.source = source


class NumericalError(ArithmeticError):
    pass


class TrainingDiverged(NumericalError):
    def __init__(self, iteration: int, angle_index: int, stripe_index: int, detail: str = "") -> None:
        message = f"non-finite loss at iteration={iteration} angle_index={angle_index} stripe={stripe_index}"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)
        self.iteration = iteration
        self.angle_index = angle_index
        self.stripe_index = stripe_index


class MeasurementError(ValueError):
    def __init__(self, region: str, message: str) -> None:
        super().__init__(f"region {region!r}: {message}")
        self.region = region
