"""Exception hierarchy shared by the library and the CLI.

Each category carries the exit code the CLI returns when it escapes a stage.
"""


class StcosError(Exception):
    exit_code = 1


class ConfigError(StcosError, ValueError):
    """Invalid configuration or parameter outside its domain."""

    exit_code = 2


class DataError(StcosError, ValueError):
    """Input data cannot be used as given."""

    exit_code = 3


class InvalidGeometryError(DataError):
    pass


class GeoJSONParseError(DataError):
    def __init__(self, feature_index: int, reason: str):
        super().__init__(f"feature {feature_index}: {reason}")
        self.feature_index = feature_index


class IngestError(DataError):
    def __init__(self, row_index: int, reason: str):
        super().__init__(f"row {row_index}: {reason}")
        self.row_index = row_index


class ZeroOverlapError(DataError):
    def __init__(self, area_id: str, against: str = "the other domain"):
        super().__init__(f"area {area_id!r} has zero overlap with {against}")
        self.area_id = area_id


class NumericalError(StcosError, ArithmeticError):
    exit_code = 4


class NotPositiveDefiniteError(NumericalError):
    pass


class RankDeficientError(NumericalError):
    pass


class SingularDegreeError(NumericalError):
    """An isolated vertex makes the degree matrix singular."""
