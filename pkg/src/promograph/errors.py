"""Exception hierarchy shared across the toolkit."""


class PromographError(Exception):
    """Base class for all toolkit errors."""


class SelfPromotionError(PromographError):
    """An app cannot promote itself."""


class EmptyGraphError(PromographError):
    pass


class IoError(PromographError):
    pass


class ParseError(PromographError):
    def __init__(self, line: int, reason: str = ""):
        self.line = line
        super().__init__(f"malformed input at line {line}" + (f": {reason}" if reason else ""))


class SnapshotVersionError(PromographError):
    pass


class NoReportsError(PromographError):
    pass


class ConfigError(PromographError):
    pass


class AppNotFoundError(PromographError):
    pass


class WidgetNotFoundError(PromographError):
    pass


class NoPackageError(PromographError):
    """Market URL without a usable package id."""


class ExternalDestination(PromographError):
    """Redirect landed outside a known app market. Recorded, not fatal."""

    def __init__(self, url: str):
        self.url = url
        super().__init__(url)


class EmbeddingMissingError(PromographError):
    pass


class TrainError(PromographError):
    pass


class CvError(PromographError):
    pass


class MutationError(PromographError):
    pass


class PretrainError(PromographError):
    pass


class NodeNotFoundError(PromographError):
    pass


class EntityNotFoundError(PromographError):
    pass


class SplitError(PromographError):
    pass


class ChiSquareError(PromographError):
    pass
