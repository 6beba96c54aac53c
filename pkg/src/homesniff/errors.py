"""Exception types raised across the toolkit."""


class HomesniffError(Exception):
    """Base class for all toolkit errors."""


# --- wire codec -----------------------------------------------------------

class FormatError(HomesniffError):
    """Input is not a pcap stream (bad magic)."""


class UnsupportedLinkType(HomesniffError):
    pass


class TruncatedCapture(HomesniffError):
    """A pcap record header or body ends before its declared length."""


class RadiotapError(HomesniffError):
    pass


class TruncatedHeader(RadiotapError):
    pass


class UnsupportedVersion(RadiotapError):
    pass


class MissingAddress4(HomesniffError):
    pass


class MalformedTags(HomesniffError):
    pass


class MalformedFrame(HomesniffError):
    """802.11 frame shorter than its MAC header."""


class InvalidChannel(HomesniffError):
    pass


class ParseError(HomesniffError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


# --- ble codec ------------------------------------------------------------

class MalformedAd(HomesniffError):
    def __init__(self, message: str, structures=None):
        super().__init__(message)
        # structures decoded before the fault
        self.structures = list(structures or [])


class MalformedUuidList(HomesniffError):
    pass


class MalformedManufacturer(HomesniffError):
    pass


# --- identity -------------------------------------------------------------

class RetriableLookupError(HomesniffError):
    pass


# --- analysis -------------------------------------------------------------

class InvalidRange(HomesniffError):
    pass


class InvalidParameter(HomesniffError):
    pass


class InsufficientData(HomesniffError):
    pass


class DegenerateLayout(HomesniffError):
    pass


class UndefinedDirection(HomesniffError):
    pass


class DuplicateLabel(HomesniffError):
    pass


class NoComparableReference(HomesniffError):
    pass


class RuleError(HomesniffError):
    def __init__(self, line: int, message: str):
        super().__init__(f"rule file line {line}: {message}")
        self.line = line


class GridMismatch(HomesniffError):
    pass


class ScenarioError(HomesniffError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message
