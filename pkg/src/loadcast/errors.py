"""Exception hierarchy shared across the package.

Every error the library raises derives from LoadcastError so the CLI can
map failures to stable exit codes.
"""


class LoadcastError(Exception):
    pass


# -- data ingestion / preprocessing --------------------------------------

class MalformedRow(LoadcastError):
    pass


class GapTooLarge(LoadcastError):
    pass


class NonHourlySpacing(LoadcastError):
    pass


class EmptyFile(LoadcastError):
    pass


class BoundaryOutOfRange(LoadcastError):
    pass


class DegenerateRange(LoadcastError):
    pass


class SeriesTooShort(LoadcastError):
    pass


# -- model construction / execution --------------------------------------

class ShapeMismatch(LoadcastError):
    pass


class KernelLargerThanInput(ShapeMismatch):
    pass


class WindowLargerThanInput(ShapeMismatch):
    pass


class MissingForwardCache(LoadcastError):
    pass


# -- training / evaluation ------------------------------------------------

class LengthMismatch(LoadcastError):
    pass


class EmptyDataset(LoadcastError):
    pass


class DivergedLoss(LoadcastError):
    pass


class NormMissing(LoadcastError):
    pass


class UnknownReference(LoadcastError):
    pass


class ConfigError(LoadcastError):
    pass
