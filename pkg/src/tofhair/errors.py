"""Exception hierarchy shared by all modules."""


class TofHairError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(TofHairError, ValueError):
    pass


class ConfigError(TofHairError):
    pass


class DataError(TofHairError):
    pass


class DegenerateSignalError(DataError):
    """All four correlation samples are equal, so no phase can be recovered."""


class EmptyRegionError(DataError):
    pass


class UnfillableRegionError(DataError):
    def __init__(self, labels):
        self.labels = list(labels)
        super().__init__(f"labeled region(s) without any valid depth: {self.labels}")


class SizeCapError(TofHairError):
    pass
