"""Exception hierarchy shared by the heap, schemes, and solver."""


class HavenError(Exception):
    """Base class for every error raised by the havens library."""


class CreateFailed(HavenError):
    pass


class OutOfMemory(HavenError):
    pass


class InvalidHaven(HavenError):
    pass


class DanglingHandle(HavenError):
    pass


class BoundsError(HavenError, IndexError):
    pass


class LiveReferences(HavenError):
    pass


class Uncorrectable(HavenError):
    pass


class ProtectionRelaxed(HavenError):
    """Scrub requested on a haven whose protection is switched off."""


class BadInput(HavenError, ValueError):
    pass


class ParseError(BadInput):
    pass


class NotSymmetric(BadInput):
    pass


class ConfigError(HavenError, ValueError):
    pass
