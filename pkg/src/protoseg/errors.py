"""Exception hierarchy. Everything raised on bad input derives from ProtosegError
so the CLI can map it to a usage/input failure (exit code 2)."""


class ProtosegError(Exception):
    """Base class for contract violations on inputs, specs, and files."""


class ShapeError(ProtosegError):
    """Arrays that must be congruent are not, or a requested shape is invalid."""


class ClassNotInEpisodeError(ProtosegError):
    """A class id outside the episode's class set was requested."""


class EmptyClassError(ProtosegError):
    """Every available support slice has an empty mask for the class."""


class BankError(ProtosegError):
    """Prototype bank construction left a class without any prototype."""


class KernelTooLargeError(ProtosegError):
    """An extractor kernel or patch does not fit inside the slice."""


class SpecError(ProtosegError):
    """A phantom spec, episode spec, or config violates its invariants."""


class FormatError(ProtosegError):
    """A serialized file does not conform to the VOLRAW/MASKRAW/FEATVOL framing."""
