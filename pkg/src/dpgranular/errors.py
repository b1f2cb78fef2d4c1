"""Exception hierarchy shared by every module."""


class DPGranularError(Exception):
    """Base class for all errors raised by the package."""


# privacy_space
class CapExceeded(DPGranularError):
    """Enumeration would produce more members than the configured cap."""


class EmptyUniverse(DPGranularError):
    """A class was requested over a universe with no records."""


class UnsupportedClass(DPGranularError):
    """The requested granularity is undefined for the class members."""


class OrderedUnsupported(DPGranularError):
    """A multiset-only operation was applied to an ordered class."""


class NotInClass(DPGranularError):
    """A database is not a member of the class it was looked up in."""


class InvalidRelation(DPGranularError):
    """A neighbour relation is not symmetric or not irreflexive."""


class InvalidMetric(DPGranularError):
    """A distance matrix violates the metric axioms it was declared with."""


# metric_calculus
class NegativeScale(DPGranularError):
    """A metric was scaled by a negative factor."""


class ClassMismatch(DPGranularError):
    """Two objects that must live over the same class do not."""


# composition
class FlavorMismatch(DPGranularError):
    """A guarantee of the wrong flavour was supplied."""


class DependencyFlagMissing(DPGranularError):
    """A common-domain rule was applied to a step not marked dependent."""


class NotASubsetMap(DPGranularError):
    """A partition block is not a sub-multiset of its source database."""


class PreconditionFailed(DPGranularError):
    """A composition rule precondition does not hold; ``condition`` names which one."""

    def __init__(self, condition: str, detail: str = ""):
        self.condition = condition
        self.detail = detail
        super().__init__(f"{condition}: {detail}" if detail else condition)


class NeedTwoBlocks(DPGranularError):
    """The bounded parallel rule needs at least two blocks."""


# variants
class DomainError(DPGranularError):
    """A numeric argument lies outside its admissible domain."""


# mechanism_lab
class RangeTooSmall(DPGranularError):
    """A truncation window does not cover every query value."""


class OutcomeCapExceeded(DPGranularError):
    """A product output space would exceed the outcome cap."""


class PrefixMismatch(DPGranularError):
    """An adaptive kernel does not cover the prefixes produced before it."""


class NotATuple(DPGranularError):
    """Component diagnosis was requested for a non-product output space."""


# cli
class ConfigError(DPGranularError):
    """Base class for configuration problems."""


class ParseError(ConfigError):
    """The configuration could not be parsed or has an invalid field."""

    def __init__(self, message: str, *, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)


class UnresolvedReference(ConfigError):
    """A configuration entry refers to a name that is never defined."""

    def __init__(self, name: str, kind: str = "reference"):
        self.name = name
        self.kind = kind
        super().__init__(f"unresolved {kind} {name!r}")


class SchemaVersionMismatch(ConfigError):
    """The configuration declares an unsupported schema version."""


class CacheCorrupt(DPGranularError):
    """A cache file failed its digest check."""
