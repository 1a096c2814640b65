"""Exception types shared across the library."""


class ArgumentError(ValueError):
    """A caller-supplied value is malformed (bad extent, rate, label, flag)."""


class DimensionError(ValueError):
    """Shapes or extents of otherwise well-formed arguments do not line up."""


class DegenerateMaskError(ValueError):
    """A mask row forbids every position, so no distribution can be formed."""


class DivergenceError(RuntimeError):
    """Training produced non-finite losses or gradients."""
