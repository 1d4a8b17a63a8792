"""Exception types shared across the package.

Two failure families are distinguished: configuration errors (bad settings,
missing models, invalid vocabulary tokens) and contract errors (arguments
that violate an operation's preconditions, e.g. shape mismatches).
"""


class LayerforgeError(Exception):
    pass


class ConfigurationError(LayerforgeError, ValueError):
    """Invalid configuration value or missing required resource."""


class ContractError(LayerforgeError, ValueError):
    """An argument violates an operation's precondition."""


class TrainingError(LayerforgeError, RuntimeError):
    """Training diverged or produced non-finite losses."""
