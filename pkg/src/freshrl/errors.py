"""Exception types shared across the package.

UsageError covers caller mistakes (bad arguments, calls out of order),
ConfigError covers invalid configuration (unknown env id, bad flag combos),
NumericError covers non-finite values surfacing in training.
"""


class UsageError(Exception):
    pass


class ConfigError(Exception):
    pass


class NumericError(Exception):
    pass
