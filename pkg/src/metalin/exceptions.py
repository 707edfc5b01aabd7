"""Exception types raised across the package."""

import numpy as np


class MetalinError(Exception):
    """Base class for all library-specific failures."""


class InvalidDimensionError(MetalinError, ValueError):
    """A dimension argument is zero, negative, or inconsistent."""


class InvalidSplitError(MetalinError, ValueError):
    """A train/validation split would leave one side empty."""


class NotPositiveDefiniteError(MetalinError, np.linalg.LinAlgError):
    """A matrix required to be symmetric positive definite is not."""


class UnderdeterminedError(MetalinError, np.linalg.LinAlgError):
    """The aggregate weight system of a meta-fit is singular."""


class DegenerateTaskPoolError(MetalinError, np.linalg.LinAlgError):
    """The mean population weight over a task pool is singular."""


class UnsupportedRegimeError(MetalinError, ValueError):
    """An operation was requested under a task regime it is not valid for."""


class ConfigError(MetalinError, ValueError):
    """An experiment configuration is malformed."""
