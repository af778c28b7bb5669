"""Small argument checks used by the functional API and the estimators."""
import numbers

import numpy as np

from .errors import ConfigurationError, InvalidInputError


def check_positive_int(value, name, error=InvalidInputError):
    if isinstance(value, (bool, np.bool_)) or not isinstance(value, numbers.Integral):
        raise error(f"{name} must be an integer, got {value!r}")
    if value < 1:
        raise error(f"{name} must be positive, got {value}")
    return int(value)


def check_nonnegative_real(value, name, error=ConfigurationError):
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise error(f"{name} must be a real number, got {value!r}")
    if not np.isfinite(value) or value < 0:
        raise error(f"{name} must be finite and nonnegative, got {value}")
    return float(value)


def check_uint8_image(pixels):
    """Return ``pixels`` as a C-contiguous (H, W, 3) uint8 array."""
    arr = np.asarray(pixels)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InvalidInputError(f"expected an (H, W, 3) pixel array, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidInputError(f"image must be non-empty, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if not np.issubdtype(arr.dtype, np.integer) or arr.min() < 0 or arr.max() > 255:
            raise InvalidInputError("pixel values must be 8-bit unsigned integers")
        arr = arr.astype(np.uint8)
    return np.ascontiguousarray(arr)


def check_finite(array, name, error=InvalidInputError):
    if not np.all(np.isfinite(array)):
        raise error(f"{name} contains non-finite entries")
    return array
