"""Input checks shared by the estimator wrappers."""
import numpy as np
from sklearn.utils.validation import check_array

from .errors import InvalidArgumentError
from .tensor import DTYPE


def check_images(X, name="X", channels=3, multiple_of=1):
    """Coerce to a float32 ``(N, C, H, W)`` batch with values in [0, 1].

    A single ``(C, H, W)`` image is promoted to a batch of one.
    """
    if isinstance(X, (list, tuple)) and X and np.ndim(X[0]) == 3:
        shapes = {np.shape(x) for x in X}
        if len(shapes) != 1:
            raise InvalidArgumentError(f"{name}: images have different shapes {sorted(shapes)}")
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=[np.float32, np.float64],
                    input_name=name)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4:
        raise InvalidArgumentError(f"{name}: expected (N,C,H,W) images, got shape {X.shape}")
    if X.shape[1] != channels:
        raise InvalidArgumentError(f"{name}: expected {channels} channels, got {X.shape[1]}")
    if X.min() < 0.0 or X.max() > 1.0:
        raise InvalidArgumentError(f"{name}: pixel values must lie in [0, 1]")
    if multiple_of > 1 and (X.shape[2] % multiple_of or X.shape[3] % multiple_of):
        raise InvalidArgumentError(
            f"{name}: spatial size {X.shape[2:]} not divisible by {multiple_of}"
        )
    return np.ascontiguousarray(X, dtype=DTYPE)


def check_rows(X, name="X"):
    return check_array(X, dtype=np.float64, input_name=name)
