"""sRGB to CIELAB conversion (D65 white point, 2-degree observer).

Input channels are sRGB in [0, 1]; output L is in [0, 100], a/b roughly in
[-128, 127]. Vectorized over arbitrary leading dimensions.
"""

import numpy as np

# sRGB (linear) -> XYZ, D65
_RGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])

# D65 reference white, taken as the matrix image of (1,1,1) so that pure white
# maps to exactly L=100, a=b=0
_WHITE = _RGB_TO_XYZ.sum(axis=1)

_DELTA = 6.0 / 29.0


def srgb_to_linear(c: np.ndarray) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    return np.where(c > 0.04045, ((c + 0.055) / 1.055) ** 2.4, c / 12.92)


def rgb_to_lab(rgb: np.ndarray) -> np.ndarray:
    """Convert (..., 3) sRGB values in [0, 1] to CIELAB."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.shape[-1] != 3:
        raise ValueError(f"last axis must be 3 channels, got shape {rgb.shape}")
    xyz = srgb_to_linear(rgb) @ _RGB_TO_XYZ.T
    t = xyz / _WHITE
    f = np.where(t > _DELTA ** 3, np.cbrt(t), t / (3 * _DELTA ** 2) + 4.0 / 29.0)
    lab = np.empty_like(rgb)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab
