"""Back-projection of feature-resolution attention maps to image pixels."""
import cv2
import numpy as np

FLAT_TOLERANCE = 1e-12


def project_attention(attention, img_w, img_h):
    """Bilinearly upsample ``attention[H', W']`` and min-max scale it to uint8.

    Returns ``(image[img_h, img_w], flat)``. A constant map has no contrast
    to show, so it yields an all-zero image with ``flat=True``.
    """
    a = np.asarray(attention, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"attention map must be 2-D, got shape {a.shape}")
    lo, hi = float(a.min()), float(a.max())
    if hi - lo <= FLAT_TOLERANCE * max(1.0, abs(hi)):
        return np.zeros((img_h, img_w), dtype=np.uint8), True
    up = cv2.resize(a, (int(img_w), int(img_h)), interpolation=cv2.INTER_LINEAR)
    scaled = (up - up.min()) / (up.max() - up.min()) * 255.0
    return np.round(scaled).astype(np.uint8), False
