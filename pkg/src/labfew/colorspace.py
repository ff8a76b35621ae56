"""sRGB <-> CIELab conversion and assembly of the 4-channel LLAB tensor.

Conventions are pinned for reproducible tests: sRGB primaries with D65
reference white, the reference white taken as the exact row sums of the
forward matrix (so white maps to L=100, a=b=0 to machine precision), and all
conversions computed in float64 before any downcast.

Array layout is channel-first: ``[..., 3, H, W]`` in, ``[..., C, H, W]`` out.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# sRGB -> XYZ (linear light), D65, 2-degree observer.
SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ],
    dtype=np.float64,
)
XYZ_TO_SRGB = np.linalg.inv(SRGB_TO_XYZ)

# Reference white = XYZ of sRGB (1,1,1): exact row sums of the matrix.
WHITE_POINT = SRGB_TO_XYZ.sum(axis=1)

_DELTA = 6.0 / 29.0
_COMPAND_THRESHOLD = 0.04045
_LINEAR_THRESHOLD = 0.0031308

NORM_MODES = ("raw", "scaled")


@dataclass
class RgbBatch:
    """B episodes of T sRGB images, values in [0, 1], layout [B,T,3,H,W]."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 5 or self.data.shape[2] != 3:
            raise ValueError(f"RgbBatch expects [B,T,3,H,W], got {self.data.shape}")
        _check_unit_range(self.data, "RgbBatch")

    @property
    def episodes(self) -> int:
        return self.data.shape[0]

    @property
    def images_per_episode(self) -> int:
        return self.data.shape[1]


@dataclass
class LlabBatch:
    """Four-channel (L, L, a, b) batches, layout [B,T,4,H,W].

    norm_mode "raw" keeps L in [0,100] and a,b in [-128,127]; "scaled"
    divides L by 100 and a,b by 128.
    """

    data: np.ndarray
    norm_mode: str = "scaled"

    def __post_init__(self):
        if self.data.ndim != 5 or self.data.shape[2] != 4:
            raise ValueError(f"LlabBatch expects [B,T,4,H,W], got {self.data.shape}")
        if self.norm_mode not in NORM_MODES:
            raise ValueError(f"norm_mode must be one of {NORM_MODES}")


def _check_unit_range(rgb: np.ndarray, what: str = "rgb") -> None:
    bad = (rgb < 0.0) | (rgb > 1.0)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ValueError(
            f"{what} value out of [0,1] at index {idx}: {rgb[idx]!r}"
        )


def srgb_to_xyz(rgb: np.ndarray) -> np.ndarray:
    """Convert sRGB-encoded values in [0,1] to linear XYZ.

    Applies the piecewise inverse companding (threshold 0.04045, gamma 2.4)
    followed by the D65 3x3 matrix.  Input layout [..., 3, H, W]; output has
    the same shape, float64.
    """
    if rgb.ndim < 3 or rgb.shape[-3] != 3:
        raise ValueError(f"expected [..., 3, H, W], got shape {rgb.shape}")
    _check_unit_range(rgb)
    c = np.asarray(rgb, dtype=np.float64)
    linear = np.where(
        c <= _COMPAND_THRESHOLD, c / 12.92, ((c + 0.055) / 1.055) ** 2.4
    )
    return np.einsum("ij,...jhw->...ihw", SRGB_TO_XYZ, linear)


def _lab_f(t: np.ndarray) -> np.ndarray:
    return np.where(t > _DELTA**3, np.cbrt(t), t / (3.0 * _DELTA**2) + 4.0 / 29.0)


def _lab_f_inv(f: np.ndarray) -> np.ndarray:
    return np.where(f > _DELTA, f**3, 3.0 * _DELTA**2 * (f - 4.0 / 29.0))


def xyz_to_lab(xyz: np.ndarray) -> np.ndarray:
    """Convert nonnegative XYZ to CIELab (L in [0,100] for in-gamut input)."""
    if xyz.ndim < 3 or xyz.shape[-3] != 3:
        raise ValueError(f"expected [..., 3, H, W], got shape {xyz.shape}")
    if (xyz < 0).any():
        idx = tuple(int(i) for i in np.argwhere(xyz < 0)[0])
        raise ValueError(
            f"negative XYZ at index {idx}: {xyz[idx]!r} (upstream conversion bug?)"
        )
    xyz = np.asarray(xyz, dtype=np.float64)
    f = _lab_f(xyz / WHITE_POINT[..., :, None, None])
    fx, fy, fz = f[..., 0, :, :], f[..., 1, :, :], f[..., 2, :, :]
    lab = np.empty_like(xyz)
    lab[..., 0, :, :] = 116.0 * fy - 16.0
    lab[..., 1, :, :] = 500.0 * (fx - fy)
    lab[..., 2, :, :] = 200.0 * (fy - fz)
    return lab


def rgb_to_lab(rgb: np.ndarray) -> np.ndarray:
    return xyz_to_lab(srgb_to_xyz(rgb))


def lab_to_rgb(lab: np.ndarray) -> np.ndarray:
    """Analytic inverse of rgb_to_lab.

    Raises if the reconstructed sRGB leaves [-1e-4, 1+1e-4] (out of gamut);
    results are clipped to [0, 1] afterwards.
    """
    if lab.ndim < 3 or lab.shape[-3] != 3:
        raise ValueError(f"expected [..., 3, H, W], got shape {lab.shape}")
    lab = np.asarray(lab, dtype=np.float64)
    l, a, b = lab[..., 0, :, :], lab[..., 1, :, :], lab[..., 2, :, :]
    fy = (l + 16.0) / 116.0
    fx = fy + a / 500.0
    fz = fy - b / 200.0
    f = np.stack([fx, fy, fz], axis=-3)
    xyz = _lab_f_inv(f) * WHITE_POINT[..., :, None, None]
    linear = np.einsum("ij,...jhw->...ihw", XYZ_TO_SRGB, xyz)
    rgb = np.where(
        linear <= _LINEAR_THRESHOLD,
        12.92 * linear,
        1.055 * np.maximum(linear, 0.0) ** (1.0 / 2.4) - 0.055,
    )
    if (rgb < -1e-4).any() or (rgb > 1.0 + 1e-4).any():
        bad = (rgb < -1e-4) | (rgb > 1.0 + 1e-4)
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ValueError(f"lab_to_rgb out of gamut at index {idx}: {rgb[idx]!r}")
    return np.clip(rgb, 0.0, 1.0)


def rgb_to_llab(
    rgb: RgbBatch | np.ndarray,
    norm_mode: str = "scaled",
    dtype=np.float32,
) -> LlabBatch:
    """Map an RGB batch through sRGB -> XYZ -> Lab and clone L into channel 0.

    Output channel order is (L, L, a, b).  With norm_mode "scaled" the two L
    channels are divided by 100 and a,b by 128 before the cast to `dtype`.
    """
    data = rgb.data if isinstance(rgb, RgbBatch) else np.asarray(rgb)
    if data.ndim != 5 or data.shape[2] != 3:
        raise ValueError(f"expected [B,T,3,H,W], got shape {data.shape}")
    if norm_mode not in NORM_MODES:
        raise ValueError(f"norm_mode must be one of {NORM_MODES}")
    lab = rgb_to_lab(data)
    l = lab[:, :, 0]
    a = lab[:, :, 1]
    b = lab[:, :, 2]
    if norm_mode == "scaled":
        l = l / 100.0
        a = a / 128.0
        b = b / 128.0
    llab = np.stack([l, l, a, b], axis=2).astype(dtype)
    return LlabBatch(data=llab, norm_mode=norm_mode)


def channel_images(lab: np.ndarray) -> dict[str, np.ndarray]:
    """Render one image's Lab channels as uint8 grayscale maps (debug dump)."""
    if lab.shape[0] != 3:
        raise ValueError(f"expected [3,H,W], got {lab.shape}")
    l = np.clip(lab[0] / 100.0, 0.0, 1.0)
    a = np.clip((lab[1] + 128.0) / 255.0, 0.0, 1.0)
    b = np.clip((lab[2] + 128.0) / 255.0, 0.0, 1.0)
    return {
        "L": (l * 255).round().astype(np.uint8),
        "a": (a * 255).round().astype(np.uint8),
        "b": (b * 255).round().astype(np.uint8),
    }
