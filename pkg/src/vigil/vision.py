"""8-bit images: PPM/PGM codec, resampling, denoising, lighting and augmentation.

An image is a ``uint8`` array of shape ``(height, width, channels)`` with one
or three channels. All operations return new arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import configtext
from .errors import ConfigurationError, FormatError, RangeError

DEFAULT_MEAN = (0.5, 0.5, 0.5)
DEFAULT_STD = (0.5, 0.5, 0.5)


class UnsupportedFormatError(FormatError):
    """Well-formed header describing a variant this codec does not handle."""


def as_image(img):
    img = np.asarray(img)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3) or min(img.shape[:2]) < 1:
        raise ConfigurationError(f"expected an H x W x {{1,3}} image, got shape {img.shape}")
    if img.dtype != np.uint8:
        if img.size and (img.min() < 0 or img.max() > 255):
            raise RangeError("pixel values must lie in [0, 255]")
        img = img.astype(np.uint8)
    return img


def _round_half_up(x):
    return np.floor(np.asarray(x, np.float64) + 0.5)


def _to_u8(x):
    return np.clip(_round_half_up(x), 0, 255).astype(np.uint8)


# -- codec -----------------------------------------------------------------------------

def encode_ppm(img) -> bytes:
    """Binary P6 for three channels, P5 for one; maxval 255."""
    img = as_image(img)
    h, w, c = img.shape
    magic = b"P6" if c == 3 else b"P5"
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(img).tobytes()


def decode_ppm(data: bytes):
    data = bytes(data)
    if data[:2] not in (b"P5", b"P6"):
        raise FormatError(f"bad magic {data[:2]!r}, expected P5 or P6", offset=0)
    channels = 3 if data[:2] == b"P6" else 1
    pos = 2
    fields = []
    while len(fields) < 3:
        if pos >= len(data):
            raise FormatError("truncated header", offset=pos)
        ch = data[pos:pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            end = data.find(b"\n", pos)
            if end < 0:
                raise FormatError("truncated header comment", offset=pos)
            pos = end + 1
        else:
            start = pos
            while pos < len(data) and data[pos:pos + 1].isdigit():
                pos += 1
            if start == pos:
                raise FormatError(f"unexpected byte {ch!r} in header", offset=pos)
            fields.append((int(data[start:pos]), start))
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise FormatError("header must end with a single whitespace byte", offset=pos)
    pos += 1
    (w, _), (h, h_at), (maxval, max_at) = fields
    if w < 1 or h < 1:
        raise FormatError(f"bad image size {w} x {h}", offset=h_at)
    if maxval != 255:
        raise UnsupportedFormatError(f"maxval {maxval} unsupported; only 255", offset=max_at)
    need = w * h * channels
    if len(data) - pos < need:
        raise FormatError(f"truncated payload: need {need} bytes, have {len(data) - pos}", offset=len(data))
    if len(data) - pos > need:
        raise FormatError(f"{len(data) - pos - need} trailing bytes after payload", offset=pos + need)
    return np.frombuffer(data, np.uint8, need, pos).reshape(h, w, channels).copy()


def read_image(path):
    with open(path, "rb") as fh:
        return decode_ppm(fh.read())


def write_image(path, img):
    with open(path, "wb") as fh:
        fh.write(encode_ppm(img))


# -- geometry -------------------------------------------------------------------------

@dataclass(frozen=True)
class AffineMap:
    """Maps output pixel coordinates to input coordinates: ``src = M @ (x, y, 1)``.

    Constructors take the *forward* transform and store its inverse.
    """

    a: float = 1.0
    b: float = 0.0
    tx: float = 0.0
    c: float = 0.0
    d: float = 1.0
    ty: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.a, self.b, self.tx, self.c, self.d, self.ty)):
            raise ConfigurationError("affine map entries must be finite")

    def matrix(self):
        return np.array([[self.a, self.b, self.tx], [self.c, self.d, self.ty], [0.0, 0.0, 1.0]])

    @classmethod
    def from_matrix(cls, m):
        return cls(m[0, 0], m[0, 1], m[0, 2], m[1, 0], m[1, 1], m[1, 2])

    def then(self, other: "AffineMap") -> "AffineMap":
        """Apply this transform's forward mapping, then ``other``'s."""
        return AffineMap.from_matrix(self.matrix() @ other.matrix())

    def is_identity(self):
        return self == AffineMap()


def translation(dx, dy=0.0):
    return AffineMap(1.0, 0.0, -float(dx), 0.0, 1.0, -float(dy))


def rotation(degrees, center=(0.0, 0.0)):
    """Rotate about ``center``; with y pointing down, positive angles turn clockwise on screen."""
    t = math.radians(degrees)
    cos, sin = math.cos(t), math.sin(t)
    cx, cy = center
    a, b, c, d = cos, sin, -sin, cos
    return AffineMap(a, b, cx - (a * cx + b * cy), c, d, cy - (c * cx + d * cy))


def scaling(factor, center=(0.0, 0.0)):
    if factor <= 0:
        raise ConfigurationError(f"scale factor must be positive, got {factor}")
    inv = 1.0 / factor
    cx, cy = center
    return AffineMap(inv, 0.0, cx - inv * cx, 0.0, inv, cy - inv * cy)


def shear(sx, center=(0.0, 0.0)):
    """Horizontal shear ``x' = x + sx * (y - cy)``."""
    return AffineMap(1.0, -float(sx), float(sx) * center[1], 0.0, 1.0, 0.0)


def affine_transform(img, amap: AffineMap, fill=0):
    """Nearest-neighbour resampling at pixel centres; out-of-bounds pixels get ``fill``."""
    img = as_image(img)
    h, w, c = img.shape
    ys, xs = np.mgrid[0:h, 0:w]
    X, Y = xs + 0.5, ys + 0.5
    sx = np.floor(amap.a * X + amap.b * Y + amap.tx).astype(np.int64)
    sy = np.floor(amap.c * X + amap.d * Y + amap.ty).astype(np.int64)
    inside = (sx >= 0) & (sx < w) & (sy >= 0) & (sy < h)
    out = np.empty_like(img)
    out[...] = np.asarray(fill, np.uint8)
    out[inside] = img[sy[inside], sx[inside]]
    return out


def crop_resize(img, rect, out_w, out_h):
    """Crop ``rect = (x, y, w, h)`` then nearest-neighbour resize to ``out_w x out_h``.

    Output pixel ``ox`` samples source column ``x + floor((ox + 0.5) * w / out_w)``.
    """
    img = as_image(img)
    H, W = img.shape[:2]
    x, y, w, h = (int(v) for v in rect)
    if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > W or y + h > H:
        raise RangeError(f"crop rect {rect} outside {W} x {H} image or empty")
    if out_w < 1 or out_h < 1:
        raise RangeError(f"output size must be positive, got {out_w} x {out_h}")
    cols = x + ((2 * np.arange(out_w) + 1) * w) // (2 * out_w)
    rows = y + ((2 * np.arange(out_h) + 1) * h) // (2 * out_h)
    return img[rows[:, None], cols[None, :]]


def resize(img, out_w, out_h):
    img = as_image(img)
    return crop_resize(img, (0, 0, img.shape[1], img.shape[0]), out_w, out_h)


# -- photometric -----------------------------------------------------------------------

def adjust_brightness(img, delta):
    img = as_image(img)
    return np.clip(img.astype(np.int32) + int(delta), 0, 255).astype(np.uint8)


def gaussian_kernel(sigma):
    if sigma <= 0:
        raise ConfigurationError(f"sigma must be positive, got {sigma}")
    r = math.ceil(3 * sigma)
    i = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(i * i) / (2 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(img, sigma):
    """Separable Gaussian of radius ``ceil(3 sigma)`` with edge clamping."""
    img = as_image(img)
    k = gaussian_kernel(sigma)
    r = len(k) // 2
    h, w = img.shape[:2]
    x = np.pad(img.astype(np.float64), ((r, r), (r, r), (0, 0)), mode="edge")
    tmp = sum(k[i] * x[:, i:i + w] for i in range(len(k)))
    out = sum(k[i] * tmp[i:i + h] for i in range(len(k)))
    return _to_u8(out)


def median_filter(img, k):
    """Window median with edge clamping; ``k`` must be odd."""
    if k < 1 or k % 2 == 0:
        raise ConfigurationError(f"median window must be odd and positive, got {k}")
    img = as_image(img)
    r = k // 2
    x = np.pad(img, ((r, r), (r, r), (0, 0)), mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(0, 1))
    return np.median(win.reshape(*win.shape[:3], k * k), axis=-1).astype(np.uint8)


def equalize_lut(channel):
    """Lookup table ``v -> round(255 (cdf(v) - cdf_min) / (1 - cdf_min))`` in exact integers."""
    counts = np.bincount(np.asarray(channel).ravel(), minlength=256).astype(np.int64)
    cum = np.cumsum(counts)
    total = int(cum[-1])
    cmin = int(cum[np.flatnonzero(counts)[0]])
    if total == cmin:  # single grey level: nothing to spread
        return np.arange(256, dtype=np.uint8)
    span = total - cmin
    lut = (2 * 255 * (cum - cmin) + span) // (2 * span)
    return np.clip(lut, 0, 255).astype(np.uint8)


def histogram_equalize(img):
    """Classic CDF equalization, applied to each channel separately."""
    img = as_image(img)
    out = np.empty_like(img)
    for ch in range(img.shape[2]):
        out[:, :, ch] = equalize_lut(img[:, :, ch])[img[:, :, ch]]
    return out


def gamma_value(v, gamma):
    """``round(255 * (v / 255) ** gamma)`` with halves rounded up."""
    return int(_round_half_up(255.0 * (float(v) / 255.0) ** gamma))


def gamma_correct(img, gamma):
    if gamma <= 0:
        raise ConfigurationError(f"gamma must be positive, got {gamma}")
    img = as_image(img)
    lut = np.array([gamma_value(v, gamma) for v in range(256)], dtype=np.uint8)
    return lut[img]


# -- network bridge ------------------------------------------------------------------------

def image_to_tensor(img, mean=DEFAULT_MEAN, std=DEFAULT_STD):
    """``(v / 255 - mean) / std`` per channel, laid out as ``1 x C x H x W`` float32."""
    img = as_image(img)
    c = img.shape[2]
    mean = np.broadcast_to(np.asarray(mean, np.float64), (c,))
    std = np.broadcast_to(np.asarray(std, np.float64), (c,))
    if np.any(std <= 0):
        raise ConfigurationError("std must be positive")
    x = (img.astype(np.float64) / 255.0 - mean) / std
    return np.ascontiguousarray(x.transpose(2, 0, 1)[None], dtype=np.float32)


def images_to_batch(images, mean=DEFAULT_MEAN, std=DEFAULT_STD):
    return np.concatenate([image_to_tensor(im, mean, std) for im in images], axis=0)


# -- augmentation ---------------------------------------------------------------------

POLICY_KEYS = ("rot_deg", "shear_x", "scale", "trans_px", "brightness", "crop_frac")


def policy_from_config(cfg: dict) -> dict:
    """Ranges ``key -> (min, max)``. ``scale`` is a relative change (0 keeps size);
    ``crop_frac`` is the fraction of each side trimmed away (0 keeps everything)."""
    configtext.check_known(cfg, POLICY_KEYS, "augmentation policy")
    policy = {k: configtext.get_range(cfg, k) for k in POLICY_KEYS if k in cfg}
    lo, hi = policy.get("scale", (0.0, 0.0))
    if lo <= -1:
        raise ConfigurationError("scale range must stay above -1 (factor 1 + s > 0)")
    lo, hi = policy.get("crop_frac", (0.0, 0.0))
    if lo < 0 or hi >= 1:
        raise ConfigurationError("crop_frac range must lie in [0, 1)")
    return policy


def augment_sample(img, policy: dict, seed) -> np.ndarray:
    """Draw one geometric + photometric + crop chain from ``policy`` and apply it.

    Values are drawn in the fixed key order of ``POLICY_KEYS`` from a generator
    seeded with ``seed``, so the result depends only on (image, policy, seed).
    """
    img = as_image(img)
    unknown = set(policy) - set(POLICY_KEYS)
    if unknown:
        raise ConfigurationError(f"unknown policy key(s) {sorted(unknown)}")
    rng = np.random.default_rng(seed)
    draw = {}
    for key in POLICY_KEYS:
        if key in policy:
            lo, hi = policy[key]
            draw[key] = (rng.uniform(lo, hi), rng.uniform(lo, hi)) if key == "trans_px" else rng.uniform(lo, hi)
    h, w = img.shape[:2]
    center = (w / 2.0, h / 2.0)
    amap = AffineMap()
    if "rot_deg" in draw:
        amap = amap.then(rotation(draw["rot_deg"], center))
    if "scale" in draw:
        amap = amap.then(scaling(1.0 + draw["scale"], center))
    if "shear_x" in draw:
        amap = amap.then(shear(draw["shear_x"], center))
    if "trans_px" in draw:
        amap = amap.then(translation(*draw["trans_px"]))
    out = img if amap.is_identity() else affine_transform(img, amap)
    if "brightness" in draw:
        out = adjust_brightness(out, int(_round_half_up(draw["brightness"])))
    if "crop_frac" in draw and draw["crop_frac"] > 0:
        keep = 1.0 - draw["crop_frac"]
        cw, ch = max(1, int(round(keep * w))), max(1, int(round(keep * h)))
        x0 = int(rng.integers(0, w - cw + 1))
        y0 = int(rng.integers(0, h - ch + 1))
        out = crop_resize(out, (x0, y0, cw, ch), w, h)
    return out.copy()
