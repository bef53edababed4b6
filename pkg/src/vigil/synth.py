"""Deterministic synthetic data: class-coded driver images and landmark traces.

Each distraction class is drawn as its own geometric motif (shape plus rough
position) over a noisy background, so a small CNN can separate the classes
without access to any private image corpus.
"""

from __future__ import annotations

import numpy as np

from .fatigue import LandmarkFrame

# class list of the five-behaviour distraction benchmark
DEFAULT_CLASSES = (
    "safe_driving",
    "texting_left_hand",
    "talking_on_the_phone_left_hand",
    "texting_right_hand",
    "talking_on_the_phone_right_hand",
)

# the ten-class distracted-driver taxonomy (c0..c9)
SFDDD_CLASSES = (
    "safe_driving", "texting_right", "talking_on_the_phone_right", "texting_left",
    "talking_on_the_phone_left", "operating_the_radio", "drinking", "reaching_behind",
    "hair_and_makeup", "talking_to_passenger",
)


def _disc(yy, xx, cy, cx, r):
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def _box(yy, xx, y0, x0, h, w):
    return (yy >= y0) & (yy < y0 + h) & (xx >= x0) & (xx < x0 + w)


def _motif(cls, size, rng):
    """Boolean mask of the motif for class index ``cls`` (cycled over 5 shapes)."""
    s = size
    yy, xx = np.mgrid[0:s, 0:s]
    j = lambda: rng.uniform(-0.08, 0.08) * s  # noqa: E731  position jitter
    kind = cls % 5
    if kind == 0:  # disc, centre
        return _disc(yy, xx, 0.5 * s + j(), 0.5 * s + j(), rng.uniform(0.14, 0.2) * s)
    if kind == 1:  # filled square, lower left
        side = rng.uniform(0.25, 0.33) * s
        return _box(yy, xx, 0.55 * s + j(), 0.12 * s + j(), side, side)
    if kind == 2:  # horizontal bar, upper half
        return _box(yy, xx, 0.22 * s + j(), 0.2 * s + j(), rng.uniform(0.09, 0.13) * s, rng.uniform(0.5, 0.6) * s)
    if kind == 3:  # vertical bar, right
        return _box(yy, xx, 0.2 * s + j(), 0.68 * s + j(), rng.uniform(0.5, 0.6) * s, rng.uniform(0.09, 0.13) * s)
    # plus sign, lower right
    cy, cx = 0.66 * s + j(), 0.62 * s + j()
    arm, thick = rng.uniform(0.14, 0.18) * s, rng.uniform(0.06, 0.09) * s
    return (_box(yy, xx, cy - thick, cx - arm, 2 * thick, 2 * arm)
            | _box(yy, xx, cy - arm, cx - thick, 2 * arm, 2 * thick))


def render_image(cls, size, rng, num_classes=5):
    """One ``size x size x 3`` uint8 image of class ``cls``.

    Classes beyond the fifth reuse a motif with a class-specific tint band so
    every class stays distinct.
    """
    base = rng.uniform(20, 90, size=3)
    img = base + rng.normal(0, 12, size=(size, size, 3))
    mask = _motif(cls, size, rng)
    color = rng.uniform(150, 255, size=3)
    if cls >= 5:
        band = (cls // 5) * max(2, size // 8)
        img[:band] = 230
    img[mask] = color + rng.normal(0, 8, size=(int(mask.sum()), 3))
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def generate_images(num_classes, per_class, size, seed):
    """Yield ``(class_index, item_index, image)`` deterministically, class by class."""
    for cls in range(num_classes):
        rng = np.random.default_rng([seed, cls])
        for i in range(per_class):
            yield cls, i, render_image(cls, size, rng, num_classes)


# -- landmark traces ----------------------------------------------------------------

_EYE_TEMPLATE = np.array([[0, 0], [1.5, -1.0], [3.5, -1.0], [5, 0], [3.5, 1.0], [1.5, 1.0]])


def face_landmarks(eye_open=1.0, mouth_open=0.0, offset=(100.0, 100.0), scale=4.0):
    """A stylised 68-point face.

    ``eye_open`` scales the eyelid gap (1.0 gives EAR ~0.4, 0 closes the eye);
    ``mouth_open`` scales the inner-lip gap (1.0 gives MAR ~0.8).
    """
    pts = np.zeros((68, 2))
    # jaw 1-17, brows 18-27, nose 28-36: a simple contour so every point is distinct
    t = np.linspace(-1.2, 1.2, 17)
    pts[0:17] = np.stack([10 * np.sin(t) + 10, 12 * np.cos(t) + 4], axis=1)
    pts[17:27] = np.stack([np.linspace(3, 17, 10), np.full(10, -3.0)], axis=1)
    pts[27:36] = np.stack([np.r_[np.full(4, 10.0), np.linspace(8, 12, 5)],
                           np.r_[np.linspace(-1, 3, 4), np.full(5, 4.5)]], axis=1)
    for start, x0 in ((36, 3.0), (42, 12.0)):
        eye = _EYE_TEMPLATE.copy()
        eye[:, 1] *= eye_open
        pts[start:start + 6] = eye + [x0, 0.0]
    # outer lips 49-60
    a = np.linspace(0, 2 * np.pi, 12, endpoint=False)
    pts[48:60] = np.stack([10 - 4 * np.cos(a), 8 + (1.5 + mouth_open * 1.6) * np.sin(a)], axis=1)
    # inner lips 61-68: corners 61 and 65, upper 62-64, lower 66-68
    gap = 2.4 * mouth_open
    pts[60] = [7.0, 8.0]
    pts[64] = [13.0, 8.0]
    pts[61:64] = [[8.5, 8 - gap], [10.0, 8 - gap], [11.5, 8 - gap]]
    pts[65:68] = [[11.5, 8 + gap], [10.0, 8 + gap], [8.5, 8 + gap]]
    return pts * scale + np.asarray(offset)


def landmark_trace(n_frames, seed, closed_prob=0.1, fps=30.0, jitter_ms=0, yawn_prob=0.0):
    """Frames with eyes closed for random stretches and optional yawns."""
    rng = np.random.default_rng(seed)
    frames = []
    ts = 0
    closed = False
    yawning = 0
    for i in range(n_frames):
        if rng.random() < 0.05:
            closed = rng.random() < closed_prob
        if yawning == 0 and rng.random() < yawn_prob:
            yawning = int(rng.integers(10, 40))
        eye = 0.05 if closed else rng.uniform(0.8, 1.1)
        mouth = rng.uniform(0.9, 1.2) if yawning else rng.uniform(0.0, 0.2)
        yawning = max(0, yawning - 1)
        frames.append(LandmarkFrame(i, ts, face_landmarks(eye, mouth)))
        ts += int(round(1000.0 / fps)) + (int(rng.integers(0, jitter_ms + 1)) if jitter_ms else 0)
    return frames
