"""Procedural bonafide faces and synthesized presentation attacks.

The attacks carry one visual cue each: a white paper border and a
perspective warp (printed photo), a dark device bezel (digital photo), blur
plus a moire-like luminance ripple (replay) and a flat hard-edged patch over
the upper head (card mask). Everything is a deterministic function of the
source image and an integer seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .dataset import AttackType, DatasetManifest, Label, Sample, Split, save_manifest, split_by_subject
from .errors import EmptyImage, InvalidConfig
from .imaging import quantize, resize_bilinear, save_image

PAPER_WHITE = 1.0
BEZEL_DARK = 0.04


@dataclass(frozen=True)
class SyntheticAttackConfig:
    kind: AttackType
    seed: int = 0
    border_fraction: float = 0.1
    blur_sigma: float = 2.0
    occlusion_fraction: float = 0.35
    warp_magnitude: float = 0.03
    moire_amplitude: float = 0.05
    moire_period: float = 5.0

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", AttackType(self.kind))
        except ValueError:
            raise InvalidConfig(f"unknown attack kind {self.kind!r}") from None
        checks = [
            (self.seed >= 0, "seed must be unsigned"),
            (0.0 <= self.border_fraction <= 0.4, "border_fraction outside [0, 0.4]"),
            (self.blur_sigma >= 0.0, "blur_sigma must be >= 0"),
            (0.0 <= self.occlusion_fraction <= 1.0, "occlusion_fraction outside [0, 1]"),
            (self.warp_magnitude >= 0.0, "warp_magnitude must be >= 0"),
            (self.moire_amplitude >= 0.0, "moire_amplitude must be >= 0"),
            (self.moire_period > 0.0, "moire_period must be > 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise InvalidConfig(msg)
        values = (self.border_fraction, self.blur_sigma, self.occlusion_fraction,
                  self.warp_magnitude, self.moire_amplitude, self.moire_period)
        if not all(math.isfinite(v) for v in values):
            raise InvalidConfig("non-finite attack parameter")


# -- geometry -----------------------------------------------------------------

def _homography(src_pts: np.ndarray, dst_pts: np.ndarray) -> np.ndarray:
    """3x3 matrix mapping src_pts -> dst_pts (four (x, y) correspondences)."""
    a = []
    b = []
    for (x, y), (u, v) in zip(src_pts, dst_pts):
        a.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        a.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        b.extend([u, v])
    h = np.linalg.solve(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    return np.append(h, 1.0).reshape(3, 3)


def _sample_bilinear(image: np.ndarray, rows: np.ndarray, cols: np.ndarray, fill: float) -> np.ndarray:
    h, w = image.shape[:2]
    inside = (rows >= 0) & (rows <= h - 1) & (cols >= 0) & (cols <= w - 1)
    r = np.clip(rows, 0, h - 1)
    c = np.clip(cols, 0, w - 1)
    r0 = np.floor(r).astype(np.int64)
    c0 = np.floor(c).astype(np.int64)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (r - r0)[..., None]
    fc = (c - c0)[..., None]
    out = (image[r0, c0] * (1 - fr) * (1 - fc) + image[r0, c1] * (1 - fr) * fc
           + image[r1, c0] * fr * (1 - fc) + image[r1, c1] * fr * fc)
    out[~inside] = fill
    return out


def perspective_jitter(photo: np.ndarray, magnitude: float, rng: np.random.Generator, fill: float) -> np.ndarray:
    """Warp ``photo`` onto a quad whose corners are pulled inward by up to
    ``magnitude`` of the photo size. Uncovered pixels get ``fill``."""
    h, w = photo.shape[:2]
    if magnitude == 0 or h < 2 or w < 2:
        return photo.copy()
    corners = np.array([[0, 0], [w - 1, 0], [w - 1, h - 1], [0, h - 1]], dtype=np.float64)
    inward = np.array([[1, 1], [-1, 1], [-1, -1], [1, -1]], dtype=np.float64)
    pull = rng.uniform(0.0, magnitude, size=(4, 2)) * np.array([w - 1, h - 1])
    quad = corners + inward * pull
    # inverse map: output pixel (x, y) -> photo coordinate
    inv = _homography(quad, corners)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    pts = np.stack([xs.ravel(), ys.ravel(), np.ones(h * w)])
    mapped = inv @ pts
    sx = (mapped[0] / mapped[2]).reshape(h, w)
    sy = (mapped[1] / mapped[2]).reshape(h, w)
    return _sample_bilinear(photo.astype(np.float64), sy, sx, fill)


def _framed(source: np.ndarray, margin: float, canvas_value: float, warp: float,
            rng: np.random.Generator) -> np.ndarray:
    h, w = source.shape[:2]
    bh, bw = round(margin * h), round(margin * w)
    ih, iw = max(1, h - 2 * bh), max(1, w - 2 * bw)
    photo = resize_bilinear(source.astype(np.float64), (ih, iw))
    photo = perspective_jitter(photo, warp, rng, canvas_value)
    canvas = np.full(source.shape, canvas_value, dtype=np.float64)
    canvas[bh:bh + ih, bw:bw + iw] = photo
    return canvas


def synthesize_attack(
    source: np.ndarray,
    config: SyntheticAttackConfig,
    *,
    path: str = "synthetic.png",
    subject_id: str = "synthetic",
    scenario_id: str | None = None,
    split: Split | str = Split.TEST,
) -> tuple[np.ndarray, Sample]:
    """Turn a bonafide image into an attack of ``config.kind``.

    Returns the attack image (same shape and dtype as ``source``) and its
    attack-labelled :class:`Sample`.
    """
    source = np.asarray(source)
    if source.ndim != 3 or source.size == 0:
        raise EmptyImage(f"source shape {source.shape}")
    if not isinstance(config, SyntheticAttackConfig):
        raise InvalidConfig("config must be a SyntheticAttackConfig")
    rng = np.random.default_rng(config.seed)
    h, w = source.shape[:2]
    kind = config.kind

    if kind is AttackType.PRINTED_PHOTO:
        out = _framed(source, config.border_fraction, PAPER_WHITE, config.warp_magnitude, rng)
    elif kind is AttackType.DIGITAL_PHOTO:
        out = _framed(source, config.border_fraction, BEZEL_DARK, config.warp_magnitude, rng)
    elif kind is AttackType.REPLAY:
        out = source.astype(np.float64)
        if config.blur_sigma > 0:
            out = ndimage.gaussian_filter(out, sigma=(config.blur_sigma, config.blur_sigma, 0), mode="reflect")
        if config.moire_amplitude > 0:
            theta = rng.uniform(0, math.pi)
            phase = rng.uniform(0, 2 * math.pi)
            rr, cc = np.mgrid[0:h, 0:w].astype(np.float64)
            ripple = np.sin(2 * math.pi * (rr * math.cos(theta) + cc * math.sin(theta)) / config.moire_period + phase)
            out = out + config.moire_amplitude * ripple[..., None]
    else:
        out = source.astype(np.float64).copy()
        rows = round(config.occlusion_fraction * h)
        if rows > 0:
            c0 = round((0.15 + rng.uniform(-0.05, 0.05)) * w)
            c1 = round((0.85 + rng.uniform(-0.05, 0.05)) * w)
            colour = rng.uniform(0.55, 0.95, size=source.shape[2])
            out[:rows, c0:c1] = colour
    out = np.clip(out, 0.0, 1.0).astype(source.dtype if np.issubdtype(source.dtype, np.floating) else np.float64)
    sample = Sample(path, Label.ATTACK, subject_id, scenario_id or f"synthetic_{kind.value}", split, kind)
    return out, sample


def random_attack_config(kind: AttackType, rng: np.random.Generator) -> SyntheticAttackConfig:
    """Draw attack parameters from the ranges used for the desk dataset."""
    return SyntheticAttackConfig(
        kind=kind,
        seed=int(rng.integers(0, 2**31)),
        border_fraction=float(rng.uniform(0.06, 0.14)),
        blur_sigma=float(rng.uniform(1.5, 3.0)),
        occlusion_fraction=float(rng.uniform(0.25, 0.4)),
        warp_magnitude=float(rng.uniform(0.0, 0.06)),
        moire_amplitude=float(rng.uniform(0.03, 0.07)),
        moire_period=float(rng.uniform(3.0, 7.0)),
    )


# -- bonafide renderer -----------------------------------------------------------

SKIN_TONES = np.array([
    [0.96, 0.80, 0.69], [0.88, 0.67, 0.53], [0.76, 0.57, 0.42],
    [0.58, 0.40, 0.28], [0.42, 0.28, 0.19], [0.93, 0.76, 0.62],
])


@dataclass(frozen=True)
class SubjectStyle:
    skin: tuple
    hair: tuple
    bg_a: tuple
    bg_b: tuple
    face_ry: float
    face_rx: float
    eye_gap: float

    @classmethod
    def draw(cls, rng: np.random.Generator) -> "SubjectStyle":
        skin = SKIN_TONES[rng.integers(len(SKIN_TONES))] * rng.uniform(0.92, 1.05)
        return cls(
            skin=tuple(np.clip(skin, 0, 1)),
            hair=tuple(rng.uniform(0.03, 0.35) * rng.uniform(0.7, 1.0, 3)),
            bg_a=tuple(rng.uniform(0.2, 0.9, 3)),
            bg_b=tuple(rng.uniform(0.2, 0.9, 3)),
            face_ry=float(rng.uniform(0.27, 0.33)),
            face_rx=float(rng.uniform(0.19, 0.24)),
            eye_gap=float(rng.uniform(0.07, 0.1)),
        )


LIGHTING = {"artificial": (0.95, 1.05, 0.9), "natural": (1.0, 1.0, 1.0), "outdoor": (1.05, 1.05, 1.1)}


def render_bonafide(
    style: SubjectStyle,
    rng: np.random.Generator,
    size: tuple[int, int] = (128, 128),
    lighting: str = "natural",
    accessory: str | None = None,
) -> np.ndarray:
    """Render one live-capture-like face image, float32 in [0, 1] on the 8-bit grid.

    ``accessory`` is one of None, "spectacles", "shades", "safety_mask".
    """
    h, w = size
    rr, cc = np.mgrid[0:h, 0:w].astype(np.float64)
    y = rr / (h - 1)
    x = cc / (w - 1)

    # background: two-colour gradient with random blobs
    angle = rng.uniform(0, 2 * math.pi)
    t = np.clip(0.5 + 0.5 * (np.cos(angle) * (x - 0.5) + np.sin(angle) * (y - 0.5)) * 2, 0, 1)[..., None]
    img = (1 - t) * np.array(style.bg_a) + t * np.array(style.bg_b)
    for _ in range(int(rng.integers(3, 7))):
        cy, cx, rad = rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0.05, 0.2)
        blob = ((y - cy) ** 2 + (x - cx) ** 2) < rad**2
        img[blob] = img[blob] * 0.6 + 0.4 * rng.uniform(0.1, 0.95, 3)

    cy = 0.52 + rng.uniform(-0.04, 0.04)
    cx = 0.5 + rng.uniform(-0.04, 0.04)
    ry, rx = style.face_ry, style.face_rx
    d_face = ((y - cy) / ry) ** 2 + ((x - cx) / rx) ** 2
    # hair: larger ellipse shifted up, drawn first
    d_hair = ((y - cy + 0.06) / (ry * 1.05)) ** 2 + ((x - cx) / (rx * 1.18)) ** 2
    img[d_hair < 1] = style.hair
    shade = np.clip(1.0 - 0.25 * d_face, 0.7, 1.0)[..., None]
    face = d_face < 1
    img[face] = (np.array(style.skin) * shade)[face]
    # hairline over the forehead
    img[(d_hair < 1) & (y < cy - 0.62 * ry)] = style.hair

    eye_y = cy - 0.18 * ry * 2
    for sx in (-1, 1):
        ex = cx + sx * style.eye_gap
        eye = ((y - eye_y) / 0.025) ** 2 + ((x - ex) / 0.04) ** 2 < 1
        img[eye] = (0.95, 0.95, 0.95)
        pupil = ((y - eye_y) / 0.018) ** 2 + ((x - ex) / 0.018) ** 2 < 1
        img[pupil] = (0.08, 0.06, 0.05)
    mouth = (np.abs(y - (cy + 0.55 * ry)) < 0.012) & (np.abs(x - cx) < 0.06)
    img[mouth] = (0.55, 0.2, 0.2)
    nose = (np.abs(x - cx) < 0.008) & (y > eye_y + 0.03) & (y < cy + 0.25 * ry)
    img[nose] = img[nose] * 0.8

    if accessory in ("spectacles", "shades"):
        for sx in (-1, 1):
            ex = cx + sx * style.eye_gap
            d = ((y - eye_y) / 0.045) ** 2 + ((x - ex) / 0.06) ** 2
            if accessory == "shades":
                img[d < 1] = (0.05, 0.05, 0.06)
            else:
                img[(d < 1) & (d > 0.7)] = (0.1, 0.1, 0.1)
    elif accessory == "safety_mask":
        m = face & (y > cy + 0.05 * ry)
        img[m] = (0.65, 0.8, 0.92)

    gain = np.array(LIGHTING[lighting]) * rng.uniform(0.8, 1.12)
    light_dir = rng.uniform(-0.15, 0.15)
    img = img * gain * (1 + light_dir * (x - 0.5))[..., None]
    # sensor noise: the fine texture that replay blur and print resampling remove
    img = img + rng.normal(0.0, 0.035, size=img.shape)
    return quantize(np.clip(img, 0.0, 1.0))


# -- desk-scale dataset ---------------------------------------------------------

BONAFIDE_SCENARIOS = (
    ("indoor_artificial", "artificial", None),
    ("indoor_natural", "natural", None),
    ("outdoor", "outdoor", None),
    ("spectacles", "natural", "spectacles"),
)
ATTACK_ORDER = tuple(AttackType)


def generate_desk_dataset(
    root,
    n_subjects: int = 30,
    images_per_subject: int = 6,
    size: tuple[int, int] = (128, 128),
    seed: int = 0,
    fractions=(0.6, 0.2, 0.2),
) -> DatasetManifest:
    """Write a subject-disjoint synthetic dataset under ``root``.

    Each subject contributes ``images_per_subject`` bonafide images and the
    same number of attacks, cycling through all four attack types. The
    manifest is written to ``root/manifest.jsonl``.
    """
    root = Path(root)
    master = np.random.default_rng(seed)
    samples = []
    for s in range(n_subjects):
        subject = f"subject_{s:03d}"
        srng = np.random.default_rng(master.integers(0, 2**63))
        style = SubjectStyle.draw(srng)
        for i in range(images_per_subject):
            scen, light, acc = BONAFIDE_SCENARIOS[i % len(BONAFIDE_SCENARIOS)]
            img = render_bonafide(style, srng, size, light, acc)
            rel = f"bonafide/{subject}/{i:03d}.png"
            save_image(img, root / rel)
            samples.append(Sample(rel, Label.BONAFIDE, subject, scen))

            kind = ATTACK_ORDER[(s + i) % len(ATTACK_ORDER)]
            src = render_bonafide(style, srng, size, light, acc)
            cfg = random_attack_config(kind, srng)
            rel = f"attack/{subject}/{i:03d}_{kind.value}.png"
            attack, meta = synthesize_attack(src, cfg, path=rel, subject_id=subject, scenario_id=kind.value)
            save_image(attack, root / rel)
            samples.append(meta)
    manifest = split_by_subject(samples, fractions, seed, root=str(root.resolve()))
    save_manifest(manifest, root / "manifest.jsonl", root=".")
    return manifest
