"""Synthetic splice generator.

Hosts and donors can be any RGB arrays; :func:`procedural_image` supplies
stand-in photographs (smooth colour fields, flat shapes, sensor-like noise)
when no image collection is at hand.
"""

from __future__ import annotations

import io
import math
from dataclasses import asdict, dataclass

import numpy as np
from PIL import Image, ImageDraw

from .sample import Sample

SHAPES = ("rectangle", "ellipse", "polygon")
MIN_SIDE = 128
POLYGON_TRIES = 20


class SpliceError(ValueError):
    pass


@dataclass(frozen=True)
class SpliceParams:
    shape: str = "random"  # one of SHAPES or "random"
    area_range: tuple[float, float] = (0.02, 0.25)
    q_host: int | None = 90
    q_donor: int | None = 60
    q_final: int | None = 90
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "area_range", tuple(float(a) for a in self.area_range))
        lo, hi = self.area_range
        if not (0.0 < lo <= hi < 0.5):
            raise SpliceError(f"area fraction range must lie in (0, 0.5), got {self.area_range}")
        if self.shape != "random" and self.shape not in SHAPES:
            raise SpliceError(f"shape must be one of {SHAPES} or 'random', got {self.shape!r}")
        for name in ("q_host", "q_donor", "q_final"):
            q = getattr(self, name)
            if q is not None and not 30 <= q <= 100:
                raise SpliceError(f"{name} must be in [30, 100], got {q}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["area_range"] = list(self.area_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SpliceParams":
        return cls(**d)


def jpeg_roundtrip(image: np.ndarray, quality: int | None) -> np.ndarray:
    """Encode/decode through baseline JPEG (4:2:0); ``None`` returns the input."""
    if quality is None:
        return np.asarray(image)
    buf = io.BytesIO()
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(buf, format="JPEG", quality=int(quality))
    buf.seek(0)
    with Image.open(buf) as im:
        return np.array(im.convert("RGB"))


def _smooth_field(rng: np.random.Generator, size: tuple[int, int], cells: int) -> np.ndarray:
    g = rng.normal(size=(cells, cells)).astype(np.float32)
    im = Image.fromarray(g).resize((size[1], size[0]), Image.BICUBIC)
    f = np.array(im, dtype=np.float64)
    return f / (np.abs(f).max() + 1e-9)


def procedural_image(rng: np.random.Generator, size: int | tuple[int, int] = 256,
                     noise_sigma: float | None = None, n_shapes: int | None = None,
                     texture: float = 0.0) -> np.ndarray:
    """A random photograph-like RGB image.

    ``noise_sigma`` sets i.i.d. Gaussian noise (drawn from [1.5, 6] when None);
    ``texture`` adds that amplitude of fine random texture.
    """
    h, w = (size, size) if isinstance(size, int) else size
    img = np.empty((h, w, 3))
    base = rng.uniform(50, 200, size=3)
    for c in range(3):
        img[..., c] = base[c] + 50 * _smooth_field(rng, (h, w), int(rng.integers(3, 7)))
    canvas = Image.new("L", (w, h))
    draw = ImageDraw.Draw(canvas)
    layer = np.zeros((h, w, 3))
    n_shapes = int(rng.integers(2, 7)) if n_shapes is None else n_shapes
    for _ in range(n_shapes):
        canvas.paste(0, (0, 0, w, h))
        cx, cy = rng.uniform(0, w), rng.uniform(0, h)
        r = rng.uniform(0.08, 0.3) * min(h, w)
        kind = rng.integers(3)
        if kind == 0:
            draw.ellipse([cx - r, cy - r * rng.uniform(0.5, 1.5), cx + r, cy + r], fill=255)
        elif kind == 1:
            draw.rectangle([cx - r, cy - r * rng.uniform(0.4, 1.2), cx + r, cy + r], fill=255)
        else:
            ang = np.sort(rng.uniform(0, 2 * np.pi, size=int(rng.integers(3, 7))))
            draw.polygon([(cx + r * np.cos(a), cy + r * np.sin(a)) for a in ang], fill=255)
        m = np.array(canvas, dtype=bool)
        shade = rng.uniform(20, 235, size=3) + 25 * _smooth_field(rng, (h, w), 3)[..., None]
        layer[m] = shade[m]
        img[m] = layer[m]
    if texture > 0:
        img += texture * rng.normal(size=(h, w, 1))
    sigma = rng.uniform(1.5, 6.0) if noise_sigma is None else noise_sigma
    if sigma > 0:
        img += rng.normal(0.0, sigma, size=img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def _fit_donor(donor: np.ndarray, h: int, w: int) -> np.ndarray:
    if donor.shape[:2] == (h, w):
        return donor
    dh, dw = donor.shape[:2]
    if dh >= h and dw >= w:
        y0, x0 = (dh - h) // 2, (dw - w) // 2
        return donor[y0:y0 + h, x0:x0 + w]
    return np.array(Image.fromarray(donor).resize((w, h), Image.BICUBIC))


def rasterize_region(shape: str, area_fraction: float, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    """Binary mask of one region with the requested area fraction at a random position."""
    target = area_fraction * h * w
    if shape == "rectangle":
        aspect = rng.uniform(0.5, 2.0)
        bw, bh = math.sqrt(target * aspect), math.sqrt(target / aspect)
        pts = None
    elif shape == "ellipse":
        aspect = rng.uniform(0.5, 2.0)
        a = math.sqrt(target * aspect / math.pi)
        b = target / (math.pi * a)
        bw, bh = 2 * a, 2 * b
        pts = None
    elif shape == "polygon":
        # thin random polygons can overflow the image; redraw a few times
        for _ in range(POLYGON_TRIES):
            n = int(rng.integers(5, 10))
            ang = np.sort(rng.uniform(0, 2 * np.pi, size=n))
            rad = rng.uniform(0.6, 1.0, size=n)
            xs, ys = rad * np.cos(ang), rad * np.sin(ang)
            unit_area = 0.5 * abs(np.dot(xs, np.roll(ys, 1)) - np.dot(ys, np.roll(xs, 1)))
            scale = math.sqrt(target / max(unit_area, 1e-9))
            xs, ys = xs * scale, ys * scale
            bw, bh = xs.max() - xs.min(), ys.max() - ys.min()
            if bw <= w - 2 and bh <= h - 2:
                break
        pts = (xs - xs.min(), ys - ys.min())
    else:
        raise SpliceError(f"unknown shape {shape!r}")
    if bw > w - 2 or bh > h - 2:
        raise SpliceError(f"cannot fit a {shape} of area fraction {area_fraction:.3f} in a {h}x{w} image")
    x0 = rng.uniform(0, w - 1 - bw)
    y0 = rng.uniform(0, h - 1 - bh)
    canvas = Image.new("L", (w, h))
    draw = ImageDraw.Draw(canvas)
    if shape == "rectangle":
        draw.rectangle([x0, y0, x0 + bw, y0 + bh], fill=1)
    elif shape == "ellipse":
        draw.ellipse([x0, y0, x0 + bw, y0 + bh], fill=1)
    else:
        draw.polygon([(x0 + x, y0 + y) for x, y in zip(*pts)], fill=1)
    return np.array(canvas, dtype=np.uint8)


def synth_splice(host: np.ndarray, donor: np.ndarray, params: SpliceParams = SpliceParams(),
                 sample_id: str = "splice") -> Sample:
    """Paste a random region of a JPEG-compressed donor into a host.

    The region is taken from the same coordinates in the donor, which keeps
    the donor's JPEG grid aligned with the final one.
    """
    host = np.asarray(host, dtype=np.uint8)
    donor = np.asarray(donor, dtype=np.uint8)
    for name, im in (("host", host), ("donor", donor)):
        if im.ndim != 3 or im.shape[2] != 3:
            raise SpliceError(f"{name} must be an (h, w, 3) RGB array, got {im.shape}")
        if im.shape[0] < MIN_SIDE or im.shape[1] < MIN_SIDE:
            raise SpliceError(f"{name} must be at least {MIN_SIDE}x{MIN_SIDE}, got {im.shape[:2]}")
    h, w = host.shape[:2]
    rng = np.random.default_rng(params.seed)
    shape = params.shape if params.shape != "random" else SHAPES[int(rng.integers(len(SHAPES)))]
    frac = float(rng.uniform(*params.area_range))
    mask = rasterize_region(shape, frac, h, w, rng)
    host_c = jpeg_roundtrip(host, params.q_host)
    donor_c = jpeg_roundtrip(_fit_donor(donor, h, w), params.q_donor)
    composite = np.where(mask[..., None].astype(bool), donor_c, host_c).astype(np.uint8)
    image = jpeg_roundtrip(composite, params.q_final)
    return Sample(id=sample_id, image=np.ascontiguousarray(image), mask=mask)


def generate_splices(n: int, size: int = 256, params: SpliceParams = SpliceParams(), seed: int = 0,
                     host_noise: tuple[float, float] = (1.5, 6.0),
                     donor_noise: tuple[float, float] = (1.5, 6.0), prefix: str = "synth") -> list[Sample]:
    """``n`` splices between fresh procedural hosts and donors, fully determined by ``seed``."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        host = procedural_image(rng, size, noise_sigma=rng.uniform(*host_noise))
        donor = procedural_image(rng, size, noise_sigma=rng.uniform(*donor_noise))
        p = SpliceParams(shape=params.shape, area_range=params.area_range, q_host=params.q_host,
                         q_donor=params.q_donor, q_final=params.q_final, seed=int(rng.integers(2**31)))
        out.append(synth_splice(host, donor, p, sample_id=f"{prefix}_{i:05d}"))
    return out


def texture_mismatch_splices(n: int, size: int = 256, seed: int = 0,
                             host_noise: tuple[float, float] = (1.0, 2.0),
                             donor_noise: tuple[float, float] = (8.0, 12.0),
                             area_range: tuple[float, float] = (0.02, 0.12),
                             prefix: str = "texture") -> list[Sample]:
    """Quiet hosts with noisy donor patches and no JPEG history.

    Only the noise texture tells the patch apart, which isolates the
    residual co-occurrence cue.
    """
    params = SpliceParams(area_range=area_range, q_host=None, q_donor=None, q_final=None)
    return generate_splices(n, size, params, seed=seed, host_noise=host_noise,
                            donor_noise=donor_noise, prefix=prefix)


def splices_from_pools(hosts: list[np.ndarray], donors: list[np.ndarray], n: int,
                       params: SpliceParams = SpliceParams(), seed: int = 0, prefix: str = "synth") -> list[Sample]:
    """``n`` splices drawing host and donor images (with replacement) from the given pools."""
    if not hosts or not donors:
        raise SpliceError("need at least one host and one donor image")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        host = hosts[int(rng.integers(len(hosts)))]
        donor = donors[int(rng.integers(len(donors)))]
        p = SpliceParams(shape=params.shape, area_range=params.area_range, q_host=params.q_host,
                         q_donor=params.q_donor, q_final=params.q_final, seed=int(rng.integers(2**31)))
        out.append(synth_splice(host, donor, p, sample_id=f"{prefix}_{i:05d}"))
    return out
