"""Forgery samples: on-disk datasets, preprocessing and synthetic manipulations.

On-disk layout::

    root/images/<id>.<ext>    RGB images
    root/masks/<id>.png       8-bit masks, 0 authentic / 255 tampered
    root/splits/<split>.txt   one id per line
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, ImageDraw

log = logging.getLogger(__name__)

IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp")
FORGERY_OPS = ("splice", "copymove", "removal")
MAX_RETRIES = 50


@dataclass
class ForgerySample:
    image: np.ndarray  # H x W x 3 uint8
    mask: np.ndarray  # H x W uint8 in {0, 1}
    id: str
    source_tag: str = ""
    meta: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError(f"{self.id}: image must be H x W x 3, got {self.image.shape}")
        if self.image.shape[:2] != self.mask.shape:
            raise ValueError(f"{self.id}: image {self.image.shape[:2]} and mask {self.mask.shape} differ in size")
        if not np.isin(self.mask, (0, 1)).all():
            raise ValueError(f"{self.id}: mask is not binary")


class SampleSet(list):
    """A list of samples that also remembers how many images were skipped."""

    def __init__(self, samples=(), skipped=0):
        super().__init__(samples)
        self.skipped = skipped


def _read_image(path):
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))
    except OSError as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc


def _read_mask(path):
    try:
        with Image.open(path) as im:
            m = np.asarray(im.convert("L"))
    except OSError as exc:
        raise OSError(f"cannot read mask {path}: {exc}") from exc
    return (m > 127).astype(np.uint8)


def load_dataset(root, split=None):
    """Load every (image, mask) pair listed in ``root/splits/<split>.txt``.

    With ``split=None`` all images under ``root/images`` are used, sorted by id.
    Images without a mask are skipped and counted in ``.skipped``.
    """
    root = Path(root)
    image_dir, mask_dir = root / "images", root / "masks"
    if not image_dir.is_dir():
        raise FileNotFoundError(f"{image_dir} does not exist")
    images = {p.stem: p for p in sorted(image_dir.iterdir()) if p.suffix.lower() in IMAGE_EXTS}
    masks = {p.stem: p for p in sorted(mask_dir.iterdir())} if mask_dir.is_dir() else {}
    if split is None:
        ids = sorted(images)
    else:
        manifest = root / "splits" / f"{split}.txt"
        ids = [line.strip() for line in manifest.read_text().splitlines() if line.strip()]

    samples, skipped = [], 0
    for sid in ids:
        if sid not in images:
            raise FileNotFoundError(f"id {sid!r} listed in split {split!r} has no image")
        if sid not in masks:
            skipped += 1
            continue
        samples.append(ForgerySample(_read_image(images[sid]), _read_mask(masks[sid]), sid, root.name))
    if skipped:
        log.warning("%s: skipped %d image(s) without a mask", root, skipped)
    return SampleSet(samples, skipped)


def write_dataset(samples, root, split="all"):
    """Write samples in the on-disk layout and a split manifest."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    (root / "splits").mkdir(parents=True, exist_ok=True)
    for s in samples:
        Image.fromarray(s.image).save(root / "images" / f"{s.id}.png")
        Image.fromarray((s.mask * 255).astype(np.uint8)).save(root / "masks" / f"{s.id}.png")
    (root / "splits" / f"{split}.txt").write_text("".join(f"{s.id}\n" for s in samples))
    return root


def preprocess(sample, image_size=256):
    """Resize to ``image_size`` square: bilinear for the image, nearest for the mask.

    Returns ``(image, mask)``: a float32 (3, S, S) tensor in raw [0, 255] units and
    an int64 (S, S) tensor. Intensity standardization happens inside the model.
    """
    image = torch.tensor(sample.image).permute(2, 0, 1).float()
    mask = torch.tensor(sample.mask).long()
    if tuple(image.shape[-2:]) != (image_size, image_size):
        image = F.interpolate(image[None], size=(image_size, image_size), mode="bilinear",
                              align_corners=False)[0].clamp(0, 255)
        mask = F.interpolate(mask[None, None].float(), size=(image_size, image_size),
                             mode="nearest")[0, 0].long()
    return image, mask


def collate(samples, image_size):
    pairs = [preprocess(s, image_size) for s in samples]
    return torch.stack([p[0] for p in pairs]), torch.stack([p[1] for p in pairs])


# -- synthetic data --------------------------------------------------------

def synth_authentic(rng, size=64):
    """A pseudo-natural image: smooth color field, a few flat shapes, sensor noise.

    Noise strength varies per image so spliced regions carry foreign noise statistics.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    coarse = rng.uniform(0, 255, size=(4, 4, 3)).astype(np.float32)
    base = Image.fromarray(coarse.astype(np.uint8)).resize((size, size), Image.BICUBIC)
    draw = ImageDraw.Draw(base)
    for _ in range(int(rng.integers(2, 6))):
        x0, y0 = rng.integers(0, size, 2)
        w, h = rng.integers(size // 8, size // 2, 2)
        color = tuple(int(c) for c in rng.integers(0, 256, 3))
        box = [int(x0), int(y0), int(x0 + w), int(y0 + h)]
        if rng.random() < 0.5:
            draw.ellipse(box, fill=color)
        else:
            draw.rectangle(box, fill=color)
    img = np.asarray(base, dtype=np.float32)
    sigma = rng.uniform(0.5, 8.0)
    img = img + rng.normal(0.0, sigma, size=img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def random_polygon(rng, height, width):
    """Boolean (height, width) mask of a random star-shaped polygon filling the box."""
    n = int(rng.integers(5, 9))
    angles = np.sort(rng.uniform(0, 2 * np.pi, n))
    radii = rng.uniform(0.55, 1.0, n)
    cx, cy = (width - 1) / 2, (height - 1) / 2
    pts = [(float(cx + r * cx * np.cos(a)), float(cy + r * cy * np.sin(a))) for a, r in zip(angles, radii)]
    canvas = Image.new("L", (width, height), 0)
    ImageDraw.Draw(canvas).polygon(pts, fill=1)
    return np.asarray(canvas, dtype=bool)


def _region_size(rng, H, W, frac):
    lo, hi = frac
    h = int(rng.integers(max(4, int(H * lo)), max(5, int(H * hi)) + 1))
    w = int(rng.integers(max(4, int(W * lo)), max(5, int(W * hi)) + 1))
    return h, w


def synth_forge(pool, rng_seed, op_type="splice", region_frac=(0.2, 0.45), sample_id=None):
    """Create one forged sample from a pool of authentic H x W x 3 uint8 images.

    ``splice`` pastes a polygon from a donor onto a host, ``copymove`` pastes a
    polygon from elsewhere in the same image, ``removal`` covers a polygon with
    the adjacent background shifted over it. The mask marks exactly the
    overwritten pixels. Output depends only on ``pool`` and ``rng_seed``.
    """
    if op_type not in FORGERY_OPS:
        raise ValueError(f"op_type must be one of {FORGERY_OPS}, got {op_type!r}")
    need = 2 if op_type == "splice" else 1
    if len(pool) < need:
        raise ValueError(f"{op_type} needs at least {need} image(s) in the pool")
    rng = np.random.default_rng(rng_seed)
    host_idx = int(rng.integers(len(pool)))
    host = np.asarray(pool[host_idx])
    H, W = host.shape[:2]
    if op_type == "splice":
        donor_idx = int(rng.choice([i for i in range(len(pool)) if i != host_idx]))
        donor = np.asarray(pool[donor_idx])
    else:
        donor = host

    for _ in range(MAX_RETRIES):
        h, w = _region_size(rng, donor.shape[0], donor.shape[1], region_frac)
        if h >= H or w >= W or h >= donor.shape[0] or w >= donor.shape[1]:
            continue
        dy, dx = int(rng.integers(0, H - h + 1)), int(rng.integers(0, W - w + 1))
        if op_type == "splice":
            sy = int(rng.integers(0, donor.shape[0] - h + 1))
            sx = int(rng.integers(0, donor.shape[1] - w + 1))
        elif op_type == "copymove":
            sy, sx = int(rng.integers(0, H - h + 1)), int(rng.integers(0, W - w + 1))
            # source box must not overlap the destination box
            if abs(sy - dy) < h and abs(sx - dx) < w:
                continue
        else:
            # removal fills from the immediately neighbouring strip
            shifts = [(dy - h, dx), (dy + h, dx), (dy, dx - w), (dy, dx + w)]
            shifts = [(y, x) for y, x in shifts if 0 <= y <= H - h and 0 <= x <= W - w]
            if not shifts:
                continue
            sy, sx = shifts[int(rng.integers(len(shifts)))]
        break
    else:
        raise ValueError(f"could not place a {op_type} region in a {H}x{W} host after {MAX_RETRIES} tries")

    poly = random_polygon(rng, h, w)
    image = host.copy()
    dst = image[dy:dy + h, dx:dx + w]
    dst[poly] = donor[sy:sy + h, sx:sx + w][poly]
    mask = np.zeros((H, W), dtype=np.uint8)
    mask[dy:dy + h, dx:dx + w] = poly
    sid = sample_id if sample_id is not None else f"{op_type}_{rng_seed}"
    meta = {"host": host_idx, "donor": donor_idx if op_type == "splice" else host_idx,
            "src": (sy, sx), "dst": (dy, dx), "size": (h, w)}
    return ForgerySample(image, mask, sid, source_tag=f"synth-{op_type}", meta=meta)


def synth_dataset(count, seed=0, size=64, pool_size=8, ops=FORGERY_OPS, region_frac=(0.2, 0.45)):
    """``count`` forged samples cycling through ``ops``, built from a seeded authentic pool."""
    ss = np.random.SeedSequence(seed)
    pool_seq, forge_seq = ss.spawn(2)
    pool_rng = np.random.default_rng(pool_seq)
    pool = [synth_authentic(pool_rng, size) for _ in range(max(pool_size, 2))]
    seeds = forge_seq.generate_state(count)
    return SampleSet([
        synth_forge(pool, int(s), ops[i % len(ops)], region_frac, sample_id=f"{seed}_{i:05d}")
        for i, s in enumerate(seeds)
    ])
