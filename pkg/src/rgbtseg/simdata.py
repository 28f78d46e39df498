"""Synthetic misaligned RGB / thermal scenes with exact ground-truth flow.

Each scene is a textured background with a handful of rectangles, discs and
bars. The thermal view sees the same objects displaced by a global jitter
plus an integer per-object offset, so the dense thermal-from-RGB flow is
known exactly. Labels live in the frame of the modality with the clearer
boundaries: RGB for day and fog, thermal for night.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import ust1
from .nn import _resize_matrix
from .sgcm import Taxonomy

IGNORE_INDEX = 65535
TAGS = ("day", "night", "fog")
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class ClassStyle:
    path: str
    shape: str                  # background | rect | disc | bar
    color: tuple[int, int, int]
    temperature: int
    size: tuple[int, int]       # half-extent (rect/disc radius) or bar length range
    thickness: int = 4


# Rank order == class id; sizes shrink with rank so the pixel histogram is long-tailed.
# Some pairs share an RGB colour and differ only in temperature (roof/shed,
# sedan/van, pole/streetlight) and pole/sign share a temperature, so getting every
# class right needs both modalities brought into the same frame.
DEFAULT_STYLES = (
    ClassStyle("ground/paved/road", "background", (120, 120, 126), 125, (0, 0)),
    ClassStyle("ground/vegetation/grass", "rect", (70, 150, 60), 95, (8, 12)),
    ClassStyle("structure/building/roof", "rect", (178, 76, 60), 190, (7, 10)),
    ClassStyle("ground/vegetation/tree", "disc", (35, 96, 45), 72, (6, 8)),
    ClassStyle("ground/water/pond", "disc", (45, 96, 165), 45, (5, 8)),
    ClassStyle("structure/building/shed", "rect", (178, 76, 60), 150, (5, 7)),
    ClassStyle("vehicle/car/sedan", "rect", (40, 60, 172), 215, (4, 6)),
    ClassStyle("vehicle/car/van", "rect", (40, 60, 172), 165, (4, 6)),
    ClassStyle("vehicle/cycle/bike", "disc", (192, 40, 40), 240, (3, 5)),
    ClassStyle("structure/roadside/pole", "bar", (92, 92, 100), 150, (12, 18)),
    ClassStyle("structure/roadside/streetlight", "bar", (92, 92, 100), 228, (12, 18)),
    ClassStyle("structure/roadside/sign", "bar", (206, 172, 40), 150, (8, 12)),
)


def default_taxonomy(num_classes: int = 12) -> Taxonomy:
    return Taxonomy.from_paths(s.path for s in DEFAULT_STYLES[:num_classes])


@dataclass
class SceneConfig:
    image_size: int = 64
    num_classes: int = 12
    max_offset_px: int = 6
    tail_exponent: float = 1.8
    illum_probs: tuple[float, float, float] = (0.5, 0.3, 0.2)   # day, night, fog
    seed: int = 0
    min_objects: int = 3
    max_objects: int = 8

    def __post_init__(self):
        self.illum_probs = tuple(float(p) for p in self.illum_probs)
        if not self.max_offset_px < self.image_size / 4:
            raise ValueError("max_offset_px must be below a quarter of the image size")
        if not 2 <= self.num_classes <= len(DEFAULT_STYLES):
            raise ValueError(f"num_classes must lie in [2, {len(DEFAULT_STYLES)}]")
        if len(self.illum_probs) != 3 or min(self.illum_probs) < 0 or sum(self.illum_probs) <= 0:
            raise ValueError(f"illum_probs must be three nonnegative weights, got {self.illum_probs}")
        if not 1 <= self.min_objects <= self.max_objects:
            raise ValueError("need 1 <= min_objects <= max_objects")

    def class_probs(self) -> np.ndarray:
        """Sampling law over object classes 1..K-1 (class 0 is background)."""
        ranks = np.arange(1, self.num_classes, dtype=np.float64)
        p = ranks ** -self.tail_exponent
        return p / p.sum()


@dataclass
class SegSample:
    rgb: np.ndarray        # [3, H, W] u8
    thermal: np.ndarray    # [1, H, W] u8
    labels: np.ndarray     # [H, W] u16, anchor frame
    gt_flow: np.ndarray    # [2, H, W] f32, (dy, dx): thermal position = RGB position + flow
    illum_tag: str
    index: int = -1
    object_mask: np.ndarray | None = field(default=None, repr=False)   # RGB frame
    rgb_ids: np.ndarray | None = field(default=None, repr=False)
    thermal_ids: np.ndarray | None = field(default=None, repr=False)

    def rgb_object_mask(self) -> np.ndarray:
        if self.object_mask is not None:
            return self.object_mask
        # background moves with the global jitter, which is the most common flow vector
        vecs = self.gt_flow.reshape(2, -1).T
        uniq, counts = np.unique(vecs, axis=0, return_counts=True)
        bg = uniq[np.argmax(counts)]
        return np.any(self.gt_flow != bg[:, None, None], axis=0)


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def sample_seed(master: int, index: int) -> int:
    return splitmix64(splitmix64(master & _MASK64) ^ (index & _MASK64))


def _smooth_field(rng, n: int, cell: int = 8) -> np.ndarray:
    g = rng.standard_normal((n // cell + 2, n // cell + 2))
    r = _resize_matrix(g.shape[0], n, np.float64)
    return r @ g @ r.T


def _box_blur(img: np.ndarray, passes: int) -> np.ndarray:
    for _ in range(passes):
        p = np.pad(img, 1, mode="edge")
        img = sum(p[i:i + img.shape[0], j:j + img.shape[1]] for i in range(3) for j in range(3)) / 9.0
    return img


def _shape_mask(style: ClassStyle, params: tuple, cy: int, cx: int, n: int) -> np.ndarray:
    yy, xx = np.mgrid[0:n, 0:n]
    kind = style.shape
    if kind == "disc":
        (r,) = params
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    if kind == "rect":
        a, b = params
        return (yy >= cy - a) & (yy < cy + a) & (xx >= cx - b) & (xx < cx + b)
    if kind == "bar":
        length, thick, vertical = params
        a, b = (length // 2, thick // 2) if vertical else (thick // 2, length // 2)
        return (yy >= cy - a) & (yy < cy + a) & (xx >= cx - b) & (xx < cx + b)
    raise ValueError(f"cannot render shape {kind!r}")


def _draw_params(style: ClassStyle, rng) -> tuple:
    lo, hi = style.size
    if style.shape == "disc":
        return (int(rng.integers(lo, hi + 1)),)
    if style.shape == "rect":
        return int(rng.integers(lo, hi + 1)), int(rng.integers(lo, hi + 1))
    return int(rng.integers(lo, hi + 1)), style.thickness, bool(rng.integers(0, 2))


def _bbox(mask: np.ndarray) -> tuple[int, int, int, int]:
    ys, xs = np.nonzero(mask)
    return int(ys.min()), int(ys.max()), int(xs.min()), int(xs.max())


def _boxes_near(a, b, margin: int) -> bool:
    return not (a[1] + margin < b[0] or b[1] + margin < a[0]
                or a[3] + margin < b[2] or b[3] + margin < a[2])


def generate_sample(cfg: SceneConfig, index: int) -> SegSample:
    rng = np.random.default_rng(sample_seed(cfg.seed, index))
    n, mo = cfg.image_size, cfg.max_offset_px
    styles = DEFAULT_STYLES[:cfg.num_classes]
    probs = np.asarray(cfg.illum_probs) / sum(cfg.illum_probs)
    tag = TAGS[int(rng.choice(3, p=probs))]

    half = mo // 2
    jitter = rng.integers(-half, half + 1, size=2) if mo else np.zeros(2, dtype=np.int64)
    n_obj = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    class_p = cfg.class_probs()

    rgb_ids = np.zeros((n, n), dtype=np.int64)
    thm_ids = np.zeros((n, n), dtype=np.int64)
    obj_index = np.full((n, n), -1, dtype=np.int64)
    flows = []
    boxes = []
    placed = []
    for k in range(n_obj):
        cls = 1 + int(rng.choice(cfg.num_classes - 1, p=class_p))
        style = styles[cls]
        params = _draw_params(style, rng)
        off = rng.integers(-mo, mo + 1, size=2) if mo else np.zeros(2, dtype=np.int64)
        flow = np.clip(jitter + off, -mo, mo)
        for attempt in range(100):
            cy, cx = (int(v) for v in rng.integers(0, n, size=2))
            m_rgb = _shape_mask(style, params, cy, cx, n)
            m_thm = _shape_mask(style, params, cy + int(flow[0]), cx + int(flow[1]), n)
            if not m_rgb.any() or not m_thm.any():
                continue
            margin = 2 * mo if attempt < 40 else (2 if attempt < 80 else -1)
            box = _bbox(m_rgb)
            if margin >= 0 and any(_boxes_near(box, b, margin) for b in boxes):
                continue
            break
        else:
            raise RuntimeError(f"sample {index}: could not place object {k} inside the frame")
        boxes.append(box)
        placed.append((cls, m_rgb, m_thm, flow))

    for k, (cls, m_rgb, m_thm, flow) in enumerate(placed):
        rgb_ids[m_rgb] = cls
        thm_ids[m_thm] = cls
        obj_index[m_rgb] = k
        flows.append(flow)

    gt_flow = np.empty((2, n, n), dtype=np.float32)
    gt_flow[0], gt_flow[1] = jitter[0], jitter[1]
    for k, flow in enumerate(flows):
        sel = obj_index == k
        gt_flow[0][sel], gt_flow[1][sel] = flow[0], flow[1]

    # background texture on a padded canvas; thermal pixel p + jitter shows RGB pixel p
    pad = mo + 1
    tex = _smooth_field(rng, n + 2 * pad)
    tex_rgb = tex[pad:pad + n, pad:pad + n]
    ty, tx = pad - int(jitter[0]), pad - int(jitter[1])
    tex_thm = tex[ty:ty + n, tx:tx + n]

    colors = np.array([s.color for s in styles], dtype=np.float64) / 255.0
    temps = np.array([s.temperature for s in styles], dtype=np.float64) / 255.0
    rgb = colors[rgb_ids].transpose(2, 0, 1)
    bg = rgb_ids == 0
    rgb = rgb + (0.06 * tex_rgb * bg)[None]
    rgb = rgb + rng.normal(0.0, 6 / 255, size=rgb.shape)
    thermal = temps[thm_ids] + 0.04 * tex_thm * (thm_ids == 0)
    thermal = thermal + rng.normal(0.0, 3 / 255, size=thermal.shape)

    if tag == "day":
        thermal = _box_blur(thermal, 3)
    elif tag == "night":
        rgb = rgb * 0.25 + rng.normal(0.0, 12 / 255, size=rgb.shape)
        thermal = _box_blur(thermal, 1)
    else:
        rgb = 0.5 * rgb + 0.5 * 0.7
        thermal = _box_blur(thermal, 2)

    to_u8 = lambda a: np.clip(np.round(a * 255.0), 0, 255).astype(np.uint8)
    labels = (thm_ids if tag == "night" else rgb_ids).astype(np.uint16)
    return SegSample(
        rgb=to_u8(rgb), thermal=to_u8(thermal)[None], labels=labels, gt_flow=gt_flow,
        illum_tag=tag, index=index, object_mask=obj_index >= 0,
        rgb_ids=rgb_ids.astype(np.uint16), thermal_ids=thm_ids.astype(np.uint16),
    )


def generate_split(cfg: SceneConfig, count: int, start: int = 0) -> list[SegSample]:
    return [generate_sample(cfg, start + i) for i in range(count)]


# ---------------------------------------------------------------------------
# on-disk split
# ---------------------------------------------------------------------------

_SUFFIXES = ("rgb", "thm", "lbl", "flow")


class DataError(ValueError):
    pass


def write_split(directory: str | Path, samples: Sequence[SegSample], cfg: SceneConfig,
                taxonomy: Taxonomy | None = None) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(samples):
        stem = f"{i:06d}"
        ust1.save(d / f"{stem}.rgb.ust1", s.rgb)
        ust1.save(d / f"{stem}.thm.ust1", s.thermal)
        ust1.save(d / f"{stem}.lbl.ust1", s.labels.astype(np.uint16))
        ust1.save(d / f"{stem}.flow.ust1", s.gt_flow.astype(np.float32))
    taxonomy = taxonomy or default_taxonomy(cfg.num_classes)
    lines = [
        f"K={cfg.num_classes}",
        f"size={cfg.image_size}",
        f"seed={cfg.seed}",
        f"count={len(samples)}",
        *(f"count_{t}={sum(s.illum_tag == t for s in samples)}" for t in TAGS),
        f"taxonomy_hash={taxonomy.digest()}",
        f"tags={','.join(s.illum_tag for s in samples)}",
        f"indices={','.join(str(s.index) for s in samples)}",
    ]
    (d / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return d


def read_manifest(directory: str | Path) -> dict[str, str]:
    path = Path(directory) / "manifest.txt"
    if not path.exists():
        raise DataError(f"missing manifest: {path}")
    out = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip() and not line.startswith("#"):
            key, _, val = line.partition("=")
            out[key.strip()] = val.strip()
    return out


def read_split(directory: str | Path) -> list[SegSample]:
    d = Path(directory)
    man = read_manifest(d)
    count = int(man["count"])
    tags = man["tags"].split(",") if count else []
    indices = [int(v) for v in man["indices"].split(",")] if count else []
    samples = []
    for i in range(count):
        stem = f"{i:06d}"
        try:
            arrs = [ust1.load(d / f"{stem}.{suf}.ust1") for suf in _SUFFIXES]
        except (ust1.FormatError, FileNotFoundError) as exc:
            raise DataError(str(exc)) from exc
        rgb, thm, lbl, flow = arrs
        samples.append(SegSample(rgb, thm, lbl, flow, tags[i], indices[i]))
    return samples
