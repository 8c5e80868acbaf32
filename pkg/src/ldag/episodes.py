"""Synthetic scenes, fold-based class splits, and episode sampling.

The built-in world has 8 classes (two per fold), each a colored shape on a
noisy dark background. Images are 3 x 64 x 64 floats quantized to the
8-bit grid so PPM round-trips are exact; masks are exact shape rasters.
Everything derives from (catalog, seed) through named splitmix64 streams.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .attributes import ClassCatalog
from .errors import ContractError, DegenerateEpisodeError, NotFoundError
from .providers import GRID, IMAGE_SIZE
from .maa import downsample_mask
from .rng import SplitMix64, derive_seed

BG_COLOR = (0.40, 0.40, 0.40)
BG_TINT = 0.38  # per-scene, per-channel uniform jitter of the background base
FILL_TINT = 0.10  # per-scene jitter of the target fill: intra-class variation
NOISE_AMP = 0.02
_RETRY_BUDGET = 8


@dataclass(frozen=True)
class SyntheticClassSpec:
    name: str
    shape: str  # square | circle | triangle | ring
    fill: tuple  # rgb in [0, 1]
    size_range: tuple  # (lo, hi) pixels across
    snippets: tuple  # >= 10 "It ..." continuations rich in color/shape keywords

    def attribute_prompts(self, n: int) -> list:
        if n > len(self.snippets):
            raise ContractError(
                f"{self.name} ships {len(self.snippets)} attribute snippets, asked for {n}")
        return [f"a clean origami {self.name}. {s}" for s in self.snippets[:n]]


def _snips(color: str, shape: str) -> tuple:
    # keyword-heavy on purpose: the background prompt shares the class name,
    # so only repeated color/shape words survive the foreground-background
    # score difference that drives the prior maps
    return (
        f"It is {color} in color, a {color} {shape} of plain {color} paper.",
        f"It has the flat {shape} outline of a folded {color} {shape}.",
        f"It shows a solid {color} silhouette, {color} from edge to edge.",
        f"It is a {shape} shaped {shape} with crisp {color} edges.",
        f"It looks {color} and evenly lit, the {color} {shape} face forward.",
        f"It keeps a clean {shape} footprint, one {color} {shape} alone.",
        f"It is matte {color} paper folded into a {color} {shape}.",
        f"It presents one {shape} face, {color} against the backdrop.",
        f"It stays compact, {color} all over, a tidy {color} {shape}.",
        f"It sits alone, a single {color} {shape}, fully {color}.",
    )


def _spec(color: str, shape: str, fill) -> SyntheticClassSpec:
    return SyntheticClassSpec(name=f"{color} {shape}", shape=shape, fill=tuple(fill),
                              size_range=(32, 48), snippets=_snips(color, shape))


# Two classes per fold, four folds, catalog order defines the fold layout.
# Color words were curated against the default provider seed so that every
# class's text keywords genuinely light up its visual features (measured
# prior mass inside the target beats outside for all eight).
DEFAULT_SPECS = (
    _spec("azure", "square", (0.0, 0.5, 1.0)),
    _spec("jade", "circle", (0.0, 0.66, 0.42)),
    _spec("teal", "triangle", (0.0, 0.5, 0.5)),
    _spec("beige", "ring", (0.96, 0.96, 0.86)),
    _spec("cobalt", "square", (0.0, 0.28, 0.67)),
    _spec("indigo", "circle", (0.29, 0.0, 0.51)),
    _spec("amber", "triangle", (1.0, 0.75, 0.0)),
    _spec("olive", "ring", (0.5, 0.5, 0.0)),
)

DATASET_NAME = "synthetic-8"


def synthetic_catalog() -> ClassCatalog:
    return ClassCatalog(classes=tuple(s.name for s in DEFAULT_SPECS), dataset_name=DATASET_NAME)


def spec_for(class_name: str) -> SyntheticClassSpec:
    for spec in DEFAULT_SPECS:
        if spec.name == class_name:
            return spec
    raise NotFoundError(f"no synthetic class named {class_name!r}")


@dataclass(frozen=True)
class DatasetSplit:
    catalog: ClassCatalog
    fold_count: int
    fold_id: int
    train_classes: tuple
    test_classes: tuple


def split_folds(catalog: ClassCatalog, fold_count: int, fold_id: int) -> DatasetSplit:
    """Contiguous class blocks in catalog order; block fold_id is held out."""
    m = len(catalog.classes)
    if fold_count < 1 or m % fold_count != 0:
        raise ContractError(f"{m} classes are not divisible into {fold_count} folds")
    if not 0 <= fold_id < fold_count:
        raise ContractError(f"fold_id {fold_id} out of range 0..{fold_count - 1}")
    per = m // fold_count
    test = catalog.classes[fold_id * per:(fold_id + 1) * per]
    train = tuple(c for c in catalog.classes if c not in test)
    return DatasetSplit(catalog=catalog, fold_count=fold_count, fold_id=fold_id,
                        train_classes=train, test_classes=test)


@dataclass(frozen=True)
class Episode:
    supports: tuple  # k pairs (image 3xHxW float32, mask HxW uint8)
    query: tuple  # (image, mask)
    class_id: str
    fold_id: int
    episode_id: str


def _raster(shape: str, size: float, cy: float, cx: float) -> np.ndarray:
    yy, xx = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE].astype(np.float64)
    half = size / 2.0
    if shape == "square":
        inside = (np.abs(xx - cx) <= half) & (np.abs(yy - cy) <= half)
    elif shape == "circle":
        inside = (xx - cx) ** 2 + (yy - cy) ** 2 <= half**2
    elif shape == "triangle":
        top = cy - half
        depth = yy - top
        inside = (depth >= 0) & (depth <= size) & (np.abs(xx - cx) <= depth / 2.0)
    elif shape == "ring":
        d2 = (xx - cx) ** 2 + (yy - cy) ** 2
        inside = (d2 <= half**2) & (d2 >= (0.55 * half) ** 2)
    else:
        raise ContractError(f"unknown shape {shape!r}")
    return inside.astype(np.uint8)


@lru_cache(maxsize=4096)
def _scene(spec: SyntheticClassSpec, seed: int):
    rng = SplitMix64(seed)
    lo, hi = spec.size_range
    size = lo + (hi - lo) * rng.next_uniform()
    margin = size / 2.0 + 2.0
    cy = margin + (IMAGE_SIZE - 1 - 2 * margin) * rng.next_uniform()
    cx = margin + (IMAGE_SIZE - 1 - 2 * margin) * rng.next_uniform()
    # scene-level background tint keeps "differs from one fixed gray" from
    # being a learnable shortcut that transfers to held-out classes; fill
    # jitter injects the intra-class variation that makes single support
    # references unreliable
    bg = np.clip(np.asarray(BG_COLOR, dtype=np.float64)
                 + (np.array([rng.next_uniform() for _ in range(3)]) - 0.5) * (2.0 * BG_TINT),
                 0.02, 0.78)
    fill = np.clip(np.asarray(spec.fill, dtype=np.float64)
                   + (np.array([rng.next_uniform() for _ in range(3)]) - 0.5) * (2.0 * FILL_TINT),
                   0.0, 1.0)
    mask = _raster(spec.shape, size, cy, cx)
    noise = (rng.uniforms(3 * IMAGE_SIZE * IMAGE_SIZE).reshape(3, IMAGE_SIZE, IMAGE_SIZE)
             - 0.5) * (2.0 * NOISE_AMP)
    base = np.where(mask[None, :, :] == 1, fill[:, None, None], bg[:, None, None])
    image = np.clip(base + noise, 0.0, 1.0)
    image = (np.round(image * 255.0) / 255.0).astype(np.float32)  # exact PPM round-trip
    image.flags.writeable = False
    mask.flags.writeable = False
    return image, mask


def gen_scene(spec: SyntheticClassSpec, seed: int):
    """One (image, mask) pair; pure function of (spec, seed)."""
    image, mask = _scene(spec, seed)
    return image.copy(), mask.copy()


def _mask_ok(mask: np.ndarray) -> bool:
    small = downsample_mask(mask, GRID, GRID)
    s = int(small.sum())
    return 0 < s < small.size


def sample_episode(split: DatasetSplit, class_id: str, shots: int, seed: int,
                   use_train_classes: bool = True) -> Episode:
    """k support scenes plus one query scene of one class.

    Support scenes whose downsampled mask would be single-class are
    resampled under a bounded retry budget, then rejected loudly.
    """
    active = split.train_classes if use_train_classes else split.test_classes
    if class_id not in active:
        raise NotFoundError(f"class {class_id!r} is not in the active split")
    if shots < 1:
        raise ContractError(f"shots must be >= 1, got {shots}")
    spec = spec_for(class_id)

    def draw(tag: str, guard: bool):
        for attempt in range(_RETRY_BUDGET):
            image, mask = gen_scene(spec, derive_seed(seed, f"{tag}/try{attempt}"))
            if not guard or _mask_ok(mask):
                return image, mask
        raise DegenerateEpisodeError(
            f"no valid scene for {class_id} after {_RETRY_BUDGET} retries ({tag})")

    supports = tuple(draw(f"support/{j}", guard=True) for j in range(shots))
    query = draw("query", guard=False)
    return Episode(supports=supports, query=query, class_id=class_id,
                   fold_id=split.fold_id, episode_id=f"{class_id}-{seed:016x}".replace(" ", "_"))


def made_up_catalog(m: int, name: str = "synthetic-m") -> ClassCatalog:
    """Plain numbered catalog for split-protocol checks at other class counts."""
    return ClassCatalog(classes=tuple(f"class{i:02d}" for i in range(1, m + 1)),
                        dataset_name=f"{name}{m}")
