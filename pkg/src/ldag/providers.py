"""Frozen feature providers.

Toy mode replaces the heavyweight image/text encoders with determinisitc
seeded random projections: images are cut into 8x8 patches whose flattened
192-vectors go through a fixed seeded Gaussian matrix; text is a normalized
bag of hashed-token Gaussian directions. Imported mode reads the same
structures from LDAGTNSR files written by an exporter.

The toy matrices are created once per seed and never trained; their
checksums are exposed so freeze-invariance is testable.
"""

import hashlib
import re
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import ldagtnsr
from .errors import ContractError, DegenerateInputError, DimensionError, FormatError
from .rng import SplitMix64, derive_seed, fnv1a64, gaussian_matrix

IMAGE_SIZE = 64
PATCH = 8
GRID = IMAGE_SIZE // PATCH  # 8 x 8 feature grid
PATCH_DIM = 3 * PATCH * PATCH  # 192
FEATURE_DIM = 64

_CLIP_LABEL = "ldag/provider/W_img"
_SAM_LABEL = "ldag/provider/W_sam"
_TEXT_LABEL = "ldag/provider/text"


@dataclass(frozen=True)
class ClipEncoding:
    """Image-text-space tokens (class token already absent) plus pooled query vector."""

    tokens: np.ndarray  # D x Hc x Wc float32
    pooled: np.ndarray  # D float32
    source: str  # "toy" | "imported"


@dataclass(frozen=True)
class SamEncoding:
    """Segmentation-space feature grid."""

    features: np.ndarray  # Ds x Hs x Ws float32
    source: str


@dataclass(frozen=True)
class TextEmbedding:
    vector: np.ndarray  # D float32
    prompt: str
    role: str  # "foreground-attribute" | "foreground-template" | "background"
    source: str = "toy"


@lru_cache(maxsize=8)
def _projection(seed: int, label: str) -> np.ndarray:
    return gaussian_matrix(derive_seed(seed, label), FEATURE_DIM, PATCH_DIM,
                           1.0 / np.sqrt(PATCH_DIM))


def projection_checksum(seed: int, label: str = _CLIP_LABEL) -> str:
    """SHA-256 of a frozen projection matrix; constant across any training run."""
    return hashlib.sha256(_projection(seed, label).tobytes()).hexdigest()


def _patch_grid(image: np.ndarray) -> np.ndarray:
    """3 x 64 x 64 image -> 64 x 192 matrix of flattened patches, row-major cells."""
    if image.shape != (3, IMAGE_SIZE, IMAGE_SIZE):
        raise DimensionError(
            f"toy encoders want 3 x {IMAGE_SIZE} x {IMAGE_SIZE} images, got {image.shape}")
    if image.min() < 0.0 or image.max() > 1.0:
        raise ContractError("pixel values must lie in [0, 1]")
    # (3, gy, 8, gx, 8) -> (gy, gx, 3, 8, 8) -> (64, 192)
    patches = image.reshape(3, GRID, PATCH, GRID, PATCH).transpose(1, 3, 0, 2, 4)
    return np.ascontiguousarray(patches.reshape(GRID * GRID, PATCH_DIM), dtype=np.float32)


def _encode_grid(image: np.ndarray, w: np.ndarray) -> np.ndarray:
    cells = _patch_grid(image)
    feats = cells.astype(np.float64) @ w.T.astype(np.float64)  # 64 cells x D
    return np.ascontiguousarray(
        feats.astype(np.float32).reshape(GRID, GRID, FEATURE_DIM).transpose(2, 0, 1))


def toy_encode_image_clip(image: np.ndarray, seed: int) -> ClipEncoding:
    """Deterministic stand-in for the frozen image-text encoder."""
    tokens = _encode_grid(image, _projection(seed, _CLIP_LABEL))
    pooled = tokens.mean(axis=(1, 2), dtype=np.float64).astype(np.float32)
    return ClipEncoding(tokens=tokens, pooled=pooled, source="toy")


def toy_encode_image_sam(image: np.ndarray, seed: int) -> SamEncoding:
    """Deterministic stand-in for the frozen segmentation encoder."""
    return SamEncoding(features=_encode_grid(image, _projection(seed, _SAM_LABEL)),
                       source="toy")


_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")


def toy_encode_text(prompt: str, seed: int, role: str = "foreground-attribute") -> TextEmbedding:
    """Bag-of-words embedding: sum of per-token seeded unit Gaussians, L2-normalized."""
    if not prompt or not prompt.strip():
        raise DegenerateInputError("empty prompt")
    tokens = [t for t in _TOKEN_SPLIT.split(prompt.lower()) if t]
    if not tokens:
        raise DegenerateInputError(f"prompt {prompt!r} has no encodable tokens")
    text_seed = derive_seed(seed, _TEXT_LABEL)
    total = np.zeros(FEATURE_DIM, dtype=np.float64)
    for token in tokens:
        h = fnv1a64(token.encode("utf-8")) ^ text_seed
        z = SplitMix64(h).gaussians(FEATURE_DIM)
        total += z / np.sqrt(np.dot(z, z))
    norm = np.sqrt(np.dot(total, total))
    if norm < 1e-12:
        raise DegenerateInputError(f"prompt {prompt!r} embeds to a zero vector")
    return TextEmbedding(vector=(total / norm).astype(np.float32), prompt=prompt, role=role)


# ---------------------------------------------------------------------------
# interchange with exporters

def save_feature_file(obj, path) -> None:
    """Write a provider object as LDAGTNSR; ClipEncoding also writes a pooled sibling."""
    path = str(path)
    if isinstance(obj, ClipEncoding):
        pooled_path = path + ".pooled"
        ldagtnsr.write_tensor(pooled_path, obj.pooled,
                              {"kind": "clip_pooled", "source": obj.source})
        ldagtnsr.write_tensor(path, obj.tokens, {
            "kind": "clip_tokens", "source": obj.source,
            "pooled_file": pooled_path.rsplit("/", 1)[-1]})
    elif isinstance(obj, SamEncoding):
        ldagtnsr.write_tensor(path, obj.features, {"kind": "sam_features", "source": obj.source})
    elif isinstance(obj, TextEmbedding):
        ldagtnsr.write_tensor(path, obj.vector, {
            "kind": "text_embedding", "source": obj.source,
            "role": obj.role, "prompt": obj.prompt})
    else:
        raise ContractError(f"cannot serialize {type(obj).__name__}")


def load_feature_file(path):
    """Read any feature file back into its provider object (source becomes the stored tag)."""
    path = str(path)
    array, meta = ldagtnsr.read_tensor(path)
    kind = meta.get("kind")
    if kind == "clip_tokens":
        if array.ndim != 3:
            raise FormatError(f"clip tokens must be rank 3, got rank {array.ndim}")
        pooled_name = meta.get("pooled_file")
        if not pooled_name:
            raise FormatError("clip_tokens file lacks its pooled_file reference")
        base = path.rsplit("/", 1)[0] if "/" in path else "."
        pooled, pmeta = ldagtnsr.read_tensor(f"{base}/{pooled_name}")
        if pmeta.get("kind") != "clip_pooled":
            raise FormatError(f"pooled sibling has kind {pmeta.get('kind')!r}")
        if pooled.shape != (array.shape[0],):
            raise FormatError(
                f"pooled length {pooled.shape} does not match token channels {array.shape[0]}")
        return ClipEncoding(tokens=array, pooled=pooled, source=meta.get("source", "imported"))
    if kind == "sam_features":
        if array.ndim != 3:
            raise FormatError(f"sam features must be rank 3, got rank {array.ndim}")
        return SamEncoding(features=array, source=meta.get("source", "imported"))
    if kind == "text_embedding":
        if array.ndim != 1:
            raise FormatError(f"text embedding must be rank 1, got rank {array.ndim}")
        return TextEmbedding(vector=array, prompt=meta.get("prompt", ""),
                             role=meta.get("role", "foreground-attribute"),
                             source=meta.get("source", "imported"))
    raise FormatError(f"unknown feature kind {kind!r}")
