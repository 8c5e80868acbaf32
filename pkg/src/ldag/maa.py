"""Multi-modal attribute alignment.

Masked average pooling turns the support feature grid into foreground and
background prototypes; each attribute embedding passes through its own
two-layer MLP into the visual space; InfoNCE pulls the foreground
prototype toward every projected attribute with the background prototype
as the single negative. Prototypes come from frozen features, so the loss
only trains the MLPs.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, DegenerateEpisodeError, DimensionError
from .providers import SamEncoding


@dataclass(frozen=True)
class PrototypePair:
    foreground: np.ndarray  # Ds float32
    background: np.ndarray
    fg_pixel_count: int
    bg_pixel_count: int


@dataclass
class ProjectedAttributes:
    vectors: list  # n Tensors[Ds]
    mlp_indices: list  # 1-based index of the MLP that produced each vector

    @property
    def n(self) -> int:
        return len(self.vectors)


def downsample_mask(mask: np.ndarray, hs: int, ws: int) -> np.ndarray:
    """Nearest-neighbor downsample; a cell is foreground iff its nearest pixel is."""
    h, w = mask.shape
    ys = np.minimum((np.arange(hs) + 0.5) * (h / hs), h - 1).astype(np.int64)
    xs = np.minimum((np.arange(ws) + 0.5) * (w / ws), w - 1).astype(np.int64)
    return mask[np.ix_(ys, xs)]


def map_prototypes(feat: SamEncoding, mask: np.ndarray) -> PrototypePair:
    """Masked average pooling of the support features at feature resolution."""
    mask = np.asarray(mask)
    if not np.isin(mask, (0, 1)).all():
        raise ContractError("support mask must be binary")
    ds, hs, ws = feat.features.shape
    if mask.ndim != 2:
        raise DimensionError(f"mask must be H x W, got {mask.shape}")
    small = downsample_mask(mask, hs, ws).astype(bool)
    fg_count = int(small.sum())
    bg_count = small.size - fg_count
    if fg_count == 0 or bg_count == 0:
        raise DegenerateEpisodeError(
            f"downsampled support mask is single-class (fg={fg_count}, bg={bg_count})")
    flat = feat.features.reshape(ds, -1).astype(np.float64)
    sel = small.reshape(-1)
    fg = flat[:, sel].sum(axis=1) / fg_count
    bg = flat[:, ~sel].sum(axis=1) / bg_count
    return PrototypePair(foreground=fg.astype(np.float32), background=bg.astype(np.float32),
                         fg_pixel_count=fg_count, bg_pixel_count=bg_count)


def zero_prototypes(ds: int) -> PrototypePair:
    """Support-removal stand-in: zero vectors, counts marked absent."""
    z = np.zeros(ds, dtype=np.float32)
    return PrototypePair(foreground=z, background=z.copy(), fg_pixel_count=0, bg_pixel_count=0)


def project_attribute(embedding, i: int, params) -> T.Tensor:
    """Run attribute embedding i through its dedicated MLP (1-based index)."""
    if not 1 <= i <= len(params.mlps):
        raise ContractError(f"MLP index {i} out of range 1..{len(params.mlps)}")
    mlp = params.mlps[i - 1]
    vec = embedding.vector if hasattr(embedding, "vector") else embedding
    x = T.reshape(T.constant(vec), (len(vec), 1))
    h = T.relu(T.add(T.matmul(mlp.w1, x), T.reshape(mlp.b1, (mlp.b1.data.shape[0], 1))))
    out = T.add(T.matmul(mlp.w2, h), T.reshape(mlp.b2, (mlp.b2.data.shape[0], 1)))
    return T.reshape(out, (out.data.shape[0],))


def project_all(attrs, params) -> ProjectedAttributes:
    """Project the n attribute embeddings (the template embedding is not projected)."""
    n = len(params.mlps)
    vectors = [project_attribute(attrs.foreground[i], i + 1, params) for i in range(n)]
    return ProjectedAttributes(vectors=vectors, mlp_indices=list(range(1, n + 1)))


def infonce(protos: PrototypePair, projected: ProjectedAttributes, tau1: float) -> T.Tensor:
    """InfoNCE with one negative: mean_i softplus((sim_neg - sim_pos_i) / tau1).

    Algebraically identical to -log(e^pos / (e^pos + e^neg)) and safe from
    exp overflow. Gradient reaches only the projected vectors.
    """
    if tau1 <= 0:
        raise ContractError(f"tau1 must be positive, got {tau1}")
    if projected.n == 0:
        raise ContractError("InfoNCE needs at least one projected attribute")
    pf = T.constant(protos.foreground)
    pb = T.constant(protos.background)
    inv = 1.0 / float(tau1)
    neg = T.scale(T.cosine(pf, pb), inv)
    terms = []
    for v in projected.vectors:
        pos = T.scale(T.cosine(pf, v), inv)
        terms.append(T.softplus(T.sub(neg, pos)))
    return T.tmean(T.stack_scalars(terms))
