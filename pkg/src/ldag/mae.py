"""Multi-attribute enhancement: text-image scores, Grad-CAM priors, refinement.

Per attribute i the pipeline is: pooled query vector vs text embedding
cosine over temperature tau, a two-way softmax against the background
score, then a Grad-CAM pass of the softmaxed foreground score back onto
the query token grid. Channel weights are the spatial mean of the token
gradients; the weighted, ReLU-clipped channel sum is the raw prior, which
is min-max normalized to [0, 1] and bilinearly resized to the decoder's
grid. A joint softmax over all n+2 scores is available as a variant.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attributes import AttributeSet
from .backend import bilinear_fwd
from .errors import ContractError, DegenerateInputError
from .providers import ClipEncoding


@dataclass
class ScoreSet:
    """Raw and softmaxed image-text scores for one query against one AttributeSet."""

    s_f: list  # n+1 raw foreground scores
    s_b: float
    tau: float
    softmaxed: list  # n+1 pairs (S_hat_f_i, S_hat_b_for_that_pair)
    mode: str = "pairwise"  # or "joint"
    # gradient plumbing for gradcam_prior
    _graph: T.Graph | None = field(default=None, repr=False)
    _tokens: T.Tensor | None = field(default=None, repr=False)
    _shat_f: list = field(default_factory=list, repr=False)


@dataclass
class PriorStack:
    """(n+1) x Hs x Ws refined prior maps, each in [0, 1]."""

    maps: np.ndarray
    normalization: list  # per-map (min, max) of the raw map
    degenerate: tuple = ()  # indices whose raw map was all zero
    flipped: tuple = ()  # indices orientation-flipped during refinement

    @property
    def count(self) -> int:
        return self.maps.shape[0]


def compute_scores(clip: ClipEncoding, attrs: AttributeSet, tau: float,
                   joint: bool = False) -> ScoreSet:
    """Cosine scores over tau plus the per-pair (or joint) softmax, recorded
    on a fresh graph so gradcam_prior can differentiate back to the tokens."""
    if tau <= 0:
        raise ContractError(f"tau must be positive, got {tau}")
    if float(np.abs(clip.pooled).max(initial=0.0)) == 0.0:
        raise DegenerateInputError("pooled query vector is zero; cannot score")
    tokens = T.Tensor(clip.tokens, requires_grad=True)
    graph = T.Graph()
    inv_tau = 1.0 / float(tau)
    with graph:
        pooled = tokens.mean(axis=(1, 2))
        fg_scores = [T.scale(T.cosine(pooled, T.constant(e.vector)), inv_tau)
                     for e in attrs.foreground]
        bg_score = T.scale(T.cosine(pooled, T.constant(attrs.background.vector)), inv_tau)
        shat_f = []
        softmaxed = []
        if joint:
            probs = T.softmax(T.stack_scalars(fg_scores + [bg_score]))
            sb = float(probs.data[-1])
            for i in range(len(fg_scores)):
                pick = T.tsum(T.mul(probs, T.constant(_one_hot(len(fg_scores) + 1, i))))
                shat_f.append(pick)
                softmaxed.append((float(probs.data[i]), sb))
        else:
            for s in fg_scores:
                pair = T.softmax(T.stack_scalars([s, bg_score]))
                pick = T.tsum(T.mul(pair, T.constant([1.0, 0.0])))
                shat_f.append(pick)
                softmaxed.append((float(pair.data[0]), float(pair.data[1])))
    return ScoreSet(
        s_f=[float(s.data) for s in fg_scores],
        s_b=float(bg_score.data),
        tau=float(tau),
        softmaxed=softmaxed,
        mode="joint" if joint else "pairwise",
        _graph=graph,
        _tokens=tokens,
        _shat_f=shat_f,
    )


def _one_hot(k: int, i: int) -> np.ndarray:
    v = np.zeros(k, dtype=np.float32)
    v[i] = 1.0
    return v


def gradcam_prior(clip: ClipEncoding, scores: ScoreSet, i: int) -> np.ndarray:
    """Raw prior map for attribute i: ReLU of gradient-weighted channel sum.

    Channel weights are the spatial mean of d S_hat_f_i / d tokens. A fully
    saturated softmax yields an all-zero map (flagged downstream).
    """
    if scores._graph is None or scores._tokens is None:
        raise ContractError("ScoreSet lacks its recorded graph")
    if not 0 <= i < len(scores._shat_f):
        raise ContractError(f"attribute index {i} out of range 0..{len(scores._shat_f) - 1}")
    grads = scores._graph.backward(scores._shat_f[i], write_grad=False)
    token_grad = grads.of(scores._tokens).astype(np.float64)
    omega = token_grad.mean(axis=(1, 2))  # one weight per channel
    cam = np.einsum("m,myx->yx", omega, clip.tokens.astype(np.float64))
    return np.maximum(cam, 0.0).astype(np.float32)


def _border_heavy(m: np.ndarray) -> bool:
    """True when the frame-edge ring of a map is brighter than its interior."""
    if m.shape[0] < 3 or m.shape[1] < 3:
        return False
    interior = m[1:-1, 1:-1]
    ring_sum = float(m.sum()) - float(interior.sum())
    ring_count = m.size - interior.size
    return ring_sum / ring_count > float(interior.mean())


def refine_prior(raw_maps: np.ndarray, out_hw, canonical_orientation: bool = True) -> PriorStack:
    """Min-max normalize each raw map to [0, 1], then resize to the target grid.

    With ``canonical_orientation`` (default) a normalized map whose border
    ring outshines its interior is inverted: targets sit away from the frame
    edge, so a prior bright at the border is lighting the background and
    carries the same evidence upside down. The rule is label-free and keeps
    orientation consistent across classes and scenes.
    """
    raw_maps = np.asarray(raw_maps, dtype=np.float32)
    if raw_maps.ndim != 3:
        raise ContractError(f"prior stack must be (n+1) x Hf x Wf, got {raw_maps.shape}")
    normalization = []
    degenerate = []
    flipped = []
    scaled = np.empty_like(raw_maps)
    for idx, m in enumerate(raw_maps):
        lo, hi = float(m.min()), float(m.max())
        normalization.append((lo, hi))
        if hi > lo:
            scaled[idx] = (m - lo) / (hi - lo)
            if canonical_orientation and _border_heavy(scaled[idx]):
                scaled[idx] = 1.0 - scaled[idx]
                flipped.append(idx)
        else:
            scaled[idx] = 0.0
            degenerate.append(idx)
    resized = bilinear_fwd(scaled, int(out_hw[0]), int(out_hw[1]))
    return PriorStack(maps=resized, normalization=normalization,
                      degenerate=tuple(degenerate), flipped=tuple(flipped))


def build_prior_stack(clip: ClipEncoding, attrs: AttributeSet, tau: float, out_hw,
                      joint: bool = False) -> tuple:
    """Full MaE pass: scores, one Grad-CAM map per foreground prompt, refinement."""
    scores = compute_scores(clip, attrs, tau, joint=joint)
    raw = np.stack([gradcam_prior(clip, scores, i) for i in range(len(attrs.foreground))])
    return refine_prior(raw, out_hw), scores


def zero_prior_stack(count: int, out_hw) -> PriorStack:
    """The MaE-off stand-in: an all-zero stack with the same channel count."""
    return PriorStack(maps=np.zeros((count, int(out_hw[0]), int(out_hw[1])), dtype=np.float32),
                      normalization=[(0.0, 0.0)] * count,
                      degenerate=tuple(range(count)))
