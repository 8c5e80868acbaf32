"""Support fusion, query decoding, and k-shot aggregation.

Two light 1x1 fusion nets: the first mixes [support features | mean
projected attribute | foreground prototype] back to Ds channels; the
second mixes [fused support | query features | n+1 prior maps] and hands
the result to a frozen seeded linear decoder followed by bilinear
upsampling to mask resolution.

Trainable tensors: the n projection MLPs and both fusion nets. The decoder
and every provider matrix stay frozen; their checksums never change.
"""

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import ldagtnsr
from . import tensor as T
from .errors import ContractError, DimensionError
from .maa import PrototypePair, ProjectedAttributes
from .mae import PriorStack
from .providers import SamEncoding
from .rng import derive_seed, gaussian_matrix

_DECODER_LABEL = "ldag/decoder"

# Init gains, sized so the 200-step low-rate overfit regime can move pixel
# signs: hot hidden layers and decoder (Adam steps are magnitude-normalized,
# so sensitivity must come from the forward scale), near-zero output layers,
# and a positive hidden bias keeping most ReLU units live at init.
_F1_HIDDEN_GAIN = 4.0
_F2_HIDDEN_GAIN = 16.0
_OUT_GAIN = 0.005
_HIDDEN_BIAS = 0.5
_DECODER_GAIN = 16.0


@dataclass
class Mlp:
    w1: T.Tensor
    b1: T.Tensor
    w2: T.Tensor
    b2: T.Tensor

    def tensors(self):
        return [("w1", self.w1), ("b1", self.b1), ("w2", self.w2), ("b2", self.b2)]


@dataclass
class FusionNet:
    w1: T.Tensor
    b1: T.Tensor
    w2: T.Tensor
    b2: T.Tensor

    def tensors(self):
        return [("w1", self.w1), ("b1", self.b1), ("w2", self.w2), ("b2", self.b2)]

    def apply(self, grid: T.Tensor) -> T.Tensor:
        h = T.relu(T.channel_mix(grid, self.w1, self.b1))
        return T.channel_mix(h, self.w2, self.b2)


@dataclass(frozen=True)
class FrozenDecoder:
    """Seeded per-cell linear map Ds -> 1, then bilinear upsample; never trained."""

    weight: np.ndarray  # 1 x Ds float32
    seed: int

    @classmethod
    def create(cls, ds: int, seed: int) -> "FrozenDecoder":
        w = gaussian_matrix(derive_seed(seed, _DECODER_LABEL), 1, ds, _DECODER_GAIN / np.sqrt(ds))
        return cls(weight=w, seed=seed)

    def checksum(self) -> str:
        return hashlib.sha256(self.weight.tobytes()).hexdigest()

    def decode(self, grid: T.Tensor, out_hw) -> T.Tensor:
        """Ds x Hs x Ws -> H x W logits."""
        logits = T.channel_mix(grid, T.constant(self.weight))
        logits = T.bilinear_resize(logits, out_hw)
        return T.reshape(logits, (int(out_hw[0]), int(out_hw[1])))


@dataclass
class ModelParameters:
    """All weights: n projection MLPs, fusion nets F1/F2, and the frozen decoder."""

    d_text: int
    d_vis: int
    n: int
    seed: int
    mlps: list
    f1: FusionNet
    f2: FusionNet
    decoder: FrozenDecoder

    @classmethod
    def init(cls, d_text: int, d_vis: int, n: int, seed: int) -> "ModelParameters":
        def w(label, rows, cols, gain=1.0):
            scale = gain / np.sqrt(cols)
            return T.parameter(gaussian_matrix(derive_seed(seed, label), rows, cols, scale))

        def b(rows, value=0.0):
            return T.parameter(np.full(rows, value, dtype=np.float32))

        mlps = [
            Mlp(w1=w(f"mlp{i}/w1", d_text, d_text), b1=b(d_text),
                w2=w(f"mlp{i}/w2", d_vis, d_text), b2=b(d_vis))
            for i in range(1, n + 1)
        ]
        f1 = FusionNet(w1=w("f1/w1", d_vis, 3 * d_vis, _F1_HIDDEN_GAIN),
                       b1=b(d_vis, _HIDDEN_BIAS),
                       w2=w("f1/w2", d_vis, d_vis, _OUT_GAIN), b2=b(d_vis))
        f2 = FusionNet(w1=w("f2/w1", d_vis, 2 * d_vis + n + 1, _F2_HIDDEN_GAIN),
                       b1=b(d_vis, _HIDDEN_BIAS),
                       w2=w("f2/w2", d_vis, d_vis, _OUT_GAIN), b2=b(d_vis))
        return cls(d_text=d_text, d_vis=d_vis, n=n, seed=seed, mlps=mlps, f1=f1, f2=f2,
                   decoder=FrozenDecoder.create(d_vis, seed))

    def trainable(self):
        """Ordered (name, tensor) pairs; the optimizer updates exactly these."""
        out = []
        for i, mlp in enumerate(self.mlps, start=1):
            out.extend((f"mlp{i}/{k}", t) for k, t in mlp.tensors())
        out.extend((f"f1/{k}", t) for k, t in self.f1.tensors())
        out.extend((f"f2/{k}", t) for k, t in self.f2.tensors())
        return out

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, t in self.trainable():
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.data, dtype=np.float32).tobytes())
        return h.hexdigest()

    def save(self, directory: str) -> None:
        """Checkpoint: one LDAGTNSR file per trainable tensor plus a manifest."""
        os.makedirs(directory, exist_ok=True)
        files = {}
        for name, t in self.trainable():
            fname = name.replace("/", "_") + ".ldt"
            ldagtnsr.write_tensor(os.path.join(directory, fname),
                                  t.data.astype(np.float32),
                                  {"kind": "parameter", "source": "checkpoint", "name": name})
            files[name] = fname
        manifest = {"d_text": self.d_text, "d_vis": self.d_vis, "n": self.n,
                    "seed": self.seed, "files": files, "checksum": self.checksum()}
        with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, directory: str) -> "ModelParameters":
        with open(os.path.join(directory, "manifest.json"), "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        params = cls.init(manifest["d_text"], manifest["d_vis"], manifest["n"], manifest["seed"])
        by_name = dict(params.trainable())
        for name, fname in manifest["files"].items():
            array, _ = ldagtnsr.read_tensor(os.path.join(directory, fname))
            if array.shape != by_name[name].data.shape:
                raise ContractError(f"checkpoint tensor {name} has shape {array.shape}, "
                                    f"expected {by_name[name].data.shape}")
            by_name[name].data = array
        if params.checksum() != manifest["checksum"]:
            raise ContractError("checkpoint checksum mismatch after load")
        return params


@dataclass
class Prediction:
    """Query mask prediction; mask is thresholded at 0.5 with ties foreground."""

    logits: np.ndarray  # H x W float32
    probabilities: np.ndarray  # H x W float32 in (0, 1)
    mask: np.ndarray  # H x W uint8
    logits_t: T.Tensor | None = field(default=None, repr=False)  # training path

    @classmethod
    def from_logits(cls, logits_t: T.Tensor) -> "Prediction":
        logits = logits_t.data.astype(np.float32)
        probs = 1.0 / (1.0 + np.exp(-logits.astype(np.float64)))
        probs = probs.astype(np.float32)
        return cls(logits=logits, probabilities=probs,
                   mask=(probs >= 0.5).astype(np.uint8), logits_t=logits_t)


def mean_projected(projected: ProjectedAttributes, d_vis: int) -> T.Tensor:
    """Average the n projected attribute vectors; zero vector when n = 0."""
    if projected.n == 0:
        return T.constant(np.zeros(d_vis, dtype=np.float32))
    acc = projected.vectors[0]
    for v in projected.vectors[1:]:
        acc = T.add(acc, v)
    return T.scale(acc, 1.0 / projected.n)


def fuse_support(feat: SamEncoding, projected: ProjectedAttributes,
                 protos: PrototypePair, params: ModelParameters) -> T.Tensor:
    """Channel-concat [support | mean attribute | prototype], mixed by F1."""
    ds, hs, ws = feat.features.shape
    if ds != params.d_vis:
        raise DimensionError(f"support features have {ds} channels, params want {params.d_vis}")
    attr_bar = mean_projected(projected, params.d_vis)
    blocks = [
        T.constant(feat.features),
        T.broadcast_spatial(attr_bar, hs, ws),
        T.broadcast_spatial(T.constant(protos.foreground), hs, ws),
    ]
    return params.f1.apply(T.concat(blocks, axis=0))


def fuse_support_per_attribute(feat: SamEncoding, projected: ProjectedAttributes,
                               protos: PrototypePair, params: ModelParameters) -> T.Tensor:
    """Ablation variant: fuse each attribute separately through F1, then average."""
    if projected.n == 0:
        return fuse_support(feat, projected, protos, params)
    ds, hs, ws = feat.features.shape
    fused = None
    for v in projected.vectors:
        blocks = [
            T.constant(feat.features),
            T.broadcast_spatial(v, hs, ws),
            T.broadcast_spatial(T.constant(protos.foreground), hs, ws),
        ]
        out = params.f1.apply(T.concat(blocks, axis=0))
        fused = out if fused is None else T.add(fused, out)
    return T.scale(fused, 1.0 / projected.n)


def predict_query(fused: T.Tensor, query: SamEncoding, prior: PriorStack,
                  params: ModelParameters, decoder: FrozenDecoder, out_hw) -> Prediction:
    """Concatenate [fused | query | priors], run F2 and the frozen decoder."""
    if prior.count != params.n + 1:
        raise ContractError(
            f"prior stack has {prior.count} maps, expected n+1 = {params.n + 1}")
    ds, hs, ws = query.features.shape
    if prior.maps.shape[1:] != (hs, ws):
        raise DimensionError(
            f"prior maps {prior.maps.shape[1:]} do not match query grid {(hs, ws)}")
    stacked = T.concat([fused, T.constant(query.features), T.constant(prior.maps)], axis=0)
    grid = params.f2.apply(stacked)
    logits = decoder.decode(grid, out_hw)
    return Prediction.from_logits(logits)


def kshot_aggregate(preds: list) -> Prediction:
    """Mean of the k probability maps; logits become logit(mean)."""
    if not preds:
        raise ContractError("kshot_aggregate needs at least one prediction")
    shapes = {p.probabilities.shape for p in preds}
    if len(shapes) != 1:
        raise DimensionError(f"predictions disagree on extents: {shapes}")
    stack = np.stack([p.probabilities.astype(np.float64) for p in preds])
    mean = stack.sum(axis=0) / len(preds)
    eps = 1e-12
    clipped = np.clip(mean, eps, 1.0 - eps)
    logits = np.log(clipped / (1.0 - clipped)).astype(np.float32)
    mean32 = mean.astype(np.float32)
    return Prediction(logits=logits, probabilities=mean32,
                      mask=(mean32 >= 0.5).astype(np.uint8), logits_t=None)
