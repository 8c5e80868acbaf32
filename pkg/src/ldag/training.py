"""Losses, optimizer, and the episodic train/eval harness.

The loss is BCE on the query prediction plus alpha times the InfoNCE
alignment term. Adam (0.9 / 0.999 / 1e-8, bias-corrected) updates only the
projection MLPs and the two fusion nets. Module toggles reproduce the
ablation grid: mae_on swaps the prior stack for zeros, maa_on kills the
alignment loss, use_support zeroes the prototypes and the alignment loss.
"""

import json
import os
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import maa, mae, metrics
from . import tensor as T
from .attributes import (AttributeSet, ChatEndpointConfig, assemble, fetch_attributes,
                         build_llm_instruction)
from .backend import adam_step
from .episodes import Episode, sample_episode, split_folds, synthetic_catalog
from .errors import ContractError, DegenerateEpisodeError, DimensionError, NanGradientError
from .fusion import (ModelParameters, Prediction, fuse_support,
                     fuse_support_per_attribute, kshot_aggregate, predict_query)
from .providers import (FEATURE_DIM, ClipEncoding, SamEncoding, load_feature_file,
                        toy_encode_image_clip, toy_encode_image_sam, toy_encode_text)
from .rng import SplitMix64, derive_seed

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    alpha: float = 0.5
    n: int = 5
    tau: float = 1.0
    tau1: float = 1.0
    lr: float = 1e-4
    epochs: int = 5
    batch_size: int = 1
    seed: int = 7
    shots: int = 1
    fold: int = 0
    fold_count: int = 4
    episodes_per_epoch: int = 40
    eval_episodes: int = 20
    mae_on: bool = True
    maa_on: bool = True
    use_support: bool = True
    joint_softmax: bool = False
    per_attribute_fusion: bool = False
    provider: str = "toy"
    data_path: str = ""
    offline: bool = True
    threads: int = 1

    def __post_init__(self):
        if self.alpha < 0:
            raise ContractError(f"alpha must be >= 0, got {self.alpha}")
        if self.lr <= 0:
            raise ContractError(f"lr must be > 0, got {self.lr}")
        if self.shots < 1:
            raise ContractError(f"shots must be >= 1, got {self.shots}")
        if self.tau <= 0 or self.tau1 <= 0:
            raise ContractError("temperatures must be positive")
        if self.n < 0:
            raise ContractError(f"n must be >= 0, got {self.n}")
        if self.batch_size < 1:
            raise ContractError(f"batch_size must be >= 1, got {self.batch_size}")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class LossBreakdown:
    pre: float
    inf: float
    alpha: float
    total: float


def bce_loss(pred, gt: np.ndarray) -> T.Tensor:
    """Pixel-mean binary cross-entropy from logits (stable softplus form)."""
    logits_t = pred.logits_t if isinstance(pred, Prediction) else pred
    if logits_t is None:
        raise ContractError("prediction carries no differentiable logits")
    gt = np.asarray(gt)
    if gt.shape != logits_t.data.shape:
        raise DimensionError(f"mask {gt.shape} vs logits {logits_t.data.shape}")
    if not np.isin(gt, (0, 1)).all():
        raise ContractError("ground-truth mask must be binary")
    one_minus_y = T.constant((1.0 - gt).astype(np.float32))
    # softplus(-z) + (1 - y) * z  ==  -[y log p + (1-y) log(1-p)]
    per_pixel = T.add(T.softplus(T.neg(logits_t)), T.mul(one_minus_y, logits_t))
    return T.tmean(per_pixel)


def total_loss(pre_t: T.Tensor, inf_t, alpha: float):
    """Combined objective; a disabled alignment term contributes exactly zero."""
    if alpha < 0:
        raise ContractError(f"alpha must be >= 0, got {alpha}")
    if inf_t is None:
        total_t = pre_t
        inf_val = 0.0
    else:
        total_t = T.add(pre_t, T.scale(inf_t, alpha))
        inf_val = float(inf_t.data)
    breakdown = LossBreakdown(pre=float(pre_t.data), inf=inf_val, alpha=float(alpha),
                              total=float(total_t.data))
    return total_t, breakdown


class Adam:
    """Bias-corrected Adam over a ModelParameters' trainable tensors."""

    def __init__(self, params: ModelParameters, lr: float):
        self.lr = float(lr)
        self.t = 0
        self.slots = {name: (np.zeros_like(t.data), np.zeros_like(t.data))
                      for name, t in params.trainable()}

    def step(self, params: ModelParameters, grads: dict) -> None:
        """Apply one update from accumulated gradient arrays keyed by name."""
        self.t += 1
        for name, tensor in params.trainable():
            g = grads.get(name)
            if g is None:
                continue
            if np.isnan(g).any():
                raise NanGradientError(f"NaN gradient for tensor {name!r} at step {self.t}")
            m, v = self.slots[name]
            tensor.data = adam_step(tensor.data, g.astype(tensor.data.dtype, copy=False),
                                    m, v, self.t, self.lr, ADAM_BETA1, ADAM_BETA2, ADAM_EPS)
            tensor.grad = None


# ---------------------------------------------------------------------------
# episode encoding and the per-episode forward pass

@dataclass
class EncodedEpisode:
    """An episode after the frozen encoders ran (toy or imported)."""

    clip_q: ClipEncoding
    sam_q: SamEncoding
    sam_s: list
    masks_s: list
    mask_q: np.ndarray
    class_id: str
    fold_id: int
    episode_id: str
    out_hw: tuple


class _Cache(OrderedDict):
    def __init__(self, cap=2048):
        super().__init__()
        self.cap = cap

    def put(self, key, value):
        self[key] = value
        if len(self) > self.cap:
            self.popitem(last=False)


class Pipeline:
    """Shared frozen context: encoders, attribute sets, prior/prototype caches."""

    def __init__(self, config: TrainConfig, endpoint: ChatEndpointConfig | None = None,
                 fixture_dir: str = "", catalog=None):
        self.config = config
        self.endpoint = endpoint or ChatEndpointConfig.from_env()
        self.fixture_dir = fixture_dir
        self.provider_seed = derive_seed(config.seed, "ldag/providers")
        self.catalog = catalog or synthetic_catalog()
        self._attr_sets: dict = {}
        self._encoded = _Cache()
        self._priors = _Cache()
        self._protos = _Cache()

    def attribute_set(self, class_name: str) -> AttributeSet:
        if class_name not in self._attr_sets:
            if self.config.provider == "files":
                self._attr_sets[class_name] = load_file_attribute_set(
                    self.config.data_path, class_name, self.config.n)
            else:
                n = self.config.n
                if n > 0:
                    instruction = build_llm_instruction(self.catalog, class_name, n)
                    prompts = fetch_attributes(
                        instruction, self.endpoint, dataset=self.catalog.dataset_name,
                        class_name=class_name, n=n, fixture_dir=self.fixture_dir,
                        offline=self.config.offline)
                else:
                    prompts = []
                enc = lambda text, role: toy_encode_text(text, self.provider_seed, role)
                self._attr_sets[class_name] = assemble(prompts, class_name, enc)
        return self._attr_sets[class_name]

    def encode(self, episode: Episode) -> EncodedEpisode:
        cached = self._encoded.get(episode.episode_id)
        if cached is not None:
            return cached
        q_img, q_mask = episode.query
        enc = EncodedEpisode(
            clip_q=toy_encode_image_clip(q_img, self.provider_seed),
            sam_q=toy_encode_image_sam(q_img, self.provider_seed),
            sam_s=[toy_encode_image_sam(img, self.provider_seed)
                   for img, _ in episode.supports],
            masks_s=[m for _, m in episode.supports],
            mask_q=q_mask,
            class_id=episode.class_id,
            fold_id=episode.fold_id,
            episode_id=episode.episode_id,
            out_hw=(q_mask.shape[0], q_mask.shape[1]),
        )
        self._encoded.put(episode.episode_id, enc)
        return enc

    def prior_stack(self, enc: EncodedEpisode) -> mae.PriorStack:
        cfg = self.config
        hs, ws = enc.sam_q.features.shape[1:]
        if not cfg.mae_on:
            return mae.zero_prior_stack(cfg.n + 1, (hs, ws))
        cached = self._priors.get(enc.episode_id)
        if cached is None:
            attrs = self.attribute_set(enc.class_id)
            cached, _ = mae.build_prior_stack(enc.clip_q, attrs, cfg.tau, (hs, ws),
                                              joint=cfg.joint_softmax)
            self._priors.put(enc.episode_id, cached)
        return cached

    def prototypes(self, enc: EncodedEpisode, shot: int) -> maa.PrototypePair:
        if not self.config.use_support:
            return maa.zero_prototypes(enc.sam_s[shot].features.shape[0])
        key = (enc.episode_id, shot)
        cached = self._protos.get(key)
        if cached is None:
            cached = maa.map_prototypes(enc.sam_s[shot], enc.masks_s[shot])
            self._protos.put(key, cached)
        return cached


def episode_losses(enc: EncodedEpisode, params: ModelParameters, pipe: Pipeline):
    """Forward one episode; returns (total_t, LossBreakdown, aggregated Prediction)."""
    cfg = pipe.config
    attrs = pipe.attribute_set(enc.class_id)
    prior = pipe.prior_stack(enc)
    projected = maa.project_all(attrs, params)
    fuse = fuse_support_per_attribute if cfg.per_attribute_fusion else fuse_support

    pre_terms = []
    inf_terms = []
    preds = []
    for shot in range(len(enc.sam_s)):
        protos = pipe.prototypes(enc, shot)
        fused = fuse(enc.sam_s[shot], projected, protos, params)
        pred = predict_query(fused, enc.sam_q, prior, params, params.decoder, enc.out_hw)
        preds.append(pred)
        pre_terms.append(bce_loss(pred, enc.mask_q))
        if cfg.maa_on and cfg.use_support and cfg.n >= 1:
            inf_terms.append(maa.infonce(protos, projected, cfg.tau1))

    pre_t = pre_terms[0] if len(pre_terms) == 1 else T.tmean(T.stack_scalars(pre_terms))
    inf_t = None
    if inf_terms:
        inf_t = inf_terms[0] if len(inf_terms) == 1 else T.tmean(T.stack_scalars(inf_terms))
    total_t, breakdown = total_loss(pre_t, inf_t, cfg.alpha)
    agg = preds[0] if len(preds) == 1 else kshot_aggregate(preds)
    return total_t, breakdown, agg


@dataclass
class EpochStats:
    epoch: int
    loss_pre: float
    loss_inf: float
    loss_total: float
    train_miou: float
    skipped: int = 0

    def to_json(self) -> str:
        return json.dumps({
            "epoch": self.epoch, "loss_pre": self.loss_pre, "loss_inf": self.loss_inf,
            "loss_total": self.loss_total, "train_miou": self.train_miou,
            "skipped": self.skipped}, sort_keys=True)


@dataclass
class TrainResult:
    params: ModelParameters
    history: list
    step_losses: list = field(default_factory=list)
    skipped_episodes: int = 0


def train(config: TrainConfig, pipe: Pipeline | None = None,
          episodes_override: list | None = None, log_path: str | None = None) -> TrainResult:
    """Episodic training; deterministic given the config seed.

    ``episodes_override`` freezes the episode list (the overfit suite);
    otherwise each epoch samples fresh episodes from the training classes.
    Degenerate episodes are counted and skipped, never averaged in.
    """
    pipe = pipe or Pipeline(config)
    split = split_folds(pipe.catalog, config.fold_count, config.fold)
    params = ModelParameters.init(FEATURE_DIM, FEATURE_DIM, config.n,
                                  derive_seed(config.seed, "ldag/init"))
    opt = Adam(params, config.lr)
    data_seed = derive_seed(config.seed, "ldag/episodes")
    class_picker = SplitMix64(derive_seed(config.seed, "ldag/class-order"))

    history = []
    step_losses = []
    skipped_total = 0
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(config.epochs):
            if episodes_override is not None:
                epoch_episodes = episodes_override
            else:
                epoch_episodes = []
                for i in range(config.episodes_per_epoch):
                    cls = split.train_classes[
                        class_picker.next_u64() % len(split.train_classes)]
                    try:
                        epoch_episodes.append(sample_episode(
                            split, cls, config.shots,
                            derive_seed(data_seed, f"ep/{epoch}/{i}")))
                    except DegenerateEpisodeError:
                        skipped_total += 1
            stats = _run_epoch(epoch, epoch_episodes, params, opt, pipe, step_losses)
            skipped_total += stats.skipped
            history.append(stats)
            if log_fh:
                log_fh.write(stats.to_json() + "\n")
    finally:
        if log_fh:
            log_fh.close()
    return TrainResult(params=params, history=history, step_losses=step_losses,
                       skipped_episodes=skipped_total)


def _run_epoch(epoch: int, episodes: list, params: ModelParameters, opt: Adam,
               pipe: Pipeline, step_losses: list) -> EpochStats:
    cfg = pipe.config
    acc: dict = {}
    acc_count = 0
    sums = np.zeros(3, dtype=np.float64)
    ious = []
    skipped = 0

    def flush():
        nonlocal acc, acc_count
        if acc_count == 0:
            return
        grads = {k: v / acc_count for k, v in acc.items()}
        opt.step(params, grads)
        acc = {}
        acc_count = 0

    for episode in episodes:
        try:
            enc = pipe.encode(episode)
            with T.Graph() as graph:
                total_t, breakdown, pred = episode_losses(enc, params, pipe)
            grads = graph.backward(total_t, write_grad=False)
        except DegenerateEpisodeError:
            skipped += 1
            continue
        for name, tensor in params.trainable():
            g = grads.of(tensor)
            prev = acc.get(name)
            acc[name] = g if prev is None else prev + g
        acc_count += 1
        sums += (breakdown.pre, breakdown.inf, breakdown.total)
        step_losses.append(breakdown.total)
        ious.append(metrics.iou(pred.mask, enc.mask_q))
        if acc_count == cfg.batch_size:
            flush()
    flush()

    n_done = max(len(ious), 1)
    return EpochStats(epoch=epoch, loss_pre=float(sums[0] / n_done),
                      loss_inf=float(sums[1] / n_done),
                      loss_total=float(sums[2] / n_done),
                      train_miou=float(np.mean(ious)) if ious else 0.0, skipped=skipped)


# ---------------------------------------------------------------------------
# evaluation

def evaluate(params: ModelParameters, config: TrainConfig, pipe: Pipeline | None = None,
             on_train_classes: bool = False,
             episodes_override: list | None = None) -> tuple:
    """Per-episode IoU rows plus the aggregated report; pure given inputs."""
    pipe = pipe or Pipeline(config)
    split = split_folds(pipe.catalog, config.fold_count, config.fold)
    classes = split.train_classes if on_train_classes else split.test_classes
    eval_seed = derive_seed(config.seed, "ldag/eval")

    episodes = []
    if episodes_override is not None:
        episodes = list(episodes_override)
    else:
        for cls in classes:
            for j in range(config.eval_episodes):
                try:
                    episodes.append(sample_episode(
                        split, cls, config.shots, derive_seed(eval_seed, f"{cls}/{j}"),
                        use_train_classes=on_train_classes))
                except DegenerateEpisodeError:
                    continue

    def run_one(episode):
        enc = pipe.encode(episode)
        pred = predict_episode(enc, params, pipe)
        return metrics.episode_result(pred.mask, enc.mask_q, enc.episode_id,
                                      enc.class_id, enc.fold_id)

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            rows = list(pool.map(run_one, episodes))
    else:
        rows = [run_one(e) for e in episodes]
    report = metrics.aggregate(rows, config=config.to_dict())
    return rows, report


def load_encoded_episode(directory: str) -> EncodedEpisode:
    """Read an episode of imported features + PGM masks (the exporter layout).

    Expected files: episode.json, query.clip.ldt (+ .pooled sibling),
    query.sam.ldt, query.mask.pgm, and supportJ.sam.ldt / supportJ.mask.pgm
    for J = 0..k-1.
    """
    from .netpbm import read_mask

    with open(os.path.join(directory, "episode.json"), "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    clip_q = load_feature_file(os.path.join(directory, "query.clip.ldt"))
    sam_q = load_feature_file(os.path.join(directory, "query.sam.ldt"))
    mask_q = read_mask(os.path.join(directory, "query.mask.pgm"))
    sam_s = []
    masks_s = []
    j = 0
    while os.path.exists(os.path.join(directory, f"support{j}.sam.ldt")):
        sam_s.append(load_feature_file(os.path.join(directory, f"support{j}.sam.ldt")))
        masks_s.append(read_mask(os.path.join(directory, f"support{j}.mask.pgm")))
        j += 1
    if not sam_s:
        raise ContractError(f"episode directory {directory} has no support features")
    return EncodedEpisode(
        clip_q=clip_q, sam_q=sam_q, sam_s=sam_s, masks_s=masks_s, mask_q=mask_q,
        class_id=meta["class_id"], fold_id=int(meta.get("fold_id", 0)),
        episode_id=meta.get("episode_id", os.path.basename(directory.rstrip("/"))),
        out_hw=(mask_q.shape[0], mask_q.shape[1]))


def load_file_episodes(data_path: str) -> list:
    """Every episode directory under <data_path>/episodes, sorted by id."""
    base = os.path.join(data_path, "episodes")
    if not os.path.isdir(base):
        raise ContractError(f"files provider: {base} is not a directory")
    episodes = []
    for name in sorted(os.listdir(base)):
        directory = os.path.join(base, name)
        if os.path.isdir(directory):
            episodes.append(load_encoded_episode(directory))
    if not episodes:
        raise ContractError(f"files provider: no episodes under {base}")
    return episodes


def load_file_attribute_set(data_path: str, class_name: str, n: int) -> AttributeSet:
    """Attribute prompts + imported text embeddings written by an exporter.

    Layout: <data_path>/attributes/<slug>.attr{i}.ldt, <slug>.template.ldt,
    <slug>.background.ldt, plus a fixture JSON with the prompts under
    <data_path>/fixtures/.
    """
    import glob
    import re

    from .providers import load_feature_file

    slug = re.sub(r"[^0-9a-zA-Z]+", "-", class_name).strip("-").lower()
    attr_dir = os.path.join(data_path, "attributes")
    prompts = []
    pattern = os.path.join(data_path, "fixtures", f"*.{slug}.n{n}.*.json")
    for candidate in sorted(glob.glob(pattern)):
        with open(candidate, "r", encoding="utf-8") as fh:
            prompts = json.load(fh)["prompts"]
        break
    foreground = []
    for i in range(n):
        emb = load_feature_file(os.path.join(attr_dir, f"{slug}.attr{i}.ldt"))
        foreground.append(emb)
    foreground.append(load_feature_file(os.path.join(attr_dir, f"{slug}.template.ldt")))
    background = load_feature_file(os.path.join(attr_dir, f"{slug}.background.ldt"))
    if not prompts:
        prompts = [e.prompt for e in foreground[:n]]
    return AttributeSet(
        class_name=class_name,
        attribute_prompts=list(prompts[:n]),
        template_prompt=foreground[-1].prompt,
        background_prompt=background.prompt,
        foreground=foreground,
        background=background,
        provenance="imported-files",
    )


def evaluate_files(params: ModelParameters, config: TrainConfig,
                   pipe: Pipeline | None = None) -> tuple:
    """Evaluate a checkpoint over exported episode directories."""
    episodes = load_file_episodes(config.data_path)
    classes = sorted({e.class_id for e in episodes})
    if pipe is None:
        catalog = None
        if len(classes) >= 2:
            from .attributes import ClassCatalog
            catalog = ClassCatalog(classes=tuple(classes), dataset_name="imported")
        pipe = Pipeline(config, catalog=catalog)
    rows = []
    for enc in episodes:
        pred = predict_episode(enc, params, pipe)
        rows.append(metrics.episode_result(pred.mask, enc.mask_q, enc.episode_id,
                                           enc.class_id, enc.fold_id))
    report = metrics.aggregate(rows, config=config.to_dict())
    return rows, report


def predict_episode(enc: EncodedEpisode, params: ModelParameters, pipe: Pipeline) -> Prediction:
    """Inference path: per-support predictions aggregated over k shots."""
    cfg = pipe.config
    attrs = pipe.attribute_set(enc.class_id)
    prior = pipe.prior_stack(enc)
    projected = maa.project_all(attrs, params)
    fuse = fuse_support_per_attribute if cfg.per_attribute_fusion else fuse_support
    preds = []
    for shot in range(len(enc.sam_s)):
        protos = pipe.prototypes(enc, shot)
        fused = fuse(enc.sam_s[shot], projected, protos, params)
        preds.append(predict_query(fused, enc.sam_q, prior, params, params.decoder,
                                   enc.out_hw))
    return preds[0] if len(preds) == 1 else kshot_aggregate(preds)
