import math

import numpy as np
import pytest

from helpers import rel_err
from ldag import tensor as T
from ldag.errors import ContractError, DegenerateInputError
from ldag.mae import (build_prior_stack, compute_scores, gradcam_prior,
                      refine_prior, zero_prior_stack)
from ldag.providers import ClipEncoding

RNG = np.random.default_rng(17)


def _clip_from_tokens(tokens):
    tokens = np.asarray(tokens, dtype=np.float32)
    pooled = tokens.mean(axis=(1, 2), dtype=np.float64).astype(np.float32)
    return ClipEncoding(tokens=tokens, pooled=pooled, source="toy")


def _attr_set(vectors, bg_vector, class_name="thing"):
    class E:
        def __init__(self, v, prompt, role):
            self.vector = np.asarray(v, dtype=np.float32)
            self.prompt = prompt
            self.role = role
    from ldag.attributes import AttributeSet
    fg = [E(v, f"a clean origami {class_name}. It {i}.", "foreground-attribute")
          for i, v in enumerate(vectors[:-1])]
    fg.append(E(vectors[-1], f"a photo of {class_name}", "foreground-template"))
    return AttributeSet(
        class_name=class_name,
        attribute_prompts=[e.prompt for e in fg[:-1]],
        template_prompt=fg[-1].prompt,
        background_prompt=f"a photo without {class_name}",
        foreground=fg,
        background=E(bg_vector, f"a photo without {class_name}", "background"),
    )


def test_compute_scores_aligned_case():
    # pooled equals the first text embedding, background orthogonal
    d = 4
    tokens = np.zeros((d, 2, 2), dtype=np.float32)
    tokens[0] = 1.0  # pooled = e0
    attrs = _attr_set([np.eye(d, dtype=np.float32)[0]], np.eye(d, dtype=np.float32)[1])
    scores = compute_scores(_clip_from_tokens(tokens), attrs, tau=1.0)
    assert scores.s_f[0] == pytest.approx(1.0, abs=1e-6)
    assert scores.s_b == pytest.approx(0.0, abs=1e-6)
    shat_f, shat_b = scores.softmaxed[0]
    assert shat_f == pytest.approx(math.e / (math.e + 1.0), abs=1e-6)  # 0.7310586
    assert shat_f + shat_b == pytest.approx(1.0, abs=1e-6)


def test_compute_scores_symmetric_pair():
    d = 4
    tokens = np.zeros((d, 2, 2), dtype=np.float32)
    tokens[0] = 1.0
    same = np.eye(d, dtype=np.float32)[1]
    scores = compute_scores(_clip_from_tokens(tokens), _attr_set([same], same), tau=1.0)
    assert scores.softmaxed[0][0] == pytest.approx(0.5, abs=1e-6)
    assert scores.softmaxed[0][1] == pytest.approx(0.5, abs=1e-6)


@pytest.mark.parametrize("tau", [0.5, 1.0, 2.0])
def test_tau_scaling_preserves_argmax(tau):
    d = 6
    tokens = RNG.standard_normal((d, 3, 3)).astype(np.float32) + 0.2
    vs = [RNG.standard_normal(d).astype(np.float32) for _ in range(3)]
    attrs = _attr_set(vs, RNG.standard_normal(d).astype(np.float32))
    base = compute_scores(_clip_from_tokens(tokens), attrs, tau=1.0)
    scaled = compute_scores(_clip_from_tokens(tokens), attrs, tau=tau)
    for (bf, bb), (sf, sb) in zip(base.softmaxed, scaled.softmaxed):
        assert (bf > bb) == (sf > sb)
    assert np.allclose(np.array(scaled.s_f) * tau, base.s_f, atol=1e-5)


def test_compute_scores_rejects_zero_pooled():
    clip = ClipEncoding(tokens=np.zeros((4, 2, 2), dtype=np.float32),
                        pooled=np.zeros(4, dtype=np.float32), source="toy")
    attrs = _attr_set([np.ones(4, dtype=np.float32)], np.ones(4, dtype=np.float32))
    with pytest.raises(DegenerateInputError):
        compute_scores(clip, attrs, tau=1.0)
    with pytest.raises(ContractError):
        compute_scores(_clip_from_tokens(np.ones((4, 2, 2))), attrs, tau=0.0)


def test_gradcam_single_channel_positive():
    # one channel, constant positive map, positive omega: cam = omega * map > 0.
    # The score graph is hand-built so the channel weight is positive by
    # construction (a cosine-driven score would be scale-invariant here).
    from ldag.mae import ScoreSet
    tokens_arr = np.full((1, 2, 2), 2.0, dtype=np.float32)
    tokens = T.Tensor(tokens_arr, requires_grad=True)
    graph = T.Graph()
    with graph:
        score = T.scale(T.tmean(tokens), 0.7)
    scores = ScoreSet(s_f=[0.7 * 2.0], s_b=0.0, tau=1.0, softmaxed=[(0.6, 0.4)],
                      _graph=graph, _tokens=tokens, _shat_f=[score])
    cam = gradcam_prior(_clip_from_tokens(tokens_arr), scores, 0)
    assert cam.shape == (2, 2)
    assert (cam > 0).all()
    assert np.allclose(cam, (0.7 / 4.0) * 2.0)


def test_gradcam_matches_finite_differences_2ch():
    # d S_hat_f_i / d tokens on a 2-channel 2x2 grid, 32-bit path, < 1e-4
    tokens = RNG.standard_normal((2, 2, 2)).astype(np.float32)
    vs = [RNG.standard_normal(2).astype(np.float32)]
    bg = RNG.standard_normal(2).astype(np.float32)
    attrs = _attr_set(vs, bg)

    clip = _clip_from_tokens(tokens)
    scores = compute_scores(clip, attrs, tau=1.0)
    grads = scores._graph.backward(scores._shat_f[0], write_grad=False)
    analytic = grads.of(scores._tokens)

    flat = tokens.reshape(-1)
    numeric = np.zeros(flat.size)
    for j in range(flat.size):
        orig = flat[j]

        def shat(val):
            flat[j] = val
            c = _clip_from_tokens(tokens)
            with T.precision("float64"):
                s = compute_scores(c, attrs, tau=1.0)
            return s.softmaxed[0][0]

        numeric[j] = (shat(orig + 1e-3) - shat(orig - 1e-3)) / 2e-3
        flat[j] = orig
    assert rel_err(analytic.reshape(-1), numeric) < 1e-4


def test_gradcam_relu_clips_negative():
    # negative omega on a positive map: weighted sum < 0 everywhere -> zeros
    from ldag.mae import ScoreSet
    tokens_arr = np.full((1, 2, 2), 2.0, dtype=np.float32)
    tokens = T.Tensor(tokens_arr, requires_grad=True)
    graph = T.Graph()
    with graph:
        score = T.scale(T.tmean(tokens), -0.7)
    scores = ScoreSet(s_f=[-1.4], s_b=0.0, tau=1.0, softmaxed=[(0.4, 0.6)],
                      _graph=graph, _tokens=tokens, _shat_f=[score])
    cam = gradcam_prior(_clip_from_tokens(tokens_arr), scores, 0)
    assert np.array_equal(cam, np.zeros((2, 2), dtype=np.float32))


def test_gradcam_index_contract():
    tokens = np.full((1, 2, 2), 1.0, dtype=np.float32)
    attrs = _attr_set([np.ones(1, dtype=np.float32)], np.ones(1, dtype=np.float32))
    scores = compute_scores(_clip_from_tokens(tokens), attrs, tau=1.0)
    with pytest.raises(ContractError):
        gradcam_prior(_clip_from_tokens(tokens), scores, 5)


def test_refine_constant_map_is_zero():
    stack = refine_prior(np.full((1, 3, 3), 4.0, dtype=np.float32), (3, 3))
    assert np.array_equal(stack.maps, np.zeros((1, 3, 3), dtype=np.float32))
    assert stack.degenerate == (0,)


def test_refine_linear_rescale():
    raw = np.array([[[0.0, 2.0], [4.0, 8.0]]], dtype=np.float32)
    stack = refine_prior(raw, (2, 2))
    assert np.allclose(stack.maps[0], [[0.0, 0.25], [0.5, 1.0]])
    assert stack.normalization == [(0.0, 8.0)]
    assert stack.flipped == ()


def test_refine_identity_resize():
    raw = RNG.random((2, 8, 8)).astype(np.float32)
    stack = refine_prior(raw, (8, 8), canonical_orientation=False)
    lo = raw.min(axis=(1, 2), keepdims=True)
    hi = raw.max(axis=(1, 2), keepdims=True)
    assert np.allclose(stack.maps, (raw - lo) / (hi - lo), atol=1e-6)


def test_refine_orientation_flip():
    # bright border, dark center: the map is lighting background, flip it
    raw = np.ones((1, 8, 8), dtype=np.float32)
    raw[0, 3:5, 3:5] = 0.0
    stack = refine_prior(raw, (8, 8))
    assert stack.flipped == (0,)
    assert stack.maps[0, 3, 3] == pytest.approx(1.0)
    assert stack.maps[0, 0, 0] == pytest.approx(0.0)


def test_prior_values_in_unit_interval_and_count():
    for n in (0, 1, 5):
        d = 8
        tokens = (RNG.standard_normal((d, 4, 4)) + 0.5).astype(np.float32)
        vs = [RNG.standard_normal(d).astype(np.float32) for _ in range(n + 1)]
        attrs = _attr_set(vs, RNG.standard_normal(d).astype(np.float32))
        stack, scores = build_prior_stack(_clip_from_tokens(tokens), attrs, 1.0, (8, 8))
        assert stack.count == n + 1
        assert stack.maps.shape == (n + 1, 8, 8)
        assert stack.maps.min() >= 0.0 and stack.maps.max() <= 1.0
        assert len(scores.softmaxed) == n + 1
        for f, b in scores.softmaxed:
            assert f + b == pytest.approx(1.0, abs=1e-6)


def test_joint_softmax_mode():
    d = 6
    tokens = (RNG.standard_normal((d, 3, 3)) + 0.3).astype(np.float32)
    vs = [RNG.standard_normal(d).astype(np.float32) for _ in range(3)]
    attrs = _attr_set(vs, RNG.standard_normal(d).astype(np.float32))
    scores = compute_scores(_clip_from_tokens(tokens), attrs, 1.0, joint=True)
    assert scores.mode == "joint"
    total = sum(f for f, _ in scores.softmaxed) + scores.softmaxed[0][1]
    assert total == pytest.approx(1.0, abs=1e-5)


def test_zero_prior_stack():
    stack = zero_prior_stack(6, (8, 8))
    assert stack.count == 6
    assert not stack.maps.any()


def test_prior_mass_concentrates_on_target():
    # the desk-scale analogue of "focus on the overall target area":
    # synthetic scenes of every class put more prior mass inside the mask
    from ldag.episodes import sample_episode, split_folds, synthetic_catalog
    from ldag.maa import downsample_mask
    from ldag.rng import derive_seed
    from ldag.training import Pipeline, TrainConfig

    pipe = Pipeline(TrainConfig(seed=7))
    catalog = synthetic_catalog()
    for cls in catalog.classes:
        split = next(split_folds(catalog, 4, f) for f in range(4)
                     if cls in split_folds(catalog, 4, f).train_classes)
        diffs = []
        for j in range(3):
            ep = sample_episode(split, cls, 1, derive_seed(7, f"mass/{cls}/{j}"))
            enc = pipe.encode(ep)
            stack = pipe.prior_stack(enc)
            small = downsample_mask(enc.mask_q, 8, 8).astype(bool)
            diffs.append(float(np.mean([m[small].mean() - m[~small].mean()
                                        for m in stack.maps])))
        assert np.mean(diffs) > 0.0, f"{cls}: prior mass not concentrated ({diffs})"
