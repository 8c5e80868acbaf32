"""Operator surface: fixtures, attributes, priors, training, evaluation, ablations.

Every subcommand exits 0 on success, 2 on usage errors, and 1 on runtime
failures; all artifacts land under --out. A flat key=value config file
seeds the options and explicit flags override it.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import __version__, backend, metrics, netpbm
from .attributes import (ChatEndpointConfig, build_llm_instruction, fetch_attributes,
                         fixture_path, save_fixture, template_prompt, background_prompt)
from .episodes import (DATASET_NAME, DEFAULT_SPECS, gen_scene, sample_episode, split_folds,
                       synthetic_catalog)
from .errors import ContractError, LdagError, NotFoundError
from .fusion import ModelParameters
from .ldagtnsr import read_tensor
from .providers import FEATURE_DIM
from .rng import derive_seed
from .training import Pipeline, TrainConfig, evaluate, evaluate_files, train

_CONFIG_KEYS = {f for f in TrainConfig.__dataclass_fields__}

ALPHA_SWEEP = (0.0, 0.3, 0.5, 0.8, 1.0)
N_SWEEP = (0, 1, 2, 3, 4, 5, 10)


def _read_config_file(path: str) -> dict:
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ContractError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def _coerce(key: str, value: str):
    ftype = TrainConfig.__dataclass_fields__[key].type
    name = ftype if isinstance(ftype, str) else ftype.__name__
    if name == "bool":
        return value.lower() in ("1", "true", "yes", "on")
    if name == "int":
        return int(value)
    if name == "float":
        return float(value)
    return value


def build_train_config(args) -> TrainConfig:
    values = {}
    if getattr(args, "config", None):
        for key, raw in _read_config_file(args.config).items():
            if key not in _CONFIG_KEYS:
                raise ContractError(f"unknown config key {key!r}")
            values[key] = _coerce(key, raw)
    for key in _CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    if getattr(args, "offline", False):
        values["offline"] = True
    return TrainConfig(**values)


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--fold", type=int, default=None)
    p.add_argument("--shots", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--tau1", type=float, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--episodes-per-epoch", dest="episodes_per_epoch", type=int, default=None)
    p.add_argument("--eval-episodes", dest="eval_episodes", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--provider", choices=("toy", "files"), default=None)
    p.add_argument("--data-path", dest="data_path", default=None)
    p.add_argument("--offline", action="store_true")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", default="out")


def _ensure_out(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def cmd_gen_fixtures(args) -> int:
    out = _ensure_out(args)
    manifest_path = os.path.join(out, "manifest.json")
    if os.path.exists(manifest_path) and not args.force:
        print(f"refusing to overwrite {manifest_path} (use --force)", file=sys.stderr)
        return 1
    seed = args.seed if args.seed is not None else 7
    classes = []
    for spec in DEFAULT_SPECS:
        classes.append({
            "name": spec.name, "shape": spec.shape, "fill": list(spec.fill),
            "size_range": list(spec.size_range), "snippets": list(spec.snippets)})
        for n in (1, 2, 3, 4, 5, 10):
            save_fixture(fixture_path(os.path.join(out, "fixtures"), DATASET_NAME,
                                      spec.name, n, "synthetic-fixture-v1"),
                         DATASET_NAME, spec.name, n, "synthetic-fixture-v1",
                         spec.attribute_prompts(n))
        image, mask = gen_scene(spec, derive_seed(seed, f"sample/{spec.name}"))
        slug = spec.name.replace(" ", "_")
        netpbm.write_ppm(os.path.join(out, f"{slug}.sample.ppm"), image)
        netpbm.write_mask(os.path.join(out, f"{slug}.sample.pgm"), mask)
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump({"dataset": DATASET_NAME, "seed": seed, "classes": classes},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote manifest + fixtures for {len(DEFAULT_SPECS)} classes under {out}")
    return 0


def cmd_attributes(args) -> int:
    cfg = build_train_config(args)
    catalog = synthetic_catalog()
    catalog.index_of(args.class_name)  # NotFoundError -> usage error
    endpoint = ChatEndpointConfig.from_env()
    n = cfg.n
    if n > 0:
        instruction = build_llm_instruction(catalog, args.class_name, n)
        prompts = fetch_attributes(instruction, endpoint, dataset=catalog.dataset_name,
                                   class_name=args.class_name, n=n,
                                   fixture_dir=args.fixture_dir or "",
                                   offline=cfg.offline)
    else:
        prompts = []
    for p in prompts:
        print(p)
    print(template_prompt(args.class_name))
    print(f"[background] {background_prompt(args.class_name)}")
    return 0


def cmd_prior(args) -> int:
    cfg = build_train_config(args)
    out = _ensure_out(args)
    pipe = Pipeline(cfg)
    split = split_folds(pipe.catalog, cfg.fold_count, cfg.fold)
    use_train = args.class_name in split.train_classes
    episode = sample_episode(split, args.class_name, 1,
                             derive_seed(cfg.seed, f"prior/{args.class_name}"),
                             use_train_classes=use_train)
    enc = pipe.encode(episode)
    prior = pipe.prior_stack(enc)
    from .mae import compute_scores
    scores = compute_scores(enc.clip_q, pipe.attribute_set(args.class_name), cfg.tau,
                            joint=cfg.joint_softmax)
    slug = args.class_name.replace(" ", "_")
    for i, m in enumerate(prior.maps):
        netpbm.write_pgm(os.path.join(out, f"{slug}.prior{i}.pgm"),
                         np.round(255.0 * m).astype(np.uint8))
    sidecar = {
        "class": args.class_name, "episode_id": enc.episode_id, "tau": cfg.tau,
        "mode": scores.mode, "s_f": scores.s_f, "s_b": scores.s_b,
        "softmaxed": scores.softmaxed, "normalization": prior.normalization,
        "degenerate": list(prior.degenerate), "flipped": list(prior.flipped),
    }
    with open(os.path.join(out, f"{slug}.scores.json"), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {prior.count} prior maps for {args.class_name} under {out}")
    return 0


def _train_and_eval(cfg: TrainConfig, out: str, tag: str = "run") -> metrics.EvalReport:
    pipe = Pipeline(cfg)
    result = train(cfg, pipe, log_path=os.path.join(out, f"{tag}.metrics.jsonl"))
    result.params.save(os.path.join(out, f"{tag}.checkpoint"))
    rows, report = evaluate(result.params, cfg, pipe)
    with open(os.path.join(out, f"{tag}.report.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    metrics.write_rows_csv(os.path.join(out, f"{tag}.episodes.csv"), rows)
    return report


def cmd_train(args) -> int:
    cfg = build_train_config(args)
    out = _ensure_out(args)
    pipe = Pipeline(cfg)
    result = train(cfg, pipe, log_path=os.path.join(out, "train.metrics.jsonl"))
    result.params.save(os.path.join(out, "checkpoint"))
    print(f"trained {cfg.epochs} epochs; checkpoint + metrics under {out}")
    if result.skipped_episodes:
        print(f"skipped {result.skipped_episodes} degenerate episodes")
    return 0


def cmd_eval(args) -> int:
    cfg = build_train_config(args)
    if cfg.provider == "files" and not cfg.data_path:
        raise ContractError("--provider files requires --data-path")
    out = _ensure_out(args)
    params = ModelParameters.load(args.checkpoint) if args.checkpoint else \
        ModelParameters.init(FEATURE_DIM, FEATURE_DIM, cfg.n, derive_seed(cfg.seed, "ldag/init"))
    if cfg.provider == "files":
        rows, report = evaluate_files(params, cfg)
    else:
        rows, report = evaluate(params, cfg, Pipeline(cfg))
    with open(os.path.join(out, "report.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    metrics.write_rows_csv(os.path.join(out, "episodes.csv"), rows)
    print(f"mIoU {report.miou:.4f}  FB-IoU {report.fbiou:.4f}  "
          f"({report.episode_count} episodes) -> {out}/report.json")
    return 0


def cmd_ablate(args) -> int:
    cfg = build_train_config(args)
    out = _ensure_out(args)
    sweeps = args.sweep
    reports = {}
    if sweeps in ("alpha", "all"):
        for alpha in ALPHA_SWEEP:
            cell = TrainConfig(**{**cfg.to_dict(), "alpha": alpha})
            reports[f"alpha_{alpha}"] = _train_and_eval(cell, out, tag=f"alpha_{alpha}")
    if sweeps in ("n", "all"):
        for n in N_SWEEP:
            cell = TrainConfig(**{**cfg.to_dict(), "n": n})
            reports[f"n_{n}"] = _train_and_eval(cell, out, tag=f"n_{n}")
    if sweeps in ("modules", "all"):
        for tag, mae_on, maa_on in (("base", False, False), ("mae", True, False),
                                    ("mae_maa", True, True)):
            cell = TrainConfig(**{**cfg.to_dict(), "mae_on": mae_on, "maa_on": maa_on})
            reports[tag] = _train_and_eval(cell, out, tag=tag)
    if sweeps in ("support", "all"):
        for tag, use in (("with_support", True), ("without_support", False)):
            cell = TrainConfig(**{**cfg.to_dict(), "use_support": use})
            reports[tag] = _train_and_eval(cell, out, tag=tag)
    summary = {tag: {"miou": r.miou, "fbiou": r.fbiou} for tag, r in reports.items()}
    with open(os.path.join(out, "ablation_summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"{len(reports)} ablation cells -> {out}")
    return 0


def cmd_validate(args) -> int:
    failures = 0
    for path in args.files:
        try:
            array, meta = read_tensor(path)
        except LdagError as e:
            print(f"{path}: INVALID: {e}")
            failures += 1
            continue
        print(f"{path}: ok kind={meta.get('kind')} shape={list(array.shape)} "
              f"source={meta.get('source')}")
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ldag",
                                     description="attribute-prior few-shot segmentation, desk scale")
    parser.add_argument("--version", action="version",
                        version=f"ldag {__version__} (backend: {backend.NAME})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-fixtures", help="write the synthetic dataset manifest + fixtures")
    _add_common(p)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen_fixtures)

    p = sub.add_parser("attributes", help="print the attribute prompt set for one class")
    _add_common(p)
    p.add_argument("class_name", metavar="CLASS")
    p.add_argument("--fixture-dir", default="")
    p.set_defaults(func=cmd_attributes)

    p = sub.add_parser("prior", help="emit the n+1 prior maps for one episode as PGM + scores JSON")
    _add_common(p)
    p.add_argument("class_name", metavar="CLASS")
    p.set_defaults(func=cmd_prior)

    p = sub.add_parser("train", help="episodic training on the fold's train classes")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="fold evaluation (test classes)")
    _add_common(p)
    p.add_argument("--checkpoint", default="")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run an ablation sweep, one report per cell")
    _add_common(p)
    p.add_argument("--sweep", choices=("alpha", "n", "modules", "support", "all"),
                   default="modules")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("validate", help="check LDAGTNSR files under the reference loader")
    p.add_argument("files", nargs="+")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (NotFoundError, ContractError) as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except LdagError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
