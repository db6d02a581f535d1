"""Command-line entry points.

Each training stage and the evaluation harness get their own console script.
``FSL_RECTIFIER_DATA_ROOT`` overrides the configured dataset root everywhere.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import eval_harness
from .config import cfg_get, load_config
from .data_pipeline import load_dataset, make_toy_dataset
from .errors import ConfigError
from .eval_harness import (
    Components,
    ExperimentPlan,
    PlanCell,
    centroid_pull_report,
    plan_component_ablation,
    plan_copies_grid,
    plan_main_comparison,
    render_report_dir,
    run_table,
    selection_quality_report,
)
from .fsl_backbones import FSLModel, pretrain_encoder, train_fsl
from .rectifier import RectifierConfig
from .selector import SelectorModel, train_selector
from .translator import TranslatorBundle, train_translator

logging.basicConfig(level=os.environ.get("FSL_RECTIFIER_LOGLEVEL", "INFO"))


def _data_root(cfg) -> str:
    return os.environ.get("FSL_RECTIFIER_DATA_ROOT", cfg_get(cfg, "dataset.root"))


def _load_handles(cfg, clahe_for_training=False):
    name = cfg_get(cfg, "dataset.name")
    root = _data_root(cfg)
    clahe = bool(cfg_get(cfg, "dataset.clahe")) and clahe_for_training
    train = load_dataset(
        name, "train", root,
        clahe=clahe,
        clahe_clip_limit=cfg_get(cfg, "dataset.clahe_clip_limit"),
        clahe_tile_grid=cfg_get(cfg, "dataset.clahe_tile_grid"),
    )
    test = load_dataset(name, "test", root)
    return train, test


def make_toy_data_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="make-toy-data", description=make_toy_dataset.__doc__)
    parser.add_argument("--train-classes", type=int, default=20)
    parser.add_argument("--test-classes", type=int, default=10)
    parser.add_argument("--per-class", type=int, default=50)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", required=True)
    parser.add_argument("--class-factor", choices=["shape", "style"], default="shape")
    parser.add_argument("--degraded-fraction", type=float, default=0.25)
    args = parser.parse_args(argv)
    train, test = make_toy_dataset(
        args.train_classes, args.test_classes, args.per_class,
        args.seed, args.out, class_factor=args.class_factor,
        degraded_fraction=args.degraded_fraction,
    )
    print(f"wrote toy dataset under {args.out}: "
          f"{train.n_classes} train / {test.n_classes} test classes")
    return 0


def train_translator_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="train-translator")
    parser.add_argument("--config", default=None)
    parser.add_argument("--toy", action="store_true", help="use desk-scale defaults")
    parser.add_argument("--resume", default=None)
    parser.add_argument("--out", default="runs/translator")
    args = parser.parse_args(argv)
    cfg = load_config(args.config, toy=args.toy)
    train, _ = _load_handles(cfg, clahe_for_training=True)
    path = train_translator(cfg, train, args.out, resume=args.resume)
    print(f"checkpoint: {path}")
    return 0


def train_selector_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="train-selector")
    parser.add_argument("--translator", required=True)
    parser.add_argument("--config", default=None)
    parser.add_argument("--toy", action="store_true")
    parser.add_argument("--out", default="runs/selector.ckpt")
    args = parser.parse_args(argv)
    cfg = load_config(args.config, toy=args.toy)
    bundle = TranslatorBundle.load(args.translator)
    train, test = _load_handles(cfg, clahe_for_training=True)
    train_selector(bundle, train, test, cfg, out_path=args.out)
    print(f"checkpoint: {args.out}")
    return 0


def pretrain_encoder_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="pretrain-encoder")
    parser.add_argument("--config", default=None)
    parser.add_argument("--toy", action="store_true")
    parser.add_argument("--encoder", choices=["conv4", "res12"], default=None)
    parser.add_argument("--out", default="runs/encoder.ckpt")
    args = parser.parse_args(argv)
    cfg = load_config(args.config, toy=args.toy)
    train, _ = _load_handles(cfg, clahe_for_training=True)
    path = pretrain_encoder(train, cfg, args.out, encoder_name=args.encoder)
    print(f"checkpoint: {path}")
    return 0


def train_fsl_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="train-fsl")
    parser.add_argument("--encoder", choices=["conv4", "res12"], default=None)
    parser.add_argument("--metric", choices=["cos", "euc"], default=None)
    parser.add_argument("--config", default=None)
    parser.add_argument("--toy", action="store_true")
    parser.add_argument("--encoder-ckpt", required=True)
    parser.add_argument("--out", default=None)
    args = parser.parse_args(argv)
    cfg = load_config(args.config, toy=args.toy)
    if args.encoder:
        cfg["fsl"]["encoder"] = args.encoder
    if args.metric:
        cfg["fsl"]["metric"] = args.metric
    train, _ = _load_handles(cfg, clahe_for_training=True)
    out = args.out or f"runs/fsl_{cfg['fsl']['encoder']}_{cfg['fsl']['metric']}.ckpt"
    path = train_fsl(args.encoder_ckpt, train, cfg, out)
    print(f"checkpoint: {path}")
    return 0


def _components_from_args(args, cfg) -> Components:
    train, test = _load_handles(cfg, clahe_for_training=False)
    model = FSLModel.load(args.model) if args.model else None
    translator = TranslatorBundle.load(args.translator) if args.translator else None
    selector = (
        SelectorModel.load(args.selector, translator)
        if args.selector and translator is not None
        else None
    )
    return Components(
        test_handle=test, train_handle=train,
        model=model, translator=translator, selector=selector,
    )


def _resolve_plan(args, cfg) -> ExperimentPlan:
    mode = cfg_get(cfg, "rectifier.mode")
    episodes = args.episodes or cfg_get(cfg, "eval.n_episodes")
    seed = args.seed if args.seed is not None else cfg_get(cfg, "eval.base_seed")
    if args.plan:
        builtin = {
            "builtin:main_comparison": lambda: plan_main_comparison(
                mode=mode, n_episodes=episodes, base_seed=seed
            ),
            "builtin:copies_grid": lambda: plan_copies_grid(
                mode=mode, n_episodes=episodes, base_seed=seed
            ),
            "builtin:component_ablation": lambda: plan_component_ablation(
                mode=mode, n_episodes=episodes, base_seed=seed
            ),
        }
        if args.plan in builtin:
            return builtin[args.plan]()
        import yaml

        with open(args.plan) as fh:
            plan = ExperimentPlan.from_dict(yaml.safe_load(fh))
        if args.episodes:
            for cell in plan.cells:
                cell.n_episodes = args.episodes
        if args.seed is not None:
            for cell in plan.cells:
                cell.base_seed = args.seed
        return plan
    if args.rectifier:
        rect_cfg = load_config(args.rectifier)
        r = rect_cfg["rectifier"]
        RectifierConfig.from_dict(
            {k: r[k] for k in ("mode", "k", "weighting", "beta", "pool_size", "selector_mode")}
        )
        support_spec = {
            "kind": "rectifier",
            "copies": int(r["k"]),
            "weighting": r["weighting"],
            "beta": r["beta"],
            "params": {
                "mode": r["mode"],
                "pool_size": int(r["pool_size"]),
                "selector_mode": r["selector_mode"],
            },
        }
        cell = PlanCell(
            name="rectifier", support_spec=support_spec,
            n_episodes=episodes, base_seed=seed,
        )
        return ExperimentPlan(name="single_cell", cells=[cell])
    raise ConfigError("eval needs --plan or --rectifier")


def eval_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="eval")
    parser.add_argument("--plan", default=None,
                        help="plan YAML or builtin:{main_comparison,copies_grid,component_ablation}")
    parser.add_argument("--rectifier", default=None, help="config file with a rectifier section")
    parser.add_argument("--config", default=None)
    parser.add_argument("--toy", action="store_true")
    parser.add_argument("--episodes", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default="runs/eval")
    parser.add_argument("--model", default=None)
    parser.add_argument("--translator", default=None)
    parser.add_argument("--selector", default=None)
    parser.add_argument("--keep-flags", action="store_true")
    args = parser.parse_args(argv)
    cfg = load_config(args.config, toy=args.toy)
    plan = _resolve_plan(args, cfg)
    components = _components_from_args(args, cfg)
    reports = run_table(plan, components, args.out, keep_flags=args.keep_flags)
    for name, report in reports.items():
        if report is not None:
            print(f"{name}: {report.accuracy:.2f}% +/- {report.ci95:.2f}")
        else:
            print(f"{name}: (not measured)")
    print(f"tables under {args.out}")
    return 0


def report_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="report")
    parser.add_argument("--in", dest="in_dir", required=True)
    parser.add_argument("--format", choices=["csv", "json", "md"], default="md")
    args = parser.parse_args(argv)
    print(render_report_dir(args.in_dir, args.format))
    return 0


def diagnose_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="diagnose")
    sub = parser.add_subparsers(dest="command", required=True)

    pull = sub.add_parser("centroid-pull")
    pull.add_argument("--k", type=int, default=5)
    pull.add_argument("--points", type=int, default=500)
    pull.add_argument("--seed", type=int, default=0)

    quality = sub.add_parser("selection-quality")
    quality.add_argument("--images", type=int, default=100)
    quality.add_argument("--pool-size", type=int, default=20)
    quality.add_argument("--seed", type=int, default=0)

    for p in (pull, quality):
        p.add_argument("--config", default=None)
        p.add_argument("--toy", action="store_true")
        p.add_argument("--model", default=None)
        p.add_argument("--translator", required=True)
        p.add_argument("--selector", default=None)

    args = parser.parse_args(argv)
    cfg = load_config(args.config, toy=args.toy)
    components = _components_from_args(args, cfg)

    if args.command == "centroid-pull":
        rect = RectifierConfig(
            mode=cfg_get(cfg, "rectifier.mode"),
            k=max(args.k, 1),
            pool_size=max(cfg_get(cfg, "rectifier.pool_size"), args.k),
            selector_mode=cfg_get(cfg, "rectifier.selector_mode"),
        )
        out = centroid_pull_report(
            components.model, rect, components.test_handle,
            components.translator, components.selector, components.train_handle,
            n_points=args.points, k=args.k, seed=args.seed,
        )
    else:
        out = selection_quality_report(
            components.selector, components.translator,
            components.test_handle, components.train_handle,
            n_images=args.images, pool_size=args.pool_size, seed=args.seed,
        )
    print(json.dumps(out, indent=2))
    return 0


def main(argv=None) -> int:
    """Umbrella dispatcher, mainly for ``python -m fsl_rectifier.cli``."""
    argv = list(sys.argv[1:] if argv is None else argv)
    commands = {
        "make-toy-data": make_toy_data_main,
        "train-translator": train_translator_main,
        "train-selector": train_selector_main,
        "pretrain-encoder": pretrain_encoder_main,
        "train-fsl": train_fsl_main,
        "eval": eval_main,
        "report": report_main,
        "diagnose": diagnose_main,
    }
    if not argv or argv[0] not in commands:
        print("usage: fsl_rectifier.cli {" + ",".join(commands) + "} ...", file=sys.stderr)
        return 2
    return commands[argv[0]](argv[1:])


if __name__ == "__main__":
    raise SystemExit(main())
