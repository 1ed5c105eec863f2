"""Command-line entry point: ``heterorobust <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, HeteroRobustError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _out_dir(args, default="."):
    d = Path(args.out_dir or default)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_json(path, obj):
    from .harness import _canon
    Path(path).write_text(json.dumps(_canon(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _splits_for(args, g):
    from .harness import make_splits
    from .io import load_splits
    if getattr(args, "splits", None):
        s = load_splits(args.splits)
        s.check_covers(g.n)
        return s
    return make_splits(g, seed=args.seed)


def cmd_synth(args):
    from .io import save_dataset
    from .synth import SynthSpec, stylized_graph
    spec = SynthSpec(args.n, args.d, args.h, args.classes, args.p, args.seed, args.class_mix)
    g = stylized_graph(spec)
    d = save_dataset(g, _out_dir(args, "dataset"))
    print(json.dumps({"out": str(d), "n": g.n, "edges": g.adjacency.num_edges,
                      "homophily": g.meta["realized_homophily"], "connected": g.meta["connected"]}))


def cmd_stats(args):
    from .graph import edge_homophily
    from .io import load_dataset
    from .theory import degree_regime
    g = load_dataset(args.dataset)
    rep = edge_homophily(g)
    deg = g.adjacency.degrees
    out = {"n": g.n, "edges": g.adjacency.num_edges, "num_classes": g.num_classes,
           "edge_homophily": rep.edge_homophily, "random_baseline": rep.random_baseline,
           "degree_min": int(deg.min()), "degree_max": int(deg.max()),
           "regime": degree_regime(g)}
    text = json.dumps(out, indent=2, sort_keys=True)
    if args.out_dir:
        (_out_dir(args) / "stats.json").write_text(text + "\n", encoding="utf-8")
    print(text)


def _model_config(args):
    from .defenses import SvdConfig, build_defended_model
    from .models import ModelConfig
    cfg = ModelConfig(args.arch, args.hidden_dim, args.num_layers,
                      args.alpha if args.arch == "alpha_mix" else None, args.dropout)
    if getattr(args, "rank", None):
        cfg = build_defended_model(cfg, SvdConfig(args.rank, args.variant, _NORMS[args.norm]))
    return cfg


def cmd_train(args):
    from .io import load_dataset, save_splits
    from .models import TrainConfig, evaluate, save_checkpoint, train
    g = load_dataset(args.dataset)
    splits = _splits_for(args, g)
    tcfg = TrainConfig(args.max_iters, min(args.patience, args.max_iters), args.learning_rate, args.weight_decay,
                       args.seed)
    model = train(_model_config(args), tcfg, g, splits)
    d = _out_dir(args, "train_out")
    save_checkpoint(model, d / "model.ckpt")
    save_splits(splits, d / "splits.json")
    metrics = {"train_acc": evaluate(model, g, splits.train), "val_acc": evaluate(model, g, splits.val),
               "test_acc": evaluate(model, g, splits.test), "best_iter": model.best_iter}
    _write_json(d / "metrics.json", metrics)
    print(json.dumps(metrics, sort_keys=True))


def cmd_attack(args):
    from .attacks import perturbation_stats, targeted_attack, untargeted_attack
    from .io import load_dataset, save_perturbation
    g = load_dataset(args.dataset)
    splits = _splits_for(args, g)
    if args.kind == "targeted":
        if args.target is None:
            raise ConfigError("--target is required for targeted attacks")
        budget = args.budget or max(1, int(g.adjacency.degrees[args.target]))
        P = targeted_attack(g, args.target, budget, args.mode, train_nodes=splits.train)
        st = perturbation_stats(g, P, [args.target])
    else:
        P = untargeted_attack(g, splits.train, args.fraction, args.refit_every)
        st = perturbation_stats(g, P)
    d = _out_dir(args, "attack_out")
    save_perturbation(P, d / "perturbation.txt")
    out = dict(dataclasses.asdict(st), termination=P.termination, budget_used=P.budget_used)
    _write_json(d / "stats.json", out)
    print(json.dumps(out, sort_keys=True, default=float))


_NORMS = {"sym": "symmetric", "rw": "row_stochastic"}


def cmd_defend(args):
    from .defenses import SvdConfig, diagonal_dominance, svd_preprocess
    from .io import load_dataset
    g = load_dataset(args.dataset)
    cfg = SvdConfig(args.rank, args.variant, _NORMS[args.norm])
    M = svd_preprocess(g.adjacency, cfg)
    d = _out_dir(args, "defend_out")
    np.save(d / "operator.npy", M)
    out = {"rank": cfg.rank, "variant": cfg.variant, "normalization": cfg.normalization,
           "diagonal_dominance": diagonal_dominance(M)}
    if args.arch:
        from .models import TrainConfig, evaluate, train
        splits = _splits_for(args, g)
        model = train(_model_config(args), TrainConfig(learning_rate=args.learning_rate, seed=args.seed), g, splits)
        out["test_acc"] = evaluate(model, g, splits.test)
    _write_json(d / "defense.json", out)
    print(json.dumps(out, sort_keys=True))


def cmd_certify(args):
    from .certify import SmoothingScheme, certification_grid, summarize_certification
    from .io import load_dataset
    from .models import load_checkpoint
    g = load_dataset(args.dataset)
    model = load_checkpoint(args.checkpoint)
    splits = _splits_for(args, g)
    nodes = splits.test if args.nodes is None else splits.test[:args.nodes]
    grid = certification_grid(model, g, nodes, SmoothingScheme(args.p_plus, args.p_minus), args.n0, args.n1,
                              args.alpha_sig, args.max_ra, args.max_rd, args.seed, args.multiclass)
    d = _out_dir(args, "certify_out")
    lines = ["r_d," + ",".join(f"r_a={a}" for a in range(grid.R.shape[0]))]
    for rd in range(grid.R.shape[1]):
        lines.append(f"{rd}," + ",".join(format(float(x), ".10g") for x in grid.R[:, rd]))
    (d / "cert_grid.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    summary = summarize_certification(grid)
    summary["truncated"] = grid.meta["truncated"]
    _write_json(d / "summary.json", summary)
    print(json.dumps(summary, sort_keys=True))


def cmd_theory(args):
    from .theory import verify_theorems
    if args.action != "verify":
        raise ConfigError("only 'theory verify' is available")
    report = verify_theorems()
    text = json.dumps({"grid": report["grid"], "checks": report["checks"], "pass_count": report["pass_count"],
                       "fail_count": report["fail_count"], "singular_points": report["singular_points"],
                       "failures": report["failures"]}, indent=2, sort_keys=True)
    if args.out_dir:
        (_out_dir(args) / "theory_report.json").write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK if report["fail_count"] == 0 else EXIT_RUNTIME


def cmd_run(args):
    from .harness import emit_report, load_experiment_config, run_experiment
    if not args.config:
        raise ConfigError("run needs --config")
    cfg = load_experiment_config(Path(args.config), overrides={"seed": str(args.seed)} if args.seed_given else None)
    bundle = run_experiment(cfg, workers=args.workers)
    paths = emit_report(bundle, _out_dir(args, "run_out"))
    print(json.dumps({"written": [str(p) for p in paths], "failures": len(bundle["failures"])}))
    return EXIT_OK if not bundle["failures"] else EXIT_RUNTIME


def _common(p):
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--config", default=None, help="flat key=value file supplying option defaults")


def _model_opts(p):
    p.add_argument("--arch", default="gcn", choices=["gcn", "sage_separate", "h2gcn_style", "alpha_mix", "mlp"])
    p.add_argument("--hidden-dim", type=int, default=64)
    p.add_argument("--num-layers", type=int, default=2)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--patience", type=int, default=100)
    p.add_argument("--learning-rate", type=float, default=0.2)
    p.add_argument("--weight-decay", type=float, default=5e-4)


def build_parser():
    parser = argparse.ArgumentParser(prog="heterorobust", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a stylized regular graph")
    _common(p)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--d", type=int, default=10)
    p.add_argument("--h", type=float, default=0.8)
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--p", type=float, default=0.7)
    p.add_argument("--class-mix", default="total", choices=["exact", "total"])
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", help="homophily and degree statistics of a dataset")
    _common(p)
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train a model and save a checkpoint")
    _common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--splits")
    _model_opts(p)
    p.add_argument("--rank", type=int, default=None, help="train the low-rank defended variant")
    p.add_argument("--variant", default="II", choices=["I", "II"])
    p.add_argument("--norm", default="sym", choices=["sym", "rw"])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="compute a structure perturbation")
    _common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--splits")
    p.add_argument("--kind", default="targeted", choices=["targeted", "untargeted"])
    p.add_argument("--target", type=int)
    p.add_argument("--budget", type=int, default=None, help="defaults to the target degree")
    p.add_argument("--mode", default="direct_only", choices=["direct_only", "with_influencers"])
    p.add_argument("--fraction", type=float, default=0.2)
    p.add_argument("--refit-every", type=int, default=10)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("defend", help="low-rank adjacency preprocessing")
    _common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--splits")
    p.add_argument("--rank", type=int, default=5)
    p.add_argument("--variant", default="II", choices=["I", "II"])
    p.add_argument("--norm", default="sym", choices=["sym", "rw"])
    _model_opts(p)
    p.set_defaults(arch=None, func=cmd_defend)

    p = sub.add_parser("certify", help="randomized-smoothing certificates for a checkpoint")
    _common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--splits")
    p.add_argument("--p-plus", type=float, default=0.001)
    p.add_argument("--p-minus", type=float, default=0.4)
    p.add_argument("--n0", type=int, default=1000)
    p.add_argument("--n1", type=int, default=10000)
    p.add_argument("--alpha-sig", type=float, default=0.01)
    p.add_argument("--max-ra", type=int, default=10)
    p.add_argument("--max-rd", type=int, default=10)
    p.add_argument("--nodes", type=int, default=None, help="certify only the first N test nodes")
    p.add_argument("--multiclass", action="store_true")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("theory", help="closed-form checks")
    _common(p)
    p.add_argument("action", choices=["verify"])
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("run", help="full experiment from a config file")
    _common(p)
    p.add_argument("--workers", type=int, default=1, help="processes for repetitions")
    p.set_defaults(func=cmd_run)
    return parser


def _config_path(argv):
    for k, a in enumerate(argv):
        if a == "--config" and k + 1 < len(argv):
            return argv[k + 1]
        if a.startswith("--config="):
            return a.split("=", 1)[1]
    return None


def _apply_config_defaults(parser, argv):
    """Parse ``argv`` with option defaults taken from ``--config`` (not for ``run``).

    Options given in the config file no longer count as required.
    """
    path = _config_path(argv)
    sub = next(a for a in parser._subparsers._actions if isinstance(a, argparse._SubParsersAction))
    command = argv[0] if argv else None
    if path and command in sub.choices and command != "run":
        from .harness import _bool, parse_flat_config
        raw = parse_flat_config(Path(path).read_text(encoding="utf-8"))
        actions = {a.dest: a for a in sub.choices[command]._actions}
        for k, v in raw.items():
            dest = k.replace("-", "_")
            if dest not in actions or dest in ("help", "config"):
                raise ConfigError(f"unknown option {k!r} in {path}")
            action = actions[dest]
            if isinstance(action, argparse._StoreTrueAction):
                action.default = _bool(v)
            else:
                action.default = action.type(v) if action.type else v
            action.required = False
    args = parser.parse_args(argv)
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = 0
    return args


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config_defaults(parser, argv)
        rc = args.func(args)
        return EXIT_OK if rc is None else rc
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HeteroRobustError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, TypeError) as exc:
        # argument values rejected by the library's own validation
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ArithmeticError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
