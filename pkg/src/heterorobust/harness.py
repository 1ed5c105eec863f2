"""Experiment orchestration: splits, attack scenarios, repetitions and reports."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .attacks import Perturbation, apply_perturbation, perturbation_stats, targeted_attack, untargeted_attack
from .certify import SmoothingScheme, certification_grid, summarize_certification
from .defenses import SvdConfig, build_defended_model
from .errors import ClassTooSmallWarning, ConfigError, HeteroRobustError
from .graph import LabeledGraph, edge_homophily, local_homophily, target_homophily
from .models import ModelConfig, TrainConfig, TrainedModel, evaluate, train
from .synth import SynthSpec, stylized_graph
from .theory import fit_linear_surrogate

MIN_STRATIFY = 3
SCENARIOS = ("clean", "poison_targeted", "evasion_targeted", "poison_untargeted", "evasion_untargeted")


@dataclass(frozen=True, eq=False)
class SplitAssignment:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: Optional[int] = None
    stratified: bool = True

    def __post_init__(self):
        for name in ("train", "val", "test"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        allnodes = np.concatenate([self.train, self.val, self.test])
        if np.unique(allnodes).size != allnodes.size:
            raise ValueError("split parts overlap")

    def check_covers(self, n):
        allnodes = np.concatenate([self.train, self.val, self.test])
        if allnodes.size != n or (n and (allnodes.min() < 0 or allnodes.max() >= n)):
            raise ValueError(f"split does not cover nodes 0..{n - 1}")


def _part_sizes(n, fractions):
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError("split fractions must be three nonnegative numbers summing to 1")
    n_train = int(np.floor(fractions[0] * n + 0.5))
    n_val = int(np.floor(fractions[1] * n + 0.5))
    return n_train, min(n_val, n - n_train)


def make_splits(g: LabeledGraph, fractions=(0.1, 0.1, 0.8), seed=0) -> SplitAssignment:
    """Stratified train/val/test split.

    Nodes of each class are shuffled and ranked; ordering all nodes by
    ``rank / class size`` interleaves the classes proportionally, so the
    first cut gives per-class training counts within one of proportional.
    If a class has fewer than three nodes the split falls back to a plain
    shuffle and warns.
    """
    n_train, n_val = _part_sizes(g.n, fractions)
    rng = np.random.default_rng(seed)
    sizes = np.bincount(g.labels, minlength=g.num_classes)
    present = sizes[sizes > 0]
    if present.size and present.min() < MIN_STRATIFY:
        warnings.warn(f"a class has fewer than {MIN_STRATIFY} nodes; using an unstratified split",
                      ClassTooSmallWarning, stacklevel=2)
        order = rng.permutation(g.n)
        stratified = False
    else:
        key = np.empty(g.n)
        for c in range(g.num_classes):
            members = np.flatnonzero(g.labels == c)
            if members.size:
                key[rng.permutation(members)] = (np.arange(members.size) + 0.5) / members.size
        order = np.lexsort((rng.permutation(g.n), key))
        stratified = True
    return SplitAssignment(np.sort(order[:n_train]), np.sort(order[n_train:n_train + n_val]),
                           np.sort(order[n_train + n_val:]), seed, stratified)


def default_num_targets(n):
    return 60 if n >= 600 else max(10, int(np.floor(0.1 * n + 0.5)))


# --- configuration ----------------------------------------------------------


def _bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _list(s):
    return tuple(x.strip() for x in str(s).split(",") if x.strip())


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat experiment description; see :data:`CONFIG_KEYS` for the file format."""
    dataset: Optional[str] = None
    synth_n: int = 500
    synth_d: int = 10
    synth_h: float = 0.8
    synth_classes: int = 5
    synth_p: float = 0.7
    synth_class_mix: str = "total"
    models: tuple = ("gcn", "sage_separate")
    scenarios: tuple = ("clean", "poison_targeted")
    attack_mode: str = "direct_only"
    budget_fraction: float = 0.2
    refit_every: int = 10
    num_targets: Optional[int] = None
    hidden_dim: int = 64
    num_layers: int = 2
    dropout: float = 0.0
    alpha: float = 0.5
    max_iters: int = 200
    patience: int = 100
    learning_rate: float = 0.2
    weight_decay: float = 5e-4
    defense_rank: int = 5
    defense_variant: str = "II"
    defense_norm: str = "symmetric"
    certify: bool = False
    p_plus: float = 0.001
    p_minus: float = 0.4
    cert_n0: int = 1000
    cert_n1: int = 10000
    cert_alpha: float = 0.01
    cert_max_ra: int = 10
    cert_max_rd: int = 10
    cert_nodes: Optional[int] = None
    repetitions: int = 3
    seed: int = 0
    split_train: float = 0.1
    split_val: float = 0.1

    def __post_init__(self):
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        bad = [s for s in self.scenarios if s not in SCENARIOS]
        if bad:
            raise ConfigError(f"unknown scenarios {bad}; expected a subset of {SCENARIOS}")
        for m in self.models:
            if m.split("+")[0] not in ("gcn", "sage_separate", "h2gcn_style", "alpha_mix", "mlp"):
                raise ConfigError(f"unknown model {m!r}")
            if "+" in m and m.split("+", 1)[1] != "svd":
                raise ConfigError(f"unknown model suffix in {m!r}; only '+svd' is supported")

    @property
    def seeds(self):
        return [self.seed + r for r in range(self.repetitions)]

    def model_config(self, name) -> ModelConfig:
        arch = name.split("+")[0]
        cfg = ModelConfig(arch, self.hidden_dim, self.num_layers, self.alpha if arch == "alpha_mix" else None,
                          self.dropout)
        if name.endswith("+svd"):
            cfg = build_defended_model(cfg, SvdConfig(self.defense_rank, self.defense_variant, self.defense_norm))
        return cfg

    def train_config(self, seed) -> TrainConfig:
        return TrainConfig(self.max_iters, self.patience, self.learning_rate, self.weight_decay, seed)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}
_CASTERS = {"int": int, "float": float, "str": str, "bool": _bool, "tuple": _list,
            "Optional[int]": lambda s: None if s.strip().lower() in ("", "none", "auto") else int(s),
            "Optional[str]": lambda s: None if s.strip().lower() in ("", "none") else s.strip()}
CONFIG_KEYS = tuple(_FIELD_TYPES)


def parse_flat_config(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment; blank lines are ignored."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        k, v = (x.strip() for x in line.split("=", 1))
        if not k:
            raise ConfigError(f"line {lineno}: empty key")
        if k in out:
            raise ConfigError(f"line {lineno}: duplicate key {k!r}")
        out[k] = v
    return out


def load_experiment_config(path_or_text, overrides=None) -> ExperimentConfig:
    text = path_or_text
    if isinstance(path_or_text, Path) or (isinstance(path_or_text, str) and "\n" not in path_or_text
                                          and Path(path_or_text).exists()):
        text = Path(path_or_text).read_text(encoding="utf-8")
    raw = parse_flat_config(text)
    raw.update(overrides or {})
    return config_from_mapping(raw)


def config_from_mapping(raw: dict) -> ExperimentConfig:
    kwargs = {}
    for k, v in raw.items():
        if k not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {k!r}")
        if not isinstance(v, str):
            kwargs[k] = v
            continue
        try:
            kwargs[k] = _CASTERS[str(_FIELD_TYPES[k])](v)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"bad value for {k!r}: {v!r} ({exc})") from None
    try:
        return ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def config_to_text(cfg: ExperimentConfig) -> str:
    lines = []
    for k in CONFIG_KEYS:
        v = getattr(cfg, k)
        if isinstance(v, tuple):
            v = ",".join(v)
        lines.append(f"{k} = {'none' if v is None else v}")
    return "\n".join(lines) + "\n"


# --- running -------------------------------------------------------------------


def _load_graph(cfg: ExperimentConfig, seed):
    if cfg.dataset:
        from .io import load_dataset
        return load_dataset(cfg.dataset)
    return stylized_graph(SynthSpec(cfg.synth_n, cfg.synth_d, cfg.synth_h, cfg.synth_classes, cfg.synth_p,
                                    seed, cfg.synth_class_mix))


def _pooled_stats(g, perts, targets):
    """Table-2 style numbers pooled over per-target perturbations."""
    adds = dels = add_het = del_hom = 0
    h_after, ht_after = [], []
    for t, P in zip(targets, perts):
        st = perturbation_stats(g, P)
        adds += st.additions_total
        dels += st.deletions_total
        add_het += (st.additions_hetero_fraction or 0.0) * st.additions_total
        del_hom += (st.deletions_homo_fraction or 0.0) * st.deletions_total
        h_after.append(st.h_after)
        ht_after.append(local_homophily(apply_perturbation(g, P), int(t)))
    total = adds + dels
    return {
        "h_before": edge_homophily(g).edge_homophily,
        "h_after": float(np.mean(h_after)),
        "h_t_before": target_homophily(g, targets),
        "h_t_after": float(np.mean(ht_after)),
        "additions_total": adds,
        "additions_hetero_pct": 100.0 * add_het / adds if adds else None,
        "deletions_total": dels,
        "deletions_homo_pct": 100.0 * del_hom / dels if dels else None,
        "heterophily_increasing_pct": 100.0 * (add_het + del_hom) / total if total else None,
    }


def _single_stats(g, P):
    st = perturbation_stats(g, P)
    total = st.additions_total + st.deletions_total
    good = (st.additions_hetero_fraction or 0.0) * st.additions_total \
        + (st.deletions_homo_fraction or 0.0) * st.deletions_total
    return {
        "h_before": st.h_before, "h_after": st.h_after, "h_t_before": None, "h_t_after": None,
        "additions_total": st.additions_total,
        "additions_hetero_pct": None if st.additions_hetero_fraction is None else 100 * st.additions_hetero_fraction,
        "deletions_total": st.deletions_total,
        "deletions_homo_pct": None if st.deletions_homo_fraction is None else 100 * st.deletions_homo_fraction,
        "heterophily_increasing_pct": 100.0 * good / total if total else None,
    }


def _target_accuracy(model: TrainedModel, graphs, targets):
    hits = [int(np.argmax(model.predict_proba(h)[t]) == h.labels[t]) for h, t in zip(graphs, targets)]
    return float(np.mean(hits))


def run_repetition(cfg: ExperimentConfig, seed: int, rep: int = 0) -> dict:
    """One repetition; returns raw per-model numbers and the perturbations used."""
    g = _load_graph(cfg, seed)
    splits = make_splits(g, (cfg.split_train, cfg.split_val, 1 - cfg.split_train - cfg.split_val), seed)
    rng = np.random.default_rng([seed, 7])
    out = {"seed": seed, "accuracy": {}, "perturbation": {}, "certification": {}, "failures": [],
           "perturbations": {}}
    k = cfg.num_targets or default_num_targets(g.n)
    targets = np.sort(rng.choice(splits.test, size=min(k, splits.test.size), replace=False))
    out["targets"] = targets.tolist()

    t_perts = u_pert = None
    if any(s in ("poison_targeted", "evasion_targeted") for s in cfg.scenarios):
        sur = fit_linear_surrogate(g, splits.train)
        t_perts = [targeted_attack(g, int(t), max(1, int(g.adjacency.degrees[t])), cfg.attack_mode, surrogate=sur)
                   for t in targets]
        out["perturbations"]["targeted"] = t_perts
        out["perturbation"]["targeted"] = _pooled_stats(g, t_perts, targets)
    if any(s.endswith("_untargeted") for s in cfg.scenarios):
        u_pert = untargeted_attack(g, splits.train, cfg.budget_fraction, cfg.refit_every)
        out["perturbations"]["untargeted"] = u_pert
        out["perturbation"]["untargeted"] = _single_stats(g, u_pert)

    for name in cfg.models:
        mcfg = cfg.model_config(name)
        tcfg = cfg.train_config(seed)
        acc = {}
        try:
            clean = train(mcfg, tcfg, g, splits)
            if "clean" in cfg.scenarios:
                acc["clean_targets"] = _target_accuracy(clean, [g] * targets.size, targets)
                acc["clean_test"] = evaluate(clean, g, splits.test)
            if t_perts is not None:
                attacked = [apply_perturbation(g, P) for P in t_perts]
                if "evasion_targeted" in cfg.scenarios:
                    acc["evasion_targeted"] = _target_accuracy(clean, attacked, targets)
                if "poison_targeted" in cfg.scenarios:
                    hits = []
                    for h, t in zip(attacked, targets):
                        m = train(mcfg, tcfg, h, splits)
                        hits.append(int(np.argmax(m.predict_proba(h)[t]) == g.labels[t]))
                    acc["poison_targeted"] = float(np.mean(hits))
            if u_pert is not None:
                h = apply_perturbation(g, u_pert)
                if "evasion_untargeted" in cfg.scenarios:
                    acc["evasion_untargeted"] = evaluate(clean, h, splits.test)
                if "poison_untargeted" in cfg.scenarios:
                    acc["poison_untargeted"] = evaluate(train(mcfg, tcfg, h, splits), h, splits.test)
            if cfg.certify:
                nodes = splits.test
                if cfg.cert_nodes is not None and cfg.cert_nodes < nodes.size:
                    nodes = np.sort(np.random.default_rng([seed, 11]).choice(nodes, cfg.cert_nodes, replace=False))
                grid = certification_grid(clean, g, nodes, SmoothingScheme(cfg.p_plus, cfg.p_minus), cfg.cert_n0,
                                          cfg.cert_n1, cfg.cert_alpha, cfg.cert_max_ra, cfg.cert_max_rd, seed)
                out["certification"][name] = summarize_certification(grid)
        except HeteroRobustError as exc:
            out["failures"].append({"repetition": rep, "seed": seed, "model": name, "error": f"{type(exc).__name__}: {exc}"})
        out["accuracy"][name] = acc
    return out


def _mean_std(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    arr = np.asarray(vals, dtype=np.float64)
    return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> dict:
    """Repeat over seeds and aggregate mean and sample stdev (0 for one repetition).

    With ``workers > 1`` repetitions run in separate processes; results are
    collected in seed order, so the bundle does not depend on scheduling.
    """
    if workers > 1 and cfg.repetitions > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            reps = list(pool.map(run_repetition, [cfg] * cfg.repetitions, cfg.seeds, range(cfg.repetitions)))
    else:
        reps = [run_repetition(cfg, s, r) for r, s in enumerate(cfg.seeds)]
    acc_rows, pert_rows, cert_rows = [], [], []
    for name in cfg.models:
        keys = sorted({k for r in reps for k in r["accuracy"].get(name, {})})
        for key in keys:
            vals = [r["accuracy"][name].get(key) for r in reps]
            m, s = _mean_std(vals)
            acc_rows.append({"model": name, "scenario": key, "mean": m, "std": s, "values": vals})
        if cfg.certify:
            row = {"model": name}
            for key in ("acc", "AC", "ra_bar", "rd_bar"):
                vals = [r["certification"].get(name, {}).get(key) for r in reps]
                row[key], row[key + "_std"] = _mean_std(vals)
                row[key + "_values"] = vals
            cert_rows.append(row)
    for kind in ("targeted", "untargeted"):
        if not any(kind in r["perturbation"] for r in reps):
            continue
        row = {"attack": kind}
        for col in PERTURBATION_COLUMNS:
            vals = [r["perturbation"].get(kind, {}).get(col) for r in reps]
            row[col], row[col + "_std"] = _mean_std(vals)
        pert_rows.append(row)
    return {
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in dataclasses.asdict(cfg).items()},
        "notes": {"optimizer": "full-batch gradient descent", "learning_rate": cfg.learning_rate,
                  "certification_samples": [cfg.cert_n0, cfg.cert_n1] if cfg.certify else None},
        "accuracy": acc_rows,
        "perturbation": pert_rows,
        "certification": cert_rows,
        "failures": [f for r in reps for f in r["failures"]],
        "repetitions": [{"seed": r["seed"], "targets": r["targets"], "accuracy": r["accuracy"],
                         "perturbation": r["perturbation"], "certification": r["certification"]} for r in reps],
        "_perturbations": [r["perturbations"] for r in reps],
    }


# --- reports --------------------------------------------------------------------

PERTURBATION_COLUMNS = ("h_before", "h_after", "h_t_before", "h_t_after", "additions_total",
                        "additions_hetero_pct", "deletions_total", "deletions_homo_pct",
                        "heterophily_increasing_pct")
ACCURACY_COLUMNS = ("model", "scenario", "mean", "std")
CERT_COLUMNS = ("model", "acc", "acc_std", "AC", "AC_std", "ra_bar", "ra_bar_std", "rd_bar", "rd_bar_std")


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".10g")
    return str(x)


def _canon(x):
    """JSON value carrying exactly the number the CSV prints."""
    if isinstance(x, dict):
        return {k: _canon(v) for k, v in x.items() if not k.startswith("_")}
    if isinstance(x, (list, tuple)):
        return [_canon(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(_fmt(x)) if np.isfinite(x) else None
    return x


def _csv_text(rows, columns):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def emit_report(bundle: dict, out_dir, formats=("csv", "json")) -> list:
    """Write the perturbation, accuracy and certification tables; returns the paths."""
    if not bundle or not (bundle.get("accuracy") or bundle.get("perturbation") or bundle.get("certification")):
        raise ValueError("empty report bundle")
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    written = []
    pcols = ("attack",) + tuple(c for col in PERTURBATION_COLUMNS for c in (col, col + "_std"))
    if "csv" in formats:
        for name, rows, cols in (("perturbation", bundle["perturbation"], pcols),
                                 ("accuracy", bundle["accuracy"], ACCURACY_COLUMNS),
                                 ("certification", bundle["certification"], CERT_COLUMNS)):
            if rows:
                p = d / f"{name}.csv"
                p.write_text(_csv_text(rows, cols), encoding="utf-8")
                written.append(p)
    if "json" in formats:
        p = d / "report.json"
        p.write_text(json.dumps(_canon(bundle), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        written.append(p)
    return written
