"""Command-line front end.

Usage::

    eca [--seed N] [--out DIR] [--config FILE] <command> [arguments]

Commands: gen-data, train, eval, analyze, generate, cluster, count-params.
Exit codes: 0 success, 1 usage or configuration error, 2 data or file
error, 3 numerical failure.

Config files hold ``section.key = value`` lines; ``#`` starts a comment.
Unknown sections or keys are rejected.  Run ``eca --help-config`` for the
full list of keys and defaults.
"""

import argparse
import logging
import math
import os
import sys
from typing import Dict, Optional

import numpy as np

from . import analysis, data, ecan, generative, kernel, serialization, trainer, unsupervised
from .errors import ConfigError, EcaError
from .objectives import PenaltyWeights
from .seeding import derive_rng

log = logging.getLogger("eca")

# section -> key -> default (the default's type is the key's type)
CONFIG_SCHEMA: Dict[str, Dict[str, object]] = {
    "run": {"seed": 0},
    "data": {
        "source": "", "path": "", "n_per_class": 5000, "scale": "none", "add_aux_dim": False,
        "split_fraction": 0.8, "class1_mixture": True, "normalize": True, "subsample": 0,
    },
    "model": {"kind": "eca"},
    "train": {
        "epochs": 200, "batch_size": 0, "learning_rate": 1e-3, "optimizer": "adam", "objective": "veca",
        "chi": 10.0, "omega": math.pi / 2, "prob_mode": "modified", "reduction": "mean", "restarts": 1,
        "reorthogonalize": False, "xi": 1.0, "gamma": 0.1, "sparsity": 0.0, "sparsity_kind": "none",
        "fix_P": False, "init_from_data": False,
    },
    "ecan": {"folds": "", "pi": ""},
    "kernel": {"kind": "rbf", "degree": 2, "gamma": 1.0},
    "cluster": {
        "max_rounds": 200, "tol": 1e-6, "inner_steps": 10, "learning_rate": 1e-2, "estep": "posterior",
        "identity_init": False, "fix_P": False, "full_mapping_init": True, "restarts": 1,
        "xi": 100.0, "gamma": 0.1,
    },
    "analyze": {"bins": 50, "basis_rows": 200},
}

COUNT_KINDS = ("lor", "lda", "qda", "svm", "eca")


# ----------------------------------------------------------------------------
# configuration

def _convert(text: str, default, where: str):
    if isinstance(default, bool):
        low = text.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ConfigError(f"{where}: expected true or false, got {text!r}")
    try:
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{where}: expected a {type(default).__name__}, got {text!r}") from None
    return text


def default_config() -> Dict[str, Dict[str, object]]:
    return {sec: dict(keys) for sec, keys in CONFIG_SCHEMA.items()}


def parse_config(text: str, origin: str = "config") -> Dict[str, Dict[str, object]]:
    """Parse ``section.key = value`` lines over the defaults, rejecting unknown keys."""
    cfg = default_config()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{origin}:{lineno}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'section.key = value'")
        name, value = (part.strip() for part in line.split("=", 1))
        if "." not in name:
            raise ConfigError(f"{where}: key {name!r} must be written as section.key")
        section, key = name.split(".", 1)
        if section not in CONFIG_SCHEMA or key not in CONFIG_SCHEMA[section]:
            raise ConfigError(f"{where}: unknown config key {name!r}")
        cfg[section][key] = _convert(value, CONFIG_SCHEMA[section][key], f"{where}: {name}")
    return cfg


def load_config(path: Optional[str]):
    if path is None:
        return default_config()
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), path)


def describe_config() -> str:
    lines = []
    for sec, keys in CONFIG_SCHEMA.items():
        for key, default in keys.items():
            lines.append(f"{sec}.{key} = {default!r}  ({type(default).__name__})")
    return "\n".join(lines)


def train_config(cfg, seed: int) -> trainer.TrainConfig:
    t = cfg["train"]
    return trainer.TrainConfig(
        epochs=t["epochs"], batch_size=t["batch_size"] or None, learning_rate=t["learning_rate"],
        optimizer=t["optimizer"], seed=seed, objective=t["objective"],
        weights=penalty_weights(t), chi=t["chi"], omega=t["omega"], prob_mode=t["prob_mode"],
        reduction=t["reduction"], reorthogonalize=t["reorthogonalize"], restarts=t["restarts"],
    )


def penalty_weights(section) -> PenaltyWeights:
    try:
        return PenaltyWeights(section["xi"], section["gamma"], section.get("sparsity", 0.0),
                              section.get("sparsity_kind", "none"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def kernel_spec(cfg) -> kernel.KernelSpec:
    k = cfg["kernel"]
    return kernel.KernelSpec(k["kind"], k["degree"], k["gamma"])


# ----------------------------------------------------------------------------
# data

def load_source(cfg, seed: int, dataset_path: Optional[str] = None) -> data.RawDataset:
    d = cfg["data"]
    source = "file" if dataset_path else d["source"]
    path = dataset_path or d["path"]
    if source == "2d":
        return data.gen_2d(d["n_per_class"], seed)
    if source == "3d":
        return data.gen_3d(d["n_per_class"], seed, d["class1_mixture"])
    if source == "stripes":
        return data.gen_stripes(d["n_per_class"], seed)
    if source == "axis_clusters":
        return data.gen_axis_clusters(d["n_per_class"], seed, center=3.0, major=1.0, minor=0.1)
    if source == "mnist":
        return data.load_mnist(path)
    if source in ("wis1992", "wis1995"):
        return data.load_uci_csv(path, source)
    if source == "file":
        return data.load_raw(path)
    raise ConfigError(f"unknown data source {source!r} (set data.source or pass a dataset file)")


def prepare(cfg, seed: int, dataset_path: Optional[str] = None, model_kind: str = "eca"):
    """Load, preprocess and split; returns ``(full, train, validation)``."""
    d = cfg["data"]
    raw = load_source(cfg, seed, dataset_path)
    if d["scale"] not in data.SCALES:
        raise ConfigError(f"unknown scale {d['scale']!r}")
    normalize_rows = d["normalize"] and model_kind != "keca"
    full = data.preprocess(raw, d["scale"], d["add_aux_dim"], normalize_rows=normalize_rows)
    if full.y is None:
        return full, full, full
    if full.split is not None and np.any(full.split == data.TRAIN) and np.any(full.split == data.VALIDATION):
        train, val = full.part(data.TRAIN), full.part(data.VALIDATION)
    else:
        if not 0 < d["split_fraction"] < 1:
            raise ConfigError("data.split_fraction must lie strictly between 0 and 1")
        train, val = data.split(full, d["split_fraction"], seed)
    if d["subsample"] and d["subsample"] < train.n:
        rng = derive_rng(seed, "subsample")
        train = train.take(np.sort(rng.choice(train.n, d["subsample"], replace=False)))
    return full, train, val


# ----------------------------------------------------------------------------
# models

def load_any(path):
    """Return ``(kind, model, extra)`` for any model file."""
    kind = serialization.read_json(path).get("kind")
    if kind == "eca":
        return kind, trainer.load_model(path), None
    if kind == "ecan":
        return kind, ecan.load_ecan(path), None
    if kind == "geca":
        return kind, generative.load_geca(path), None
    if kind == "keca":
        model, spec = kernel.load_keca(path)
        return kind, model, spec
    raise ConfigError(f"{path}: not a model file (kind {kind!r})")


def eca_part(kind, model):
    """The single-fold (P, L) model inside any model kind, or ``None`` for networks."""
    if kind in ("eca", "keca"):
        return model
    if kind == "geca":
        return model.eca
    return None


def evaluate_any(kind, model, extra, dataset, prob_mode="modified"):
    """Return ``(report, extra_metrics)``."""
    if kind == "eca":
        return trainer.evaluate(dataset, model, prob_mode), {}
    if kind == "geca":
        pred = generative.geca_predict(dataset.X, model)
        return trainer.evaluation_report(pred, dataset.y, model.l), {}
    if kind == "keca":
        return kernel.evaluate_keca(dataset, model, extra, prob_mode), {}
    folds = ecan.evaluate_folds(dataset, model, prob_mode)
    pred = ecan.ecan_predict(model, dataset.X, prob_mode)
    metrics = {f"fold{t}_accuracy": a for t, a in enumerate(folds)}
    return trainer.evaluation_report(pred, dataset.y, model.folds[-1].eca.l), metrics


def write_eval(out, report: trainer.EvalReport, metrics: dict):
    rows = [("accuracy", report.accuracy)] + sorted(metrics.items())
    rows += [(f"support_class{k}", int(c)) for k, c in enumerate(report.per_class_counts)]
    analysis.write_csv(os.path.join(out, "eval.csv"), ["metric", "value"], rows)
    l = report.confusion.shape[0]
    analysis.write_csv(os.path.join(out, "confusion.csv"), ["predicted"] + [f"true{k}" for k in range(l)],
                       [[k] + report.confusion[k].tolist() for k in range(l)])


# ----------------------------------------------------------------------------
# commands

def cmd_gen_data(args, cfg):
    n = args.n if args.n is not None else cfg["data"]["n_per_class"]
    if args.kind == "2d":
        raw = data.gen_2d(n, args.seed)
    else:
        raw = data.gen_3d(n, args.seed, not args.single_component)
    path = os.path.join(args.out, f"data_{args.kind}.json")
    data.save_raw(raw, path)
    summary = {"format_version": serialization.FORMAT_VERSION, "kind": "dataset_summary",
               "source": args.kind, "seed": args.seed, "classes": []}
    for k in np.unique(raw.y):
        Xk = raw.X[raw.y == k]
        summary["classes"].append({"label": int(k), "count": int(Xk.shape[0]),
                                   "mean": Xk.mean(axis=0), "covariance": np.cov(Xk.T)})
    serialization.write_json(summary, os.path.join(args.out, f"data_{args.kind}_summary.json"))
    print(f"wrote {path}")
    for c in summary["classes"]:
        cov = np.array2string(np.asarray(c["covariance"]), precision=4)
        print(f"class {c['label']}: n={c['count']} mean={np.round(c['mean'], 4).tolist()}\n  covariance={cov}")
    return 0


def cmd_train(args, cfg):
    kind = cfg["model"]["kind"]
    tc = train_config(cfg, args.seed)
    full, train_set, val = prepare(cfg, args.seed, args.dataset, kind)
    extra = None
    orth = None
    if kind == "eca":
        res = trainer.train(train_set, tc)
        model, history, orth = res.model, res.loss_history, res.orthogonality
        trainer.save_model(model, os.path.join(args.out, "model.json"))
    elif kind == "ecan":
        spec_text = cfg["ecan"]["folds"]
        if not spec_text.strip():
            raise ConfigError("ecan.folds must list the folds, e.g. 'identity 784 784; quad_reduce 784 128'")
        spec = [ecan.parse_fold_spec(s) for s in spec_text.split(";") if s.strip()]
        pi = [float(v) for v in cfg["ecan"]["pi"].split(",")] if cfg["ecan"]["pi"].strip() else None
        res = ecan.train_ecan(train_set, spec, tc, pi)
        model, history = res.model, res.loss_history
        orth = max(res.fold_orthogonality)
        ecan.save_ecan(model, os.path.join(args.out, "model.json"))
    elif kind == "geca":
        res = generative.train_geca(train_set, tc, fix_P=cfg["train"]["fix_P"])
        model, history = res.model, res.loss_history
        orth = trainer.orthogonality_residual(model.P)
        generative.save_geca(model, os.path.join(args.out, "model.json"))
    elif kind == "keca":
        extra = kernel_spec(cfg)
        res = kernel.train_keca(train_set, extra, tc, init_from_data=cfg["train"]["init_from_data"])
        model, history, orth = res.model, res.loss_history, res.orthogonality
        kernel.save_keca(model, extra, os.path.join(args.out, "model.json"))
    else:
        raise ConfigError(f"unknown model.kind {kind!r}")
    analysis.write_csv(os.path.join(args.out, "loss.csv"), ["epoch", "loss"], enumerate(history))
    report, metrics = evaluate_any(kind, model, extra, val, tc.prob_mode)
    metrics["orthogonality"] = orth
    write_eval(args.out, report, metrics)
    print(f"validation accuracy: {report.accuracy:.4f}")
    print(f"orthogonality residual ||I - P^T P||_F: {orth:.6g}")
    for k, v in metrics.items():
        if k.startswith("fold"):
            print(f"{k}: {v:.4f}")
    return 0


def cmd_eval(args, cfg):
    kind, model, extra = load_any(args.model)
    _, _, val = prepare(cfg, args.seed, args.dataset, kind)
    report, metrics = evaluate_any(kind, model, extra, val, cfg["train"]["prob_mode"])
    write_eval(args.out, report, metrics)
    print(f"accuracy: {report.accuracy:.4f}")
    if report.empty_classes:
        print(f"classes without samples: {report.empty_classes}")
    return 0


def cmd_analyze(args, cfg):
    kind, model, extra = load_any(args.model)
    eca = eca_part(kind, model)
    if eca is None:
        raise ConfigError("analysis works on single-fold models (eca, geca, keca)")
    out = args.out
    hard = eca.ecmm().hard
    l = eca.l
    analysis.write_csv(os.path.join(out, "degeneracy.csv"), ["eigenvalue", "binary", "class", "degeneracy"],
                       analysis.degeneracy_table(hard))
    stats = analysis.model_stats(hard)
    analysis.write_csv(os.path.join(out, "crowdedness.csv"), ["class", "eigenfeatures"],
                       enumerate(stats.crowdedness.tolist()))
    analysis.write_csv(os.path.join(out, "overlap.csv"), ["degree", "eigenfeatures"],
                       sorted(stats.overlap_histogram.items()))
    soft = analysis.soft_mapping_stats(eca.ecmm().soft)
    analysis.write_csv(os.path.join(out, "soft_mapping.csv"), ["statistic", "value"], sorted(soft.items()))
    pes = analysis.pure_eigenfeatures(hard)
    side = analysis.as_image(eca.P[:, 0]) is not None
    for j in pes:
        if side:
            analysis.write_pgm(os.path.join(out, f"eigenfeature_{j:04d}.pgm"), analysis.as_image(eca.P[:, j]))
    print(f"pure eigenfeatures: {len(pes)}")
    if args.dataset or cfg["data"]["source"]:
        full, _, _ = prepare(cfg, args.seed, args.dataset, kind)
        if full.m != eca.m:
            raise ConfigError(f"dataset has {full.m} features, model expects {eca.m}")
        targets = pes if len(pes) else range(eca.m)
        for j in targets:
            h = analysis.projection_histogram(full, eca, int(j), cfg["analyze"]["bins"])
            analysis.write_csv(os.path.join(out, f"hist_{j:04d}.csv"),
                               ["lower", "upper"] + [f"class{k}" for k in range(full.l)], h.rows())
        rows = analysis.basis_transform(full.X[:cfg["analyze"]["basis_rows"]], eca.P)
        analysis.write_csv(os.path.join(out, "basis.csv"), [f"c{j}" for j in range(eca.m)], rows.tolist())
        if side:
            for k in range(l):
                try:
                    rec = analysis.class_reconstruction(full, eca, k)
                except EcaError:
                    continue
                analysis.write_pgm(os.path.join(out, f"class_{k}_reconstruction.pgm"), analysis.as_image(rec))
    for v, binary, label, count in analysis.degeneracy_table(hard):
        if count:
            print(f"{v:>6} {binary} {label!s:>5} {count}")
    return 0


def cmd_generate(args, cfg):
    kind, model, _ = load_any(args.model)
    if kind != "geca":
        raise ConfigError("sample generation needs a generative (geca) model")
    if not 0 <= args.cls < model.l:
        raise ConfigError(f"class must lie in 0..{model.l - 1}")
    S = generative.geca_sample(args.cls, model, args.seed, count=args.count)
    analysis.write_csv(os.path.join(args.out, "samples.csv"), [f"x{j}" for j in range(model.m)], S.tolist())
    if analysis.as_image(S[0]) is not None:
        for i, s in enumerate(S):
            analysis.write_pgm(os.path.join(args.out, f"sample_{i:04d}.pgm"), analysis.as_image(s))
    print(f"wrote {len(S)} samples of class {args.cls}")
    return 0


def cmd_cluster(args, cfg):
    c = cfg["cluster"]
    uc = unsupervised.UecaConfig(
        max_rounds=c["max_rounds"], tol=c["tol"], inner_steps=c["inner_steps"],
        learning_rate=c["learning_rate"], seed=args.seed, weights=penalty_weights(c),
        chi=cfg["train"]["chi"], omega=cfg["train"]["omega"], estep=c["estep"],
        identity_init=c["identity_init"], fix_P=c["fix_P"], full_mapping_init=c["full_mapping_init"],
        restarts=c["restarts"],
    )
    full, _, _ = prepare(cfg, args.seed, args.dataset)
    res = unsupervised.ueca_fit(full, args.l_tilde, uc)
    analysis.write_csv(os.path.join(args.out, "assignments.csv"), ["sample_index", "cluster"],
                       enumerate(res.assignments.tolist()))
    analysis.write_csv(os.path.join(args.out, "elbo.csv"), ["round", "elbo"],
                       enumerate(res.elbo_history, start=1))
    generative.save_geca(res.state.model, os.path.join(args.out, "model.json"))
    print(f"rounds: {res.rounds} converged: {res.converged} final ELBO: {res.elbo_history[-1]:.10g}")
    print("cluster sizes: " + " ".join(str(int(v)) for v in np.bincount(res.assignments, minlength=args.l_tilde)))
    return 0


def count_params(m: int, l: int, kind: str) -> int:
    """Parameter counts of the compared classifiers for m features and l classes."""
    if m < 1 or l < 1:
        raise ConfigError("m and l must be >= 1")
    if kind in ("lor", "svm"):
        return m + 1
    if kind == "lda":
        return l * m + (l - 1)
    if kind == "qda":
        return l * m + (l - 1) + l * m * (m + 1) // 2
    if kind == "eca":
        return l * m + m * (m + 1)
    raise ConfigError(f"unknown model kind {kind!r}; choose from {', '.join(COUNT_KINDS)}")


ECA_COUNT_NOTE = ("note: published comparison tables list l*m + m*m for ECA "
                  "(e.g. 8 for m=2, l=2), which disagrees with this formula")


def cmd_count_params(args, cfg):
    print(count_params(args.m, args.l, args.kind))
    if args.kind == "eca":
        print(f"{ECA_COUNT_NOTE}; table-style value: {args.l * args.m + args.m * args.m}")
    return 0


# ----------------------------------------------------------------------------
# argument parsing

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _global_flags(p, suppress):
    default = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS if suppress else 0,
                   help="seed for every random choice (default 0, or run.seed from the config)")
    p.add_argument("--out", default=argparse.SUPPRESS if suppress else ".", help="output directory")
    p.add_argument("--config", default=default, help="config file with section.key = value lines")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="eca", description="Eigen component analysis models.")
    _global_flags(p, False)
    p.add_argument("--help-config", action="store_true", help="list config keys and defaults, then exit")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, help_text):
        sp = sub.add_parser(name, help=help_text)
        _global_flags(sp, True)
        return sp

    g = add("gen-data", "generate a synthetic dataset")
    g.add_argument("kind", choices=("2d", "3d"))
    g.add_argument("--n", type=int, default=None, help="samples per class (default data.n_per_class)")
    g.add_argument("--single-component", action="store_true", help="3d: draw class 1 from one component only")
    t = add("train", "train a model")
    t.add_argument("dataset", nargs="?", help="dataset file from gen-data (overrides data.source)")
    e = add("eval", "evaluate a model on the validation split")
    e.add_argument("model")
    e.add_argument("dataset", nargs="?")
    a = add("analyze", "export mapping statistics, histograms and images")
    a.add_argument("model")
    a.add_argument("dataset", nargs="?")
    s = add("generate", "draw samples from a generative model")
    s.add_argument("model")
    s.add_argument("cls", type=int, metavar="class")
    s.add_argument("count", type=int, nargs="?", default=1)
    c = add("cluster", "cluster a dataset without labels")
    c.add_argument("dataset", nargs="?")
    c.add_argument("--l-tilde", type=int, required=True, help="number of latent classes")
    k = add("count-params", "parameter count of a classifier")
    k.add_argument("m", type=int)
    k.add_argument("l", type=int)
    k.add_argument("kind", choices=COUNT_KINDS)
    return p


COMMANDS = {
    "gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "analyze": cmd_analyze,
    "generate": cmd_generate, "cluster": cmd_cluster, "count-params": cmd_count_params,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.help_config:
        print(describe_config())
        return 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    explicit_seed = "--seed" in (argv if argv is not None else sys.argv[1:]) or any(
        a.startswith("--seed=") for a in (argv if argv is not None else sys.argv[1:]))
    try:
        cfg = load_config(args.config)
        if not explicit_seed:
            args.seed = cfg["run"]["seed"]
        if args.seed < 0:
            raise ConfigError("seed must be non-negative")
        os.makedirs(args.out, exist_ok=True)
        return COMMANDS[args.command](args, cfg)
    except EcaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
