"""Command-line experiment harness.

Subcommands write into the run directory ``--out``::

    data/{train,val,test}.txt         dataset caches
    checkpoints/classifier-<i>.txt    trained parameters
    history/classifier-<i>.csv        per-epoch loss and accuracy
    training_summary.csv              one row per roster member
    attacks/*.csv, attacks/*.txt      risk curves and attack reports
    report.txt                        consolidated report

Every file carries the master seed and the config hash.
"""
from __future__ import annotations

import argparse
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import attacks, bounds, data, models, training
from .config import ConfigError, ExperimentConfig, load_config
from .textio import atomic_write_text, format_scalar, read_csv, write_csv

SUMMARY_COLUMNS = ("classifier", "structure", "n_params", "accuracy", "status", "seed", "config_hash")


class CommandError(RuntimeError):
    """A subcommand cannot proceed; the message says what is missing."""


def _paths(cfg: ExperimentConfig) -> dict[str, Path]:
    out = Path(cfg.out)
    return {
        "train": out / "data" / "train.txt",
        "val": out / "data" / "val.txt",
        "test": out / "data" / "test.txt",
        "checkpoints": out / "checkpoints",
        "history": out / "history",
        "summary": out / "training_summary.csv",
        "attacks": out / "attacks",
        "report": out / "report.txt",
    }


# --- ingest -----------------------------------------------------------------

def build_datasets(cfg: ExperimentConfig):
    """``(train, val, test)`` for the configured task; validation uses seed + 1."""
    if cfg.task == "ising":
        tr, te = data.generate_ising_dataset(cfg.ising_length, cfg.n_train, cfg.n_test, cfg.seed)
        va, _ = data.generate_ising_dataset(cfg.ising_length, cfg.n_val, 1, cfg.seed + 1)
    elif cfg.task == "synthetic":
        tr, te = data.build_synthetic_dataset(cfg.n_train, cfg.n_test, cfg.seed)
        va, _ = data.build_synthetic_dataset(cfg.n_val, 2, cfg.seed + 1)
    else:
        found = data.find_mnist(cfg.mnist_dir)
        if found is None:
            raise CommandError(
                f"MNIST files not found in {cfg.mnist_dir}: expected train-images-idx3-ubyte[.gz] "
                "and train-labels-idx1-ubyte[.gz]; set mnist_dir or use task = synthetic")
        images = data.load_mnist_idx(*found)
        tr, te = data.build_mnist_dataset(images, cfg.digits, cfg.n_train, cfg.n_test, cfg.seed)
        va, _ = data.build_mnist_dataset(images, cfg.digits, cfg.n_val, 2, cfg.seed + 1)
    return tr, va, te


def cmd_ingest(cfg: ExperimentConfig, log=print) -> dict[str, Path]:
    p = _paths(cfg)
    tr, va, te = build_datasets(cfg)
    extra = {"task": cfg.task, "master_seed": cfg.seed, "config_hash": cfg.hash}
    for key, ds in (("train", tr), ("val", va), ("test", te)):
        data.save_dataset(ds, p[key], extra)
        log(f"wrote {p[key]} ({len(ds)} samples)")
    return {k: p[k] for k in ("train", "val", "test")}


def load_splits(cfg: ExperimentConfig):
    p = _paths(cfg)
    missing = [str(p[k]) for k in ("train", "val", "test") if not p[k].is_file()]
    if missing:
        raise CommandError(f"dataset cache missing ({', '.join(missing)}); run `ingest` first")
    return tuple(data.load_dataset(p[k]) for k in ("train", "val", "test"))


# --- train ------------------------------------------------------------------

def _structure(model: models.ClassifierModel) -> str:
    spec = model.spec
    if spec.architecture == "qcnn":
        return f"QCNN ({spec.variant})"
    return f"variational depth {spec.depth}"


def _train_member(args):
    member, cfg, train_set, val_set, test_set = args
    (model,) = models.build_roster(train_set.n_qubits, cfg.seed, [member])
    tcfg = replace(cfg.training, seed=cfg.seed + member)
    try:
        trained, history = training.train(model, train_set, val_set, tcfg)
    except training.TrainingDivergedError as exc:
        return member, model, None, None, str(exc)
    acc, _ = training.evaluate(trained, test_set)
    trained = trained.with_params(trained.params, master_seed=cfg.seed, config_hash=cfg.hash, test_accuracy=acc)
    return member, trained, history, acc, None


def cmd_train(cfg: ExperimentConfig, log=print) -> list[dict]:
    """Train each roster member, skipping members with an existing checkpoint."""
    p = _paths(cfg)
    train_set, val_set, test_set = load_splits(cfg)
    todo, done = [], {}
    for m in cfg.members:
        ck = p["checkpoints"] / f"classifier-{m}.txt"
        if ck.is_file():
            model = training.load_checkpoint(ck)
            done[m] = (model, model.metadata.get("test_accuracy"), "ok")
            log(f"classifier-{m}: checkpoint present, skipped")
        else:
            todo.append((m, cfg, train_set, val_set, test_set))
    if cfg.threads > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(_train_member, todo))
    else:
        results = [_train_member(t) for t in todo]
    for member, model, history, acc, failure in results:
        if failure is not None:
            done[member] = (model, None, f"diverged: {failure}")
            log(f"classifier-{member}: FAILED ({failure})")
            continue
        training.save_checkpoint(model, p["checkpoints"] / f"classifier-{member}.txt")
        history.to_csv(p["history"] / f"classifier-{member}.csv", cfg.stamp())
        done[member] = (model, acc, "ok")
        log(f"classifier-{member}: test accuracy {acc:.3f}")
    rows = []
    for m in cfg.members:
        model, acc, status = done[m]
        rows.append({"classifier": m, "structure": _structure(model), "n_params": model.spec.param_count,
                     "accuracy": "" if acc is None else acc, "status": status, **cfg.stamp()})
    write_csv(p["summary"], SUMMARY_COLUMNS, ([r[c] for c in SUMMARY_COLUMNS] for r in rows))
    return rows


def load_members(cfg: ExperimentConfig, members) -> list[models.ClassifierModel]:
    p = _paths(cfg)
    out = []
    for m in members:
        ck = p["checkpoints"] / f"classifier-{m}.txt"
        if not ck.is_file():
            raise CommandError(f"checkpoint for classifier-{m} missing at {ck}; run `train` first")
        out.append(training.load_checkpoint(ck))
    return out


# --- attack -----------------------------------------------------------------

def _attack_config(cfg: ExperimentConfig, **kw) -> attacks.AttackConfig:
    return replace(cfg.attack, seed=kw.pop("seed", cfg.seed), **kw)


def cmd_attack(cfg: ExperimentConfig, kind: str, log=print) -> Path:
    p = _paths(cfg)
    _, _, test_set = load_splits(cfg)
    stamp = cfg.stamp()
    if kind == "universal-example":
        subset = load_members(cfg, cfg.subset)
        rows, reports = attacks.risk_curve(subset, test_set, cfg.epsilon_grid, _attack_config(cfg))
        out = p["attacks"] / "universal_example.csv"
        attacks.write_risk_csv(out, rows, {"subset": " ".join(map(str, cfg.subset)),
                                           "config_hash": stamp["config_hash"]})
        atomic_write_text(p["attacks"] / "universal_example_report.txt",
                          attacks.report_to_text(reports[-1], {"config_hash": stamp["config_hash"]}))
        for eps, risk, fid, *_ in rows:
            log(f"epsilon {eps:.3f}: universal risk {risk:.3f} fidelity {fid:.4f}")
        return out
    if kind == "transfer":
        subset = load_members(cfg, cfg.subset)
        (surrogate,) = load_members(cfg, [cfg.surrogate])
        header = ("epsilon", "mode", "risk", "mean_fidelity", "n_samples", "seed", "surrogate", "config_hash")
        rows = []
        for s in range(cfg.transfer_seeds):
            seed = cfg.seed + s
            acfg = _attack_config(cfg, seed=seed, sample_size=cfg.transfer_sample_size)
            white, _ = attacks.risk_curve(subset, test_set, cfg.epsilon_grid, acfg)
            trans = attacks.transfer_attack_eval(surrogate, subset, test_set, acfg, cfg.epsilon_grid)
            for (eps, risk, fid, n, _), rep in zip(white, trans):
                rows.append((eps, "white_box", risk, fid, n, seed, cfg.surrogate, stamp["config_hash"]))
                rows.append((eps, "transfer", rep.risk, rep.mean_fidelity, rep.n_samples, seed,
                             cfg.surrogate, stamp["config_hash"]))
            log(f"seed {seed}: done")
        out = p["attacks"] / "transfer.csv"
        write_csv(out, header, rows)
        return out
    if kind == "universal-perturbation":
        (model,) = load_members(cfg, [cfg.perturb_target])
        pcfg = replace(cfg.perturbation, seed=cfg.seed)
        layer, report, trajectory = attacks.universal_perturbation_search(model, test_set, pcfg)
        out = p["attacks"] / "universal_perturbation.csv"
        write_csv(out, ("iteration", "epsilon", "loss", "accuracy", "seed", "classifier", "config_hash"),
                  (t + (cfg.seed, cfg.perturb_target, stamp["config_hash"]) for t in trajectory))
        atomic_write_text(p["attacks"] / "universal_perturbation_layer.txt",
                          f"seed = {cfg.seed}\nconfig_hash = {stamp['config_hash']}\n"
                          f"n_qubits = {layer.n_qubits}\n[angles]\n"
                          + "".join(f"{a!r}\n" for a in layer.angles))
        log(f"final loss {trajectory[-1][2]:.4f} accuracy {trajectory[-1][3]:.3f} "
            f"after {len(trajectory) - 1} accepted steps")
        return out
    raise CommandError(f"unknown attack {kind!r}")


# --- bounds -----------------------------------------------------------------

BOUND_ARGS = {
    "theorem1": (bounds.theorem1_min_epsilon, ("d", "k", "mu", "R0")),
    "lemma_a1": (bounds.lemma_a1_min_epsilon, ("d", "mu", "R")),
    "levy": (bounds.levy_min_epsilon, ("alpha", "beta", "d", "mu", "R")),
    "union": (bounds.union_risk_lower_bound, ("risks",)),
    "hoeffding": (bounds.hoeffding_deviation, ("n", "delta")),
    "qnfl": (bounds.qnfl_classifier_bound, ("d", "dprime", "N")),
    "qnfl_unitary": (bounds.qnfl_unitary_bound, ("d", "N")),
}
_INT_ARGS = {"d", "k", "n", "dprime", "N"}


def cmd_bounds(kind: str, assignments: list[str]) -> str:
    if kind not in BOUND_ARGS:
        raise CommandError(f"unknown bound {kind!r}; choose from {', '.join(BOUND_ARGS)}")
    fn, names = BOUND_ARGS[kind]
    given = {}
    for a in assignments:
        key, eq, value = a.partition("=")
        if not eq or key not in names:
            raise CommandError(f"bad argument {a!r}; {kind} takes {', '.join(n + '=...' for n in names)}")
        given[key] = value
    missing = [n for n in names if n not in given]
    if missing:
        raise CommandError(f"{kind} is missing {', '.join(missing)}")
    try:
        args = []
        for n in names:
            v = given[n]
            if n == "risks":
                args.append([float(x) for x in v.split(",")])
            elif n in _INT_ARGS:
                args.append(int(v))
            else:
                args.append(float(v))
    except ValueError as exc:
        raise CommandError(f"non-numeric argument: {exc}") from None
    value = fn(*args)
    lines = [f"bound = {kind}"] + [f"{n} = {given[n]}" for n in names] + [f"value = {value!r}"]
    return "\n".join(lines) + "\n"


# --- report -----------------------------------------------------------------

def cmd_report(run_dir) -> str:
    """Join the artifacts of a run; missing pieces are marked, not fatal."""
    run_dir = Path(run_dir)
    if not run_dir.is_dir() or not any(run_dir.iterdir()):
        raise CommandError(f"no run artifacts in {run_dir}")
    lines = [f"run = {run_dir.name}"]

    def section(title):
        lines.extend(["", f"[{title}]"])

    summary_path = run_dir / "training_summary.csv"
    section("training")
    summary = read_csv(summary_path) if summary_path.is_file() else []
    if summary:
        lines.append(f"seed = {summary[0]['seed']}")
        lines.append(f"config_hash = {summary[0]['config_hash']}")
        lines.append("classifier\tstructure\tn_params\taccuracy\tstatus")
        for r in summary:
            acc = r["accuracy"]
            lines.append(f"{r['classifier']}\t{r['structure']}\t{r['n_params']}\t"
                         f"{acc if acc == '' else f'{acc:.4f}'}\t{r['status']}")
    else:
        lines.append(f"missing: {summary_path.name}")
    test_path = run_dir / "data" / "test.txt"
    d = None
    if test_path.is_file():
        d = 1 << data.load_dataset(test_path).n_qubits

    ue_path = run_dir / "attacks" / "universal_example.csv"
    section("universal examples")
    curve = read_csv(ue_path) if ue_path.is_file() else []
    if curve:
        subset = [int(x) for x in str(curve[0]["subset"]).split()]
        by_member = {r["classifier"]: r for r in summary}
        accs = [by_member.get(m, {}).get("accuracy", "") for m in subset]
        mu_min = None
        if accs and all(a != "" for a in accs):
            mu_min = min(1.0 - a for a in accs)
        lines.append(f"subset = {' '.join(map(str, subset))}")
        lines.append(f"mu_min = {'' if mu_min is None else format_scalar(mu_min)}")
        lines.append("epsilon\trisk\tmean_fidelity\tfloor_hs\tfloor_trace")
        for r in curve:
            floor = ""
            if mu_min and d and r["risk"] < 1:
                f = bounds.theorem1_min_epsilon(d, len(subset), mu_min, r["risk"])
                floor = f"{f:.4f}\t{f / math.sqrt(2):.4f}"
            else:
                floor = "n/a\tn/a"
            fid = r["mean_fidelity"]
            fid = "nan" if isinstance(fid, str) or fid != fid else f"{fid:.4f}"
            lines.append(f"{r['epsilon']:.3f}\t{r['risk']:.4f}\t{fid}\t{floor}")
    else:
        lines.append(f"missing: {ue_path.name}")

    tr_path = run_dir / "attacks" / "transfer.csv"
    section("transfer")
    rows = read_csv(tr_path) if tr_path.is_file() else []
    if rows:
        lines.append("epsilon\twhite_box_mean\ttransfer_mean\tseeds")
        for eps in sorted({r["epsilon"] for r in rows}):
            wb = [r["risk"] for r in rows if r["epsilon"] == eps and r["mode"] == "white_box"]
            tf = [r["risk"] for r in rows if r["epsilon"] == eps and r["mode"] == "transfer"]
            lines.append(f"{eps:.3f}\t{np.mean(wb):.4f}\t{np.mean(tf):.4f}\t{len(wb)}")
    else:
        lines.append(f"missing: {tr_path.name}")

    up_path = run_dir / "attacks" / "universal_perturbation.csv"
    section("universal perturbation")
    traj = read_csv(up_path) if up_path.is_file() else []
    if traj:
        first, last = traj[0], traj[-1]
        lines.append(f"classifier = {last['classifier']}")
        lines.append(f"accepted_steps = {last['iteration']}")
        lines.append(f"accuracy = {first['accuracy']:.4f} -> {last['accuracy']:.4f}")
        lines.append(f"loss = {first['loss']:.4f} -> {last['loss']:.4f}")
        lines.append(f"epsilon_proxy = {last['epsilon']:.4f}")
    else:
        lines.append(f"missing: {up_path.name}")
    text = "\n".join(lines) + "\n"
    atomic_write_text(run_dir / "report.txt", text)
    return text


# --- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI experiment config")
    common.add_argument("--out", help="run directory")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--threads", type=int, help="worker processes for training")
    common.add_argument("--subset", help='classifiers attacked together, e.g. "1,3,6"')
    common.add_argument("--epsilon-grid", help='"start:step:stop" or a comma list')

    parser = argparse.ArgumentParser(prog="qadvlab", description="Adversarial experiments on quantum classifiers.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("ingest", parents=[common], help="build and cache datasets")
    sub.add_parser("train", parents=[common], help="train the classifier roster")
    atk = sub.add_parser("attack", parents=[common], help="run an attack campaign")
    atk.add_argument("kind", choices=["universal-example", "universal-perturbation", "transfer"])
    bnd = sub.add_parser("bounds", help="evaluate a closed-form bound")
    bnd.add_argument("kind", choices=sorted(BOUND_ARGS))
    bnd.add_argument("assignments", nargs="*", metavar="key=value")
    rep = sub.add_parser("report", parents=[common], help="consolidate a run directory")
    rep.add_argument("run_dir", nargs="?", help="defaults to the configured run directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "bounds":
            sys.stdout.write(cmd_bounds(args.kind, args.assignments))
            return 0
        cfg = load_config(args.config, out=args.out, seed=args.seed, threads=args.threads,
                          subset=args.subset, epsilon_grid=args.epsilon_grid)
        if args.command == "ingest":
            cmd_ingest(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "attack":
            print(cmd_attack(cfg, args.kind))
        elif args.command == "report":
            sys.stdout.write(cmd_report(args.run_dir or cfg.out))
    except (CommandError, ConfigError, bounds.BoundDomainError, data.IdxFormatError,
            data.DatasetFormatError, training.CheckpointFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
