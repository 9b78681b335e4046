"""Command-line front end: train, estimate, sweep, validate, mdl.

Every run is reproducible from its record: the master seed is resolved
once (flag > config file > STARVOL_SEED > 0), all internal randomness is
derived from it by fixed roles, and per-sample streams are split by sample
index, so thread count never changes results.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from pathlib import Path

import numpy as np

from .geometry import (
    CostEvaluationError,
    EstimationError,
    MeasureSpec,
    NeighborhoodSpec,
    SearchOptions,
    estimate_local_volume,
)
from .models import (
    Checkpoint,
    PoisonConfig,
    TrainConfig,
    adam_train,
    description_length,
    hessian_diag,
    hessian_full,
    init_params,
    load_checkpoint,
    load_csv,
    make_blobs,
    make_kl_cost,
    make_loss_cost,
    make_spirals,
    save_checkpoint,
    split_dataset,
)
from .models.train import AdamHyper
from .precondition import DEFAULT_EPS, Preconditioner, PreconditionerError, from_diagonal, from_hessian
from .runio import (
    DEFAULT_CONFIG,
    default_seed,
    load_config,
    make_run_record,
    merge_config,
    read_jsonl,
    write_jsonl,
    write_samples_csv,
    write_sweep_csv,
)

# fixed roles for deriving independent streams from the master seed
SEED_ROLES = {"data": 0, "init": 1, "train": 2, "estimate": 3}

PRECONDITIONER_CHOICES = ("none", "hessian", "diag", "adam-nu", "adam-mu")


def _role_seed(master: int, role: str) -> np.random.SeedSequence:
    return np.random.SeedSequence(master, spawn_key=(SEED_ROLES[role],))


def _resolve_seed(flag_seed: int | None, config_seed=None) -> int:
    if flag_seed is not None:
        return int(flag_seed)
    if config_seed is not None:
        return int(config_seed)
    return default_seed()


def _build_datasets(config: dict, master_seed: int):
    """Materialize (train, val, poison) splits from the dataset config."""
    ds = config["dataset"]
    poison_size = int(ds.get("poison", 0))
    # a zero-size split would make an empty Dataset, so only ask for it when used
    sizes = [int(ds["train"]), int(ds["val"])] + ([poison_size] if poison_size > 0 else [])
    total = sum(sizes)
    data_seed = int(_role_seed(master_seed, "data").generate_state(1)[0])
    kind = ds["kind"]
    if kind == "blobs":
        per_class = -(-total // int(ds["classes"]))  # ceil
        full = make_blobs(
            dim=int(ds["dim"]),
            classes=int(ds["classes"]),
            per_class=per_class,
            noise=float(ds["noise"]),
            center_scale=float(ds["center_scale"]),
            seed=data_seed,
        )
    elif kind == "spirals":
        per_class = -(-total // 2)
        full = make_spirals(
            per_class=per_class,
            noise=float(ds["noise"]),
            dim=int(ds["dim"]),
            seed=data_seed,
        )
    elif kind == "csv":
        if not ds.get("path"):
            raise ValueError("dataset.kind=csv requires dataset.path")
        full = load_csv(ds["path"])
        if full.m < total:
            raise ValueError(f"csv has {full.m} rows, config needs {total}")
    else:
        raise ValueError(f"unknown dataset kind {kind!r}")
    splits = split_dataset(full, sizes, seed=data_seed)
    return splits[0], splits[1], (splits[2] if poison_size > 0 else None)


def _model_shape(config: dict, input_dim: int, classes: int):
    hidden = [int(h) for h in config["model"]["hidden"]]
    widths = [input_dim, *hidden, classes]
    return tuple((widths[i], widths[i + 1]) for i in range(len(widths) - 1))


# -- train ---------------------------------------------------------------------


def cmd_train(args) -> int:
    file_cfg = load_config(args.config) if args.config else {}
    config = merge_config(DEFAULT_CONFIG, file_cfg)
    master_seed = _resolve_seed(args.seed, config.get("seed"))
    config["seed"] = master_seed

    train_ds, val_ds, poison_ds = _build_datasets(config, master_seed)
    classes = int(config["dataset"]["classes"]) if config["dataset"]["kind"] != "csv" else train_ds.num_classes
    shape = _model_shape(config, train_ds.dim, classes)
    init_rng = np.random.default_rng(_role_seed(master_seed, "init"))
    params, measure = init_params(shape, config["model"]["init"], init_rng)

    tr = config["train"]
    poison = None
    if poison_ds is not None and float(tr["poison_alpha"]) > 0:
        poison = PoisonConfig(dataset=poison_ds, alpha=float(tr["poison_alpha"]))
    train_seed = int(_role_seed(master_seed, "train").generate_state(1)[0])
    train_cfg = TrainConfig(
        epochs=int(tr["epochs"]),
        batch_size=int(tr["batch_size"]),
        seed=train_seed,
        hyper=AdamHyper(
            lr=float(tr["lr"]),
            beta1=float(tr["beta1"]),
            beta2=float(tr["beta2"]),
            adam_eps=float(tr["adam_eps"]),
        ),
        checkpoint_every=int(tr["checkpoint_every"]),
        poison=poison,
    )
    result = adam_train(params, train_ds, train_cfg, val_dataset=val_ds)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for ckpt_params, adam_state, step in zip(result.checkpoints, result.adam_states, result.steps):
        path = out_dir / f"checkpoint_step{step:06d}.json"
        save_checkpoint(
            path,
            Checkpoint(params=ckpt_params, adam=adam_state, sigma=measure.sigma, step=step, config=config),
        )
        paths.append(path)
    metrics_path = out_dir / "metrics.csv"
    fields = sorted({key for row in result.metrics for key in row})
    fields = ["step"] + [f for f in fields if f != "step"]
    write_sweep_csv(metrics_path, list(result.metrics), fields)

    final = result.metrics[-1]
    print(f"trained {len(result.steps)} checkpoints -> {out_dir}")
    print(
        "final step {step}: train_loss={train_loss:.4f}".format(**final)
        + (" val_loss={val_loss:.4f}".format(**final) if "val_loss" in final else "")
        + (" poison_loss={poison_loss:.4f}".format(**final) if "poison_loss" in final else "")
    )
    return 0


# -- estimate ------------------------------------------------------------------


def _build_cost(args_cost: str, ckpt, train_ds, val_ds):
    """Return (cost handle, data payload for curvature probes)."""
    if args_cost == "kl":
        cost = make_kl_cost(ckpt.params, val_ds.inputs)
        return cost, (ckpt.params, val_ds.inputs)
    if args_cost == "loss":
        cost = make_loss_cost(ckpt.params.shape, train_ds)
        return cost, train_ds
    raise ValueError(f"unknown cost {args_cost!r}")


def _build_preconditioner(name, ckpt, cost_kind, data, eps, exponent, fd_step):
    if name == "none":
        return Preconditioner.identity(ckpt.params.n)
    eps = DEFAULT_EPS[name] if eps is None else float(eps)
    if name == "hessian":
        hess = hessian_full(cost_kind, ckpt.params, data, h=fd_step)
        return from_hessian(hess, eps, source="hessian")
    if name == "diag":
        diag = hessian_diag(cost_kind, ckpt.params, data, h=fd_step)
        return from_diagonal(diag, eps, exponent, source="diag")
    if name == "adam-nu":
        return from_diagonal(ckpt.adam.nu, eps, exponent, source="adam-nu")
    if name == "adam-mu":
        return from_diagonal(np.abs(ckpt.adam.mu), eps, exponent, source="adam-mu")
    raise ValueError(f"unknown preconditioner {name!r}")


def _estimate_once(args, ckpt, cutoff, precond_name, eps, seed):
    config = ckpt.config
    train_ds, val_ds, _ = _build_datasets(config, int(config["seed"]))
    cost, data = _build_cost(args.cost, ckpt, train_ds, val_ds)
    if args.precond_file:
        precond = Preconditioner.load(args.precond_file)
    else:
        precond = _build_preconditioner(
            precond_name, ckpt, args.cost, data, eps, args.exponent, args.fd_step
        )
    measure = (
        MeasureSpec.gaussian(ckpt.sigma) if args.measure == "gaussian" else MeasureSpec.lebesgue()
    )
    spec = NeighborhoodSpec(anchor=ckpt.params.flat, cost=cost, cutoff=cutoff, measure=measure)
    opts = SearchOptions(
        r_init=args.r_init,
        r_max=args.r_max,
        rel_tol=args.rel_tol,
        max_iters=args.max_iters,
        threads=args.threads,
    )
    estimate = estimate_local_volume(spec, precond, args.k, opts, seed)
    return estimate, precond


def cmd_estimate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    seed = _resolve_seed(args.seed)
    start = time.perf_counter()
    estimate, precond = _estimate_once(args, ckpt, args.cutoff, args.preconditioner, args.eps, seed)
    wall = time.perf_counter() - start

    resolved = {
        "checkpoint": str(args.checkpoint),
        "cost": args.cost,
        "cutoff": args.cutoff,
        "k": args.k,
        "preconditioner": args.preconditioner,
        "eps": DEFAULT_EPS[args.preconditioner] if args.eps is None else args.eps,
        "exponent": args.exponent,
        "measure": args.measure,
        "threads": args.threads,
        "r_init": args.r_init,
        "r_max": args.r_max,
        "rel_tol": args.rel_tol,
        "max_iters": args.max_iters,
        "fd_step": args.fd_step,
        "precond_file": args.precond_file,
    }
    record = make_run_record("estimate", seed, resolved, estimate, wall)
    out = Path(args.out)
    write_jsonl(out, record)
    write_samples_csv(out.with_suffix(".samples.csv"), estimate)
    if args.save_precond:
        precond.save(args.save_precond)

    bound = " (lower bound: truncated rays)" if estimate.lower_bound_only else ""
    print(
        f"log_volume={estimate.log_volume:.6f} log10={estimate.log10_volume:.4f} "
        f"k={estimate.k} n={estimate.n} measure={estimate.measure.kind} "
        f"preconditioner={estimate.preconditioner_id} truncated={estimate.truncated_count} "
        f"failed={estimate.failed_count}{bound}"
    )
    return 0


# -- sweep ---------------------------------------------------------------------

SWEEP_FIELDS = [
    "kind",
    "value",
    "n",
    "k",
    "cutoff",
    "measure",
    "preconditioner",
    "log_volume",
    "log10_volume",
    "truncated_count",
    "failed_count",
    "status",
]


def _quadratic_estimate(n, cutoff, k, seed, threads):
    anchor = np.zeros(n)

    def cost(x: np.ndarray) -> float:
        return 0.5 * float(np.dot(x, x))

    spec = NeighborhoodSpec(anchor=anchor, cost=cost, cutoff=cutoff, measure=MeasureSpec.lebesgue())
    return estimate_local_volume(
        spec, Preconditioner.identity(n), k, SearchOptions(threads=threads), seed
    )


def cmd_sweep(args) -> int:
    seed = _resolve_seed(args.seed)
    rows = []
    summary: dict = {"kind": args.kind, "seed": seed}

    def add_row(value, estimate, status="ok"):
        if estimate is None:
            rows.append(
                {
                    "kind": args.kind,
                    "value": value,
                    "n": "",
                    "k": args.k,
                    "cutoff": args.cutoff,
                    "measure": args.measure,
                    "preconditioner": args.preconditioner,
                    "log_volume": "",
                    "log10_volume": "",
                    "truncated_count": "",
                    "failed_count": "",
                    "status": status,
                }
            )
            return
        rows.append(
            {
                "kind": args.kind,
                "value": value,
                "n": estimate.n,
                "k": estimate.k,
                "cutoff": estimate.cutoff,
                "measure": estimate.measure.kind,
                "preconditioner": estimate.preconditioner_id,
                "log_volume": repr(estimate.log_volume),
                "log10_volume": repr(estimate.log10_volume),
                "truncated_count": estimate.truncated_count,
                "failed_count": estimate.failed_count,
                "status": status,
            }
        )

    if args.kind == "cutoff":
        values = [float(v) for v in args.values.split(",")]
        points = []
        for cutoff in values:
            try:
                if args.target == "quadratic":
                    est = _quadratic_estimate(args.n, cutoff, args.k, seed, args.threads)
                else:
                    ckpt = load_checkpoint(args.checkpoint)
                    est, _ = _estimate_once(args, ckpt, cutoff, args.preconditioner, args.eps, seed)
                add_row(cutoff, est)
                points.append((math.log(cutoff), est.log_volume))
            except (EstimationError, CostEvaluationError, PreconditionerError) as exc:
                add_row(cutoff, None, status=f"failed: {exc}")
        if len(points) >= 2:
            xs, ys = zip(*points)
            slope = float(np.polyfit(xs, ys, 1)[0])
            summary["log_log_slope"] = slope
            print(f"fitted log-log slope of volume vs cutoff: {slope:.4f}")
    elif args.kind == "checkpoint":
        paths = [p for p in args.checkpoints.split(",") if p]
        loaded = sorted(((load_checkpoint(p), p) for p in paths), key=lambda cp: cp[0].step)
        for ckpt, path in loaded:
            try:
                est, _ = _estimate_once(args, ckpt, args.cutoff, args.preconditioner, args.eps, seed)
                add_row(ckpt.step, est)
            except (EstimationError, CostEvaluationError, PreconditionerError) as exc:
                add_row(ckpt.step, None, status=f"failed: {exc}")
    elif args.kind == "preconditioner":
        names = [v for v in args.values.split(",") if v]
        ckpt = load_checkpoint(args.checkpoint)
        for name in names:
            if name not in PRECONDITIONER_CHOICES:
                add_row(name, None, status="failed: unknown preconditioner")
                continue
            try:
                est, _ = _estimate_once(args, ckpt, args.cutoff, name, args.eps, seed)
                add_row(name, est)
            except (EstimationError, CostEvaluationError, PreconditionerError) as exc:
                add_row(name, None, status=f"failed: {exc}")
    elif args.kind == "eps":
        values = [float(v) for v in args.values.split(",")]
        ckpt = load_checkpoint(args.checkpoint)
        best = None
        for eps in values:
            try:
                est, _ = _estimate_once(args, ckpt, args.cutoff, args.preconditioner, eps, seed)
                add_row(eps, est)
                if best is None or est.log_volume > best[1]:
                    best = (eps, est.log_volume)
            except (EstimationError, CostEvaluationError, PreconditionerError) as exc:
                add_row(eps, None, status=f"failed: {exc}")
        if best is not None:
            summary["best_eps"] = best[0]
            summary["best_log_volume"] = best[1]
            print(f"largest estimate at eps={best[0]} (log_volume={best[1]:.4f})")
    else:
        raise ValueError(f"unknown sweep kind {args.kind!r}")

    out = Path(args.out)
    write_sweep_csv(out, rows, SWEEP_FIELDS)
    if len(summary) > 2:
        import json

        out.with_suffix(".summary.json").write_text(json.dumps(summary, sort_keys=True))
    print(f"{len(rows)} sweep rows -> {out}")
    return 0


# -- validate --------------------------------------------------------------------


def cmd_validate(args) -> int:
    from .oracles import run_suite

    results = run_suite(args.suite, seed=_resolve_seed(args.seed))
    width = max(len(r.name) for r in results)
    failures = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        if not r.passed:
            failures += 1
        line = (
            f"[{status}] {r.suite:<10} {r.name:<{width}} "
            f"predicted={r.predicted:+.6e} empirical={r.empirical:+.6e} tol={r.tolerance:.3e}"
        )
        if r.note:
            line += f"  ({r.note})"
        print(line)
    print(f"{len(results) - failures}/{len(results)} checks passed")
    if args.out:
        import json

        payload = [r.__dict__ for r in results]
        Path(args.out).write_text(json.dumps(payload, sort_keys=True, default=float))
    return 1 if failures else 0


# -- mdl -------------------------------------------------------------------------


def cmd_mdl(args) -> int:
    from .geometry import VolumeEstimate

    ckpt = load_checkpoint(args.checkpoint)
    records = read_jsonl(args.record)
    if not records:
        raise ValueError(f"no records in {args.record}")
    record = records[-1]
    if record.get("measure") != "lebesgue":
        print("error: description length requires a Lebesgue volume record", file=sys.stderr)
        return 2
    estimate = VolumeEstimate(
        log_volume=float(record["log_volume"]),
        samples=(),
        k=int(record["k"]),
        n=int(record["n"]),
        preconditioner_id=str(record.get("preconditioner", "")),
        measure=MeasureSpec.lebesgue(),
        cutoff=float(record["cutoff"]),
        truncated_count=int(record.get("truncated_count", 0)),
        failed_count=int(record.get("failed_count", 0)),
    )
    config = ckpt.config
    train_ds, _, _ = _build_datasets(config, int(config["seed"]))
    prior = MeasureSpec.gaussian(ckpt.sigma)
    dl = description_length(estimate, ckpt.params, prior, train_ds)
    payload = {
        "kl_term": dl.kl_term,
        "data_term": dl.data_term,
        "total": dl.total,
        "log_volume": estimate.log_volume,
        "n": estimate.n,
        "checkpoint": str(args.checkpoint),
    }
    import json

    Path(args.out).write_text(json.dumps(payload, sort_keys=True))
    print(f"kl_term={dl.kl_term:.4f} data_term={dl.data_term:.4f} total={dl.total:.4f} nats")
    return 0


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="starvol",
        description="Local volume estimation for star-domain neighborhoods in parameter space.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_seed(p):
        p.add_argument("--seed", type=int, default=None, help="master seed (default: STARVOL_SEED or 0)")

    p_train = sub.add_parser("train", help="train the tiny classifier and write checkpoints")
    p_train.add_argument("--config", type=str, default=None, help="JSON config file")
    p_train.add_argument("--out", type=str, default="runs/train", help="checkpoint directory")
    add_seed(p_train)
    p_train.set_defaults(func=cmd_train)

    p_est = sub.add_parser("estimate", help="estimate a checkpoint's local volume")
    p_est.add_argument("--checkpoint", type=str, required=True)
    p_est.add_argument("--cost", choices=("kl", "loss"), default="kl")
    p_est.add_argument("--cutoff", type=float, default=1e-2)
    p_est.add_argument("--k", type=int, default=100)
    p_est.add_argument("--preconditioner", choices=PRECONDITIONER_CHOICES, default="none")
    p_est.add_argument("--eps", type=float, default=None, help="damping (default depends on kind)")
    p_est.add_argument("--exponent", type=float, default=0.5)
    p_est.add_argument("--measure", choices=("lebesgue", "gaussian"), default="gaussian")
    p_est.add_argument("--threads", type=int, default=1)
    p_est.add_argument("--out", type=str, default="runs.jsonl")
    p_est.add_argument("--r-init", type=float, default=1.0)
    p_est.add_argument("--r-max", type=float, default=None)
    p_est.add_argument("--rel-tol", type=float, default=1e-4)
    p_est.add_argument("--max-iters", type=int, default=500)
    p_est.add_argument("--fd-step", type=float, default=1e-3)
    p_est.add_argument("--precond-file", type=str, default=None, help="load a saved preconditioner")
    p_est.add_argument("--save-precond", type=str, default=None, help="save the preconditioner used")
    add_seed(p_est)
    p_est.set_defaults(func=cmd_estimate)

    p_sweep = sub.add_parser("sweep", help="sweep cutoff, checkpoints, preconditioners, or eps")
    p_sweep.add_argument("--kind", choices=("cutoff", "checkpoint", "preconditioner", "eps"), required=True)
    p_sweep.add_argument("--values", type=str, default="", help="comma-separated sweep values")
    p_sweep.add_argument("--checkpoint", type=str, default=None)
    p_sweep.add_argument("--checkpoints", type=str, default="", help="comma-separated checkpoint files")
    p_sweep.add_argument("--target", choices=("checkpoint", "quadratic"), default="checkpoint")
    p_sweep.add_argument("--n", type=int, default=100, help="dimension for --target quadratic")
    p_sweep.add_argument("--cost", choices=("kl", "loss"), default="kl")
    p_sweep.add_argument("--cutoff", type=float, default=1e-2)
    p_sweep.add_argument("--k", type=int, default=100)
    p_sweep.add_argument("--preconditioner", choices=PRECONDITIONER_CHOICES, default="none")
    p_sweep.add_argument("--eps", type=float, default=None)
    p_sweep.add_argument("--exponent", type=float, default=0.5)
    p_sweep.add_argument("--measure", choices=("lebesgue", "gaussian"), default="gaussian")
    p_sweep.add_argument("--threads", type=int, default=1)
    p_sweep.add_argument("--out", type=str, default="sweep.csv")
    p_sweep.add_argument("--r-init", type=float, default=1.0)
    p_sweep.add_argument("--r-max", type=float, default=None)
    p_sweep.add_argument("--rel-tol", type=float, default=1e-4)
    p_sweep.add_argument("--max-iters", type=int, default=500)
    p_sweep.add_argument("--fd-step", type=float, default=1e-3)
    p_sweep.add_argument("--precond-file", type=str, default=None)
    add_seed(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    p_val = sub.add_parser("validate", help="run the closed-form self-check suites")
    p_val.add_argument("--suite", choices=("ellipsoid", "variance", "bounds", "gdflow", "all"), default="all")
    p_val.add_argument("--out", type=str, default=None, help="optional JSON report path")
    add_seed(p_val)
    p_val.set_defaults(func=cmd_validate)

    p_mdl = sub.add_parser("mdl", help="two-part description length from a Lebesgue volume record")
    p_mdl.add_argument("--checkpoint", type=str, required=True)
    p_mdl.add_argument("--record", type=str, required=True, help="JSON Lines file from estimate")
    p_mdl.add_argument("--out", type=str, default="mdl.json")
    add_seed(p_mdl)
    p_mdl.set_defaults(func=cmd_mdl)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, EstimationError, CostEvaluationError, PreconditionerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
