"""Command-line entry point.

Subcommands: train, ablate, sweep-k, attack, verify, fmt-check. Options
resolve as defaults < preset < TOML config < flags; every run directory
gets a manifest (resolved config, its hash, library versions) sufficient
to replay the run. Exit codes: 0 success, 1 numerical failure, 2 input
error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import multiprocessing
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .attacks import robustness_sweep
from .attacks import sweep_to_csv as attack_csv
from .datasets import load_canonical, synthetic_sbm
from .errors import GrandError, InvalidParam, IoError, NumericalError
from .metrics import oversmoothing_sweep, sweep_to_csv
from .rng import Rng
from .sparse import build_adjacency, sym_normalize
from .theory import make_binary_setting, mc_theorem1, mc_theorem2
from .trainer import Hyperparams, evaluate, fit, predict, run_summary

# Benchmark hyperparameter presets (batch norm only for pubmed).
PRESETS = {
    "cora": dict(prop_steps=8, n_augment=4, drop_rate=0.5, temperature=0.5,
                 consistency_weight=1.0, lr=0.01, patience=200, hidden=32,
                 weight_decay=5e-4, dropout_input=0.5, dropout_hidden=0.5,
                 use_bn=False),
    "citeseer": dict(prop_steps=2, n_augment=2, drop_rate=0.5, temperature=0.3,
                     consistency_weight=0.7, lr=0.01, patience=200, hidden=32,
                     weight_decay=5e-4, dropout_input=0.0, dropout_hidden=0.2,
                     use_bn=False),
    "pubmed": dict(prop_steps=5, n_augment=4, drop_rate=0.5, temperature=0.2,
                   consistency_weight=1.0, lr=0.2, patience=100, hidden=32,
                   weight_decay=5e-4, dropout_input=0.6, dropout_hidden=0.8,
                   use_bn=True),
}

_HP_KEYS = set(Hyperparams().to_dict())
_RUN_KEYS = {"dataset", "out", "preset", "seeds", "jobs", "k_values", "rates",
             "n_samples", "w_scales", "n_pairs"}

ABLATION_VARIANTS = {
    "full": {},
    "no_consistency": {"consistency_weight": 0.0},
    "single_augmentation": {"n_augment": 1},
    "no_sharpening": {"temperature": 1.0},
    "no_consistency_no_drop": {"consistency_weight": 0.0, "drop_rate": 0.0},
}


def _limit_threads():
    cap = os.environ.get("GRAND_THREADS")
    if not cap:
        return
    try:
        n = int(cap)
        import threadpoolctl
        threadpoolctl.threadpool_limits(limits=n)
    except (ImportError, ValueError):
        print(f"warning: could not apply GRAND_THREADS={cap}", file=sys.stderr)
        return
    try:
        import numba
        numba.set_num_threads(n)
    except ImportError:
        pass


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise IoError(f"config file {path} not found")
    with open(p, "rb") as f:
        doc = tomllib.load(f)
    flat = dict(doc)
    hp = flat.pop("hyperparams", {})
    unknown = (set(flat) - _RUN_KEYS) | (set(hp) - _HP_KEYS)
    if unknown:
        raise InvalidParam(f"unknown config keys: {sorted(unknown)}")
    flat.update(hp)
    return flat


def _resolve(args, extra_run_keys=()) -> tuple[Hyperparams, dict]:
    """Merge defaults, preset, config file, and flags into one config."""
    merged: dict = {}
    if args.preset:
        if args.preset not in PRESETS:
            raise InvalidParam(f"unknown preset {args.preset!r}")
        merged.update(PRESETS[args.preset])
    merged.update(_load_config(args.config))
    for key in _HP_KEYS | set(extra_run_keys) | {"dataset", "out", "seeds", "jobs"}:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    hp_kwargs = {k: v for k, v in merged.items() if k in _HP_KEYS}
    run = {k: v for k, v in merged.items() if k not in _HP_KEYS}
    run.setdefault("seeds", 1)
    run.setdefault("jobs", 1)
    return Hyperparams(**hp_kwargs), run


def _require_dataset(run: dict):
    path = run.get("dataset")
    if not path:
        raise InvalidParam("--dataset is required")
    return load_canonical(path)


def _out_dir(run: dict) -> Path:
    out = Path(run.get("out") or "runs/latest")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, hp: Hyperparams, run: dict, command: str) -> None:
    config = {"command": command, "hyperparams": hp.to_dict(),
              "run": {k: str(v) if isinstance(v, Path) else v for k, v in run.items()}}
    blob = json.dumps(config, sort_keys=True).encode()
    manifest = {
        "config": config,
        "config_hash": hashlib.sha256(blob).hexdigest(),
        "versions": {"grand": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__,
                     "python": sys.version.split()[0]},
        "grand_threads": os.environ.get("GRAND_THREADS"),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))


def _train_one(dataset, hp: Hyperparams) -> tuple[dict, "TrainLog"]:
    t0 = time.perf_counter()
    params, log = fit(dataset, hp)
    a_hat = sym_normalize(dataset.adjacency)
    probs = predict(params, a_hat, dataset.features, hp.prop_steps)
    acc = evaluate(probs, dataset.labels, dataset.masks["test"])
    return run_summary(log, acc, hp, time.perf_counter() - t0), log


def _train_seed(job):
    dataset, hp = job
    return _train_one(dataset, hp)


def _run_seeds(dataset, hp: Hyperparams, n_seeds: int, jobs: int,
               out: Path | None) -> list[dict]:
    jobs_list = [(dataset, replace(hp, seed=hp.seed + i)) for i in range(n_seeds)]
    if jobs > 1:
        # Spawned workers: the jitted kernels' thread pool does not
        # survive a fork.
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as pool:
            results = list(pool.map(_train_seed, jobs_list))
    else:
        results = [_train_seed(j) for j in jobs_list]
    summaries = []
    for (summary, log), (_, run_hp) in zip(results, jobs_list):
        summaries.append(summary)
        if out is not None:
            log.to_csv(out / f"epochs_{run_hp.seed}.csv")
    return summaries


def _aggregate(summaries: list[dict]) -> dict:
    accs = np.array([s["test_acc"] for s in summaries])
    return {"n_seeds": len(summaries),
            "mean_test_acc": float(accs.mean()),
            "std_test_acc": float(accs.std()),
            "seeds": [s["seed"] for s in summaries]}


def cmd_train(args) -> int:
    hp, run = _resolve(args)
    dataset = _require_dataset(run)
    out = _out_dir(run)
    _write_manifest(out, hp, run, "train")
    summaries = _run_seeds(dataset, hp, run["seeds"], run["jobs"], out)
    (out / "summary.json").write_text(json.dumps({"runs": summaries}, indent=2))
    agg = _aggregate(summaries)
    (out / "aggregate.json").write_text(json.dumps(agg, indent=2))
    print(f"test accuracy over {agg['n_seeds']} seed(s): "
          f"{agg['mean_test_acc']:.4f} +- {agg['std_test_acc']:.4f}")
    return 0


def cmd_ablate(args) -> int:
    hp, run = _resolve(args)
    dataset = _require_dataset(run)
    out = _out_dir(run)
    _write_manifest(out, hp, run, "ablate")
    table = {}
    for name, overrides in ABLATION_VARIANTS.items():
        variant_hp = replace(hp, **overrides)
        summaries = _run_seeds(dataset, variant_hp, run["seeds"], run["jobs"], None)
        table[name] = _aggregate(summaries)
        print(f"{name:28s} {table[name]['mean_test_acc']:.4f} "
              f"+- {table[name]['std_test_acc']:.4f}")
    (out / "ablation.json").write_text(json.dumps(table, indent=2))
    return 0


def cmd_sweep_k(args) -> int:
    hp, run = _resolve(args, extra_run_keys=("k_values", "n_pairs"))
    dataset = _require_dataset(run)
    out = _out_dir(run)
    _write_manifest(out, hp, run, "sweep-k")
    k_values = run.get("k_values") or [2, 4, 8]
    seeds = [hp.seed + i for i in range(run["seeds"])]
    rows = oversmoothing_sweep(dataset, hp, k_values, seeds,
                               n_pairs=run.get("n_pairs") or 100_000)
    sweep_to_csv(rows, out / "oversmoothing.csv")
    for r in rows:
        print(f"K={r['k']} seed={r['seed']} acc={r['test_acc']:.4f} "
              f"gap={r['madgap']:.4f}")
    return 0


def cmd_attack(args) -> int:
    hp, run = _resolve(args, extra_run_keys=("rates",))
    dataset = _require_dataset(run)
    out = _out_dir(run)
    _write_manifest(out, hp, run, "attack")
    rates = run.get("rates") or [0.0, 0.02, 0.04, 0.06, 0.08, 0.10]
    seeds = [hp.seed + i for i in range(run["seeds"])]
    rows = robustness_sweep(dataset, hp, rates, seeds)
    attack_csv(rows, out / "robustness.csv")
    for rate in rates:
        accs = [r["test_acc"] for r in rows if r["rate"] == rate]
        print(f"rate={rate:.2f} acc={np.mean(accs):.4f} +- {np.std(accs):.4f}")
    return 0


def cmd_verify(args) -> int:
    hp, run = _resolve(args, extra_run_keys=("n_samples", "w_scales"))
    out = _out_dir(run)
    _write_manifest(out, hp, run, "verify")
    n, d = args.n_nodes, args.n_features
    rng = Rng((hp.seed, 0x7E0))
    pairs = {(int(u), int(v)) for u, v in
             zip(rng.integers(0, n, 3 * n), rng.integers(0, n, 3 * n)) if u != v}
    a_hat = sym_normalize(build_adjacency(sorted(pairs), n))
    x = rng.normal((n, d))
    y = rng.bernoulli(0.5, n // 2)
    w_base = rng.normal(d)

    reports = []
    for w_scale in run.get("w_scales") or [0.3, 0.1, 0.03]:
        setting = make_binary_setting(a_hat, x, w_base * w_scale, y,
                                      hp.drop_rate, hp.prop_steps)
        n_samples = run.get("n_samples") or 100_000
        for fn in (mc_theorem1, mc_theorem2):
            rep = fn(setting, n_samples, rng.child(int(w_scale * 1e6)))
            rep["w_scale"] = w_scale
            reports.append(rep)
            print(f"theorem {rep['theorem']} w_scale={w_scale}: "
                  f"mc={rep['mc']:.3e} closed={rep['closed_form']:.3e} "
                  f"rel_error={rep['rel_error']:.3%}")
    (out / "verification.json").write_text(json.dumps(reports, indent=2))
    return 0


def cmd_fmt_check(args) -> int:
    dataset = load_canonical(args.dataset_dir)
    meta = dataset.meta
    print(f"{meta['name']}: n={meta['n']} d={meta['d']} C={meta['C']} "
          f"undirected_edges={dataset.adjacency.nnz // 2} "
          f"splits={len(dataset.masks['train'])}/{len(dataset.masks['val'])}"
          f"/{len(dataset.masks['test'])}")
    return 0


def _add_common(sub):
    sub.add_argument("--dataset", help="canonical dataset directory")
    sub.add_argument("--out", help="output directory")
    sub.add_argument("--config", help="TOML config file")
    sub.add_argument("--preset", choices=sorted(PRESETS))
    sub.add_argument("--seeds", type=int, help="number of seeds (default 1)")
    sub.add_argument("--jobs", type=int, help="parallel seed workers")
    sub.add_argument("--seed", type=int, help="base seed")
    sub.add_argument("--prop-steps", dest="prop_steps", type=int)
    sub.add_argument("--n-augment", dest="n_augment", type=int)
    sub.add_argument("--drop-rate", dest="drop_rate", type=float)
    sub.add_argument("--perturb", choices=["drop_node", "dropout", "drop_edge"])
    sub.add_argument("--temperature", type=float)
    sub.add_argument("--consistency-weight", dest="consistency_weight", type=float)
    sub.add_argument("--lr", type=float)
    sub.add_argument("--weight-decay", dest="weight_decay", type=float)
    sub.add_argument("--hidden", type=int)
    sub.add_argument("--dropout-input", dest="dropout_input", type=float)
    sub.add_argument("--dropout-hidden", dest="dropout_hidden", type=float)
    sub.add_argument("--use-bn", dest="use_bn", action="store_true", default=None)
    sub.add_argument("--no-bn", dest="use_bn", action="store_false", default=None)
    sub.add_argument("--patience", type=int)
    sub.add_argument("--max-epochs", dest="max_epochs", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="grand")
    subs = parser.add_subparsers(dest="command", required=True)

    for name, fn in (("train", cmd_train), ("ablate", cmd_ablate)):
        sub = subs.add_parser(name)
        _add_common(sub)
        sub.set_defaults(fn=fn)

    sweep = subs.add_parser("sweep-k")
    _add_common(sweep)
    sweep.add_argument("--k-values", dest="k_values", type=int, nargs="+")
    sweep.add_argument("--n-pairs", dest="n_pairs", type=int)
    sweep.set_defaults(fn=cmd_sweep_k)

    attack = subs.add_parser("attack")
    _add_common(attack)
    attack.add_argument("--rates", type=float, nargs="+")
    attack.set_defaults(fn=cmd_attack)

    verify = subs.add_parser("verify")
    _add_common(verify)
    verify.add_argument("--n-nodes", type=int, default=16)
    verify.add_argument("--n-features", type=int, default=4)
    verify.add_argument("--n-samples", dest="n_samples", type=int)
    verify.add_argument("--w-scales", dest="w_scales", type=float, nargs="+")
    verify.set_defaults(fn=cmd_verify)

    fmt = subs.add_parser("fmt-check")
    fmt.add_argument("dataset_dir")
    fmt.set_defaults(fn=cmd_fmt_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _limit_threads()
    try:
        return args.fn(args)
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 1
    except GrandError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
