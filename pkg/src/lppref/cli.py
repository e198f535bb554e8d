"""Command-line entry point.

Subcommands::

    lppref gen-data  --config cfg.json --out DIR
    lppref train     --config cfg.json --mode plain|ldp --out DIR
    lppref sweep     --config cfg.json --axis time|epsilon|unknown-rate --out DIR
    lppref report    DIR

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 divergence.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import PROFILES, ConfigError, dump_config, experiment_params, load_config, noise_config
from .dataset import Corpus, read_checkins, read_prefs, synth_generate, write_checkins, write_matrix, write_prefs
from .evaluation import AXES, METRICS, curve_rows, format_table, read_curve_csv, sweep, write_curve_csv
from .exceptions import (
    CategoryMappingError,
    CoverageError,
    DivergenceError,
    EmptyDataError,
    InvalidArgumentError,
)
from .federated import train, write_diagnostics
from .mf import fit_gd, init_model, loss, residuals

logger = logging.getLogger("lppref")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGENCE = 0, 1, 2, 3

_SEED_ROLES = ("data", "init", "noise", "eval")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _seeds(seed):
    return dict(zip(_SEED_ROLES, np.random.SeedSequence(seed).spawn(len(_SEED_ROLES))))


def _out_dir(args, cfg):
    out = Path(args.out or cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args, need_files=True):
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    cfg = load_config(args.config, overrides, need_files=need_files)
    if getattr(args, "profile", None):
        cfg["eval"]["repetitions"] = PROFILES[args.profile]
    return cfg


def _generate(cfg):
    d = cfg["data"]
    if d["m_users"] < 1:
        raise EmptyDataError("data.m_users must be at least 1 to generate a corpus")
    return synth_generate(
        d["m_users"],
        granularity=d["granularity"],
        density=d["density"],
        seed=_seeds(cfg["seed"])["data"],
        n_pref_users=d["n_pref_users"],
        truth_hours=d["truth_hours"],
        rank=d["rank"],
    )


def load_corpus(cfg):
    d = cfg["data"]
    if d["source"] == "csv":
        return Corpus(tuple(read_checkins(d["checkins"])), tuple(read_prefs(d["prefs"])))
    return Corpus(*map(tuple, _generate(cfg)))


def cmd_gen_data(cfg, out):
    checkins, prefs = _generate(cfg)
    write_checkins(out / "checkins.csv", checkins)
    write_prefs(out / "prefs.csv", prefs)
    dump_config(cfg, out / "config.json")
    print(f"wrote {len(checkins)} check-ins and {len(prefs)} preference records to {out}")
    return EXIT_OK


def cmd_train(cfg, out, mode):
    seeds = _seeds(cfg["seed"])
    corpus = load_corpus(cfg)
    R = corpus.to_matrix(cfg["data"]["granularity"], seed=seeds["data"])
    m = cfg["model"]
    model = init_model(
        R.n_users,
        R.n_items,
        m["d"],
        seed=seeds["init"],
        scale=m["init_scale"],
        lambda_u=m["lambda_u"],
        lambda_v=m["lambda_v"],
        gamma0=m["gamma0"],
        decay=m["decay"],
        k=m["k"],
        normalization=m["normalization"] if mode == "plain" else "users",
        max_norm=m["max_norm"],
    )
    noise = noise_config(cfg)
    if mode == "plain":
        diagnostics = []
        c = R.n_users if model.normalization == "users" else R.n_ratings
        prev_V = [model.V]

        def record(t, current):
            # item gradient at the updated U and round-start V, as the server sees it
            gV = -(2.0 / c) * (current.U @ residuals(R, current.with_factors(current.U, prev_V[0])))
            prev_V[0] = current.V
            diagnostics.append(
                {
                    "round": t + 1,
                    "mean_aggregate_norm": float(np.mean(np.linalg.norm(gV, axis=0))),
                    "loss_if_noiseless_mode": loss(R, current),
                }
            )

        final = fit_gd(R, model, record)
    else:
        result = train(R, model, noise, seed=seeds["noise"])
        final, diagnostics = result.model, result.diagnostics
    final_loss = loss(R, final)
    np.savez(
        out / "model.npz",
        U=final.U,
        V=final.V,
        user_ids=np.array(R.user_ids),
        item_labels=np.array(R.item_labels),
    )
    write_diagnostics(out / "diagnostics.csv", diagnostics)
    write_matrix(out / "matrix.csv", R)
    dump_config(cfg, out / "config.json")
    summary = {
        "mode": mode,
        "rounds": final.k,
        "n_users": R.n_users,
        "n_items": R.n_items,
        "n_ratings": R.n_ratings,
        "final_loss": final_loss,
        "epsilon_per_round": None if mode == "plain" else noise.epsilon,
        "epsilon_total": None if mode == "plain" else noise.total_budget(final.k),
    }
    with open(out / "train_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    print(f"{mode} training: {final.k} rounds, final loss {final_loss:.12g}")
    return EXIT_OK


def _value_dir_name(value):
    return f"{value:g}" if isinstance(value, float) else str(value)


def _write_raw(path, plain, ldp):
    with open(path, "w") as fh:
        fh.write("repetition,mode," + ",".join(METRICS) + "\n")
        for rep in (plain, ldp):
            for r in range(rep.repetitions):
                vals = ["" if rep.raw[k][r] is None else f"{rep.raw[k][r]:.6g}" for k in METRICS]
                fh.write(f"{r},{rep.mode}," + ",".join(vals) + "\n")


def cmd_sweep(cfg, out, axis, n_jobs=1):
    seeds = _seeds(cfg["seed"])
    values = cfg["eval"]["sweeps"][axis]
    corpus = load_corpus(cfg)
    reps = cfg["eval"]["repetitions"]
    results = {}
    for mode in ("plain", "ldp"):
        results[mode] = sweep(
            corpus,
            axis,
            values,
            experiment_params(cfg, mode),
            repetitions=reps,
            seed=seeds["eval"],
            n_jobs=n_jobs,
        )
    axis_dir = out / axis
    axis_dir.mkdir(parents=True, exist_ok=True)
    for v, p, q in zip(values, results["plain"], results["ldp"]):
        vdir = axis_dir / _value_dir_name(v)
        vdir.mkdir(exist_ok=True)
        snapshot = copy.deepcopy(cfg)
        snapshot["eval"]["fixed"][axis] = v
        dump_config(snapshot, vdir / "config.json")
        _write_raw(vdir / "raw.csv", p, q)
    rows = curve_rows(axis, results["plain"], results["ldp"])
    write_curve_csv(axis_dir / "curve.csv", rows)
    table = format_table(read_curve_csv(axis_dir / "curve.csv"), title=f"sweep over {axis}")
    (axis_dir / "curve.txt").write_text(table + "\n")
    print(table)
    return EXIT_OK


def cmd_report(results_dir):
    root = Path(results_dir)
    curves = [root / axis / "curve.csv" for axis in AXES if (root / axis / "curve.csv").is_file()]
    if not curves:
        print(f"no results in {root}", file=sys.stderr)
        return EXIT_DATA
    blocks = [format_table(read_curve_csv(p), title=f"sweep over {p.parent.name}") for p in curves]
    print("\n\n".join(blocks))
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="lppref", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out=True):
        p.add_argument("--config", metavar="PATH", help="JSON experiment config")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        if out:
            p.add_argument("--out", metavar="DIR", help="output directory (overrides config)")

    p = sub.add_parser("gen-data", help="write synthetic checkins.csv and prefs.csv")
    common(p)
    p = sub.add_parser("train", help="train one model and write factors and diagnostics")
    common(p)
    p.add_argument("--mode", choices=("plain", "ldp"), default="ldp")
    p = sub.add_parser("sweep", help="evaluate plain and LDP MF along one axis")
    common(p)
    p.add_argument("--axis", choices=("time", "epsilon", "unknown-rate"), required=True)
    p.add_argument("--threads", type=int, default=1, metavar="INT", help="parallel repetitions")
    p.add_argument("--profile", choices=tuple(PROFILES), help="ci: 10 repetitions, full: 100")
    p = sub.add_parser("report", help="print every metric curve under a results directory")
    p.add_argument("results", metavar="DIR")
    return parser


def _dispatch(args):
    if args.command == "report":
        return cmd_report(args.results)
    cfg = _load(args, need_files=args.command != "gen-data")
    if args.command == "sweep" and args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    out = _out_dir(args, cfg)
    if args.command == "gen-data":
        return cmd_gen_data(cfg, out)
    if args.command == "train":
        return cmd_train(cfg, out, args.mode)
    return cmd_sweep(cfg, out, args.axis.replace("-", "_"), n_jobs=args.threads)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        # overflow is detected explicitly and surfaces as DivergenceError
        with np.errstate(over="ignore", invalid="ignore"):
            return _dispatch(args)
    except ConfigError as exc:
        print(f"lppref: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"lppref: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_DATA
    except (EmptyDataError, CoverageError, CategoryMappingError, InvalidArgumentError) as exc:
        print(f"lppref: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"lppref: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
