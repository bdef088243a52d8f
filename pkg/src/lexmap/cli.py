"""Command-line surface: dataset generation, engine runs, evaluation, and
timing benchmarks over (variant, seed) cells."""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .core import Pose, read_records, rng_for, write_records
from .engine import VARIANTS, AlgorithmConfig, run
from .evaluation import (ari, delimited, ear, par, scalability_report,
                         format_report, select_word)
from .lexicon import Lexicon, LexiconParams
from .sim import (ALPHABET, ChannelModel, Environment, EnvironmentSpec,
                  EnvironmentSpecError, TrajectorySpec, default_home_spec,
                  generate_dataset, generate_environment)

EXIT_OK = 0
EXIT_SPEC = 2
EXIT_RUNTIME = 3


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------

def _channel_from_spec(obj: dict | None) -> ChannelModel:
    obj = obj or {}
    kind = obj.get("kind", "ring")
    p_sub = obj.get("p_sub", 0.05)
    p_ins = obj.get("p_ins", 0.02)
    p_del = obj.get("p_del", 0.02)
    if kind == "ring":
        return ChannelModel.ring(ALPHABET, p_sub, p_ins, p_del,
                                 width=obj.get("width", 2))
    if kind == "uniform":
        return ChannelModel.uniform(ALPHABET, p_sub, p_ins, p_del)
    raise EnvironmentSpecError(f"unknown channel kind {kind!r}")


def cmd_gen(args) -> int:
    spec_obj = {}
    if args.config:
        spec_obj = json.loads(Path(args.config).read_text())
    seed = args.seed if args.seed is not None else spec_obj.get("seed", 0)
    out = Path(args.out or spec_obj.get("out", "dataset"))

    if "rooms" in spec_obj:
        env_spec = EnvironmentSpec(
            room_sizes=tuple(tuple(r) for r in spec_obj["rooms"]),
            name_ids=tuple(spec_obj["name_ids"]) if "name_ids" in spec_obj else None,
            corridor_height=spec_obj.get("corridor_height", 2.2),
            door_width=spec_obj.get("door_width", 0.9),
        )
    else:
        env_spec = default_home_spec()
    teaching = args.teaching or spec_obj.get("teaching", 60)
    traj = TrajectorySpec(total_teaching=teaching,
                          **spec_obj.get("trajectory", {}))
    channel = _channel_from_spec(spec_obj.get("channel"))

    env = generate_environment(env_spec, rng_for(seed, 0, 0))
    records = generate_dataset(env, traj, channel, rng_for(seed, 0, 1))

    out.mkdir(parents=True, exist_ok=True)
    write_records(out / "dataset.jsonl", records)
    with open(out / "env.json", "w") as fh:
        json.dump(env.to_json(), fh, indent=1)
    with open(out / "meta.json", "w") as fh:
        json.dump({"channel": channel.to_json(), "seed": seed,
                   "teaching": teaching, "feature_dim": traj.feature_dim,
                   "feature_total": traj.feature_total}, fh, indent=1)
    print(f"wrote {len(records)} steps "
          f"({sum(r.is_teaching for r in records)} teaching) to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# run / bench
# ---------------------------------------------------------------------------

def _run_cell(dataset_dir: str, out_dir: str, config_json: dict,
              metrics_off: bool) -> str:
    dataset_dir = Path(dataset_dir)
    records = list(read_records(dataset_dir / "dataset.jsonl"))
    meta = json.loads((dataset_dir / "meta.json").read_text())
    channel = ChannelModel.from_json(meta["channel"])
    config = AlgorithmConfig.from_json(config_json)
    run(records, config, channel, out_dir=out_dir, metrics_off=metrics_off)
    return out_dir


def _resolve_cells(args) -> tuple[Path, Path, list[dict]]:
    spec_obj = {}
    if args.config:
        spec_obj = json.loads(Path(args.config).read_text())
    dataset = Path(args.dataset or spec_obj.get("dataset", "dataset"))
    out = Path(args.out or spec_obj.get("out", "runs"))
    variants = [args.variant] if args.variant else spec_obj.get("variants", ["improved_flr_rs"])
    seeds = [args.seed] if args.seed is not None else spec_obj.get("seeds", [0])
    meta = json.loads((dataset / "meta.json").read_text())
    base = spec_obj.get("algorithm", {})
    cells = []
    for variant in variants:
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        for seed in seeds:
            cfg = dict(base)
            cfg.update({"variant": variant, "seed": int(seed),
                        "feature_dim": meta["feature_dim"]})
            if args.particles:
                cfg["particles"] = args.particles
            if args.lag is not None:
                cfg["lag"] = args.lag
            cells.append(cfg)
    return dataset, out, cells


def _run_cells(args, metrics_off: bool) -> int:
    dataset, out, cells = _resolve_cells(args)
    jobs = max(1, args.jobs)
    results = []
    if jobs == 1:
        for cfg in cells:
            cell_dir = out / f"{cfg['variant']}__seed{cfg['seed']}"
            try:
                _run_cell(str(dataset), str(cell_dir), cfg, metrics_off)
            except Exception as exc:  # noqa: BLE001 - report failing cell
                print(f"cell {cell_dir.name} failed: {exc}", file=sys.stderr)
                return EXIT_RUNTIME
            results.append(cell_dir)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {}
            for cfg in cells:
                cell_dir = out / f"{cfg['variant']}__seed{cfg['seed']}"
                futures[pool.submit(_run_cell, str(dataset), str(cell_dir),
                                    cfg, metrics_off)] = cell_dir
            for fut, cell_dir in futures.items():
                try:
                    fut.result()
                except Exception as exc:  # noqa: BLE001
                    print(f"cell {cell_dir.name} failed: {exc}", file=sys.stderr)
                    return EXIT_RUNTIME
                results.append(cell_dir)
    for cell in sorted(results):
        print(f"cell done: {cell}")
    return EXIT_OK


def cmd_run(args) -> int:
    return _run_cells(args, metrics_off=False)


def cmd_bench(args) -> int:
    code = _run_cells(args, metrics_off=True)
    if code != EXIT_OK:
        return code
    _, out, cells = _resolve_cells(args)
    timings: dict[str, list[tuple[float, float]]] = {}
    for cfg in cells:
        cell_dir = out / f"{cfg['variant']}__seed{cfg['seed']}"
        points = read_step_totals(cell_dir / "timing.csv")
        timings.setdefault(cfg["variant"], []).extend(points)
    print(format_report(scalability_report(timings)))
    return EXIT_OK


def read_step_totals(timing_csv: Path, teaching_only: bool = False,
                     steps_jsonl: Path | None = None) -> list[tuple[float, float]]:
    """(step, total ms) pairs from a timing file."""
    totals: dict[int, float] = {}
    with open(timing_csv) as fh:
        next(fh)
        for line in fh:
            t, phase, ms = line.strip().split(",")
            if phase == "total":
                totals[int(t)] = float(ms)
    teaching_steps = None
    if teaching_only and steps_jsonl is not None:
        teaching_steps = set()
        with open(steps_jsonl) as fh:
            for line in fh:
                row = json.loads(line)
                if row.get("teaching"):
                    teaching_steps.add(row["t"])
    out = []
    for t in sorted(totals):
        if teaching_steps is None or t in teaching_steps:
            out.append((float(t), totals[t]))
    return out


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _truth_rows(dataset_dir: Path) -> list[dict]:
    rows = []
    for rec in read_records(dataset_dir / "dataset.jsonl"):
        if rec.is_teaching:
            rows.append(rec.truth)
    return rows


def _theta_from_json(obj: dict, beta: float):
    from .concepts import ThetaSnapshot

    concept_ids = [c["id"] for c in obj["concepts"]]
    position_ids = [p["id"] for p in obj["positions"]]
    pi = {c["id"]: c["pi"] for c in obj["concepts"]}
    phi = {c["id"]: {int(k): v for k, v in c["phi"].items()} for c in obj["concepts"]}
    word_probs = {c["id"]: {tuple(w.split()): p for w, p in c["words"].items()}
                  for c in obj["concepts"]}
    feat_probs = {c["id"]: np.asarray(c["feats"]) for c in obj["concepts"]}
    mean = {p["id"]: np.asarray(p["mean"]) for p in obj["positions"]}
    cov = {p["id"]: np.asarray(p["cov"]) for p in obj["positions"]}
    flagged = {p["id"]: p["cov_flagged"] for p in obj["positions"]}
    word_counts = {c["id"]: {tuple(w.split()): n
                             for w, n in c.get("word_counts", {}).items()}
                   for c in obj["concepts"]}
    word_totals = {c["id"]: c.get("word_total", sum(word_counts[c["id"]].values()))
                   for c in obj["concepts"]}
    vocab = sorted({w for wc in word_counts.values() for w in wc})
    return ThetaSnapshot(concept_ids, position_ids, pi, phi, word_probs,
                         feat_probs, mean, cov, flagged,
                         np.zeros(2), vocab, word_counts, word_totals, beta)


def evaluate_cell(cell_dir: str | Path, dataset_dir: str | Path) -> dict:
    """Metrics for one artifact directory against dataset ground truth."""
    cell_dir = Path(cell_dir)
    dataset_dir = Path(dataset_dir)
    truth = _truth_rows(dataset_dir)
    env = Environment.from_json(json.loads((dataset_dir / "env.json").read_text()))
    config = json.loads((cell_dir / "config.json").read_text())
    params = json.loads((cell_dir / "final" / "params.json").read_text())
    lexicon_counts = json.loads((cell_dir / "final" / "lexicon.json").read_text())
    beta = config["hyper"]["beta"]

    true_c = [row["concept"] for row in truth]
    true_i = [row["place"] for row in truth]
    est_i = params["assignments"]["i"]
    est_c = params["assignments"]["C"]
    final = {
        "ARI_C": ari(true_c, est_c),
        "ARI_i": ari(true_i, est_i),
        "EAR_L": ear(len(set(true_c)), len(set(est_c))),
        "EAR_K": ear(len(set(true_i)), len(set(est_i))),
    }
    sent_scores = []
    for row, est in zip(truth, params["segmentation"]):
        correct = delimited([w.split() for w in row["words"]])
        hyp = delimited([w.split() for w in est])
        sent_scores.append(par(correct, hyp))
    final["PAR_sentence"] = float(np.mean(sent_scores))

    lex_params = LexiconParams(len(ALPHABET), config["p_continue"],
                               config["max_word_len"], config["hyper"]["lam"])
    lexicon = Lexicon(lex_params,
                      {tuple(w.split()): c for w, c in lexicon_counts.items()})
    theta = _theta_from_json(params["theta"], beta)
    word_scores = []
    for place in env.places:
        name = env.names[place.name_id]
        if lexicon.counts and theta.concept_ids:
            chosen = select_word(np.asarray(place.center), theta, lexicon)
            word_scores.append(par(list(name), list(chosen)))
        else:
            word_scores.append(0.0)
    final["PAR_word"] = float(np.mean(word_scores))

    # per-step rows from the logged snapshots
    steps = []
    n_seen = 0
    with open(cell_dir / "steps.jsonl") as fh:
        for line in fh:
            row = json.loads(line)
            if not row.get("teaching"):
                continue
            n_seen += 1
            rec: dict = {"step": row["t"]}
            if n_seen >= 2 and row.get("assignments"):
                rec["ari_c"] = ari(true_c[:n_seen], row["assignments"]["C"])
                rec["ari_i"] = ari(true_i[:n_seen], row["assignments"]["i"])
            rec["ear_l"] = ear(len(set(true_c[:n_seen])), row["n_concepts"])
            rec["ear_k"] = ear(len(set(true_i[:n_seen])), row["n_positions"])
            if row.get("s_star"):
                correct = delimited([w.split() for w in truth[n_seen - 1]["words"]])
                hyp = delimited([w.split() for w in row["s_star"][-1]])
                rec["par_sentence"] = par(correct, hyp)
            steps.append(rec)
    return {"final": final, "steps": steps}


def cmd_eval(args) -> int:
    dataset_dir = Path(args.dataset)
    rows_by_variant: dict[str, list[dict]] = {}
    for cell in args.cells:
        cell_dir = Path(cell)
        try:
            result = evaluate_cell(cell_dir, dataset_dir)
        except FileNotFoundError as exc:
            print(f"cell {cell_dir.name}: missing artifact: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        config = json.loads((cell_dir / "config.json").read_text())
        with open(cell_dir / "metrics.csv", "w") as fh:
            fh.write("step,metric,value\n")
            for rec in result["steps"]:
                for metric, value in rec.items():
                    if metric != "step":
                        fh.write(f"{rec['step']},{metric},{value:.6f}\n")
        with open(cell_dir / "summary.json", "w") as fh:
            json.dump(result["final"], fh, indent=1, sort_keys=True)
        rows_by_variant.setdefault(config["variant"], []).append(result["final"])

    metrics = ("ARI_C", "ARI_i", "EAR_L", "EAR_K", "PAR_sentence", "PAR_word")
    header = f"{'variant':20s}" + "".join(f"{m:>14s}" for m in metrics)
    lines = [header]
    table_rows = []
    for variant in sorted(rows_by_variant):
        cells = rows_by_variant[variant]
        means = {m: float(np.mean([c[m] for c in cells])) for m in metrics}
        table_rows.append({"variant": variant, **means, "cells": len(cells)})
        lines.append(f"{variant:20s}" + "".join(f"{means[m]:14.3f}" for m in metrics))
    table = "\n".join(lines)
    print(table)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "comparison.json", "w") as fh:
            json.dump(table_rows, fh, indent=1, sort_keys=True)
        with open(out / "comparison.csv", "w") as fh:
            fh.write("variant," + ",".join(metrics) + ",cells\n")
            for row in table_rows:
                fh.write(row["variant"] + ","
                         + ",".join(f"{row[m]:.6f}" for m in metrics)
                         + f",{row['cells']}\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lexmap",
        description="online place-concept and lexicon learning with mapping")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a synthetic dataset")
    p_gen.add_argument("--config", help="generator spec JSON")
    p_gen.add_argument("--seed", type=int, default=None)
    p_gen.add_argument("--teaching", type=int, default=None)
    p_gen.add_argument("--out", help="output dataset directory")
    p_gen.set_defaults(fn=cmd_gen)

    for name, fn in (("run", cmd_run), ("bench", cmd_bench)):
        p = sub.add_parser(name, help=f"{name} engine cells")
        p.add_argument("--config", help="experiment spec JSON")
        p.add_argument("--dataset", help="dataset directory")
        p.add_argument("--variant", choices=VARIANTS)
        p.add_argument("--particles", type=int)
        p.add_argument("--lag", type=int)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", help="output directory for cells")
        p.add_argument("--jobs", type=int, default=1)
        p.set_defaults(fn=fn)

    p_eval = sub.add_parser("eval", help="score artifact directories")
    p_eval.add_argument("--dataset", required=True)
    p_eval.add_argument("--out", help="directory for the comparison table")
    p_eval.add_argument("cells", nargs="+")
    p_eval.set_defaults(fn=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_SPEC if exc.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except (EnvironmentSpecError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
