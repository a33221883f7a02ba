"""``irtforge`` command line.

Exit status: 0 success, 1 input or configuration error, 2 finished with
warnings (an estimation loop hit its cycle cap). Log level comes from the
``IRTFORGE_LOG`` environment variable.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .calibrate import ItemParams, calibrate_mml, make_grid
from .dataio import (DataError, ResultBundle, file_digest, load_bundle, load_item_bank,
                     load_report, load_responses, write_bundle, write_json, write_responses)
from .fpc import LatentDist
from .report import render_dist_table, render_experiment_report, render_wright_map
from .simulate import PopulationSpec, paper_analogue_population, simulate_population
from .workflows import calibration_scores, group_proficiency, run_experiment

logger = logging.getLogger("irtforge")

EXIT_OK, EXIT_INPUT, EXIT_WARN = 0, 1, 2
MAX_SEED = 2**64 - 1


def _seed(text):
    value = int(text)
    if not 0 <= value <= MAX_SEED:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _add_estimation(p, fpc=False):
    p.add_argument("--grid-count", type=int, default=41)
    p.add_argument("--grid-span", type=float, default=5.0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-cycles", type=_positive_int, default=500)
    if fpc:
        p.add_argument("--inner-updates", type=_positive_int, default=10)
    p.add_argument("--threads", type=_positive_int, default=1,
                   help="E-step worker cap; results do not depend on it")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="irtforge", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"irtforge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="free Rasch calibration of item difficulties")
    p.add_argument("--responses", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--format", choices=["wide", "long"], default="wide")
    p.add_argument("--out", required=True)
    _add_estimation(p)

    p = sub.add_parser("fpc", help="proficiency distributions with items fixed")
    p.add_argument("--responses", required=True)
    p.add_argument("--bank", required=True, help="item bank with fixed_difficulty on every item")
    p.add_argument("--format", choices=["wide", "long"], default="wide")
    p.add_argument("--out", required=True)
    _add_estimation(p, fpc=True)

    p = sub.add_parser("experiment", help="benchmark and augmentation experiments 1-4")
    p.add_argument("--responses", required=True, help="human respondents")
    p.add_argument("--synthetic", required=True, help="synthetic respondent pool")
    p.add_argument("--bank", required=True)
    p.add_argument("--format", choices=["wide", "long"], default="wide")
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--half-ids", help="file listing the human half-sample ids, one per line")
    p.add_argument("--anchor", action="store_true", help="report mean-anchored RMSE")
    p.add_argument("--out", required=True)
    _add_estimation(p, fpc=True)

    p = sub.add_parser("simulate", help="simulate a respondent pool from a population spec")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--spec", help="PopulationSpec JSON")
    src.add_argument("--paper-analogue", action="store_true",
                     help="seven-group population (human + six LLMs)")
    p.add_argument("--bank", required=True, help="item bank with fixed_difficulty on every item")
    p.add_argument("--seed", type=_seed, help="overrides the spec's seed")
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="re-render a saved bundle or experiment report")
    what = p.add_mutually_exclusive_group(required=True)
    what.add_argument("--bundle", help="ResultBundle JSON: render its Wright map")
    what.add_argument("--report", help="experiment report JSON: render text tables")
    p.add_argument("--out", help="output directory (default: print text to stdout)")
    return parser


def _grid(args):
    return make_grid(args.grid_count, args.grid_span)


def _write(path: Path, text: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_maps(out: Path, params, abilities, stem="wright_map"):
    _write(out / f"{stem}.txt", render_wright_map(params, abilities, "text"))
    _write(out / f"{stem}.svg", render_wright_map(params, abilities, "svg"))


def cmd_calibrate(args) -> int:
    bank = load_item_bank(args.bank)
    matrix = load_responses(args.responses, args.format, bank)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cal = calibrate_mml(matrix, _grid(args), args.tol, args.max_cycles, args.threads)
    abilities = calibration_scores(matrix, cal, args.threads)
    bundle = ResultBundle(cal.item_params, cal.convergence, LatentDist.from_grid(cal.grid),
                          abilities, None, {"responses": file_digest(args.responses),
                                            "bank": file_digest(args.bank)})
    write_bundle(bundle, out / "bundle.json")
    _write_maps(out, cal.item_params, abilities)
    return EXIT_OK if cal.convergence.converged else EXIT_WARN


def cmd_fpc(args) -> int:
    bank = load_item_bank(args.bank)
    fixed = ItemParams.from_bank(bank)
    matrix = load_responses(args.responses, args.format, bank)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prof = group_proficiency(matrix, fixed, _grid(args), args.inner_updates, args.tol,
                             args.max_cycles, args.threads)
    bundle = ResultBundle(fixed, prof.convergence, prof.pooled.latent, prof.abilities, None,
                          {"responses": file_digest(args.responses),
                           "bank": file_digest(args.bank)})
    write_bundle(bundle, out / "bundle.json")
    write_json({"distributions": [s.to_dict() for s in prof.stats],
                "latent": {s: f.latent.to_dict() for s, f in prof.per_source.items()}},
               out / "proficiency.json")
    _write(out / "proficiency.txt", render_dist_table(prof.stats))
    return EXIT_OK if prof.convergence.converged else EXIT_WARN


def _read_ids(path):
    with open(path, encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip() and not line.startswith("#")]


def cmd_experiment(args) -> int:
    bank = load_item_bank(args.bank)
    humans = load_responses(args.responses, args.format, bank)
    synthetic = load_responses(args.synthetic, args.format, bank)
    half_ids = _read_ids(args.half_ids) if args.half_ids else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = run_experiment(humans, synthetic, args.seed, _grid(args), args.tol, args.max_cycles,
                         args.inner_updates, args.anchor, half_ids, args.threads)
    inputs = {"responses": file_digest(args.responses), "synthetic": file_digest(args.synthetic),
              "bank": file_digest(args.bank)}
    for cond, r in res.conditions.items():
        d = out / cond
        d.mkdir(exist_ok=True)
        cal = r.calibration
        write_bundle(ResultBundle(cal.item_params, cal.convergence, LatentDist.from_grid(cal.grid),
                                  r.abilities, args.seed, inputs), d / "bundle.json")
        _write_maps(d, cal.item_params, r.abilities)
    write_json(res.plan.to_dict(), out / "match_plan.json")
    write_json(res.proportions.to_dict(), out / "proportions.json")
    write_json({"seed": args.seed, "half_ids": res.half_ids,
                "conditions": {c: {"size": r.pool.size, "composition": r.pool.composition,
                                   "respondent_ids": list(r.pool.matrix.respondent_ids)}
                               for c, r in res.conditions.items()},
                "provenance": {"inputs": inputs, "tool_version": __version__}},
               out / "manifest.json")
    _write(out / "report.txt", render_experiment_report(res.report, res.stats, "text"))
    _write(out / "report.json", render_experiment_report(res.report, res.stats, "json"))
    return EXIT_OK if res.converged else EXIT_WARN


def cmd_simulate(args) -> int:
    bank = load_item_bank(args.bank)
    betas = bank.fixed_difficulties()
    if args.paper_analogue:
        spec = paper_analogue_population(args.seed)
        spec_tag = "paper-analogue"
    else:
        import json
        try:
            spec = PopulationSpec.from_dict(json.loads(Path(args.spec).read_text(encoding="utf-8")))
        except FileNotFoundError:
            raise DataError("file not found", args.spec) from None
        except json.JSONDecodeError as exc:
            raise DataError(f"invalid JSON: {exc.msg}", args.spec, exc.lineno) from None
        spec_tag = file_digest(args.spec)
    seed = args.seed if args.seed is not None else spec.seed
    if seed is None:
        raise DataError("a seed is required: pass --seed or set 'seed' in the spec")
    thetas, matrix = simulate_population(spec, betas, seed, bank.item_ids)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    comment = (f"irtforge {__version__} simulate seed={seed} spec={spec_tag} "
               f"bank={file_digest(args.bank)} generator=PCG64")
    write_responses(matrix, out / "responses.csv", "wide_csv", comment)
    write_responses(matrix, out / "responses.jsonl", "long_jsonl", comment)
    lines = [f"# {comment}", "respondent_id,source,theta"]
    lines += [f"{r},{s},{t:.6g}" for r, s, t in zip(thetas.respondent_ids, thetas.sources,
                                                     thetas.values)]
    _write(out / "thetas.csv", "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_report(args) -> int:
    if args.bundle:
        bundle = load_bundle(args.bundle)
        outputs = {"wright_map.txt": render_wright_map(bundle.item_params, bundle.ability, "text"),
                   "wright_map.svg": render_wright_map(bundle.item_params, bundle.ability, "svg")}
        primary = "wright_map.txt"
    else:
        report, stats = load_report(args.report)
        outputs = {"report.txt": render_experiment_report(report, stats, "text")}
        primary = "report.txt"
    if args.out is None:
        sys.stdout.write(outputs[primary])
    else:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for name, text in outputs.items():
            _write(out / name, text)
    return EXIT_OK


COMMANDS = {"calibrate": cmd_calibrate, "fpc": cmd_fpc, "experiment": cmd_experiment,
            "simulate": cmd_simulate, "report": cmd_report}


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("IRTFORGE_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        code = COMMANDS[args.command](args)
    except (DataError, ValueError, KeyError, OSError) as exc:
        print(f"irtforge {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if code == EXIT_WARN:
        print(f"irtforge {args.command}: warning: estimation did not converge "
              "(results written, converged=false)", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
