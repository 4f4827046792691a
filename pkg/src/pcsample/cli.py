"""Command-line surface tying the pipeline together.

Exit codes: 0 success, 2 validation error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import formats, rng
from .bt import BTOptions, PCM, bt_fit, score_std
from .errors import NumericalError, ValidationError
from .experiment import ExperimentConfig, run_experiment, _predict
from .selection import CRITERIA, PairRecord, normalize_model_uncertainty, rank_pairs, select_budget
from .service import JudgmentService, make_server


def _add_genworld(sub):
    p = sub.add_parser("genworld", help="generate a synthetic dataset")
    p.add_argument("--refs", type=int, required=True)
    p.add_argument("--images-per-ref", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--noise-mu", type=float, default=0.6)
    p.add_argument("--noise-sigma", type=float, default=0.2)
    p.add_argument("--noise-pass", type=float, default=0.3)
    p.add_argument("--out", required=True)


def _add_select(sub):
    p = sub.add_parser("select", help="rank pairs and cut at a budget")
    p.add_argument("--dataset", required=True)
    p.add_argument("--criterion", choices=CRITERIA, required=True)
    p.add_argument("--budget", type=float, required=True)
    p.add_argument("--passes", type=int, default=200)
    p.add_argument("--delta", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)


def _add_simulate(sub):
    p = sub.add_parser("simulate", help="run the shortened-test simulation")
    p.add_argument("--dataset", required=True)
    p.add_argument("--criteria", default=",".join(CRITERIA))
    p.add_argument("--budgets", default="0,0.1,0.2,0.3,0.4,0.5")
    p.add_argument("--fill", choices=("oracle", "empirical"), default="empirical")
    p.add_argument("--subjects", type=int, default=15)
    p.add_argument("--reps", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--passes", type=int, default=200)
    p.add_argument("--delta", type=float, default=0.3)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)


def _add_aggregate(sub):
    p = sub.add_parser("aggregate", help="convert a PCM file to scores")
    p.add_argument("--pcm", required=True)
    p.add_argument("--out", required=True)


def _add_serve(sub):
    p = sub.add_parser("serve", help="serve a plan to human subjects")
    p.add_argument("--dataset", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--ui", default=None, help="directory with the web frontend")


def _cmd_genworld(args) -> int:
    dataset = formats.generate_dataset(
        args.out,
        n_refs=args.refs,
        images_per_ref=args.images_per_ref,
        seed=args.seed,
        noise_mu=args.noise_mu,
        noise_sigma=args.noise_sigma,
        noise_pass=args.noise_pass,
    )
    print(f"wrote dataset {dataset.dataset_id} to {args.out}")
    return 0


def _build_records(dataset, passes, delta, seed):
    config = ExperimentConfig(
        criteria=("data",),
        budgets=(0.0,),
        n_passes=passes,
        delta=delta,
        seed=seed,
        repetitions=1,
    )
    preds = _predict(dataset, config, rep=0)
    records = []
    for ref in dataset.references:
        for rec in preds[ref.reference_id].records:
            records.append(PairRecord(**rec))
    records = normalize_model_uncertainty(records)
    model_pcms = {
        ref.reference_id: PCM(p=preds[ref.reference_id].mu_m) for ref in dataset.references
    }
    return records, model_pcms


def _cmd_select(args) -> int:
    dataset = formats.load_dataset(args.dataset)
    records, model_pcms = _build_records(dataset, args.passes, args.delta, args.seed)
    generator = rng.stream(args.seed, "select", 0) if args.criterion == "random" else None
    ranked = rank_pairs(
        records,
        args.criterion,
        pcms=model_pcms,
        delta=args.delta,
        generator=generator,
    )
    plan = select_budget(ranked, args.budget, args.criterion, seed=args.seed)
    formats.write_selection(plan, dataset, args.out)
    print(f"selected {len(plan.selected)} of {len(ranked)} pairs -> {args.out}")
    return 0


def _cmd_simulate(args) -> int:
    dataset = formats.load_dataset(args.dataset)
    config = ExperimentConfig(
        criteria=tuple(c.strip() for c in args.criteria.split(",") if c.strip()),
        budgets=tuple(float(b) for b in args.budgets.split(",") if b.strip()),
        fill=args.fill,
        subjects=args.subjects,
        repetitions=args.reps,
        n_passes=args.passes,
        delta=args.delta,
        seed=args.seed,
    )
    result = run_experiment(dataset, config, workers=args.workers)
    formats.write_results(result, args.out)
    print(f"wrote {len(result.cells)} result rows -> {args.out}")
    return 0


def _cmd_aggregate(args) -> int:
    groups = formats.read_sparse_pcm_csv(args.pcm)
    lines = ["ref_id,image_id,score,std"]
    for ref_id, (image_ids, pcm) in groups.items():
        result = bt_fit(pcm, BTOptions())
        stds = score_std(result)
        for k, image_id in enumerate(image_ids):
            lines.append(f"{ref_id},{image_id},{float(result.q[k])!r},{float(stds[k])!r}")
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"wrote scores for {len(groups)} references -> {args.out}")
    return 0


def _cmd_serve(args) -> int:
    dataset = formats.load_dataset(args.dataset)
    plan = formats.load_selection(args.plan, dataset)
    service = JudgmentService(dataset, plan, args.store)
    server = make_server(service, port=args.port, host=args.host, ui_dir=args.ui)
    print(f"serving {len(service.pairs)} pairs on http://{args.host}:{args.port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


_COMMANDS = {
    "genworld": _cmd_genworld,
    "select": _cmd_select,
    "simulate": _cmd_simulate,
    "aggregate": _cmd_aggregate,
    "serve": _cmd_serve,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pcsample",
        description="Uncertainty-guided pair selection for pairwise-comparison tests",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_genworld(sub)
    _add_select(sub)
    _add_simulate(sub)
    _add_aggregate(sub)
    _add_serve(sub)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
