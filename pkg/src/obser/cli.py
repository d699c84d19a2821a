"""Command-line pipelines: synthesize, measure, estimate, retrieve.

Exit codes: 0 on success, 1 when a requested bound check fails, 2 for
usage errors, invalid domains, or unreadable inputs (one-line diagnostic
on stderr).  The OBSER_SEED environment variable overrides --seed
wherever a seed is taken.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .eds import EDS_CSV_HEADER, LabeledSet, measure_eds
from .estimators import (
    check_kl_bound,
    estimate_kl,
    estimate_occurrence,
    estimate_occurrence_direct,
    jensen_shannon,
)
from .kernel import KernelConfig
from .memory import chained_inference, segment_trajectory
from .synthenv import SyntheticEnvSpec, make_scenario, sample_environment
from .toytrain import (
    DEFAULT_BATCH,
    DEFAULT_LR,
    DEFAULT_TRAIN_TAU,
    EVAL_TAU,
    generate_toy,
    train,
)

__all__ = ["main"]


def _resolve_seed(cli_seed: int) -> int:
    env = os.environ.get("OBSER_SEED")
    if env:
        return int(env)
    return cli_seed


def _print_json(obj):
    print(json.dumps(obj, indent=2))


def _spec_from_dict(d: dict) -> SyntheticEnvSpec:
    occurrence = d.get("occurrence", "uniform")
    if isinstance(occurrence, list):
        occurrence = tuple(float(v) for v in occurrence)
    return SyntheticEnvSpec(
        dim=int(d["dim"]),
        num_classes=int(d["num_classes"]),
        samples_per_env=int(d["samples_per_env"]),
        kappa=d.get("kappa", 100.0),
        occurrence=occurrence,
        zipf_alpha=float(d.get("alpha", d.get("zipf_alpha", 0.5))),
        prototype_layout=d.get("prototype_layout", "orthogonal"),
        prototypes=None
        if d.get("prototypes") is None
        else tuple(tuple(row) for row in d["prototypes"]),
    )


def cmd_synth(args) -> int:
    seed = _resolve_seed(args.seed)
    out = Path(args.out)
    if args.scenario is not None:
        mu, nu, exact = make_scenario(
            args.scenario,
            dim=args.dim,
            kappa=args.kappa,
            seed=seed,
            samples_per_env=args.samples,
        )
        io.save_embeddings(mu, out / "mu.jsonl")
        io.save_embeddings(nu, out / "nu.jsonl")
        io.write_json(
            out / "scenario.json",
            {
                "scenario": args.scenario,
                "dim": args.dim,
                "kappa": args.kappa,
                "seed": seed,
                "exact_kl": exact,
            },
        )
    else:
        spec = _spec_from_dict(json.loads(Path(args.spec).read_text()))
        data, truth = sample_environment(spec, seed)
        io.save_embeddings(data, out / "env.jsonl")
        io.write_json(
            out / "ground_truth.json",
            truth.to_json_dict(kappa=spec.kappa, seed=seed),
        )
    return 0


def cmd_eds(args) -> int:
    data = io.load_embeddings(args.data)
    if not isinstance(data, LabeledSet):
        raise ValueError(f"{args.data}: eds needs labeled records")
    taus = (
        [float(t) for t in args.sweep_tau.split(",")]
        if args.sweep_tau
        else [args.tau]
    )
    reports = [measure_eds(data, KernelConfig(t), args.trim) for t in taus]
    if any(r.epsilon is None for r in reports):
        print(
            "warning: single-class data; epsilon and k are undefined",
            file=sys.stderr,
        )
    if args.out and args.out.endswith(".json"):
        payload = [r.to_json_dict() for r in reports]
        io.write_json(args.out, payload[0] if len(payload) == 1 else payload)
    else:
        text = "\n".join([EDS_CSV_HEADER] + [r.csv_row() for r in reports]) + "\n"
        if args.out:
            io.write_text(args.out, text)
        else:
            print(text, end="")
    return 0


def cmd_occurrence(args) -> int:
    query = io.load_observations(args.query)
    env = io.load_observations(args.env)
    cfg = KernelConfig(args.tau)
    if args.direct:
        est = estimate_occurrence_direct(query.vectors, env, cfg)
    else:
        est = estimate_occurrence(query.vectors, env, cfg, multiplier=args.multiplier)
    _print_json(est.to_json_dict(n=len(env), tau=args.tau))
    return 0


def cmd_kldiv(args) -> int:
    mu = io.load_embeddings(args.mu)
    nu = io.load_embeddings(args.nu)
    cfg = KernelConfig(args.tau)
    result = estimate_kl(mu.vectors, nu.vectors, cfg).to_json_dict()
    exit_code = 0
    if args.check_bounds:
        if not (isinstance(mu, LabeledSet) and isinstance(nu, LabeledSet)):
            raise ValueError("--check-bounds needs labeled inputs on both sides")
        check = check_kl_bound(mu, nu, cfg)
        result["bound_check"] = check.to_json_dict()
        if not check.holds:
            exit_code = 1
    _print_json(result)
    return exit_code


def cmd_jsd_matrix(args) -> int:
    env = io.load_environment(args.envs)
    cfg = KernelConfig(args.tau)
    regions = env.regions()
    n = len(regions)
    matrix = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            value = jensen_shannon(
                env.observations(regions[i]), env.observations(regions[j]), cfg
            )
            matrix[i, j] = matrix[j, i] = value
    lines = ["region," + ",".join(regions)]
    for i, r in enumerate(regions):
        lines.append(r + "," + ",".join(repr(float(v)) for v in matrix[i]))
    io.write_text(args.out, "\n".join(lines) + "\n")
    return 0


def cmd_retrieve(args) -> int:
    query = io.load_observations(args.query)
    memory = io.load_memory(args.memory)
    env = io.load_environment(args.env)
    cfg = KernelConfig(args.tau)
    result = chained_inference(
        query.vectors, memory, env, cfg, rooms_k=args.rooms_k, objects_k=args.objects_k
    )
    _print_json(result.to_json_dict())
    return 0


def cmd_segment(args) -> int:
    directory = Path(args.trajectory)
    files = sorted(directory.glob("*.jsonl"))
    if not files:
        raise ValueError(f"{directory}: no .jsonl waypoint files")
    waypoints = [io.load_observations(p) for p in files]
    cfg = KernelConfig(args.tau)
    segments = segment_trajectory(waypoints, args.threshold, cfg)
    _print_json(
        {
            "waypoints": [p.stem for p in files],
            "threshold": args.threshold,
            "segments": [
                {"start": s.start, "end": s.end, "pivot": s.pivot} for s in segments
            ],
        }
    )
    return 0


def cmd_train_toy(args) -> int:
    seed = _resolve_seed(args.seed)
    dataset = generate_toy(args.kind, n=args.n, noise=args.noise, seed=seed)
    net, trace = train(
        dataset,
        head=args.head,
        cfg=KernelConfig(args.train_tau),
        epochs=args.epochs,
        lr=args.lr,
        batch=args.batch,
        seed=seed,
        eval_tau=args.eval_tau,
    )
    out = Path(args.out)
    io.write_text(out / "trace.csv", "\n".join(trace.csv_lines()) + "\n")
    io.write_json(
        out / "weights.json",
        {
            "format_version": 1,
            "widths": list(net.widths),
            "head": net.head,
            "weights": [w.tolist() for w in net.weights],
            "biases": [b.tolist() for b in net.biases],
        },
    )
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="obser",
        description="Kernel-density environment measures over embedding files.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic environment or scenario pair")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--spec", help="JSON file with the environment recipe")
    src.add_argument(
        "--scenario",
        choices=["S1", "S2", "C-Scenario1", "C-Scenario2", "C-Scenario3"],
        help="named two-group scenario (emits mu/nu pair with exact KL)",
    )
    p.add_argument("--dim", type=int, default=16, help="dimension for --scenario")
    p.add_argument("--kappa", type=float, default=200.0, help="concentration for --scenario")
    p.add_argument("--samples", type=int, default=None, help="per-side samples for --scenario")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eds", help="measure epsilon-delta separability of a labeled file")
    p.add_argument("--data", required=True)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--trim", type=float, default=0.05)
    p.add_argument("--sweep-tau", dest="sweep_tau", help="comma-separated taus; one row each")
    p.add_argument("--out", help=".csv or .json output (default: CSV to stdout)")
    p.set_defaults(func=cmd_eds)

    p = sub.add_parser("occurrence", help="estimate the queried class's occurrence in an environment")
    p.add_argument("--query", required=True)
    p.add_argument("--env", required=True)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--multiplier", type=float, default=0.25)
    p.add_argument("--direct", action="store_true", help="raw density, no thresholding")
    p.set_defaults(func=cmd_occurrence)

    p = sub.add_parser("kldiv", help="estimate KL divergence between two embedding files")
    p.add_argument("--mu", required=True)
    p.add_argument("--nu", required=True)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument(
        "--check-bounds",
        dest="check_bounds",
        action="store_true",
        help="verify the separability band (labeled inputs; exit 1 on failure)",
    )
    p.set_defaults(func=cmd_kldiv)

    p = sub.add_parser("jsd-matrix", help="pairwise Jensen-Shannon matrix over a directory")
    p.add_argument("--envs", required=True)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_jsd_matrix)

    p = sub.add_parser("retrieve", help="chained recall -> region -> object retrieval")
    p.add_argument("--query", required=True)
    p.add_argument("--memory", required=True)
    p.add_argument("--env", required=True)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--rooms-k", dest="rooms_k", type=int, required=True)
    p.add_argument("--objects-k", dest="objects_k", type=int, required=True)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("segment", help="split a waypoint directory into sub-environments")
    p.add_argument("--trajectory", required=True)
    p.add_argument("--threshold", type=float, required=True)
    p.add_argument("--tau", type=float, required=True)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("train-toy", help="train the toy contrastive MLP and emit its trace")
    p.add_argument("--kind", choices=["moons", "xor"], required=True)
    p.add_argument("--head", choices=["sphere", "euclid"], required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--lr", type=float, default=DEFAULT_LR)
    p.add_argument("--batch", type=int, default=DEFAULT_BATCH)
    p.add_argument("--train-tau", dest="train_tau", type=float, default=DEFAULT_TRAIN_TAU)
    p.add_argument("--eval-tau", dest="eval_tau", type=float, default=EVAL_TAU)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train_toy)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
