"""Command-line entry point: extract | synth | loso | analyze.

Every run is fully determined by (config, seed); the effective configuration
is persisted next to the outputs. Exit codes: 0 ok, 1 usage, 2 data error,
3 training divergence.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict
from pathlib import Path

from . import dataio, dg, evaluate, sigproc, synth
from .errors import (
    EegdgError,
    NotApplicableError,
    ParseError,
    TrainingDivergenceError,
)
from .util import substream

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGENCE = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="eegdg",
                     description="EEG drowsiness domain-generalization toolkit")
    parser.add_argument("--seed", type=int, default=0, help="root random seed")
    parser.add_argument("--workers", type=int, default=1,
                        help="parallel workers for LOSO cells")
    parser.add_argument("--config", type=Path, default=None,
                        help="flat key-value config file")
    parser.add_argument("--out", type=Path, required=True, help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="raw recording + event log -> trial table")
    p.add_argument("--raw", type=Path, required=True)
    p.add_argument("--events", type=Path, required=True)
    p.add_argument("--subject", required=True)
    p.add_argument("--tau0", default="fixed:1.0",
                   help="'fixed:<seconds>' or 'percentile5'")

    p = sub.add_parser("synth", help="generate the synthetic benchmark")

    p = sub.add_parser("loso", help="leave-one-subject-out evaluation")
    p.add_argument("--data-dir", type=Path, required=True)
    p.add_argument("--algorithms", default="knn,rr,agg,fw-agg,et,fwet",
                   help="comma-separated subset of knn,rr,agg,fw-agg,et,fwet")
    p.add_argument("--repeats", type=int, default=5)

    p = sub.add_parser("analyze", help="post-hoc analyses on checkpoints")
    p.add_argument("--which", required=True,
                   choices=["perturb", "crossapply", "weights", "valgap"])
    p.add_argument("--checkpoint-dir", type=Path, required=True)
    p.add_argument("--data-dir", type=Path, default=None)
    p.add_argument("--algorithm", default="fwet")
    p.add_argument("--target", default=None)
    p.add_argument("--repeat", type=int, default=0)
    p.add_argument("--sigmas", default="0,0.01,0.02,0.05,0.1",
                   help="comma-separated noise levels for perturb")
    return parser


def _load_overrides(path):
    return dataio.load_flat_config(path) if path else {}


def _train_config(overrides: dict, seed: int) -> dg.TrainConfig:
    fields = {f for f in dg.TrainConfig.__dataclass_fields__}
    kwargs = {k: v for k, v in overrides.items() if k in fields}
    for key in ("regularizers", "theta_hidden", "psi_hidden"):
        if key in kwargs and not isinstance(kwargs[key], (list, tuple)):
            kwargs[key] = (kwargs[key],)
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    kwargs.setdefault("seed", seed)
    return dg.TrainConfig(**kwargs)


def _synth_spec(overrides: dict, seed: int) -> synth.SynthSpec:
    fields = {f for f in synth.SynthSpec.__dataclass_fields__}
    kwargs = {k: v for k, v in overrides.items() if k in fields}
    if "informative_set" in kwargs:
        kwargs["informative_set"] = tuple(kwargs["informative_set"])
    kwargs.setdefault("seed", seed)
    return synth.SynthSpec(**kwargs)


def _persist_config(out_dir: Path, args, extra: dict) -> None:
    doc = {"command": args.command, "seed": args.seed, "workers": args.workers}
    doc.update(extra)
    dataio.save_flat_config(out_dir / "run_config.txt", doc)


def _fmt(x) -> str:
    return repr(float(x))


def cmd_extract(args, overrides) -> int:
    out_dir = args.out
    out_dir.mkdir(parents=True, exist_ok=True)
    raw = dataio.load_raw_recording(args.raw)
    log = dataio.load_event_log(args.events)
    taus = sigproc.reaction_times(log)
    if taus.size == 0:
        raise ParseError("event log has no events")
    if args.tau0 == "percentile5":
        tau0 = sigproc.individualized_tau0(taus)
    elif args.tau0.startswith("fixed:"):
        tau0 = float(args.tau0.split(":", 1)[1])
    else:
        print(f"eegdg: bad --tau0 value {args.tau0!r}", file=sys.stderr)
        return EXIT_USAGE

    rec = sigproc.bandpass(raw, 1.0, 50.0)
    factor = int(round(rec.sample_rate_hz / 250.0))
    rec = sigproc.decimate(rec, max(factor, 1))
    rec = sigproc.rereference(rec)
    feats = sigproc.extract_features(rec)
    times = sigproc.feature_times(len(feats))
    labels = sigproc.labels_at_times(log, tau0, times)
    table = sigproc.TrialTable(subject_id=args.subject, features=feats,
                               labels=labels, trial_times=times)
    dataio.save_trial_table(out_dir / f"{args.subject}.csv", table)
    _persist_config(out_dir, args, {"tau0": args.tau0, "subject": args.subject,
                                    "raw": str(args.raw), "events": str(args.events)})
    return EXIT_OK


def cmd_synth(args, overrides) -> int:
    out_dir = args.out
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = _synth_spec(overrides, args.seed)
    tables, descriptor = synth.gen_feature_benchmark(spec)
    for table in tables:
        dataio.save_trial_table(out_dir / f"{table.subject_id}.csv", table)
    import json

    (out_dir / "descriptor.json").write_text(
        json.dumps(descriptor, sort_keys=True, indent=1) + "\n")
    _persist_config(out_dir, args, {k: v for k, v in asdict(spec).items()
                                    if not isinstance(v, dict)})
    return EXIT_OK


def cmd_loso(args, overrides) -> int:
    out_dir = args.out
    out_dir.mkdir(parents=True, exist_ok=True)
    algorithms = [a.strip() for a in args.algorithms.split(",") if a.strip()]
    for a in algorithms:
        if a not in evaluate.ALGORITHMS:
            print(f"eegdg: unknown algorithm {a!r}; choose from "
                  f"{', '.join(evaluate.ALGORITHMS)}", file=sys.stderr)
            return EXIT_USAGE
    data = dataio.load_trial_tables(args.data_dir)
    cfg = _train_config(overrides, args.seed)
    report = evaluate.loso(algorithms, data, cfg, repeats=args.repeats,
                           root_seed=args.seed, workers=args.workers,
                           artifacts_dir=out_dir)
    dataio.save_report_csv(out_dir / "report.csv", report)
    dataio.save_report_summary(out_dir / "summary.json", report)
    _persist_config(out_dir, args, {"algorithms": algorithms,
                                    "repeats": args.repeats,
                                    "data_dir": str(args.data_dir)})
    failed = [c for c in report.cells if c.failed]
    if failed:
        for c in failed:
            print(f"eegdg: failed cell {c.algorithm}/{c.target_subject}/r{c.repeat}: "
                  f"{c.error}", file=sys.stderr)
        return EXIT_DIVERGENCE if any("Divergence" in c.error for c in failed) else EXIT_DATA
    return EXIT_OK


def cmd_analyze(args, overrides) -> int:
    out_dir = args.out
    out_dir.mkdir(parents=True, exist_ok=True)
    which = args.which
    stem = None
    if args.target is not None:
        stem = f"{args.algorithm}_{args.target}_r{args.repeat}"
        ckpt_path = args.checkpoint_dir / f"ckpt_{stem}.json"
    else:
        candidates = sorted(args.checkpoint_dir.glob(f"ckpt_{args.algorithm}_*.json"))
        if not candidates:
            raise ParseError(f"no checkpoint for algorithm {args.algorithm!r} in "
                             f"{args.checkpoint_dir}")
        ckpt_path = candidates[0]
        stem = ckpt_path.stem[len("ckpt_"):]
    if not ckpt_path.exists():
        raise ParseError(f"checkpoint not found: {ckpt_path}")
    model, meta = dataio.load_checkpoint(ckpt_path)

    if which == "weights":
        table = dg.export_channel_weights(model)
        lines = ["channel,theta_weight,alpha_weight"]
        for ch, (th, al) in enumerate(table):
            lines.append(f"{ch},{_fmt(th)},{_fmt(al)}")
        (out_dir / "weights.csv").write_text("\n".join(lines) + "\n")
    else:
        if args.data_dir is None:
            print("eegdg: analyze requires --data-dir for this analysis",
                  file=sys.stderr)
            return EXIT_USAGE
        data = dataio.load_trial_tables(args.data_dir)
        target_sid = stem.split("_r")[0].split("_", 1)[1]
        target = [t for t in data if t.subject_id == target_sid]
        if which == "perturb":
            if not target:
                raise ParseError(f"target subject {target_sid!r} not in data dir")
            sigmas = [float(s) for s in str(args.sigmas).split(",")]
            curve = evaluate.perturb_analysis(model, target[0].features,
                                             target[0].labels, sigmas,
                                             root_seed=args.seed)
            lines = ["sigma,rmse,cc"]
            for s, r, c in zip(curve.sigmas, curve.rmse, curve.cc):
                lines.append(f"{_fmt(s)},{_fmt(r)},{_fmt(c)}")
            (out_dir / "perturb.csv").write_text("\n".join(lines) + "\n")
        elif which == "crossapply":
            cfg = _train_config(overrides, args.seed)
            psis = {}
            for table in data:
                rng = substream(args.seed, "crossapply", table.subject_id)
                res = dg.fit("agg", [table], cfg, rng=rng)
                psis[table.subject_id] = res.model.psi
            results = evaluate.cross_apply(model.theta, model.w, psis, data)
            lines = ["subject,mean_rmse,mean_cc"]
            for sid in sorted(results):
                r, c = results[sid]
                lines.append(f"{sid},{_fmt(r)},{_fmt(c)}")
            (out_dir / "crossapply.csv").write_text("\n".join(lines) + "\n")
        elif which == "valgap":
            if not target:
                raise ParseError(f"target subject {target_sid!r} not in data dir")
            trace_path = args.checkpoint_dir / f"trace_{stem}.jsonl"
            if not trace_path.exists():
                raise ParseError(f"trace not found: {trace_path}")
            trace = dataio.load_trace(trace_path)
            pred = dg.predict(model, target[0].features)
            test = evaluate.rmse(pred, target[0].labels)
            best_val, test, gap = evaluate.val_test_gap(trace, test)
            lines = ["algorithm,val_rmse,test_rmse,gap",
                     f"{args.algorithm},{_fmt(best_val)},{_fmt(test)},{_fmt(gap)}"]
            (out_dir / "valgap.csv").write_text("\n".join(lines) + "\n")
    _persist_config(out_dir, args, {"which": which,
                                    "checkpoint": str(ckpt_path)})
    return EXIT_OK


_COMMANDS = {"extract": cmd_extract, "synth": cmd_synth, "loso": cmd_loso,
             "analyze": cmd_analyze}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits on usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        overrides = _load_overrides(args.config)
        return _COMMANDS[args.command](args, overrides)
    except TrainingDivergenceError as exc:
        print(f"eegdg: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (EegdgError, NotApplicableError, OSError) as exc:
        print(f"eegdg: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
