"""File formats: raw-recording container, event logs, trial tables, model
checkpoints, training traces, LOSO reports and flat key-value configs.

All floats are written with ``repr`` (shortest exact round-trip), so rewriting
the same data yields byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .dg import SharedModel
from .errors import ParseError
from .evaluate import LosoReport
from .numcore import DenseLayer, Network
from .sigproc import EventLog, RawRecording, TrialTable


def _fmt(x) -> str:
    return repr(float(x))


# --- raw recording ---------------------------------------------------------

def save_raw_recording(path, recording: RawRecording,
                       earlobe_names: tuple[str, str] | None = None) -> None:
    """Text container: '#'-prefixed header, then one channel-major row of
    comma-separated samples per channel."""
    if earlobe_names is None and recording.earlobe_indices is not None:
        i, j = recording.earlobe_indices
        earlobe_names = (recording.channel_names[i], recording.channel_names[j])
    lines = [
        f"# sample_rate_hz={_fmt(recording.sample_rate_hz)}",
        f"# channel_names={','.join(recording.channel_names)}",
        f"# earlobe_channels={','.join(earlobe_names) if earlobe_names else ''}",
    ]
    for row in recording.samples:
        lines.append(",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_raw_recording(path) -> RawRecording:
    lines = Path(path).read_text().splitlines()
    header = {}
    data_start = 0
    for i, line in enumerate(lines):
        if not line.startswith("#"):
            data_start = i
            break
        try:
            key, val = line.lstrip("# ").split("=", 1)
        except ValueError:
            raise ParseError("malformed header line", line=i + 1)
        header[key.strip()] = val.strip()
    for key in ("sample_rate_hz", "channel_names"):
        if key not in header:
            raise ParseError(f"missing header field {key!r}")
    names = header["channel_names"].split(",")
    try:
        samples = np.array([[float(v) for v in line.split(",")]
                            for line in lines[data_start:] if line.strip()])
    except ValueError as exc:
        raise ParseError(f"bad sample value: {exc}")
    if samples.shape[0] != len(names):
        raise ParseError("sample row count does not match channel_names")
    earlobes = None
    if header.get("earlobe_channels"):
        ear_names = header["earlobe_channels"].split(",")
        try:
            earlobes = tuple(names.index(n) for n in ear_names)
        except ValueError:
            raise ParseError("earlobe channel name not in channel_names")
    return RawRecording(samples, float(header["sample_rate_hz"]), names, earlobes)


# --- event log -------------------------------------------------------------

def save_event_log(path, log: EventLog) -> None:
    lines = ["deviation_onset_s,response_onset_s"]
    for d, r in zip(log.deviation_onsets, log.response_onsets):
        lines.append(f"{_fmt(d)},{_fmt(r)}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_event_log(path) -> EventLog:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "deviation_onset_s,response_onset_s":
        raise ParseError("missing event-log header", line=1)
    dev, resp = [], []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise ParseError("expected two columns", line=i)
        try:
            dev.append(float(parts[0]))
            resp.append(float(parts[1]))
        except ValueError:
            raise ParseError("non-numeric onset", line=i)
    return EventLog(np.array(dev), np.array(resp))


# --- trial table -----------------------------------------------------------

def save_trial_table(path, table: TrialTable) -> None:
    d = table.features.shape[1]
    header = ["subject_id", "t_s"] + [f"f_{k:03d}" for k in range(d)] + ["di"]
    lines = [",".join(header)]
    for t, row, y in zip(table.trial_times, table.features, table.labels):
        lines.append(",".join([table.subject_id, _fmt(t)]
                             + [_fmt(v) for v in row] + [_fmt(y)]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_trial_table(path) -> TrialTable:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ParseError("empty trial-table file", line=1)
    header = lines[0].split(",")
    if header[:2] != ["subject_id", "t_s"] or header[-1] != "di":
        raise ParseError("bad trial-table header", line=1)
    d = len(header) - 3
    sid = None
    times, feats, labels = [], [], []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != d + 3:
            raise ParseError(f"expected {d + 3} columns, got {len(parts)}", line=i)
        if sid is None:
            sid = parts[0]
        elif parts[0] != sid:
            raise ParseError("multiple subject ids in one trial table", line=i)
        try:
            times.append(float(parts[1]))
            feats.append([float(v) for v in parts[2:-1]])
            labels.append(float(parts[-1]))
        except ValueError:
            raise ParseError("non-numeric value", line=i)
    if sid is None:
        raise ParseError("trial table has no data rows")
    return TrialTable(subject_id=sid, features=np.array(feats),
                      labels=np.array(labels), trial_times=np.array(times))


def load_trial_tables(data_dir) -> list[TrialTable]:
    """All *.csv trial tables in a directory, sorted by subject id."""
    tables = [load_trial_table(p) for p in sorted(Path(data_dir).glob("*.csv"))]
    return sorted(tables, key=lambda t: t.subject_id)


# --- model checkpoint ------------------------------------------------------

def _network_to_dict(net: Network) -> list[dict]:
    return [{"weights": layer.weights.tolist(), "biases": layer.biases.tolist(),
             "activation": layer.activation} for layer in net.layers]


def _network_from_dict(spec: list[dict]) -> Network:
    return Network([DenseLayer(np.array(l["weights"]), np.array(l["biases"]),
                               l["activation"]) for l in spec])


def save_checkpoint(path, model: SharedModel, seed_lineage=None,
                    variant: str | None = None) -> None:
    """Self-describing JSON checkpoint; save -> load -> save is byte-identical."""
    doc = {
        "format": "eegdg-checkpoint-1",
        "variant": variant,
        "seed_lineage": seed_lineage,
        "feature_weights": None if model.w is None else model.w.tolist(),
        "theta": _network_to_dict(model.theta),
        "psi": _network_to_dict(model.psi),
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_checkpoint(path):
    """Returns (SharedModel, metadata dict)."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "eegdg-checkpoint-1":
        raise ParseError(f"not a checkpoint file: {path}")
    w = doc["feature_weights"]
    model = SharedModel(w=None if w is None else np.array(w, dtype=np.float64),
                        theta=_network_from_dict(doc["theta"]),
                        psi=_network_from_dict(doc["psi"]))
    meta = {"variant": doc.get("variant"), "seed_lineage": doc.get("seed_lineage")}
    return model, meta


# --- training trace --------------------------------------------------------

def save_trace(path, trace: list[dict]) -> None:
    with open(path, "w") as fh:
        for rec in trace:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_trace(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


# --- LOSO report -----------------------------------------------------------

def save_report_csv(path, report: LosoReport) -> None:
    """Long format: algorithm, target, repeat, rmse, cc (blank when failed)."""
    lines = ["algorithm,target,repeat,rmse,cc"]
    for c in sorted(report.cells,
                    key=lambda c: (c.algorithm, c.target_subject, c.repeat)):
        r = "" if c.failed else _fmt(c.rmse)
        cc = "" if c.failed else _fmt(c.cc)
        lines.append(f"{c.algorithm},{c.target_subject},{c.repeat},{r},{cc}")
    Path(path).write_text("\n".join(lines) + "\n")


def save_report_summary(path, report: LosoReport) -> None:
    doc = {
        "algorithms": report.algorithms,
        "subjects": report.subjects,
        "repeats": report.repeats,
        "mean_rmse": {a: report.mean(a, "rmse") for a in report.algorithms},
        "mean_cc": {a: report.mean(a, "cc") for a in report.algorithms},
        "failed_cells": [
            {"algorithm": c.algorithm, "target": c.target_subject,
             "repeat": c.repeat, "error": c.error}
            for c in report.cells if c.failed
        ],
        "significance": {
            metric: {kind: np.asarray(mat).tolist() for kind, mat in entry.items()}
            for metric, entry in report.significance.items()
        },
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


# --- flat key-value config -------------------------------------------------

def load_flat_config(path) -> dict:
    """'key = value' lines; '#' starts a comment. Values parse as int, float,
    bool, or string; comma-separated values become lists."""
    out = {}
    for i, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError("expected 'key = value'", line=i)
        key, val = (part.strip() for part in line.split("=", 1))
        out[key] = _parse_value(val)
    return out


def save_flat_config(path, config: dict) -> None:
    lines = []
    for key in sorted(config):
        val = config[key]
        if isinstance(val, (list, tuple)):
            val = ",".join(str(v) for v in val)
        lines.append(f"{key} = {val}")
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_scalar(tok: str):
    if tok.lower() in ("true", "false"):
        return tok.lower() == "true"
    try:
        return int(tok)
    except ValueError:
        pass
    try:
        return float(tok)
    except ValueError:
        return tok


def _parse_value(val: str):
    if "," in val:
        return [_parse_scalar(tok.strip()) for tok in val.split(",")]
    return _parse_scalar(val)
