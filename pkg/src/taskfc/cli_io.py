"""File formats and the ``taskfc`` command line.

Panel CSV: header ``subject,node,t0,...,tT`` and one row per (subject, node).
Stimulus CSV: one ``start,end`` row (seconds) per block; an optional header
row ``start,end`` is allowed.

Exit codes: 0 success, 2 invalid input or usage, 1 any other failure.
Every command writes ``<out>.manifest.json`` with the command line, the
resolved configuration, input digests and timestamps.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, competitors, harness
from .errors import (
    DegenerateInputError,
    InvalidArgumentError,
    RankDeficientError,
    TaskFCError,
)
from .ptfce import BoldPanel, ptfce_estimate, ptfce_matrix
from .signal_core import (
    CANONICAL_HRF,
    FrequencyBand,
    HrfSpec,
    SampledSignal,
    TimeGrid,
    boxcar_stimulus,
)
from .simgen import MechanismConfig, generate

DEFAULT_DELTA = 0.72


class ParseError(InvalidArgumentError):
    """A file could not be parsed."""


# --------------------------------------------------------------------------
# Files


def _fmt(x: float) -> str:
    return repr(float(x))


def save_bold_csv(panel: BoldPanel, path) -> None:
    m = panel.grid.num_points
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject", "node"] + [f"t{i}" for i in range(m)])
        for i, subject in enumerate(panel.subject_ids):
            for k, node in enumerate(panel.node_labels):
                writer.writerow([subject, node] + [_fmt(v) for v in panel.data[i, k]])


def load_bold_csv(path, delta: float = DEFAULT_DELTA) -> BoldPanel:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = rows[0]
    if len(header) < 4 or header[0] != "subject" or header[1] != "node":
        raise ParseError(f"{path}: header must start with subject,node,t0,...")
    m = len(header) - 2
    subjects, nodes, cells = [], [], {}
    for r, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != m + 2:
            raise ParseError(f"{path}: row {r} has {len(row)} columns, expected {m + 2}")
        subject, node = row[0], row[1]
        if (subject, node) in cells:
            raise ParseError(f"{path}: row {r} repeats subject {subject!r}, node {node!r}")
        values = np.empty(m)
        for c, cell in enumerate(row[2:], start=3):
            try:
                values[c - 3] = float(cell)
            except ValueError:
                raise ParseError(f"{path}: row {r}, column {c}: not a number: {cell!r}") from None
        if not np.all(np.isfinite(values)):
            raise ParseError(f"{path}: row {r} contains non-finite values")
        if subject not in subjects:
            subjects.append(subject)
        if node not in nodes:
            nodes.append(node)
        cells[(subject, node)] = values
    data = np.empty((len(subjects), len(nodes), m))
    for i, subject in enumerate(subjects):
        for k, node in enumerate(nodes):
            if (subject, node) not in cells:
                raise InvalidArgumentError(f"{path}: missing row for subject {subject!r}, node {node!r}")
            data[i, k] = cells[(subject, node)]
    return BoldPanel(TimeGrid(delta, m), tuple(nodes), data, tuple(subjects))


def save_stimulus_csv(intervals, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for start, end in intervals:
            writer.writerow([_fmt(start), _fmt(end)])


def load_stimulus_intervals(path) -> list:
    intervals = []
    with open(path, newline="") as fh:
        for r, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if r == 1 and [c.strip().lower() for c in row] == ["start", "end"]:
                continue
            if len(row) != 2:
                raise ParseError(f"{path}: row {r} must have exactly two columns")
            try:
                intervals.append((float(row[0]), float(row[1])))
            except ValueError:
                raise ParseError(f"{path}: row {r}: not a number") from None
    return sorted(intervals)


def load_stimulus_csv(path, grid: TimeGrid) -> SampledSignal:
    return boxcar_stimulus(load_stimulus_intervals(path), grid)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _clean(obj):
    """Replace non-finite floats by None so the JSON stays standard."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def write_manifest(out_path, command: str, argv, config: dict, seed, inputs, started: str) -> Path:
    manifest = {
        "command": command,
        "argv": list(argv),
        "config": config,
        "seed": seed,
        "tool_version": __version__,
        "input_digests": {str(p): file_digest(p) for p in inputs},
        "started_utc": started,
        "finished_utc": _now(),
    }
    path = Path(str(out_path) + ".manifest.json")
    write_json(manifest, path)
    return path


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


# --------------------------------------------------------------------------
# Argument parsing helpers


def _float_list(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> list:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _seed(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2**64)")
    return value


def _hrf(text: str) -> HrfSpec:
    values = _float_list(text)
    if len(values) not in (5, 6):
        raise argparse.ArgumentTypeError("--hrf needs a1,a2,b1,b2,c[,latency]")
    try:
        return HrfSpec(*values)
    except InvalidArgumentError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _band(text: str) -> FrequencyBand:
    values = _float_list(text)
    if len(values) != 2:
        raise argparse.ArgumentTypeError("--band needs LO,HI")
    try:
        return FrequencyBand(*values)
    except InvalidArgumentError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


SHORT_METHODS = {
    "ptfce": "ptfce",
    "naive": "naive_pearson",
    "task": "task_pearson",
    "beta": "beta_series",
    "coherence": "coherence",
}


def _method_key(text: str) -> str:
    """Map ``naive``/``task:median``/``ptfce`` style names to harness keys."""
    name, _, agg = text.partition(":")
    if name not in SHORT_METHODS and name not in SHORT_METHODS.values():
        raise InvalidArgumentError(f"unknown method {text!r}")
    full = SHORT_METHODS.get(name, name)
    if full == "ptfce":
        if agg:
            raise InvalidArgumentError("ptfce takes no aggregate")
        return "ptfce"
    agg = agg or "mean"
    if agg not in harness.AGGREGATES:
        raise InvalidArgumentError(f"aggregate must be mean or median, got {agg!r}")
    return f"{full}:{agg}"


def _methods(text: str) -> list:
    try:
        return [_method_key(x.strip()) for x in text.split(",") if x.strip()]
    except InvalidArgumentError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _settings(args) -> harness.EstimatorSettings:
    return harness.EstimatorSettings(hrf=args.hrf, band=args.band, grid_mode=args.grid_mode,
                                     oversample=args.oversample, lag_samples=args.lag)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="taskfc", description="Task-evoked functional connectivity tools.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def estimator_options(p):
        p.add_argument("--hrf", type=_hrf, default=CANONICAL_HRF, help="a1,a2,b1,b2,c[,latency]")
        p.add_argument("--band", type=_band, default=FrequencyBand(), help="LO,HI in Hz")
        p.add_argument("--grid-mode", choices=("dense", "fourier"), default="dense")
        p.add_argument("--oversample", type=int, default=16)
        p.add_argument("--lag", type=int, default=1, help="AMUSE lag in samples")

    p = sub.add_parser("simulate", help="generate a synthetic panel")
    p.add_argument("--mechanism", type=int, choices=(0, 1, 2), required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--rho", type=_float_list, required=True)
    p.add_argument("--noise-scale", type=float, default=1.0)
    p.add_argument("--signal-gain", type=float, default=1.0)
    p.add_argument("--hrf-scaling", choices=("unit_peak", "density"), default="unit_peak")
    p.add_argument("--delta", type=float, default=DEFAULT_DELTA)
    p.add_argument("--points", type=int, default=284)
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("estimate", help="estimate connectivity from a panel CSV")
    p.add_argument("--method", choices=tuple(SHORT_METHODS), required=True)
    p.add_argument("--aggregate", choices=harness.AGGREGATES, default="mean")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--stimulus", type=Path, required=True)
    p.add_argument("--nodes", default=None, help="K,L")
    p.add_argument("--all-pairs", action="store_true")
    p.add_argument("--delta", type=float, default=DEFAULT_DELTA)
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--curve-csv", type=Path, default=None)
    estimator_options(p)

    p = sub.add_parser("compare", help="compare methods on all node pairs")
    p.add_argument("--methods", type=_methods, required=True, help="e.g. ptfce,naive,task:median")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--stimulus", type=Path, required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--delta", type=float, default=DEFAULT_DELTA)
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--out", type=Path, required=True)
    estimator_options(p)

    p = sub.add_parser("bench", help="Monte Carlo experiments")
    p.add_argument("experiment", choices=("identification", "bias", "noise-sweep"))
    p.add_argument("--reps", type=int, required=True)
    p.add_argument("--mechanism", type=int, choices=(1, 2), default=1)
    p.add_argument("--n", type=int, default=308)
    p.add_argument("--ns", type=_int_list, default=[308])
    p.add_argument("--methods", type=_methods, default=["ptfce"])
    p.add_argument("--rhos", type=_float_list, default=[0.25, 0.5, 0.75])
    p.add_argument("--rho", type=float, default=0.75)
    p.add_argument("--lambdas", type=_float_list, default=[0.5, 2.0, 5.0])
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--threads", type=int, default=harness.default_workers(),
                   help="worker processes (default: all cores)")
    p.add_argument("--out", type=Path, required=True)
    estimator_options(p)
    return parser


# --------------------------------------------------------------------------
# Commands


def _cmd_simulate(args):
    mech = f"m{args.mechanism}"
    rho = tuple(args.rho)
    config = MechanismConfig(mech, args.n, rho, args.noise_scale, args.seed, TimeGrid(args.delta, args.points),
                             args.signal_gain, args.hrf_scaling)
    data = generate(config)
    save_bold_csv(data.panel, args.out)
    sidecar = {
        "mechanism": mech, "n": config.n, "rho": list(config.rho), "noise_scale": config.noise_scale,
        "signal_gain": config.signal_gain, "hrf_scaling": config.hrf_scaling, "seed": config.seed,
        "delta": config.grid.delta, "num_points": config.grid.num_points,
        "latent_betas": None if data.latent_betas is None else data.latent_betas.tolist(),
    }
    write_json(sidecar, Path(str(args.out) + ".json"))
    return {k: v for k, v in sidecar.items() if k != "latent_betas"}, []


def _load_inputs(args):
    panel = load_bold_csv(args.input, args.delta)
    stimulus = load_stimulus_csv(args.stimulus, panel.grid)
    return panel, stimulus


def _parse_nodes(text, panel):
    if text is None:
        raise InvalidArgumentError("--nodes K,L is required unless --all-pairs is given")
    parts = [x.strip() for x in text.split(",")]
    if len(parts) != 2:
        raise InvalidArgumentError("--nodes needs exactly two labels")
    if parts[0] == parts[1]:
        raise InvalidArgumentError("--nodes must name two different nodes")
    for x in parts:
        panel.node_index(x)
    return parts


def _competitor(method, panel, k, l, stimulus, args):
    if method == "naive":
        return competitors.naive_pearson(panel, k, l)
    if method == "task":
        return competitors.task_pearson(panel, k, l, stimulus)
    if method == "beta":
        return competitors.beta_series(panel, k, l, stimulus, args.hrf, args.hrf)
    return competitors.coherence_fc(panel, k, l, args.band)


def _competitor_dict(res, aggregate):
    out = {
        "method": res.method, "estimate": res.aggregate(aggregate), "aggregate": aggregate,
        "mean_aggregate": res.mean_aggregate, "median_aggregate": res.median_aggregate,
        "excluded_subjects": res.excluded, "per_subject": res.per_subject,
    }
    if res.curve is not None:
        out["curve"] = [{"freq": f, "value": v} for f, v in zip(*res.curve)]
    return out


def _cmd_estimate(args):
    panel, stimulus = _load_inputs(args)
    config = {"method": args.method, "aggregate": args.aggregate, "delta": args.delta,
              "hrf": vars(args.hrf), "band": [args.band.lower, args.band.upper],
              "grid_mode": args.grid_mode, "oversample": args.oversample, "lag": args.lag}
    curve_rows = []
    if args.all_pairs:
        labels = panel.node_labels
        if args.method == "ptfce":
            mat = ptfce_matrix(panel, stimulus, {x: args.hrf for x in labels}, args.band, args.seed,
                               args.grid_mode, args.oversample, args.lag)
            values = mat.values
            pairs = {f"{a},{b}": est.to_dict() for (a, b), est in mat.estimates.items()}
            for (a, b), est in mat.estimates.items():
                curve_rows += [(a, b, f, v) for f, v in zip(est.freqs, est.curve)]
            failures = {f"{a},{b}": msg for (a, b), msg in mat.failures.items()}
        else:
            values = np.eye(len(labels))
            pairs, failures = {}, {}
            for i in range(len(labels)):
                for j in range(i + 1, len(labels)):
                    try:
                        res = _competitor(args.method, panel, labels[i], labels[j], stimulus, args)
                    except TaskFCError as exc:
                        values[i, j] = values[j, i] = np.nan
                        failures[f"{labels[i]},{labels[j]}"] = str(exc)
                        continue
                    values[i, j] = values[j, i] = res.aggregate(args.aggregate)
                    pairs[f"{labels[i]},{labels[j]}"] = _competitor_dict(res, args.aggregate)
        result = {"method": args.method, "labels": list(labels), "matrix": values, "pairs": pairs,
                  "failures": failures}
    else:
        k, l = _parse_nodes(args.nodes, panel)
        if args.method == "ptfce":
            est = ptfce_estimate(panel, k, l, stimulus, args.hrf, args.hrf, args.band, args.seed,
                                 args.grid_mode, args.oversample, args.lag)
            result = {"method": "ptfce", **est.to_dict()}
            curve_rows = [(k, l, f, v) for f, v in zip(est.freqs, est.curve)]
        else:
            res = _competitor(args.method, panel, k, l, stimulus, args)
            result = {"node_pair": [k, l], **_competitor_dict(res, args.aggregate)}
            if res.curve is not None:
                curve_rows = [(k, l, f, v) for f, v in zip(*res.curve)]
    result["seed"] = args.seed
    write_json(result, args.out)
    if args.curve_csv is not None:
        with open(args.curve_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["node_k", "node_l", "freq", "value"])
            for a, b, f, v in curve_rows:
                writer.writerow([a, b, _fmt(f), _fmt(v) if np.isfinite(v) else ""])
    return config, [args.input, args.stimulus]


def _cmd_compare(args):
    panel, stimulus = _load_inputs(args)
    res = harness.compare_methods(panel, stimulus, args.methods, args.seed, _settings(args), args.threshold)
    result = {
        "methods": list(res.methods),
        "pairs": [list(p) for p in res.pairs],
        "estimates": {m: res.raw[m] for m in res.methods},
        "standardized": {m: res.standardized[m] for m in res.methods},
        "classified": {m: (None if res.classified[m] is None else res.classified[m].astype(int))
                       for m in res.methods},
        "degenerate_methods": list(res.degenerate),
        "kappa": res.kappa,
        "kappa_details": {f"{a}|{b}": vars(d) for (a, b), d in res.kappa_details.items()},
        "seed": args.seed,
    }
    write_json(result, args.out)
    config = {"methods": args.methods, "threshold": args.threshold, "delta": args.delta, "hrf": vars(args.hrf),
              "band": [args.band.lower, args.band.upper], "grid_mode": args.grid_mode}
    return config, [args.input, args.stimulus]


def _write_rows(rows, path):
    if not rows:
        raise InvalidArgumentError("no rows to write")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (_fmt(v) if isinstance(v, (float, np.floating)) else v) for k, v in row.items()})


def _cmd_bench(args):
    settings = _settings(args)
    config = {"experiment": args.experiment, "reps": args.reps, "hrf": vars(args.hrf),
              "band": [args.band.lower, args.band.upper], "grid_mode": args.grid_mode}
    if args.experiment == "identification":
        log = Path(str(args.out) + ".reps.csv")
        report = harness.identification_experiment(
            f"m{args.mechanism}", args.n, args.reps, args.methods, args.seed, settings, log, args.threads
        )
        rows = report.rows()
        config.update(mechanism=args.mechanism, n=args.n, methods=args.methods)
    elif args.experiment == "bias":
        rows = harness.bias_experiment(args.rhos, args.ns, args.reps, args.seed, settings, args.threads)
        config.update(rhos=args.rhos, ns=args.ns)
    else:
        rows = harness.noise_sweep(args.lambdas, args.rho, args.n, args.reps, args.seed, settings,
                                   workers=args.threads)
        config.update(lambdas=args.lambdas, rho=args.rho, n=args.n)
    _write_rows(rows, args.out)
    return config, []


COMMANDS = {"simulate": _cmd_simulate, "estimate": _cmd_estimate, "compare": _cmd_compare, "bench": _cmd_bench}


def run_cli(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    started = _now()
    try:
        config, inputs = COMMANDS[args.command](args)
        write_manifest(args.out, args.command, argv, config, getattr(args, "seed", None), inputs, started)
    except (InvalidArgumentError, DegenerateInputError, RankDeficientError, FileNotFoundError) as exc:
        print(f"taskfc: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the exit code contract covers every failure
        print(f"taskfc: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run_cli())
