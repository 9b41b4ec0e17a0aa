"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or schema error, 3 numeric failure.
Settings resolve as command-line flag, then ``--config`` file (flat
``key = value`` lines using the option names below with dashes or
underscores), then built-in defaults.
"""

from __future__ import annotations

import argparse
import io
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .data import (
    FaultSpec,
    FleetConfig,
    SchemaError,
    generate_fleet,
    inject_fault,
    load_csv,
    load_labels,
    make_windows,
    windows_from_streams,
    write_csv,
    write_labels,
    stack_windows,
)
from .evaluation import cross_validate
from .features import correlation_report, fit_normalizer
from .model import ModelConfig, model_inputs, predict_normalized, window_scores
from .numerics import NonFiniteError
from .persistence import ModelFormatError, load_model, to_json
from .training import TrainConfig, derive_seed, fit_arrays, grid_search, history_csv

log = logging.getLogger("palstm")

DEFAULTS = {
    "seed": 0,
    "window": 256,
    "stride": None,
    "hidden_size": 64,
    "layers": 1,
    "k": 2,
    "epsilon": 1e-6,
    "latent_dim": None,
    "lr": 0.001,
    "batch_size": 32,
    "epochs": 100,
    "grad_clip": 5.0,
    "quantile": 0.95,
    "no_physics": False,
    "no_attention": False,
    "no_fusion": False,
    "folds": 5,
    # gen-data
    "vehicles": 20,
    "length": 2048,
    "gamma": 0.3,
    "faulty_vehicles": 5,
    "faults_per_vehicle": 1,
    "fault_kind": "stuck_voltage",
    "fault_duration": 512,
    "fault_magnitude": 5.0,
    # grid-search
    "layers_grid": "1,2,3,4",
    "neurons_grid": "32,64,128,256",
}

_INT = {"seed", "window", "stride", "hidden_size", "layers", "k", "latent_dim", "batch_size", "epochs", "folds",
        "vehicles", "length", "faulty_vehicles", "faults_per_vehicle", "fault_duration", "window_index"}
_FLOAT = {"epsilon", "lr", "grad_clip", "quantile", "gamma", "fault_magnitude"}
_BOOL = {"no_physics", "no_attention", "no_fusion"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _coerce(key, raw):
    if raw in ("", "none", "None"):
        return None
    if key in _BOOL:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"config key {key}: expected a boolean, got {raw!r}")
    try:
        if key in _INT:
            return int(raw)
        if key in _FLOAT:
            return float(raw)
    except ValueError:
        raise UsageError(f"config key {key}: cannot parse {raw!r}") from None
    return raw


def read_config_file(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, raw = (part.strip() for part in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in DEFAULTS:
                raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = _coerce(key, raw)
    return out


def _add_model_options(p):
    S = argparse.SUPPRESS
    p.add_argument("--window", type=int, default=S, help="window length T (default 256)")
    p.add_argument("--stride", type=int, default=S, help="window stride (default: window length)")
    p.add_argument("--hidden-size", type=int, default=S, help="LSTM width (default 64)")
    p.add_argument("--layers", type=int, default=S, help="encoder depth (default 1)")
    p.add_argument("--k", type=int, default=S, help="mileage-correlated channels to expand (default 2)")
    p.add_argument("--epsilon", type=float, default=S, help="rate-term smoothing (default 1e-6)")
    p.add_argument("--latent-dim", type=int, default=S, help="optional bottleneck after fusion")
    p.add_argument("--lr", type=float, default=S, help="Adam learning rate (default 0.001)")
    p.add_argument("--batch-size", type=int, default=S, help="default 32")
    p.add_argument("--epochs", type=int, default=S, help="default 100")
    p.add_argument("--grad-clip", type=float, default=S, help="global gradient-norm cap (default 5.0)")
    p.add_argument("--quantile", type=float, default=S, help="alarm quantile of training scores (default 0.95)")
    p.add_argument("--no-physics", action="store_true", default=S,
                   help="plain LSTM-AE: no interaction features, no fusion, no attention")
    p.add_argument("--no-attention", action="store_true", default=S, help="drop the attention gate")
    p.add_argument("--no-fusion", action="store_true", default=S,
                   help="drop the mileage projection and latent concatenation")


def _add_data_options(p, data_required=True):
    S = argparse.SUPPRESS
    p.add_argument("--data", required=data_required, default="-" if not data_required else S,
                   help="telemetry CSV ('-' for stdin)")
    p.add_argument("--labels", default=None, help="sidecar label CSV (vehicle_id,timestamp,label)")


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = _Parser(prog="palstm", description="Physics-aware LSTM autoencoder for battery fault detection")
    parser.add_argument("--config", default=None, help="flat key = value settings file")
    parser.add_argument("--seed", type=int, default=S, help="master seed (default 0)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-data", help="simulate a fleet with injected faults")
    p.add_argument("--out", required=True)
    p.add_argument("--labels-out", default=None, help="default: <out>.labels.csv")
    p.add_argument("--vehicles", type=int, default=S)
    p.add_argument("--length", type=int, default=S, help="records per vehicle")
    p.add_argument("--gamma", type=float, default=S, help="resistance growth per unit normalized mileage")
    p.add_argument("--faulty-vehicles", type=int, default=S)
    p.add_argument("--faults-per-vehicle", type=int, default=S)
    p.add_argument("--fault-kind", choices=("stuck_voltage", "offset_drop", "noise_burst"), default=S)
    p.add_argument("--fault-duration", type=int, default=S)
    p.add_argument("--fault-magnitude", type=float, default=S)

    p = sub.add_parser("analyze-correlation", help="mileage correlation of each channel")
    _add_data_options(p)
    p.add_argument("--window", type=int, default=S)
    p.add_argument("--stride", type=int, default=S)
    p.add_argument("--out", default="-")

    p = sub.add_parser("train", help="fit the model and alarm threshold on normal windows")
    _add_data_options(p)
    _add_model_options(p)
    p.add_argument("--model-out", required=True)
    p.add_argument("--history-out", default=None, help="default: <model-out>.history.csv")

    p = sub.add_parser("eval", help="k-fold cross-validation report")
    _add_data_options(p)
    _add_model_options(p)
    p.add_argument("--folds", type=int, default=S)
    p.add_argument("--report-out", required=True)
    p.add_argument("--roc-out", default=None, help="default: <report-out>.roc.csv")

    p = sub.add_parser("grid-search", help="cross-validated AUC over layers x neurons")
    _add_data_options(p)
    _add_model_options(p)
    p.add_argument("--folds", type=int, default=S)
    p.add_argument("--layers-grid", default=S, help="comma list (default 1,2,3,4)")
    p.add_argument("--neurons-grid", default=S, help="comma list (default 32,64,128,256)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("diagnose", help="score windows of a stream against a trained model")
    p.add_argument("--model", required=True)
    _add_data_options(p, data_required=False)
    p.add_argument("--stride", type=int, default=S)
    p.add_argument("--out", default="-")

    p = sub.add_parser("export-recon", help="original vs reconstructed trace for one window")
    p.add_argument("--model", required=True)
    _add_data_options(p)
    p.add_argument("--vehicle", default=None, help="vehicle id (default: first in file)")
    p.add_argument("--window-index", type=int, default=0)
    p.add_argument("--out", default="-")
    return parser


def resolve(args) -> dict:
    settings = dict(DEFAULTS)
    if args.config:
        settings.update(read_config_file(args.config))
    settings.update({k: v for k, v in vars(args).items() if k != "config"})
    return settings


def _configs(s, D=4):
    physics = not s["no_physics"]
    model_config = ModelConfig(
        T=s["window"],
        D=D,
        K=s["k"] if physics else 0,
        hidden_size=s["hidden_size"],
        layers=s["layers"],
        use_physics_features=physics,
        use_latent_fusion=physics and not s["no_fusion"],
        use_attention=physics and not s["no_attention"],
        latent_dim=s["latent_dim"],
    )
    train_config = TrainConfig(
        learning_rate=s["lr"],
        batch_size=s["batch_size"],
        epochs=s["epochs"],
        grad_clip_norm=s["grad_clip"],
        seed=s["seed"],
        quantile=s["quantile"],
    )
    return model_config, train_config


def write_atomic(path, text: str) -> None:
    """Write ``text`` via a temporary file and rename; ``-`` means stdout."""
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _sibling(path, suffix):
    p = Path(path)
    return str(p.with_name(p.stem + suffix))


def _load_streams(s):
    src = s["data"]
    streams = load_csv(sys.stdin if src == "-" else src)
    if s.get("labels"):
        load_labels(s["labels"], streams)
    return streams


def _windows(s, streams):
    T = s["window"]
    windows = windows_from_streams(streams, T, s["stride"] or T)
    if not windows:
        raise SchemaError(f"no stream is at least {T} records long")
    return windows


def cmd_gen_data(s):
    config = FleetConfig(n_vehicles=s["vehicles"], stream_length=s["length"], seed=s["seed"], gamma=s["gamma"])
    fleet = generate_fleet(config)
    n_faulty = min(s["faulty_vehicles"], len(fleet))
    duration = s["fault_duration"]
    if n_faulty and s["faults_per_vehicle"] * duration > config.stream_length:
        raise SchemaError("faults do not fit in the stream; lower --fault-duration or --faults-per-vehicle")
    for v in range(len(fleet) - n_faulty, len(fleet)):
        rng = np.random.default_rng(derive_seed(s["seed"], "faults", v))
        # one fault per equal slot so spans never overlap
        slot = config.stream_length // max(s["faults_per_vehicle"], 1)
        for j in range(s["faults_per_vehicle"]):
            onset = j * slot + int(rng.integers(0, slot - duration + 1))
            spec = FaultSpec(s["fault_kind"], onset, duration, s["fault_magnitude"])
            fleet[v] = inject_fault(fleet[v], spec, rng)
    buf = io.StringIO()
    write_csv(fleet, buf)
    write_atomic(s["out"], buf.getvalue())
    buf = io.StringIO()
    write_labels(fleet, buf)
    write_atomic(s["labels_out"] or _sibling(s["out"], ".labels.csv"), buf.getvalue())
    log.info("wrote %d vehicles, %d faulty", len(fleet), n_faulty)


def cmd_analyze_correlation(s):
    windows = [w for w in _windows(s, _load_streams(s)) if w.label == 0]
    X, m, _ = stack_windows(windows)
    report = correlation_report(X, m, fit_normalizer(X, m))
    write_atomic(s["out"], report.to_table())


def _split(windows):
    normal = [w for w in windows if w.label == 0]
    fault = [w for w in windows if w.label == 1]
    return normal, fault


def cmd_train(s):
    normal, _ = _split(_windows(s, _load_streams(s)))
    if len(normal) < 2:
        raise SchemaError("need at least two normal windows to train")
    X, m, _ = stack_windows(normal)
    model_config, train_config = _configs(s, X.shape[2])
    result = fit_arrays(X, m, model_config, train_config, s["epsilon"])
    write_atomic(s["model_out"], to_json(result))
    write_atomic(s["history_out"] or _sibling(s["model_out"], ".history.csv"), history_csv(result.history))
    log.info("trained on %d windows, threshold %.6g", len(X), result.threshold.lam)


def _labelled(s):
    normal, fault = _split(_windows(s, _load_streams(s)))
    if not fault:
        raise SchemaError("no fault-labelled windows; pass --labels")
    return normal, fault


def cmd_eval(s):
    normal, fault = _labelled(s)
    model_config, train_config = _configs(s)
    cv = cross_validate(normal, fault, model_config, train_config, folds=s["folds"], epsilon=s["epsilon"])
    write_atomic(s["report_out"], cv.to_csv())
    write_atomic(s["roc_out"] or _sibling(s["report_out"], ".roc.csv"), cv.roc_csv())


def _int_list(text, name):
    try:
        values = [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{name} must be a comma-separated list of integers") from None
    if not values:
        raise UsageError(f"{name} is empty")
    return values


def cmd_grid_search(s):
    layers = _int_list(s["layers_grid"], "--layers-grid")
    neurons = _int_list(s["neurons_grid"], "--neurons-grid")
    normal, fault = _labelled(s)
    model_config, train_config = _configs(s)
    result = grid_search(normal, fault, layers, neurons, model_config, train_config, s["folds"], s["epsilon"])
    write_atomic(s["out"], result.to_csv())


DIAGNOSE_HEADER = "vehicle_id,window_start,timestamp_end,mileage,score,threshold,flag,label"


def cmd_diagnose(s):
    fit = load_model(s["model"])
    T = fit.model_config.T
    streams = _load_streams(s)
    lam = fit.threshold.lam
    lines = [DIAGNOSE_HEADER]
    for stream in streams:
        if len(stream) < T:
            log.warning("vehicle %s has %d records, fewer than window %d; skipped", stream.vehicle_id, len(stream), T)
            continue
        windows = make_windows(stream, T, s["stride"] or T)
        X, m, y = stack_windows(windows)
        scores = fit.score(X, m)
        for w, score, label in zip(windows, scores, y):
            flag = int(score > lam)
            ts = stream.timestamp[w.start + T - 1]
            lines.append(f"{stream.vehicle_id},{w.start},{float(ts)!r},{w.mileage!r},{float(score)!r},{lam!r},{flag},{label}")
    write_atomic(s["out"], "\n".join(lines) + "\n")


def cmd_export_recon(s):
    fit = load_model(s["model"])
    T = fit.model_config.T
    streams = _load_streams(s)
    if not streams:
        raise SchemaError("no records in input")
    if s["vehicle"] is None:
        stream = streams[0]
    else:
        matches = [st for st in streams if st.vehicle_id == s["vehicle"]]
        if not matches:
            raise SchemaError(f"vehicle {s['vehicle']!r} not found")
        stream = matches[0]
    windows = make_windows(stream, T, T)
    idx = s["window_index"]
    if not 0 <= idx < len(windows):
        raise SchemaError(f"window index {idx} out of range (vehicle has {len(windows)} windows)")
    w = windows[idx]
    inputs, m, targets = model_inputs(w.values[None], [w.mileage], fit.stats, fit.spec, fit.model_config)
    x_hat = predict_normalized(fit.params, inputs, m, fit.model_config)
    recon = fit.stats.denormalize(x_hat[0])
    score = float(window_scores(x_hat, targets)[0])
    names = fit.correlation.names
    head = ["step", "timestamp"] + [c for n in names for c in (n, f"{n}_recon")]
    lines = [",".join(head)]
    for t in range(T):
        row = [str(t), repr(float(stream.timestamp[w.start + t]))]
        for d in range(len(names)):
            row += [repr(float(w.values[t, d])), repr(float(recon[t, d]))]
        lines.append(",".join(row))
    write_atomic(s["out"], "\n".join(lines) + "\n")
    log.info("window score %.6g, threshold %.6g", score, fit.threshold.lam)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "analyze-correlation": cmd_analyze_correlation,
    "train": cmd_train,
    "eval": cmd_eval,
    "grid-search": cmd_grid_search,
    "diagnose": cmd_diagnose,
    "export-recon": cmd_export_recon,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage())
        s = resolve(args)
        logging.basicConfig(level=logging.INFO if s.get("verbose") else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        COMMANDS[args.command](s)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return 1
    except (NonFiniteError, FloatingPointError) as exc:
        sys.stderr.write(f"numeric failure: {exc}\n")
        return 3
    except (SchemaError, ModelFormatError, ValueError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    return 0


def main():
    sys.exit(run())
