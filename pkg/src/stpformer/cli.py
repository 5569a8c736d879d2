"""Command-line entry point: ``stpformer {train,eval,inspect,synth}``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical
failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_run_config, parse_run_config, parse_synth
from .data import NormStats, load_dataset, prepare, save_dataset, synth_generate
from .errors import ConfigError, LoadError, NumericalError
from .model import ModelConfig, STPFormer
from .training import OptimizerState, evaluate, predict, train_loop

log = logging.getLogger("stpformer")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
CHECKPOINT_FORMAT = "stpformer-checkpoint"


def _dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def metrics_json(metrics):
    return {"mae": metrics["mae"], "rmse": metrics["rmse"], "mape": metrics["mape"]}


# -------------------------------------------------------------- checkpoints

def write_model_checkpoint(path, run_cfg, model, norm, opt=None, best_epoch=-1):
    tensors = {f"param.{k}": t.data for k, t in model.store.items()}
    if opt is not None:
        tensors.update({f"opt.m.{k}": v for k, v in opt.m.items()})
        tensors.update({f"opt.v.{k}": v for k, v in opt.v.items()})
    tensors["norm.mean"] = np.asarray(norm.mean)
    tensors["norm.std"] = np.asarray(norm.std)
    header = {
        "format": CHECKPOINT_FORMAT,
        "run_config": run_cfg.to_dict() if run_cfg is not None else None,
        "model_config": model.cfg.to_dict(),
        "best_epoch": int(best_epoch),
        "optimizer": None if opt is None else {"step": opt.step, "weight_decay": opt.weight_decay},
    }
    save_checkpoint(path, header, tensors)


def read_model_checkpoint(path, graph):
    """Rebuild (model, norm, header, optimizer state) from a checkpoint file."""
    header, tensors = load_checkpoint(path)
    if header.get("format") != CHECKPOINT_FORMAT:
        raise LoadError(f"{path}: not an STPFormer checkpoint")
    cfg = ModelConfig(**header["model_config"])
    model = STPFormer(cfg, graph)
    model.store.load_state({k[6:]: v for k, v in tensors.items() if k.startswith("param.")})
    norm = NormStats(tensors["norm.mean"], tensors["norm.std"])
    opt = None
    if header.get("optimizer"):
        opt = OptimizerState({k[6:]: v for k, v in tensors.items() if k.startswith("opt.m.")},
                             {k[6:]: v for k, v in tensors.items() if k.startswith("opt.v.")},
                             header["optimizer"]["step"], header["optimizer"]["weight_decay"])
    return model, norm, header, opt


# ----------------------------------------------------------------- commands

def _resolve_dataset(run_cfg, out_dir):
    if run_cfg.synth is not None:
        # materialize so `eval` on the written directory sees identical data
        data_dir = os.path.join(out_dir, "data")
        save_dataset(synth_generate(run_cfg.synth), data_dir)
        return load_dataset(data_dir, run_cfg.split)
    return load_dataset(run_cfg.path, run_cfg.split)


def cmd_train(config_path, out_dir):
    try:
        run_cfg = load_run_config(config_path)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    try:
        os.makedirs(out_dir, exist_ok=True)
        bundle = _resolve_dataset(run_cfg, out_dir)
    except (LoadError, OSError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    try:
        cfg = run_cfg.model_config(bundle.n_nodes, bundle.n_features, bundle.meta.steps_per_day)
        data = prepare(bundle, cfg.m, cfg.h)
        model = STPFormer(cfg, bundle.graph, seed=run_cfg.train.seed)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG

    log_path = os.path.join(out_dir, "train_log.jsonl")
    try:
        with open(log_path, "w") as fh:
            def emit(record):
                fh.write(json.dumps(record, sort_keys=True) + "\n")
                fh.flush()
            result = train_loop(model, data, run_cfg.train, on_epoch=emit)
        test = evaluate(model, data, "test", run_cfg.train)
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG

    write_model_checkpoint(os.path.join(out_dir, "checkpoint.bin"), run_cfg, model, data.norm,
                           result.optimizer, result.best_epoch)
    _dump_json(metrics_json(test), os.path.join(out_dir, "metrics.json"))
    log.info("best epoch %d, test MAE %.5f RMSE %.5f", result.best_epoch, test["mae"], test["rmse"])
    return EXIT_OK


def _load_for_eval(checkpoint, data_dir):
    header, _ = load_checkpoint(checkpoint)
    run = header.get("run_config") or {}
    split = tuple(run.get("data", {}).get("split", (0.6, 0.2, 0.2)))
    bundle = load_dataset(data_dir, split)
    mc = header["model_config"]
    if bundle.n_nodes != mc["n_nodes"] or bundle.n_features != mc["d_in"]:
        raise LoadError(
            f"checkpoint expects N={mc['n_nodes']}, d_in={mc['d_in']}; dataset has "
            f"N={bundle.n_nodes}, d_in={bundle.n_features}")
    if bundle.meta.steps_per_day != mc["steps_per_day"]:
        raise LoadError(f"checkpoint expects {mc['steps_per_day']} steps/day, dataset has "
                        f"{bundle.meta.steps_per_day}")
    model, norm, header, _ = read_model_checkpoint(checkpoint, bundle.graph)
    data = prepare(bundle, model.cfg.m, model.cfg.h, norm=norm)
    return model, data, bundle


def cmd_eval(checkpoint, data_dir, out_path=None):
    try:
        model, data, _ = _load_for_eval(checkpoint, data_dir)
        metrics = metrics_json(evaluate(model, data, "test"))
    except (LoadError, OSError, ConfigError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    out_path = out_path or os.path.join(os.path.dirname(os.path.abspath(checkpoint)), "eval_metrics.json")
    _dump_json(metrics, out_path)
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def write_ppm(path, values, cell=8):
    """Binary P6 heatmap, white (0) to dark red (max)."""
    v = np.asarray(values, dtype=np.float64)
    top = v.max() if v.size and v.max() > 0 else 1.0
    u = np.clip(v / top, 0.0, 1.0)
    rgb = np.stack([255 - 115 * u, 255 * (1 - u), 255 * (1 - u)], axis=-1).round().astype(np.uint8)
    rgb = np.repeat(np.repeat(rgb, cell, axis=0), cell, axis=1)
    rows, cols = rgb.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def cmd_inspect(checkpoint, data_dir, window, node, out_dir):
    try:
        model, data, bundle = _load_for_eval(checkpoint, data_dir)
    except (LoadError, OSError, ConfigError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    anchors = data.anchors["test"]
    if not 0 <= window < len(anchors):
        log.error("window %d out of range [0, %d)", window, len(anchors))
        return EXIT_DATA
    if not 0 <= node < bundle.n_nodes:
        log.error("node %d out of range [0, %d)", node, bundle.n_nodes)
        return EXIT_DATA
    pred, target = predict(model, data, anchors[window:window + 1])
    pred, target = pred[0], target[0]                   # (h, N, d)
    err = np.abs(pred - target).mean(axis=-1).T         # (N, h)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "error_heatmap.csv"), "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows([[repr(float(x)) for x in row] for row in err])
    write_ppm(os.path.join(out_dir, "error_heatmap.ppm"), err)
    with open(os.path.join(out_dir, f"prediction_node{node}.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["horizon", "feature", "predicted", "actual"])
        for step in range(pred.shape[0]):
            for f in range(pred.shape[2]):
                w.writerow([step + 1, f, repr(float(pred[step, node, f])), repr(float(target[step, node, f]))])
    return EXIT_OK


def cmd_synth(config_path, out_dir):
    try:
        with open(config_path) as fh:
            obj = json.load(fh)
        params = parse_run_config(obj).synth if "data" in obj else parse_synth(obj)
        if params is None:
            raise ConfigError("config's data section has no 'synth' parameters")
        bundle = synth_generate(params)
    except (ConfigError, json.JSONDecodeError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("cannot read %s: %s", config_path, exc)
        return EXIT_CONFIG
    try:
        save_dataset(bundle, out_dir)
    except OSError as exc:
        log.error("cannot write dataset to %s: %s", out_dir, exc)
        return EXIT_DATA
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="stpformer", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write checkpoint, log and test metrics")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="test-split metrics for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None, help="metrics JSON path (default: next to the checkpoint)")

    p = sub.add_parser("inspect", help="error heatmap and prediction curve for one test window")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--window", type=int, required=True)
    p.add_argument("--node", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset directory")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "train":
        return cmd_train(args.config, args.out)
    if args.command == "eval":
        return cmd_eval(args.checkpoint, args.data, args.out)
    if args.command == "inspect":
        return cmd_inspect(args.checkpoint, args.data, args.window, args.node, args.out)
    return cmd_synth(args.config, args.out)


if __name__ == "__main__":
    sys.exit(main())
