"""Command-line front end.

Usage::

    distreg <subcommand> --config PATH [--set key=value]... [--threads T] [--out DIR]

The config file is a JSON document with a single top-level key naming the
subcommand, whose value holds that subcommand's settings. ``--set`` takes a
dotted key into those settings and a JSON value (bare strings are accepted).
Relative paths inside the config are resolved against the config file's
directory.

Every run writes into ``DIR/<subcommand>-<config hash>-<UTC timestamp>``
together with ``resolved_config.json`` and a ``MANIFEST.json``.

Exit codes: 0 success, 1 usage, I/O or validation error, 2 numerical failure
(Sinkhorn non-convergence, factorization failure) or a model/embedding
fingerprint mismatch at prediction time.
"""

from __future__ import annotations

import argparse
import copy
import csv
import datetime as _dt
import hashlib
import json
import shutil
import sys
from pathlib import Path

import numpy as np

from distreg import __version__
from distreg._parallel import default_threads
from distreg.distributions import _parse_float, load_dataset, load_samples
from distreg.embeddings import (
    config_from_dict,
    embed_many,
    fingerprint,
    read_embeddings_csv,
    unit_ball_reference,
    write_embeddings_csv,
)
from distreg.exceptions import DistregError, FingerprintMismatchError, NumericalError
from distreg.experiments import reporting
from distreg.experiments.bias import run_bias_probe
from distreg.experiments.ecological import EcoSettings, run_ecological_experiment
from distreg.experiments.gmm import CVConfig, run_gmm_experiment
from distreg.experiments.rate import run_rate_experiment
from distreg.experiments.truth import Gaussian, GaussianMeanTask, Uniform1D
from distreg.kernel_ridge import KernelConfig, cross_validate, fit, load_model, predict_many, save_model


class UsageError(DistregError, ValueError):
    pass


# ---------------------------------------------------------------------------
# Defaults. ``None`` marks a required key; nested dicts are merged key by key
# except under FREE_KEYS, whose contents are validated by their consumers.

DEFAULTS = {
    "embed": {
        "samples": None,
        "labels": None,
        "embedding": None,
        "output": "embeddings.csv",
    },
    "fit": {
        "embeddings": None,
        "labels": None,
        "lambda": 1.0,
        "length_scale": 1.0,
        "cv": {"folds": None, "n_splits": 10, "holdout": 0.2, "seed": 0},
        "output": "model.json",
    },
    "predict": {
        "model": None,
        "embeddings": None,
        "samples": None,
        "embedding": None,
        "output": "predictions.csv",
    },
    "experiment-rate": {
        "embedding": {"kind": "mean_linear"},
        "truth": GaussianMeanTask().describe(),
        "n_grid": [64],
        "N_grid": [64, 256, 1024, 4096, 8192],
        "lambda": 0.1,
        "length_scale": 1.0,
        "replicates": 50,
        "large_sample_n0": 2**20,
        "seed": 0,
    },
    "experiment-gmm": {
        "d": 2,
        "C": 2,
        "grid": [[16, 16], [1024, 16], [1024, 64], [1024, 512], [1024, 1024], [1024, 2048]],
        "embeddings": {
            "mean": {"kind": "mean_linear"},
            "sliced_wasserstein": {"kind": "sliced_wasserstein", "num_directions": 10,
                                   "num_quantiles": 10, "trim": 0.0, "seed": 0},
            "sinkhorn": {"kind": "sinkhorn",
                         "reference_points": {"unit_ball": 100, "seed": 0}, "reg": 0.1},
        },
        "cv": CVConfig().to_dict(),
        "replicates": 5,
        "select_once": True,
        "seed": 0,
    },
    "experiment-bias": {
        "embedding": {"kind": "mean_linear"},
        "truth": {"law": "uniform", "low": 0.0, "high": 1.0},
        "N_grid": [2**k for k in range(6, 15)],
        "replicates": 2000,
        "probe_vectors": None,
        "control_variate": True,
        "seed": 0,
    },
    "experiment-eco": {
        "d_grid": [5, 10, 15, 20],
        "steps": 10,
        "probe_d": 5,
        "settings": EcoSettings().to_dict(),
        "seed": 0,
    },
}

FREE_KEYS = {"embedding", "embeddings", "truth"}
# required-looking keys that are checked by the command itself
_OPTIONAL = {
    "predict": ("embeddings", "samples", "embedding"),
    "experiment-bias": ("probe_vectors",),
    "experiment-eco": ("probe_d",),
}
PATH_KEYS = {
    "embed": ("samples", "labels"),
    "fit": ("embeddings", "labels"),
    "predict": ("model", "embeddings", "samples"),
}


def _merge(defaults: dict, given: dict, where: str) -> dict:
    unknown = set(given) - set(defaults)
    if unknown:
        raise UsageError(f"unknown config keys in {where or 'config'}: {sorted(unknown)}")
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        if isinstance(defaults[key], dict) and key not in FREE_KEYS:
            if not isinstance(value, dict):
                raise UsageError(f"{where}{key} must be an object")
            out[key] = _merge(defaults[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(payload: dict, overrides) -> dict:
    payload = copy.deepcopy(payload)
    for item in overrides or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        parts = key.split(".")
        node = payload
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise UsageError(f"--set {key}: {p} is not an object")
        node[parts[-1]] = _parse_value(value)
    return payload


def resolve_config(command: str, document: dict, overrides=(), base_dir: Path | None = None) -> dict:
    """Validate a config document for ``command`` and fill in defaults."""
    if not isinstance(document, dict) or list(document) != [command]:
        raise UsageError(
            f"config must hold exactly one top-level key {command!r}, found {list(document)}"
        )
    payload = apply_overrides(document[command] or {}, overrides)
    resolved = _merge(DEFAULTS[command], payload, "")
    missing = [k for k, v in resolved.items() if v is None and DEFAULTS[command][k] is None
               and k not in _OPTIONAL.get(command, ())]
    if missing:
        raise UsageError(f"missing required config keys for {command}: {missing}")
    if base_dir is not None:
        for key in PATH_KEYS.get(command, ()):
            if resolved.get(key):
                resolved[key] = str((base_dir / resolved[key]).resolve())
    return resolved


def config_hash(command: str, resolved: dict) -> str:
    text = json.dumps({command: resolved}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# Builders


def build_embedding(spec: dict, d: int | None = None):
    """Embedding config from JSON; a Sinkhorn reference may be ``{"unit_ball": n, "seed": s}``."""
    if not isinstance(spec, dict):
        raise UsageError("embedding config must be an object")
    spec = dict(spec)
    ref = spec.get("reference_points")
    if spec.get("kind") == "sinkhorn" and isinstance(ref, dict):
        if set(ref) - {"unit_ball", "seed"} or "unit_ball" not in ref:
            raise UsageError("reference_points must be a list of points or {unit_ball, seed}")
        if d is None:
            raise UsageError("a unit-ball reference needs the data dimension")
        spec["reference_points"] = unit_ball_reference(int(ref["unit_ball"]), d, int(ref.get("seed", 0)))
    try:
        return config_from_dict(spec)
    except TypeError as exc:
        raise UsageError(f"invalid embedding config: {exc}") from None


def build_law(spec: dict):
    spec = dict(spec)
    law = spec.pop("law", None)
    if law == "uniform":
        return Uniform1D(**spec)
    if law == "gaussian":
        if set(spec) != {"mean", "cov"}:
            raise UsageError("gaussian truth needs exactly mean and cov")
        return Gaussian(spec["mean"], spec["cov"])
    raise UsageError(f"unknown truth law {law!r}; expected 'uniform' or 'gaussian'")


def build_task(spec: dict) -> GaussianMeanTask:
    spec = dict(spec)
    if spec.pop("task", "gaussian_mean") != "gaussian_mean":
        raise UsageError("the rate experiment supports the 'gaussian_mean' truth task only")
    try:
        return GaussianMeanTask(**spec)
    except TypeError as exc:
        raise UsageError(f"invalid truth task: {exc}") from None


def build_lambda_rule(spec):
    """A number, or ``{"scale": c, "power_n": a, "power_N": b}`` for ``c n^a N^b``."""
    if isinstance(spec, (int, float)):
        return float(spec)
    if isinstance(spec, dict) and set(spec) <= {"scale", "power_n", "power_N"}:
        c, a, b = float(spec.get("scale", 1.0)), float(spec.get("power_n", 0.0)), float(spec.get("power_N", 0.0))
        return lambda n, N: c * n**a * N**b
    raise UsageError("lambda must be a number or {scale, power_n, power_N}")


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} file not found: {p}")
    return p


def _labels_by_group(path) -> dict:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["group_id", "y"]:
            raise UsageError(f"{path}:1: header must be group_id,y")
        for row in reader:
            if row and row[0] not in out:
                if len(row) != 2:
                    raise UsageError(f"{path}:{reader.line_num}: expected 2 fields, found {len(row)}")
                out[row[0]] = _parse_float(row[1], Path(path), reader.line_num, 2)
    return out


# ---------------------------------------------------------------------------
# Commands. Each returns (outputs, inputs, seeds).


def cmd_embed(cfg: dict, run_dir: Path, threads: int):
    samples = _require_file(cfg["samples"], "samples")
    labels = _require_file(cfg["labels"], "labels")
    ds = load_dataset(samples, labels)
    emb_cfg = build_embedding(cfg["embedding"], ds.dim)
    embeddings = embed_many(emb_cfg, ds.distributions, threads=threads)
    out = run_dir / cfg["output"]
    write_embeddings_csv(out, ds.group_ids, embeddings, emb_cfg)
    return [out, Path(str(out) + ".fingerprint.json")], [samples, labels], {}


def cmd_fit(cfg: dict, run_dir: Path, threads: int):
    emb_path = _require_file(cfg["embeddings"], "embeddings")
    lab_path = _require_file(cfg["labels"], "labels")
    ids, embeddings = read_embeddings_csv(emb_path)
    labels = _labels_by_group(lab_path)
    missing = [g for g in ids if g not in labels]
    if missing:
        raise UsageError(f"no label for groups {missing[:5]}")
    y = np.array([labels[g] for g in ids])
    lam, scale = cfg["lambda"], cfg["length_scale"]
    seeds = {}
    if isinstance(lam, list) or isinstance(scale, list):
        cv_cfg = cfg["cv"]
        cv = cross_validate(
            embeddings, y, np.atleast_1d(lam), np.atleast_1d(scale),
            folds=cv_cfg["folds"], seed=int(cv_cfg["seed"]),
            n_splits=int(cv_cfg["n_splits"]), holdout=float(cv_cfg["holdout"]),
        )
        lam, scale = cv.best_lambda, cv.best_scale
        seeds["cv"] = int(cv_cfg["seed"])
        reporting.write_csv(run_dir / "cv.csv", ["lambda", "length_scale", "mse"], cv.rows())
    model = fit(embeddings, y, float(lam), KernelConfig(float(scale)))
    out = run_dir / cfg["output"]
    save_model(model, out)
    outputs = [out] + ([run_dir / "cv.csv"] if seeds else [])
    return outputs, [emb_path, lab_path], seeds


def cmd_predict(cfg: dict, run_dir: Path, threads: int):
    model_path = _require_file(cfg["model"], "model")
    model = load_model(model_path)
    if cfg["embeddings"]:
        emb_path = _require_file(cfg["embeddings"], "embeddings")
        ids, embeddings = read_embeddings_csv(emb_path)
        inputs = [model_path, emb_path]
    elif cfg["samples"] and cfg["embedding"]:
        samples = _require_file(cfg["samples"], "samples")
        dists = load_samples(samples)
        emb_cfg = build_embedding(cfg["embedding"], dists[0].dim if dists else None)
        if fingerprint(emb_cfg) != model.fingerprint:
            raise FingerprintMismatchError(
                f"model was trained with embedding {model.fingerprint}, "
                f"query config has {fingerprint(emb_cfg)}"
            )
        ids = [d.group_id for d in dists]
        embeddings = embed_many(emb_cfg, dists, threads=threads)
        inputs = [model_path, samples]
    else:
        raise UsageError("predict needs either embeddings, or samples together with embedding")
    pred = predict_many(model, embeddings)
    out = run_dir / cfg["output"]
    reporting.write_csv(out, ["group_id", "y_hat"], zip(ids, pred.tolist()))
    return [out], inputs, {}


def cmd_experiment_rate(cfg: dict, run_dir: Path, threads: int):
    report = run_rate_experiment(
        build_embedding(cfg["embedding"], 1),
        build_task(cfg["truth"]),
        n_grid=[int(n) for n in cfg["n_grid"]],
        N_grid=[int(N) for N in cfg["N_grid"]],
        lambda_rule=build_lambda_rule(cfg["lambda"]),
        R=int(cfg["replicates"]),
        seed=int(cfg["seed"]),
        length_scale=float(cfg["length_scale"]),
        threads=threads,
        n0=int(cfg["large_sample_n0"]),
    )
    return reporting.write_report(report, run_dir, "report"), [], {"seed": int(cfg["seed"])}


def cmd_experiment_gmm(cfg: dict, run_dir: Path, threads: int):
    d = int(cfg["d"])
    embeddings = {name: build_embedding(spec, d) for name, spec in cfg["embeddings"].items()}
    cv = cfg["cv"]
    report = run_gmm_experiment(
        [tuple(c) for c in cfg["grid"]],
        embeddings,
        CVConfig(tuple(cv["lambda_grid"]), tuple(cv["scale_grid"]), cv["folds"],
                 int(cv["n_splits"]), float(cv["holdout"])),
        d=d, C=int(cfg["C"]), replicates=int(cfg["replicates"]), seed=int(cfg["seed"]),
        select_once=bool(cfg["select_once"]), threads=threads,
    )
    return reporting.write_report(report, run_dir, "report"), [], {"seed": int(cfg["seed"])}


def cmd_experiment_bias(cfg: dict, run_dir: Path, threads: int):
    law = build_law(cfg["truth"])
    report = run_bias_probe(
        build_embedding(cfg["embedding"], law.dim),
        law,
        N_grid=[int(N) for N in cfg["N_grid"]],
        replicates=int(cfg["replicates"]),
        probe_vectors=cfg["probe_vectors"],
        seed=int(cfg["seed"]),
        control_variate=bool(cfg["control_variate"]),
        threads=threads,
    )
    return reporting.write_report(report, run_dir, "report"), [], {"seed": int(cfg["seed"])}


def cmd_experiment_eco(cfg: dict, run_dir: Path, threads: int):
    st = dict(cfg["settings"])
    for key in ("lambda_grid", "scale_grid"):
        st[key] = tuple(float(v) for v in st[key])
    report = run_ecological_experiment(
        d_grid=[int(d) for d in cfg["d_grid"]],
        steps=int(cfg["steps"]),
        settings=EcoSettings(**st),
        probe_d=None if cfg["probe_d"] is None else int(cfg["probe_d"]),
        seed=int(cfg["seed"]),
        threads=threads,
    )
    return reporting.write_report(report, run_dir, "report"), [], {"seed": int(cfg["seed"])}


COMMANDS = {
    "embed": (cmd_embed, "embed grouped samples into a CSV of embedding vectors"),
    "fit": (cmd_fit, "fit kernel ridge regression on embeddings and labels"),
    "predict": (cmd_predict, "predict labels with a fitted model"),
    "experiment-rate": (cmd_experiment_rate, "two-stage sampling rate study"),
    "experiment-gmm": (cmd_experiment_gmm, "Gaussian-mixture mode-count study"),
    "experiment-bias": (cmd_experiment_bias, "near-unbiasedness probe of an embedding"),
    "experiment-eco": (cmd_experiment_eco, "simulated ecological inference study"),
}


# ---------------------------------------------------------------------------
# Entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="distreg", description="Distribution regression with Hilbertian embeddings.")
    parser.add_argument("--version", action="version", version=f"distreg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value (dotted key, JSON value)")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: available cores)")
        p.add_argument("--out", default="runs", help="parent directory for the run directory")
    return parser


def run(command: str, config_path, overrides=(), threads: int | None = None, out="runs") -> Path:
    """Execute one subcommand and return its run directory."""
    config_path = _require_file(config_path, "config")
    try:
        document = json.loads(config_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{config_path}: invalid JSON ({exc})") from None
    resolved = resolve_config(command, document, overrides, config_path.parent.resolve())
    threads = default_threads() if threads is None else max(1, int(threads))

    digest = config_hash(command, resolved)
    stamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")
    run_dir = Path(out) / f"{command}-{digest}-{stamp}"
    run_dir.mkdir(parents=True, exist_ok=False)
    try:
        reporting.write_json(run_dir / "resolved_config.json", {command: resolved})
        outputs, inputs, seeds = COMMANDS[command][0](resolved, run_dir, threads)
    except BaseException:
        shutil.rmtree(run_dir, ignore_errors=True)
        raise
    manifest = {
        "command": command,
        "version": __version__,
        "config_hash": digest,
        "created_utc": stamp,
        "threads": threads,
        "config_file": str(config_path.resolve()),
        "resolved_config": {command: resolved},
        "seeds": seeds,
        "inputs": [{"path": str(Path(p).resolve()), "sha256": _sha256(Path(p))} for p in inputs],
        "outputs": [{"path": Path(p).name, "sha256": _sha256(Path(p))} for p in outputs],
    }
    reporting.write_json(run_dir / "MANIFEST.json", manifest)
    return run_dir


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run_dir = run(args.command, args.config, args.set, args.threads, args.out)
    except (NumericalError, FingerprintMismatchError) as exc:
        print(f"distreg: error: {exc}", file=sys.stderr)
        return 2
    except (DistregError, ValueError, TypeError, KeyError, OSError) as exc:
        print(f"distreg: error: {exc}", file=sys.stderr)
        return 1
    print(run_dir)
    return 0


if __name__ == "__main__":
    sys.exit(main())
