"""Command-line pipeline: generate -> embed -> fit -> evaluate.

Every command reads the same JSON run configuration and writes into
``<out>/<command>/`` together with the fully resolved configuration it ran.
"""

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import datasets, forward, recon, spectral, storage
from .metrics import error_report

log = logging.getLogger("chainspec")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2

BOX_MASK = (33, 53, 73, 93, 123, 133)


class ConfigError(ValueError):
    pass


def _fields(cls):
    return {f.name: f.default for f in dataclasses.fields(cls)}


_DATASET_EXTRA = {"kind": "box2d", "test_fraction": 0.1, "split_seed": None}
_GRAPH_DEFAULTS = {**_fields(spectral.GraphConfig), "K": None}
_GRAPH_DEFAULTS["sigma"] = None
# per dataset kind: (graph sigma, number of eigenvectors)
_GRAPH_BY_KIND = {"box2d": (96.0, 20), "backbone3d": (None, 10)}
_FIT_DEFAULTS = {**_fields(recon.FitConfig), "mask": None}
_FIT_DEFAULTS["seed"] = None
_EVAL_DEFAULTS = {"aligned": False}
_PATH_DEFAULTS = {"dataset": None, "basis": None, "predictions": None, "history": None}
_TOP_DEFAULTS = {"out": "chainspec-run", "seed": 0, "threads": None}
_SECTIONS = ("dataset", "graph", "fit", "evaluate", "paths")


def _dataset_defaults(kind):
    cls = {"box2d": datasets.Box2DConfig, "backbone3d": datasets.Backbone3DConfig}.get(kind)
    if cls is None:
        raise ConfigError(f"dataset.kind must be 'box2d' or 'backbone3d', got {kind!r}")
    d = {**_DATASET_EXTRA, **_fields(cls)}
    d["kind"] = kind
    d["seed"] = None
    return cls, d


def _merge(section, defaults, given):
    if not isinstance(given, dict):
        raise ConfigError(f"'{section}' must be an object")
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown key(s) in '{section}': {', '.join(unknown)}")
    return {**defaults, **given}


def resolve_config(raw, seed=None, out=None, threads=None):
    """Fill defaults, reject unknown keys and apply command-line overrides."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = sorted(set(raw) - set(_TOP_DEFAULTS) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    cfg = {k: raw.get(k, v) for k, v in _TOP_DEFAULTS.items()}
    if seed is not None:
        cfg["seed"] = seed
    if out is not None:
        cfg["out"] = out
    if threads is not None:
        cfg["threads"] = threads
    if cfg["threads"] is None:
        cfg["threads"] = int(os.environ.get("CHAINSPEC_THREADS", "1") or 1)
    if int(cfg["threads"]) < 1:
        raise ConfigError("threads must be >= 1")
    if not isinstance(cfg["seed"], int) or not 0 <= cfg["seed"] < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")

    kind = raw.get("dataset", {}).get("kind", "box2d") if isinstance(raw.get("dataset"), dict) else "box2d"
    _, ddef = _dataset_defaults(kind)
    cfg["dataset"] = _merge("dataset", ddef, raw.get("dataset", {}))
    cfg["graph"] = _merge("graph", _GRAPH_DEFAULTS, raw.get("graph", {}))
    g_sigma, g_K = _GRAPH_BY_KIND[kind]
    if cfg["graph"]["sigma"] is None:
        cfg["graph"]["sigma"] = g_sigma if g_sigma is not None else cfg["dataset"]["graph_sigma"]
    if cfg["graph"]["K"] is None:
        cfg["graph"]["K"] = g_K
    cfg["fit"] = _merge("fit", _FIT_DEFAULTS, raw.get("fit", {}))
    cfg["evaluate"] = _merge("evaluate", _EVAL_DEFAULTS, raw.get("evaluate", {}))
    cfg["paths"] = _merge("paths", _PATH_DEFAULTS, raw.get("paths", {}))
    # seeds left unset follow the run seed
    for sec, key in (("dataset", "seed"), ("dataset", "split_seed"), ("fit", "seed")):
        if cfg[sec][key] is None:
            cfg[sec][key] = cfg["seed"]
    if isinstance(cfg["dataset"].get("center"), list):
        cfg["dataset"]["center"] = tuple(cfg["dataset"]["center"])
    out_dir = cfg["out"]
    defaults = {"dataset": os.path.join(out_dir, "generate"),
                "basis": os.path.join(out_dir, "embed"),
                "predictions": os.path.join(out_dir, "fit", "predictions.cspc"),
                "history": os.path.join(out_dir, "fit", "history.tsv")}
    for k, v in defaults.items():
        if cfg["paths"][k] is None:
            cfg["paths"][k] = v
    return cfg


def load_config(path, **overrides):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    try:
        return resolve_config(raw, **overrides)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, tuple):
        return list(o)
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _prepare(cfg, name):
    d = os.path.join(cfg["out"], name)
    os.makedirs(d, exist_ok=True)
    _write_json(os.path.join(d, "resolved_config.json"), cfg)
    return d


def _build_dataset(dcfg):
    cls, _ = _dataset_defaults(dcfg["kind"])
    kwargs = {k: v for k, v in dcfg.items() if k not in _DATASET_EXTRA}
    if "center" in kwargs:
        kwargs["center"] = tuple(kwargs["center"])
    try:
        c = cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"dataset: {exc}") from None
    if dcfg["kind"] == "box2d":
        data = datasets.sample_box_arms(c)
        stats = None
    else:
        if c.trajectory_path:
            try:
                frames = datasets.load_trajectory(c.trajectory_path)
            except ValueError as exc:
                raise storage.FormatError(str(exc)) from None
        else:
            frames = datasets.synthetic_backbone_trajectory()
        stats = datasets.spacing_stats(frames)
        data = datasets.sample_backbone(frames, c)
    data = datasets.split(data, dcfg["test_fraction"], np.random.default_rng(dcfg["split_seed"]))
    return data, stats


def cmd_generate(cfg):
    out = _prepare(cfg, "generate")
    data, stats = _build_dataset(cfg["dataset"])
    target = cfg["paths"]["dataset"]
    storage.save_dataset(target, data)
    snr = forward.snr(data.clean, data.noise_variance) if data.noise_variance > 0 else float("nan")
    spacing = [f.spacings() for f in (datasets.DiscreteCurve(z, data.delta) for z in data.truth)]
    spacing = np.concatenate(spacing)
    summary = {"n": len(data), "n_test": int(data.is_test.sum()), "snr": snr,
               "clean_variance": float(np.var(data.clean)),
               "spacing_mean": float(spacing.mean()), "spacing_variance": float(spacing.var())}
    if stats is not None:
        summary["trajectory_spacing_mean"], summary["trajectory_spacing_variance"] = stats
    _write_json(os.path.join(out, "summary.json"), summary)
    print(f"particles: {len(data)} ({summary['n_test']} test)")
    print(f"SNR: {snr:.4f} (clean variance {summary['clean_variance']:.4f})")
    print(f"spacing: mean {summary['spacing_mean']:.6f} variance {summary['spacing_variance']:.3g}")
    if stats is not None:
        print(f"trajectory spacing: mean {stats[0]:.4f} variance {stats[1]:.4f}")
    return summary


def _graph_config(g):
    try:
        return spectral.GraphConfig(g["kernel"], g["sigma"], g["k"], g["sparsify_threshold"])
    except ValueError as exc:
        raise ConfigError(f"graph: {exc}") from None


def _scatter_tsv(Phi, cols, labels):
    head = "\t".join([f"phi{c}" for c in cols] + ([f"label{j}" for j in range(labels.shape[1])]
                                                   if labels is not None else []))
    rows = [head]
    for i in range(Phi.shape[0]):
        vals = [repr(float(Phi[i, c])) for c in cols]
        if labels is not None:
            vals += [repr(float(v)) for v in labels[i]]
        rows.append("\t".join(vals))
    return "\n".join(rows) + "\n"


def cmd_embed(cfg):
    _prepare(cfg, "embed")
    data = storage.load_dataset(cfg["paths"]["dataset"])
    K = cfg["graph"]["K"]
    if not isinstance(K, int) or not 1 <= K <= len(data):
        raise ConfigError(f"graph.K must be an integer in [1, {len(data)}]")
    basis = spectral.embed(data.betas, _graph_config(cfg["graph"]), K)
    target = cfg["paths"]["basis"]
    os.makedirs(target, exist_ok=True)
    storage.write_array(os.path.join(target, "eigenvalues.cspc"), basis.eigenvalues)
    storage.write_array(os.path.join(target, "phi.cspc"), basis.Phi)
    labels = data.meta.get("box_params", data.meta.get("frame_index"))
    if labels is not None:
        labels = np.asarray(labels, dtype=float).reshape(len(data), -1)
    # component 0 is (nearly) constant, so scatters start at 1
    for name, cols in (("scatter2d.tsv", (1, 2)), ("scatter3d.tsv", (1, 2, 3))):
        if K > max(cols):
            with open(os.path.join(target, name), "w") as fh:
                fh.write(_scatter_tsv(basis.Phi, cols, labels))
    print("eigenvalues: " + " ".join(f"{v:.6g}" for v in basis.eigenvalues))
    return basis


def load_basis(path, n=None):
    vals = storage.read_array(os.path.join(path, "eigenvalues.cspc"))
    Phi = storage.read_array(os.path.join(path, "phi.cspc"))
    if vals.ndim != 1 or Phi.ndim != 2 or Phi.shape[1] != vals.size:
        raise storage.FormatError(f"{path}: eigenvalues and eigenvectors disagree")
    if n is not None and Phi.shape[0] != n:
        raise ConfigError(f"basis has {Phi.shape[0]} rows but the dataset has {n} particles")
    return spectral.SpectralBasis(vals, Phi)


def _mask(spec, n_angles):
    if spec is None or spec == "all":
        return None
    if spec == "box":
        return BOX_MASK
    if not isinstance(spec, list) or not all(isinstance(j, int) for j in spec):
        raise ConfigError("fit.mask must be null, 'all', 'box' or a list of 1-based angle indices")
    bad = [j for j in spec if not 1 <= j <= n_angles]
    if bad:
        raise ConfigError(f"fit.mask indices {bad} outside [1, {n_angles}]")
    return tuple(spec)


def cmd_fit(cfg):
    out = _prepare(cfg, "fit")
    data = storage.load_dataset(cfg["paths"]["dataset"])
    basis = load_basis(cfg["paths"]["basis"], len(data))
    f = cfg["fit"]
    try:
        fit_cfg = recon.FitConfig(**{k: v for k, v in f.items() if k != "mask"})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"fit: {exc}") from None
    mask = _mask(f["mask"], data.m - 2)
    coeffs, history = recon.sgd_fit(data, basis, data.ref_angles, data.fwd, fit_cfg, mask,
                                    threads=int(cfg["threads"]))
    storage.write_array(os.path.join(out, "A.cspc"), coeffs.A)
    if coeffs.B is not None:
        storage.write_array(os.path.join(out, "B.cspc"), coeffs.B)
    with open(cfg["paths"]["history"], "w") as fh:
        fh.write(history.to_tsv())
    test = data.test_indices
    pred = recon.predict_curves(coeffs, test, data, basis, data.ref_angles)
    storage.write_array(cfg["paths"]["predictions"], pred)
    storage.write_array(os.path.join(os.path.dirname(cfg["paths"]["predictions"]),
                                     "prediction_indices.cspc"), test.astype(float))
    last = len(history) - 1
    print(f"epochs: {history.epoch[-1]} steps: {history.steps[-1]}")
    print(f"train loss: {history.train_loss[0]:.6g} -> {history.train_loss[last]:.6g}")
    if test.size:
        print(f"test avg error: {history.avg_err[0]:.4f} -> {history.avg_err[last]:.4f}")
    return coeffs, history


def cmd_evaluate(cfg):
    out = _prepare(cfg, "evaluate")
    data = storage.load_dataset(cfg["paths"]["dataset"])
    if data.truth is None:
        raise ConfigError("dataset has no ground truth to evaluate against")
    test = data.test_indices
    if test.size == 0:
        raise ConfigError("dataset has no test particles")
    pred = storage.read_array(cfg["paths"]["predictions"])
    if pred.shape != (test.size, data.m, data.dim):
        raise ConfigError(f"predictions have shape {pred.shape}, expected "
                          f"{(test.size, data.m, data.dim)}")
    truth = data.truth[test]
    report = error_report(truth, pred)
    zero = recon.CoefficientMatrices.zeros(data.m - 2, 1, data.dim)
    baseline = error_report(truth, recon.predict_curves(
        zero, test, data, spectral.SpectralBasis(np.zeros(1), np.zeros((len(data), 1))),
        data.ref_angles))
    summary = {"max_error": report.max_error, "avg_error": report.avg_error,
               "baseline_max_error": baseline.max_error,
               "baseline_avg_error": baseline.avg_error}
    if cfg["evaluate"]["aligned"]:
        from .metrics import aligned_error_report
        al = aligned_error_report(truth, pred)
        summary["aligned_max_error"], summary["aligned_avg_error"] = al.max_error, al.avg_error
    with open(os.path.join(out, "report.tsv"), "w") as fh:
        fh.write(report.to_tsv())
    hist_path = cfg["paths"]["history"]
    if os.path.exists(hist_path):
        with open(hist_path) as fh:
            try:
                h = recon.FitHistory.from_tsv(fh.read())
            except ValueError as exc:
                raise storage.FormatError(f"{hist_path}: {exc}") from None
        with open(os.path.join(out, "error_curves.tsv"), "w") as fh:
            fh.write("epoch\tmax_err\tavg_err\n")
            for e, mx, av in zip(h.epoch, h.max_err, h.avg_err):
                fh.write(f"{e}\t{mx!r}\t{av!r}\n")
    _write_json(os.path.join(out, "summary.json"), summary)
    print(f"max error: {report.max_error:.4f} (baseline {baseline.max_error:.4f})")
    print(f"avg error: {report.avg_error:.4f} (baseline {baseline.avg_error:.4f})")
    return summary


COMMANDS = {"generate": cmd_generate, "embed": cmd_embed, "fit": cmd_fit, "evaluate": cmd_evaluate}


def _u64(text):
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("threads must be >= 1")
    return v


def build_parser():
    p = argparse.ArgumentParser(prog="chainspec", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", help="output root directory (overrides config)")
    p.add_argument("--seed", type=_u64, help="run seed (overrides config)")
    p.add_argument("--threads", type=_positive, help="worker threads (default: CHAINSPEC_THREADS or 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out, threads=args.threads)
        COMMANDS[args.command](cfg)
    except (OSError, storage.FormatError) as exc:
        print(f"chainspec: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, IndexError, KeyError) as exc:
        print(f"chainspec: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
