"""Command-line surface.

Every stage reads and writes documented file formats so stages compose via
files, and every run writes its resolved configuration next to its outputs;
``rerun <config>`` reproduces the outputs byte-for-byte.

Exit codes: 0 success, 1 usage or input error, 2 degenerate mixture fit,
3 training divergence.
"""

import argparse
import ast
import csv
import json
import os
import sys

import numpy as np

from . import bmm as bmm_mod
from . import dataset as ds_mod
from . import linreg as lr_mod
from . import pipeline as pl_mod
from . import scores as sc_mod
from . import trace as tr_mod
from .errors import (
    DegenerateFitError,
    DisagreeNetError,
    TrainingDivergenceError,
)
from .seeds import derive_seed
from .trainer import TrainConfig, train_ensemble

CONFIG_VERSION = 1
WORKERS_ENV = "DISAGREENET_WORKERS"


class CliError(Exception):
    """Usage/input error; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _require_file(path, what):
    if not os.path.isfile(path):
        raise CliError(f"{what} not found: {path}")
    return path


def _write_config(subcommand: str, args: dict, config_path: str) -> None:
    lines = [f"config_version = {CONFIG_VERSION}", f"subcommand = {subcommand!r}"]
    for key in sorted(args):
        lines.append(f"{key} = {args[key]!r}")
    with open(config_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _read_config(path):
    values = {}
    with open(_require_file(path, "config file")) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            key, _, raw = line.partition(" = ")
            values[key] = ast.literal_eval(raw)
    if values.pop("config_version", None) != CONFIG_VERSION:
        raise CliError("unsupported config version")
    sub = values.pop("subcommand", None)
    if sub not in COMMANDS:
        raise CliError(f"config names unknown subcommand {sub!r}")
    return sub, values


def _config_path_for(out: str, is_dir: bool, subcommand: str) -> str:
    if is_dir:
        os.makedirs(out, exist_ok=True)
        return os.path.join(out, f"{subcommand}.config.txt")
    parent = os.path.dirname(os.path.abspath(out))
    os.makedirs(parent, exist_ok=True)
    return out + ".config.txt"


# ---------------------------------------------------------------- commands


def cmd_gen_data(a):
    ds = ds_mod.make_blobs(a["classes"], a["per_class"], a["dim"],
                           a["separation"], a["seed"])
    ds_mod.save_csv(ds, a["out"])
    return 0


def cmd_inject_noise(a):
    ds = ds_mod.load_csv(_require_file(a["data"], "dataset"))
    perm = None
    if a.get("permutation"):
        perm = [int(v) for v in a["permutation"].split(",")]
    spec = ds_mod.NoiseSpec(kind=a["kind"], rate=a["rate"], seed=a["seed"],
                            permutation=perm)
    ds_mod.save_csv(ds_mod.inject_noise(ds, spec), a["out"])
    return 0


def cmd_train_ensemble(a):
    ds = ds_mod.load_csv(_require_file(a["data"], "dataset"))
    cfg = TrainConfig(
        ensemble_size=a["models"],
        epochs=a["epochs"],
        batch_size=a["batch_size"],
        learning_rate=a["lr"],
        momentum=a["momentum"],
        hidden_units=a["hidden"],
        seed=a["seed"],
        record_logits=a["record_logits"],
        lr_schedule=a["lr_schedule"],
        sample_with_replacement=a["sample_with_replacement"],
        eval_at_epoch_end=a["eval_at_epoch_end"],
    )
    trace = train_ensemble(ds, cfg, workers=_workers())
    tr_mod.save_trace(trace, a["out"])
    return 0


def cmd_ingest_trace(a):
    labels = None
    if a.get("data"):
        labels = ds_mod.load_csv(_require_file(a["data"], "dataset")).given_labels
    trace = tr_mod.ingest_external(
        _require_file(a["records"], "record file"), a["format"], labels=labels
    )
    tr_mod.save_trace(trace, a["out"])
    return 0


def cmd_scores(a):
    trace = tr_mod.load_trace(_require_file(a["trace"], "trace"))
    if a.get("data"):
        ds = ds_mod.load_csv(_require_file(a["data"], "dataset"))
        trace = tr_mod.EnsembleTrace(
            predicted=trace.predicted,
            num_classes=max(trace.num_classes, ds.num_classes),
            labels=ds.given_labels,
            logits=trace.logits,
            epoch_set=trace.epoch_set,
            seed_lineage=trace.seed_lineage,
        )
        mask = ds.corruption_mask
    else:
        ds, mask = None, None
    series = sc_mod.bi_series(trace)
    if a["epoch_set"] == "to-max-bi":
        trace = trace.with_epoch_set(range(series.max_bi_epoch + 1))
    table = sc_mod.compute_scores(trace)
    out = a["out_dir"]
    sc_mod.save_scores_csv(table, os.path.join(out, "scores.csv"), mask=mask)
    sc_mod.save_bi_csv(series, os.path.join(out, "bi.csv"))
    return 0


def _load_score_column(a):
    values, mask = sc_mod.load_scores_csv(
        _require_file(a["scores"], "scores file")
    )
    column = a["column"]
    if column not in values:
        raise CliError(f"scores file has no {column!r} column")
    return values[column], mask


def cmd_fit_bmm(a):
    raw, _ = _load_score_column(a)
    values, _ = pl_mod.normalize_scores(a["column"], raw)
    fit = bmm_mod.fit_bmm(values, max_iter=a["max_iter"], tol=a["tol"],
                          seed=a["seed"], restarts=a["restarts"])
    out = a["out_dir"]
    doc = {
        "alpha": [float(v) for v in fit.alpha],
        "beta": [float(v) for v in fit.beta],
        "weight": [float(v) for v in fit.weight],
        "threshold": fit.threshold,
        "threshold_fallback": fit.threshold_fallback,
        "low_component": fit.low_component,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "log_likelihood": fit.log_likelihood,
    }
    with open(os.path.join(out, "bmm.json"), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    xs, lo, hi, mix = bmm_mod.density_curve(fit)
    with open(os.path.join(out, "density.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "pdf_low", "pdf_high", "mixture"])
        for row in zip(xs, lo, hi, mix):
            writer.writerow([repr(float(v)) for v in row])
    return 0


def cmd_filter(a):
    raw, _ = _load_score_column(a)
    values, orientation = pl_mod.normalize_scores(a["column"], raw)
    report = pl_mod.disagreenet(
        values, orientation=orientation, score_used=a["column"],
        seed=a["seed"], restarts=a["restarts"],
        provenance={"scores_file": os.path.basename(a["scores"])},
    )
    out = a["out_dir"]
    pl_mod.save_report(report, os.path.join(out, "report.json"))
    pl_mod.save_filtered_indices(report, os.path.join(out, "filtered-indices.txt"))
    return 2 if report.degenerate else 0


def cmd_evaluate(a):
    report = pl_mod.load_report(_require_file(a["report"], "report"))
    ds = ds_mod.load_csv(_require_file(a["data"], "dataset"))
    if ds.corruption_mask is None:
        raise CliError("dataset carries no ground-truth corruption mask")
    metrics = pl_mod.identification_metrics(report, ds.corruption_mask)
    with open(a["out"], "w") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


def cmd_retrain(a):
    report = pl_mod.load_report(_require_file(a["report"], "report"))
    ds = ds_mod.load_csv(_require_file(a["data"], "dataset"))
    test_ds = ds_mod.load_csv(_require_file(a["test"], "test dataset"))
    cfg = TrainConfig(
        ensemble_size=1,
        epochs=a["epochs"],
        batch_size=a["batch_size"],
        learning_rate=a["lr"],
        momentum=a["momentum"],
        hidden_units=a["hidden"],
        seed=a["seed"],
    )
    result = pl_mod.filter_and_retrain(ds, report, cfg, test_ds)
    with open(a["out"], "w") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


def cmd_linreg_lab(a):
    x, y, xt, yt = lr_mod.make_noisy_regression(
        a["dim"], a["train_size"], a["test_size"], a["noise_std"],
        derive_seed(a["seed"], "linreg-data"),
    )
    exp = lr_mod.LinRegExperiment(
        x_train=x, y_train=y, x_test=xt, y_test=yt,
        q=a["q"], lr=a["lr"], steps=a["steps"],
        init_scale=a["init_scale"], seed=derive_seed(a["seed"], "linreg-init"),
    )
    result = lr_mod.run_experiment(exp)
    out = a["out_dir"]
    lr_mod.save_diagnostics_csv(result, os.path.join(out, "diagnostics.csv"))
    summary = lr_mod.overfit_disagreement_summary(result)
    lemma1 = lr_mod.check_lemma1(result)
    summary["lemma1_included_steps"] = lemma1["included_steps"]
    summary["lemma1_agreement_rate"] = lemma1["agreement_rate"]
    lemma2 = lr_mod.check_lemma2(exp)
    summary["lemma2_deviation"] = lemma2["deviation"]
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


def cmd_report(a):
    run_dir = a["run_dir"]
    if not os.path.isdir(run_dir):
        raise CliError(f"run directory not found: {run_dir}")
    out = a["out_dir"]
    lines = []

    scores_path = os.path.join(run_dir, "scores.csv")
    if os.path.isfile(scores_path):
        values, mask = sc_mod.load_scores_csv(scores_path)
        edges = np.linspace(0.0, 1.0, 21)
        with open(os.path.join(out, "elp_hist.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            head = ["bin_left", "bin_right", "count"]
            if mask is not None:
                head += ["count_clean", "count_noisy"]
            writer.writerow(head)
            elp_vals = values["elp"]
            hist, _ = np.histogram(elp_vals, bins=edges)
            if mask is not None:
                h_clean, _ = np.histogram(elp_vals[~mask], bins=edges)
                h_noisy, _ = np.histogram(elp_vals[mask], bins=edges)
            for k in range(20):
                row = [repr(float(edges[k])), repr(float(edges[k + 1])), int(hist[k])]
                if mask is not None:
                    row += [int(h_clean[k]), int(h_noisy[k])]
                writer.writerow(row)
        lines.append(f"scores: {elp_vals.size} examples, "
                     f"mean elp {elp_vals.mean():.4f}")
        if mask is not None:
            lines.append(
                "mean elp clean/noisy: "
                f"{elp_vals[~mask].mean():.4f} / {elp_vals[mask].mean():.4f}"
            )

    bi_path = os.path.join(run_dir, "bi.csv")
    if os.path.isfile(bi_path):
        with open(bi_path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        bi = np.array([float(r["bi"]) for r in rows])
        with open(os.path.join(out, "bi_curve.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "bi"])
            for e, v in enumerate(bi):
                writer.writerow([e, repr(float(v))])
        lines.append(f"bimodal index: peak {bi.max():.4f} at epoch {int(bi.argmax())}")

    report_path = os.path.join(run_dir, "report.json")
    if os.path.isfile(report_path):
        rep = pl_mod.load_report(report_path)
        lines.append(
            f"noise estimate: {rep.noise_estimate:.4f} "
            f"({len(rep.noisy_indices)} flagged, score {rep.score_used})"
        )
        if rep.degenerate:
            lines.append("mixture fit degenerate: no noise detected")

    metrics_path = os.path.join(run_dir, "metrics.json")
    if os.path.isfile(metrics_path):
        with open(metrics_path) as fh:
            metrics = json.load(fh)
        with open(os.path.join(out, "metrics_summary.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "value"])
            for key in sorted(metrics):
                writer.writerow([key, metrics[key]])
        lines.append(
            "identification: "
            + ", ".join(f"{k}={metrics[k]}" for k in sorted(metrics))
        )

    if not lines:
        raise CliError(f"no artifacts in {run_dir}")
    with open(os.path.join(out, "summary.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return 0


COMMANDS = {
    "gen-data": (cmd_gen_data, "out", False),
    "inject-noise": (cmd_inject_noise, "out", False),
    "train-ensemble": (cmd_train_ensemble, "out", False),
    "ingest-trace": (cmd_ingest_trace, "out", False),
    "scores": (cmd_scores, "out_dir", True),
    "fit-bmm": (cmd_fit_bmm, "out_dir", True),
    "filter": (cmd_filter, "out_dir", True),
    "evaluate": (cmd_evaluate, "out", False),
    "retrain": (cmd_retrain, "out", False),
    "linreg-lab": (cmd_linreg_lab, "out_dir", True),
    "report": (cmd_report, "out_dir", True),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="disagreenet",
                     description="Noisy-label filtration via ensemble agreement dynamics")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("gen-data", help="generate Gaussian blob dataset")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--per-class", type=int, default=500)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--separation", type=float, default=6.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("inject-noise", help="corrupt labels")
    p.add_argument("--data", required=True)
    p.add_argument("--kind", choices=["symmetric", "asymmetric"], default="symmetric")
    p.add_argument("--rate", type=float, required=True)
    p.add_argument("--permutation", default="",
                   help="comma-separated class permutation (asymmetric only)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-ensemble", help="train ensemble, emit trace")
    p.add_argument("--data", required=True)
    p.add_argument("--models", type=int, default=10)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--record-logits", action="store_true")
    p.add_argument("--lr-schedule", choices=["constant", "cosine"], default="constant")
    p.add_argument("--sample-with-replacement", action="store_true")
    p.add_argument("--eval-at-epoch-end", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("ingest-trace", help="ingest external prediction records")
    p.add_argument("--records", required=True)
    p.add_argument("--format", choices=["jsonl", "csv"], required=True)
    p.add_argument("--data", default="", help="dataset CSV supplying labels")
    p.add_argument("--out", required=True)

    p = sub.add_parser("scores", help="compute per-example scores and BI series")
    p.add_argument("--trace", required=True)
    p.add_argument("--data", default="", help="dataset CSV (labels + truth mask)")
    p.add_argument("--epoch-set", choices=["all", "to-max-bi"], default="all")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("fit-bmm", help="fit the two-component Beta mixture")
    p.add_argument("--scores", required=True)
    p.add_argument("--column", choices=list(pl_mod.SCORE_KINDS), default="elp")
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("filter", help="estimate noise level and flag noisy ids")
    p.add_argument("--scores", required=True)
    p.add_argument("--column", choices=list(pl_mod.SCORE_KINDS), default="elp")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("evaluate", help="score a report against ground truth")
    p.add_argument("--report", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("retrain", help="retrain on the filtered dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("linreg-lab", help="overfit/disagreement laboratory")
    p.add_argument("--dim", type=int, default=20)
    p.add_argument("--train-size", type=int, default=15)
    p.add_argument("--test-size", type=int, default=50)
    p.add_argument("--noise-std", type=float, default=0.5)
    p.add_argument("--q", type=int, default=16)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--init-scale", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("report", help="aggregate a run directory")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("rerun", help="re-execute a stage from its resolved config")
    p.add_argument("config")

    return parser


def _dispatch(subcommand: str, args: dict) -> int:
    func, out_key, is_dir = COMMANDS[subcommand]
    config_path = _config_path_for(args[out_key], is_dir, subcommand)
    _write_config(subcommand, args, config_path)
    return func(args)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.subcommand == "rerun":
            subcommand, args = _read_config(ns.config)
        else:
            subcommand = ns.subcommand
            args = {k: v for k, v in vars(ns).items() if k != "subcommand"}
        return _dispatch(subcommand, args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingDivergenceError as exc:
        print(f"training divergence: {exc}", file=sys.stderr)
        return 3
    except DegenerateFitError as exc:
        print(f"degenerate fit: {exc}", file=sys.stderr)
        return 2
    except (DisagreeNetError, FileNotFoundError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
