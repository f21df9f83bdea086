"""Command-line surface: train / eval / sweep / export-embeddings / report.

Datasets resolve from --data-root, the MEMSPIKE_DATA environment variable, or
(when neither points at real data) a deterministic synthetic stand-in written
under the run's output directory in the genuine AER / IDX formats.  All CSV
outputs carry a fixed column order with a header and are written atomically.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import tempfile

import numpy as np

from . import checkpoint, synth
from .baselines import BaselineKind, eval_static, run_baseline
from .config import RunConfig, config_text, load_run_config
from .data import ArrayDataset, apply_inpaint_mask, load_mnist_idx, stratified_subset
from .dynamic import StopKind, sweep_thresholds
from .metrics import accuracy  # noqa: F401  (re-exported for scripting)

SWEEP_COLUMNS = ["threshold", "metric", "avg_timesteps", "n_samples"]


def write_csv(path, rows, columns) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".csv-")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=columns, extrasaction="ignore")
            w.writeheader()
            for row in rows:
                w.writerow(row)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _have_real_nmnist(root) -> bool:
    return root is not None and os.path.isdir(os.path.join(root, "Train", "0"))


def _have_real_mnist(root) -> bool:
    return root is not None and os.path.isfile(os.path.join(root, "train-images-idx3-ubyte"))


def prepare_task_data(cfg: RunConfig, quiet=False):
    """Returns (train ArrayDataset, test ArrayDataset) at the configured subsets."""
    root = cfg.resolved_data_root()
    if cfg.task == "nmnist-classify":
        if not _have_real_nmnist(root):
            root = os.path.join(cfg.output_dir, "synth-nmnist")
            if not quiet:
                print(f"[data] no event dataset found; synthesizing under {root}", file=sys.stderr)
            synth.ensure_synth_nmnist(root, cfg.train_subset, cfg.test_subset, seed=cfg.seed)
        tr_frames, tr_labels = synth.load_binned_nmnist(root, "Train", cfg.t_steps)
        te_frames, te_labels = synth.load_binned_nmnist(root, "Test", cfg.t_steps)
        tr_idx = stratified_subset(tr_labels, min(cfg.train_subset, len(tr_labels)), cfg.seed)
        te_idx = stratified_subset(te_labels, min(cfg.test_subset, len(te_labels)), cfg.seed + 1)
        return (ArrayDataset(tr_frames[tr_idx], tr_labels[tr_idx]),
                ArrayDataset(te_frames[te_idx], te_labels[te_idx]))
    if not _have_real_mnist(root):
        root = os.path.join(cfg.output_dir, "synth-mnist")
        if not quiet:
            print(f"[data] no IDX dataset found; synthesizing under {root}", file=sys.stderr)
        synth.ensure_synth_mnist(root, cfg.train_subset, cfg.test_subset, seed=cfg.seed)
    tr_img, tr_lab = load_mnist_idx(os.path.join(root, "train-images-idx3-ubyte"),
                                    os.path.join(root, "train-labels-idx1-ubyte"))
    te_img, te_lab = load_mnist_idx(os.path.join(root, "t10k-images-idx3-ubyte"),
                                    os.path.join(root, "t10k-labels-idx1-ubyte"))
    tr_idx = stratified_subset(tr_lab, min(cfg.train_subset, len(tr_lab)), cfg.seed)
    te_idx = stratified_subset(te_lab, min(cfg.test_subset, len(te_lab)), cfg.seed + 1)
    tr_img, tr_lab = tr_img[tr_idx], tr_lab[tr_idx]
    te_img, te_lab = te_img[te_idx], te_lab[te_idx]
    tr_masked, _ = apply_inpaint_mask(tr_img)
    te_masked, _ = apply_inpaint_mask(te_img)
    return (ArrayDataset(tr_masked, tr_img, tr_lab),
            ArrayDataset(te_masked, te_img, te_lab))


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    from dataclasses import replace
    for name in ("task", "arm", "seed", "output_dir", "data_root"):
        v = getattr(args, name.replace("-", "_"), None)
        if v is not None:
            cfg = replace(cfg, **{name: v})
    if getattr(args, "epochs", None) is not None:
        cfg = replace(cfg, train=replace(cfg.train, epochs=args.epochs))
    if getattr(args, "subset", None) is not None:
        tr, te = args.subset
        cfg = replace(cfg, train_subset=tr, test_subset=te)
    if getattr(args, "seed", None) is not None:
        from dataclasses import replace as rep
        cfg = rep(cfg, device=rep(cfg.device, seed=args.seed),
                  train=rep(cfg.train, seed=args.seed))
    return cfg


def cmd_train(args) -> int:
    cfg = load_run_config(args.config) if args.config else RunConfig(seed=args.seed or 0)
    cfg = _apply_overrides(cfg, args)
    os.makedirs(cfg.output_dir, exist_ok=True)
    kind = BaselineKind.parse(cfg.arm)
    train_data, test_data = prepare_task_data(cfg)
    row, model, history = run_baseline(kind, cfg.task, cfg, train_data, test_data)
    metric_name = "accuracy" if cfg.task == "nmnist-classify" else "mse"
    print(f"[train] arm={cfg.arm} task={cfg.task} test {metric_name}={row['metric']:.4f}")
    ckpt = os.path.join(cfg.output_dir, "checkpoint.mspk")
    checkpoint.save_model(ckpt, model, config_echo=config_text(cfg))
    print(f"[train] checkpoint written to {ckpt}")
    if history is not None:
        write_csv(os.path.join(cfg.output_dir, "history.csv"), history.as_rows(),
                  ["epoch", "loss", "metric", "lr"])
    write_csv(os.path.join(cfg.output_dir, "result.csv"), [row],
              ["kind", "task", "metric", "n_samples", "trained"])
    return 0


def _load_checkpoint_and_data(args):
    model, echo = checkpoint.load_model(args.checkpoint)
    from .config import parse_run_config
    cfg = parse_run_config(echo)
    if getattr(args, "data_root", None):
        from dataclasses import replace
        cfg = replace(cfg, data_root=args.data_root)
    _, test_data = prepare_task_data(cfg, quiet=True)
    return model, cfg, test_data


def cmd_eval(args) -> int:
    model, cfg, test_data = _load_checkpoint_and_data(args)
    kind = {"softmax": StopKind.SOFTMAX_THRESHOLD,
            "consistency": StopKind.CONSISTENCY_THRESHOLD,
            "none": StopKind.NO_EARLY_STOP}[args.policy]
    if kind is StopKind.NO_EARLY_STOP:
        metric = eval_static(model, test_data, noise_scale=args.noise, base_seed=cfg.seed)
        rows = [{"threshold": 0.0, "metric": metric,
                 "avg_timesteps": float(model.t_steps), "n_samples": len(test_data)}]
    else:
        rows = sweep_thresholds(model, test_data, [args.threshold], kind,
                                noise_scale=args.noise, alpha=args.alpha,
                                base_seed=cfg.seed)
    r = rows[0]
    print(f"[eval] metric={r['metric']:.4f} avg_timesteps={r['avg_timesteps']:.2f} "
          f"n={r['n_samples']}")
    if args.out:
        write_csv(args.out, rows, SWEEP_COLUMNS)
    return 0


def cmd_sweep(args) -> int:
    model, cfg, test_data = _load_checkpoint_and_data(args)
    classify = cfg.task == "nmnist-classify"
    kind = StopKind.SOFTMAX_THRESHOLD if classify else StopKind.CONSISTENCY_THRESHOLD
    rows = []
    noise_scales = args.noise_scales or [args.noise]
    thresholds = args.thresholds
    for ns in noise_scales:
        got = sweep_thresholds(model, test_data, thresholds, kind, noise_scale=ns,
                               alpha=args.alpha, base_seed=cfg.seed)
        for r in got:
            r["noise_scale"] = ns
        rows.extend(got)
    out = args.out or os.path.join(cfg.output_dir, "sweep.csv")
    write_csv(out, rows, SWEEP_COLUMNS + ["noise_scale"])
    print(f"[sweep] {len(rows)} rows -> {out}")
    return 0


def cmd_export_embeddings(args) -> int:
    model, cfg, test_data = _load_checkpoint_and_data(args)
    if model.stochastic_forward:
        print("export-embeddings supports the classifier only", file=sys.stderr)
        return 1
    feats = model.embeddings(test_data.inputs)
    rows = []
    for i in range(len(test_data)):
        row = {"label": int(test_data.targets[i])}
        row.update({f"f{j}": float(v) for j, v in enumerate(feats[i])})
        rows.append(row)
    cols = ["label"] + [f"f{j}" for j in range(feats.shape[1])]
    write_csv(args.out, rows, cols)
    print(f"[export] {feats.shape[0]} x {feats.shape[1]} embeddings -> {args.out}")
    return 0


def cmd_report(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(args.out, exist_ok=True)
    summary = []
    for path in args.inputs:
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
        if not rows:
            continue
        name = os.path.splitext(os.path.basename(path))[0]
        metrics = [float(r["metric"]) for r in rows]
        summary.append({"source": name, "rows": len(rows),
                        "metric_min": min(metrics), "metric_max": max(metrics)})
        if "avg_timesteps" in rows[0]:
            fig, ax = plt.subplots(figsize=(5, 3.2))
            ts = [float(r["avg_timesteps"]) for r in rows]
            th = [float(r.get("threshold", i)) for i, r in enumerate(rows)]
            ax.plot(th, metrics, "o-", label="metric")
            ax2 = ax.twinx()
            ax2.plot(th, ts, "s--", color="tab:orange", label="avg timesteps")
            ax.set_xlabel("threshold")
            ax.set_ylabel("metric")
            ax2.set_ylabel("avg timesteps")
            fig.tight_layout()
            fig.savefig(os.path.join(args.out, f"{name}.svg"))
            plt.close(fig)
    write_csv(os.path.join(args.out, "summary.csv"), summary,
              ["source", "rows", "metric_min", "metric_max"])
    print(f"[report] {len(summary)} sources summarized under {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="memspike",
                                description="crossbar-SNN topology training and early-exit inference")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one arm and write a checkpoint")
    t.add_argument("--config", help="INI run config")
    t.add_argument("--task", choices=["nmnist-classify", "mnist-inpaint"])
    t.add_argument("--arm", choices=[k.value for k in BaselineKind])
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--subset", type=int, nargs=2, metavar=("TRAIN", "TEST"))
    t.add_argument("--output-dir", dest="output_dir")
    t.add_argument("--data-root", dest="data_root")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint under a stop policy")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--policy", choices=["softmax", "consistency", "none"], default="none")
    e.add_argument("--threshold", type=float, default=0.5)
    e.add_argument("--alpha", type=float, default=2.0)
    e.add_argument("--noise", type=float, default=0.0)
    e.add_argument("--data-root", dest="data_root")
    e.add_argument("--out")
    e.set_defaults(fn=cmd_eval)

    s = sub.add_parser("sweep", help="threshold / noise trade-off table")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--thresholds", type=lambda v: [float(x) for x in v.split(",")],
                   required=True)
    s.add_argument("--noise-scales", dest="noise_scales",
                   type=lambda v: [float(x) for x in v.split(",")])
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--alpha", type=float, default=2.0)
    s.add_argument("--data-root", dest="data_root")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_sweep)

    x = sub.add_parser("export-embeddings", help="penultimate features to CSV")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--out", required=True)
    x.add_argument("--data-root", dest="data_root")
    x.set_defaults(fn=cmd_export_embeddings)

    r = sub.add_parser("report", help="aggregate sweep CSVs into a summary + SVG plots")
    r.add_argument("--inputs", nargs="+", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
