"""Command-line entry point.

Exit codes: 0 success, 1 usage or config error, 2 data/format error,
3 numerical failure. Every command ends with one ``summary`` line of
space-separated ``key=value`` pairs on stdout.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import energy as en
from .io import (
    CONFIG_SCHEMA,
    FormatError,
    load_checkpoint,
    load_dataset,
    load_mnist,
    parse_config,
    save_checkpoint,
    save_dataset,
)
from .lif import NeuronParams

log = logging.getLogger("spikingssm")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _summary(command: str, args, **fields) -> None:
    parts = [f"cmd={command}", f"config={getattr(args, 'config', None) or '-'}",
             f"seed={getattr(args, 'seed', None)}", f"workers={args.workers}"]
    for k, v in fields.items():
        if isinstance(v, float):
            v = f"{v:.6g}"
        parts.append(f"{k}={str(v).replace(' ', '')}")
    print("summary " + " ".join(parts), flush=True)


def _report_dir(args) -> Path | None:
    if not getattr(args, "report_dir", None):
        return None
    d = Path(args.report_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_rows(rows: list[dict], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


# ---- checkpoints ---------------------------------------------------------

def load_sdn(path):
    """SDN or fused SDN from a checkpoint, in eval mode."""
    from .sdn import SDN, FusedSDN

    tensors, header = load_checkpoint(path)
    kinds = {"sdn": SDN, "sdn_fused": FusedSDN}
    if header.get("kind") not in kinds:
        raise FormatError(f"{path}: checkpoint kind {header.get('kind')!r} is not an SDN")
    model = kinds[header["kind"]]()
    _load_state(model, tensors, path)
    return model.eval(), header


def load_network(path, sdn=None):
    from .network import NetConfig, SpikingSSM

    tensors, header = load_checkpoint(path)
    if header.get("kind") != "net":
        raise FormatError(f"{path}: checkpoint kind {header.get('kind')!r} is not a network")
    net = SpikingSSM(NetConfig.from_dict(header["config"]["net"]), sdn)
    _load_state(net, tensors, path)
    return net.eval(), header


def _load_state(model, tensors, path) -> None:
    try:
        model.load_state_dict(tensors)
    except RuntimeError as exc:
        raise FormatError(f"{path}: tensors do not match the model: {exc}") from None


def _net_config(cfg: dict):
    from .network import NetConfig

    return NetConfig(
        depth=cfg["depth"], H=cfg["H"], N=cfg["N"], norm=cfg["norm"], prenorm=cfg["pnorm"],
        dropout=cfg["dropout"], tau=cfg["tau"], v_th=cfg["v_th"],
        learn_threshold=cfg["learn_threshold"], alpha=cfg["alpha"],
        delta_min=cfg["delta_min"], delta_max=cfg["delta_max"], seed=cfg["seed"],
    )


def _load_config(args) -> dict:
    text = Path(args.config).read_text() if args.config else ""
    overrides = {k: getattr(args, k) for k in CONFIG_SCHEMA if getattr(args, k, None) is not None}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    try:
        cfg = parse_config(text, overrides)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    args.seed = cfg["seed"]
    return cfg


def _mnist(cfg: dict, data_dir):
    perm = cfg["permute_seed"] if cfg["permute"] else None
    train = load_mnist(data_dir, "train", perm, cfg.get("train_count"))
    test = load_mnist(data_dir, "test", perm, cfg.get("test_count"))
    return train, test


# ---- commands ------------------------------------------------------------

def cmd_gen_sdn_data(args) -> int:
    from .sdn_training import generate_dataset

    params = NeuronParams(tau=args.tau, v_th=args.v_th)
    data = generate_dataset(args.count, args.length, params, (args.mean, args.std), args.seed)
    save_dataset(args.out, data)
    rate = float(data.oracle_spikes().mean())
    _summary("gen-sdn-data", args, out=args.out, count=args.count, length=args.length,
             tau=args.tau, v_th=args.v_th, mean=args.mean, std=args.std, spike_rate=rate)
    return EXIT_OK


def cmd_train_sdn(args) -> int:
    from .plotting import plot_sdn_training
    from .sdn_training import train_sdn

    data = load_dataset(args.data)
    test = load_dataset(args.test) if args.test else None
    model, report = train_sdn(data, args.epochs, args.lr, args.batch_size, args.seed,
                              args.weight_decay, test=test)
    meta = {"train": report.config, "dataset": data.meta, "epochs": report.epochs,
            "seconds": report.seconds}
    save_checkpoint(args.out, model.state_dict(), "sdn", {"epochs": args.epochs, "lr": args.lr,
                    "batch_size": args.batch_size, "weight_decay": args.weight_decay},
                    {"torch_seed": args.seed}, meta)
    rd = _report_dir(args)
    if rd:
        _write_rows(report.epochs, rd / "sdn_training.csv")
        plot_sdn_training(report.epochs, rd / "sdn_training.png")
    last = report.epochs[-1]
    _summary("train-sdn", args, out=args.out, epochs=args.epochs, lr=args.lr,
             batch_size=args.batch_size, seconds=report.seconds,
             **{k: v for k, v in last.items() if k != "epoch"})
    return EXIT_OK


def cmd_eval_sdn(args) -> int:
    from .sdn_training import eval_sdn

    model, _ = load_sdn(args.model)
    data = load_dataset(args.data)
    m = eval_sdn(model, data)
    print(f"spike_accuracy {m['spike_accuracy']:.6f}")
    print(f"mse {m['mse']:.6g}")
    _summary("eval-sdn", args, model=args.model, data=args.data, **m)
    return EXIT_OK


def _parse_values(axis: str, text: str) -> list:
    items = [s for s in text.split(",") if s]
    if axis == "distribution":
        return [tuple(float(p) for p in s.split(":")) for s in items]
    if axis == "length":
        return [int(s) for s in items]
    return [float(s) for s in items]


def cmd_sweep_sdn(args) -> int:
    from .plotting import plot_sweep
    from .sdn_training import generalization_sweep

    model, _ = load_sdn(args.model)
    try:
        values = _parse_values(args.axis, args.values)
    except ValueError as exc:
        raise UsageError(f"bad --values: {exc}") from None
    rows = generalization_sweep(model, args.axis, values, total_steps=args.total_steps, seed=args.seed)
    for r in rows:
        print(f"{args.axis}={r['value']} accuracy={r['accuracy']:.6f} mse={r['mse']:.6g}")
    rd = _report_dir(args)
    if rd:
        _write_rows([{"axis": args.axis, "value": str(r["value"]).replace(" ", ""), "accuracy": r["accuracy"],
                      "mse": r["mse"]} for r in rows], rd / f"sweep_{args.axis}.csv")
        plot_sweep(rows, args.axis, rd / f"sweep_{args.axis}.png")
    accs = [r["accuracy"] for r in rows]
    _summary("sweep-sdn", args, axis=args.axis, min_accuracy=min(accs), max_accuracy=max(accs))
    return EXIT_OK


def cmd_fuse_sdn(args) -> int:
    from .sdn import sdn_fuse

    model, header = load_sdn(args.model)
    fused = sdn_fuse(model)
    save_checkpoint(args.out, fused.state_dict(), "sdn_fused", header.get("config"),
                    header.get("rng_state"), {"source": str(args.model)})
    _summary("fuse-sdn", args, model=args.model, out=args.out,
             params=sum(p.numel() for p in fused.parameters()))
    return EXIT_OK


def _sdn_for(args):
    if not args.sdn:
        return None
    return load_sdn(args.sdn)[0]


def cmd_train(args) -> int:
    from .network import SpikingSSM, evaluate, train_task
    from .plotting import plot_task_history

    cfg = _load_config(args)
    torch.set_num_threads(args.workers)
    net_cfg = _net_config(cfg)
    sdn = _sdn_for(args)
    if sdn is None and cfg["mode"] == "sdn":
        raise UsageError("mode=sdn needs --sdn CHECKPOINT")
    train, test = _mnist(cfg, args.data_dir)
    net = SpikingSSM(net_cfg, sdn)
    eval_mode = "parallel_sdn" if sdn is not None else "iterative"
    start = time.perf_counter()
    history = train_task(net, train, test, cfg["mode"], cfg["epochs"], cfg["lr"], cfg["batch"],
                         cfg["wd"], cfg["seed"], eval_mode)
    seconds = time.perf_counter() - start
    final = evaluate(net, *test, mode=eval_mode)
    save_checkpoint(args.out, net.state_dict(), "net", {"net": net_cfg.to_dict(), "run": cfg},
                    {"torch_seed": cfg["seed"]}, {"history": history, "workers": args.workers})
    rd = _report_dir(args)
    if rd:
        _write_rows(history, rd / "train_history.csv")
        plot_task_history(history, rd / "train_history.png")
    _summary("train", args, out=args.out, mode=cfg["mode"], epochs=cfg["epochs"], H=cfg["H"],
             depth=cfg["depth"], train_count=len(train[1]), test_accuracy=final["accuracy"],
             mean_spiking_rate=final["mean_spiking_rate"], seconds=seconds)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .network import evaluate

    sdn = _sdn_for(args)
    net, header = load_network(args.model, sdn)
    cfg = dict(header["config"]["run"])
    if args.test_count:
        cfg["test_count"] = args.test_count
    _, test = _mnist(cfg, args.data_dir)
    modes = ["parallel_sdn", "iterative"] if args.mode == "both" else [args.mode]
    out = {}
    for mode in modes:
        if mode == "parallel_sdn" and sdn is None:
            raise UsageError("parallel_sdn evaluation needs --sdn CHECKPOINT")
        m = evaluate(net, *test, mode=mode)
        print(f"{mode} accuracy={m['accuracy']:.4f} mean_spiking_rate={m['mean_spiking_rate']:.4f}")
        out[f"{mode}_accuracy"] = m["accuracy"]
        out[f"{mode}_spiking_rate"] = m["mean_spiking_rate"]
    if len(modes) == 2:
        out["gap_pp"] = 100 * abs(out["parallel_sdn_accuracy"] - out["iterative_accuracy"])
    args.seed = cfg["seed"]
    _summary("eval", args, model=args.model, **out)
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import BenchSpec, run_bench, write_bench_csv, write_breakdown_csv
    from .plotting import plot_bench

    cfg = _load_config(args)
    try:
        spec = BenchSpec(tuple(int(v) for v in args.lengths.split(",")), args.batch_size,
                         args.repetitions, args.warmup, tuple(args.modes.split(",")), args.workers)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    report = run_bench(spec, _net_config(cfg), _sdn_for(args), cfg["seed"])
    for r in report.rows:
        print(f"{r['mode']:>14} L={r['length']:<6} median={r['median_ms']:.1f}ms "
              f"p10={r['p10_ms']:.1f} p90={r['p90_ms']:.1f}")
    fields = {}
    if "sdn" in spec.modes and "bptt" in spec.modes:
        ratios = report.speedups("bptt")
        print("speedup bptt/sdn " + " ".join(f"{L}:{v:.2f}" for L, v in ratios.items()))
        fields = {"speedup_max_length": ratios[max(ratios)], "monotone": report.monotone("bptt")}
    rd = _report_dir(args)
    if rd:
        write_bench_csv(report, rd / "bench.csv")
        write_breakdown_csv(report, rd / "bench_breakdown.csv")
        plot_bench(report, rd / "bench.png")
    _summary("bench", args, H=cfg["H"], depth=cfg["depth"], batch=spec.batch, **fields)
    return EXIT_OK


def cmd_energy_report(args) -> int:
    model = en.EnergyModel(args.e_mac * 1e-12, args.e_ac * 1e-12)
    rows = []
    if args.mac is not None or args.ac is not None:
        counts = en.OpCounts(args.mac or 0.0, args.ac or 0.0)
        rows.append({"label": "given", "mac": counts.mac, "ac": counts.ac,
                     "energy_j": en.energy(counts, model)})
    if args.length:
        dense = en.count_ops(en.feature_mix_layers(args.depth, args.H, args.H, None), args.length)
        rows.append({"label": "dense", "mac": dense.mac, "ac": dense.ac, "energy_j": en.energy(dense, model)})
        if args.rate is not None:
            sp = en.count_ops(en.feature_mix_layers(args.depth, args.H, args.H, args.rate), args.length)
            rows.append({"label": "spiking", "mac": sp.mac, "ac": sp.ac, "energy_j": en.energy(sp, model)})
    if not rows:
        raise UsageError("give --mac/--ac or --length (with --depth/--H/--rate)")
    for r in rows:
        print(f"{r['label']}: mac={r['mac']:.6g} ac={r['ac']:.6g} energy={r['energy_j']:.4g} J")
    rd = _report_dir(args)
    if rd:
        en.write_energy_csv(rows, rd / "energy.csv")
    _summary("energy-report", args, **{f"{r['label']}_energy_j": r["energy_j"] for r in rows})
    return EXIT_OK


def cmd_hist(args) -> int:
    from .network import block_spike_rates, membrane_samples
    from .plotting import plot_histograms

    sdn = _sdn_for(args)
    net, header = load_network(args.model, sdn)
    cfg = dict(header["config"]["run"])
    cfg["test_count"] = args.count
    _, (x, _) = _mnist(cfg, args.data_dir)
    if args.mode == "parallel_sdn" and sdn is None:
        raise UsageError("parallel_sdn mode needs --sdn CHECKPOINT")
    xt = torch.as_tensor(x, dtype=torch.float32)
    samples = membrane_samples(net, xt, args.mode)
    rates = block_spike_rates(net)
    hists = en.membrane_histogram(samples, args.bins, (args.lo, args.hi), net.cfg.alpha, rates)
    for h in hists:
        print(f"layer {h.layer}: band_fraction={h.band_fraction:.4f} spiking_rate={h.spiking_rate:.4f}")
    rd = _report_dir(args) or Path(".")
    en.write_histogram_csv(hists, rd / "membrane_hist.csv")
    plot_histograms(hists, rd / "membrane_hist.png")
    args.seed = cfg["seed"]
    _summary("hist", args, layers=len(hists), band_fraction=float(np.mean([h.band_fraction for h in hists])))
    return EXIT_OK


# ---- parser --------------------------------------------------------------

def _config_flags(p) -> None:
    p.add_argument("--config", help="key=value config file; flags override it")
    for key in CONFIG_SCHEMA:
        if key != "seed":
            p.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None, metavar="V")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--workers", type=int, default=1, help="torch intra-op threads")
    common.add_argument("--log-level", default="WARNING")

    ap = _Parser(prog="spikingssm", description="Spiking state-space models with a surrogate dynamic network.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-sdn-data", parents=[common], help="oracle-labelled SDN dataset")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--length", type=int, required=True)
    p.add_argument("--tau", type=float, default=0.2)
    p.add_argument("--v-th", type=float, default=1.0)
    p.add_argument("--mean", type=float, default=0.0)
    p.add_argument("--std", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_sdn_data)

    p = sub.add_parser("train-sdn", parents=[common], help="fit an SDN by MSE")
    p.add_argument("--data", required=True)
    p.add_argument("--test")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--report-dir")
    p.set_defaults(fn=cmd_train_sdn)

    p = sub.add_parser("eval-sdn", parents=[common], help="SDN spike accuracy and MSE")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(fn=cmd_eval_sdn)

    p = sub.add_parser("sweep-sdn", parents=[common], help="frozen-SDN generalization sweep")
    p.add_argument("--model", required=True)
    p.add_argument("--axis", choices=("length", "tau", "distribution"), required=True)
    p.add_argument("--values", required=True, help="comma list; distributions as mean:std")
    p.add_argument("--total-steps", type=int, default=10_000 * 1024)
    p.add_argument("--seed", type=int, default=12345)
    p.add_argument("--report-dir")
    p.set_defaults(fn=cmd_sweep_sdn)

    p = sub.add_parser("fuse-sdn", parents=[common], help="fold encoder and batch norms")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_fuse_sdn)

    p = sub.add_parser("train", parents=[common], help="train a SpikingSSM on (p)sMNIST")
    _config_flags(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--sdn", help="SDN checkpoint for parallel mode")
    p.add_argument("--data-dir", help="MNIST IDX directory (default $SPIKINGSSM_DATA or data/mnist)")
    p.add_argument("--out", required=True)
    p.add_argument("--report-dir")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a trained network")
    p.add_argument("--model", required=True)
    p.add_argument("--sdn")
    p.add_argument("--mode", choices=("parallel_sdn", "iterative", "both"), default="both")
    p.add_argument("--data-dir")
    p.add_argument("--test-count", type=int)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench", parents=[common], help="training-step latency per mode and length")
    _config_flags(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--sdn")
    p.add_argument("--lengths", default="1024,2048,4096,8192")
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--modes", default="bptt,sltt,sdn")
    p.add_argument("--report-dir")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("energy-report", parents=[common], help="MAC/AC energy estimate")
    p.add_argument("--mac", type=float)
    p.add_argument("--ac", type=float)
    p.add_argument("--e-mac", type=float, default=en.E_MAC_PJ, help="pJ per MAC")
    p.add_argument("--e-ac", type=float, default=en.E_AC_PJ, help="pJ per AC")
    p.add_argument("--length", type=int)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--H", type=int, default=64)
    p.add_argument("--rate", type=float)
    p.add_argument("--report-dir")
    p.set_defaults(fn=cmd_energy_report)

    p = sub.add_parser("hist", parents=[common], help="membrane-potential histograms")
    p.add_argument("--model", required=True)
    p.add_argument("--sdn")
    p.add_argument("--mode", choices=("parallel_sdn", "iterative"), default="parallel_sdn")
    p.add_argument("--data-dir")
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--bins", type=int, default=200)
    p.add_argument("--lo", type=float, default=-3.0)
    p.add_argument("--hi", type=float, default=3.0)
    p.add_argument("--report-dir")
    p.set_defaults(fn=cmd_hist)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.fn(args)
    except (UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
