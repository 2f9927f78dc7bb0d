"""Command-line front end: dataset generation, classical solving, BNN
training / prediction, model compression and benchmarking."""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from . import bench, bnn, channel, compress, nn, solvers


def dbm_to_watts(dbm):
    return 10.0 ** (dbm / 10.0) / 1000.0


def db_to_linear(db):
    return 10.0 ** (db / 10.0)


def _add_channel_args(p):
    p.add_argument("--noise-dbm", type=float, default=-80.0,
                   help="noise power in dBm (converted to linear watts)")
    p.add_argument("--pmax-dbm", type=float, default=30.0,
                   help="power budget in dBm")
    p.add_argument("--dist-min", type=float, default=0.05)
    p.add_argument("--dist-max", type=float, default=0.3)


def _sizes(args):
    if args.sizes:
        return [tuple(int(v) for v in pair.split("x"))
                for pair in args.sizes.split(",")]
    return [(args.n, args.k)]


def cmd_gen(args):
    cfg = channel.DatasetConfig(
        problem=args.problem, count=args.count, sizes=_sizes(args),
        seed=args.seed, distance_range=(args.dist_min, args.dist_max),
        noise_power=dbm_to_watts(args.noise_dbm),
        power_budget=dbm_to_watts(args.pmax_dbm),
        sinr_target=db_to_linear(args.target_db)
        if args.problem == "power-min" else None,
        pad_antennas=args.pad_n, pad_users=args.pad_k)
    ds = channel.build_dataset(cfg)
    channel.save_dataset(ds, args.out)
    print(f"wrote {len(ds)} samples to {args.out} "
          f"(regenerated {ds.regenerated})")


def cmd_solve(args):
    ds = channel.load_dataset(args.dataset)
    records = []
    for i in range(len(ds)):
        sample = ds.sample(i)
        t0 = time.perf_counter()
        feasible = True
        if args.method == "balance":
            res = solvers.sinr_balance_solve(sample, tol=args.tol)
            name, value = "min_sinr", res.C
        elif args.method == "powermin":
            try:
                _, value, _ = solvers.power_min_solve(sample, tol=args.tol)
            except solvers.InfeasibleError:
                value, feasible = np.inf, False
            name = "total_power_w"
        elif args.method == "zf":
            mode = "targets" if ds.problem == "power-min" else "balance"
            W = solvers.zf_beamformer(sample, mode)
            if mode == "targets":
                name, value = "total_power_w", float((np.abs(W) ** 2).sum())
            else:
                name = "min_sinr"
                value = float(solvers.downlink_sinr(
                    sample.H, W, sample.noise_power).min())
        elif args.method == "rzf":
            W = solvers.rzf_beamformer(sample)
            name = "min_sinr"
            value = float(solvers.downlink_sinr(
                sample.H, W, sample.noise_power).min())
        else:
            res = solvers.wmmse_sum_rate(sample, tol=args.tol)
            name, value = "sum_rate", res.sum_rate
        dt = time.perf_counter() - t0
        records.append(bench.BenchRecord(
            method=args.method, instance=i, N=sample.n_antennas,
            K=sample.n_users, metric_name=name, metric_value=value,
            feasible=feasible, wall_time_s=dt, seed=ds.seed))
    bench.write_records(args.out, records)
    print(f"wrote {len(records)} records to {args.out}")


def cmd_train(args):
    ds = channel.load_dataset(args.data)
    arch = None
    if args.arch:
        with open(args.arch) as f:
            arch = json.load(f)
    pipe = bnn.build_pipeline(args.problem, ds.pad_antennas, ds.pad_users,
                              seed=args.seed, arch=arch)
    cfg = nn.TrainConfig(batch_size=args.batch, epochs=args.epochs,
                         learning_rate=args.lr, loss=args.loss,
                         seed=args.seed)
    if args.mode == "sup":
        hist = bnn.train_supervised(pipe, ds, cfg)
        print(f"supervised loss {hist[0]:.4g} -> {hist[-1]:.4g}")
    elif args.mode == "unsup":
        hist = bnn.train_unsupervised(pipe, ds, cfg)
        print(f"unsupervised loss {hist[0]:.4g} -> {hist[-1]:.4g}")
    else:
        cfg2 = nn.TrainConfig(batch_size=args.batch,
                              epochs=max(1, args.epochs // 10),
                              learning_rate=args.lr / 10, loss=args.loss,
                              seed=args.seed)
        out = bnn.train_hybrid(pipe, ds, cfg, cfg2)
        print(f"hybrid objective {out['stage1_objective']:.4g} -> "
              f"{out['stage2_objective']:.4g}")
    compress.save_pipeline(pipe, args.out)
    print(f"saved model to {args.out}")


def cmd_predict(args):
    pipe = compress.load_pipeline(args.model)
    ds = channel.load_dataset(args.data)
    records = []
    for i in range(len(ds)):
        sample = ds.sample(i)
        _, metrics, dt = pipe.predict(sample)
        name = {"sinr-balance": "min_sinr", "power-min": "total_power_w",
                "sum-rate": "sum_rate"}[pipe.problem]
        records.append(bench.BenchRecord(
            method="bnn", instance=i, N=sample.n_antennas, K=sample.n_users,
            metric_name=name, metric_value=metrics[name.replace("_w", "")
                                                   if name == "total_power_w"
                                                   else name],
            feasible=metrics.get("feasible", True), wall_time_s=dt,
            seed=ds.seed))
    bench.write_records(args.out, records)
    print(f"wrote {len(records)} records to {args.out}")


def cmd_compress(args):
    pipe = compress.load_pipeline(args.model)
    metric = None
    if args.val:
        ds = channel.load_dataset(args.val)

        def metric(model, pipe=pipe, ds=ds):
            from .bnn import BNNPipeline

            p = BNNPipeline(problem=pipe.problem, model=model,
                            pad_antennas=pipe.pad_antennas,
                            pad_users=pipe.pad_users,
                            out_users=pipe.out_users,
                            input_scale=pipe.input_scale)
            return np.mean([p.objective(ds.sample(i))
                            for i in range(len(ds))])

    _, report = compress.compress_pipeline(
        pipe.model, args.threshold, args.bits, args.out,
        pipeline_meta=compress._pipeline_meta(pipe), metric=metric)
    print(json.dumps({k: report[k] for k in
                      ("original_bytes", "compressed_bytes", "ratio")}))
    if "metric_rel_change" in report:
        print(f"metric change {report['metric_rel_change']:+.3%}")


def cmd_bench(args):
    ds = channel.load_dataset(args.dataset) if args.dataset else None
    pipelines = {}
    if args.model:
        pipelines["bnn"] = compress.load_pipeline(args.model)
    if args.what == "power":
        records = bench.bench_power(ds, pipelines)
    elif args.what == "time":
        records, summary = bench.bench_time(ds, pipelines)
        print(json.dumps(summary, indent=2))
    else:
        cfg = bench.BerConfig(condition=args.condition, seed=args.seed,
                              symbols_per_point=args.symbols)
        records = bench.ber_sim(cfg, pipeline=pipelines.get("bnn"))
    bench.write_records(args.out, records)
    print(f"wrote {len(records)} records to {args.out}")


def build_parser():
    parser = argparse.ArgumentParser(prog="mdbeam")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a labelled dataset")
    p.add_argument("--problem", required=True,
                   choices=channel.PROBLEM_TAGS)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--sizes", help="comma list like 4x4,8x7 (equal prob.)")
    p.add_argument("--pad-n", type=int, default=None)
    p.add_argument("--pad-k", type=int, default=None)
    p.add_argument("--target-db", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_channel_args(p)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("solve", help="run a classical solver over a dataset")
    p.add_argument("--method", required=True,
                   choices=["balance", "powermin", "zf", "rzf", "wmmse"])
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--in", dest="dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("train", help="train a BNN pipeline")
    p.add_argument("--problem", required=True, choices=channel.PROBLEM_TAGS)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=["sup", "unsup", "hybrid"],
                   default="sup")
    p.add_argument("--arch", help="JSON file with layer specs")
    p.add_argument("--loss", default="mse", choices=["mse", "mae", "custom"])
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("predict", help="run a trained model over a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("compress", help="prune/quantize/encode a model")
    p.add_argument("--model", required=True)
    p.add_argument("--threshold", type=float, default=1e-3)
    p.add_argument("--bits", type=int, default=6)
    p.add_argument("--val", help="validation dataset for the metric delta")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_compress)

    p = sub.add_parser("bench", help="benchmarks and BER simulation")
    p.add_argument("what", choices=["power", "time", "bersim"])
    p.add_argument("--in", dest="dataset")
    p.add_argument("--model")
    p.add_argument("--condition", choices=["static", "dynamic"],
                   default="static")
    p.add_argument("--symbols", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_bench)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
