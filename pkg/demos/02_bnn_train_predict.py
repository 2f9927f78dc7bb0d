"""End-to-end BNN: dataset, training, prediction, benchmark CSVs.

Builds a small SINR-balancing dataset at N=K=4, trains a beamforming
neural network on the key features of the optimal solutions, and
compares its predictions against the exact solver and the zero-forcing
baselines.  Writes the power and timing benchmark CSVs consumed by the
separate report generator into demo_out/.

Runtime: a few minutes on a laptop CPU.

Run:  python3 demos/02_bnn_train_predict.py
"""

from pathlib import Path

import numpy as np

from mdbeam import bench, compress, solvers
from mdbeam.bnn import build_pipeline, train_supervised
from mdbeam.channel import DatasetConfig, build_dataset
from mdbeam.nn import TrainConfig

OUT = Path(__file__).resolve().parent.parent / "demo_out"


def main():
    OUT.mkdir(exist_ok=True)
    print("generating datasets (labels = exact solver key features)...")
    train = build_dataset(DatasetConfig(
        problem="sinr-balance", count=4000, sizes=[(4, 4)], seed=7,
        solver_tol=1e-8, solver_max_iter=2000))
    test = build_dataset(DatasetConfig(
        problem="sinr-balance", count=500, sizes=[(4, 4)], seed=8,
        solver_tol=1e-8, solver_max_iter=2000))

    print("training (supervised, log-domain key features)...")
    pipe = build_pipeline("sinr-balance", 4, 4, seed=0,
                          feature_transform="log")
    for epochs, lr in ((20, 1e-3), (8, 2e-4)):
        cfg = TrainConfig(epochs=epochs, batch_size=64, learning_rate=lr,
                          seed=0, loss="mse")
        hist = train_supervised(pipe, train, cfg)
        print(f"  lr={lr:g}: training loss -> {hist[-1]:.4f}")
    model_path = OUT / "balance_4x4.bnn"
    compress.save_pipeline(pipe, model_path)
    print(f"saved model to {model_path}")

    samples = [test.sample(i) for i in range(len(test))]
    _, mets, dt = pipe.predict_batch(samples)
    bnn_sinr = np.array([m["min_sinr"] for m in mets])
    opt = np.array([solvers.sinr_balance_solve(s, tol=1e-8).C
                    for s in samples])
    zf = np.array([solvers.downlink_sinr(
        s.H, solvers.zf_beamformer(s, "balance"), s.noise_power).min()
        for s in samples])
    print(f"avg min-SINR  BNN {bnn_sinr.mean():.4f}  "
          f"optimal {opt.mean():.4f}  ZF {zf.mean():.4f}")
    print(f"BNN reaches {bnn_sinr.mean() / opt.mean():.1%} of the optimal "
          f"balanced level ({dt / len(samples) * 1e3:.2f} ms/prediction)")

    print("writing benchmark CSVs...")
    power_csv = OUT / "power.csv"
    bench.write_records(power_csv,
                        bench.bench_power(test, {"bnn": pipe}))
    time_csv = OUT / "time.csv"
    records, summary = bench.bench_time(test, {"bnn": pipe})
    bench.write_records(time_csv, records)
    for name, stats in summary.items():
        print(f"  {name:12s} mean {stats['mean_s'] * 1e3:8.3f} ms")
    print(f"wrote {power_csv} and {time_csv}")


if __name__ == "__main__":
    main()
