"""Benchmark harness and link-level BER simulator.

Produces per-instance CSV records (method, objective, feasibility, wall
time) for the power-minimisation comparison, per-method timing summaries,
and QPSK bit-error-rate curves under static and dynamic (outdated-CSI)
channel conditions with a Clarke-model fading correlation.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import solvers
from .channel import ChannelSample, generate_channel, pathloss_linear, \
    splitmix64

CSV_COLUMNS = ["method", "instance", "N", "K", "metric_name", "metric_value",
               "feasible", "wall_time_s", "seed"]


@dataclass
class BenchRecord:
    method: str
    instance: int
    N: int
    K: int
    metric_name: str
    metric_value: float
    feasible: bool
    wall_time_s: float
    seed: int


def write_records(path, records):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([r.method, r.instance, r.N, r.K, r.metric_name,
                        repr(float(r.metric_value)), int(r.feasible),
                        repr(float(r.wall_time_s)), r.seed])


def read_records(path):
    records = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV columns in {path}")
        for row in reader:
            records.append(BenchRecord(
                method=row["method"], instance=int(row["instance"]),
                N=int(row["N"]), K=int(row["K"]),
                metric_name=row["metric_name"],
                metric_value=float(row["metric_value"]),
                feasible=bool(int(row["feasible"])),
                wall_time_s=float(row["wall_time_s"]),
                seed=int(row["seed"])))
    return records


def feasibility_rate(records):
    if not records:
        raise ValueError("no records")
    return sum(r.feasible for r in records) / len(records)


# ---------------------------------------------------------------------------
# power / timing benchmarks

def _method_table(pipelines, tolerances):
    """Per-method callables sample -> (power, feasible)."""
    methods = {}
    for tol in tolerances:
        def optimal(sample, tol=tol):
            try:
                _, power, _ = solvers.power_min_solve(sample, tol=tol)
                return power, True
            except (solvers.InfeasibleError, solvers.NonConvergenceError):
                return np.inf, False
        methods[f"optimal@{tol:g}"] = optimal

    def zf(sample):
        W = solvers.zf_beamformer(sample, "targets")
        return float((np.abs(W) ** 2).sum()), True

    methods["zf"] = zf
    for name, pipe in (pipelines or {}).items():
        def predict(sample, pipe=pipe):
            _, metrics, _ = pipe.predict(sample)
            return metrics["total_power"], metrics["feasible"]
        methods[name] = predict
    return methods


def bench_power(dataset, pipelines=None, tolerances=(1e-2, 1e-4)):
    """Total-power benchmark over a power-min dataset.

    Returns one record per (method, instance) with the achieved transmit
    power, feasibility flag and wall time.
    """
    if dataset.problem != "power-min":
        raise ValueError("bench_power needs a power-min dataset")
    methods = _method_table(pipelines, tolerances)
    records = []
    for i in range(len(dataset)):
        sample = dataset.sample(i)
        for name, fn in methods.items():
            t0 = time.perf_counter()
            power, feasible = fn(sample)
            dt = time.perf_counter() - t0
            records.append(BenchRecord(
                method=name, instance=i, N=sample.n_antennas,
                K=sample.n_users, metric_name="total_power_w",
                metric_value=power, feasible=feasible, wall_time_s=dt,
                seed=dataset.seed))
    return records


def bench_time(dataset, pipelines=None, tolerances=(1e-2, 1e-4),
               include_noop=True):
    """Per-method wall-time records plus a mean/median summary dict."""
    methods = _method_table(pipelines, tolerances)
    if include_noop:
        methods["noop"] = lambda sample: (0.0, True)
    records = []
    for i in range(len(dataset)):
        sample = dataset.sample(i)
        for name, fn in methods.items():
            t0 = time.perf_counter()
            fn(sample)
            dt = time.perf_counter() - t0
            records.append(BenchRecord(
                method=name, instance=i, N=sample.n_antennas,
                K=sample.n_users, metric_name="wall_time_s",
                metric_value=dt, feasible=True, wall_time_s=dt,
                seed=dataset.seed))
    summary = {}
    for name in methods:
        times = [r.wall_time_s for r in records if r.method == name]
        summary[name] = {"mean_s": float(np.mean(times)),
                         "median_s": float(np.median(times))}
    return records, summary


# ---------------------------------------------------------------------------
# fading / BER simulation

def bessel_j0(x):
    """J0 by its ascending power series, truncated at 1e-12."""
    x = float(x)
    term = 1.0
    total = 1.0
    m = 0
    q = -(x * x) / 4.0
    while abs(term) > 1e-12:
        m += 1
        term *= q / (m * m)
        total += term
        if m > 1000:
            break
    return total


@dataclass
class FadingProcess:
    """First-order Gauss-Markov fading with Clarke-model correlation.

    The correlation over a computation delay tau is rho = J0(2 pi f_d tau)
    with Doppler f_d = 0.423 / T_c, so tau = 0 gives rho = 1 and delays
    past the coherence time decorrelate the CSI.
    """

    coherence_ms: float
    delay_ms: float

    @property
    def rho(self):
        return bessel_j0(2.0 * np.pi * 0.423 * self.delay_ms
                         / self.coherence_ms)

    def evolve(self, H, per_user_std, rng):
        """Channel after the delay: rho H + sqrt(1-rho^2) E, stationary."""
        rho = self.rho
        N, K = H.shape
        e = (rng.standard_normal((N, K)) + 1j * rng.standard_normal((N, K))) \
            / np.sqrt(2.0) * per_user_std
        return rho * H + np.sqrt(max(0.0, 1.0 - rho * rho)) * e


def _qpsk_bits(rng, n_users, n_symbols):
    bits = rng.integers(0, 2, size=(2, n_users, n_symbols))
    sym = ((2 * bits[0] - 1) + 1j * (2 * bits[1] - 1)) / np.sqrt(2.0)
    return bits, sym


@dataclass
class BerConfig:
    n_antennas: int = 4
    n_users: int = 4
    power_sweep_w: tuple = (0.25, 0.5, 1.0, 2.0, 4.0, 8.0)
    symbols_per_point: int = 100_000
    channels_per_point: int = 100
    condition: str = "static"            # or "dynamic"
    coherence_ms: float = 15.0
    delays_ms: dict = field(default_factory=lambda: {
        "optimal": 20.0, "bnn": 0.1, "zf": 0.05, "rzf": 0.05})
    noise_power: float = 1e-11
    distance_range: tuple = (0.05, 0.3)
    seed: int = 0

    def __post_init__(self):
        if self.symbols_per_point <= 0:
            raise ValueError("symbols_per_point must be positive")
        if self.condition not in ("static", "dynamic"):
            raise ValueError("condition must be 'static' or 'dynamic'")


def _ber_methods(pipeline):
    def optimal(sample):
        return solvers.sinr_balance_solve(sample).W

    def bnn(sample):
        if pipeline is None:
            raise ValueError("BER simulation needs a balance pipeline "
                             "for the 'bnn' method")
        W, _, _ = pipeline.predict(sample)
        return W

    return {"optimal": optimal, "bnn": bnn,
            "zf": lambda s: solvers.zf_beamformer(s, "balance"),
            "rzf": lambda s: solvers.rzf_beamformer(s)}


def ber_sim(config, pipeline=None, methods=None):
    """QPSK BER vs transmit power, per method, static or dynamic CSI.

    Beamformers are computed from the CSI available at design time; under
    the dynamic condition the channel then evolves through each method's
    computation delay before transmission, so slow methods transmit with
    outdated weights.  Each user detects with the scalar coefficient
    h_k^H w_k of the actual transmission channel.
    """
    method_fns = methods or _ber_methods(pipeline)
    syms_per_draw = max(1, config.symbols_per_point
                        // config.channels_per_point)
    records = []
    for pi, power in enumerate(config.power_sweep_w):
        errors = {name: 0 for name in method_fns}
        bits_total = {name: 0 for name in method_fns}
        t0 = {name: 0.0 for name in method_fns}
        for ci in range(config.channels_per_point):
            rng = np.random.default_rng(
                splitmix64(config.seed, pi * 1_000_003 + ci))
            sample = generate_channel(
                config.n_antennas, config.n_users, config.distance_range,
                config.noise_power, power, seed=rng.integers(2 ** 63))
            std = np.sqrt(pathloss_linear(sample.distances))
            bits, sym = _qpsk_bits(rng, config.n_users, syms_per_draw)
            noise = (rng.standard_normal((config.n_users, syms_per_draw))
                     + 1j * rng.standard_normal(
                         (config.n_users, syms_per_draw))) \
                * np.sqrt(config.noise_power / 2.0)
            for name, fn in method_fns.items():
                tic = time.perf_counter()
                W = fn(sample)
                t0[name] += time.perf_counter() - tic
                if config.condition == "dynamic":
                    fp = FadingProcess(config.coherence_ms,
                                       config.delays_ms.get(name, 0.0))
                    H_tx = fp.evolve(sample.H, std, rng)
                else:
                    H_tx = sample.H
                E = H_tx.conj().T @ W
                y = E @ sym + noise
                z = y / np.diag(E)[:, None]
                errors[name] += int((np.signbit(z.real)
                                     != (bits[0] == 0)).sum())
                errors[name] += int((np.signbit(z.imag)
                                     != (bits[1] == 0)).sum())
                bits_total[name] += 2 * config.n_users * syms_per_draw
        for name in method_fns:
            records.append(BenchRecord(
                method=name, instance=pi, N=config.n_antennas,
                K=config.n_users, metric_name=f"ber@{power:g}W",
                metric_value=errors[name] / bits_total[name], feasible=True,
                wall_time_s=t0[name] / config.channels_per_point,
                seed=config.seed))
    return records
