"""Random MISO downlink channel generation, dataset building and file I/O.

Channels combine Rayleigh fading with a log-distance pathloss law.  Datasets
are zero-padded to a fixed (N0, K0) so that one network can be trained on a
mix of problem sizes; labels are the per-problem key features (virtual
uplink power vectors) computed by the classical solvers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

PROBLEM_TAGS = ("sinr-balance", "power-min", "sum-rate")
_TAG_CODE = {t: i for i, t in enumerate(PROBLEM_TAGS)}

_MAGIC = b"BNND"
_VERSION = 1


def pathloss_db(d):
    """Log-distance pathloss in dB for distance d in km."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    out = 128.1 + 37.6 * np.log10(d)
    return float(out) if out.ndim == 0 else out


def pathloss_linear(d):
    """Linear power attenuation beta = 10^(-PL(d)/10)."""
    return 10.0 ** (-np.asarray(pathloss_db(d)) / 10.0)


def splitmix64(seed, index):
    """Derive an independent 64-bit sub-seed from (seed, index)."""
    mask = (1 << 64) - 1
    z = (int(seed) + (int(index) + 1) * 0x9E3779B97F4A7C15) & mask
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
    return z ^ (z >> 31)


@dataclass
class ChannelSample:
    """One problem instance: channels, noise power and power budget.

    ``sinr_targets`` is present only for power-minimisation instances.
    ``distances`` may be None for samples reconstructed from a dataset file.
    """

    H: np.ndarray                      # complex (N, K), column k = h_k
    noise_power: float                 # sigma^2, linear watts
    power_budget: float                # P_max, linear watts
    sinr_targets: np.ndarray | None = None   # linear, length K
    distances: np.ndarray | None = None      # km, length K

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=complex)
        if self.H.ndim != 2:
            raise ValueError("H must be a 2-D matrix")
        if not np.all(np.isfinite(self.H)):
            raise ValueError("H must be finite")
        if self.noise_power <= 0 or self.power_budget <= 0:
            raise ValueError("noise_power and power_budget must be positive")
        if self.sinr_targets is not None:
            self.sinr_targets = np.asarray(self.sinr_targets, dtype=float)
            if self.sinr_targets.shape != (self.n_users,):
                raise ValueError("sinr_targets must have length K")
            if np.any(self.sinr_targets <= 0):
                raise ValueError("sinr_targets must be positive")

    @property
    def n_antennas(self):
        return self.H.shape[0]

    @property
    def n_users(self):
        return self.H.shape[1]


def generate_channel(N, K, distance_range, noise_power, power_budget, seed,
                     sinr_targets=None):
    """Draw one Rayleigh + pathloss channel instance, deterministic in seed.

    h_k = sqrt(beta_k) * g_k with g_k ~ CN(0, I) and beta_k the linear
    pathloss at a distance drawn uniformly from ``distance_range``.
    """
    if N < 1 or K < 1 or K > N:
        raise ValueError(f"invalid dimensions N={N}, K={K} (need N >= K >= 1)")
    lo, hi = distance_range
    if lo <= 0 or hi < lo:
        raise ValueError("distance_range must satisfy 0 < lo <= hi")
    rng = np.random.default_rng(seed)
    d = rng.uniform(lo, hi, size=K)
    beta = pathloss_linear(d)
    g = (rng.standard_normal((N, K)) + 1j * rng.standard_normal((N, K))) \
        / np.sqrt(2.0)
    H = g * np.sqrt(beta)
    if sinr_targets is not None:
        sinr_targets = np.full(K, float(sinr_targets)) \
            if np.isscalar(sinr_targets) else np.asarray(sinr_targets, float)
    return ChannelSample(H=H, noise_power=float(noise_power),
                         power_budget=float(power_budget),
                         sinr_targets=sinr_targets, distances=d)


def pad_sample(sample, label, N0, K0):
    """Zero-pad a sample into a (2, N0, K0) real tensor plus a K0 label.

    Plane 0 carries Re(H) in the top-left N x K block, plane 1 carries
    Im(H); everything else is 0.
    """
    N, K = sample.n_antennas, sample.n_users
    if N > N0 or K > K0:
        raise ValueError(f"sample ({N},{K}) does not fit padding ({N0},{K0})")
    label = np.asarray(label, dtype=float)
    if label.shape != (K,):
        raise ValueError("label must have length K")
    x = np.zeros((2, N0, K0))
    x[0, :N, :K] = sample.H.real
    x[1, :N, :K] = sample.H.imag
    y = np.zeros(K0)
    y[:K] = label
    return x, y


def crop_planes(planes, N, K):
    """Inverse of the padding: recover the complex N x K channel matrix."""
    return planes[0, :N, :K] + 1j * planes[1, :N, :K]


def augment_dataset(dataset, copies, seed):
    """Symmetry-expanded dataset: the originals plus ``copies - 1``
    transformed replicas of every sample.

    Each replica applies a random user permutation, antenna permutation,
    per-user and per-antenna phase rotations and an optional conjugation.
    These are exact invariances of the key-feature map: the label permutes
    with the users and is otherwise unchanged, so no new solver labels are
    needed.
    """
    if copies < 1:
        raise ValueError("copies must be >= 1")
    blocks = [dataset]
    n = len(dataset)
    for c in range(1, copies):
        planes = np.zeros_like(dataset.planes)
        labels = np.zeros_like(dataset.labels)
        targets = np.zeros_like(dataset.targets)
        for i in range(n):
            N, K = dataset.dims[i]
            rng = np.random.default_rng(splitmix64(seed, c * n + i))
            H = crop_planes(dataset.planes[i], N, K)
            pu = rng.permutation(K)
            pa = rng.permutation(N)
            H = H[np.ix_(pa, pu)] \
                * np.exp(2j * np.pi * rng.random(K))[None, :] \
                * np.exp(2j * np.pi * rng.random(N))[:, None]
            if rng.random() < 0.5:
                H = H.conj()
            planes[i, 0, :N, :K] = H.real
            planes[i, 1, :N, :K] = H.imag
            labels[i, :K] = dataset.labels[i, :K][pu]
            targets[i, :K] = dataset.targets[i, :K][pu]
        blocks.append(Dataset(
            problem=dataset.problem, pad_antennas=dataset.pad_antennas,
            pad_users=dataset.pad_users, seed=dataset.seed,
            dims=dataset.dims.copy(), noise_power=dataset.noise_power.copy(),
            power_budget=dataset.power_budget.copy(), targets=targets,
            planes=planes, labels=labels))
    return Dataset(
        problem=dataset.problem, pad_antennas=dataset.pad_antennas,
        pad_users=dataset.pad_users, seed=dataset.seed,
        dims=np.concatenate([b.dims for b in blocks]),
        noise_power=np.concatenate([b.noise_power for b in blocks]),
        power_budget=np.concatenate([b.power_budget for b in blocks]),
        targets=np.concatenate([b.targets for b in blocks]),
        planes=np.concatenate([b.planes for b in blocks]),
        labels=np.concatenate([b.labels for b in blocks]),
        regenerated=dataset.regenerated)


@dataclass
class DatasetConfig:
    problem: str                       # one of PROBLEM_TAGS
    count: int
    sizes: list                       # list of (N, K) pairs, equal probability
    seed: int
    distance_range: tuple = (0.05, 0.3)
    noise_power: float = 1e-11
    power_budget: float = 1.0
    sinr_target: float | None = None   # linear, power-min only
    pad_antennas: int | None = None    # N0; defaults to max N
    pad_users: int | None = None       # K0; defaults to max K
    solver_tol: float = 1e-6
    solver_max_iter: int = 500

    def __post_init__(self):
        if self.problem not in PROBLEM_TAGS:
            raise ValueError(f"unknown problem tag {self.problem!r}")
        self.sizes = [tuple(s) for s in self.sizes]
        for (N, K) in self.sizes:
            if K > N:
                raise ValueError(f"size ({N},{K}) violates K <= N")
        if self.pad_antennas is None:
            self.pad_antennas = max(N for N, _ in self.sizes)
        if self.pad_users is None:
            self.pad_users = max(K for _, K in self.sizes)
        for (N, K) in self.sizes:
            if N > self.pad_antennas or K > self.pad_users:
                raise ValueError("size exceeds padded dimensions")
        if self.problem == "power-min" and self.sinr_target is None:
            raise ValueError("power-min dataset needs sinr_target")


@dataclass
class Dataset:
    """Padded, labelled channel dataset (arrays indexed by sample)."""

    problem: str
    pad_antennas: int
    pad_users: int
    seed: int
    dims: np.ndarray          # (count, 2) int, per-sample (N, K)
    noise_power: np.ndarray   # (count,)
    power_budget: np.ndarray  # (count,)
    targets: np.ndarray       # (count, K0), zeros where unused
    planes: np.ndarray        # (count, 2, N0, K0)
    labels: np.ndarray        # (count, K0)
    regenerated: int = 0

    def __len__(self):
        return self.planes.shape[0]

    def sample(self, i):
        """Reconstruct the i-th ChannelSample from its padded planes."""
        N, K = self.dims[i]
        targets = self.targets[i, :K] if self.problem == "power-min" else None
        return ChannelSample(H=crop_planes(self.planes[i], N, K),
                             noise_power=float(self.noise_power[i]),
                             power_budget=float(self.power_budget[i]),
                             sinr_targets=targets)

    def label(self, i):
        K = self.dims[i, 1]
        return self.labels[i, :K]


def _label_for(problem, sample, tol, max_iter):
    # imported lazily: solvers also imports nothing from here at top level
    from . import solvers

    if problem == "sinr-balance":
        res = solvers.sinr_balance_solve(sample, tol=tol, max_iter=max_iter)
        return res.q
    if problem == "power-min":
        _, _, q = solvers.power_min_solve(sample, tol=tol, max_iter=max_iter)
        return q
    res = solvers.wmmse_sum_rate(sample, tol=tol, max_iter=max_iter)
    return res.virtual_uplink_powers


def make_sample(config, i, attempt=0):
    """Generate (deterministically in (seed, i)) the i-th raw sample."""
    sub = splitmix64(config.seed, i + (attempt << 40))
    rng = np.random.default_rng(sub)
    N, K = config.sizes[int(rng.integers(len(config.sizes)))]
    targets = config.sinr_target if config.problem == "power-min" else None
    return generate_channel(N, K, config.distance_range, config.noise_power,
                            config.power_budget, seed=rng.integers(2 ** 63),
                            sinr_targets=targets)


def build_dataset(config):
    """Build a labelled dataset; sample i depends only on (seed, i).

    Samples on which the matching solver fails are regenerated with a fresh
    sub-seed; the number of regenerations is reported on the dataset.
    """
    N0, K0 = config.pad_antennas, config.pad_users
    n = config.count
    dims = np.zeros((n, 2), dtype=int)
    noise = np.zeros(n)
    budget = np.zeros(n)
    targets = np.zeros((n, K0))
    planes = np.zeros((n, 2, N0, K0))
    labels = np.zeros((n, K0))
    regenerated = 0
    for i in range(n):
        for attempt in range(64):
            sample = make_sample(config, i, attempt)
            try:
                lab = _label_for(config.problem, sample, config.solver_tol,
                                 config.solver_max_iter)
            except (ArithmeticError, np.linalg.LinAlgError, RuntimeError):
                regenerated += 1
                continue
            break
        else:
            raise RuntimeError(f"sample {i}: solver failed on 64 regenerations")
        K = sample.n_users
        dims[i] = (sample.n_antennas, K)
        noise[i] = sample.noise_power
        budget[i] = sample.power_budget
        if sample.sinr_targets is not None:
            targets[i, :K] = sample.sinr_targets
        planes[i], labels[i] = pad_sample(sample, lab, N0, K0)
    return Dataset(problem=config.problem, pad_antennas=N0, pad_users=K0,
                   seed=config.seed, dims=dims, noise_power=noise,
                   power_budget=budget, targets=targets, planes=planes,
                   labels=labels, regenerated=regenerated)


def save_dataset(dataset, path):
    """Write the little-endian binary dataset format."""
    n = len(dataset)
    N0, K0 = dataset.pad_antennas, dataset.pad_users
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<HBHHQQ", _VERSION, _TAG_CODE[dataset.problem],
                            N0, K0, n, dataset.seed))
        for i in range(n):
            N, K = dataset.dims[i]
            f.write(struct.pack("<HHdd", N, K, dataset.noise_power[i],
                                dataset.power_budget[i]))
            f.write(dataset.targets[i].astype("<f8").tobytes())
            f.write(dataset.planes[i].astype("<f8").tobytes())
            f.write(dataset.labels[i].astype("<f8").tobytes())


def load_dataset(path):
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != _MAGIC:
        raise ValueError("not a dataset file (bad magic)")
    version, tag, N0, K0, n, seed = struct.unpack_from("<HBHHQQ", raw, 4)
    if version != _VERSION:
        raise ValueError(f"unsupported dataset version {version}")
    if tag >= len(PROBLEM_TAGS):
        raise ValueError(f"unknown problem tag code {tag}")
    off = 4 + struct.calcsize("<HBHHQQ")
    per = struct.calcsize("<HHdd") + 8 * (K0 + 2 * N0 * K0 + K0)
    if len(raw) - off != n * per:
        raise ValueError("truncated or oversized dataset file")
    dims = np.zeros((n, 2), dtype=int)
    noise = np.zeros(n)
    budget = np.zeros(n)
    targets = np.zeros((n, K0))
    planes = np.zeros((n, 2, N0, K0))
    labels = np.zeros((n, K0))
    for i in range(n):
        N, K, s2, p = struct.unpack_from("<HHdd", raw, off)
        off += struct.calcsize("<HHdd")
        dims[i] = (N, K)
        noise[i] = s2
        budget[i] = p
        targets[i] = np.frombuffer(raw, "<f8", K0, off)
        off += 8 * K0
        planes[i] = np.frombuffer(raw, "<f8", 2 * N0 * K0, off) \
            .reshape(2, N0, K0)
        off += 8 * 2 * N0 * K0
        labels[i] = np.frombuffer(raw, "<f8", K0, off)
        off += 8 * K0
    return Dataset(problem=PROBLEM_TAGS[tag], pad_antennas=N0, pad_users=K0,
                   seed=seed, dims=dims, noise_power=noise, power_budget=budget,
                   targets=targets, planes=planes, labels=labels)
