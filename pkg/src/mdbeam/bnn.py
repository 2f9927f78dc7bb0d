"""Model-driven beamforming network: NN key-feature prediction wrapped by a
signal-processing module (scaling layer + duality conversion layer).

The network predicts the low-dimensional virtual uplink power vector q of a
problem instance; the SP module recovers the full beamforming matrix from q
using the classical duality machinery, so the power constraint is enforced
structurally and a perfect prediction reproduces the classical solution
exactly.

Channel magnitudes span many orders of magnitude because of pathloss, so
the pipeline normalizes its inputs by a scale factor s (per-sample RMS of
the stacked Re/Im planes by default, or a fixed configured value) and
trains against key features scaled by s^2 / sigma^2 so the targets are
O(1); the physical q is recovered as output * sigma^2 / s^2.  For power
minimisation this normalization is exact: q(H/s) = s^2 q(H).  With
feature_transform="log" the network regresses the logarithm of the scaled
key features instead, which tames their heavy-tailed distribution.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import nn, solvers
from .channel import pad_sample, Dataset

PER_SAMPLE = "per_sample"


class PipelineMismatchError(ValueError):
    pass


@dataclass
class BNNPipeline:
    problem: str
    model: nn.NNModel
    pad_antennas: int
    pad_users: int
    out_users: int | None = None            # output dim; defaults to pad_users
    input_scale: float | str = PER_SAMPLE
    feature_transform: str = "linear"       # network output domain: linear|log
    input_features: str = "planes"          # network input: planes|gram
    symmetry_average: int = 1               # prediction views to average
    degenerate_predictions: int = 0
    conversion_failures: int = 0

    # key features span several orders of magnitude; in "log" mode the
    # network regresses their logarithm and predictions are exponentiated
    LOG_CLIP = 60.0

    def __post_init__(self):
        if self.out_users is None:
            self.out_users = self.pad_users
        if self.input_features not in ("planes", "gram", "gram-inv"):
            raise ValueError("input_features must be 'planes', 'gram' or "
                             "'gram-inv'")
        if self.model.input_shape != self.input_shape():
            raise PipelineMismatchError("model input shape does not match "
                                        "padded dimensions")
        if self.model.output_shape != (self.out_users,):
            raise PipelineMismatchError("model output dim must equal the "
                                        "padded user count")
        if self.feature_transform not in ("linear", "log"):
            raise ValueError("feature_transform must be 'linear' or 'log'")

    def input_shape(self):
        """Network input shape implied by the feature choice.

        "planes": stacked Re/Im of the padded channel matrix.  "gram":
        stacked Re/Im of the user Gram matrix H^H H, which carries all the
        information the key features depend on while being invariant to
        any unitary acting on the antennas (the network never has to learn
        that invariance from data).  "gram-inv" stacks the Gram matrix and
        its inverse; the inverse carries the zero-forcing solution on its
        diagonal, which puts the network output within a small correction
        of a feature it can read off directly.
        """
        if self.input_features == "gram":
            return (2, self.pad_users, self.pad_users)
        if self.input_features == "gram-inv":
            return (4, self.pad_users, self.pad_users)
        return (2, self.pad_antennas, self.pad_users)

    # -- input normalization ------------------------------------------------

    def scale_of(self, sample):
        if self.input_scale == PER_SAMPLE:
            # RMS over the 2*N*K real elements of the stacked Re/Im planes,
            # matching scales_of_dataset exactly
            return float(np.linalg.norm(sample.H)
                         / np.sqrt(2 * sample.H.size))
        return float(self.input_scale)

    def feature_factor(self, sample):
        """Map from network output to physical q: q = out / factor.

        Combines the input normalization (q scales as s^2 for the exactly
        invariant power-min map) with the noise power, so the normalized
        training targets are O(1) rather than O(sigma^2).
        """
        s = self.scale_of(sample)
        return s * s / sample.noise_power

    def scales_of_dataset(self, dataset):
        if self.input_scale == PER_SAMPLE:
            sq = (dataset.planes ** 2).sum(axis=(1, 2, 3))
            return np.sqrt(sq / (2 * dataset.dims[:, 0] * dataset.dims[:, 1]))
        return np.full(len(dataset), float(self.input_scale))

    def _feature_planes(self, H, s):
        """Normalized network input for one cropped channel matrix."""
        N, K = H.shape
        X = np.zeros(self.input_shape())
        if self.input_features == "gram":
            G = (H.conj().T @ H) / (s * s)
            X[0, :K, :K] = G.real
            X[1, :K, :K] = G.imag
        else:
            X[0, :N, :K] = H.real / s
            X[1, :N, :K] = H.imag / s
        return X

    def features_of_planes(self, planes, scales):
        """Vectorized normalized inputs from padded Re/Im planes."""
        if self.input_features == "gram":
            Hc = (planes[:, 0] + 1j * planes[:, 1]) \
                / scales[:, None, None]
            G = np.einsum("bnk,bnj->bkj", Hc.conj(), Hc)
            return np.stack([G.real, G.imag], axis=1)
        return planes / scales[:, None, None, None]

    # -- SP module ----------------------------------------------------------

    def scaling_layer(self, q_hat, power_budget, n_active):
        """Rescale the active entries of q_hat to sum exactly to the budget.

        An all-zero prediction falls back to an equal power split and is
        counted as degenerate.
        """
        q = np.array(q_hat[:n_active], dtype=float)
        if np.any(q < 0):
            raise ValueError("q_hat must be nonnegative")
        total = q.sum()
        if total <= 0:
            self.degenerate_predictions += 1
            return np.full(n_active, power_budget / n_active)
        return q * (power_budget / total)

    def conversion_layer(self, sample, q):
        """Execute the duality mapping from key features to (W, metrics)."""
        K = sample.n_users
        q = np.asarray(q, dtype=float)[:K]
        if self.problem == "sinr-balance":
            # optimal-for-directions power split: take the MMSE directions
            # induced by q but rebalance the downlink powers through the
            # extended coupling eigenproblem.  Identical to the plain
            # duality map at the optimum, far more robust off-optimum.
            Wt = solvers.mmse_beamformers(sample.H, q, sample.noise_power)
            coup = solvers.coupling_data(sample.H, Wt, sample.noise_power)
            _, p = solvers.balanced_allocation(coup, sample.power_budget,
                                               "downlink")
            W = Wt * np.sqrt(p)
            sinrs = solvers.downlink_sinr(sample.H, W, sample.noise_power)
            return W, {"min_sinr": float(sinrs.min())}
        if self.problem == "power-min":
            Wt = solvers.mmse_beamformers(sample.H, q, sample.noise_power)
            coup = solvers.coupling_data(sample.H, Wt, sample.noise_power)
            try:
                p = solvers.duality_downlink_powers(coup, sample.sinr_targets)
            except solvers.InfeasibleError:
                return None, {"total_power": np.inf, "feasible": False}
            return Wt * np.sqrt(p), {"total_power": float(p.sum()),
                                     "feasible": True}
        if self.problem == "sum-rate":
            try:
                W, _ = solvers.convert_q_to_W(sample, q)
            except (solvers.InfeasibleError, np.linalg.LinAlgError):
                # ill-conditioned off-optimum prediction: use the virtual
                # uplink powers directly as downlink powers along the MMSE
                # directions (keeps the exact budget, always well defined)
                self.conversion_failures += 1
                Wt = solvers.mmse_beamformers(sample.H, q,
                                              sample.noise_power)
                W = Wt * np.sqrt(q)
            return W, {"sum_rate": solvers.sum_rate(sample.H, W,
                                                    sample.noise_power)}
        raise ValueError(f"unknown problem tag {self.problem!r}")

    def apply_sp(self, sample, q_hat):
        """Scaling (where applicable) + conversion for a raw prediction."""
        if self.problem in ("sinr-balance", "sum-rate"):
            q = self.scaling_layer(q_hat, sample.power_budget, sample.n_users)
        else:
            q = np.asarray(q_hat[:sample.n_users], dtype=float)
            if q.sum() <= 0:
                self.degenerate_predictions += 1
                q = np.full(sample.n_users,
                            sample.power_budget / sample.n_users)
        return self.conversion_layer(sample, q)

    # -- end-to-end prediction ---------------------------------------------

    @staticmethod
    def _sym_transform(c, N, K):
        """Deterministic symmetry transform for averaging view ``c``.

        The key-feature map is exactly invariant under antenna permutations
        and per-antenna/per-user phase rotations and conjugation, and
        equivariant under user permutations, so predictions on transformed
        views estimate the same q up to the user reordering.
        """
        rng = np.random.default_rng((0x5EED, c, N, K))
        pa = rng.permutation(N)
        pu = rng.permutation(K)
        pha = np.exp(2j * np.pi * rng.random(N))
        phu = np.exp(2j * np.pi * rng.random(K))
        conj = bool(rng.random() < 0.5)
        return pa, pu, pha, phu, conj

    def _averaged_outputs(self, samples, X, scales):
        """Network outputs averaged over symmetry views (network domain).

        ``X`` is the normalized padded input batch; each extra view is the
        same batch re-expressed through a symmetry transform, so the
        average cancels the non-equivariant part of the prediction error.
        """
        k = self.symmetry_average
        if k <= 1:
            return self.model.forward(X, train=False)
        groups = {}
        for i, sample in enumerate(samples):
            groups.setdefault((sample.n_antennas, sample.n_users),
                              []).append(i)
        views = [np.asarray(X, dtype=float)]
        for c in range(1, k):
            Xc = np.zeros_like(views[0])
            for (N, K), idx in groups.items():
                pa, pu, pha, phu, conj = self._sym_transform(c, N, K)
                for i in idx:
                    Ht = samples[i].H[np.ix_(pa, pu)] \
                        * pha[:, None] * phu[None, :]
                    if conj:
                        Ht = Ht.conj()
                    Xc[i] = self._feature_planes(Ht, scales[i])
            views.append(Xc)
        B = views[0].shape[0]
        if B * k <= 512:
            # one stacked forward keeps the small-batch overhead per
            # prediction instead of per view
            outs = self.model.forward(np.concatenate(views), train=False)
            outs = outs.reshape(k, B, -1)
        else:
            outs = np.stack([self.model.forward(V, train=False)
                             for V in views])
        acc = outs[0].copy()
        for c in range(1, k):
            outc = outs[c]
            for (N, K), idx in groups.items():
                _, pu, _, _, _ = self._sym_transform(c, N, K)
                rows = np.asarray(idx)
                acc[rows[:, None], pu[None, :]] += outc[rows, :K]
                acc[rows, K:] += outc[rows, K:]
        return acc / k

    def predict_key_features(self, sample):
        """Pad, normalize, run the network and denormalize to physical q."""
        N, K = sample.n_antennas, sample.n_users
        if N > self.pad_antennas or K > self.pad_users:
            raise ValueError("sample dimensions exceed the padded size")
        if K > self.out_users:
            raise ValueError("sample has more users than the output layer")
        s = self.scale_of(sample)
        x = self._feature_planes(sample.H, s)
        out = self._averaged_outputs([sample], x[None], np.array([s]))[0]
        if self.feature_transform == "log":
            out = np.exp(np.clip(out, -self.LOG_CLIP, self.LOG_CLIP))
        return out / self.feature_factor(sample)

    def predict(self, sample):
        """Full prediction path; returns (W, metrics, wall_time_s)."""
        t0 = time.perf_counter()
        q_hat = self.predict_key_features(sample)
        W, metrics = self.apply_sp(sample, q_hat)
        dt = time.perf_counter() - t0
        metrics = dict(metrics)
        metrics["wall_time_s"] = dt
        return W, metrics, dt

    def predict_batch(self, samples):
        """Vectorized prediction over many samples of one problem instance
        size; returns (list of W, list of metric dicts, total wall time).

        The network runs one batched forward pass and the conversion layer
        runs as stacked linear algebra per (N, K) group, so the per-sample
        cost is amortized.  Samples whose prediction is degenerate or whose
        conversion needs special handling fall back to the scalar path.
        """
        t0 = time.perf_counter()
        B = len(samples)
        X = np.zeros((B, 2, self.pad_antennas, self.pad_users))
        sizes = np.empty(B)
        for i, sample in enumerate(samples):
            N, K = sample.n_antennas, sample.n_users
            if N > self.pad_antennas or K > self.pad_users:
                raise ValueError("sample dimensions exceed the padded size")
            X[i, 0, :N, :K] = sample.H.real
            X[i, 1, :N, :K] = sample.H.imag
            sizes[i] = 2 * N * K
        if self.input_scale == PER_SAMPLE:
            scales = np.sqrt((X * X).sum(axis=(1, 2, 3)) / sizes)
        else:
            scales = np.full(B, float(self.input_scale))
        out = self._averaged_outputs(
            samples, self.features_of_planes(X, scales), scales)
        if self.feature_transform == "log":
            out = np.exp(np.clip(out, -self.LOG_CLIP, self.LOG_CLIP))
        noise = np.array([sample.noise_power for sample in samples])
        q_all = out * (noise / (scales * scales))[:, None]
        results = [None] * B
        groups = {}
        for i, sample in enumerate(samples):
            groups.setdefault((sample.n_antennas, sample.n_users),
                              []).append(i)
        for (N, K), idx in groups.items():
            self._convert_group(samples, q_all, idx, N, K, results)
        dt = time.perf_counter() - t0
        Ws = [r[0] for r in results]
        metrics = [r[1] for r in results]
        return Ws, metrics, dt

    def _convert_group(self, samples, q_all, idx, N, K, results):
        """Stacked conversion for samples sharing one (N, K)."""
        H = np.stack([samples[i].H for i in idx])           # (B, N, K)
        s2 = np.array([samples[i].noise_power for i in idx])
        q = np.array(q_all[np.asarray(idx), :K], dtype=float)
        ok = np.all(q >= 0, axis=1) & (q.sum(axis=1) > 0)
        if self.problem in ("sinr-balance", "sum-rate"):
            P = np.array([samples[i].power_budget for i in idx])
            with np.errstate(invalid="ignore", divide="ignore"):
                q = q * (P / q.sum(axis=1))[:, None]
            if self.problem == "sum-rate":
                ok &= np.all(q > 0, axis=1)  # switched-off -> scalar path
        Hc = H.conj()
        M = s2[:, None, None] * np.eye(N) \
            + np.einsum("bnk,bmk->bnm", H * q[:, None, :], Hc)
        Wt = np.linalg.solve(M, H)
        Wt = Wt / np.linalg.norm(Wt, axis=1, keepdims=True)
        A = np.abs(np.einsum("bnk,bnj->bkj", Hc, Wt)) ** 2
        G = np.einsum("bkk->bk", A).copy()
        Psi = A - G[:, :, None] * np.eye(K)
        if self.problem == "sinr-balance":
            for row, i in enumerate(idx):
                sample = samples[i]
                if not ok[row]:
                    results[i] = self._scalar_result(sample, q_all[i])
                    continue
                coup = solvers.CouplingData(
                    G=G[row], Psi=Psi[row],
                    noise=np.full(K, s2[row]))
                _, p = solvers.balanced_allocation(coup, sample.power_budget,
                                                   "downlink")
                W = Wt[row] * np.sqrt(p)
                sinr = solvers.downlink_sinr(sample.H, W, sample.noise_power)
                results[i] = (W, {"min_sinr": float(sinr.min())})
            return
        if self.problem == "power-min":
            gam = np.stack([samples[i].sinr_targets for i in idx])
        else:
            Bq = np.abs(np.einsum("bnk,bnj->bkj", Wt.conj(), H)) ** 2
            sig = np.einsum("bkk->bk", Bq)
            interf = np.einsum("bkj,bj->bk", Bq, q) - q * sig
            gam = q * sig / (interf + s2[:, None])
        DGam = gam / G
        lin = np.eye(K) - DGam[:, :, None] * Psi
        rhs = DGam * s2[:, None]
        try:
            p = np.linalg.solve(lin, rhs[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            p = np.full((len(idx), K), -1.0)
        feas = np.all(p > 0, axis=1) & np.all(np.isfinite(p), axis=1)
        W = Wt * np.sqrt(np.where(p > 0, p, 0.0))[:, None, :]
        for row, i in enumerate(idx):
            sample = samples[i]
            if not ok[row] or (self.problem != "power-min"
                              and not feas[row]):
                results[i] = self._scalar_result(sample, q_all[i])
                continue
            if self.problem == "power-min":
                if not feas[row]:
                    results[i] = (None, {"total_power": np.inf,
                                         "feasible": False})
                    continue
                results[i] = (W[row], {"total_power": float(p[row].sum()),
                                       "feasible": True})
            elif self.problem == "sinr-balance":
                sinr = solvers.downlink_sinr(sample.H, W[row],
                                             sample.noise_power)
                results[i] = (W[row], {"min_sinr": float(sinr.min())})
            else:
                results[i] = (W[row], {"sum_rate": solvers.sum_rate(
                    sample.H, W[row], sample.noise_power)})

    def _scalar_result(self, sample, q_hat):
        try:
            return self.apply_sp(sample, q_hat)
        except (solvers.InfeasibleError, ArithmeticError, ValueError):
            self.conversion_failures += 1
            if self.problem == "power-min":
                return (None, {"total_power": np.inf, "feasible": False})
            raise

    def objective(self, sample):
        """Scalar objective of the prediction (used for validation scoring):
        min-SINR, negative total power (inf -> -inf), or sum rate."""
        _, metrics, _ = self.predict(sample)
        if self.problem == "sinr-balance":
            return metrics["min_sinr"]
        if self.problem == "power-min":
            return -metrics["total_power"]
        return metrics["sum_rate"]


# ---------------------------------------------------------------------------
# training

def _check_match(pipeline, dataset):
    if dataset.problem != pipeline.problem:
        raise PipelineMismatchError(
            f"dataset problem {dataset.problem!r} does not match pipeline "
            f"{pipeline.problem!r}")


def repad_dataset(dataset, N0, K0):
    """Re-embed a dataset's planes/labels into larger padded dimensions."""
    if dataset.pad_antennas == N0 and dataset.pad_users == K0:
        return dataset
    if dataset.pad_antennas > N0 or dataset.pad_users > K0:
        raise ValueError("cannot shrink padded dimensions")
    n = len(dataset)
    planes = np.zeros((n, 2, N0, K0))
    planes[:, :, :dataset.pad_antennas, :dataset.pad_users] = dataset.planes
    labels = np.zeros((n, K0))
    labels[:, :dataset.pad_users] = dataset.labels
    targets = np.zeros((n, K0))
    targets[:, :dataset.pad_users] = dataset.targets
    return Dataset(problem=dataset.problem, pad_antennas=N0, pad_users=K0,
                   seed=dataset.seed, dims=dataset.dims.copy(),
                   noise_power=dataset.noise_power.copy(),
                   power_budget=dataset.power_budget.copy(),
                   targets=targets, planes=planes, labels=labels,
                   regenerated=dataset.regenerated)


def training_arrays(pipeline, dataset, label_pad=None):
    """Normalized inputs and scaled key-feature targets for supervised runs.

    Targets live in the normalized domain (s^2 * q); labels may be shorter
    than the model output when the output layer was replaced.
    """
    ds = repad_dataset(dataset, pipeline.pad_antennas, pipeline.pad_users)
    s = pipeline.scales_of_dataset(ds)
    X = pipeline.features_of_planes(ds.planes, s)
    out_dim = label_pad or pipeline.out_users
    T = np.zeros((len(ds), out_dim))
    width = min(ds.labels.shape[1], out_dim)
    T[:, :width] = ds.labels[:, :width]
    T *= (s * s / ds.noise_power)[:, None]
    if pipeline.feature_transform == "log":
        # padded / switched-off entries floor at exp(-LOG_CLIP)
        T = np.log(np.maximum(T, np.exp(-pipeline.LOG_CLIP)))
    return X, T


def dataset_loss(model, X, T, tag, custom_delta=None, chunk=8192):
    # chunked forward: a whole-dataset convolution buffer can exceed memory
    total = 0.0
    for start in range(0, X.shape[0], chunk):
        pred = model.forward(X[start:start + chunk], train=False)
        Tc = T[start:start + chunk]
        if tag == "custom":
            part = (((pred - Tc) / (np.abs(Tc) + custom_delta)) ** 2).mean()
        else:
            part = nn.loss_and_grad(tag, pred, Tc)[0]
        total += part * pred.shape[0]
    return float(total / X.shape[0])


def train_supervised(pipeline, dataset, config):
    """Supervised training against solver-labelled key features.

    Deterministic given (seed, config, dataset): the shuffle permutation of
    each epoch is derived from the config seed.  Returns the per-epoch loss
    history; entry 0 is the loss of the freshly initialized model.
    """
    _check_match(pipeline, dataset)
    X, T = training_arrays(pipeline, dataset)
    return _train_model(pipeline.model, X, T, config)


def _train_model(model, X, T, config):
    n = X.shape[0]
    delta = None
    if config.loss == "custom":
        delta = 0.01 * max(float(np.abs(T).mean()), 1e-300)
    history = [dataset_loss(model, X, T, config.loss, delta)]
    step = 0
    for epoch in range(config.epochs):
        rng = np.random.default_rng((config.seed, epoch))
        perm = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            pred = model.forward(X[idx], train=True)
            if config.loss == "custom":
                w = 1.0 / (np.abs(T[idx]) + delta) ** 2
                grad = 2.0 * (pred - T[idx]) * w / pred.size
            else:
                _, grad = nn.loss_and_grad(config.loss, pred, T[idx])
            model.backward(grad)
            step += 1
            nn.adam_step(model, config, step)
        history.append(dataset_loss(model, X, T, config.loss, delta))
    return np.array(history)


def unsupervised_loss(pipeline, sample, q_hat, fd_step=1e-4, softmin_tau=10.0,
                      penalty=None, power_loss="log", ratio_cap=None,
                      power_ref=None):
    """Objective-based loss and its finite-difference gradient w.r.t. q_hat.

    Balance: negative soft-min of the achieved SINRs (temperature tau);
    sum-rate: reciprocal of the sum rate.  The gradient over the K active
    entries uses central differences with per-entry step 1e-4*max(1, q_k).
    Power minimisation: with ``power_loss="log"`` the log of the converted
    total power (the per-sample optimum only shifts this by a constant, so
    the gradient matches the log power ratio to the optimum; every sample
    weighs equally); with ``power_loss="linear"`` the total power itself,
    which targets the arithmetic mean power and therefore weighs
    expensive instances more.  With ``ratio_cap=(cap, weight)`` and a
    per-sample reference power ``power_ref`` (e.g. the labelled optimum),
    the linear loss adds ``weight * max(power - cap * power_ref, 0)``: a
    hinge that concentrates learning on instances converting far above
    their reference.  On conversion failure the loss is the supplied
    penalty with a zero gradient and the failure is counted.
    """
    K = sample.n_users
    q_hat = np.asarray(q_hat, dtype=float)

    def evaluate(q):
        if pipeline.problem == "sinr-balance":
            qs = pipeline.scaling_layer(q, sample.power_budget, K)
            _, sinrs = solvers.convert_q_to_W(sample, qs)
            m = sinrs.min()
            soft = m - np.log(np.exp(-softmin_tau * (sinrs - m)).sum()) \
                / softmin_tau
            return -soft
        if pipeline.problem == "sum-rate":
            qs = pipeline.scaling_layer(q, sample.power_budget, K)
            W, _ = solvers.convert_q_to_W(sample, qs)
            return 1.0 / (solvers.sum_rate(sample.H, W, sample.noise_power)
                          + 1e-9)
        if pipeline.problem == "power-min":
            if np.any(q[:K] < 0):
                raise solvers.InfeasibleError("negative key feature")
            _, m = pipeline.conversion_layer(sample, q)
            if not m["feasible"]:
                raise solvers.InfeasibleError("prediction infeasible")
            if power_loss == "linear":
                total = float(m["total_power"])
                if ratio_cap is not None and power_ref is not None:
                    cap, weight = ratio_cap
                    total += weight * max(total - cap * power_ref, 0.0)
                return total
            return float(np.log(m["total_power"]))
        raise ValueError(f"unknown problem tag {pipeline.problem!r}")

    try:
        loss = evaluate(q_hat[:K])
    except (solvers.InfeasibleError, ArithmeticError, ValueError):
        pipeline.conversion_failures += 1
        return (penalty if penalty is not None else 1.0), np.zeros(K)
    grad = np.zeros(K)
    for k in range(K):
        h = fd_step * max(1.0, q_hat[k])
        qp = q_hat[:K].copy()
        qm = q_hat[:K].copy()
        qp[k] += h
        qm[k] = max(qm[k] - h, 0.0)
        try:
            grad[k] = (evaluate(qp) - evaluate(qm)) / (qp[k] - qm[k])
        except (solvers.InfeasibleError, ArithmeticError, ValueError):
            grad[k] = 0.0
    return loss, grad


def train_unsupervised(pipeline, dataset, config, fd_step=1e-4,
                       softmin_tau=10.0, power_loss="log", ratio_cap=None):
    """Gradient descent on the objective-based loss.

    No labels are used except when ``ratio_cap=(cap, weight)`` is given
    for linear power-min refinement: the dataset labels then provide the
    per-sample reference power for the hinge penalty.
    """
    _check_match(pipeline, dataset)
    ds = repad_dataset(dataset, pipeline.pad_antennas, pipeline.pad_users)
    s = pipeline.scales_of_dataset(ds)
    X = pipeline.features_of_planes(ds.planes, s)
    n = len(ds)
    model = pipeline.model
    step = 0
    history = []
    max_loss = 0.0
    for epoch in range(config.epochs):
        rng = np.random.default_rng((config.seed, epoch, 0xC0FFEE))
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            out = model.forward(X[idx], train=True)
            gout = np.zeros_like(out)
            batch_loss = 0.0
            for row, i in enumerate(idx):
                sample = ds.sample(i)
                K = sample.n_users
                s2 = s[i] * s[i] / sample.noise_power
                if pipeline.feature_transform == "log":
                    q_hat = np.exp(np.clip(out[row], -pipeline.LOG_CLIP,
                                           pipeline.LOG_CLIP)) / s2
                else:
                    q_hat = out[row] / s2
                fails_before = pipeline.conversion_failures
                ref = float(ds.labels[i].sum()) if ratio_cap is not None \
                    else None
                loss, grad = unsupervised_loss(
                    pipeline, sample, q_hat, fd_step=fd_step,
                    softmin_tau=softmin_tau,
                    penalty=10.0 * max_loss if max_loss else 1.0,
                    power_loss=power_loss, ratio_cap=ratio_cap,
                    power_ref=ref)
                if pipeline.conversion_failures == fails_before:
                    # penalties for failed conversions must not feed back
                    # into the penalty scale
                    max_loss = max(max_loss, abs(loss))
                batch_loss += loss
                if pipeline.feature_transform == "log":
                    # d loss / d out = d loss / d q * q (chain through exp)
                    gout[row, :K] = grad * q_hat[:K]
                else:
                    gout[row, :K] = grad / s2
            # near-singular instances can produce exploding objective
            # gradients; bounding each sample's contribution by its norm
            # keeps the update stable without erasing the direction of the
            # (informative) hard-sample gradients
            norms = np.linalg.norm(gout, axis=1, keepdims=True)
            np.divide(gout, np.maximum(norms / 50.0, 1.0), out=gout)
            gout /= len(idx)
            model.backward(gout)
            step += 1
            nn.adam_step(model, config, step)
            epoch_loss += batch_loss
        history.append(epoch_loss / n)
    return np.array(history)


def validation_objective(pipeline, dataset, indices):
    vals = [pipeline.objective(dataset.sample(i)) for i in indices]
    return float(np.mean(vals))


def train_hybrid(pipeline, dataset, config_sup, config_unsup,
                 val_fraction=0.1):
    """Supervised pre-training followed by unsupervised refinement.

    The refined model is kept only if it does not degrade the validation
    objective; otherwise the stage-1 model is returned.
    """
    _check_match(pipeline, dataset)
    n = len(dataset)
    n_val = max(1, int(round(val_fraction * n)))
    val_idx = np.arange(n - n_val, n)
    train_ds = _subset(dataset, np.arange(n - n_val))
    sup_hist = train_supervised(pipeline, train_ds, config_sup)
    stage1_model = pipeline.model.copy()
    stage1_obj = validation_objective(pipeline, dataset, val_idx)
    unsup_hist = train_unsupervised(pipeline, train_ds, config_unsup)
    stage2_obj = validation_objective(pipeline, dataset, val_idx)
    if stage2_obj < stage1_obj:
        pipeline.model = stage1_model
        stage2_obj = stage1_obj
    return {"supervised_history": sup_hist, "unsupervised_history": unsup_hist,
            "stage1_objective": stage1_obj, "stage2_objective": stage2_obj}


def _subset(dataset, idx):
    return Dataset(problem=dataset.problem,
                   pad_antennas=dataset.pad_antennas,
                   pad_users=dataset.pad_users, seed=dataset.seed,
                   dims=dataset.dims[idx], noise_power=dataset.noise_power[idx],
                   power_budget=dataset.power_budget[idx],
                   targets=dataset.targets[idx], planes=dataset.planes[idx],
                   labels=dataset.labels[idx],
                   regenerated=dataset.regenerated)


# ---------------------------------------------------------------------------
# transfer learning

def fine_tune(pipeline, new_dataset, replace_io, config,
              pretrained_multiplier=0.0):
    """Adapt a pretrained pipeline to a new task size by fine-tuning.

    With ``replace_io`` the first trainable layer and the output head are
    re-initialized (output sized for the new task) and one fresh hidden
    dense layer is inserted before the head; pretrained layers train at
    ``pretrained_multiplier`` times the configured learning rate.
    """
    _check_match(pipeline, new_dataset)
    model = pipeline.model.copy()
    new_out = pipeline.out_users
    multipliers = {}
    if replace_io:
        new_out = new_dataset.pad_users
        specs = model.specs()
        rng = np.random.default_rng((config.seed, 0xF17E))
        # first trainable layer: fresh init, same spec
        first = next(i for i, l in enumerate(model.layers) if l.params())
        model.layers[first].init(rng)
        # output head: last dense, resized to the new task
        last = max(i for i, l in enumerate(model.layers)
                   if isinstance(l, nn.Dense))
        hidden = model.layers[last].in_dim
        head = nn.Dense(hidden, new_out)
        head.init(rng)
        bridge = nn.Dense(hidden, hidden)
        bridge.init(rng)
        layers = (model.layers[:last]
                  + [bridge, nn.Activation("relu"), head]
                  + model.layers[last + 1:])
        model = nn.NNModel(layers, model.input_shape)
        fresh = {first, last, last + 2}
        multipliers = {i: (1.0 if i in fresh else pretrained_multiplier)
                       for i, l in enumerate(model.layers) if l.params()}
    else:
        if new_dataset.pad_users != pipeline.out_users:
            raise PipelineMismatchError(
                "new task output size differs; use replace_io=True")
        multipliers = {i: pretrained_multiplier
                       for i, l in enumerate(model.layers) if l.params()}
    cfg = nn.TrainConfig(batch_size=config.batch_size, epochs=config.epochs,
                         learning_rate=config.learning_rate,
                         layer_multipliers=multipliers, loss=config.loss,
                         seed=config.seed, beta1=config.beta1,
                         beta2=config.beta2, eps=config.eps)
    new_pipe = BNNPipeline(problem=pipeline.problem, model=model,
                           pad_antennas=pipeline.pad_antennas,
                           pad_users=pipeline.pad_users, out_users=new_out,
                           input_scale=pipeline.input_scale,
                           feature_transform=pipeline.feature_transform,
                           input_features=pipeline.input_features,
                           symmetry_average=pipeline.symmetry_average)
    X, T = training_arrays(new_pipe, new_dataset)
    history = _train_model(model, X, T, cfg)
    return new_pipe, history


def build_pipeline(problem, N0, K0, seed, arch=None, input_scale=PER_SAMPLE,
                   conv_channels=8, hidden=128, feature_transform="linear",
                   input_features="planes", symmetry_average=1):
    """Fresh pipeline with the default (or a custom) architecture."""
    head = "abs" if feature_transform == "linear" else None
    if arch is not None:
        specs = arch
    elif input_features == "gram":
        specs = nn.gram_arch(K0, hidden=hidden, head=head)
    else:
        specs = nn.default_arch(N0, K0, conv_channels=conv_channels,
                                hidden=hidden, head=head)
    shape = (2, K0, K0) if input_features == "gram" else (2, N0, K0)
    model = nn.init_model(specs, shape, seed)
    return BNNPipeline(problem=problem, model=model, pad_antennas=N0,
                       pad_users=K0, input_scale=input_scale,
                       feature_transform=feature_transform,
                       input_features=input_features,
                       symmetry_average=symmetry_average)
