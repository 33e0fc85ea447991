"""Bootstrapped ensemble of Gaussian-head MLPs, written directly in numpy.

Members are stored stacked along a leading axis so one batched matmul trains
all of them at once. Each member predicts the normalized state delta and a
log-variance squashed between learned soft bounds.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .data import ReplayDataset
from .env import L_AHEAD, L_BEHIND, SENSOR_RANGE, STATE_DIM, V, V_AHEAD, V_BEHIND, V_MAX

CHECKPOINT_MAGIC = b"MPETSENS"
CHECKPOINT_VERSION = 1


class EmptyBatch(ValueError):
    pass


class InsufficientData(ValueError):
    pass


def softplus(x):
    return np.logaddexp(0.0, x)


def gaussian_nll(mean, logvar, target) -> float:
    """Summed diagonal Gaussian NLL without the constant and the 1/2 factor:
    sum_n [(mu - y)^T diag(e^-logvar) (mu - y) + sum logvar]."""
    mean = np.asarray(mean, dtype=float)
    if mean.size == 0:
        raise EmptyBatch("empty batch")
    diff = mean - np.asarray(target, dtype=float)
    return float(np.sum(diff * diff * np.exp(-logvar) + logvar))


@dataclass
class EnsembleConfig:
    n_members: int = 5
    hidden: int = 300
    n_layers: int = 3
    lr: float = 1e-3
    epochs: int = 5
    batch_size: int = 128
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_logvar_init: float = 0.5
    min_logvar_init: float = -10.0
    bound_reg: float = 0.01
    warm_start: bool = True


@dataclass
class GaussianPrediction:
    mean: np.ndarray
    var: np.ndarray


def default_state_box(dim: int = STATE_DIM):
    lo = np.full(dim, -np.inf)
    hi = np.full(dim, np.inf)
    if dim == STATE_DIM:
        for k in (V, V_AHEAD, V_BEHIND):
            lo[k], hi[k] = 0.0, V_MAX
        for k in (L_AHEAD, L_BEHIND):
            lo[k], hi[k] = 0.0, SENSOR_RANGE
    return lo, hi


class Adam:
    """Adaptive-moment gradient descent with bias correction."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def forward(p: dict, x: np.ndarray, n_hidden: int, out_dim: int):
    """Forward pass. Works on a single member (2-D x) or stacked members (3-D x)."""
    cache = []
    h = x
    for k in range(n_hidden):
        z = h @ p[f"W{k}"] + p[f"b{k}"]
        sig = expit(z)
        cache.append((h, z, sig))
        h = z * sig  # swish
    o = h @ p[f"W{n_hidden}"] + p[f"b{n_hidden}"]
    mean = o[..., :out_dim]
    raw = o[..., out_dim:]
    u = p["max_lv"] - raw
    lv1 = p["max_lv"] - softplus(u)
    w = lv1 - p["min_lv"]
    logvar = p["min_lv"] + softplus(w)
    return mean, logvar, (cache, h, u, w)


def backward(p: dict, state, dmean, dlogvar, n_hidden: int) -> dict:
    cache, h, u, w = state
    grads = {}
    sw = expit(w)
    grads["min_lv"] = np.sum(dlogvar * (1.0 - sw), axis=-2, keepdims=True)
    dlv1 = dlogvar * sw
    su = expit(u)
    grads["max_lv"] = np.sum(dlv1 * (1.0 - su), axis=-2, keepdims=True)
    draw = dlv1 * su
    do = np.concatenate([dmean, draw], axis=-1)
    grads[f"W{n_hidden}"] = np.swapaxes(h, -1, -2) @ do
    grads[f"b{n_hidden}"] = np.sum(do, axis=-2, keepdims=True)
    dh = do @ np.swapaxes(p[f"W{n_hidden}"], -1, -2)
    for k in reversed(range(n_hidden)):
        h_in, z, sig = cache[k]
        dz = dh * (sig + z * sig * (1.0 - sig))
        grads[f"W{k}"] = np.swapaxes(h_in, -1, -2) @ dz
        grads[f"b{k}"] = np.sum(dz, axis=-2, keepdims=True)
        if k:
            dh = dz @ np.swapaxes(p[f"W{k}"], -1, -2)
    return grads


def nll_and_grads(p: dict, xn, yn, n_hidden: int, out_dim: int):
    """Summed NLL on normalized data and its gradient w.r.t. every parameter."""
    if xn.shape[-2] == 0:
        raise EmptyBatch("empty batch")
    mean, logvar, state = forward(p, xn, n_hidden, out_dim)
    diff = mean - yn
    inv = np.exp(-logvar)
    loss = np.sum(diff * diff * inv + logvar, axis=(-2, -1))
    dmean = 2.0 * diff * inv
    dlogvar = 1.0 - diff * diff * inv
    return loss, backward(p, state, dmean, dlogvar, n_hidden)


class ProbabilisticEnsemble:
    """B Gaussian-head MLPs predicting s_next - s from standardized (s, a)."""

    def __init__(self, state_dim: int = STATE_DIM, action_dim: int = 1, cfg: EnsembleConfig | None = None,
                 rng: np.random.Generator | None = None, state_box=None):
        self.cfg = cfg or EnsembleConfig()
        if self.cfg.n_members < 1:
            raise ValueError("need at least one member")
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.in_dim = state_dim + action_dim
        self.n_hidden = self.cfg.n_layers
        lo, hi = state_box if state_box is not None else default_state_box(state_dim)
        self.state_lo, self.state_hi = np.asarray(lo, float), np.asarray(hi, float)
        self.in_mu = np.zeros(self.in_dim)
        self.in_sd = np.ones(self.in_dim)
        self.out_mu = np.zeros(state_dim)
        self.out_sd = np.ones(state_dim)
        self.n_queries = 0
        self.n_train_calls = 0
        self.init_params(rng if rng is not None else np.random.default_rng(0))

    @property
    def n_members(self) -> int:
        return self.cfg.n_members

    def init_params(self, rng: np.random.Generator):
        cfg = self.cfg
        B = cfg.n_members
        sizes = [self.in_dim] + [cfg.hidden] * self.n_hidden + [2 * self.state_dim]
        p = {}
        for k, (fi, fo) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = 1.0 / np.sqrt(fi)
            p[f"W{k}"] = rng.uniform(-bound, bound, size=(B, fi, fo))
            p[f"b{k}"] = np.zeros((B, 1, fo))
        p["max_lv"] = np.full((B, 1, self.state_dim), cfg.max_logvar_init)
        p["min_lv"] = np.full((B, 1, self.state_dim), cfg.min_logvar_init)
        self.params = p
        self.optim = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)

    def member_params(self, b: int) -> dict:
        if not 0 <= b < self.n_members:
            raise IndexError(f"member {b} out of range")
        return {k: v[b] for k, v in self.params.items()}

    # --- normalization ---------------------------------------------------

    @staticmethod
    def _std(x):
        sd = x.std(axis=0)
        return np.where(sd < 1e-8, 1.0, sd)

    def fit_normalizer(self, X, Y):
        self.in_mu, self.in_sd = X.mean(axis=0), self._std(X)
        self.out_mu, self.out_sd = Y.mean(axis=0), self._std(Y)

    def _inputs(self, s, a):
        s = np.atleast_2d(np.asarray(s, float))
        a = np.asarray(a, float).reshape(s.shape[0], self.action_dim)
        return np.concatenate([s, a], axis=1)

    def normalize(self, s, a, s_next=None):
        xn = (self._inputs(s, a) - self.in_mu) / self.in_sd
        if s_next is None:
            return xn
        s = np.atleast_2d(np.asarray(s, float))
        yn = (np.atleast_2d(s_next) - s - self.out_mu) / self.out_sd
        return xn, yn

    # --- prediction ------------------------------------------------------

    def raw_forward(self, b: int, xn):
        mean, logvar, _ = forward(self.member_params(b), xn, self.n_hidden, self.state_dim)
        return mean, logvar

    def predict(self, b: int, s, a) -> GaussianPrediction:
        """De-normalized next-state mean and variance from member b."""
        self.n_queries += 1
        s = np.atleast_2d(np.asarray(s, float))
        mean_n, logvar = self.raw_forward(b, self.normalize(s, a))
        mean = s + mean_n * self.out_sd + self.out_mu
        var = np.exp(logvar) * self.out_sd**2
        return GaussianPrediction(mean, var)

    def predict_members(self, members, s, a) -> GaussianPrediction:
        """Row r is predicted by member members[r]."""
        self.n_queries += 1
        s = np.atleast_2d(np.asarray(s, float))
        members = np.asarray(members)
        xn = self.normalize(s, a)
        mean_n = np.empty((len(s), self.state_dim))
        logvar = np.empty_like(mean_n)
        for b in np.unique(members):
            rows = members == b
            mean_n[rows], logvar[rows] = self.raw_forward(int(b), xn[rows])
        return GaussianPrediction(s + mean_n * self.out_sd + self.out_mu, np.exp(logvar) * self.out_sd**2)

    def clamp_state(self, s):
        return np.clip(s, self.state_lo, self.state_hi)

    def sample_next(self, b, s, a, rng: np.random.Generator):
        """Draw s_next ~ N(mu, diag var) from member b (int) or per-row members (array)."""
        if np.ndim(b) == 0:
            pred = self.predict(int(b), s, a)
        else:
            pred = self.predict_members(b, s, a)
        z = rng.standard_normal(pred.mean.shape)
        return self.clamp_state(pred.mean + np.sqrt(pred.var) * z)

    def variance_bounds(self, b: int):
        """Exact (lower, upper) limits of the normalized variance of member b."""
        mx = self.params["max_lv"][b, 0]
        mn = self.params["min_lv"][b, 0]
        return np.exp(mn), np.exp(mn + softplus(mx - mn))

    # --- training --------------------------------------------------------

    def nll(self, b: int, s, a, s_next) -> float:
        xn, yn = self.normalize(s, a, s_next)
        mean, logvar = self.raw_forward(b, xn)
        return gaussian_nll(mean, logvar, yn)

    def loss_and_grads(self, b: int, xn, yn):
        loss, grads = nll_and_grads(self.member_params(b), xn, yn, self.n_hidden, self.state_dim)
        return float(loss), grads

    def train(self, data, rng: np.random.Generator) -> dict:
        """Fit every member on its own bootstrap resample of the data.

        Returns a history with per-epoch mean NLL of each member on its
        bootstrap set, shape (epochs, B).
        """
        cfg = self.cfg
        if isinstance(data, ReplayDataset):
            if len(data) < cfg.batch_size:
                raise InsufficientData(f"{len(data)} transitions < batch size {cfg.batch_size}")
            s, a, s_next = data.arrays()
        else:
            s, a, s_next = data
        n = len(s)
        if n < cfg.batch_size:
            raise InsufficientData(f"{n} transitions < batch size {cfg.batch_size}")
        member_rngs = rng.spawn(cfg.n_members)
        if not cfg.warm_start and self.n_train_calls > 0:
            self.init_params(rng.spawn(1)[0])
        X = self._inputs(s, a)
        Y = np.asarray(s_next, float) - np.asarray(s, float)
        self.fit_normalizer(X, Y)
        Xn = (X - self.in_mu) / self.in_sd
        Yn = (Y - self.out_mu) / self.out_sd

        B = cfg.n_members
        boot = np.stack([r.integers(0, n, size=n) for r in member_rngs])
        history = np.empty((cfg.epochs, B))
        for epoch in range(cfg.epochs):
            order = np.stack([boot[b, member_rngs[b].permutation(n)] for b in range(B)])
            for start in range(0, n, cfg.batch_size):
                idx = order[:, start:start + cfg.batch_size]
                xb, yb = Xn[idx], Yn[idx]
                _, grads = nll_and_grads(self.params, xb, yb, self.n_hidden, self.state_dim)
                m = idx.shape[1]
                for k in grads:
                    grads[k] /= m
                grads["max_lv"] += cfg.bound_reg
                grads["min_lv"] -= cfg.bound_reg
                self.optim.step(self.params, grads)
            history[epoch] = self.bootstrap_nll(Xn[boot], Yn[boot])
        self.n_train_calls += 1
        return {"nll": history, "bootstrap": boot}

    def bootstrap_nll(self, Xb, Yb):
        mean, logvar, _ = forward(self.params, Xb, self.n_hidden, self.state_dim)
        diff = mean - Yb
        return np.mean(np.sum(diff * diff * np.exp(-logvar) + logvar, axis=-1), axis=-1)

    # --- test hooks ------------------------------------------------------

    def force_min_variance(self, logvar: float = -40.0):
        self.params["max_lv"][:] = logvar
        self.params["min_lv"][:] = logvar

    def zero_output_layer(self):
        L = self.n_hidden
        self.params[f"W{L}"][:] = 0.0
        self.params[f"b{L}"][:] = 0.0
        self.out_mu = np.zeros(self.state_dim)

    def param_hash(self, b: int) -> str:
        h = hashlib.sha256()
        for k in sorted(self.params):
            h.update(np.ascontiguousarray(self.params[k][b]).tobytes())
        return h.hexdigest()

    # --- checkpoint ------------------------------------------------------

    def _param_order(self):
        L = self.n_hidden
        return [f"W{k}" for k in range(L + 1)] + [f"b{k}" for k in range(L + 1)] + ["max_lv", "min_lv"]

    def save(self, path) -> Path:
        """Binary checkpoint plus a JSON metadata sidecar (path + '.json')."""
        path = Path(path)
        header = struct.pack("<8sI5I", CHECKPOINT_MAGIC, CHECKPOINT_VERSION, self.state_dim, self.action_dim,
                             self.cfg.hidden, self.n_hidden, self.n_members)
        with open(path, "wb") as f:
            f.write(header)
            for k in self._param_order():
                f.write(np.ascontiguousarray(self.params[k], dtype="<f8").tobytes())
            for arr in (self.in_mu, self.in_sd, self.out_mu, self.out_sd, self.state_lo, self.state_hi):
                f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        meta = {
            "format_version": CHECKPOINT_VERSION,
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
            "config": asdict(self.cfg),
            "param_shapes": {k: list(self.params[k].shape) for k in self._param_order()},
            "target": "state delta (s_next - s), standardized",
            "train_calls": self.n_train_calls,
        }
        Path(str(path) + ".json").write_text(json.dumps(meta, indent=2, default=_json_default))
        return path

    @classmethod
    def load(cls, path) -> "ProbabilisticEnsemble":
        path = Path(path)
        blob = path.read_bytes()
        hsize = struct.calcsize("<8sI5I")
        magic, version, sdim, adim, hidden, layers, B = struct.unpack("<8sI5I", blob[:hsize])
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not an ensemble checkpoint")
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        sidecar = Path(str(path) + ".json")
        cfg = EnsembleConfig(n_members=B, hidden=hidden, n_layers=layers)
        if sidecar.exists():
            cfg = EnsembleConfig(**json.loads(sidecar.read_text())["config"])
        model = cls(sdim, adim, cfg)
        offset = hsize
        for k in model._param_order():
            arr = model.params[k]
            nbytes = arr.size * 8
            model.params[k] = np.frombuffer(blob, "<f8", arr.size, offset).reshape(arr.shape).copy()
            offset += nbytes
        stats = []
        for size in (model.in_dim, model.in_dim, sdim, sdim, sdim, sdim):
            stats.append(np.frombuffer(blob, "<f8", size, offset).copy())
            offset += size * 8
        model.in_mu, model.in_sd, model.out_mu, model.out_sd, model.state_lo, model.state_hi = stats
        if offset != len(blob):
            raise ValueError("trailing bytes in checkpoint")
        return model


def _json_default(o):
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(type(o))
