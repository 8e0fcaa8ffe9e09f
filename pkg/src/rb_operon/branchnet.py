"""Branch network: a plain-numpy MLP trained on reduced-space losses.

The network maps (standardized) parameter/data features to reduced-basis
coefficients.  Two loss heads are provided.  The residual loss is label-free:
it measures the preconditioned reduced residual r^T A_rb^-1 r, whose gradient
with respect to the coefficients collapses to -2r because the operator is
symmetric.  Training uses an equivalent expanded form around the precomputed
Galerkin coefficients, (c_N - c)^T A_rb (c_N - c), which needs one batched
matrix apply and no solves per step.  The supervised loss is the exact L2
discrepancy against truth coefficients expanded offline so no full-order
vector is touched during training.
"""

import numpy as np
from dataclasses import dataclass, field
from scipy.special import ndtr

from .errors import CoercivityViolationError, TrainingDivergedError

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x):
    """Exact GELU x * Phi(x) with the normal CDF via erf."""
    return x * ndtr(x)


def gelu_grad(x):
    return ndtr(x) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def xavier_init(shape, rng):
    """Uniform Xavier/Glorot weights on +-sqrt(6/(fan_in+fan_out))."""
    fan_in, fan_out = shape
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x):
        x = np.asarray(x, dtype=float)
        return cls(mean=x.mean(axis=0), std=np.maximum(x.std(axis=0), 1e-12))

    def transform(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def inverse_transform(self, z):
        return np.asarray(z, dtype=float) * self.std + self.mean


class MLP:
    """Fully connected net, GELU hidden activations, identity output."""

    def __init__(self, sizes, seed=0):
        self.sizes = list(sizes)
        rng = np.random.default_rng(seed)
        self.weights = [xavier_init((a, b), rng)
                        for a, b in zip(sizes[:-1], sizes[1:])]
        self.biases = [np.zeros(b) for b in sizes[1:]]

    @property
    def n_params(self):
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def parameters(self):
        return self.weights + self.biases

    def set_parameters(self, params):
        nw = len(self.weights)
        self.weights = [p.copy() for p in params[:nw]]
        self.biases = [p.copy() for p in params[nw:]]

    def forward(self, x, standardizer=None, want_cache=False):
        h = standardizer.transform(x) if standardizer is not None else np.asarray(x, dtype=float)
        acts = [h]
        pres = []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if i < last:
                pres.append(z)
                h = gelu(z)
                acts.append(h)
            else:
                h = z
        return (h, (acts, pres)) if want_cache else h

    def backward(self, cache, dout):
        """Gradients of sum-of-(dout * output) w.r.t. weights and biases."""
        acts, pres = cache
        gw = [None] * len(self.weights)
        gb = [None] * len(self.biases)
        g = np.asarray(dout, dtype=float)
        for i in range(len(self.weights) - 1, -1, -1):
            gw[i] = acts[i].T @ g
            gb[i] = g.sum(axis=0)
            if i > 0:
                g = (g @ self.weights[i].T) * gelu_grad(pres[i - 1])
        return gw + gb


def forward(net, standardizer, features):
    """Branch prediction for a batch of feature rows."""
    return net.forward(np.atleast_2d(features), standardizer)


def residual_loss(a_rb, f_rb, c):
    """Mean preconditioned residual norm over a batch, with its c-gradient.

    a_rb is (n, N, N) SPD per sample, f_rb and c are (n, N).  Returns
    (loss, dloss/dc); the gradient is -2 r / n with r the residual.
    """
    a_rb = np.asarray(a_rb, dtype=float)
    f_rb = np.atleast_2d(np.asarray(f_rb, dtype=float))
    c = np.atleast_2d(np.asarray(c, dtype=float))
    n = c.shape[0]
    r = f_rb - np.einsum("sij,sj->si", a_rb, c)
    try:
        ell = np.linalg.cholesky(a_rb)
    except np.linalg.LinAlgError:
        for i in range(n):
            try:
                np.linalg.cholesky(a_rb[i])
            except np.linalg.LinAlgError:
                raise CoercivityViolationError(f"sample {i}: reduced operator not SPD")
        raise
    y = np.linalg.solve(ell, r[:, :, None])[:, :, 0]
    loss = float(np.einsum("si,si->", y, y) / n)
    return loss, -2.0 * r / n


def residual_loss_expanded(a_rb, c_n, c):
    """Equivalent residual loss around precomputed Galerkin coefficients.

    With e = c_N - c and r = A_rb e, r^T A_rb^-1 r = e^T A_rb e, so the loss
    and gradient need one operator apply and no factorization.
    """
    e = np.asarray(c_n, dtype=float) - np.atleast_2d(np.asarray(c, dtype=float))
    r = np.einsum("sij,sj->si", np.asarray(a_rb, dtype=float), e)
    n = e.shape[0]
    loss = float(np.einsum("si,si->", e, r) / n)
    return loss, -2.0 * r / n


def supervised_loss(m_n, targets, squares, c):
    """Exact reduced-space L2 discrepancy and gradient.

    loss_i = c^T M_N c - 2 c^T t_i + s_i with t = Psi^T M_II u_h and
    s = u_h^T M_II u_h precomputed offline.
    """
    c = np.atleast_2d(np.asarray(c, dtype=float))
    n = c.shape[0]
    mc = c @ m_n
    loss = float((np.einsum("si,si->", c, mc)
                  - 2.0 * np.einsum("si,si->", c, targets)
                  + np.sum(squares)) / n)
    return loss, 2.0 * (mc - targets) / n


@dataclass
class AdamWState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def init(cls, params):
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params])


def adamw_step(state, params, grads, lr, weight_decay, decay_mask=None,
               beta1=0.9, beta2=0.999, eps=1e-8):
    """One AdamW update in place; decoupled decay applied before the step."""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if weight_decay and (decay_mask is None or decay_mask[i]):
            p *= 1.0 - lr * weight_decay
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * (g * g)
        p -= lr * (state.m[i] / bc1) / (np.sqrt(state.v[i] / bc2) + eps)
    return params


@dataclass
class TrainConfig:
    epochs: int = 2000
    batch: int = 64
    lr: float = 5e-4
    weight_decay: float = 1e-6
    plateau_factor: float = 0.5
    plateau_patience: int = 20
    early_stop: int = 200
    min_lr: float = 1e-7
    improve_rtol: float = 1e-8
    seed: int = 0
    loss: str = "residual"

    def __post_init__(self):
        if self.loss not in ("residual", "supervised"):
            raise ValueError(f"unknown loss mode {self.loss!r}")
        if not 0 < self.plateau_factor < 1:
            raise ValueError("plateau factor must lie in (0, 1)")


@dataclass
class ResidualData:
    """Per-sample reduced systems for label-free training."""

    features: np.ndarray   # (n, d) raw features
    theta: np.ndarray      # (n, Q_a) operator weights
    a_flat: np.ndarray     # (Q_a, N*N) stacked reduced stiffness blocks
    c_n: np.ndarray        # (n, N) Galerkin coefficients (cached offline)

    def __len__(self):
        return self.features.shape[0]

    def batch_loss(self, idx, c):
        n = self.c_n.shape[1]
        a = (self.theta[idx] @ self.a_flat).reshape(len(idx), n, n)
        return residual_loss_expanded(a, self.c_n[idx], c)


@dataclass
class SupervisedData:
    """Precomputed reduced targets for supervised training."""

    features: np.ndarray
    m_n: np.ndarray        # (N, N) reduced mass
    targets: np.ndarray    # (n, N) Psi^T M_II u_h
    squares: np.ndarray    # (n,) u_h^T M_II u_h

    def __len__(self):
        return self.features.shape[0]

    def batch_loss(self, idx, c):
        return supervised_loss(self.m_n, self.targets[idx], self.squares[idx], c)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_epoch: int = -1


def _dataset_loss(net, standardizer, data, chunk=512):
    # chunked so the (chunk, N, N) operator stack stays small
    c = net.forward(data.features, standardizer)
    total = 0.0
    for start in range(0, len(data), chunk):
        idx = np.arange(start, min(start + chunk, len(data)))
        loss, _ = data.batch_loss(idx, c[idx])
        total += loss * len(idx)
    return total / len(data)


def train(net, train_data, val_data, config):
    """Mini-batch AdamW loop with plateau halving and early stopping.

    Returns (net, standardizer, history); the network carries the weights
    of the best validation epoch.
    """
    rng = np.random.default_rng(config.seed)
    standardizer = Standardizer.fit(train_data.features)
    state = AdamWState.init(net.parameters())
    decay_mask = [True] * len(net.weights) + [False] * len(net.biases)
    history = TrainHistory()
    n = len(train_data)
    lr = config.lr
    best_val = np.inf
    best_params = [p.copy() for p in net.parameters()]
    since_improve = 0
    since_plateau = 0

    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, config.batch):
            idx = order[lo:lo + config.batch]
            c, cache = net.forward(train_data.features[idx], standardizer,
                                   want_cache=True)
            loss, dldc = train_data.batch_loss(idx, c)
            epoch_loss += loss * len(idx)
            grads = net.backward(cache, dldc)
            adamw_step(state, net.parameters(), grads, lr,
                       config.weight_decay, decay_mask)
        epoch_loss /= n
        if not np.isfinite(epoch_loss):
            raise TrainingDivergedError(epoch)
        val = _dataset_loss(net, standardizer, val_data)
        if not np.isfinite(val):
            raise TrainingDivergedError(epoch)
        history.train_loss.append(epoch_loss)
        history.val_loss.append(val)
        history.lr.append(lr)

        if val < best_val * (1.0 - config.improve_rtol) or epoch == 0:
            best_val = val
            best_params = [p.copy() for p in net.parameters()]
            history.best_epoch = epoch
            since_improve = 0
            since_plateau = 0
        else:
            since_improve += 1
            since_plateau += 1
        if since_plateau >= config.plateau_patience:
            lr = max(lr * config.plateau_factor, config.min_lr)
            since_plateau = 0
        if since_improve >= config.early_stop:
            history.stopped_epoch = epoch
            break

    net.set_parameters(best_params)
    return net, standardizer, history
