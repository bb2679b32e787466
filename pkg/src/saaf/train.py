"""Losses, L2 regularisation, optimisers, the training loop and the ridge fast path."""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .core import Saaf, basis_matrix, poly_matrix
from .errors import SolverError, TrainingError, UsageError
from .net import Network, backward, forward, predict, update_running_stats

log = logging.getLogger(__name__)

L2_DEFAULT = 1e-5


@dataclass
class SGD:
    momentum: float = 0.0

    def make(self, lr):
        return _SGDState(lr, self.momentum)


@dataclass
class Adam:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def make(self, lr):
        return _AdamState(lr, self.beta1, self.beta2, self.eps)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 200
    l2_lambda: float = L2_DEFAULT
    optimizer: SGD | Adam = field(default_factory=Adam)
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise UsageError("learning_rate must be positive")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise UsageError("batch_size must be a positive integer")
        if int(self.epochs) != self.epochs or self.epochs < 0:
            raise UsageError("epochs must be a non-negative integer")
        if not self.l2_lambda >= 0:
            raise UsageError("l2_lambda must be non-negative")


def mse_loss(predictions, targets):
    """Mean squared error and its gradient w.r.t. the predictions."""
    y = np.asarray(predictions, dtype=float).ravel()
    t = np.asarray(targets, dtype=float).ravel()
    if y.size != t.size:
        raise UsageError(f"prediction/target length mismatch: {y.size} vs {t.size}")
    if y.size == 0:
        raise UsageError("empty batch")
    r = y - t
    return float(np.mean(r ** 2)), 2.0 * r / y.size


def l2_penalty(params: dict, lam: float):
    """``lam * sum(theta**2)`` over every array in ``params`` and the matching gradients."""
    if lam < 0:
        raise UsageError("L2 coefficient must be non-negative")
    penalty = lam * sum(float(np.sum(p ** 2)) for p in params.values())
    return penalty, {k: 2.0 * lam * p for k, p in params.items()}


def _check_finite(grads):
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {k}")


class _SGDState:
    def __init__(self, lr, momentum):
        self.lr, self.momentum = lr, momentum
        self.velocity = {}

    def step(self, params, grads):
        _check_finite(grads)
        for k, g in grads.items():
            if self.momentum:
                v = self.velocity.get(k, 0.0) * self.momentum + g
                self.velocity[k] = v
            else:
                v = g
            params[k] -= self.lr * v


class _AdamState:
    def __init__(self, lr, beta1, beta2, eps):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, params, grads):
        _check_finite(grads)
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for k, g in grads.items():
            m = self.beta1 * self.m.get(k, 0.0) + (1 - self.beta1) * g
            v = self.beta2 * self.v.get(k, 0.0) + (1 - self.beta2) * g * g
            self.m[k], self.v[k] = m, v
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def optimizer_step(state, params: dict, grads: dict):
    """Apply one in-place update; ``state`` comes from ``SGD(...).make(lr)`` or ``Adam(...).make(lr)``."""
    state.step(params, grads)
    return params, state


@dataclass
class TrainReport:
    epochs: int
    train_loss: list
    val_loss: list
    n_params: int
    wall_time: float = 0.0

    def to_dict(self, include_timing: bool = False):
        d = asdict(self)
        if not include_timing:
            d.pop("wall_time")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def loss_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for i, loss in enumerate(self.train_loss):
            w.writerow([i + 1, repr(loss)])
        return buf.getvalue()


def loss_and_grads(net: Network, X, t, lam: float, training: bool = True):
    """Regularised MSE objective and its gradient on one batch."""
    y, trace = forward(net, X, training=training)
    loss, dy = mse_loss(y, t)
    grads = backward(net, trace, dy)
    penalty, pgrads = l2_penalty(net.params, lam)
    for k in grads:
        grads[k] = grads[k] + pgrads[k]
    return loss + penalty, grads, trace


def _full_mse(net, X, t):
    return mse_loss(predict(net, X), t)[0]


def train(net: Network, X, t, config: TrainConfig, X_val=None, t_val=None) -> TrainReport:
    """Mini-batch training; mutates ``net`` in place.

    Per-epoch losses are the full-data MSE after the epoch (inference mode).
    Raises ``TrainingError`` (with the partial report attached) on divergence.
    """
    X = np.asarray(X, dtype=float)
    t = np.asarray(t, dtype=float).ravel()
    if X.shape[0] == 0 or X.shape[0] != t.size:
        raise UsageError("training data must be non-empty with one target per row")
    rng = np.random.default_rng(config.seed)
    opt = config.optimizer.make(config.learning_rate)
    needs_pairs = any(s.normalize for s in net.specs)
    report = TrainReport(0, [], [], net.n_params())
    start = time.perf_counter()
    n = X.shape[0]
    for epoch in range(config.epochs):
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            if needs_pairs and idx.size < 2:
                continue
            loss, grads, trace = loss_and_grads(net, X[idx], t[idx], config.l2_lambda)
            if not np.isfinite(loss):
                report.wall_time = time.perf_counter() - start
                raise TrainingError(f"non-finite loss in epoch {epoch + 1}", report)
            try:
                opt.step(net.params, grads)
            except TrainingError as exc:
                report.wall_time = time.perf_counter() - start
                raise TrainingError(f"epoch {epoch + 1}: {exc}", report) from None
            update_running_stats(net, trace)
        train_loss = _full_mse(net, X, t)
        if not np.isfinite(train_loss):
            report.wall_time = time.perf_counter() - start
            raise TrainingError(f"non-finite loss after epoch {epoch + 1}", report)
        report.train_loss.append(train_loss)
        if X_val is not None:
            report.val_loss.append(_full_mse(net, X_val, t_val))
        report.epochs = epoch + 1
    report.wall_time = time.perf_counter() - start
    log.debug("trained %d epochs in %.2fs", report.epochs, report.wall_time)
    return report


def saaf_design(proto: Saaf, xs) -> np.ndarray:
    """Design matrix ``[p^0..p^{c-1} | b_1^c..b_n^c]`` evaluated at ``xs``."""
    xs = np.asarray(xs, dtype=float).ravel()
    return np.hstack([poly_matrix(proto.c, xs), basis_matrix(proto.grid, proto.c, xs)])


def fit_saaf_ridge(xs, ts, proto: Saaf, lam: float) -> Saaf:
    """Exact minimiser of ``sum_i (f(x_i) - t_i)**2 + lam * |(w, v)|**2``.

    Solves the regularised normal equations; when parameters outnumber the data
    and ``lam > 0`` the equivalent dual system ``(A A^T + lam I) alpha = t`` is
    solved instead, which gives the same minimiser at a fraction of the cost.
    """
    xs = np.asarray(xs, dtype=float).ravel()
    ts = np.asarray(ts, dtype=float).ravel()
    if xs.size == 0 or xs.size != ts.size:
        raise UsageError("need at least one (x, t) pair with matching lengths")
    if lam < 0:
        raise UsageError("lambda must be non-negative")
    A = saaf_design(proto, xs)
    n_obs, n_par = A.shape
    if lam == 0 and n_par > n_obs:
        raise SolverError(f"singular system: {n_par} parameters but {n_obs} data points; use lambda > 0")
    try:
        if n_par > n_obs:
            K = A @ A.T
            K[np.diag_indices_from(K)] += lam
            theta = A.T @ _spd_solve(K, ts)
        else:
            G = A.T @ A
            G[np.diag_indices_from(G)] += lam
            theta = _spd_solve(G, A.T @ ts)
    except np.linalg.LinAlgError:
        raise SolverError("normal equations are singular; use lambda > 0") from None
    return proto.with_params(w=theta[proto.c:], v=theta[:proto.c])


def _spd_solve(M, rhs):
    factor = cho_factor(M)
    d = np.abs(np.diag(factor[0]))
    if d.min() <= np.sqrt(np.finfo(float).eps) * d.max():
        raise np.linalg.LinAlgError("ill-conditioned")
    return cho_solve(factor, rhs)


def ridge_objective_grad(f: Saaf, xs, ts, lam: float) -> np.ndarray:
    """Gradient of the ridge objective w.r.t. ``(v, w)``; zero at the optimum."""
    A = saaf_design(f, xs)
    theta = np.concatenate([f.v, f.w])
    return 2.0 * A.T @ (A @ theta - np.asarray(ts, dtype=float).ravel()) + 2.0 * lam * theta


def kink_distance(act, P) -> np.ndarray:
    """Distance of each input in ``P`` to the nearest point where ``act`` is not smooth."""
    from .core import APLU, Saaf
    P = np.asarray(P, dtype=float)
    if isinstance(act, Saaf):
        kinks = act.grid.breaks
    elif isinstance(act, APLU):
        kinks = np.concatenate([[0.0], act.breaks])
    else:
        kinks = np.array([0.0])
    return np.min(np.abs(P[..., None] - kinks), axis=-1)


def gradient_check(net: Network, X, t, lam: float = 0.0, step: float = 1e-5, training: bool = True) -> float:
    """Relative error ``|g - g_fd| / max(|g|, |g_fd|)`` between backprop and central differences.

    The norms run over the concatenation of every parameter gradient.
    """
    _, grads, _ = loss_and_grads(net, X, t, lam, training)
    analytic, numeric = [], []
    for k, p in net.params.items():
        fd = np.zeros_like(p)
        for i in np.ndindex(p.shape):
            old = p[i]
            p[i] = old + step
            up = loss_and_grads(net, X, t, lam, training)[0]
            p[i] = old - step
            down = loss_and_grads(net, X, t, lam, training)[0]
            p[i] = old
            fd[i] = (up - down) / (2 * step)
        analytic.append(grads[k].ravel())
        numeric.append(fd.ravel())
    a, n = np.concatenate(analytic), np.concatenate(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    return float(np.linalg.norm(a - n) / scale) if scale > 0 else 0.0
