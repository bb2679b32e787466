"""Lipschitz constants, the fat-shattering bound and the regression-layer diagnostic."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import APLU, LReLU, PReLU, ReLU, Saaf
from .errors import SaafError, UsageError
from .net import BN_EPS, Network, forward

POWER_ITERATIONS = 100
POWER_TOL = 1e-9
DIAGNOSTIC_BINS = 20
DIAGNOSTIC_MIN_COUNT = 5


def default_domain(f: Saaf):
    """Grid span widened by 10% (5% on each side)."""
    pad = 0.05 * (f.grid.hi - f.grid.lo)
    return f.grid.lo - pad, f.grid.hi + pad


def _saaf_lipschitz(f: Saaf, lo: float, hi: float) -> float:
    a = f.grid.breaks
    if f.c == 1:
        hit = (a[:-1] < hi) & (a[1:] > lo)
        if lo == hi:
            hit = (a[:-1] <= lo) & (a[1:] > lo)
        return float(np.max(np.abs(f.w[hit]))) if np.any(hit) else 0.0
    # c == 2: |f'| is piecewise linear, so its maximum sits on a break or an endpoint
    pts = [a[(a > lo) & (a < hi)]]
    pts += [np.array([e]) for e in (lo, hi) if np.isfinite(e)]
    pts = np.concatenate(pts)
    if pts.size == 0:
        pts = a
    return float(np.max(np.abs(f.deriv(pts))))


def lipschitz_saaf(f: Saaf, domain=None) -> float:
    """Exact Lipschitz constant of ``f`` on ``domain = (lo, hi)``.

    c=1 gives ``max |w_k|`` over segments meeting the domain; c=2 gives
    ``max |f'|`` over the breaks inside the domain and its endpoints.  Because
    ``f'`` is constant outside the grid, any domain containing the grid span
    (including the default) yields the global constant.
    """
    if f.c not in (1, 2):
        raise UsageError(f"Lipschitz constant is implemented for c in {{1, 2}}, got c={f.c}")
    lo, hi = default_domain(f) if domain is None else map(float, domain)
    if not lo < hi:
        raise UsageError(f"domain must satisfy lo < hi, got [{lo}, {hi}]")
    return _saaf_lipschitz(f, lo, hi)


def lipschitz_activation(act, lo: float = -math.inf, hi: float = math.inf) -> float:
    """Lipschitz constant of any activation kind on ``[lo, hi]`` (``lo == hi`` allowed)."""
    if isinstance(act, Saaf):
        return _saaf_lipschitz(act, lo, hi)
    if isinstance(act, ReLU):
        return 1.0
    if isinstance(act, (LReLU, PReLU)):
        return max(1.0, abs(act.slope))
    if isinstance(act, APLU):
        kinks = np.unique(np.concatenate([[0.0], act.breaks]))
        probes = np.concatenate([[kinks[0] - 1.0], kinks])
        probes = probes[(probes >= lo) & (probes <= hi)]
        probes = np.concatenate([probes, [e for e in (lo, hi) if np.isfinite(e)]])
        if probes.size == 0:
            probes = kinks
        return float(np.max(np.abs(act.deriv(probes))))
    raise UsageError(f"no Lipschitz rule for activation {act!r}")


def spectral_norm(W, iterations: int = POWER_ITERATIONS, tol: float = POWER_TOL) -> float:
    """Largest singular value of ``W`` by power iteration on ``W^T W``."""
    W = np.atleast_2d(np.asarray(W, dtype=float))
    v = np.ones(W.shape[1]) / math.sqrt(W.shape[1])
    sigma = 0.0
    for _ in range(iterations):
        u = W.T @ (W @ v)
        norm = np.linalg.norm(u)
        if norm == 0.0:
            return 0.0
        v = u / norm
        new_sigma = math.sqrt(norm)
        if abs(new_sigma - sigma) <= tol * new_sigma:
            sigma = new_sigma
            break
        sigma = new_sigma
    return float(np.linalg.norm(W @ v))


def _layer_matrix(net: Network, l: int):
    """Linear map into layer ``l``'s activations, with inference-mode batchnorm folded in."""
    p = net.params
    W, b = p[f"layer{l}.W"], p[f"layer{l}.b"]
    if not net.specs[l].normalize:
        return W, b
    s = p[f"layer{l}.bn.gamma"] / np.sqrt(net.state[f"layer{l}.bn.var"] + BN_EPS)
    shift = p[f"layer{l}.bn.beta"] - s * net.state[f"layer{l}.bn.mean"]
    return s[:, None] * W, s * b + shift


def activation_lipschitz_table(net: Network, box=None) -> list:
    """Per-layer, per-neuron activation Lipschitz constants.

    With an input ``box = (lo, hi)`` each neuron is bounded only on the interval
    its input can reach (interval arithmetic); otherwise on the whole line.
    """
    table = []
    if box is not None:
        lo, hi = (np.broadcast_to(np.asarray(v, dtype=float), (net.input_dim,)) for v in box)
        centre, radius = (lo + hi) / 2.0, (hi - lo) / 2.0
    for l, spec in enumerate(net.specs):
        M, bias = _layer_matrix(net, l)
        acts = [net.neuron_activation(l, i) for i in range(spec.width)]
        if box is None:
            table.append([lipschitz_activation(a) for a in acts])
            continue
        pc, pr = M @ centre + bias, np.abs(M) @ radius
        Ls = [lipschitz_activation(a, pc[i] - pr[i], pc[i] + pr[i]) for i, a in enumerate(acts)]
        table.append(Ls)
        centre = np.array([float(a(pc[i])) for i, a in enumerate(acts)])
        radius = np.asarray(Ls) * pr
    return table


def lipschitz_network(net: Network, box=None, table=None) -> float:
    """Upper bound ``prod_l |W_l|_2 * max_i L_{l,i}  *  |h|_2`` (not tight)."""
    if table is None:
        table = activation_lipschitz_table(net, box)
    bound = float(np.linalg.norm(net.params["out.h"]))
    for l in range(net.depth):
        M, _ = _layer_matrix(net, l)
        bound *= spectral_norm(M) * max(table[l])
    return bound


@dataclass(frozen=True)
class ComplexityQuery:
    d: int
    L: float
    gamma: float

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise UsageError("dimension d must be a positive integer")
        if not self.L > 0 or not self.gamma > 0:
            raise UsageError("Lipschitz constant and margin gamma must be positive")


def fat_shattering_bound(q: ComplexityQuery) -> float:
    """``d + L**d d! / (gamma**d sqrt(2**d (d + 1)))``; ``inf`` when it overflows."""
    d, L, g = int(q.d), float(q.L), float(q.gamma)
    try:
        term = L ** d * math.factorial(d) / (g ** d * math.sqrt(2.0 ** d * (d + 1)))
        if math.isfinite(term):
            return d + term
    except (OverflowError, ZeroDivisionError):
        pass
    log_term = (d * math.log(L) + math.lgamma(d + 1) - d * math.log(g)
                - 0.5 * (d * math.log(2.0) + math.log(d + 1)))
    if log_term > math.log(np.finfo(float).max):
        return math.inf
    return d + math.exp(log_term)


def empirical_lipschitz(fn, lo, hi, n_pairs: int = 10_000, seed: int = 0,
                        near_fraction: float = 0.5, near_scale: float = 1e-3) -> float:
    """Largest ``|fn(x1) - fn(x2)| / |x1 - x2|`` over random pairs in the box ``[lo, hi]``.

    ``fn`` maps an ``(N, d)`` array to ``N`` values.  A ``near_fraction`` of
    the pairs are close pairs (offset between half and all of ``near_scale``
    times the box width),
    which resolve local slopes.  Always a lower bound on the true constant.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    if lo.shape != hi.shape or np.any(~(hi > lo)):
        raise UsageError("box must satisfy lo < hi in every coordinate")
    if n_pairs < 1:
        raise UsageError("n_pairs must be at least 1")
    rng = np.random.default_rng(seed)
    d = lo.size
    width = hi - lo
    X1 = lo + width * rng.random((n_pairs, d))
    X2 = lo + width * rng.random((n_pairs, d))
    n_near = int(round(near_fraction * n_pairs))
    if n_near:
        direction = rng.normal(size=(n_near, d))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        # offsets kept above near_scale/2 so rounding in fn stays far below the slope
        step = near_scale * width * (0.5 + 0.5 * rng.random((n_near, 1)))
        X2[:n_near] = np.clip(X1[:n_near] + direction * step, lo, hi)
    dist = np.linalg.norm(X1 - X2, axis=1)
    keep = dist > 0
    if not np.any(keep):
        return 0.0
    diff = np.abs(np.asarray(fn(X1[keep]), dtype=float) - np.asarray(fn(X2[keep]), dtype=float))
    return float(np.max(diff / dist[keep]))


@dataclass
class NeuronDiagnostic:
    neuron: int
    correlation: float | None
    inconclusive: bool
    bin_centers: list = field(default_factory=list)
    counts: list = field(default_factory=list)
    f_mean: list = field(default_factory=list)
    t_mean: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x_bin", "count", "f_mean", "t_mean"])
        for row in zip(self.bin_centers, self.counts, self.f_mean, self.t_mean):
            w.writerow([repr(row[0]), row[1], repr(row[2]), repr(row[3])])
        return buf.getvalue()


@dataclass
class Diagnostic:
    neurons: list

    @property
    def mean_correlation(self):
        vals = [n.correlation for n in self.neurons if not n.inconclusive]
        return float(np.mean(vals)) if vals else None

    def to_dict(self):
        return {"mean_correlation": self.mean_correlation,
                "neurons": [{"neuron": n.neuron, "correlation": n.correlation,
                             "inconclusive": n.inconclusive} for n in self.neurons]}


def conditional_expectation_diagnostic(net: Network, X, t, bins: int = DIAGNOSTIC_BINS,
                                       min_count: int = DIAGNOSTIC_MIN_COUNT) -> Diagnostic:
    """Compare each regression neuron's output contribution with the binned ``E[t | input]``.

    For regression neuron ``i`` its input ``p_i`` is binned into ``bins``
    equal-width bins; per bin the mean contribution ``h_i f_i(p_i)`` and the
    mean target are taken, and the two series are Pearson-correlated (which
    discards the constant offset).  Bins with fewer than ``min_count`` samples
    are skipped; fewer than two usable bins or a flat series is inconclusive.
    """
    t = np.asarray(t, dtype=float).ravel()
    _, trace = forward(net, X, training=False)
    P = trace.pre_act[-1]
    contrib = trace.post_act[-1] * net.params["out.h"]
    out = []
    for i in range(P.shape[1]):
        p = P[:, i]
        lo, hi = float(p.min()), float(p.max())
        if hi == lo:
            out.append(NeuronDiagnostic(i, None, True))
            continue
        edges = np.linspace(lo, hi, bins + 1)
        which = np.clip(np.searchsorted(edges, p, side="right") - 1, 0, bins - 1)
        counts = np.bincount(which, minlength=bins)
        ok = counts >= min_count
        f_sum = np.bincount(which, contrib[:, i], minlength=bins)
        t_sum = np.bincount(which, t, minlength=bins)
        centers = (edges[:-1] + edges[1:]) / 2.0
        f_mean, t_mean = f_sum[ok] / counts[ok], t_sum[ok] / counts[ok]
        corr = None
        if ok.sum() >= 2:
            fc, tc = f_mean - f_mean.mean(), t_mean - t_mean.mean()
            denom = math.sqrt(float(fc @ fc) * float(tc @ tc))
            scale = max(np.abs(f_mean).max(), np.abs(t_mean).max(), 1.0)
            if denom > (1e-12 * scale) ** 2:
                corr = float(np.clip(fc @ tc / denom, -1.0, 1.0))
        out.append(NeuronDiagnostic(i, corr, corr is None, centers[ok].tolist(), counts[ok].tolist(),
                                    f_mean.tolist(), t_mean.tolist()))
    return Diagnostic(out)


class ComplexityError(SaafError, RuntimeError):
    """Empirical Lipschitz estimate exceeded the analytic bound."""


@dataclass
class ComplexityReport:
    activation_lipschitz: list
    network_bound: float
    empirical_estimate: float
    d: int
    gamma: float
    fat_shattering: float

    @property
    def consistent(self) -> bool:
        return self.empirical_estimate <= self.network_bound * (1 + 1e-9)

    def check(self):
        if not self.consistent:
            raise ComplexityError(f"empirical Lipschitz estimate {self.empirical_estimate!r} "
                                  f"exceeds analytic bound {self.network_bound!r}")
        return self

    def to_dict(self):
        d = asdict(self)
        d["consistent"] = self.consistent
        return d


def complexity_report(net: Network, gamma: float, box=(-1.0, 1.0), n_pairs: int = 10_000,
                      seed: int = 0) -> ComplexityReport:
    """Lipschitz constants, empirical estimate and fat-shattering bound for ``net`` on ``box``."""
    lo = np.broadcast_to(np.asarray(box[0], dtype=float), (net.input_dim,))
    hi = np.broadcast_to(np.asarray(box[1], dtype=float), (net.input_dim,))
    table = activation_lipschitz_table(net, (lo, hi))
    bound = lipschitz_network(net, table=table)
    est = empirical_lipschitz(lambda Z: forward(net, Z)[0], lo, hi, n_pairs, seed)
    fat = fat_shattering_bound(ComplexityQuery(net.input_dim, bound, gamma)) if bound > 0 else float(net.input_dim)
    return ComplexityReport(table, bound, est, net.input_dim, float(gamma), fat)
