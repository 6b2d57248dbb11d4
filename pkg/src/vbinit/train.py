"""Stochastic variational inference: optimizer, KL annealing, metrics, loop."""
from dataclasses import dataclass, field, fields
import csv
import time

import numpy as np
from scipy.special import logsumexp, softmax

from .exceptions import NonFiniteGradient, NonFiniteLoss, ShapeMismatch
from .initializers import BatchCursor
from .numkernel import as_matrix, make_rng
from .vnet import Noise, draw_noise, forward, log_likelihood_samples, nelbo

__all__ = [
    "AdamState",
    "adam_step",
    "AnnealSchedule",
    "anneal_lambda",
    "TrainConfig",
    "CurveRecord",
    "CURVE_HEADER",
    "predictive_samples",
    "metric_rmse",
    "metric_mnll",
    "metric_error_rate",
    "evaluate",
    "train_loop",
    "write_curves",
    "read_curves",
]


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list = None
    second_moment: list = None


def adam_step(params, grads, state):
    """One bias-corrected Adam update; returns ``(new_params, state)``.

    ``state`` is updated in place. Moments are created lazily on the first
    call, shaped like ``params``.
    """
    if len(params) != len(grads):
        raise ShapeMismatch("params and grads differ in length")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient("gradient contains NaN or infinity")
    if state.first_moment is None:
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ShapeMismatch(f"param {i} has shape {p.shape}, grad {g.shape}")
        m = state.first_moment[i] = b1 * state.first_moment[i] + (1 - b1) * g
        v = state.second_moment[i] = b2 * state.second_moment[i] + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        out.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon))
    return out, state


@dataclass
class AnnealSchedule:
    """Sigmoid ramp for the KL weight: ``max_weight / (1 + exp(-rate (it - midpoint)))``."""

    rate: float = 2e-3
    midpoint: float = 2.5e4
    max_weight: float = 0.1
    enabled: bool = False

    def __post_init__(self):
        if self.enabled and (self.rate <= 0 or self.midpoint < 0):
            raise ValueError("annealing needs rate > 0 and midpoint >= 0")
        if not 0 < self.max_weight <= 1:
            raise ValueError("max_weight must lie in (0, 1]")


def anneal_lambda(iteration, sched):
    if not sched.enabled:
        return 1.0
    x = -sched.rate * (iteration - sched.midpoint)
    # written so that huge |x| neither overflows nor underflows to exactly 0
    if x > 0:
        e = np.exp(-x)
        return float(sched.max_weight * e / (1.0 + e))
    return float(sched.max_weight / (1.0 + np.exp(x)))


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 64
    n_mc_train: int = 16
    n_mc_test: int = 128
    max_iterations: int = 1000
    eval_interval: int = 50
    local_reparam: bool = True
    anneal: AnnealSchedule = field(default_factory=AnnealSchedule)
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.n_mc_train < 1 or self.n_mc_test < 1:
            raise ValueError("batch_size and MC sample counts must be positive")
        if self.max_iterations < 0 or self.eval_interval < 1:
            raise ValueError("max_iterations must be >= 0 and eval_interval >= 1")


CURVE_HEADER = ("iteration", "wall_ms", "train_nelbo", "train_nll", "train_kl",
                "test_metric", "test_mnll")


@dataclass
class CurveRecord:
    iteration: int
    wall_ms: float
    train_nelbo: float
    train_nll: float
    train_kl: float
    test_metric: float
    test_mnll: float


def predictive_samples(net, x, n_mc, rng, local_reparam=True, chunk=1024):
    """Network outputs for ``n_mc`` posterior samples, shape ``(n_mc, n, n_out)``.

    Without the local reparameterization the same ``n_mc`` weight samples
    serve every chunk, so each row's outputs do not depend on the other rows.
    """
    x = as_matrix(x, "x")
    parts = []
    shared = None if local_reparam else draw_noise(net, 0, n_mc, rng, False)
    for start in range(0, x.shape[0], chunk):
        xb = x[start:start + chunk]
        if shared is None:
            noise = draw_noise(net, xb.shape[0], n_mc, rng, local_reparam)
        else:
            noise = Noise(shared.eps, False, n_mc, xb.shape[0])
        parts.append(forward(net, xb, noise)[0])
    return np.concatenate(parts, axis=1)


def _samples(net, x, n_mc, rng, outputs):
    if outputs is not None:
        return outputs
    return predictive_samples(net, x, n_mc, rng if rng is not None else make_rng(0))


def metric_rmse(net, x, y, n_mc=128, rng=None, outputs=None):
    """RMSE of the Monte Carlo predictive mean against ``y``."""
    f = _samples(net, x, n_mc, rng, outputs)
    y = as_matrix(y, "y")
    return float(np.sqrt(np.mean((f.mean(axis=0) - y) ** 2)))


def metric_mnll(net, x, y, n_mc=128, rng=None, outputs=None):
    """Mean over points of ``-log((1/S) sum_s p(y | x, W_s))``."""
    f = _samples(net, x, n_mc, rng, outputs)
    ll = log_likelihood_samples(net, f, y)
    return float(np.mean(np.log(ll.shape[0]) - logsumexp(ll, axis=0)))


def metric_error_rate(net, x, y, n_mc=128, rng=None, outputs=None):
    """Fraction of points whose MC-averaged class probabilities miss the label."""
    f = _samples(net, x, n_mc, rng, outputs)
    y = np.asarray(y)
    labels = y.argmax(axis=1) if y.ndim == 2 else y.astype(int)
    prob = softmax(f, axis=-1).mean(axis=0)
    return float(np.mean(prob.argmax(axis=1) != labels))


def evaluate(net, x, y, n_mc, rng):
    """``(test_metric, test_mnll)`` from one shared set of predictive samples."""
    f = predictive_samples(net, x, n_mc, rng)
    if net.is_classifier:
        metric = metric_error_rate(net, x, y, outputs=f)
    else:
        metric = metric_rmse(net, x, y, outputs=f)
    return metric, metric_mnll(net, x, y, outputs=f)


def train_loop(net, train_data, test_data, config=None, callback=None):
    """Run SVI with Adam, appending a :class:`CurveRecord` every ``eval_interval``.

    The first record (iteration 0) is taken before any update and its train
    fields come from a NELBO evaluation on one mini-batch. Raises
    :class:`NonFiniteLoss` carrying the records so far if the objective
    diverges, after restoring the last finite parameters.
    """
    config = config or TrainConfig()
    x_tr, y_tr = train_data
    x_te, y_te = test_data
    n_total = as_matrix(x_tr).shape[0]
    batch_rng = make_rng(config.seed, 0)
    noise_rng = make_rng(config.seed, 1)
    eval_rng = make_rng(config.seed, 2)
    cursor = BatchCursor(x_tr, y_tr, batch_rng)
    state = AdamState(config.lr, config.beta1, config.beta2, config.epsilon)
    records = []
    start = time.perf_counter()
    last_good = net.get_parameters()

    def step_estimate(it):
        bx, by = cursor.next_batch(config.batch_size)
        if net.is_classifier:
            by = by if by.shape[1] > 1 else by[:, 0]
        # an early annealing weight can underflow to 0, which the NELBO rejects
        lam = max(anneal_lambda(it, config.anneal), np.finfo(float).tiny)
        return nelbo(net, bx, by, n_total, config.n_mc_train, lam, noise_rng,
                     config.local_reparam)

    def record(it, est):
        metric, mnll = evaluate(net, x_te, y_te, config.n_mc_test, eval_rng)
        rec = CurveRecord(it, 1e3 * (time.perf_counter() - start), est.total, est.nll,
                          est.kl, metric, mnll)
        records.append(rec)
        if callback is not None:
            callback(rec)

    it = 0
    try:
        est = step_estimate(0)
        record(0, est)
        for it in range(1, config.max_iterations + 1):
            params, _ = adam_step(net.get_parameters(), est.gradients, state)
            last_good = net.get_parameters()
            net.set_parameters(params)
            est = step_estimate(it)
            if it % config.eval_interval == 0 or it == config.max_iterations:
                record(it, est)
    except (NonFiniteLoss, NonFiniteGradient) as exc:
        net.set_parameters(last_good)
        raise NonFiniteLoss(f"training diverged at iteration {it}: {exc}", records) from exc
    return records


def write_curves(records, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_HEADER)
        for rec in records:
            writer.writerow([rec.iteration] + [repr(float(getattr(rec, f.name)))
                                               for f in fields(rec)[1:]])


def read_curves(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CURVE_HEADER:
            raise ValueError(f"unexpected curve header {header}")
        return [CurveRecord(int(row[0]), *map(float, row[1:])) for row in reader]
