"""Initializers for the variational parameters of a :class:`~vbinit.vnet.Network`.

``init_iblm`` fits one Bayesian linear model per output neuron, layer by
layer, on fresh mini-batches propagated through the layers initialized so
far. The other five are data-free or data-light baselines.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import time

import numpy as np

from .blm import fit_blr, fit_hetero_blr, project_factorized, transform_labels
from .exceptions import DatasetTooSmall
from .numkernel import as_matrix, gaussian_matrix, im2col, make_rng
from .vnet import Noise, _activate, _append_ones, forward

__all__ = [
    "InitSpec",
    "BatchCursor",
    "LayerDiagnostics",
    "INITIALIZERS",
    "init_iblm",
    "init_uninformative",
    "init_heuristic",
    "init_xavier",
    "init_orthogonal",
    "init_lsuv",
    "initialize",
]

INITIALIZERS = ("iblm", "uninformative", "heuristic", "xavier", "orthogonal", "lsuv")


@dataclass
class InitSpec:
    """Initializer choice and its tunables.

    Only the fields relevant to ``strategy`` are read: ``batch_size``,
    ``alpha``, ``prior_precision`` and ``noise_variance`` by i-BLM, ``tol``
    and ``max_iter`` by LSUV.

    ``noise_variance`` applies to regression targets only; transformed
    classification targets carry their own per-entry noise. Left as
    ``None``, ``prior_precision`` becomes ``1 / noise_variance`` for
    regression (a unit ridge penalty) and 1 for classification.
    """

    strategy: str = "iblm"
    seed: int = 0
    batch_size: int = 64
    alpha: float = 0.01
    prior_precision: float = None
    noise_variance: float = 0.01
    tol: float = 0.1
    max_iter: int = 10
    n_jobs: int = 1

    def __post_init__(self):
        if self.strategy not in INITIALIZERS:
            raise ValueError(f"unknown initializer {self.strategy!r}; "
                             f"choose from {', '.join(INITIALIZERS)}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.prior_precision is not None and self.prior_precision <= 0:
            raise ValueError("prior_precision must be positive")
        if self.alpha <= 0 or self.noise_variance <= 0:
            raise ValueError("alpha and noise_variance must be positive")
        if self.tol <= 0 or self.max_iter < 1:
            raise ValueError("LSUV needs tol > 0 and max_iter >= 1")

    def blm_prior_precision(self, classification=False):
        if self.prior_precision is not None:
            return self.prior_precision
        return 1.0 if classification else 1.0 / self.noise_variance


class BatchCursor:
    """Walks a dataset in shuffled, disjoint mini-batches.

    When fewer than ``size`` unseen rows remain, the permutation is redrawn
    and a new pass starts.
    """

    def __init__(self, x, y, rng):
        self.x = as_matrix(x, "x")
        self.y = np.asarray(y, dtype=np.float64)
        if self.y.ndim == 1:
            self.y = self.y[:, None]
        if self.x.shape[0] == 0:
            raise DatasetTooSmall("cannot draw batches from an empty dataset")
        if self.y.shape[0] != self.x.shape[0]:
            raise ValueError("x and y have different numbers of rows")
        self.rng = rng
        self._reshuffle()

    def __len__(self):
        return self.x.shape[0]

    def _reshuffle(self):
        self.order = self.rng.permutation(len(self))
        self.position = 0

    def next_indices(self, size):
        size = min(size, len(self))
        if self.position + size > len(self):
            self._reshuffle()
        idx = self.order[self.position:self.position + size]
        self.position += size
        return idx

    def next_batch(self, size):
        idx = self.next_indices(size)
        return self.x[idx], self.y[idx]


@dataclass
class LayerDiagnostics:
    layer: int
    elapsed_ms: float
    residual_variance: np.ndarray = field(default=None, repr=False)
    condition: np.ndarray = field(default=None, repr=False)
    converged: bool = True
    iterations: int = 0

    def as_row(self):
        rv = self.residual_variance
        cond = self.condition
        return {
            "layer": self.layer,
            "elapsed_ms": self.elapsed_ms,
            "residual_variance_mean": float(np.mean(rv)) if rv is not None else "",
            "residual_variance_max": float(np.max(rv)) if rv is not None else "",
            "condition_max": float(np.max(cond)) if cond is not None else "",
            "converged": int(self.converged),
            "iterations": self.iterations,
        }


def _propagate_sampled(net, upto, x, rng):
    """Inputs of layer ``upto`` for one weight sample of layers ``< upto``."""
    if upto == 0:
        return x
    # later layers are never applied, so only the first ``upto`` get weight noise
    eps = [rng.standard_normal((1,) + layer.means.shape) for layer in net.layers[:upto]]
    out, _ = forward(net, x, Noise(eps, False, 1, x.shape[0]), upto=upto)
    return out[0]


def _blm_design(layer, a):
    if layer.kind == "conv":
        return _append_ones(im2col(a, layer.geometry))
    return _append_ones(a)


def _fit_neuron(net, layer_idx, neuron, x, y, spec, classify):
    layer = net.layers[layer_idx]
    rng = make_rng(spec.seed, layer_idx, neuron)
    a = _propagate_sampled(net, layer_idx, x, rng)
    design = _blm_design(layer, a)
    col = neuron % y.shape[1]
    if layer.kind == "conv":
        # every patch of an example regresses on that example's target
        reps = layer.geometry.n_positions
    else:
        reps = 1
    prior = spec.blm_prior_precision(classify)
    if classify:
        labels = transform_labels(y, spec.alpha)
        target = np.repeat(labels.means[:, col], reps)
        noise_var = np.repeat(labels.variances[:, col], reps)
        post = fit_hetero_blr(design, target, prior, noise_var)
    else:
        target = np.repeat(y[:, col], reps)
        post = fit_blr(design, target, prior, spec.noise_variance)
    q = project_factorized(post)
    resid = target - design @ post.mean
    eig = np.linalg.eigvalsh(post.precision)
    return q, float(np.var(resid)), float(eig[-1] / eig[0])


def init_iblm(net, cursor, spec=None):
    """Layer-wise Bayesian-linear-model initialization, in place.

    For every output neuron of every layer a fresh mini-batch is drawn,
    propagated through the already-initialized layers with one weight sample
    from their variational posterior, and a Bayesian linear regression from
    that layer's inputs (patches for conv layers) to a target column is
    fitted. Neuron ``j`` uses target column ``j mod c``. Classification
    networks regress on log-Normal transformed labels with per-entry noise.
    The factorized projection of each posterior becomes the neuron's
    column of means and variances.

    Returns ``(net, diagnostics)`` with one :class:`LayerDiagnostics` per layer.
    """
    spec = spec or InitSpec()
    if spec.strategy != "iblm":
        raise ValueError("init_iblm needs an InitSpec with strategy 'iblm'")
    classify = net.is_classifier
    diagnostics = []
    for li, layer in enumerate(net.layers):
        start = time.perf_counter()
        batches = [cursor.next_batch(spec.batch_size) for _ in range(layer.n_out)]
        if classify and batches[0][1].shape[1] != net.likelihood.k:
            raise ValueError("classification i-BLM needs one-hot labels with k columns")

        def job(j):
            bx, by = batches[j]
            return _fit_neuron(net, li, j, bx, by, spec, classify)

        if spec.n_jobs > 1:
            with ThreadPoolExecutor(spec.n_jobs) as pool:
                results = list(pool.map(job, range(layer.n_out)))
        else:
            results = [job(j) for j in range(layer.n_out)]

        means = np.empty_like(layer.means)
        log_vars = np.empty_like(layer.log_variances)
        for j, (q, _, _) in enumerate(results):
            means[:, j] = q.means
            log_vars[:, j] = np.log(q.variances)
        layer.means, layer.log_variances = means, log_vars
        diagnostics.append(LayerDiagnostics(
            li, 1e3 * (time.perf_counter() - start),
            np.array([r[1] for r in results]), np.array([r[2] for r in results])))
    return net, diagnostics


def _set_constant(net, mean_fn, var_fn):
    for layer in net.layers:
        layer.means = np.full_like(layer.means, mean_fn(layer))
        layer.log_variances = np.full_like(layer.log_variances, np.log(var_fn(layer)))
    return net


def init_uninformative(net):
    """Start from the ``N(0, 1)`` prior: zero means, unit variances."""
    for layer in net.layers:
        layer.means = np.zeros_like(layer.means)
        layer.log_variances = np.zeros_like(layer.log_variances)
    return net


def init_heuristic(net):
    """Zero means, variance ``1 / D_in`` per layer."""
    return _set_constant(net, lambda l: 0.0, lambda l: 1.0 / l.n_in)


def init_xavier(net):
    """Zero means, variance ``2 / (D_in + D_out)`` per layer."""
    return _set_constant(net, lambda l: 0.0, lambda l: 2.0 / (l.n_in + l.n_out))


def _orthogonal(rng, rows, cols):
    if rows >= cols:
        q, r = np.linalg.qr(gaussian_matrix(rng, rows, cols))
        return q * np.sign(np.diag(r))
    return _orthogonal(rng, cols, rows).T


def init_orthogonal(net, rng):
    """Orthogonal weight means (bias means zero), variance ``1 / D_in``."""
    for layer in net.layers:
        means = np.zeros_like(layer.means)
        means[:-1] = _orthogonal(rng, layer.n_in, layer.n_out)
        layer.means = means
        layer.log_variances = np.full_like(layer.log_variances, -np.log(layer.n_in))
    return net


def init_lsuv(net, batch_x, spec=None, rng=None):
    """Orthogonal start, then per-layer rescaling of the means to unit output variance.

    The pre-activation variance of each layer is measured on ``batch_x``
    propagated through the means, and the layer's weight means are divided
    by its square root until it lies within ``spec.tol`` of one or
    ``spec.max_iter`` rounds have run. Returns ``(net, diagnostics)``;
    diagnostics record whether each layer converged.
    """
    spec = spec or InitSpec("lsuv")
    rng = rng if rng is not None else make_rng(spec.seed)
    init_orthogonal(net, rng)
    a = as_matrix(batch_x, "batch_x")
    diagnostics = []
    for li, layer in enumerate(net.layers):
        start = time.perf_counter()
        converged = False
        design = _blm_design(layer, a)
        for it in range(spec.max_iter + 1):
            var = float(np.var(design @ layer.means))
            if abs(var - 1.0) < spec.tol:
                converged = True
                break
            if it == spec.max_iter or var <= 0:
                break
            layer.means[:-1] /= np.sqrt(var)
        diagnostics.append(LayerDiagnostics(
            li, 1e3 * (time.perf_counter() - start), converged=converged, iterations=it))
        a = _layer_output(layer, a)
    return net, diagnostics


def _layer_output(layer, a):
    z = _blm_design(layer, a) @ layer.means
    if layer.kind == "conv":
        g = layer.geometry
        z = z.reshape(a.shape[0], g.n_positions, layer.n_out).transpose(0, 2, 1)
        z = z.reshape(a.shape[0], layer.output_size)
    return _activate(z, layer.activation)


def initialize(net, spec, x=None, y=None):
    """Apply ``spec`` to ``net`` in place; returns ``(net, diagnostics)``.

    i-BLM needs ``x`` and ``y`` (one-hot for classifiers); LSUV calibrates on
    the first ``spec.batch_size`` rows of a seeded permutation of ``x``.
    """
    rng = make_rng(spec.seed)
    name = spec.strategy
    if name == "iblm":
        if x is None or y is None:
            raise ValueError("i-BLM needs training data")
        return init_iblm(net, BatchCursor(x, y, rng), spec)
    if name == "lsuv":
        if x is None:
            raise ValueError("LSUV needs a calibration batch")
        x = as_matrix(x, "x")
        idx = rng.permutation(x.shape[0])[:spec.batch_size]
        return init_lsuv(net, x[idx], spec, make_rng(spec.seed, 1))
    if name == "orthogonal":
        return init_orthogonal(net, rng), []
    return {"uninformative": init_uninformative, "heuristic": init_heuristic,
            "xavier": init_xavier}[name](net), []
