"""Mean-field Gaussian variational networks.

Each layer keeps a Gaussian ``N(mu, exp(log_var))`` per weight, stored as an
``(n_in + 1) x n_out`` matrix whose last row holds the bias. Convolutional
layers use the same storage over flattened channel-major patches, so a conv
layer is a linear map from :func:`~vbinit.numkernel.im2col` rows to output
channels.

Forward passes take an explicit :class:`Noise` so that the same standard
normal draws can be replayed, which is what the finite-difference gradient
checks and the i-BLM propagation rely on.
"""
from dataclasses import dataclass, field
import json

import numpy as np

from .exceptions import KindMismatch, NonFiniteLoss, ShapeMismatch
from .numkernel import PatchGeometry, as_matrix, col2im, im2col

__all__ = [
    "ACTIVATIONS",
    "VariationalLayer",
    "Regression",
    "Classification",
    "Network",
    "Noise",
    "NelboEstimate",
    "draw_noise",
    "forward",
    "forward_sample",
    "forward_local_reparam",
    "forward_mean",
    "kl_to_prior",
    "nelbo",
    "log_likelihood_samples",
    "conv_reshape_filter",
    "save_network",
    "load_network",
    "build_network",
]

ACTIVATIONS = ("identity", "relu", "tanh")
LOG_2PI = np.log(2.0 * np.pi)


def _activate(z, name):
    if name == "identity":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    raise ValueError(f"unknown activation {name!r}")


def _activation_grad(z, h, name):
    if name == "identity":
        return np.ones_like(z)
    if name == "relu":
        return (z > 0).astype(z.dtype)
    return 1.0 - h * h


@dataclass
class VariationalLayer:
    """Dense or convolutional layer with a factorized Gaussian over weights."""

    kind: str
    n_in: int
    n_out: int
    means: np.ndarray
    log_variances: np.ndarray
    activation: str = "relu"
    geometry: PatchGeometry = None

    def __post_init__(self):
        if self.kind not in ("dense", "conv"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.kind == "conv" and self.geometry is None:
            raise ValueError("conv layers need a PatchGeometry")
        self.means = np.ascontiguousarray(self.means, dtype=np.float64)
        self.log_variances = np.ascontiguousarray(self.log_variances, dtype=np.float64)
        shape = (self.n_in + 1, self.n_out)
        if self.means.shape != shape or self.log_variances.shape != shape:
            raise ShapeMismatch(
                f"parameters must have shape {shape}, got {self.means.shape} "
                f"and {self.log_variances.shape}")
        if not np.all(np.isfinite(self.log_variances)):
            raise ValueError("log_variances must be finite")

    @classmethod
    def dense(cls, d_in, d_out, activation="relu"):
        shape = (d_in + 1, d_out)
        return cls("dense", d_in, d_out, np.zeros(shape), np.zeros(shape), activation)

    @classmethod
    def conv(cls, geometry, out_channels, activation="relu"):
        shape = (geometry.patch_size + 1, out_channels)
        return cls("conv", geometry.patch_size, out_channels, np.zeros(shape),
                   np.zeros(shape), activation, geometry)

    @property
    def input_size(self):
        """Width of the flattened input rows this layer consumes."""
        return self.n_in if self.kind == "dense" else self.geometry.input_size

    @property
    def output_size(self):
        if self.kind == "dense":
            return self.n_out
        return self.n_out * self.geometry.n_positions

    @property
    def variances(self):
        return np.exp(self.log_variances)

    def output_geometry_shape(self):
        """``(channels, height, width)`` of a conv layer's output volume."""
        if self.kind != "conv":
            raise KindMismatch("dense layers have no spatial output")
        g = self.geometry
        return self.n_out, g.out_height, g.out_width


@dataclass
class Regression:
    """Gaussian likelihood with one learnable noise log-variance shared by outputs."""

    log_noise_variance: float = 0.0


@dataclass
class Classification:
    """Categorical likelihood over ``k`` classes via softmax of the outputs.

    ``alpha`` only matters for i-BLM, where it regularizes the label transform.
    """

    k: int
    alpha: float = 0.01


@dataclass
class Network:
    layers: list
    likelihood: object = field(default_factory=Regression)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.layers:
            raise ShapeMismatch("network needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.output_size != nxt.input_size:
                raise ShapeMismatch(
                    f"layer producing {prev.output_size} features feeds a layer "
                    f"expecting {nxt.input_size}")
        if self.layers[-1].activation != "identity":
            raise ShapeMismatch("the last layer must use the identity activation")
        if isinstance(self.likelihood, Classification):
            if self.output_size != self.likelihood.k:
                raise ShapeMismatch(
                    f"classification with k={self.likelihood.k} needs {self.likelihood.k} "
                    f"outputs, network has {self.output_size}")

    @property
    def input_size(self):
        return self.layers[0].input_size

    @property
    def output_size(self):
        return self.layers[-1].output_size

    @property
    def is_classifier(self):
        return isinstance(self.likelihood, Classification)

    @property
    def n_weights(self):
        return sum(layer.means.size for layer in self.layers)

    def get_parameters(self):
        """Copies of all trainable arrays in a fixed order.

        The order is ``[mu_0, log_var_0, mu_1, log_var_1, ...]`` followed by a
        length-1 array with the noise log-variance for regression networks.
        """
        params = []
        for layer in self.layers:
            params += [layer.means.copy(), layer.log_variances.copy()]
        if isinstance(self.likelihood, Regression):
            params.append(np.array([self.likelihood.log_noise_variance]))
        return params

    def set_parameters(self, params):
        params = list(params)
        expected = 2 * len(self.layers) + isinstance(self.likelihood, Regression)
        if len(params) != expected:
            raise ShapeMismatch(f"expected {expected} parameter arrays, got {len(params)}")
        for i, layer in enumerate(self.layers):
            mu, lv = params[2 * i], params[2 * i + 1]
            if mu.shape != layer.means.shape or lv.shape != layer.log_variances.shape:
                raise ShapeMismatch(f"parameter shape mismatch at layer {i}")
            layer.means = np.array(mu, dtype=np.float64)
            layer.log_variances = np.array(lv, dtype=np.float64)
        if isinstance(self.likelihood, Regression):
            self.likelihood.log_noise_variance = float(np.asarray(params[-1]).reshape(-1)[0])

    def copy(self):
        layers = [VariationalLayer(l.kind, l.n_in, l.n_out, l.means.copy(),
                                   l.log_variances.copy(), l.activation, l.geometry)
                  for l in self.layers]
        lik = self.likelihood
        lik = Regression(lik.log_noise_variance) if isinstance(lik, Regression) \
            else Classification(lik.k, lik.alpha)
        return Network(layers, lik)


@dataclass
class Noise:
    """Standard normal draws driving one stochastic forward pass.

    ``eps[l]`` has shape ``(n_mc, n_in + 1, n_out)`` for layers whose weights
    are sampled and ``(n_mc, n_points, n_out)`` for dense layers under the
    local reparameterization.
    """

    eps: list
    local_reparam: bool
    n_mc: int
    n_points: int


def _uses_local(layer, local_reparam):
    # per-position pre-activation sampling would break weight sharing in conv layers
    return local_reparam and layer.kind == "dense"


def draw_noise(net, n_points, n_mc, rng, local_reparam=True):
    eps = []
    for layer in net.layers:
        if _uses_local(layer, local_reparam):
            eps.append(rng.standard_normal((n_mc, n_points, layer.n_out)))
        else:
            eps.append(rng.standard_normal((n_mc,) + layer.means.shape))
    return Noise(eps, local_reparam, n_mc, n_points)


@dataclass
class _LayerCache:
    inputs: np.ndarray       # (S|1, rows, n_in + 1) with the ones column appended
    pre: np.ndarray          # (S, N, output_size)
    post: np.ndarray
    weights: np.ndarray = None   # sampled weights, weight-sampling path
    std: np.ndarray = None       # pre-activation std, local path


def _append_ones(a):
    ones = np.ones(a.shape[:-1] + (1,))
    return np.concatenate([a, ones], axis=-1)


def _check_input(net, x):
    x = as_matrix(x, "x")
    if x.shape[1] != net.input_size:
        raise ShapeMismatch(f"network expects {net.input_size} input features, got {x.shape[1]}")
    return x


def forward(net, x, noise, upto=None):
    """Stochastic forward pass driven by ``noise``.

    Returns ``(outputs, tape)`` with outputs of shape ``(n_mc, n, n_out)``.
    With ``upto`` set, only the first ``upto`` layers are applied.
    """
    x = _check_input(net, x)
    if noise.n_points != x.shape[0]:
        raise ShapeMismatch("noise was drawn for a different batch size")
    n = x.shape[0]
    a = x[None]
    tape = []
    for layer, eps in zip(net.layers[:upto], noise.eps):
        if layer.kind == "conv":
            g = layer.geometry
            lead = a.shape[0]
            patches = im2col(a.reshape(lead * n, g.input_size), g)
            inputs = _append_ones(patches.reshape(lead, n * g.n_positions, g.patch_size))
        else:
            inputs = _append_ones(a)
        cache = _LayerCache(inputs, None, None)
        if _uses_local(layer, noise.local_reparam):
            var = layer.variances
            mean = inputs @ layer.means
            cache.std = np.sqrt((inputs * inputs) @ var)
            z = mean + cache.std * eps
        else:
            w = layer.means + np.exp(0.5 * layer.log_variances) * eps
            cache.weights = w
            z = inputs @ w
        if layer.kind == "conv":
            s = z.shape[0]
            z = z.reshape(s, n, layer.geometry.n_positions, layer.n_out)
            z = z.transpose(0, 1, 3, 2).reshape(s, n, layer.output_size)
        cache.pre = z
        cache.post = _activate(z, layer.activation)
        tape.append(cache)
        a = cache.post
    return a, tape


def _backward(net, tape, noise, d_out):
    """Reverse pass. Returns ``[(d_mu, d_log_var), ...]`` per layer."""
    grads = [None] * len(net.layers)
    d_a = d_out
    for idx in range(len(net.layers) - 1, -1, -1):
        layer, cache, eps = net.layers[idx], tape[idx], noise.eps[idx]
        d_z = d_a * _activation_grad(cache.pre, cache.post, layer.activation)
        s, n = d_z.shape[0], d_z.shape[1]
        if layer.kind == "conv":
            p = layer.geometry.n_positions
            d_z = d_z.reshape(s, n, layer.n_out, p).transpose(0, 1, 3, 2)
            d_z = d_z.reshape(s, n * p, layer.n_out)
        inputs = cache.inputs
        inputs_t = np.swapaxes(inputs, -1, -2)
        need_input_grad = idx > 0
        if cache.std is not None:
            var = layer.variances
            d_mu = (inputs_t @ d_z).sum(axis=0)
            d_v = d_z * eps / (2.0 * cache.std)
            d_lv = ((inputs_t * inputs_t) @ d_v).sum(axis=0) * var
            if need_input_grad:
                d_in = d_z @ layer.means.T + 2.0 * inputs * (d_v @ var.T)
        else:
            d_w = inputs_t @ d_z
            d_mu = d_w.sum(axis=0)
            d_lv = (d_w * eps).sum(axis=0) * 0.5 * np.exp(0.5 * layer.log_variances)
            if need_input_grad:
                d_in = d_z @ np.swapaxes(cache.weights, -1, -2)
        grads[idx] = (d_mu, d_lv)
        if need_input_grad:
            d_in = d_in[..., :-1]
            if layer.kind == "conv":
                g = layer.geometry
                d_in = col2im(d_in.reshape(s * n * g.n_positions, g.patch_size), g, s * n)
                d_in = d_in.reshape(s, n, g.input_size)
            d_a = d_in
    return grads


def forward_sample(net, x, rng, n_mc=1):
    """Forward pass sampling every weight through ``W = mu + sigma * eps``."""
    noise = draw_noise(net, np.shape(x)[0], n_mc, rng, local_reparam=False)
    return forward(net, x, noise)


def forward_local_reparam(net, x, rng, n_mc=1):
    """Forward pass sampling dense pre-activations ``N(A mu, (A*A) sigma^2)`` directly."""
    noise = draw_noise(net, np.shape(x)[0], n_mc, rng, local_reparam=True)
    return forward(net, x, noise)[0]


def forward_mean(net, x, return_preactivations=False):
    """Deterministic pass through the weight means."""
    a = _check_input(net, x)
    pre = []
    for layer in net.layers:
        if layer.kind == "conv":
            g = layer.geometry
            z = _append_ones(im2col(a, g)) @ layer.means
            z = z.reshape(a.shape[0], g.n_positions, layer.n_out)
            z = z.transpose(0, 2, 1).reshape(a.shape[0], layer.output_size)
        else:
            z = _append_ones(a) @ layer.means
        pre.append(z)
        a = _activate(z, layer.activation)
    return (a, pre) if return_preactivations else a


def kl_to_prior(net):
    """Closed-form ``KL(q || N(0, I))`` summed over every weight and bias."""
    total = 0.0
    for layer in net.layers:
        lv = layer.log_variances
        total += 0.5 * float(np.sum(np.expm1(lv) - lv + layer.means ** 2))
    return total


def _kl_grads(layer):
    return layer.means, 0.5 * np.expm1(layer.log_variances)


def _as_targets(net, y):
    y = np.asarray(y, dtype=np.float64)
    if net.is_classifier:
        k = net.likelihood.k
        if y.ndim == 1:
            labels = y.astype(int)
            if np.any(labels != y) or np.any(labels < 0) or np.any(labels >= k):
                raise ShapeMismatch("class labels must be integers in [0, k)")
            y = np.eye(k)[labels]
        if y.shape[1] != k:
            raise ShapeMismatch(f"expected {k} one-hot columns, got {y.shape[1]}")
        return y
    y = as_matrix(y, "y")
    if y.shape[1] != net.output_size:
        raise ShapeMismatch(f"expected {net.output_size} target columns, got {y.shape[1]}")
    return y


def log_likelihood_samples(net, outputs, y):
    """Per-sample, per-point log-likelihood, shape ``(n_mc, n)``."""
    y = _as_targets(net, y)
    if net.is_classifier:
        m = outputs.max(axis=-1, keepdims=True)
        lse = m[..., 0] + np.log(np.exp(outputs - m).sum(axis=-1))
        return (outputs * y).sum(axis=-1) - lse
    lnv = net.likelihood.log_noise_variance
    r = y - outputs
    k = outputs.shape[-1]
    return -0.5 * (k * (LOG_2PI + lnv) + (r * r).sum(axis=-1) * np.exp(-lnv))


@dataclass
class NelboEstimate:
    """Stochastic NELBO ``nll + lam * kl`` with gradients.

    ``gradients`` follows the order of :meth:`Network.get_parameters`.
    """

    nll: float
    kl: float
    lam: float
    total: float
    gradients: list


def nelbo(net, x, y, n_total, n_mc=16, lam=1.0, rng=None, local_reparam=True, noise=None):
    """Mini-batch Monte Carlo NELBO and its exact gradient for the drawn noise.

    The NLL term is ``-(n_total / m)`` times the average over ``n_mc`` samples
    of the batch log-likelihood. Pass ``noise`` to replay fixed draws.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be at least 1")
    if not 0.0 < lam <= 1.0:
        raise ValueError("lam must lie in (0, 1]")
    x = _check_input(net, x)
    y = _as_targets(net, y)
    m = x.shape[0]
    if y.shape[0] != m:
        raise ShapeMismatch("x and y have different numbers of rows")
    if noise is None:
        noise = draw_noise(net, m, n_mc, rng, local_reparam)
    n_mc = noise.n_mc
    outputs, tape = forward(net, x, noise)
    scale = n_total / (m * n_mc)

    if net.is_classifier:
        z = outputs - outputs.max(axis=-1, keepdims=True)
        prob = np.exp(z)
        prob /= prob.sum(axis=-1, keepdims=True)
        loglik = log_likelihood_samples(net, outputs, y)
        d_out = scale * (prob - y)
        d_noise = None
    else:
        lnv = net.likelihood.log_noise_variance
        inv_var = np.exp(-lnv)
        resid = outputs - y
        loglik = log_likelihood_samples(net, outputs, y)
        d_out = scale * resid * inv_var
        k = outputs.shape[-1]
        d_noise = scale * float(np.sum(0.5 * k - 0.5 * (resid * resid).sum(axis=-1) * inv_var))

    nll = -scale * float(loglik.sum())
    kl = kl_to_prior(net)
    total = nll + lam * kl
    if not np.isfinite(total):
        raise NonFiniteLoss(f"NELBO is not finite (nll={nll}, kl={kl})")

    grads = []
    for layer, (d_mu, d_lv) in zip(net.layers, _backward(net, tape, noise, d_out)):
        k_mu, k_lv = _kl_grads(layer)
        grads += [d_mu + lam * k_mu, d_lv + lam * k_lv]
    if d_noise is not None:
        grads.append(np.array([d_noise]))
    return NelboEstimate(nll, kl, lam, total, grads)


def conv_reshape_filter(layer, weights=None):
    """Filter bank of a conv layer as a ``(C*kh*kw + 1) x out_channels`` matrix.

    Rows follow the channel-major patch layout of ``im2col`` and the final row
    holds the biases, to be multiplied by a ones column appended to patches.
    ``weights`` may be a sampled weight array in the layer's storage layout or
    in ``(out_channels, C, kh, kw)`` filter layout paired with bias via
    ``(filters, bias)``.
    """
    if layer.kind != "conv":
        raise KindMismatch("conv_reshape_filter needs a conv layer")
    if weights is None:
        return layer.means.copy()
    if isinstance(weights, tuple):
        filters, bias = weights
        filters = np.asarray(filters, dtype=np.float64)
        mat = filters.reshape(layer.n_out, layer.n_in).T
        return np.vstack([mat, np.asarray(bias, dtype=np.float64).reshape(1, -1)])
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != layer.means.shape:
        raise ShapeMismatch(f"weights must have shape {layer.means.shape}")
    return weights.copy()


def _network_meta(net):
    layers = []
    for layer in net.layers:
        entry = {"kind": layer.kind, "n_in": layer.n_in, "n_out": layer.n_out,
                 "activation": layer.activation}
        if layer.geometry is not None:
            g = layer.geometry
            entry["geometry"] = [g.in_channels, g.in_height, g.in_width,
                                 g.kernel_h, g.kernel_w, g.stride, g.padding]
        layers.append(entry)
    lik = net.likelihood
    if isinstance(lik, Regression):
        lik_meta = {"type": "regression"}
    else:
        lik_meta = {"type": "classification", "k": lik.k, "alpha": lik.alpha}
    return {"format": "vbinit-network", "version": 1, "layers": layers, "likelihood": lik_meta}


def save_network(net, path):
    """Write a checkpoint (numpy ``.npz``); parameters round-trip bit-exactly."""
    arrays = {"meta": np.array(json.dumps(_network_meta(net)))}
    for i, layer in enumerate(net.layers):
        arrays[f"layer{i}.means"] = layer.means
        arrays[f"layer{i}.log_variances"] = layer.log_variances
    if isinstance(net.likelihood, Regression):
        arrays["likelihood.log_noise_variance"] = np.array([net.likelihood.log_noise_variance])
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_network(path):
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        layers = []
        for i, entry in enumerate(meta["layers"]):
            geom = PatchGeometry(*entry["geometry"]) if "geometry" in entry else None
            layers.append(VariationalLayer(
                entry["kind"], entry["n_in"], entry["n_out"],
                data[f"layer{i}.means"], data[f"layer{i}.log_variances"],
                entry["activation"], geom))
        lik = meta["likelihood"]
        if lik["type"] == "regression":
            likelihood = Regression(float(data["likelihood.log_noise_variance"][0]))
        else:
            likelihood = Classification(lik["k"], lik["alpha"])
    return Network(layers, likelihood)


def build_network(input_size, output_size, hidden=(), activation="relu",
                  likelihood=None, input_shape=None):
    """Stack hidden layers plus an identity output layer.

    ``hidden`` entries are ints for dense widths or
    ``("conv", out_channels, kernel, stride, padding)`` tuples; conv layers
    need ``input_shape = (C, H, W)`` for the first of them and chain their
    output volumes after that.
    """
    likelihood = likelihood if likelihood is not None else Regression()
    layers = []
    size = input_size
    volume = tuple(input_shape) if input_shape is not None else None
    for spec in hidden:
        if isinstance(spec, (int, np.integer)):
            layers.append(VariationalLayer.dense(size, int(spec), activation))
            size, volume = int(spec), None
            continue
        _, out_c, k, stride, pad = spec
        if volume is None:
            raise ShapeMismatch("conv layers need a (C, H, W) input volume")
        if volume[0] * volume[1] * volume[2] != size:
            raise ShapeMismatch(f"volume {volume} does not flatten to {size} features")
        geom = PatchGeometry(volume[0], volume[1], volume[2], k, k, stride, pad)
        layer = VariationalLayer.conv(geom, out_c, activation)
        layers.append(layer)
        volume = layer.output_geometry_shape()
        size = layer.output_size
    layers.append(VariationalLayer.dense(size, output_size, "identity"))
    return Network(layers, likelihood)
