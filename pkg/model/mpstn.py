"""
The multi-period spatial-temporal network.

    window [S,2,P,T] ──CNN──> f [S,F] ──concat rain embedding──> x0 [S,F+E]
                                │                                  │
                                │                          GNN: X <- relu(Â X W)
                                │                                  │
                                └──────────── concat ◄──────── g [S,F]
                                                │
                                  affine -> relu -> affine
                                                │
                                         out [S, 2*Hs]

CNN per station: conv 3x3 (32, pad 1) -> relu -> maxpool 2 -> conv 3x3
(64, pad 1) -> relu -> maxpool 2 -> flatten -> affine to F -> relu.

Â = D^-1/2 (A + I) D^-1/2. Each GNN layer replaces the node features with
its messages, so the self loops are what keep a station's own signal.

Output column c*Hs + h is channel c (0 inflow, 1 outflow) at horizon h, in
normalized units.

Two ablation variants share the wiring:
    no_gnn      the GNN stack is replaced by one affine layer x0 -> F
    no_weather  no embedding table; x0 = f
"""

from contextlib import contextmanager
from dataclasses import dataclass, replace

import numpy as np

from autodiff.ops import affine, concat, conv2d, embedding, maxpool2d, propagate, relu, reshape
from autodiff.tensor import Tensor
from utils.errors import ConfigError, DataError, ShapeError
from utils.helpers import make_rng

# ---------------------------------------------------------------------------
# CONFIGURATION: search space and fixed architecture
# ---------------------------------------------------------------------------
GNN_LAYER_CHOICES = (1, 2, 4)
FEATURE_DIM_CHOICES = (64, 128, 256)
WEATHER_EMBED_CHOICES = (2, 4)
BATCH_SIZE_CHOICES = (4, 8, 16)

CONV1_CHANNELS = 32
CONV2_CHANNELS = 64
KERNEL_SIZE = 3
PADDING = 1
POOL = 2
MIN_FOLD_SIZE = POOL * POOL

VARIANTS = ("full", "no_gnn", "no_weather")
_STREAM_INIT = 11


@dataclass(frozen=True)
class ModelConfig:
    periods: int = 14
    intervals_per_day: int = 73
    n_stations: int = 10
    gnn_layers: int = 2
    feature_dim: int = 64
    weather_embed_dim: int = 2
    horizons: int = 4
    channels: int = 2
    use_gnn: bool = True
    use_weather: bool = True

    def validate(self):
        problems = []
        if self.gnn_layers not in GNN_LAYER_CHOICES:
            problems.append(f"gnn_layers must be one of {GNN_LAYER_CHOICES}")
        if self.feature_dim not in FEATURE_DIM_CHOICES:
            problems.append(f"feature_dim must be one of {FEATURE_DIM_CHOICES}")
        if self.weather_embed_dim not in WEATHER_EMBED_CHOICES:
            problems.append(f"weather_embed_dim must be one of {WEATHER_EMBED_CHOICES}")
        if self.periods < MIN_FOLD_SIZE or self.intervals_per_day < MIN_FOLD_SIZE:
            problems.append(f"periods and intervals_per_day must be >= {MIN_FOLD_SIZE} for two poolings")
        if self.n_stations < 1 or self.horizons < 1:
            problems.append("n_stations and horizons must be >= 1")
        if self.channels != 2:
            problems.append("channels must be 2 (inflow, outflow)")
        if problems:
            raise ConfigError("invalid ModelConfig: " + "; ".join(problems))
        return self

    @property
    def variant(self):
        if not self.use_gnn:
            return "no_gnn"
        if not self.use_weather:
            return "no_weather"
        return "full"

    @property
    def pooled_dims(self):
        return self.periods // POOL // POOL, self.intervals_per_day // POOL // POOL

    @property
    def flatten_dim(self):
        rows, cols = self.pooled_dims
        return CONV2_CHANNELS * rows * cols

    @property
    def node_input_dim(self):
        return self.feature_dim + (self.weather_embed_dim if self.use_weather else 0)

    @property
    def output_dim(self):
        return self.channels * self.horizons


def variant_config(config, variant):
    """The ModelConfig for one ablation variant of `config`."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return replace(config, use_gnn=variant != "no_gnn", use_weather=variant != "no_weather")


# ===========================================================================
# PARAMETERS
# ===========================================================================

def param_shapes(config):
    """Ordered name -> shape of every parameter tensor."""
    f = config.feature_dim
    shapes = {
        "conv1.weight": (CONV1_CHANNELS, config.channels, KERNEL_SIZE, KERNEL_SIZE),
        "conv1.bias": (CONV1_CHANNELS,),
        "conv2.weight": (CONV2_CHANNELS, CONV1_CHANNELS, KERNEL_SIZE, KERNEL_SIZE),
        "conv2.bias": (CONV2_CHANNELS,),
        "proj.weight": (config.flatten_dim, f),
        "proj.bias": (f,),
    }
    if config.use_weather:
        shapes["weather.table"] = (2, config.weather_embed_dim)
    if config.use_gnn:
        for layer in range(config.gnn_layers):
            shapes[f"gnn.{layer}.weight"] = (config.node_input_dim if layer == 0 else f, f)
    else:
        shapes["bypass.weight"] = (config.node_input_dim, f)
        shapes["bypass.bias"] = (f,)
    shapes["head.0.weight"] = (2 * f, f)
    shapes["head.0.bias"] = (f,)
    shapes["head.1.weight"] = (f, config.output_dim)
    shapes["head.1.bias"] = (config.output_dim,)
    return shapes


def _fans(shape):
    if len(shape) == 4:
        receptive = shape[2] * shape[3]
        return shape[1] * receptive, shape[0] * receptive
    return shape[0], shape[1]


def init_params(config, seed=0):
    """
    Fresh parameters: weights uniform in ±sqrt(6 / (fan_in + fan_out)),
    biases zero. Deterministic per seed.
    """
    config.validate()
    rng = make_rng(seed, _STREAM_INIT)
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".bias"):
            data = np.zeros(shape)
        else:
            fan_in, fan_out = _fans(shape)
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            data = rng.uniform(-limit, limit, size=shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


def params_from_arrays(arrays, config):
    """Wraps stored arrays as trainable Tensors after checking names and shapes."""
    expected = param_shapes(config)
    if set(arrays) != set(expected):
        raise DataError(f"parameter names do not match the config: "
                        f"missing {sorted(set(expected) - set(arrays))}, extra {sorted(set(arrays) - set(expected))}")
    params = {}
    for name, shape in expected.items():
        if tuple(arrays[name].shape) != shape:
            raise DataError(f"parameter {name!r} has shape {tuple(arrays[name].shape)}, expected {shape}")
        params[name] = Tensor(arrays[name], requires_grad=True, name=name)
    return params


# ===========================================================================
# BUILDING BLOCKS
# ===========================================================================

@contextmanager
def _stage(name):
    """Prefixes shape errors with the stage that raised them."""
    try:
        yield
    except ShapeError as e:
        raise ShapeError(f"{name}: {e}") from e


def normalize_adjacency(network):
    """Â = D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I."""
    a_hat = network.adjacency() + np.eye(network.n_stations)
    inv_sqrt = 1.0 / np.sqrt(a_hat.sum(axis=1))
    return a_hat * inv_sqrt[:, None] * inv_sqrt[None, :]


def cnn_encode(window, params):
    """
    Feature vector(s) of folded windows.

    window: [2,P,T] -> [F], or a batch [N,2,P,T] -> [N,F].
    """
    p, t = window.shape[-2], window.shape[-1]
    if p < MIN_FOLD_SIZE or t < MIN_FOLD_SIZE:
        raise ShapeError(f"window {p}x{t} too small for two poolings; need at least "
                         f"{MIN_FOLD_SIZE}x{MIN_FOLD_SIZE}")
    x = relu(conv2d(window, params["conv1.weight"], params["conv1.bias"], padding=PADDING))
    x = maxpool2d(x, POOL, POOL)
    x = relu(conv2d(x, params["conv2.weight"], params["conv2.bias"], padding=PADDING))
    x = maxpool2d(x, POOL, POOL)
    if x.ndim == 3:
        x = reshape(x, (-1,))
    else:
        x = reshape(x, (x.shape[0], -1))
    return relu(affine(x, params["proj.weight"], params["proj.bias"]))


def embed_weather(rain_flag, table):
    """Row lookup: flag 0 -> table[0], flag 1 -> table[1]. Accepts arrays of flags."""
    flags = np.asarray(rain_flag)
    if not np.isin(flags, (0, 1)).all() or flags.dtype == np.bool_:
        raise DataError(f"rain flag must be 0 or 1, got {rain_flag!r}")
    return embedding(table, flags.astype(np.int64))


def gnn_propagate(x0, adjacency, weights, gnn_layers=None):
    """X^(l+1) = relu(Â X^(l) W^(l)) for each layer; returns the last X."""
    if gnn_layers is not None and len(weights) != gnn_layers:
        raise ShapeError(f"gnn_propagate got {len(weights)} layer weights for {gnn_layers} layers")
    if x0.shape[-2] != adjacency.shape[0]:
        raise ShapeError(f"gnn_propagate: {x0.shape[-2]} node rows vs adjacency {adjacency.shape}")
    x = x0
    for w in weights:
        x = relu(affine(propagate(adjacency, x), w))
    return x


# ===========================================================================
# FORWARD
# ===========================================================================

def forward_batch(windows, rain_flags, params, adjacency, config):
    """
    windows [B,S,2,P,T] (normalized), rain_flags [B] -> Tensor [B,S,2*Hs].
    """
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 5:
        raise ShapeError(f"forward: windows must be [B,S,2,P,T], got {windows.shape}")
    b, s = windows.shape[:2]
    expected = (config.n_stations, config.channels, config.periods, config.intervals_per_day)
    if windows.shape[1:] != expected:
        raise ShapeError(f"forward: window shape {windows.shape[1:]} does not match config {expected}")
    if adjacency.shape != (s, s):
        raise ShapeError(f"forward: adjacency {adjacency.shape} does not match {s} stations")

    with _stage("cnn_encode"):
        flat = windows.reshape(b * s, *windows.shape[2:])
        f = reshape(cnn_encode(flat, params), (b, s, config.feature_dim))

    if config.use_weather:
        with _stage("embed_weather"):
            flags = np.repeat(np.asarray(rain_flags).reshape(b, 1), s, axis=1)
            x0 = concat([f, embed_weather(flags, params["weather.table"])], axis=-1)
    else:
        x0 = f

    with _stage("gnn_propagate"):
        if config.use_gnn:
            weights = [params[f"gnn.{layer}.weight"] for layer in range(config.gnn_layers)]
            g = gnn_propagate(x0, adjacency, weights, config.gnn_layers)
        else:
            g = affine(x0, params["bypass.weight"], params["bypass.bias"])

    with _stage("head"):
        h = concat([g, f], axis=-1)
        hidden = relu(affine(h, params["head.0.weight"], params["head.0.bias"]))
        return affine(hidden, params["head.1.weight"], params["head.1.bias"])


def forward(sample, params, adjacency, config):
    """One (normalized) FoldedSample -> Tensor [S, 2*Hs]."""
    out = forward_batch(sample.window[None], [sample.rain_flag], params, adjacency, config)
    return reshape(out, out.shape[1:])
