"""Graph precoder model container, initialization, and files.

The network maps per-user covariance first rows to a joint precoder.  A
shared affine front end with a learned PReLU turns each row (stacked
real/imag, length 2n) into per-antenna two-channel features; a stack of
graph layers mixes them across antennas and users; the final two output
channels are read as real/imag of the precoder column, which is then
scaled to the power budget.

Parameter layout is fixed by param_items(): front-end weight, bias and
PReLU slope, then s, t, q, k, u per layer.  Model files store the
parameters in exactly that order.
"""

import copy
from dataclasses import dataclass

import numpy as np

from .. import serde

DEFAULT_BETA = 0.1
PRELU_INIT = 0.25


@dataclass
class GnnLayer:
    s: np.ndarray
    t: np.ndarray
    q: np.ndarray
    k: np.ndarray
    u: np.ndarray


class GnnModel:
    def __init__(self, n_antennas, dims, alpha, beta, w_in, b_in, slope,
                 layers):
        self.n_antennas = int(n_antennas)
        self.dims = tuple(int(d) for d in dims)
        if self.dims[0] != 2 or self.dims[-1] != 2:
            raise ValueError("feature width must be 2 at input and output")
        if len(layers) != len(self.dims) - 1:
            raise ValueError("layer count does not match dims")
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.w_in = w_in
        self.b_in = b_in
        self.slope = slope
        self.layers = layers
        # hidden layers rectify; the last layer is linear so precoder
        # entries can take either sign
        self.activations = tuple(
            ["relu"] * (len(layers) - 1) + ["identity"])

    @property
    def n_layers(self):
        return len(self.layers)

    def param_items(self):
        yield "input.w", self.w_in
        yield "input.b", self.b_in
        yield "input.slope", self.slope
        for i, layer in enumerate(self.layers):
            yield "layer%d.s" % i, layer.s
            yield "layer%d.t" % i, layer.t
            yield "layer%d.q" % i, layer.q
            yield "layer%d.k" % i, layer.k
            yield "layer%d.u" % i, layer.u

    def params(self):
        return dict(self.param_items())

    def copy(self):
        return copy.deepcopy(self)


def _glorot(rng, fan_out, fan_in):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def init_gnn(n_antennas, n_hidden_layers, hidden_dim, rng, alpha=None,
             beta=DEFAULT_BETA):
    """Fresh model with Glorot-uniform weights.

    dims = (2, hidden_dim, ..., hidden_dim, 2) with n_hidden_layers
    hidden widths.  alpha defaults to 0.1 / n_antennas so the
    across-antenna aggregate enters at the same scale as the node term.
    """
    if n_hidden_layers < 0 or hidden_dim < 1:
        raise ValueError("bad layer configuration")
    if alpha is None:
        alpha = 0.1 / n_antennas
    dims = (2,) + (hidden_dim,) * n_hidden_layers + (2,)
    two_n = 2 * n_antennas
    w_in = _glorot(rng, two_n, two_n)
    b_in = np.zeros(two_n)
    slope = np.array([PRELU_INIT])
    layers = [
        GnnLayer(*(_glorot(rng, dims[i + 1], dims[i]) for _ in range(5)))
        for i in range(len(dims) - 1)
    ]
    return GnnModel(n_antennas, dims, alpha, beta, w_in, b_in, slope, layers)


def get_flat_params(model):
    return np.concatenate([arr.ravel() for _, arr in model.param_items()])


def set_flat_params(model, flat):
    pos = 0
    for _, arr in model.param_items():
        arr.flat[:] = flat[pos: pos + arr.size]
        pos += arr.size
    if pos != flat.size:
        raise ValueError("flat parameter vector has the wrong length")


def model_digest(model):
    """Hash of the parameter bytes, for provenance records."""
    import hashlib

    h = hashlib.sha256()
    for name, arr in model.param_items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return h.hexdigest()


def save_gnn(path, model, seed=None):
    base = str(path)
    for ext in (".bin", ".json"):
        if base.endswith(ext):
            base = base[: -len(ext)]
    serde.write_real(base + ".bin", [arr for _, arr in model.param_items()])
    serde.write_sidecar(base + ".json", {
        "kind": "gnn",
        "n_antennas": model.n_antennas,
        "dims": list(model.dims),
        "alpha": model.alpha,
        "beta": model.beta,
        "activations": list(model.activations),
        "seed": seed,
    })
    return base


def load_gnn(path):
    base = str(path)
    for ext in (".bin", ".json"):
        if base.endswith(ext):
            base = base[: -len(ext)]
    meta = serde.read_sidecar(base + ".json")
    if meta.get("kind") != "gnn":
        raise ValueError("not a precoder model file: %s" % path)
    n = meta["n_antennas"]
    dims = tuple(meta["dims"])
    shapes = [(2 * n, 2 * n), (2 * n,), (1,)]
    for i in range(len(dims) - 1):
        shapes.extend([(dims[i + 1], dims[i])] * 5)
    arrays = serde.read_real(base + ".bin", shapes)
    w_in, b_in, slope = arrays[0], arrays[1], arrays[2]
    layers = [GnnLayer(*arrays[3 + 5 * i: 8 + 5 * i])
              for i in range(len(dims) - 1)]
    model = GnnModel(n, dims, meta["alpha"], meta["beta"], w_in, b_in,
                     slope, layers)
    expected = ["relu"] * (len(dims) - 2) + ["identity"]
    if list(meta["activations"]) != expected:
        raise ValueError("unexpected activation layout in %s" % path)
    return model
