"""Fully-connected feedforward networks with augmented-bias layers.

Every layer input is augmented with a constant 1, so a single weight matrix
``V_{j+1}`` of shape ``(L_j + 1, L_{j+1})`` carries both weights and biases.
The full parameter vector ``theta`` concatenates the column-major
vectorizations of ``V_1 .. V_{k+1}`` (see :func:`lbdnn.linalg.vec`), and the
analytic gradient of the network output with respect to ``theta`` is exposed
both as a dense Jacobian (:func:`grad_theta`) and as a matrix-free
vector-Jacobian product (:func:`vjp_theta`), which is what the adaptation
laws consume.

All public functions broadcast over leading batch axes: ``kappa`` may be
``(L0,)`` or ``(..., L0)`` and weight layers ``(La, L)`` or ``(..., La, L)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

__all__ = [
    "DnnSpec",
    "DnnWeights",
    "swish",
    "swish_prime",
    "forward",
    "grad_theta",
    "vjp_theta",
    "init_kaiming",
    "BatchKernel",
    "save_theta_csv",
    "load_theta_csv",
]


def swish(x, beta: float = 1.0):
    """Swish activation x * logistic(beta * x)."""
    x = np.asarray(x, dtype=float)
    return x * expit(beta * x)


def swish_prime(x, beta: float = 1.0):
    """Derivative of swish: s(bx) + b x s(bx)(1 - s(bx)) with s the logistic."""
    x = np.asarray(x, dtype=float)
    s = expit(beta * x)
    return s + beta * x * s * (1.0 - s)


_ACTIVATIONS = {
    "swish": (swish, swish_prime),
    "tanh": (lambda x, beta=1.0: np.tanh(x),
             lambda x, beta=1.0: 1.0 - np.tanh(x) ** 2),
}


@dataclass(frozen=True)
class DnnSpec:
    """Architecture of one network: layer sizes and activation choice.

    ``hidden_widths`` lists the k >= 1 hidden layer widths L_1..L_k; the
    augmented widths are L_j + 1.  ``param_count`` is
    sum_j (L_j + 1) * L_{j+1} over j = 0..k.
    """

    input_dim: int
    hidden_widths: tuple
    output_dim: int
    activation: str = "swish"
    beta: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be >= 1")
        if len(self.hidden_widths) < 1:
            raise ValueError("at least one hidden layer is required")
        if any(w < 1 for w in self.hidden_widths):
            raise ValueError("hidden widths must be >= 1")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def depth(self) -> int:
        """Number of hidden layers k."""
        return len(self.hidden_widths)

    @property
    def dims(self) -> tuple:
        """(L_0, L_1, ..., L_{k+1})."""
        return (self.input_dim,) + self.hidden_widths + (self.output_dim,)

    @property
    def layer_shapes(self) -> tuple:
        """Shape (L_j + 1, L_{j+1}) of V_{j+1} for j = 0..k."""
        d = self.dims
        return tuple((d[j] + 1, d[j + 1]) for j in range(len(d) - 1))

    @property
    def block_sizes(self) -> tuple:
        return tuple(r * c for r, c in self.layer_shapes)

    @property
    def block_offsets(self) -> np.ndarray:
        """Start offsets of each vec(V_{j+1}) block inside theta, plus the end."""
        return np.concatenate([[0], np.cumsum(self.block_sizes)]).astype(int)

    @property
    def param_count(self) -> int:
        return int(sum(self.block_sizes))

    def activation_fns(self):
        return _ACTIVATIONS[self.activation]


@dataclass
class DnnWeights:
    """Per-layer weight-and-bias matrices V_{j+1} of shape (..., L_j+1, L_{j+1})."""

    spec: DnnSpec
    layers: tuple = field(default_factory=tuple)

    def __post_init__(self):
        self.layers = tuple(np.asarray(v, dtype=float) for v in self.layers)
        shapes = self.spec.layer_shapes
        if len(self.layers) != len(shapes):
            raise ValueError(f"expected {len(shapes)} layers, got {len(self.layers)}")
        for v, s in zip(self.layers, shapes):
            if v.shape[-2:] != s:
                raise ValueError(f"layer shape {v.shape[-2:]} != expected {s}")
            if not np.all(np.isfinite(v)):
                raise ValueError("weights must be finite")

    def flatten(self) -> np.ndarray:
        """theta = [vec(V_1); ...; vec(V_{k+1})] along the last axis."""
        parts = [np.swapaxes(v, -1, -2).reshape(v.shape[:-2] + (-1,)) for v in self.layers]
        return np.concatenate(parts, axis=-1)

    @classmethod
    def from_flat(cls, spec: DnnSpec, theta) -> "DnnWeights":
        theta = np.asarray(theta, dtype=float)
        if theta.shape[-1] != spec.param_count:
            raise ValueError(f"theta length {theta.shape[-1]} != p = {spec.param_count}")
        offs = spec.block_offsets
        layers = []
        for j, (rows, cols) in enumerate(spec.layer_shapes):
            blk = theta[..., offs[j]:offs[j + 1]]
            layers.append(np.swapaxes(blk.reshape(blk.shape[:-1] + (cols, rows)), -1, -2))
        return cls(spec, tuple(layers))


def _augment(x) -> np.ndarray:
    ones = np.ones(x.shape[:-1] + (1,), dtype=float)
    return np.concatenate([x, ones], axis=-1)


def _forward_cached(spec: DnnSpec, w: DnnWeights, kappa):
    """Forward pass keeping per-layer augmented inputs and activation slopes."""
    act, act_prime = spec.activation_fns()
    kappa = np.asarray(kappa, dtype=float)
    if kappa.shape[-1] != spec.input_dim:
        raise ValueError(f"input length {kappa.shape[-1]} != L0 = {spec.input_dim}")
    augs, slopes = [], []
    a = _augment(kappa)
    phi = None
    for j, v in enumerate(w.layers):
        augs.append(a)
        phi = np.einsum("...ij,...i->...j", v, a)
        if j < len(w.layers) - 1:
            slopes.append(act_prime(phi, spec.beta))
            a = _augment(act(phi, spec.beta))
    return phi, augs, slopes


def forward(spec: DnnSpec, w: DnnWeights, kappa) -> np.ndarray:
    """Network output for input ``kappa``; affine (no activation) final layer."""
    phi, _, _ = _forward_cached(spec, w, kappa)
    return phi


def grad_theta(spec: DnnSpec, w: DnnWeights, kappa) -> np.ndarray:
    """Dense Jacobian of the output w.r.t. theta, shape (..., L_{k+1}, p).

    Block j is (prod_{l=j+1..k} V_{l+1}^T dphi_l/dphi_{l-1}) (I (x) rho_j)
    with rho_0 the augmented input and rho_j the augmented activation of
    layer j; the empty product (j = k) is the identity.
    """
    phi, augs, slopes = _forward_cached(spec, w, kappa)
    k = spec.depth
    offs = spec.block_offsets
    batch = phi.shape[:-1]
    out_dim = spec.output_dim
    grad = np.empty(batch + (out_dim, spec.param_count), dtype=float)
    m = np.broadcast_to(np.eye(out_dim), batch + (out_dim, out_dim)).copy()
    for j in range(k, -1, -1):
        cols = spec.layer_shapes[j][1]
        blk = np.einsum("...oc,...i->...oci", m, augs[j])
        grad[..., offs[j]:offs[j + 1]] = blk.reshape(batch + (out_dim, -1))
        if j > 0:
            # V_{j+1}^T times the activation Jacobian: drop the bias row,
            # scale columns by the activation slope.
            t = np.swapaxes(w.layers[j][..., :-1, :], -1, -2) * slopes[j - 1][..., None, :]
            m = np.einsum("...oc,...cl->...ol", m, t)
    return grad


def vjp_theta(spec: DnnSpec, w: DnnWeights, kappa, v) -> np.ndarray:
    """Matrix-free product grad_theta(...)^T v, shape (..., p).

    This is the quantity the update laws need; it avoids materializing the
    (L_{k+1} x p) Jacobian.
    """
    phi, augs, slopes = _forward_cached(spec, w, kappa)
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != spec.output_dim:
        raise ValueError(f"v length {v.shape[-1]} != output dim {spec.output_dim}")
    k = spec.depth
    offs = spec.block_offsets
    batch = np.broadcast_shapes(phi.shape[:-1], v.shape[:-1])
    out = np.empty(batch + (spec.param_count,), dtype=float)
    a = np.broadcast_to(v, batch + v.shape[-1:])
    for j in range(k, -1, -1):
        cols = spec.layer_shapes[j][1]
        blk = np.einsum("...c,...i->...ci", a, augs[j])
        out[..., offs[j]:offs[j + 1]] = blk.reshape(batch + (-1,))
        if j > 0:
            va = np.einsum("...ic,...c->...i", w.layers[j], a)
            a = va[..., :-1] * slopes[j - 1]
    return out


def init_kaiming(spec: DnnSpec, rng=None) -> DnnWeights:
    """Kaiming-He initialization: non-bias entries of V_{j+1} are i.i.d.
    normal with variance 2 / L_j (fan-in over the non-augmented width);
    bias rows start at zero.
    """
    rng = np.random.default_rng(rng)
    dims = spec.dims
    layers = []
    for j in range(spec.depth + 1):
        v = np.zeros(spec.layer_shapes[j], dtype=float)
        v[:-1, :] = rng.standard_normal((dims[j], dims[j + 1])) * np.sqrt(2.0 / dims[j])
        layers.append(v)
    return DnnWeights(spec, tuple(layers))


class BatchKernel:
    """Preallocated forward/VJP evaluator for a batch of weight realizations.

    Owns a flat ``(batch, p)`` parameter array ``theta``; each layer is a
    reshaped view of its vec(V) block (which, by column-major stacking, is
    exactly V^T), so in-place updates of ``theta`` are immediately visible
    to the evaluator.  Used by the closed-loop simulator, where the same
    arithmetic as :func:`forward` / :func:`vjp_theta` must run tens of
    thousands of times.
    """

    def __init__(self, spec: DnnSpec, batch: int):
        self.spec = spec
        self.batch = int(batch)
        dims = spec.dims
        self.offs = spec.block_offsets
        self.theta = np.zeros((self.batch, spec.param_count), dtype=float)
        # wt[j] is V_{j+1}^T, shape (batch, L_{j+1}, L_j + 1)
        self.wt = [
            self.theta[:, self.offs[j]:self.offs[j + 1]].reshape(self.batch, dims[j + 1], dims[j] + 1)
            for j in range(spec.depth + 1)
        ]
        k = spec.depth
        self._aug = [np.ones((self.batch, dims[j] + 1)) for j in range(k + 1)]
        # hidden pre-activations/sigmoids live in (k, batch, w) blocks when
        # the widths are uniform, so the backward slope is one fused pass
        self._uniform = len(set(spec.hidden_widths)) == 1
        if self._uniform:
            w = spec.hidden_widths[0]
            self._phi_h = np.empty((k, self.batch, w))
            self._act_h = np.empty((k, self.batch, w))
            self._slope_h = np.empty((k, self.batch, w))
            self._phi = [self._phi_h[j] for j in range(k)]
            self._act = [self._act_h[j] for j in range(k)]
            self._slope = [self._slope_h[j] for j in range(k)]
        else:
            self._phi = [np.empty((self.batch, dims[j + 1])) for j in range(k)]
            self._act = [np.empty((self.batch, dims[j + 1])) for j in range(k)]
            self._slope = [np.empty((self.batch, dims[j + 1])) for j in range(k)]
        self._phi_out = np.empty((self.batch, dims[-1]))
        self._va = [np.empty((self.batch, 1, dims[j] + 1)) for j in range(k + 1)]
        self._is_swish = spec.activation == "swish"
        self._beta = spec.beta

    def load(self, theta) -> None:
        """Copy per-run flat parameter vectors into the kernel."""
        theta = np.asarray(theta, dtype=float)
        self.theta[...] = theta

    def forward(self, x) -> np.ndarray:
        """Batched network output; returns a view valid until the next call."""
        k = self.spec.depth
        beta = self._beta
        self._aug[0][:, :-1] = x
        for j in range(k):
            phi = self._phi[j]
            np.matmul(self.wt[j], self._aug[j][:, :, None], out=phi[:, :, None])
            act = self._act[j]
            if self._is_swish:
                # act caches the sigmoid; the hidden output is phi * act
                if beta == 1.0:
                    expit(phi, out=act)
                else:
                    np.multiply(phi, beta, out=act)
                    expit(act, out=act)
                np.multiply(phi, act, out=self._aug[j + 1][:, :-1])
            else:
                np.tanh(phi, out=act)
                self._aug[j + 1][:, :-1] = act
        np.matmul(self.wt[k], self._aug[k][:, :, None],
                  out=self._phi_out[:, :, None])
        return self._phi_out

    def _fill_slopes(self) -> None:
        """Activation slopes from the cached forward, one fused pass when
        the hidden widths are uniform."""
        if self._uniform:
            pairs = [(self._slope_h, self._phi_h, self._act_h)]
        else:
            pairs = list(zip(self._slope, self._phi, self._act))
        beta = self._beta
        for sl, phi, act in pairs:
            if self._is_swish:
                # slope = s + beta*x*s*(1-s) written as s*(1 + beta*x*(1-s))
                np.subtract(1.0, act, out=sl)
                sl *= phi
                if beta != 1.0:
                    sl *= beta
                sl += 1.0
                sl *= act
            else:
                np.multiply(act, act, out=sl)
                np.subtract(1.0, sl, out=sl)

    def vjp(self, v, out) -> np.ndarray:
        """Fill ``out`` (batch, p) with grad^T v using the last forward's caches."""
        k = self.spec.depth
        self._fill_slopes()
        a = v
        for j in range(k, -1, -1):
            shape = (self.batch,) + self.wt[j].shape[1:]
            blk = out[:, self.offs[j]:self.offs[j + 1]].reshape(shape)
            np.einsum("bc,bi->bci", a, self._aug[j], out=blk)
            if j > 0:
                va = np.matmul(a[:, None, :], self.wt[j], out=self._va[j])[:, 0, :]
                a = va[:, :-1] * self._slope[j - 1]
        return out


def save_theta_csv(path, spec: DnnSpec, w: DnnWeights) -> None:
    """Write a flat weight snapshot: one value per line, layer boundaries in
    a header comment."""
    theta = w.flatten()
    if theta.ndim != 1:
        raise ValueError("snapshots are per-realization; got batched weights")
    offs = ",".join(str(int(o)) for o in spec.block_offsets)
    dims = "x".join(str(d) for d in spec.dims)
    with open(path, "w") as fh:
        fh.write(f"# lbdnn theta snapshot; layers {dims}; "
                 f"activation {spec.activation} beta {spec.beta!r}\n")
        fh.write(f"# block offsets: {offs}\n")
        for val in theta:
            fh.write(f"{val!r}\n")


def load_theta_csv(path, spec: DnnSpec) -> DnnWeights:
    """Read a snapshot written by :func:`save_theta_csv`."""
    values = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            values.append(float(line))
    return DnnWeights.from_flat(spec, np.array(values, dtype=float))
