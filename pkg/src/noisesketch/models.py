"""Differentiable reconstruction functions and their exact linearizations.

A model maps a zero-filled image ``x0 = A^H y`` to a reconstruction. The
learned blocks are small convolutional networks on stacked real/imaginary
channels with smooth activations, so every model is differentiable
everywhere but, in general, only *real*-linear in its tangents. Tangents and
cotangents are complex arrays; ``vjp`` is the adjoint of ``jvp`` under the
real inner product ``Re <a, b>``, which coincides with the complex adjoint
whenever the Jacobian is complex-linear.

The data-consistency term ``A^H y`` is the model input itself, so noise in
``y`` reaches the output both through the first block and through every
data-consistency step.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _rng
from .arrayio import load_array, read_sidecar, save_array, write_sidecar
from .core import as_complex
from .errors import ShapeMismatch
from .encoding import ImagingOperator

KINDS = ("identity", "unrolled-dc", "single-pass-denoiser")


def _silu(z):
    return z / (1.0 + np.exp(-z))


def _silu_grad(z):
    s = 1.0 / (1.0 + np.exp(-z))
    return s * (1.0 + z * (1.0 - s))


def _tanh_grad(z):
    return 1.0 - np.tanh(z) ** 2


ACTIVATIONS = {
    "silu": (_silu, _silu_grad),
    "tanh": (np.tanh, _tanh_grad),
    "softplus": (lambda z: np.logaddexp(0.0, z), lambda z: 1.0 / (1.0 + np.exp(-z))),
}


def _conv(x, weight):
    """Periodic 'same' cross-correlation; ``x`` is ``(..., c_in, H, W)``."""
    k = weight.shape[-1]
    r = k // 2
    out = None
    for dy in range(k):
        for dx in range(k):
            shifted = np.roll(x, (r - dy, r - dx), axis=(-2, -1))
            term = np.einsum("oc,...chw->...ohw", weight[:, :, dy, dx], shifted)
            out = term if out is None else out + term
    return out


def _conv_transpose(g, weight):
    k = weight.shape[-1]
    r = k // 2
    out = None
    for dy in range(k):
        for dx in range(k):
            term = np.einsum("oc,...ohw->...chw", weight[:, :, dy, dx], g)
            term = np.roll(term, (dy - r, dx - r), axis=(-2, -1))
            out = term if out is None else out + term
    return out


def to_channels(x):
    return np.stack([x.real, x.imag], axis=-3)


def from_channels(h):
    return h[..., 0, :, :] + 1j * h[..., 1, :, :]


@dataclass(frozen=True)
class SmoothConvNet:
    """Convolutional block on 2-channel (re, im) images.

    ``layers`` is a list of ``(weight, bias)`` with weights shaped
    ``(c_out, c_in, k, k)``; every layer but the last is followed by the
    activation.
    """

    layers: list
    activation: str = "silu"
    seed: int = 0

    def __post_init__(self):
        if self.layers[0][0].shape[1] != 2 or self.layers[-1][0].shape[0] != 2:
            raise ShapeMismatch("network must map 2 channels to 2 channels")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @classmethod
    def random(cls, seed=0, index=0, channels=8, n_layers=3, kernel_size=3,
               activation="silu", gain=1.0, out_scale=0.5, bias_scale=0.5):
        """Fan-in-scaled Gaussian weights drawn from a counter stream."""
        if kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")
        widths = [2] + [channels] * (n_layers - 1) + [2]
        stream = _rng.stream_id(_rng.WEIGHTS, index)
        pos = 0
        layers = []
        for li, (c_in, c_out) in enumerate(zip(widths[:-1], widths[1:])):
            count = c_out * c_in * kernel_size**2
            scale = gain / np.sqrt(c_in * kernel_size**2)
            if li == n_layers - 1:
                scale *= out_scale
            w = _rng.real_normal(seed, stream, pos, count) * scale
            pos += count
            b = _rng.real_normal(seed, stream, pos, c_out) * bias_scale
            pos += c_out
            if li == n_layers - 1:
                b = np.zeros(c_out)
            layers.append((w.reshape(c_out, c_in, kernel_size, kernel_size), b))
        return cls(layers, activation, seed)

    @classmethod
    def zeros(cls, channels=8, n_layers=3, kernel_size=3, activation="silu"):
        widths = [2] + [channels] * (n_layers - 1) + [2]
        layers = [
            (np.zeros((o, i, kernel_size, kernel_size)), np.zeros(o))
            for i, o in zip(widths[:-1], widths[1:])
        ]
        return cls(layers, activation)

    def forward(self, h, tape=None):
        act, grad = ACTIVATIONS[self.activation]
        last = len(self.layers) - 1
        for li, (w, b) in enumerate(self.layers):
            z = _conv(h, w) + b[:, None, None]
            if li == last:
                return z
            if tape is not None:
                tape.append(grad(z))
            h = act(z)

    def jvp(self, tape, t):
        last = len(self.layers) - 1
        for li, (w, _) in enumerate(self.layers):
            t = _conv(t, w)
            if li < last:
                t = tape[li] * t
        return t

    def vjp(self, tape, g):
        last = len(self.layers) - 1
        for li in range(last, -1, -1):
            if li < last:
                g = tape[li] * g
            g = _conv_transpose(g, self.layers[li][0])
        return g


@dataclass(frozen=True)
class ReconModel:
    """A reconstruction ``f``.

    kinds:
        ``identity``: ``f(x0) = x0``.
        ``single-pass-denoiser``: ``f(x0) = x0 + net(x0)``.
        ``unrolled-dc``: ``K`` alternations of ``x <- x + net_k(x)`` and data
        consistency. With ``dc="gradient"`` the update is
        ``x - A^H A x + A^H y``; with ``dc="cg"`` it solves
        ``(A^H A + lam I) x = A^H y + lam x_hat`` by conjugate gradients.
    """

    kind: str
    operator: ImagingOperator = None
    blocks: tuple = ()
    dc: str = "gradient"
    cg_lambda: float = 1.0
    cg_iters: int = 30
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind == "unrolled-dc" and self.operator is None:
            raise ValueError("unrolled-dc needs an imaging operator")
        if self.dc not in ("gradient", "cg"):
            raise ValueError(f"unknown data-consistency mode {self.dc!r}")

    @property
    def steps(self):
        return len(self.blocks) if self.kind == "unrolled-dc" else 0

    def save(self, directory):
        directory = Path(directory)
        manifest = {"kind": self.kind, "dc": self.dc, "cg_lambda": self.cg_lambda,
                    "cg_iters": self.cg_iters, "blocks": len(self.blocks)}
        for bi, net in enumerate(self.blocks):
            manifest[f"block{bi}.activation"] = net.activation
            manifest[f"block{bi}.seed"] = net.seed
            for li, (w, b) in enumerate(net.layers):
                manifest[f"block{bi}.layer{li}"] = list(w.shape)
                save_array(directory / f"block{bi}_layer{li}_weight", w)
                save_array(directory / f"block{bi}_layer{li}_bias", b)
        write_sidecar(directory / "manifest.txt", manifest)

    @classmethod
    def load(cls, directory, operator=None):
        directory = Path(directory)
        meta = read_sidecar(directory / "manifest.txt")
        blocks = []
        for bi in range(int(meta["blocks"])):
            layers = []
            li = 0
            while f"block{bi}.layer{li}" in meta:
                layers.append((load_array(directory / f"block{bi}_layer{li}_weight"),
                               load_array(directory / f"block{bi}_layer{li}_bias")))
                li += 1
            blocks.append(SmoothConvNet(layers, meta[f"block{bi}.activation"],
                                        int(meta[f"block{bi}.seed"])))
        return cls(meta["kind"], operator, tuple(blocks), meta["dc"],
                   float(meta["cg_lambda"]), int(meta["cg_iters"]))


def make_model(kind, operator=None, steps=4, seed=0, dc="gradient", zero_weights=False,
               **net_kwargs):
    """Model factory; block ``k`` draws its weights from stream ``k`` of ``seed``."""
    if kind == "identity":
        return ReconModel(kind, operator)
    n_blocks = steps if kind == "unrolled-dc" else 1
    if zero_weights:
        keep = {k: v for k, v in net_kwargs.items()
                if k in ("channels", "n_layers", "kernel_size", "activation")}
        blocks = tuple(SmoothConvNet.zeros(**keep) for _ in range(n_blocks))
    else:
        blocks = tuple(SmoothConvNet.random(seed, k, **net_kwargs) for k in range(n_blocks))
    return ReconModel(kind, operator, blocks, dc, meta={"seed": seed})


def _cg(apply, rhs, iters, lam):
    """Batched CG for ``(N + lam I) x = rhs`` over the last two axes."""
    x = np.zeros_like(rhs)
    r = rhs.copy()
    p = r.copy()
    rr = np.sum(np.abs(r) ** 2, axis=(-2, -1), keepdims=True)
    floor = 1e-30 * np.maximum(rr, 1e-300)
    for _ in range(iters):
        if np.all(rr <= floor):
            break
        ap = apply(p) + lam * p
        pap = np.sum(p.conj() * ap, axis=(-2, -1), keepdims=True).real
        alpha = np.where(rr > floor, rr / np.where(pap > 0, pap, 1.0), 0.0)
        x = x + alpha * p
        r = r - alpha * ap
        rr_new = np.sum(np.abs(r) ** 2, axis=(-2, -1), keepdims=True)
        beta = np.where(rr > floor, rr_new / np.where(rr > 0, rr, 1.0), 0.0)
        p = r + beta * p
        rr = rr_new
    return x


class Linearization:
    """Primal pass at ``x_lin`` with the activation derivatives recorded.

    ``jvp`` and ``vjp`` accept arbitrary leading batch axes.
    """

    def __init__(self, model: ReconModel, x_lin, record=True):
        self.model = model
        self.x_lin = as_complex(x_lin)
        self.tapes = [] if record else None
        self.output = self._primal()

    def _dc(self, x_hat, data):
        model = self.model
        op = model.operator
        if model.dc == "gradient":
            return x_hat - op.normal(x_hat) + data
        return _cg(op.normal, data + model.cg_lambda * x_hat, model.cg_iters,
                   model.cg_lambda)

    def _primal(self):
        model = self.model
        x0 = self.x_lin
        if model.kind == "identity":
            return x0
        x = x0
        for net in model.blocks:
            tape = None if self.tapes is None else []
            x = x + from_channels(net.forward(to_channels(x), tape))
            if tape is not None:
                self.tapes.append(tape)
            if model.kind == "unrolled-dc":
                x = self._dc(x, x0)
        return x

    def _check(self, t):
        t = as_complex(t)
        if t.shape[-2:] != self.x_lin.shape[-2:]:
            raise ShapeMismatch(f"tangent {t.shape} vs image {self.x_lin.shape}")
        return t

    def jvp(self, u):
        u = self._check(u)
        model = self.model
        if model.kind == "identity":
            return u.copy()
        t = u
        for net, tape in zip(model.blocks, self.tapes):
            t = t + from_channels(net.jvp(tape, to_channels(t)))
            if model.kind == "unrolled-dc":
                t = self._dc(t, u)
        return t

    def vjp(self, w):
        g = self._check(w)
        model = self.model
        if model.kind == "identity":
            return g.copy()
        op = model.operator
        g_data = np.zeros_like(g)
        for net, tape in zip(reversed(model.blocks), reversed(self.tapes)):
            if model.kind == "unrolled-dc":
                if model.dc == "gradient":
                    g_data = g_data + g
                    g = g - op.normal(g)
                else:
                    g_rhs = _cg(op.normal, g, model.cg_iters, model.cg_lambda)
                    g_data = g_data + g_rhs
                    g = model.cg_lambda * g_rhs
            g = g + from_channels(net.vjp(tape, to_channels(g)))
        return g + g_data


def linearize(model: ReconModel, x_lin) -> Linearization:
    return Linearization(model, x_lin)


def reconstruct(model: ReconModel, x0):
    """Evaluate ``f``; ``x0`` may carry leading batch axes."""
    return Linearization(model, x0, record=False).output


def jvp(model: ReconModel, x_lin, u):
    return Linearization(model, x_lin).jvp(u)


def vjp(model: ReconModel, x_lin, w):
    return Linearization(model, x_lin).vjp(w)
