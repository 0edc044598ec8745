"""Minimal deterministic neural substrate.

Dense layers with hand-written backprop, a flat parameter registry, Adam
with bias correction, and a central-difference gradient checker. There is
no general autodiff graph: every forward returns the trace its matching
backward needs, and backward accumulates exact gradients into the
registered ParamTensors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, InvariantError, NumericError


class ParamTensor:
    """A named learnable array with a same-shape gradient buffer."""

    __slots__ = ("id", "values", "grad")

    def __init__(self, id: str, values: np.ndarray):
        self.id = id
        self.values = np.asarray(values)
        self.grad = np.zeros_like(self.values)

    @property
    def shape(self):
        return self.values.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"ParamTensor({self.id!r}, shape={self.values.shape})"


class ParamStore:
    """Ordered registry of ParamTensors, keyed by stable id."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self._params: "dict[str, ParamTensor]" = {}

    def register(self, id: str, values: np.ndarray) -> ParamTensor:
        if id in self._params:
            raise InvariantError(f"duplicate parameter id {id!r}")
        p = ParamTensor(id, np.asarray(values, dtype=self.dtype))
        self._params[id] = p
        return p

    def __getitem__(self, id: str) -> ParamTensor:
        return self._params[id]

    def __contains__(self, id: str) -> bool:
        return id in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def ids(self):
        return list(self._params.keys())

    def zero_grads(self):
        for p in self._params.values():
            p.zero_grad()

    def n_coords(self) -> int:
        return sum(p.values.size for p in self._params.values())

    def clip_global_norm(self, max_norm: float) -> float:
        """Scale all gradients so their joint L2 norm is at most max_norm."""
        sq = 0.0
        for p in self._params.values():
            sq += float(np.sum(p.grad * p.grad))
        norm = np.sqrt(sq)
        if norm > max_norm and norm > 0.0:
            scale = max_norm / norm
            for p in self._params.values():
                p.grad *= scale
        return float(norm)

    def snapshot(self) -> "dict[str, np.ndarray]":
        return {k: p.values.copy() for k, p in self._params.items()}

    def restore(self, snap: "dict[str, np.ndarray]"):
        for k, vals in snap.items():
            self._params[k].values[...] = vals


def _silu(z):
    s = 1.0 / (1.0 + np.exp(-z))
    return z * s


def _silu_grad(z):
    s = 1.0 / (1.0 + np.exp(-z))
    return s * (1.0 + z * (1.0 - s))


_ACTIVATIONS = {
    "relu": (lambda z: np.maximum(z, 0.0), lambda z: (z > 0.0).astype(z.dtype)),
    "silu": (_silu, _silu_grad),
    "identity": (lambda z: z, lambda z: np.ones_like(z)),
}


def uniform_fan_in(rng: np.random.Generator, fan_in: int, shape, dtype=np.float64) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Mlp:
    """Fully connected stack: affine + activation per hidden layer, linear output.

    Weights live in the supplied ParamStore under ``<prefix>/W{i}`` and
    ``<prefix>/b{i}``; the same Mlp instance is shared across channels, so
    rows of the input are independent items.
    """

    def __init__(self, store: ParamStore, prefix: str, widths: "list[int]",
                 activation: str, rng: np.random.Generator):
        if len(widths) < 2:
            raise InvariantError("Mlp needs at least input and output widths")
        if activation not in _ACTIVATIONS:
            raise InvariantError(f"unknown activation {activation!r}")
        self.widths = list(widths)
        self.activation = activation
        self.weights: "list[ParamTensor]" = []
        self.biases: "list[ParamTensor]" = []
        for i, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
            w = store.register(f"{prefix}/W{i}", uniform_fan_in(rng, n_in, (n_out, n_in), store.dtype))
            b = store.register(f"{prefix}/b{i}", uniform_fan_in(rng, n_in, (n_out,), store.dtype))
            self.weights.append(w)
            self.biases.append(b)

    @property
    def in_width(self) -> int:
        return self.widths[0]

    @property
    def out_width(self) -> int:
        return self.widths[-1]

    def forward(self, x: np.ndarray) -> "tuple[np.ndarray, list]":
        """x: (n_items, in_width) -> (y: (n_items, out_width), trace)."""
        x = np.atleast_2d(np.asarray(x))
        if x.shape[1] != self.in_width:
            raise DataError(f"input width {x.shape[1]} != expected {self.in_width}")
        act, _ = _ACTIVATIONS[self.activation]
        trace = []
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.values.T + b.values
            trace.append((h, z))
            h = z if i == last else act(z)
        return h, trace

    def backward(self, trace: list, upstream: np.ndarray) -> np.ndarray:
        """Accumulate parameter grads; return gradient w.r.t. the input rows."""
        if len(trace) != len(self.weights):
            raise InvariantError("trace does not match this network")
        _, dact = _ACTIVATIONS[self.activation]
        g = np.asarray(upstream)
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            h_in, z = trace[i]
            if i != last:
                g = g * dact(z)
            self.weights[i].grad += g.T @ h_in
            self.biases[i].grad += g.sum(axis=0)
            g = g @ self.weights[i].values
        return g


class Adam:
    """Adam with bias correction; state keyed by parameter id."""

    def __init__(self, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m: "dict[str, np.ndarray]" = {}
        self.v: "dict[str, np.ndarray]" = {}

    def step(self, params: ParamStore):
        """One in-place update. Aborts (no mutation) on a non-finite gradient."""
        for p in params:
            if not np.all(np.isfinite(p.grad)):
                raise NumericError(f"non-finite gradient in parameter {p.id!r}")
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p in params:
            m = self.m.setdefault(p.id, np.zeros_like(p.values))
            v = self.v.setdefault(p.id, np.zeros_like(p.values))
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.values -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)

    def state_arrays(self) -> "dict[str, np.ndarray]":
        out = {"adam/t": np.array([self.t], dtype=np.int64)}
        for k, m in self.m.items():
            out[f"adam/m/{k}"] = m
        for k, v in self.v.items():
            out[f"adam/v/{k}"] = v
        return out

    def load_state_arrays(self, arrays: "dict[str, np.ndarray]"):
        self.t = int(arrays["adam/t"][0])
        self.m = {}
        self.v = {}
        for name, arr in arrays.items():
            if name.startswith("adam/m/"):
                self.m[name[len("adam/m/"):]] = arr.copy()
            elif name.startswith("adam/v/"):
                self.v[name[len("adam/v/"):]] = arr.copy()


def adam_step(params: ParamStore, lr: float, betas, eps: float, t: int):
    """Single functional Adam update at step count t (first step: t = 1)."""
    opt = Adam(lr=lr, betas=betas, eps=eps)
    opt.t = t - 1
    opt.step(params)


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    n_checked: int
    worst_param: str = ""
    worst_index: int = -1
    per_param: "dict[str, float]" = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def finite_diff_check(
    loss_fn,
    params: ParamStore,
    tolerance: float = 1e-4,
    h: float = 1e-5,
    max_coords_per_param: "int | None" = None,
    rng: "np.random.Generator | None" = None,
    abs_floor: float = 1e-6,
) -> GradCheckReport:
    """Compare populated analytic grads against central finite differences.

    loss_fn() must be deterministic (all randomness frozen) and must read
    the current parameter values. The caller runs backprop first; this
    function only perturbs values and re-evaluates the loss. The relative
    error denominator is floored at abs_floor, which doubles as the
    absolute fallback when both gradients vanish.
    """
    report = GradCheckReport(max_rel_error=0.0, tolerance=tolerance, n_checked=0)
    for p in params:
        flat_vals = p.values.reshape(-1)
        flat_grad = p.grad.reshape(-1)
        n = flat_vals.size
        if max_coords_per_param is not None and n > max_coords_per_param:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(n, size=max_coords_per_param, replace=False)
        else:
            coords = range(n)
        worst = 0.0
        for i in coords:
            saved = flat_vals[i]
            flat_vals[i] = saved + h
            up = float(loss_fn())
            flat_vals[i] = saved - h
            down = float(loss_fn())
            flat_vals[i] = saved
            fd = (up - down) / (2.0 * h)
            an = float(flat_grad[i])
            rel = abs(an - fd) / max(abs(an) + abs(fd), abs_floor)
            report.n_checked += 1
            if rel > worst:
                worst = rel
            if rel > report.max_rel_error:
                report.max_rel_error = rel
                report.worst_param = p.id
                report.worst_index = int(i)
        report.per_param[p.id] = worst
    return report
