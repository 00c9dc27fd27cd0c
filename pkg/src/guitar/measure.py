"""Differentiable ranking measures f(x, q).

Five kinds are supported:

* ``inner-product``  f = x . q
* ``cosine``         f = x . q / (|x| |q|)
* ``neg-l2``         f = -|x - q|^2
* ``mlp-sigmoid``    f = sigmoid(MLP([x ; q])), ReLU hidden layers
* ``deepfm``         f = sigmoid(x[:m] . q[:m] + MLP([x[m:] ; q[m:]]))

The last two are "capped" (output in [0, 1]) and searched with the loss
``L = 1 - f``; the closed forms use ``L = -f``.  Either way ``-dL/dx`` is
exactly ``+df/dx``, which is what the search ranks neighbours against.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _kernels as K

KINDS = {
    "inner-product": K.INNER_PRODUCT,
    "cosine": K.COSINE,
    "neg-l2": K.NEG_L2,
    "mlp-sigmoid": K.MLP_SIGMOID,
    "deepfm": K.DEEPFM,
}
CAPPED_KINDS = ("mlp-sigmoid", "deepfm")
NEURAL_KINDS = CAPPED_KINDS

DEFAULT_DEEPFM_HIDDEN = (32, 32)

_MAGIC = "guitar-measure v1"


class MeasureError(ValueError):
    """Bad measure specification, weight file, or input dimension."""


def n_weights(layer_dims) -> int:
    """Number of weights + biases in a dense stack with the given layer widths."""
    dims = list(layer_dims)
    return sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))


@dataclass(frozen=True, eq=False)
class MeasureSpec:
    kind: str
    dim: int | None = None
    layer_dims: tuple[int, ...] = ()
    fm_dim: int = 0
    deep_dim: int = 0
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        if self.kind not in KINDS:
            raise MeasureError(f"unknown measure kind {self.kind!r}")
        w = np.ascontiguousarray(self.weights, dtype=np.float64).ravel()
        if w is self.weights:
            w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))
        dims = self.layer_dims

        if self.kind == "mlp-sigmoid":
            if len(dims) < 2 or dims[-1] != 1 or dims[0] % 2:
                raise MeasureError(f"mlp layer dims must be [2*dim, ..., 1], got {list(dims)}")
            if self.dim is None:
                object.__setattr__(self, "dim", dims[0] // 2)
            if dims[0] != 2 * self.dim:
                raise MeasureError(f"mlp input width {dims[0]} != 2 * dim {self.dim}")
        elif self.kind == "deepfm":
            if self.fm_dim < 1 or self.deep_dim < 1:
                raise MeasureError("deepfm needs positive fm_dim and deep_dim")
            if self.dim is None:
                object.__setattr__(self, "dim", self.fm_dim + self.deep_dim)
            if self.fm_dim + self.deep_dim != self.dim:
                raise MeasureError(f"fm_dim + deep_dim = {self.fm_dim + self.deep_dim} != dim {self.dim}")
            if len(dims) < 2 or dims[0] != 2 * self.deep_dim or dims[-1] != 1:
                raise MeasureError(f"deepfm mlp dims must be [2*deep_dim, ..., 1], got {list(dims)}")
        elif dims or w.size:
            raise MeasureError(f"{self.kind} takes no layers or weights")

        if any(d < 1 for d in dims):
            raise MeasureError("layer widths must be positive")
        if self.dim is not None and self.dim < 1:
            raise MeasureError("dim must be positive")
        expected = n_weights(dims) if dims else 0
        if w.size != expected:
            raise MeasureError(f"weight count mismatch: architecture needs {expected}, got {w.size}")
        kdims = np.asarray(dims or (0,), dtype=np.int64)
        kdims.setflags(write=False)
        object.__setattr__(self, "_kdims", kdims)

    @property
    def capped(self) -> bool:
        return self.kind in CAPPED_KINDS

    @property
    def code(self) -> int:
        return KINDS[self.kind]

    @property
    def kernel_dims(self) -> np.ndarray:
        return self._kdims

    def __eq__(self, other):
        if not isinstance(other, MeasureSpec):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.dim == other.dim
            and self.layer_dims == other.layer_dims
            and self.fm_dim == other.fm_dim
            and self.deep_dim == other.deep_dim
            and np.array_equal(self.weights, other.weights)
        )

    __hash__ = None


def _as_vec(v, spec: MeasureSpec, name: str) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64)
    if a.ndim != 1:
        raise MeasureError(f"{name} must be 1-d, got shape {a.shape}")
    if spec.dim is not None and a.shape[0] != spec.dim:
        raise MeasureError(f"dimension mismatch: measure expects {spec.dim}, {name} has {a.shape[0]}")
    return a


def _check_pair(spec, x, q):
    x = _as_vec(x, spec, "x")
    q = _as_vec(q, spec, "q")
    if x.shape != q.shape:
        raise MeasureError(f"dimension mismatch: x has {x.shape[0]}, q has {q.shape[0]}")
    return x, q


class GradResult(NamedTuple):
    value: float
    grad: np.ndarray


def evaluate(spec: MeasureSpec, x, q) -> float:
    x, q = _check_pair(spec, x, q)
    return float(K.score(spec.code, x, q, spec.weights, spec.kernel_dims, spec.fm_dim))


def evaluate_with_grad(spec: MeasureSpec, x, q) -> GradResult:
    """f(x, q) and the analytic df/dx."""
    x, q = _check_pair(spec, x, q)
    grad = np.empty_like(x)
    value = K.score_grad(spec.code, x, q, spec.weights, spec.kernel_dims, spec.fm_dim, grad)
    return GradResult(float(value), grad)


def evaluate_batch(spec: MeasureSpec, X, q) -> np.ndarray:
    """Score every row of ``X`` against ``q``; row i equals ``evaluate(spec, X[i], q)`` bitwise."""
    q = _as_vec(q, spec, "q")
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != q.shape[0]:
        raise MeasureError(f"dimension mismatch: rows have shape {X.shape}, q has {q.shape[0]}")
    out = np.empty(X.shape[0])
    K.score_batch(spec.code, X, q, spec.weights, spec.kernel_dims, spec.fm_dim, out)
    return out


def loss_gradient(spec: MeasureSpec, x, q, loss: str | None = None) -> np.ndarray:
    """dL/dx for ``loss`` in {"one-minus" (1 - f), "neg" (-f), "squared" ((1 - f)^2)}.

    The default is "one-minus" for capped kinds and "neg" otherwise.
    """
    if loss is None:
        loss = "one-minus" if spec.capped else "neg"
    value, g = evaluate_with_grad(spec, x, q)
    if loss in ("one-minus", "neg"):
        return -g
    if loss == "squared":
        return -2.0 * (1.0 - value) * g
    raise ValueError(f"unknown loss {loss!r}")


def activation_pattern(spec: MeasureSpec, x, q) -> np.ndarray:
    """Boolean ReLU on/off pattern of the hidden units (empty for closed forms)."""
    x, q = _check_pair(spec, x, q)
    if not spec.layer_dims:
        return np.zeros(0, dtype=bool)
    z = K.hidden_preactivations(spec.code, x, q, spec.weights, spec.kernel_dims, spec.fm_dim)
    n_hidden = sum(spec.layer_dims[1:-1])
    return z[:n_hidden] > 0.0


class CountingMeasure:
    """Wraps a spec and counts every forward evaluation and gradient computation.

    One instance per query; not shared between threads.
    """

    def __init__(self, spec: MeasureSpec):
        self.spec = spec
        self.nn_evals = 0
        self.grad_evals = 0
        self._code = spec.code
        self._dims = spec.kernel_dims
        self._w = spec.weights
        self._fm = spec.fm_dim

    def evaluate(self, x, q) -> float:
        self.nn_evals += 1
        return evaluate(self.spec, x, q)

    def evaluate_rows(self, data: np.ndarray, rows: np.ndarray, q: np.ndarray) -> np.ndarray:
        """Score ``data[rows]`` (float64, C-contiguous) against ``q``; counts len(rows)."""
        out = np.empty(rows.shape[0])
        if rows.shape[0]:
            K.score_rows(self._code, data, rows, q, self._w, self._dims, self._fm, out)
        self.nn_evals += int(rows.shape[0])
        return out

    def evaluate_with_grad(self, x, q) -> GradResult:
        self.grad_evals += 1
        grad = np.empty(x.shape[0])
        value = K.score_grad(self._code, x, q, self._w, self._dims, self._fm, grad)
        return GradResult(float(value), grad)


def make_random_measure(kind: str, dims=None, seed: int = 0, hidden=DEFAULT_DEEPFM_HIDDEN) -> MeasureSpec:
    """Random-weight measure; weights and biases ~ N(0, 1/sqrt(fan_in)).

    ``dims`` is the vector dim for closed forms, the full layer list
    ``[2*dim, ..., 1]`` for ``mlp-sigmoid``, and ``(fm_dim, deep_dim)`` for
    ``deepfm`` (whose MLP gets ``hidden`` hidden layers).
    """
    if kind not in KINDS:
        raise MeasureError(f"unknown measure kind {kind!r}")
    if kind not in NEURAL_KINDS:
        return MeasureSpec(kind, dim=None if dims is None else int(dims))

    if kind == "mlp-sigmoid":
        layer_dims = tuple(int(d) for d in dims)
        fm_dim = deep_dim = 0
    else:
        fm_dim, deep_dim = (int(d) for d in dims)
        layer_dims = (2 * deep_dim, *hidden, 1)
    rng = np.random.default_rng(seed)
    parts = []
    for din, dout in zip(layer_dims[:-1], layer_dims[1:]):
        std = 1.0 / np.sqrt(din)
        parts.append(rng.normal(0.0, std, size=din * dout))
        parts.append(rng.normal(0.0, std, size=dout))
    weights = np.concatenate(parts)
    if kind == "mlp-sigmoid":
        return MeasureSpec(kind, layer_dims=layer_dims, weights=weights)
    return MeasureSpec(kind, layer_dims=layer_dims, fm_dim=fm_dim, deep_dim=deep_dim, weights=weights)


def save_measure(spec: MeasureSpec, path: str | os.PathLike) -> None:
    """Text header of ``key=value`` lines ended by ``end``, then float64 LE weights."""
    lines = [
        _MAGIC,
        f"kind={spec.kind}",
        f"dim={spec.dim if spec.dim is not None else 0}",
        f"layers={','.join(map(str, spec.layer_dims))}",
        f"fm_dim={spec.fm_dim}",
        f"deep_dim={spec.deep_dim}",
        f"capped={int(spec.capped)}",
        f"count={spec.weights.size}",
        "end",
    ]
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        fh.write(spec.weights.astype("<f8").tobytes())


def load_measure(path: str | os.PathLike) -> MeasureSpec:
    with open(path, "rb") as fh:
        buf = fh.read()
    marker = b"\nend\n"
    cut = buf.find(marker)
    if cut < 0:
        raise MeasureError(f"{path}: header terminator not found")
    header = buf[:cut].decode("ascii", errors="replace").splitlines()
    payload = buf[cut + len(marker):]
    if not header or header[0] != _MAGIC:
        raise MeasureError(f"{path}: not a measure file (bad magic)")
    fields = {}
    for ln in header[1:]:
        key, sep, val = ln.partition("=")
        if not sep:
            raise MeasureError(f"{path}: cannot parse header line {ln!r}")
        fields[key.strip()] = val.strip()
    try:
        kind = fields["kind"]
        dim = int(fields.get("dim", "0")) or None
        layers = tuple(int(v) for v in fields.get("layers", "").split(",") if v)
        fm_dim = int(fields.get("fm_dim", "0"))
        deep_dim = int(fields.get("deep_dim", "0"))
        count = int(fields["count"])
    except (KeyError, ValueError) as exc:
        raise MeasureError(f"{path}: bad header ({exc})") from None
    if len(payload) != 8 * count:
        raise MeasureError(f"{path}: weight count mismatch: header says {count}, payload holds {len(payload) / 8:g}")
    weights = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    if not np.all(np.isfinite(weights)):
        raise MeasureError(f"{path}: non-finite weight")
    return MeasureSpec(kind, dim=dim, layer_dims=layers, fm_dim=fm_dim, deep_dim=deep_dim, weights=weights)
