"""Fully connected tanh networks with spatial jets and manual reverse mode.

Inputs are batched row-wise: ``X`` has shape ``(n, N0)``.  Two input columns
(the *spatial slots*) carry the evaluation point; jets propagate the value,
the two first directional derivatives along those slots and the two pure
second derivatives, which is all a Laplacian needs.

Weight gradients of any loss built from jets are obtained by handing the
output adjoints ``(dL/dN, dL/dN_k, dL/dN_kk)`` to :func:`jet_backward`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from navem_lab.errors import DimMismatch, InvalidDims, NonFinite, ParseError, SchemaVersionError

SCHEMA = "navem-mlp/1"


@dataclass
class Mlp:
    weights: list  # A_l, shape (N_l, N_{l-1})
    biases: list  # b_l, shape (N_l,)
    strategy: str = "P"
    polygon_class: dict = field(default_factory=lambda: {"nv": 4, "convex": True})
    encoding: str = "ref-anchor-v1"
    companion: "Mlp | None" = None  # gradient net stored alongside an H value net

    def __post_init__(self):
        self.weights = [np.asarray(a, dtype=float) for a in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        check_dims(self.dims)
        for a, b, n_in, n_out in zip(self.weights, self.biases, self.dims[:-1], self.dims[1:]):
            if a.shape != (n_out, n_in) or b.shape != (n_out,):
                raise InvalidDims("weight shapes do not chain")

    @property
    def dims(self):
        return [self.weights[0].shape[1]] + [a.shape[0] for a in self.weights]

    @property
    def n_params(self):
        return sum(a.size + b.size for a, b in zip(self.weights, self.biases))

    def get_params(self):
        return np.concatenate([np.concatenate([a.ravel(), b]) for a, b in zip(self.weights, self.biases)])

    def set_params(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise DimMismatch(f"expected {self.n_params} parameters, got {theta.shape}")
        k = 0
        for a, b in zip(self.weights, self.biases):
            a[...] = theta[k:k + a.size].reshape(a.shape)
            k += a.size
            b[...] = theta[k:k + b.size]
            k += b.size

    def copy(self):
        return Mlp([a.copy() for a in self.weights], [b.copy() for b in self.biases], self.strategy,
                   dict(self.polygon_class), self.encoding,
                   None if self.companion is None else self.companion.copy())


def check_dims(dims):
    if len(dims) < 2 or any(int(d) != d or d < 1 for d in dims):
        raise InvalidDims(f"invalid layer dims {dims}")


def init_glorot(layer_dims, seed=0, **meta):
    """Glorot-normal weights (variance 2/(fan_in+fan_out)), zero biases."""
    check_dims(layer_dims)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(layer_dims[:-1], layer_dims[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / (n_in + n_out)), size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return Mlp(weights, biases, **meta)


def _check_input(mlp, X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != mlp.dims[0]:
        raise DimMismatch(f"network expects {mlp.dims[0]} inputs, got {X.shape[1]}")
    return X


def forward(mlp, X):
    """Network output for a batch of inputs, shape ``(n, N_L)``."""
    x = _check_input(mlp, X)
    last = len(mlp.weights) - 1
    for layer, (a, b) in enumerate(zip(mlp.weights, mlp.biases)):
        x = x @ a.T + b
        if layer < last:
            x = np.tanh(x)
    return x


@dataclass
class SpatialJet:
    output: np.ndarray  # (n, N_L)
    d_dx: np.ndarray  # (n, N_L, 2)
    d2_dx2: np.ndarray  # (n, N_L, 2) pure second derivatives
    cache: list = field(default=None, repr=False)
    slots: tuple = (0, 1)

    @property
    def laplacian_x(self):
        return self.d2_dx2.sum(axis=-1)


def spatial_jet(mlp, X, slots=(0, 1), second=True):
    """Value, spatial gradient and pure second derivatives w.r.t. two input slots.

    With ``second=False`` only first derivatives are propagated and
    ``d2_dx2`` is None.
    """
    x = _check_input(mlp, X)
    if len(set(slots)) != 2 or not all(0 <= s < x.shape[1] for s in slots):
        raise DimMismatch(f"invalid spatial slots {slots}")
    n = len(x)
    xk = np.zeros((2, n, x.shape[1]))
    for k, s in enumerate(slots):
        xk[k, :, s] = 1.0
    xkk = np.zeros_like(xk) if second else None
    cache = []
    last = len(mlp.weights) - 1
    for layer, (a, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = x @ a.T + b
        zk = xk @ a.T
        zkk = xkk @ a.T if second else None
        entry = {"x": x, "xk": xk, "xkk": xkk}
        if layer < last:
            t = np.tanh(z)
            s1 = 1.0 - t * t
            s2 = -2.0 * t * s1
            entry.update(t=t, s1=s1, s2=s2, zk=zk, zkk=zkk)
            x = t
            xk = s1 * zk
            if second:
                xkk = s2 * zk * zk + s1 * zkk
        else:
            x, xk, xkk = z, zk, zkk
        cache.append(entry)
    d2 = np.moveaxis(xkk, 0, -1) if second else None
    return SpatialJet(x, np.moveaxis(xk, 0, -1), d2, cache, tuple(slots))


def jet_backward(mlp, jet, bar_out, bar_d=None, bar_d2=None):
    """Reverse accumulation through a :func:`spatial_jet` computation.

    ``bar_out`` (n, N_L), ``bar_d`` (n, N_L, 2) and ``bar_d2`` (n, N_L, 2) are
    the loss adjoints of the output, its spatial gradient and its pure second
    derivatives.  Returns the flat weight gradient in ``get_params`` order.
    """
    n, n_out = jet.output.shape
    xb = np.asarray(bar_out, dtype=float)
    xkb = np.zeros((2, n, n_out)) if bar_d is None else np.moveaxis(np.asarray(bar_d, dtype=float), -1, 0)
    second = jet.d2_dx2 is not None
    if bar_d2 is not None and not second:
        raise DimMismatch("second-derivative adjoint given for a first-order jet")
    xkkb = np.moveaxis(np.asarray(bar_d2, dtype=float), -1, 0) if bar_d2 is not None else None
    grads = []
    last = len(mlp.weights) - 1
    for layer in range(last, -1, -1):
        c = jet.cache[layer]
        if layer < last:
            s1, s2, zk = c["s1"], c["s2"], c["zk"]
            zb = xb * s1 + np.sum(xkb * s2 * zk, axis=0)
            zkb = xkb * s1
            zkkb = None
            if xkkb is not None:
                t, zkk = c["t"], c["zkk"]
                s3 = -2.0 * s1 * s1 + 4.0 * t * t * s1
                zb += np.sum(xkkb * (s3 * zk * zk + s2 * zkk), axis=0)
                zkb += 2.0 * xkkb * s2 * zk
                zkkb = xkkb * s1
        else:
            zb, zkb, zkkb = xb, xkb, xkkb
        a = mlp.weights[layer]
        n_out, n_in = a.shape
        ga = zb.T @ c["x"] + zkb.reshape(-1, n_out).T @ c["xk"].reshape(-1, n_in)
        if zkkb is not None:
            ga += zkkb.reshape(-1, n_out).T @ c["xkk"].reshape(-1, n_in)
        grads.append(np.concatenate([ga.ravel(), zb.sum(axis=0)]))
        if layer > 0:
            xb = zb @ a
            xkb = zkb @ a
            xkkb = None if zkkb is None else zkkb @ a
    g = np.concatenate(grads[::-1])
    if not np.all(np.isfinite(g)):
        raise NonFinite("non-finite weight gradient")
    return g


# -- optimizers ---------------------------------------------------------------

def lr_schedule(epoch, total, lr0=1e-2, decay=1e-1):
    """Continuous exponential decay from ``lr0`` to ``lr0 * decay`` over ``total`` epochs."""
    return lr0 * decay ** (epoch / max(total, 1))


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n))


def adam_step(state, theta, grad, lr):
    """One Adam update; returns the new parameter vector (state is updated in place)."""
    if not np.all(np.isfinite(grad)):
        raise NonFinite("non-finite gradient in Adam step")
    state.step += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    m_hat = state.m / (1 - state.beta1 ** state.step)
    v_hat = state.v / (1 - state.beta2 ** state.step)
    return theta - lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class QuasiNewtonResult:
    theta: np.ndarray
    losses: list
    n_iter: int
    message: str


def quasi_newton_run(fun, theta0, max_epochs=10000, gtol=1e-10, history=20, callback=None):
    """Limited-memory BFGS with a strong-Wolfe line search (scipy's L-BFGS-B, no bounds).

    ``fun(theta) -> (loss, grad)``.  ``losses`` holds the loss after every
    accepted step, so it is non-increasing.
    """
    losses = []

    def wrapped(theta):
        f, g = fun(theta)
        if not (np.isfinite(f) and np.all(np.isfinite(g))):
            raise NonFinite("non-finite loss or gradient in quasi-Newton phase")
        return f, g

    def on_step(intermediate_result):
        losses.append(float(intermediate_result.fun))
        if callback is not None:
            callback(len(losses), intermediate_result.x, losses[-1])

    if max_epochs <= 0:
        return QuasiNewtonResult(np.array(theta0, dtype=float), losses, 0, "no iterations requested")
    res = minimize(wrapped, np.array(theta0, dtype=float), jac=True, method="L-BFGS-B", callback=on_step,
                   options={"maxiter": max_epochs, "maxcor": history, "gtol": gtol, "ftol": 0.0,
                            "maxfun": 20 * max_epochs + 100, "maxls": 40})
    return QuasiNewtonResult(res.x, losses, int(res.nit), str(res.message))


# -- serialization --------------------------------------------------------------

def model_to_dict(mlp):
    doc = {
        "schema": SCHEMA,
        "strategy": mlp.strategy,
        "polygon_class": {"nv": int(mlp.polygon_class["nv"]), "convex": bool(mlp.polygon_class["convex"])},
        "dims": mlp.dims,
        "weights": [a.ravel().tolist() for a in mlp.weights],
        "biases": [b.tolist() for b in mlp.biases],
        "encoding": mlp.encoding,
    }
    if mlp.companion is not None:
        doc["companion"] = model_to_dict(mlp.companion)
    return doc


def model_from_dict(doc):
    if not isinstance(doc, dict):
        raise ParseError("model document must be a JSON object")
    if doc.get("schema") != SCHEMA:
        raise SchemaVersionError(f"unsupported model schema {doc.get('schema')!r}")
    try:
        dims = [int(d) for d in doc["dims"]]
        check_dims(dims)
        weights = [np.array(w, dtype=float).reshape(n_out, n_in)
                   for w, n_in, n_out in zip(doc["weights"], dims[:-1], dims[1:])]
        biases = [np.array(b, dtype=float) for b in doc["biases"]]
        pc = doc["polygon_class"]
        mlp = Mlp(weights, biases, str(doc["strategy"]), {"nv": int(pc["nv"]), "convex": bool(pc["convex"])},
                  str(doc["encoding"]))
    except (KeyError, TypeError, ValueError, InvalidDims) as exc:
        raise ParseError(f"malformed model document: {exc}") from exc
    if len(weights) != len(dims) - 1 or len(biases) != len(weights):
        raise ParseError("layer count does not match dims")
    if "companion" in doc:
        mlp.companion = model_from_dict(doc["companion"])
    return mlp


def save_model(mlp, path):
    Path(path).write_text(json.dumps(model_to_dict(mlp)))


def load_model(path):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return model_from_dict(doc)
