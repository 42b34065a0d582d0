"""Harmonic approximation space: scaled harmonic polynomials plus three
vertex-attached singular functions built from a rational fit ``Phi``.

``Phi`` approximates the harmonic function on (-1, 1)^2 whose trace is a hat
of height 1 at (1, 0) on the right side and 0 elsewhere.  Its poles cluster
exponentially toward (1, 0) from outside the square.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from navem_lab.errors import FitDiverged, ParseError, PoleInsideElement, SchemaVersionError

PHI_SCHEMA = "navem-phi/1"


def pole_locations(n_poles):
    alpha = np.arange(1, n_poles + 1)
    return 1.0 + 2.0 * np.exp(-4.0 * (np.sqrt(n_poles) - np.sqrt(alpha)))


@dataclass
class PhiModel:
    poles: np.ndarray
    d: np.ndarray  # pole scale factors
    coef_poles: np.ndarray
    coef_poly: np.ndarray  # degrees 0..n_poly
    residual: float = float("nan")

    @property
    def n_poles(self):
        return len(self.poles)

    @property
    def n_poly(self):
        return len(self.coef_poly) - 1

    def complex_value(self, w):
        """Analytic function F with Phi = Re F, and its derivative F'."""
        w = np.asarray(w, dtype=complex)
        diff = w[..., None] - self.poles
        f = np.sum(self.coef_poles * self.d / diff, axis=-1)
        df = -np.sum(self.coef_poles * self.d / diff ** 2, axis=-1)
        h = w / 2.0
        powers = h[..., None] ** np.arange(self.n_poly + 1)
        f = f + powers @ self.coef_poly
        beta = np.arange(1, self.n_poly + 1)
        df = df + (powers[..., :-1] * (beta / 2.0)) @ self.coef_poly[1:]
        return f, df

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.complex_value(x[..., 0] + 1j * x[..., 1])[0].real

    def to_dict(self):
        return {"schema": PHI_SCHEMA, "poles": self.poles.tolist(), "d": self.d.tolist(),
                "coef_poles": self.coef_poles.tolist(), "coef_poly": self.coef_poly.tolist(),
                "residual": self.residual}

    @classmethod
    def from_dict(cls, doc):
        if doc.get("schema") != PHI_SCHEMA:
            raise SchemaVersionError(f"unsupported Phi schema {doc.get('schema')!r}")
        try:
            return cls(np.array(doc["poles"], dtype=float), np.array(doc["d"], dtype=float),
                       np.array(doc["coef_poles"], dtype=float), np.array(doc["coef_poly"], dtype=float),
                       float(doc["residual"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed Phi document: {exc}") from exc

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from exc


def phi_boundary_samples(n_samples, n_poles=80):
    """Points on the boundary of (-1, 1)^2 clustered toward (1, 0).

    Arclength distances from (1, 0) follow the pole law with fractional
    index, so the samples resolve the same scales as the poles.  Half the
    samples run counterclockwise, half clockwise.
    """
    m = n_samples // 2
    frac = np.arange(1, m + 1) * (n_poles / m)
    dist = 4.0 * np.exp(-4.0 * (np.sqrt(n_poles) - np.sqrt(frac)))
    s = np.concatenate([dist, 8.0 - dist[:-1]])  # arclength from (1,0), counterclockwise
    return _square_boundary_point(s)


def _square_boundary_point(s):
    """Counterclockwise arclength parametrization starting at (1, 0)."""
    s = np.mod(s, 8.0)
    pts = np.empty((len(s), 2))
    knots = [(0, 1, (1.0, 0.0), (0.0, 1.0)), (1, 3, (1.0, 1.0), (-1.0, 0.0)), (3, 5, (-1.0, 1.0), (0.0, -1.0)),
             (5, 7, (-1.0, -1.0), (1.0, 0.0)), (7, 8, (1.0, -1.0), (0.0, 1.0))]
    for lo, hi, start, direction in knots:
        mask = (s >= lo) & (s <= hi)
        pts[mask] = np.array(start) + (s[mask] - lo)[:, None] * np.array(direction)
    return pts


def phi_trace(pts):
    """Piecewise-linear Dirichlet data of the auxiliary problem."""
    x1, x2 = pts[:, 0], pts[:, 1]
    on_right = np.abs(x1 - 1.0) < 1e-14
    return np.where(on_right, 1.0 - np.abs(x2), 0.0)


def fit_phi(n_poles=80, n_poly=40, n_boundary_samples=2000, tol=1e-3):
    """Column-normalized least-squares fit of Phi to the hat trace."""
    poles = pole_locations(n_poles)
    d = poles - 1.0
    pts = phi_boundary_samples(n_boundary_samples, n_poles)
    w = pts[:, 0] + 1j * pts[:, 1]
    cols = np.hstack([(d / (w[:, None] - poles)).real, ((w[:, None] / 2.0) ** np.arange(n_poly + 1)).real])
    norms = np.linalg.norm(cols, axis=0)
    norms[norms == 0] = 1.0
    rhs = phi_trace(pts)
    q, r = np.linalg.qr(cols / norms)
    c = np.linalg.lstsq(r, q.T @ rhs, rcond=None)[0] / norms
    model = PhiModel(poles, d, c[:n_poles], c[n_poles:])
    check = _square_boundary_point(np.linspace(0.0, 8.0, 4001)[:-1])
    residual = max(np.max(np.abs(model(pts) - rhs)), np.max(np.abs(model(check) - phi_trace(check))))
    model.residual = float(residual)
    if not residual <= tol:
        raise FitDiverged(f"Phi boundary residual {residual:.3e} exceeds {tol:g}")
    return model


@dataclass(frozen=True)
class PhiTransform:
    """Complex-affine map T(w) = a w + b taking (1, 0) to a target vertex."""

    a: complex
    b: complex

    def inverse(self, z):
        return (z - self.b) / self.a


def _outward_bisector(vertices, t):
    nv = len(vertices)
    v = vertices[t]
    e_prev = vertices[(t - 1) % nv] - v
    e_next = vertices[(t + 1) % nv] - v
    e_prev = e_prev / np.hypot(*e_prev)
    e_next = e_next / np.hypot(*e_next)
    # interior angle: counterclockwise sweep from the next edge to the previous one
    theta = np.mod(np.arctan2(e_next[0] * e_prev[1] - e_next[1] * e_prev[0], e_next @ e_prev), 2 * np.pi)
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    inward = np.array([c * e_next[0] - s * e_next[1], s * e_next[0] + c * e_next[1]])
    return -inward


def phi_transform(polygon, target, poles, initial_scale=2.0, max_halvings=6):
    """Transform placing (1, 0) at vertex ``target`` with every pole outside ``polygon``."""
    v = polygon.vertices[target]
    direction = _outward_bisector(polygon.vertices, target)
    unit = complex(direction[0], direction[1])
    scale = initial_scale
    for _ in range(max_halvings + 1):
        a = scale * unit
        b = complex(v[0], v[1]) - a
        mapped = a * poles + b
        pts = np.stack([mapped.real, mapped.imag], axis=1)
        if np.all(polygon.signed_boundary_distance(pts) > 0.0):
            return PhiTransform(a, b)
        scale /= 2.0
    raise PoleInsideElement(f"no admissible pole scaling at vertex {target}")


@dataclass(frozen=True)
class HarmonicSpace:
    degree: int  # l-hat
    phi: PhiModel | None

    @property
    def dim(self):
        return 2 * self.degree + 4

    def transforms(self, polygon, j):
        """The three transforms attached to vertices j-1, j, j+1 of ``polygon``."""
        nv = polygon.nv
        return [phi_transform(polygon, (j + k) % nv, self.phi.poles) for k in (-1, 0, 1)]

    def evaluate(self, polygon, j, z, transforms=None):
        """Values (n, dim) and gradients (n, dim, 2) of all members at points ``z``.

        ``polygon`` and ``z`` live in the same (anchor) frame; the polynomial
        members use the reference half-width 1.
        """
        z = np.atleast_2d(np.asarray(z, dtype=float))
        w = z[:, 0] + 1j * z[:, 1]
        n = len(w)
        vals = np.empty((n, self.dim))
        grads = np.empty((n, self.dim, 2))
        vals[:, 0] = 1.0
        grads[:, 0] = 0.0
        power = np.ones_like(w)
        for ell in range(1, self.degree + 1):
            dpow = ell * power  # derivative of w^ell
            power = power * w
            vals[:, 2 * ell - 1] = power.real
            vals[:, 2 * ell] = power.imag
            # for analytic G: grad Re G = (Re G', -Im G'), grad Im G = (Im G', Re G')
            grads[:, 2 * ell - 1] = np.stack([dpow.real, -dpow.imag], axis=1)
            grads[:, 2 * ell] = np.stack([dpow.imag, dpow.real], axis=1)
        if transforms is None:
            transforms = self.transforms(polygon, j)
        for k, tr in enumerate(transforms):
            f, df = self.phi.complex_value(tr.inverse(w))
            dg = df / tr.a
            col = 2 * self.degree + 1 + k
            vals[:, col] = f.real
            grads[:, col] = np.stack([dg.real, -dg.imag], axis=1)
        return vals, grads
