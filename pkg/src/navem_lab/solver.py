"""Global Galerkin assembly, linear and Newton solves, and error norms.

A :class:`Discretization` holds, for every element, the basis values and
gradients at the assembly quadrature points.  These are computed once and
reused by every assembly (the Newton loop reassembles with new
coefficients only).  Elements with the same vertex count are stacked so
local forms are evaluated with one ``einsum`` per group.

Backends:

* ``"fem"``: P1 finite elements on a diagonal triangulation of the cells
  (no new vertices, so the unknowns are the same vertex values);
* ``"vem"``: lowest-order virtual elements, using projected basis
  functions plus the stabilization term;
* ``"h"``, ``"b"``, ``"p"``: a trained :class:`~navem_lab.basis.BasisBundle`.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from navem_lab.basis.bundle import BasisBundle
from navem_lab.basis.elements import triangle_hats
from navem_lab.errors import DegenerateGeometry, NewtonDiverged, SingularMatrix
from navem_lab.geometry import Polygon, polygon_area
from navem_lab.mesh import Mesh, build_dof_map
from navem_lab.problems import nonlinear_diffusion
from navem_lab.quadrature import polygon_gauss
from navem_lab.vemref import build_projector, galerkin_form, stabilization_scale, vem_errors

METHODS = ("vem", "fem", "h", "b", "p")
ASSEMBLY_ORDER = 4
ERROR_ORDER = 6


# -- element data ---------------------------------------------------------------

def triangulate_cells(mesh):
    """Ear-clipping triangulation of every cell, reusing the mesh vertices."""
    tris = []
    for cell in mesh.cells:
        ring = list(cell)
        while len(ring) > 3:
            for k in range(len(ring)):
                a, b, c = ring[k - 1], ring[k], ring[(k + 1) % len(ring)]
                tri = mesh.vertices[[a, b, c]]
                if polygon_area(tri) <= 1e-14 * Polygon(mesh.vertices[ring], validate=False).diameter ** 2:
                    continue
                others = [mesh.vertices[r] for r in ring if r not in (a, b, c)]
                if any(_in_triangle(p, tri) for p in others):
                    continue
                tris.append([a, b, c])
                del ring[k]
                break
            else:
                raise DegenerateGeometry(f"cannot triangulate cell {cell}")
        tris.append(ring)
    return Mesh(mesh.vertices, tris, mesh.boundary_vertex_flags, name=f"{mesh.name}_tri")


def _in_triangle(p, tri):
    a, b, c = tri
    d = [(b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]),
         (c[0] - b[0]) * (p[1] - b[1]) - (c[1] - b[1]) * (p[0] - b[0]),
         (a[0] - c[0]) * (p[1] - c[1]) - (a[1] - c[1]) * (p[0] - c[0])]
    return min(d) >= 0.0


@dataclass
class ElementGroup:
    """Stacked data of elements sharing a vertex count."""

    cells: np.ndarray  # (E, nv) vertex ids
    points: np.ndarray  # (E, n, 2)
    weights: np.ndarray  # (E, n)
    values: np.ndarray  # (E, nv, n)
    gradients: np.ndarray  # (E, nv, n, 2)
    stabilization: np.ndarray | None = None  # (E, nv, nv), VEM only


@dataclass
class Discretization:
    mesh: Mesh
    method: str
    groups: list
    dof_map: object
    bundle: BasisBundle | None = None
    prepare_s: float = 0.0
    _source_cache: dict = field(default_factory=dict, repr=False)


def _element_samples(method, polygon, bundle, order):
    rule = polygon_gauss(polygon, order)
    stab = None
    if method == "vem":
        proj = build_projector(polygon)
        vals = proj.projected_values(rule.points)
        grads = proj.projected_gradients(len(rule.weights))
        stab = proj.stabilization
    elif method == "fem":
        ev = triangle_hats(polygon, rule.points)
        vals, grads = ev.values, ev.gradients
    else:
        ev = bundle.evaluate(polygon, rule.points)
        vals, grads = ev.values, ev.gradients
    return rule.points, rule.weights, vals, grads, stab


def prepare(mesh, method, bundle=None, order=ASSEMBLY_ORDER, threads=1):
    """Evaluate the basis of ``method`` on every element of ``mesh``."""
    method = method.lower()
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    t0 = time.perf_counter()
    work_mesh = mesh
    if method == "fem":
        work_mesh = triangulate_cells(mesh)
    elif method in ("h", "b", "p"):
        if bundle is None:
            raise ValueError(f"method {method!r} needs a trained basis bundle")
        if bundle.strategy != method.upper():
            raise ValueError(f"bundle strategy {bundle.strategy} does not match method {method!r}")
        bundle.check_mesh(mesh)
    polygons = work_mesh.polygons

    def one(k):
        return _element_samples(method, polygons[k], bundle, order)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            samples = list(pool.map(one, range(len(polygons))))
    else:
        samples = [one(k) for k in range(len(polygons))]
    by_nv = {}
    for cell, s in zip(work_mesh.cells, samples):
        by_nv.setdefault(len(cell), []).append((cell, s))
    groups = []
    for nv in sorted(by_nv):
        items = by_nv[nv]
        stabs = [s[4] for _, s in items]
        groups.append(ElementGroup(
            np.array([c for c, _ in items], dtype=np.int64),
            np.stack([s[0] for _, s in items]), np.stack([s[1] for _, s in items]),
            np.stack([s[2] for _, s in items]), np.stack([s[3] for _, s in items]),
            None if stabs[0] is None else np.stack(stabs)))
    return Discretization(mesh, method, groups, build_dof_map(mesh), bundle, time.perf_counter() - t0)


# -- assembly -----------------------------------------------------------------

@dataclass
class LinearSystem:
    matrix: sp.csr_matrix  # free x free
    rhs: np.ndarray
    lift: np.ndarray  # Dirichlet values at boundary vertices, zero elsewhere
    dof_map: object


def _coefficients(problem, pts):
    E, n, _ = pts.shape
    flat = pts.reshape(-1, 2)
    D, beta, gamma = problem.coefficients(flat)
    return (np.asarray(D).reshape(E, n, 2, 2), np.asarray(beta).reshape(E, n, 2),
            np.asarray(gamma).reshape(E, n))


def _source(disc, problem, k, g):
    key = (id(problem), k)
    if key not in disc._source_cache:
        disc._source_cache[key] = problem.source(g.points.reshape(-1, 2)).reshape(g.weights.shape)
    return disc._source_cache[key]


def _scatter(disc, blocks, vectors):
    """Full-vertex sparse matrix and vector from per-group local arrays."""
    nvert = disc.mesh.n_vertices
    rows, cols, data = [], [], []
    rhs = np.zeros(nvert)
    for g, A, F in zip(disc.groups, blocks, vectors):
        nv = g.cells.shape[1]
        rows.append(np.repeat(g.cells, nv, axis=1).ravel())
        cols.append(np.tile(g.cells, (1, nv)).ravel())
        data.append(A.ravel())
        np.add.at(rhs, g.cells.ravel(), F.ravel())
    K = sp.coo_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(nvert, nvert)).tocsr()
    return K, rhs


def _eliminate(disc, K, F, lift):
    free = disc.dof_map.free_vertices
    Kf = K[free][:, free].tocsr()
    rhs = F[free] - K[free] @ lift
    return Kf, rhs


def _lift(disc, problem):
    lift = np.zeros(disc.mesh.n_vertices)
    bnd = disc.mesh.boundary_vertex_flags
    lift[bnd] = problem.dirichlet(disc.mesh.vertices[bnd])
    return lift


def assemble(disc, problem):
    """Linear system of a linear ``problem`` with Dirichlet rows eliminated."""
    if problem.nonlinear:
        raise ValueError("use newton_solve for the nonlinear family")
    blocks, vectors = [], []
    for k, g in enumerate(disc.groups):
        D, beta, gamma = _coefficients(problem, g.points)
        A = galerkin_form(g.values, g.gradients, g.weights, D, beta, gamma)
        if g.stabilization is not None:
            A = A + np.array([stabilization_scale(D[e], g.weights[e]) for e in range(len(D))])[:, None, None] \
                * g.stabilization
        f = _source(disc, problem, k, g)
        vectors.append(np.einsum("en,ejn->ej", g.weights * f, g.values))
        blocks.append(A)
    K, F = _scatter(disc, blocks, vectors)
    lift = _lift(disc, problem)
    Kf, rhs = _eliminate(disc, K, F, lift)
    return LinearSystem(Kf, rhs, lift, disc.dof_map)


# -- linear solves ----------------------------------------------------------------

def solve_sparse(A, b, rtol=1e-12):
    """Direct sparse solve with a conjugate-gradient fallback for symmetric matrices."""
    A = sp.csc_matrix(A)
    n = A.shape[0]
    if n == 0:
        return np.zeros(0)
    try:
        lu = spla.splu(A)
        piv = np.abs(lu.U.diagonal())
        if not piv.min() > 1e-13 * piv.max():
            raise SingularMatrix("matrix is numerically singular (tiny pivot)")
        x = lu.solve(b)
    except RuntimeError as exc:
        raise SingularMatrix(str(exc)) from None
    bn = np.linalg.norm(b)
    if np.all(np.isfinite(x)) and np.linalg.norm(A @ x - b) <= max(rtol * bn, 1e-300) * 1e2:
        return x
    if abs(A - A.T).max() <= 1e-12 * abs(A).max():
        x, info = spla.cg(A, b, x0=x if np.all(np.isfinite(x)) else None, rtol=rtol, maxiter=10 * n)
        if info == 0:
            return x
    raise SingularMatrix("linear solve did not reach the requested residual")


def solve_linear(system):
    """Vertex values: Dirichlet lift plus the solved free values."""
    u = system.lift.copy()
    u[system.dof_map.free_vertices] = solve_sparse(system.matrix, system.rhs)
    return u


# -- Newton -------------------------------------------------------------------

@dataclass
class NewtonConfig:
    rel_residual: float = 1e-8  # alpha_{r,f}
    abs_residual: float = 1e-12  # alpha_{a,f}
    abs_step: float = 1e-10  # alpha_{a,delta}
    max_iterations: int = 50

    def __post_init__(self):
        if min(self.rel_residual, self.abs_residual, self.abs_step) <= 0 or self.max_iterations < 1:
            raise ValueError("Newton tolerances must be positive")


@dataclass
class NewtonResult:
    values: np.ndarray
    iterations: int
    residuals: list
    steps: list
    iteration_s: list
    total_s: float

    @property
    def average_time_per_iteration(self):
        return self.total_s / max(self.iterations, 1)


def _nonlinear_system(disc, problem, u):
    """Residual vector and Jacobian (both full-vertex) of the nonlinear problem at ``u``."""
    blocks, vectors = [], []
    for k, g in enumerate(disc.groups):
        uE = u[g.cells]  # (E, nv)
        uh = np.einsum("ej,ejn->en", uE, g.values)
        guh = np.einsum("ej,ejnk->enk", uE, g.gradients)
        d, dd = nonlinear_diffusion(uh, problem.lam)
        w = g.weights
        f = _source(disc, problem, k, g)
        gg = np.einsum("enk,ejnk->ejn", guh, g.gradients)  # grad u_h . grad phi_j
        R = np.einsum("en,ejn->ej", w * d, gg) - np.einsum("en,ejn->ej", w * f, g.values)
        J = np.einsum("en,eink,ejnk->eji", w * d, g.gradients, g.gradients)
        J += np.einsum("en,ein,ejn->eji", w * dd, g.values, gg)
        if g.stabilization is not None:
            wsum = w.sum(axis=1)
            s = np.sum(w * d, axis=1) / wsum
            ds = np.einsum("en,ein->ei", w * dd, g.values) / wsum[:, None]
            Su = np.einsum("eji,ei->ej", g.stabilization, uE)
            R += s[:, None] * Su
            J += s[:, None, None] * g.stabilization + np.einsum("ej,ei->eji", Su, ds)
        blocks.append(J)
        vectors.append(R)
    return _scatter(disc, blocks, vectors)


def newton_solve(disc, problem, config=None):
    """Newton iteration from the zero initial guess (Dirichlet values imposed).

    Stops when both ``||r_m|| <= rel * ||r_0|| + abs`` and ``||delta_m|| <=
    step_tol`` hold, where ``r_m`` is the residual at the iterate that the
    update ``delta_m`` is computed from.
    """
    if not problem.nonlinear:
        raise ValueError("newton_solve needs the nonlinear problem family")
    config = config or NewtonConfig()
    free = disc.dof_map.free_vertices
    u = _lift(disc, problem)
    residuals, steps, times = [], [], []
    t_start = time.perf_counter()
    r0 = None
    for m in range(config.max_iterations):
        t0 = time.perf_counter()
        J, R = _nonlinear_system(disc, problem, u)
        r = R[free]
        rn = float(np.linalg.norm(r))
        if not np.isfinite(rn):
            raise NewtonDiverged(f"non-finite residual at iteration {m}")
        r0 = rn if r0 is None else r0
        delta = solve_sparse(J[free][:, free], -r)
        u[free] += delta
        dn = float(np.linalg.norm(delta))
        residuals.append(rn)
        steps.append(dn)
        times.append(time.perf_counter() - t0)
        if rn <= config.rel_residual * r0 + config.abs_residual and dn <= config.abs_step:
            return NewtonResult(u, m + 1, residuals, steps, times, time.perf_counter() - t_start)
    raise NewtonDiverged(f"Newton did not converge in {config.max_iterations} iterations "
                         f"(last residual {residuals[-1]:.3e}, last step {steps[-1]:.3e})")


# -- errors -------------------------------------------------------------------------

def neural_errors(mesh, bundle, values, exact_u, exact_grad, order=ERROR_ORDER):
    """L2 errors of ``u_h = sum u_i phi_i`` and its closed-form gradient.

    ``bundle=None`` selects the P1 hats of the diagonal triangulation.
    """
    if bundle is None:
        mesh = triangulate_cells(mesh)
    else:
        bundle.check_mesh(mesh)
    e0 = e1 = 0.0
    for cell, polygon in zip(mesh.cells, mesh.polygons):
        rule = polygon_gauss(polygon, order)
        ev = triangle_hats(polygon, rule.points) if bundle is None else bundle.evaluate(polygon, rule.points)
        uE = values[cell]
        uh = uE @ ev.values
        guh = np.einsum("j,jnk->nk", uE, ev.gradients)
        e0 += np.sum(rule.weights * (exact_u(rule.points) - uh) ** 2)
        e1 += np.sum(rule.weights * np.sum((exact_grad(rule.points) - guh) ** 2, axis=1))
    return float(np.sqrt(e0)), float(np.sqrt(e1))


def compute_errors(disc, values, exact):
    """Errors in the norm appropriate to the backend (projected for VEM)."""
    if disc.method == "vem":
        return vem_errors(disc.mesh, values, exact.u, exact.grad)
    return neural_errors(disc.mesh, disc.bundle, values, exact.u, exact.grad)
