"""One test per acceptance criterion; each prints a PASS/FAIL line with its measurements."""

import time

import numpy as np
import pytest

from _helpers import POLYGON_KINDS, boundary_points, fd_gradient, interior_point, random_polygon, rel_error
from conftest import ACCEPTANCE_LINES
from navem_lab.basis import BasisBundle, train_strategy
from navem_lab.basis.datasets import dataset_random_quads
from navem_lab.basis.elements import bp_evaluate
from navem_lab.basis.encoding import element_frame
from navem_lab.basis.harmonic import HarmonicSpace, fit_phi
from navem_lab.basis.losses import (
    TEST_ALG1_N,
    BResidualLoss,
    HGradientLoss,
    HValueLoss,
    PGradientLoss,
    evaluate_metrics,
)
from navem_lab.basis.training import PRESETS
from navem_lab.cli import newton_statistics
from navem_lab.errors import MissingModel
from navem_lab.geometry import Polygon, PolygonClass, polygon_jets
from navem_lab.mesh import FIXTURES, gen_triangle, load_fixture, load_mesh, mesh_to_json, save_mesh
from navem_lab.neural import forward, init_glorot, load_model, save_model, spatial_jet
from navem_lab.problems import named_problem
from navem_lab.quadrature import alg1_points, polygon_sample_points
from navem_lab.solver import assemble, compute_errors, newton_solve, prepare, solve_linear
from navem_lab.svg import fitted_slope

QUAD_CLASSES = (PolygonClass(4, True), PolygonClass(4, False))


def report(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def fd_laplacian(f, x, h=1e-4):
    """Five-point Laplacian with one Richardson step (fourth order in h)."""
    def lap(s):
        nb = sum(np.asarray(f(x + d * e)) for e in np.eye(2) for d in (s, -s))
        return (nb - 4 * np.asarray(f(x))) / s ** 2
    return (4 * lap(h) - lap(2 * h)) / 3


def random_bundle(strategy, classes, seed=0, phi=None, degree=2, output_scale=5.0):
    models = {}
    for k, pc in enumerate(classes):
        nv = pc.vertex_count
        if strategy == "H":
            net = init_glorot([2 * (nv - 1), 8, 2 * degree + 4], seed + k)
            net.companion = init_glorot([2 * (nv - 1), 8, 2 * degree + 3], seed + 50 + k)
        else:
            net = init_glorot([2 * nv, 8, 8, 1], seed + k)
            net.weights[-1] *= output_scale
        models[pc] = net
    return BasisBundle(strategy, models, phi)


# -- 1 ---------------------------------------------------------------------------


def test_criterion_1_geometry_invariants():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = dict(bubble_boundary=0.0, delta=0.0, unity=0.0, trace=0.0)
    min_interior = np.inf
    for kind in POLYGON_KINDS:
        for _ in range(100):
            p = random_polygon(kind, rng)
            pts, edge, s = boundary_points(p, 200, rng)
            b, t = polygon_jets(p, pts, derivatives=False)
            worst["bubble_boundary"] = max(worst["bubble_boundary"], np.max(np.abs(b.value)))
            hat = np.zeros((200, p.nv))
            rows = np.arange(200)
            hat[rows, edge] = 1 - s
            hat[rows, (edge + 1) % p.nv] = s
            worst["trace"] = max(worst["trace"], np.max(np.abs(t.value - hat)))
            inner = polygon_sample_points(p, TEST_ALG1_N)
            bi, ti = polygon_jets(p, inner, derivatives=False)
            min_interior = min(min_interior, bi.value.min())
            _, tv = polygon_jets(p, p.vertices, derivatives=False)
            worst["delta"] = max(worst["delta"], np.max(np.abs(tv.value - np.eye(p.nv))))
            worst["unity"] = max(worst["unity"], np.max(np.abs(ti.value.sum(axis=-1) - 1)),
                                 np.max(np.abs(t.value.sum(axis=-1) - 1)))
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-12 and min_interior > 0 and elapsed <= 30
    report(1, ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
           + f", min interior bubble {min_interior:.2e}, {elapsed:.1f} s (600 polygons)")


# -- 2 ---------------------------------------------------------------------------


def test_criterion_2_derivative_oracles():
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    worst = {"geometry grad": 0.0, "geometry lap": 0.0, "harmonic grad": 0.0, "harmonic lap": 0.0,
             "network grad": 0.0, "network lap": 0.0, "B basis lap": 0.0}
    for k in range(100):
        p = random_polygon(POLYGON_KINDS[k % len(POLYGON_KINDS)], rng)
        x = interior_point(p, rng)

        def fields(y, p=p):
            b, t = polygon_jets(p, y[None], derivatives=False)
            return np.concatenate([b.value, t.value[0]])

        b, t = polygon_jets(p, x[None])
        grads = np.vstack([b.gradient, t.gradient[0]])
        laps = np.concatenate([b.laplacian, t.laplacian[0]])
        worst["geometry grad"] = max(worst["geometry grad"], rel_error(grads, fd_gradient(fields, x)))
        worst["geometry lap"] = max(worst["geometry lap"], rel_error(laps, fd_laplacian(fields, x)))

    phi = fit_phi()
    space = HarmonicSpace(6, phi)
    for k in range(100):
        q = element_frame(random_polygon(POLYGON_KINDS[k % 5], rng)).local
        j = int(rng.integers(q.nv))
        tr = space.transforms(q, j)
        x = interior_point(q, rng, clearance=0.1)
        vals, grads = space.evaluate(q, j, x[None], tr)

        def members(y, q=q, j=j, tr=tr):
            return space.evaluate(q, j, y[None], tr)[0][0]

        worst["harmonic grad"] = max(worst["harmonic grad"], rel_error(grads[0], fd_gradient(members, x)))
        hess_scale = np.max(np.abs(fd_gradient(lambda y: space.evaluate(q, j, y[None], tr)[1][0], x)))
        # members are harmonic by construction: the analytic Laplacian is 0
        worst["harmonic lap"] = max(worst["harmonic lap"],
                                    np.max(np.abs(fd_laplacian(members, x))) / max(hess_scale, 1.0))

    for k in range(100):
        net = init_glorot([4, 7, 7, 2], seed=1000 + k)
        x4 = rng.normal(size=4)

        def out(y, net=net, x4=x4):
            return forward(net, np.r_[y, x4[2:]][None])[0]

        jet = spatial_jet(net, x4[None])
        worst["network grad"] = max(worst["network grad"], rel_error(jet.d_dx[0], fd_gradient(out, x4[:2])))
        worst["network lap"] = max(worst["network lap"], rel_error(jet.laplacian_x[0], fd_laplacian(out, x4[:2])))

    for k in range(100):
        p = random_polygon(("convex_quad", "concave_quad", "pentagon")[k % 3], rng)
        bundle = random_bundle("B", [p.class_tag], seed=k)
        frame = element_frame(p)
        model = bundle.model_for(p.class_tag)
        xi = frame.to_local(interior_point(p, rng))
        lap = bp_evaluate(model, "B", frame, xi[None], laplacian=True).laplacians[:, 0]

        def vals(y, model=model, frame=frame):
            return bp_evaluate(model, "B", frame, y[None], derivatives=False).values[:, 0]

        worst["B basis lap"] = max(worst["B basis lap"], rel_error(lap, fd_laplacian(vals, xi)))
    elapsed = time.perf_counter() - t0
    first = max(v for k, v in worst.items() if k.endswith("grad"))
    second = max(v for k, v in worst.items() if k.endswith("lap"))
    ok = first <= 1e-6 and second <= 1e-5 and elapsed <= 60
    report(2, ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f", {elapsed:.1f} s")


# -- 3 ---------------------------------------------------------------------------


def _weight_fd(loss, net, h=1e-6):
    theta = net.get_params()
    g = np.empty_like(theta)
    for k in range(len(theta)):
        f = []
        for sign in (1, -1):
            t = theta.copy()
            t[k] += sign * h
            net.set_params(t)
            f.append(loss.value_and_grad(net, with_grad=False)[0])
        g[k] = (f[0] - f[1]) / (2 * h)
    net.set_params(theta)
    return g


def test_criterion_3_loss_weight_gradients():
    tri = Polygon([[0.0, 0.0], [1.0, 0.1], [0.3, 0.8]])
    space = HarmonicSpace(1, fit_phi())

    def three_points(local):
        return polygon_sample_points(local, 0, with_weights=True)

    # the smallest symmetric edge rule: two points per edge
    hbatch = HValueLoss(space, [tri], edge_count=2).batch
    cases = {
        "H value": (HValueLoss(space, [tri], batch=hbatch), init_glorot([4, 8, 8, 6], seed=1)),
        "H gradient": (HGradientLoss(space, [tri], batch=hbatch), init_glorot([4, 8, 8, 5], seed=2)),
        "B residual": (BResidualLoss([tri], rule=three_points), init_glorot([6, 8, 8, 1], seed=3)),
        "P gradient": (PGradientLoss([tri], rule=three_points), init_glorot([6, 8, 8, 1], seed=4)),
    }
    errs = {}
    for name, (loss, net) in cases.items():
        _, g = loss.value_and_grad(net)
        fd = _weight_fd(loss, net)
        errs[name] = float(np.linalg.norm(g - fd) / np.linalg.norm(fd))
    points = {"H": hbatch.w.shape[1], "B/P": len(three_points(element_frame(tri).local))}
    report(3, max(errs.values()) <= 1e-5, ", ".join(f"{k} {v:.1e}" for k, v in errs.items())
           + f" (samples per pair: {points})")


# -- 4 ---------------------------------------------------------------------------


def test_criterion_4_algorithm_1():
    counts = all(len(alg1_points(n)) == (n + 1) * (n + 2) // 2 for n in range(31))
    single = alg1_points(0, 1e-12)[0]
    interior = all(np.all(alg1_points(n) > 0) and np.all(alg1_points(n).sum(axis=1) < 1) for n in range(31))
    ok = counts and np.all(np.abs(single - 0.4330127) <= 1e-6) and interior
    report(4, ok, f"counts {counts}, N=0 point ({single[0]:.7f}, {single[1]:.7f}), strictly interior {interior}")


# -- 5 ---------------------------------------------------------------------------


def _shared_edges(mesh):
    owners = {}
    for c, cell in enumerate(mesh.cells):
        for i in range(len(cell)):
            owners.setdefault(frozenset((cell[i], cell[(i + 1) % len(cell)])), []).append(c)
    return [(tuple(e), cs) for e, cs in owners.items() if len(cs) == 2]


def test_criterion_5_exact_continuity():
    worst, n_edges = 0.0, 0
    s = np.linspace(0, 1, 23)
    for strategy in ("B", "P"):
        for name in ("voronoi_1", "quadcc_coarse", "hanging"):
            mesh = load_fixture(name)
            classes = {p.class_tag for p in mesh.polygons if p.nv > 3}
            bundle = random_bundle(strategy, sorted(classes, key=lambda c: c.tag), seed=11)
            for (a, b), (c1, c2) in _shared_edges(mesh):
                pts = mesh.vertices[a] + s[:, None] * (mesh.vertices[b] - mesh.vertices[a])
                sides = []
                for c in (c1, c2):
                    full = np.zeros((mesh.n_vertices, len(s)))
                    full[mesh.cells[c]] = bundle.evaluate(mesh.polygons[c], pts, derivatives=False).values
                    sides.append(full)
                worst = max(worst, np.max(np.abs(sides[0] - sides[1])))
                n_edges += 1
    report(5, worst <= 1e-12, f"max jump {worst:.1e} over {n_edges} shared edges (B and P, random weights)")


# -- 6 ---------------------------------------------------------------------------


def test_criterion_6_fem_patch_and_rates():
    t0 = time.perf_counter()
    patch = 0.0
    for name in FIXTURES:
        m = load_fixture(name)
        prob = named_problem("dar-linear")
        u = solve_linear(assemble(prepare(m, "fem"), prob))
        patch = max(patch, np.max(np.abs(u - prob.exact.u(m.vertices))))
    prob = named_problem("dar")
    h, e0, e1 = [], [], []
    for n in (8, 16, 32, 64):
        m = gen_triangle(n)
        disc = prepare(m, "fem")
        a, b = compute_errors(disc, solve_linear(assemble(disc, prob)), prob.exact)
        h.append(m.h)
        e0.append(a)
        e1.append(b)
    s0, s1 = fitted_slope(h, e0), fitted_slope(h, e1)
    elapsed = time.perf_counter() - t0
    ok = patch <= 1e-10 and 1.8 <= s0 <= 2.2 and 0.8 <= s1 <= 1.2 and elapsed <= 120
    report(6, ok, f"patch {patch:.1e}, err0 slope {s0:.3f}, errgrad slope {s1:.3f} (n = 8..64), {elapsed:.1f} s")


# -- 7 ---------------------------------------------------------------------------


def test_criterion_7_vem_baseline():
    stiff = 0.0
    for n in (1, 3, 6):
        m = gen_triangle(n)
        prob = named_problem("poisson")
        a = assemble(prepare(m, "vem"), prob).matrix
        b = assemble(prepare(m, "fem"), prob).matrix
        stiff = max(stiff, abs(a - b).max() if a.nnz else 0.0)
    patch = 0.0
    for name in FIXTURES:
        m = load_fixture(name)
        prob = named_problem("poisson-linear")
        u = solve_linear(assemble(prepare(m, "vem"), prob))
        patch = max(patch, np.max(np.abs(u - prob.exact.u(m.vertices))))
    report(7, stiff <= 1e-12 and patch <= 1e-10, f"VEM-FEM stiffness gap {stiff:.1e}, VEM patch {patch:.1e}")


# -- 8 ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def desk_p_convex():
    quads = dataset_random_quads(50, "convex", seed=1)
    arch, proto = PRESETS["desk"]
    t0 = time.perf_counter()
    result = train_strategy("P", quads, arch, proto)
    return quads, result, time.perf_counter() - t0


def test_criterion_8_desk_training(desk_p_convex):
    quads, result, train_s = desk_p_convex
    t0 = time.perf_counter()
    adam = [r.loss for r in result.history if r.phase == "adam"]
    final = [r for r in result.history if r.phase == "qn"][-1].loss
    loss_ratio = adam[0] / final
    arch, proto = PRESETS["desk"]
    init_net = init_glorot(arch.dims(8, 1), proto.seed)
    before = evaluate_metrics(BasisBundle("P", {QUAD_CLASSES[0]: init_net}), quads)[1]
    after = evaluate_metrics(result.bundle, quads)[1]
    mesh = load_fixture("quad_convex_16")
    prob = named_problem("dar")
    errs = {}
    for method, bundle in (("vem", None), ("p", result.bundle)):
        disc = prepare(mesh, method, bundle)
        errs[method] = compute_errors(disc, solve_linear(assemble(disc, prob)), prob.exact)[1]
    elapsed = train_s + time.perf_counter() - t0
    ok = loss_ratio >= 10 and np.isfinite(errs["p"]) and errs["p"] <= 2 * errs["vem"] and elapsed <= 600
    report(8, ok, f"training loss {adam[0]:.3e} -> {final:.3e} ({loss_ratio:.1f}x); "
                  f"norm-form metric {before:.3e} -> {after:.3e} ({before / after:.1f}x, reported); "
                  f"errgrad P {errs['p']:.3f} vs VEM {errs['vem']:.3f}; {elapsed:.0f} s")


# -- 9 ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def desk_bundles():
    arch, proto = PRESETS["desk"]
    phi = fit_phi()
    bundles = {}
    for strategy in ("H", "B", "P"):
        models = {}
        for pc in QUAD_CLASSES:
            quads = dataset_random_quads(10, "convex" if pc.convex else "concave", seed=2)
            models.update(train_strategy(strategy, quads, arch, proto, phi=phi).bundle.models)
        bundles[strategy] = BasisBundle(strategy, models, phi if strategy == "H" else None)
    return bundles


def test_criterion_9_nonlinear_newton(desk_bundles):
    mesh = load_fixture("quadcc_coarse")
    iters, stats, ok = {}, [], True
    for lam in (1.0, 0.5, 0.1):
        prob = named_problem("nonlinear", lam)
        res = {}
        for method in ("vem", "fem", "h", "b", "p"):
            disc = prepare(mesh, method, desk_bundles.get(method.upper()))
            try:
                res[method] = newton_solve(disc, prob)
            except Exception as exc:  # noqa: BLE001 - any failure is a criterion failure
                print(f"lam {lam} {method}: {exc}")
                ok = False
                continue
        iters[lam] = {m: r.iterations for m, r in res.items()}
        ok &= all(iters[lam].get(m, 99) <= 15 for m in ("vem", "fem", "p"))
        neural = [iters[lam].get(m) for m in ("h", "b", "p")]
        ok &= None not in neural and max(neural) - min(neural) <= 1
        for m in ("h", "b", "p", "fem"):
            if "vem" in res and m in res:
                s = newton_statistics(res["vem"], res[m])
                stats.append(f"lam {lam} {m}: r_T {s['r_T']:.2f} r_m {s['r_m']:.2f} r_ATI {s['r_ATI']:.2f}")
    for line in stats:
        print(line)
    report(9, ok, "iterations " + "; ".join(f"lam {lam}: " + " ".join(f"{m}={k}" for m, k in d.items())
                                            for lam, d in iters.items()) + f" (Newton time ratios emitted: {len(stats)} rows)")


# -- 10 --------------------------------------------------------------------------


def test_criterion_10_serialization(tmp_path):
    net = init_glorot([8, 30, 30, 1], seed=5, strategy="P", polygon_class={"nv": 4, "convex": True})
    rng = np.random.default_rng(0)
    net.set_params(rng.normal(size=net.n_params) * np.exp(rng.uniform(-30, 30, net.n_params)))
    save_model(net, tmp_path / "a.json")
    back = load_model(tmp_path / "a.json")
    save_model(back, tmp_path / "b.json")
    model_ok = (np.array_equal(back.get_params(), net.get_params())
                and (tmp_path / "a.json").read_text() == (tmp_path / "b.json").read_text())
    mesh_ok = True
    for name in FIXTURES:
        m = load_fixture(name)
        save_mesh(m, tmp_path / "m.json")
        m2 = load_mesh(tmp_path / "m.json")
        mesh_ok &= np.array_equal(m.vertices, m2.vertices) and m.cells == m2.cells
        mesh_ok &= mesh_to_json(m2) == (tmp_path / "m.json").read_text()
    bundle = BasisBundle("P", {QUAD_CLASSES[0]: net})
    try:
        bundle.model_for(QUAD_CLASSES[1])
        loud = False
    except MissingModel as exc:
        loud = "4_concave" in str(exc)
    try:
        prepare(load_fixture("quadcc_coarse"), "p", bundle)
        loud = False
    except MissingModel:
        pass
    report(10, model_ok and mesh_ok and loud, f"model bit-exact {model_ok}, meshes bit-exact {mesh_ok}, "
                                              f"uncovered class raises MissingModel {loud}")
