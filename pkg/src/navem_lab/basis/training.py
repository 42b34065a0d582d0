"""Two-phase training (Adam, then limited-memory quasi-Newton) per polygon class."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from navem_lab.basis.bundle import BasisBundle
from navem_lab.basis.harmonic import HarmonicSpace, fit_phi
from navem_lab.basis.losses import BResidualLoss, HGradientLoss, HValueLoss, PGradientLoss, _BoundaryBatch
from navem_lab.errors import NonFinite
from navem_lab.neural import AdamState, adam_step, init_glorot, lr_schedule, quasi_newton_run


@dataclass
class Architecture:
    n_layers: int = 5  # affine layers, the last one without activation
    width: int = 50

    def dims(self, n_in, n_out):
        return [n_in] + [self.width] * (self.n_layers - 1) + [n_out]


@dataclass
class Protocol:
    adam_epochs: int = 2000
    qn_epochs: int = 10000
    lr0: float = 1e-2
    lr_decay: float = 1e-1
    gtol: float = 1e-10
    seed: int = 0
    degree: int = 20  # harmonic degree for H
    alg1_n: int = 10
    edge_count: int = 50


PRESETS = {
    "full": (Architecture(5, 50), Protocol()),
    "desk": (Architecture(3, 30), Protocol(adam_epochs=500, qn_epochs=500, degree=8)),
}


@dataclass
class LossRecord:
    epoch: int
    loss: float
    wall_s: float
    phase: str
    net: str


@dataclass
class TrainingResult:
    bundle: BasisBundle
    history: list = field(default_factory=list)

    def write_history(self, path, timings=True):
        """CSV of the loss history; ``timings=False`` writes 0 in the wall-clock column."""
        lines = ["epoch,loss,wall_s,phase,net"]
        for r in self.history:
            wall = f"{r.wall_s:.6f}" if timings else "0"
            lines.append(f"{r.epoch},{r.loss!r},{wall},{r.phase},{r.net}")
        Path(path).write_text("\n".join(lines) + "\n")


def _save_checkpoint(path, net, theta, adam, epoch, history):
    doc = {"net": net, "epoch": epoch, "theta": theta.tolist(), "m": adam.m.tolist(), "v": adam.v.tolist(),
           "step": adam.step, "history": [asdict(r) for r in history]}
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(json.dumps(doc))
    tmp.replace(path)


def _load_checkpoint(path, net):
    path = Path(path)
    if not path.exists():
        return None
    doc = json.loads(path.read_text())
    if doc["net"] != net:
        return None
    adam = AdamState(np.array(doc["m"]), np.array(doc["v"]), int(doc["step"]))
    return np.array(doc["theta"]), adam, int(doc["epoch"]), [LossRecord(**r) for r in doc["history"]]


def optimize(model, loss, protocol, history, net="main", checkpoint=None, checkpoint_every=50, log=None):
    """Adam with exponential learning-rate decay, then quasi-Newton, in place on ``model``.

    Losses are appended to ``history`` (one record per Adam epoch and per
    accepted quasi-Newton step).  With ``checkpoint`` the Adam phase saves
    its state periodically and resumes from it when present; the
    quasi-Newton phase is deterministic given its start, so resuming
    reproduces the uninterrupted run.
    """
    theta = model.get_params()
    adam = AdamState.zeros(len(theta))
    start = 0
    offset = history[-1].epoch + 1 if history else 0
    if checkpoint is not None:
        state = _load_checkpoint(checkpoint, net)
        if state is not None:
            theta, adam, start, saved = state
            history[:] = saved
            offset = saved[-1].epoch + 1 - start if saved else 0
    clock = time.perf_counter() - (history[-1].wall_s if history else 0.0)

    def fun(t):
        model.set_params(t)
        return loss.value_and_grad(model)

    last_good = theta.copy()
    try:
        for epoch in range(start, protocol.adam_epochs):
            f, g = fun(theta)
            history.append(LossRecord(offset + epoch, f, time.perf_counter() - clock, "adam", net))
            if log is not None:
                log(history[-1])
            last_good = theta.copy()
            theta = adam_step(adam, theta, g, lr_schedule(epoch, protocol.adam_epochs, protocol.lr0, protocol.lr_decay))
            if checkpoint is not None and (epoch + 1) % checkpoint_every == 0:
                _save_checkpoint(checkpoint, net, theta, adam, epoch + 1, history)
        if checkpoint is not None:
            _save_checkpoint(checkpoint, net, theta, adam, protocol.adam_epochs, history)
        base = offset + protocol.adam_epochs

        def on_step(k, x, f):
            history.append(LossRecord(base + k - 1, f, time.perf_counter() - clock, "qn", net))
            if log is not None:
                log(history[-1])

        res = quasi_newton_run(fun, theta, protocol.qn_epochs, protocol.gtol, callback=on_step)
        theta = res.theta
    except NonFinite:
        model.set_params(last_good)
        raise
    model.set_params(theta)
    final, _ = loss.value_and_grad(model, with_grad=False)
    if not np.isfinite(final):
        raise NonFinite("training ended with a non-finite loss")
    return model


def train_strategy(strategy, polygons, arch=None, protocol=None, phi=None, checkpoint_dir=None, log=None):
    """Train one polygon class for ``strategy``; returns a one-class bundle and its history."""
    arch = arch or Architecture()
    protocol = protocol or Protocol()
    if not polygons:
        raise ValueError("empty training dataset")
    classes = {p.class_tag for p in polygons}
    if len(classes) != 1:
        raise ValueError(f"dataset mixes polygon classes: {sorted(c.tag for c in classes)}")
    pc = classes.pop()
    nv = pc.vertex_count
    meta = {"strategy": strategy, "polygon_class": {"nv": nv, "convex": pc.convex}}
    history = []
    ckpt = (lambda name: None) if checkpoint_dir is None else \
        (lambda name: Path(checkpoint_dir) / f"{strategy}_{pc.tag}_{name}.ckpt.json")
    if strategy == "H":
        phi = phi if phi is not None else fit_phi()
        space = HarmonicSpace(protocol.degree, phi)
        boundary = _BoundaryBatch(space, polygons, protocol.edge_count)
        value_net = init_glorot(arch.dims(2 * (nv - 1), space.dim), protocol.seed, **meta)
        optimize(value_net, HValueLoss(space, polygons, batch=boundary), protocol, history, "value",
                 ckpt("value"), log=log)
        grad_net = value_net.copy()
        head = init_glorot([arch.width, space.dim - 1], protocol.seed + 1)
        grad_net.weights[-1], grad_net.biases[-1] = head.weights[0], head.biases[0]
        optimize(grad_net, HGradientLoss(space, polygons, batch=boundary), protocol, history, "gradient",
                 ckpt("gradient"), log=log)
        value_net.companion = grad_net
        return TrainingResult(BasisBundle("H", {pc: value_net}, phi), history)
    if strategy not in ("B", "P"):
        raise ValueError(f"unknown strategy {strategy!r}")
    loss_cls = BResidualLoss if strategy == "B" else PGradientLoss
    net = init_glorot(arch.dims(2 * nv, 1), protocol.seed, **meta)
    optimize(net, loss_cls(polygons, protocol.alg1_n), protocol, history, "main", ckpt("main"), log=log)
    return TrainingResult(BasisBundle(strategy, {pc: net}), history)


def merge_bundles(bundles):
    """Union of one-class bundles of the same strategy."""
    bundles = list(bundles)
    merged = BasisBundle(bundles[0].strategy, {}, bundles[0].phi)
    for b in bundles:
        if b.strategy != merged.strategy:
            raise ValueError("cannot merge bundles of different strategies")
        merged.models.update(b.models)
    return merged
