"""Trained basis bundles: per-class models for one strategy plus pointwise evaluation."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from navem_lab.basis.elements import BasisEval, bp_evaluate, h_evaluate, triangle_hats
from navem_lab.basis.encoding import element_frame
from navem_lab.basis.harmonic import HarmonicSpace, PhiModel
from navem_lab.errors import MissingModel, ParseError
from navem_lab.geometry import PolygonClass
from navem_lab.neural import load_model, save_model

STRATEGIES = ("H", "B", "P")
_FILE_RE = re.compile(r"^([HBP])_(\d+)_(convex|concave)\.json$")


def model_filename(strategy, polygon_class):
    return f"{strategy}_{polygon_class.tag}.json"


@dataclass
class BasisBundle:
    strategy: str
    models: dict = field(default_factory=dict)  # PolygonClass -> Mlp (H: value net with gradient companion)
    phi: PhiModel | None = None
    _frames: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")

    @property
    def space(self):
        return None if self.phi is None else HarmonicSpace(self.degree, self.phi)

    @property
    def degree(self):
        for m in self.models.values():
            return (m.dims[-1] - 4) // 2
        return 0

    def covers(self, polygon_class):
        return polygon_class.vertex_count == 3 or polygon_class in self.models

    def model_for(self, polygon_class):
        try:
            return self.models[polygon_class]
        except KeyError:
            have = ", ".join(sorted(c.tag for c in self.models)) or "none"
            raise MissingModel(f"{self.strategy} bundle has no model for class {polygon_class.tag} "
                               f"(available: {have})") from None

    def check_mesh(self, mesh):
        """Fail loudly if any cell class of ``mesh`` is not covered."""
        missing = sorted({p.class_tag.tag for p in mesh.polygons if not self.covers(p.class_tag)})
        if missing:
            raise MissingModel(f"{self.strategy} bundle lacks models for classes: {', '.join(missing)}")

    def evaluate_local(self, frame, xi, derivatives=True):
        """Basis on the local frame of an element (gradients w.r.t. xi)."""
        cls = frame.polygon.class_tag
        if cls.vertex_count == 3:
            return triangle_hats(frame.local, xi)
        model = self.model_for(cls)
        if self.strategy == "H":
            cache = self._frames.setdefault(frame.polygon.vertices.tobytes(), {})
            return h_evaluate(model, model.companion, self.space, frame, xi, cache)
        return bp_evaluate(model, self.strategy, frame, xi, derivatives)

    def evaluate(self, polygon, x, derivatives=True):
        """Basis values and physical gradients at physical points ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if polygon.nv == 3:
            return triangle_hats(polygon, x)
        frame = element_frame(polygon)
        ev = self.evaluate_local(frame, frame.to_local(x), derivatives)
        return ev.scaled(frame.scale) if derivatives else BasisEval(ev.values)

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for cls, model in sorted(self.models.items(), key=lambda kv: kv[0].tag):
            save_model(model, directory / model_filename(self.strategy, cls))
        if self.strategy == "H" and self.phi is not None:
            self.phi.save(directory / "phi_model.json")

    @classmethod
    def load(cls, directory, strategy):
        directory = Path(directory)
        if not directory.is_dir():
            raise MissingModel(f"model directory {directory} does not exist")
        models = {}
        for path in sorted(directory.glob(f"{strategy}_*.json")):
            m = _FILE_RE.match(path.name)
            if not m:
                continue
            pc = PolygonClass(int(m.group(2)), m.group(3) == "convex")
            model = load_model(path)
            if model.strategy != strategy or model.polygon_class != {"nv": pc.vertex_count, "convex": pc.convex}:
                raise ParseError(f"{path.name}: metadata does not match the file name")
            if strategy == "H" and model.companion is None:
                raise ParseError(f"{path.name}: H model lacks its gradient network")
            models[pc] = model
        phi = None
        if strategy == "H":
            phi_path = directory / "phi_model.json"
            if not phi_path.exists():
                raise MissingModel(f"{phi_path} is required for H bundles")
            phi = PhiModel.load(phi_path)
        return cls(strategy, models, phi)
