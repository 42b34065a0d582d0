"""Element frames and the "ref-anchor-v1" network input encoding.

Every element is first mapped to its local frame ``xi = scale * (x - centroid)``
(unit circumradius about the centroid).  The anchor frame of vertex ``j`` is a
further rotation ``z = R_j xi`` that puts ``v_j`` on the positive x1-axis; the
encoding of ``(j, E)`` lists the remaining vertices ``v_{j+1}, ..., v_{j-1}``
in that frame.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from navem_lab.geometry import Polygon, normalize

ENCODING = "ref-anchor-v1"


@dataclass(frozen=True)
class ElementFrame:
    polygon: Polygon
    center: np.ndarray
    scale: float
    rotations: np.ndarray  # (nv, 2, 2)
    local: Polygon  # vertices in the xi frame

    @property
    def nv(self):
        return self.polygon.nv

    def to_local(self, x):
        return self.scale * (np.asarray(x, dtype=float) - self.center)

    def to_anchor(self, j, xi):
        return np.asarray(xi) @ self.rotations[j].T

    @cached_property
    def encodings(self):
        """Array (nv, 2(nv-1)); row j is the encoding of vertex j."""
        v = self.local.vertices
        rows = []
        for j in range(self.nv):
            order = [(j + k) % self.nv for k in range(1, self.nv)]
            rows.append((v[order] @ self.rotations[j].T).ravel())
        return np.array(rows)


def element_frame(polygon):
    rotations = []
    ref = None
    for j in range(polygon.nv):
        _, ref = normalize(polygon, anchor_vertex=j)
        rotations.append(ref.rotation)
    local = Polygon(ref.scale * (polygon.vertices - ref.translation), validate=False)
    return ElementFrame(polygon, ref.translation, ref.scale, np.array(rotations), local)


def encode(polygon, j):
    """Encoding vector x0^H of the pair (j, E), length 2(nv-1)."""
    return element_frame(polygon).encodings[j]


def network_inputs(frame, j, xi):
    """B/P inputs [z; x0^H] for local points ``xi`` (n, 2) and vertex ``j``."""
    z = frame.to_anchor(j, xi)
    enc = np.broadcast_to(frame.encodings[j], (len(z), 2 * (frame.nv - 1)))
    return np.hstack([z, enc])
