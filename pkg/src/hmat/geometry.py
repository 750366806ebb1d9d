"""Sphere panelizations and kernel entry evaluation.

The test geometry is the unit sphere, discretized by radially projecting
the six faces of the cube [-1, 1]^3.  Each face is quadrisected `level`
times, giving 6 * 4**level panels.  A panel is represented by the radial
projection of its cube-cell midpoint together with the spherical area of
the projected cell.

Three kernels are supported:

* ``exp``          k(x, y) = exp(-|x - y|)
* ``scaled-exp``   k(x, y) = x_1 * exp(-|x - y|)   (x_1 of the row panel)
* ``single-layer`` k(x, y) = 1 / |x - y|

Matrix entries use a one-point midpoint rule,
entry(i, j) = area_i * area_j * k(center_i, center_j), except for the
singular diagonal of the single-layer kernel, which is integrated by a
fixed-depth panel subdivision that drops the coincident sub-pair.
"""

from dataclasses import dataclass

import numpy as np

MAX_LEVEL = 9
MAX_DENSE = 6144

EXPONENTIAL = "exp"
SCALED_EXPONENTIAL = "scaled-exp"
SINGLE_LAYER = "single-layer"
KERNELS = (EXPONENTIAL, SCALED_EXPONENTIAL, SINGLE_LAYER)

# Outward-oriented in-face axes (e1, e2) with e1 x e2 = outward normal,
# one row per face: (normal axis, sign, e1 axis, e2 axis).
_FACES = (
    (0, +1.0, 1, 2),
    (0, -1.0, 2, 1),
    (1, +1.0, 2, 0),
    (1, -1.0, 0, 2),
    (2, +1.0, 0, 1),
    (2, -1.0, 1, 0),
)

_DIAG_SUBDIV_DEPTH = 3


@dataclass(frozen=True)
class PanelSet:
    """Panels of a sphere mesh.

    centers: (n, 3) unit vectors, projected cube-cell midpoints.
    areas:   (n,) spherical areas of the projected cells.
    corners: (n, 4, 3) cube-cell corners (on the cube, not the sphere),
             counter-clockwise as seen from outside.
    level:   subdivision level, n = 6 * 4**level.
    """

    centers: np.ndarray
    areas: np.ndarray
    corners: np.ndarray
    level: int

    def __len__(self):
        return self.centers.shape[0]


def _spherical_quad_areas(corners):
    """Signed spherical areas of quads given by (n, 4, 3) cube corners.

    Corners are projected onto the sphere and each quad is split into the
    triangles (0,1,2) and (0,2,3).  The solid angle of a triangle (a,b,c)
    is 2*atan2(det[a,b,c], 1 + a.b + b.c + c.a).
    """
    v = corners / np.linalg.norm(corners, axis=-1, keepdims=True)

    def tri(a, b, c):
        det = np.einsum("ij,ij->i", a, np.cross(b, c))
        denom = (1.0 + np.einsum("ij,ij->i", a, b)
                 + np.einsum("ij,ij->i", b, c)
                 + np.einsum("ij,ij->i", c, a))
        return 2.0 * np.arctan2(det, denom)

    return (tri(v[:, 0], v[:, 1], v[:, 2])
            + tri(v[:, 0], v[:, 2], v[:, 3]))


def build_sphere_mesh(level):
    """Panelize the unit sphere with 6 * 4**level panels."""
    if level < 0:
        raise ValueError("level must be non-negative")
    if level > MAX_LEVEL:
        raise ValueError(f"level {level} exceeds capacity ({MAX_LEVEL})")

    m = 2 ** level
    edges = np.linspace(-1.0, 1.0, m + 1)
    lo, hi = edges[:-1], edges[1:]
    u0, v0 = np.meshgrid(lo, lo, indexing="ij")
    u1, v1 = np.meshgrid(hi, hi, indexing="ij")
    u0, v0, u1, v1 = (a.ravel() for a in (u0, v0, u1, v1))

    all_corners = []
    for axis, sign, e1, e2 in _FACES:
        corners = np.zeros((m * m, 4, 3))
        corners[:, :, axis] = sign
        # counter-clockwise in the (e1, e2) frame
        corners[:, 0, e1], corners[:, 0, e2] = u0, v0
        corners[:, 1, e1], corners[:, 1, e2] = u1, v0
        corners[:, 2, e1], corners[:, 2, e2] = u1, v1
        corners[:, 3, e1], corners[:, 3, e2] = u0, v1
        all_corners.append(corners)
    corners = np.concatenate(all_corners, axis=0)

    mids = corners.mean(axis=1)
    centers = mids / np.linalg.norm(mids, axis=1, keepdims=True)
    areas = _spherical_quad_areas(corners)
    return PanelSet(centers=centers, areas=areas, corners=corners, level=level)


def _subdivide_quad(corners):
    """Split one cube quad (4, 3) into four children (4, 4, 3)."""
    c = corners
    e01 = 0.5 * (c[0] + c[1])
    e12 = 0.5 * (c[1] + c[2])
    e23 = 0.5 * (c[2] + c[3])
    e30 = 0.5 * (c[3] + c[0])
    mid = 0.25 * (c[0] + c[1] + c[2] + c[3])
    return np.array([
        [c[0], e01, mid, e30],
        [e01, c[1], e12, mid],
        [mid, e12, c[2], e23],
        [e30, mid, e23, c[3]],
    ])


def _single_layer_diagonal(corners):
    """Self-interaction of one panel for the 1/|x-y| kernel.

    The panel is subdivided to a fixed depth; the integral is approximated
    by the midpoint rule over all ordered sub-panel pairs, excluding the
    coincident pair.  Deterministic and singularity free; sub-panel
    midpoints are distinct by construction.
    """
    quads = corners[None]
    for _ in range(_DIAG_SUBDIV_DEPTH):
        quads = np.concatenate([_subdivide_quad(q) for q in quads], axis=0)
    areas = _spherical_quad_areas(quads)
    mids = quads.mean(axis=1)
    ctrs = mids / np.linalg.norm(mids, axis=1, keepdims=True)
    diff = ctrs[:, None, :] - ctrs[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    np.fill_diagonal(dist, 1.0)
    w = areas[:, None] * areas[None, :] / dist
    np.fill_diagonal(w, 0.0)
    return float(w.sum())


def kernel_block(kind, panels, rows, cols):
    """Dense entry block for the given row/column panel indices.

    This single routine backs both the dense oracle and the nearfield
    assembly, so that identical index pairs give bitwise identical
    entries.
    """
    if kind not in KERNELS:
        raise ValueError(f"unknown kernel kind {kind!r}")
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    ci = panels.centers[rows]
    cj = panels.centers[cols]
    ai = panels.areas[rows]
    aj = panels.areas[cols]
    diff = ci[:, None, :] - cj[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))

    if kind == SINGLE_LAYER:
        same = rows[:, None] == cols[None, :]
        safe = np.where(same, 1.0, dist)
        block = ai[:, None] * aj[None, :] / safe
        if same.any():
            for i, j in zip(*np.nonzero(same)):
                block[i, j] = _single_layer_diagonal(panels.corners[rows[i]])
        return block

    block = ai[:, None] * aj[None, :] * np.exp(-dist)
    if kind == SCALED_EXPONENTIAL:
        block *= ci[:, 0][:, None]
    return block


def kernel_entry(kind, i, j, panels):
    """Single matrix entry; see kernel_block."""
    return float(kernel_block(kind, panels, [i], [j])[0, 0])


def assemble_dense(kind, panels):
    """Full kernel matrix, the ground truth for all product accuracy tests."""
    n = len(panels)
    if n > MAX_DENSE:
        raise ValueError(f"dense assembly capped at {MAX_DENSE} panels, got {n}")
    idx = np.arange(n)
    return kernel_block(kind, panels, idx, idx)
