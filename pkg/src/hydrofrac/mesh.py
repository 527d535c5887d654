"""Structured quadrilateral meshes, nested local refinement and interface extraction.

The solver operates on two kinds of meshes:

* a structured *global* mesh of square Q1 cells covering the full domain, and
* a *local* mesh obtained by uniformly subdividing a footprint (an
  edge-connected set of global cells) ``level`` times, so that every covered
  global cell is replaced by ``(2**level)**2`` fine cells whose traces nest
  exactly inside the coarse cell boundary.

The boundary between covered and uncovered cells is extracted as an
:class:`Interface`: an ordered polyline of coarse (global) edges together with
the nested fine (local) sub-edges.  Interface fields and Lagrange-multiplier
degrees of freedom live on the coarse trace nodes; the nested prolongation
matrix maps coarse trace values onto the fine trace.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MeshError",
    "Mesh",
    "LocalDomainMap",
    "Interface",
    "build_structured",
    "refine_footprint",
    "eval_basis",
    "quadrature",
]


class MeshError(ValueError):
    """Raised for invalid geometry, footprints or refinement requests."""


# ---------------------------------------------------------------------------
# Reference element: Q1 basis and Gauss quadrature on [-1, 1]^2
# ---------------------------------------------------------------------------

def eval_basis(xi: float, eta: float):
    """Evaluate the four bilinear shape functions and their reference gradients.

    Node ordering is counter-clockwise: (-1,-1), (1,-1), (1,1), (-1,1).

    Returns
    -------
    N : (4,) ndarray
        Shape function values.  They form a partition of unity.
    dN : (4, 2) ndarray
        Derivatives with respect to (xi, eta).
    """
    xm, xp = 0.5 * (1.0 - xi), 0.5 * (1.0 + xi)
    em, ep = 0.5 * (1.0 - eta), 0.5 * (1.0 + eta)
    N = np.array([xm * em, xp * em, xp * ep, xm * ep])
    dN = 0.5 * np.array(
        [
            [-em, -xm],
            [em, -xp],
            [ep, xp],
            [-ep, xm],
        ]
    )
    return N, dN


def quadrature(order: int):
    """Tensor-product Gauss rule on the reference square.

    Parameters
    ----------
    order : int
        Number of Gauss points per direction (1, 2 or 3).

    Returns
    -------
    points : (n, 2) ndarray
    weights : (n,) ndarray
        Weights summing to 4 (the reference-cell area).
    """
    if order == 1:
        g = np.array([0.0])
        w = np.array([2.0])
    elif order == 2:
        g = np.array([-1.0, 1.0]) / np.sqrt(3.0)
        w = np.array([1.0, 1.0])
    elif order == 3:
        g = np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)])
        w = np.array([5.0, 8.0, 5.0]) / 9.0
    else:
        raise MeshError(f"unsupported quadrature order {order} (expected 1, 2 or 3)")
    pts = np.array([(x, y) for y in g for x in g])
    wts = np.array([wx * wy for wy in w for wx in w])
    return pts, wts


# ---------------------------------------------------------------------------
# Mesh containers
# ---------------------------------------------------------------------------

@dataclass
class Mesh:
    """Structured mesh of square Q1 cells.

    Attributes
    ----------
    nodes : (n_nodes, 2) ndarray
        Node coordinates.
    cells : (n_cells, 4) int ndarray
        Counter-clockwise node ids per cell.
    h : float
        Cell edge length (cells are square).
    boundary_edges : (n_bedges, 2) int ndarray
        Node pairs of edges on the mesh boundary.
    boundary_tags : (n_bedges,) ndarray of str
        One of ``dirichlet`` / ``neumann`` per boundary edge.  Structured
        meshes are born all-Dirichlet; tags may be rewritten by drivers.
    exterior : (n_bedges,) bool ndarray
        True where the boundary edge lies on the boundary of the *physical*
        domain (always true for :func:`build_structured` meshes; local meshes
        mark their interface edges as non-exterior).
    """

    nodes: np.ndarray
    cells: np.ndarray
    h: float
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    exterior: np.ndarray
    # structured addressing (used by footprint bookkeeping)
    nx: int = 0
    ny: int = 0
    origin: tuple = (0.0, 0.0)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    def cell_areas(self) -> np.ndarray:
        """Areas of all cells via the shoelace formula (vectorized)."""
        p = self.nodes[self.cells]  # (n_cells, 4, 2)
        x, y = p[..., 0], p[..., 1]
        xn, yn = np.roll(x, -1, axis=1), np.roll(y, -1, axis=1)
        return 0.5 * np.abs(np.sum(x * yn - xn * y, axis=1))

    def boundary_nodes(self, exterior_only: bool = True) -> np.ndarray:
        """Sorted unique node ids on (exterior) boundary edges."""
        edges = self.boundary_edges
        if exterior_only:
            edges = edges[self.exterior]
        return np.unique(edges)

    def cell_index(self, ix: int, iy: int) -> int:
        return iy * self.nx + ix

    def cell_coords(self, cell: int) -> tuple:
        return cell % self.nx, cell // self.nx


def build_structured(extent, nx: int, ny: int, origin=(0.0, 0.0)) -> Mesh:
    """Build an ``nx`` x ``ny`` structured mesh of square cells.

    Parameters
    ----------
    extent : float or (float, float)
        Side lengths of the box (measured from ``origin``).  A scalar means a
        square box.
    nx, ny : int
        Number of cells per direction.
    origin : (float, float)
        Lower-left corner.

    Raises
    ------
    MeshError
        For non-positive extents or cell counts, or non-square cells.
    """
    if np.isscalar(extent):
        wx = wy = float(extent)
    else:
        wx, wy = float(extent[0]), float(extent[1])
    if wx <= 0.0 or wy <= 0.0:
        raise MeshError(f"domain extent must be positive, got ({wx}, {wy})")
    if nx < 1 or ny < 1:
        raise MeshError(f"cell counts must be >= 1, got ({nx}, {ny})")
    hx, hy = wx / nx, wy / ny
    if abs(hx - hy) > 1e-12 * max(hx, hy):
        raise MeshError(f"cells must be square, got hx={hx}, hy={hy}")

    ox, oy = origin
    xs = ox + hx * np.arange(nx + 1)
    ys = oy + hy * np.arange(ny + 1)
    X, Y = np.meshgrid(xs, ys)  # row-major: node (i, j) -> j*(nx+1) + i
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    i, j = i.ravel(), j.ravel()
    n00 = j * (nx + 1) + i
    cells = np.column_stack([n00, n00 + 1, n00 + nx + 2, n00 + nx + 1])

    bedges = []
    for k in range(nx):  # bottom, top
        bedges.append((k, k + 1))
        top = ny * (nx + 1)
        bedges.append((top + k, top + k + 1))
    for k in range(ny):  # left, right
        bedges.append((k * (nx + 1), (k + 1) * (nx + 1)))
        bedges.append((k * (nx + 1) + nx, (k + 1) * (nx + 1) + nx))
    boundary_edges = np.array(bedges, dtype=int)

    return Mesh(
        nodes=nodes,
        cells=cells,
        h=hx,
        boundary_edges=boundary_edges,
        boundary_tags=np.array(["dirichlet"] * len(bedges)),
        exterior=np.ones(len(bedges), dtype=bool),
        nx=nx,
        ny=ny,
        origin=(ox, oy),
    )


# ---------------------------------------------------------------------------
# Footprints and nested refinement
# ---------------------------------------------------------------------------

# sides of a structured cell, as (di, dj) neighbour offsets and the pair of
# local corner indices (into the CCW cell connectivity) forming that side
_SIDES = (
    ((0, -1), (0, 1)),   # bottom
    ((1, 0), (1, 2)),    # right
    ((0, 1), (2, 3)),    # top
    ((-1, 0), (3, 0)),   # left
)


def footprint_connected(mesh: Mesh, footprint) -> bool:
    """True when the footprint cell set is edge-connected on ``mesh``."""
    cells = sorted(set(int(c) for c in footprint))
    if not cells:
        return False
    covered = set(cells)
    stack = [cells[0]]
    seen = {cells[0]}
    while stack:
        c = stack.pop()
        ix, iy = mesh.cell_coords(c)
        for (di, dj), _ in _SIDES:
            jx, jy = ix + di, iy + dj
            if 0 <= jx < mesh.nx and 0 <= jy < mesh.ny:
                n = mesh.cell_index(jx, jy)
                if n in covered and n not in seen:
                    seen.add(n)
                    stack.append(n)
    return len(seen) == len(covered)


@dataclass
class LocalDomainMap:
    """Bookkeeping linking a refined local mesh to its parent global mesh.

    Attributes
    ----------
    footprint : tuple of int
        Sorted covered global cell ids.
    level : int
        Refinement level; each covered cell holds ``(2**level)**2`` fine cells.
    parent_cell : (n_local_cells,) int ndarray
        Covered global cell id of every local cell.
    node_keys : (n_local_nodes, 2) int ndarray
        Integer fine-lattice coordinates of every local node.  Keys are
        resolution-global (independent of the footprint), so nodes retained
        across footprint extensions carry identical keys.
    """

    footprint: tuple
    level: int
    parent_cell: np.ndarray
    node_keys: np.ndarray
    _key_to_node: dict = field(default_factory=dict, repr=False)

    @property
    def refine_factor(self) -> int:
        return 2 ** self.level

    def cells_of_parent(self, gcell: int, local: Mesh) -> np.ndarray:
        return np.nonzero(self.parent_cell == gcell)[0]

    def node_lookup(self) -> dict:
        if not self._key_to_node:
            self._key_to_node = {
                (int(a), int(b)): i for i, (a, b) in enumerate(self.node_keys)
            }
        return self._key_to_node


@dataclass
class Interface:
    """Coarse/fine trace of a footprint boundary with mortar bookkeeping.

    The multiplier mesh is the coarse (global) trace: one multiplier node per
    global trace node (a 2-vector for deformation, a scalar for pressure).

    Attributes
    ----------
    glob_nodes : (m,) int ndarray
        Global-mesh node ids of the coarse trace nodes; position in this
        array is the multiplier/interface dof index.
    loc_nodes : (M,) int ndarray
        Local-mesh node ids of the fine trace nodes.
    coarse_edges : (E, 2) int ndarray
        Coarse trace edges as index pairs into ``glob_nodes``.
    edge_len : (E,) ndarray
        Coarse edge lengths.
    fine_edges : (E, 2**level, 2) int ndarray
        For each coarse edge, the nested fine sub-edges as index pairs into
        ``loc_nodes``, ordered from the first coarse endpoint to the second.
    prolong : (M, m) ndarray
        Nested interpolation taking coarse trace values to fine trace values.
    loops : list of int ndarray
        Ordered coarse-node index loops/paths (closed loops unless the
        footprint touches the physical boundary).
    closed : bool
        True when every trace component is a closed loop.
    """

    glob_nodes: np.ndarray
    loc_nodes: np.ndarray
    coarse_edges: np.ndarray
    edge_len: np.ndarray
    fine_edges: np.ndarray
    prolong: np.ndarray
    loops: list
    closed: bool

    @property
    def n_mult(self) -> int:
        return len(self.glob_nodes)

    @property
    def n_fine(self) -> int:
        return len(self.loc_nodes)

    @property
    def is_empty(self) -> bool:
        return len(self.glob_nodes) == 0


def _order_trace(edges, nodes_xy):
    """Order undirected edges into loops/paths; error on pinched traces."""
    adj: dict = {}
    for k, (a, b) in enumerate(edges):
        adj.setdefault(a, []).append((b, k))
        adj.setdefault(b, []).append((a, k))
    for n, nb in adj.items():
        if len(nb) > 2:
            raise MeshError(
                f"interface trace pinches at node {n} (footprint touches itself corner-to-corner)"
            )
    loops = []
    used = set()
    # open paths first (endpoints have valence 1), then closed loops
    endpoints = sorted(n for n, nb in adj.items() if len(nb) == 1)
    starts = endpoints + sorted(adj.keys())
    closed = len(endpoints) == 0
    for start in starts:
        fringe = [(b, k) for (b, k) in adj[start] if k not in used]
        if not fringe:
            continue
        path = [start]
        node, edge = fringe[0]
        used.add(edge)
        path.append(node)
        while True:
            nxt = [(b, k) for (b, k) in adj[node] if k not in used]
            if not nxt:
                break
            node, edge = nxt[0]
            used.add(edge)
            path.append(node)
        loops.append(np.array(path))
        if len(used) == len(edges):
            break
    return loops, closed


def refine_footprint(mesh: Mesh, footprint, level: int):
    """Uniformly refine a footprint of global cells into a local mesh.

    Parameters
    ----------
    mesh : Mesh
        The structured global mesh.
    footprint : iterable of int
        Covered global cell ids.  Must be non-empty and edge-connected.
    level : int
        Number of bisection levels (>= 1); fine cell size is ``h / 2**level``.

    Returns
    -------
    local : Mesh
        The refined local mesh.  Boundary edges on the physical domain
        boundary keep ``exterior=True``; footprint-interface edges are
        non-exterior.
    lmap : LocalDomainMap
    interface : Interface
        Empty when the footprint covers the whole global mesh.

    Raises
    ------
    MeshError
        For empty/invalid/disconnected footprints or ``level < 1``.
    """
    cells = sorted(set(int(c) for c in footprint))
    if not cells:
        raise MeshError("footprint is empty")
    if level < 1:
        raise MeshError(f"refinement level must be >= 1, got {level}")
    bad = [c for c in cells if not (0 <= c < mesh.n_cells)]
    if bad:
        raise MeshError(f"footprint contains invalid cell ids {bad[:4]}")
    if not footprint_connected(mesh, cells):
        raise MeshError("footprint is not edge-connected (one local domain per run)")

    r = 2 ** level
    hf = mesh.h / r
    ox, oy = mesh.origin
    covered = set(cells)

    # fine cells on the resolution-global lattice -------------------------
    fine_cells = []  # (fi, fj) lower-left fine-lattice coords
    parent = []
    for c in cells:
        ix, iy = mesh.cell_coords(c)
        for b in range(r):
            for a in range(r):
                fine_cells.append((ix * r + a, iy * r + b))
                parent.append(c)
    fine_cells = np.array(fine_cells, dtype=int)
    parent = np.array(parent, dtype=int)

    # deduplicated fine nodes, ordered by lattice key (deterministic)
    corners = np.concatenate(
        [
            fine_cells,
            fine_cells + (1, 0),
            fine_cells + (1, 1),
            fine_cells + (0, 1),
        ]
    )
    node_keys = np.unique(corners, axis=0)  # sorted lexicographically
    key2id = {(int(a), int(b)): i for i, (a, b) in enumerate(node_keys)}
    nodes = np.column_stack([ox + hf * node_keys[:, 0], oy + hf * node_keys[:, 1]])

    def nid(fi, fj):
        return key2id[(fi, fj)]

    lcells = np.array(
        [
            (nid(a, b), nid(a + 1, b), nid(a + 1, b + 1), nid(a, b + 1))
            for a, b in fine_cells
        ],
        dtype=int,
    )

    # boundary of the local mesh ------------------------------------------
    fine_set = {(int(a), int(b)) for a, b in fine_cells}
    bedges, btags, bexterior = [], [], []
    iface_edges_coarse = {}  # (gcell, side) -> list of fine edges
    for (a, b), gc in zip(fine_cells, parent):
        ix, iy = mesh.cell_coords(gc)
        for s, ((di, dj), _) in enumerate(_SIDES):
            na, nb2 = int(a) + di, int(b) + dj
            if (na, nb2) in fine_set:
                continue
            if s == 0:
                e = (nid(a, b), nid(a + 1, b))
            elif s == 1:
                e = (nid(a + 1, b), nid(a + 1, b + 1))
            elif s == 2:
                e = (nid(a, b + 1), nid(a + 1, b + 1))
            else:
                e = (nid(a, b), nid(a, b + 1))
            jx, jy = ix + di, iy + dj
            outside = not (0 <= jx < mesh.nx and 0 <= jy < mesh.ny)
            neighbour_covered = (not outside) and (mesh.cell_index(jx, jy) in covered)
            if neighbour_covered:
                continue  # interior fine edge between two refine blocks
            bedges.append(e)
            if outside:
                btags.append("dirichlet")
                bexterior.append(True)
            else:
                btags.append("interface")
                bexterior.append(False)
                iface_edges_coarse.setdefault((gc, s), []).append(e)

    local = Mesh(
        nodes=nodes,
        cells=lcells,
        h=hf,
        boundary_edges=np.array(bedges, dtype=int).reshape(-1, 2),
        boundary_tags=np.array(btags) if btags else np.zeros(0, dtype="<U9"),
        exterior=np.array(bexterior, dtype=bool),
        nx=0,
        ny=0,
        origin=(ox, oy),
    )
    lmap = LocalDomainMap(
        footprint=tuple(cells), level=level, parent_cell=parent, node_keys=node_keys
    )
    interface = _build_interface(mesh, local, lmap, iface_edges_coarse)
    return local, lmap, interface


def _build_interface(mesh, local, lmap, iface_edges_coarse) -> Interface:
    """Assemble the Interface container from per-(cell, side) fine edge lists."""
    if not iface_edges_coarse:
        empty = np.zeros(0, dtype=int)
        return Interface(
            glob_nodes=empty,
            loc_nodes=empty,
            coarse_edges=empty.reshape(0, 2),
            edge_len=np.zeros(0),
            fine_edges=empty.reshape(0, lmap.refine_factor, 2),
            prolong=np.zeros((0, 0)),
            loops=[],
            closed=True,
        )
    r = lmap.refine_factor

    # coarse edges as global node pairs (deduplicated: a footprint side is a
    # side of exactly one covered cell, so no duplicates arise)
    coarse_pairs = []
    fine_lists = []
    for (gc, s), fedges in sorted(iface_edges_coarse.items()):
        if len(fedges) != r:
            raise MeshError("nested trace extraction lost fine edges")  # pragma: no cover
        _, (c0, c1) = _SIDES[s]
        gcell = mesh.cells[gc]
        coarse_pairs.append((int(gcell[c0]), int(gcell[c1])))
        fine_lists.append(fedges)

    glob_nodes = np.unique(np.array(coarse_pairs).ravel())
    gpos = {int(g): i for i, g in enumerate(glob_nodes)}

    loc_nodes = np.unique(np.concatenate([np.array(f).ravel() for f in fine_lists]))
    lpos = {int(n): i for i, n in enumerate(loc_nodes)}

    coarse_edges = np.array([(gpos[a], gpos[b]) for a, b in coarse_pairs], dtype=int)
    edge_len = np.linalg.norm(
        mesh.nodes[glob_nodes[coarse_edges[:, 1]]]
        - mesh.nodes[glob_nodes[coarse_edges[:, 0]]],
        axis=1,
    )

    # order the fine sub-edges of every coarse edge from endpoint 0 to 1 and
    # build the nested prolongation from barycentric positions
    n_m, n_f = len(glob_nodes), len(loc_nodes)
    prolong = np.zeros((n_f, n_m))
    fine_edges = np.zeros((len(coarse_pairs), r, 2), dtype=int)
    for e, ((ga, gb), fedges) in enumerate(zip(coarse_pairs, fine_lists)):
        pa = mesh.nodes[ga]
        pb = mesh.nodes[gb]
        tang = (pb - pa) / np.dot(pb - pa, pb - pa)

        def param(nid_):
            return float(np.dot(local.nodes[nid_] - pa, tang))

        segs = sorted(
            (tuple(sorted((param(u), param(v)))) + (u, v) for u, v in fedges)
        )
        for k, (t0, t1, u, v) in enumerate(segs):
            if param(u) > param(v):
                u, v = v, u
            fine_edges[e, k] = (lpos[u], lpos[v])
            for nid_, t in ((u, t0), (v, t1)):
                prolong[lpos[nid_], gpos[ga]] = 1.0 - t
                prolong[lpos[nid_], gpos[gb]] = t

    loops, closed = _order_trace(coarse_edges.tolist(), None)
    return Interface(
        glob_nodes=glob_nodes,
        loc_nodes=loc_nodes,
        coarse_edges=coarse_edges,
        edge_len=edge_len,
        fine_edges=fine_edges,
        prolong=prolong,
        loops=loops,
        closed=closed,
    )


# ---------------------------------------------------------------------------
# Geometry helpers shared by drivers
# ---------------------------------------------------------------------------

def interp_structured(mesh: Mesh, nodal: np.ndarray, pts) -> np.ndarray:
    """Q1 interpolation of a nodal field on a structured mesh at points.

    Points are clamped onto the mesh box.  ``nodal`` may be ``(n,)`` or
    ``(n, m)``; the result has shape ``(len(pts),)`` or ``(len(pts), m)``.
    """
    if mesh.nx < 1 or mesh.ny < 1:
        raise MeshError("interp_structured requires a structured parent mesh")
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    ox, oy = mesh.origin
    sx = np.clip((pts[:, 0] - ox) / mesh.h, 0.0, mesh.nx - 1e-12)
    sy = np.clip((pts[:, 1] - oy) / mesh.h, 0.0, mesh.ny - 1e-12)
    ix = np.minimum(sx.astype(int), mesh.nx - 1)
    iy = np.minimum(sy.astype(int), mesh.ny - 1)
    xi = 2.0 * (sx - ix) - 1.0
    eta = 2.0 * (sy - iy) - 1.0
    xm, xp = 0.5 * (1.0 - xi), 0.5 * (1.0 + xi)
    em, ep = 0.5 * (1.0 - eta), 0.5 * (1.0 + eta)
    N = np.stack([xm * em, xp * em, xp * ep, xm * ep], axis=1)  # (npts, 4)
    conn = mesh.cells[iy * mesh.nx + ix]  # (npts, 4)
    vals = nodal[conn]  # (npts, 4[, m])
    if vals.ndim == 2:
        return np.einsum("pa,pa->p", N, vals)
    return np.einsum("pa,pam->pm", N, vals)


def segment_point_distance(p, a, b) -> np.ndarray:
    """Distance from point(s) ``p`` to the segment ``a``-``b`` (vectorized)."""
    p = np.atleast_2d(p)
    a = np.asarray(a, dtype=float)
    d = np.asarray(b, dtype=float) - a
    denom = float(np.dot(d, d))
    if denom == 0.0:
        return np.linalg.norm(p - a, axis=1)
    t = np.clip((p - a) @ d / denom, 0.0, 1.0)
    proj = a + np.outer(t, d)
    return np.linalg.norm(p - proj, axis=1)


def cells_intersecting_segment(mesh: Mesh, a, b) -> list:
    """Global cells whose closed area meets the segment ``a``-``b``."""
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    ox, oy = mesh.origin
    h = mesh.h
    i0 = max(int(np.floor((lo[0] - ox) / h - 1e-12)), 0)
    i1 = min(int(np.ceil((hi[0] - ox) / h + 1e-12)), mesh.nx - 1)
    j0 = max(int(np.floor((lo[1] - oy) / h - 1e-12)), 0)
    j1 = min(int(np.ceil((hi[1] - oy) / h + 1e-12)), mesh.ny - 1)
    out = []
    for jy in range(j0, j1 + 1):
        for jx in range(i0, i1 + 1):
            cx = ox + (jx + 0.5) * h
            cy = oy + (jy + 0.5) * h
            if _segment_meets_cell(a, b, (cx, cy), h):
                out.append(mesh.cell_index(jx, jy))
    return sorted(out)


def _segment_meets_cell(a, b, center, h) -> bool:
    """Exact closed-square vs segment intersection test."""
    cx, cy = center
    half = 0.5 * h + 1e-12
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    # sample the clipped parameter range by the slab method
    d = b - a
    t0, t1 = 0.0, 1.0
    for dim, c in ((0, cx), (1, cy)):
        lo, hi = c - half, c + half
        if abs(d[dim]) < 1e-15:
            if a[dim] < lo or a[dim] > hi:
                return False
        else:
            ta = (lo - a[dim]) / d[dim]
            tb = (hi - a[dim]) / d[dim]
            ta, tb = min(ta, tb), max(ta, tb)
            t0, t1 = max(t0, ta), min(t1, tb)
            if t0 > t1:
                return False
    return True
