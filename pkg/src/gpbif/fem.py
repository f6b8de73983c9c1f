"""Lagrange finite elements on a structured triangulation of a square.

Every field in this package is a pair (phi, psi) of scalar Lagrange fields, the
real and imaginary part of the condensate wave function.  Vectors come in two
layouts:

* *full*: length ``2 * n_s``, ordered ``[phi dofs; psi dofs]`` over all dofs,
  boundary included;
* *free*: length ``2 * n_int``, the same ordering restricted to interior dofs.
  This is the unknown vector of every solver (homogeneous Dirichlet data is
  eliminated by condensation).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.special import roots_jacobi, roots_legendre


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangulation of the square ``[-L, L]^2``."""

    nodes: np.ndarray  # (n_nodes, 2)
    triangles: np.ndarray  # (n_tri, 3), counterclockwise
    boundary_node_flags: np.ndarray  # (n_nodes,) bool
    half_width: float
    nx: int

    @property
    def bounds(self) -> tuple[float, float]:
        return (-self.half_width, self.half_width)

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


@dataclass(eq=False)
class FeSpace:
    """Scalar Lagrange space of degree 1 or 2, used for both phi and psi.

    Dofs live on the ``(p*nx + 1)^2`` points of the refined grid: for the
    uniform split every P2 edge midpoint is a point of the half-spacing grid.
    """

    mesh: Mesh
    degree: int
    dof_coords: np.ndarray  # (n_s, 2)
    cell_dofs: np.ndarray  # (n_tri, nloc)
    boundary_dofs: np.ndarray  # bool (n_s,)
    interior: np.ndarray = field(init=False)  # int indices of free scalar dofs
    _free_index: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.interior = np.flatnonzero(~self.boundary_dofs)
        idx = -np.ones(self.n_s, dtype=np.int64)
        idx[self.interior] = np.arange(self.interior.size)
        self._free_index = idx

    @property
    def n_s(self) -> int:
        """Number of scalar dofs per field."""
        return self.dof_coords.shape[0]

    @property
    def n_int(self) -> int:
        return self.interior.size

    @property
    def n_full(self) -> int:
        return 2 * self.n_s

    @property
    def n_free(self) -> int:
        """Dimension N_h of the discrete (phi, psi) space after condensation."""
        return 2 * self.n_int

    @property
    def nloc(self) -> int:
        return self.cell_dofs.shape[1]

    def free_dofs(self) -> np.ndarray:
        """Indices of the free entries inside a full-layout vector."""
        return np.concatenate([self.interior, self.interior + self.n_s])

    def to_full(self, x_free: np.ndarray) -> np.ndarray:
        x_free = np.asarray(x_free, dtype=float)
        if x_free.shape[0] != self.n_free:
            raise ValueError(f"expected free vector of length {self.n_free}, got {x_free.shape[0]}")
        out = np.zeros((self.n_full,) + x_free.shape[1:])
        out[self.free_dofs()] = x_free
        return out

    def to_free(self, x_full: np.ndarray) -> np.ndarray:
        x_full = np.asarray(x_full, dtype=float)
        if x_full.shape[0] != self.n_full:
            raise ValueError(f"expected full vector of length {self.n_full}, got {x_full.shape[0]}")
        return x_full[self.free_dofs()]

    def interpolate(self, f, g=None) -> np.ndarray:
        """Nodal interpolant of ``(f, g)`` as a full-layout vector (``g`` defaults to 0)."""
        x, y = self.dof_coords[:, 0], self.dof_coords[:, 1]
        phi = np.broadcast_to(np.asarray(f(x, y), dtype=float), x.shape)
        psi = np.zeros_like(phi) if g is None else np.broadcast_to(np.asarray(g(x, y), dtype=float), x.shape)
        return np.concatenate([phi, psi])

    @cached_property
    def geometry(self) -> "ElementGeometry":
        return ElementGeometry(self)

    @cached_property
    def _constant_matrices(self) -> dict:
        return _assemble_scalar_matrices(self)

    def matrix(self, which: str, free: bool = True) -> sp.csr_matrix:
        """Cached constant block matrix (see :func:`assemble_constant_matrix`)."""
        key = (which, free)
        cache = self.__dict__.setdefault("_matrix_cache", {})
        if key not in cache:
            mat = assemble_constant_matrix(self, which)
            cache[key] = condense(self, mat) if free else mat
        return cache[key]


def build_mesh(L: float, nx: int, degree: int = 1) -> tuple[Mesh, FeSpace]:
    """Uniform right-triangle triangulation of ``[-L, L]^2`` with ``nx`` cells per side.

    The diagonal of each cell points away from the origin's quadrant axes
    ("union jack" layout), so for even ``nx`` the mesh is invariant under
    ``x -> -x``, ``y -> -y`` and ``x <-> y``.  The discrete problem then
    keeps the parity of every Hermite mode, and Newton does not drift
    between branches of different symmetry.
    """
    if not L > 0:
        raise ValueError("half-width L must be positive")
    if int(nx) != nx or nx < 2:
        raise ValueError(f"nx must be an integer >= 2, got {nx}")
    if degree not in (1, 2):
        raise ValueError(f"unsupported element degree {degree}; use 1 or 2")
    nx = int(nx)

    p = degree
    nf = p * nx + 1  # refined grid points per side
    xs = np.linspace(-L, L, nf)
    gx, gy = np.meshgrid(xs, xs, indexing="xy")
    dof_coords = np.column_stack([gx.ravel(), gy.ravel()])

    def fid(i, j):
        # refined-grid index of (column i, row j)
        return j * nf + i

    vtx_tri = []
    cells = []
    for j in range(nx):
        for i in range(nx):
            i0, i1, j0, j1 = p * i, p * (i + 1), p * j, p * (j + 1)
            xc = 0.5 * (xs[i0] + xs[i1])
            yc = 0.5 * (xs[j0] + xs[j1])
            a, b, c, d = fid(i0, j0), fid(i1, j0), fid(i1, j1), fid(i0, j1)
            if xc * yc >= 0.0:
                vtx_tri += [(a, b, c), (a, c, d)]
            else:
                vtx_tri += [(a, b, d), (b, c, d)]
    vtx_tri = np.array(vtx_tri, dtype=np.int64)

    if p == 1:
        cell_dofs = vtx_tri
    else:
        # midpoints of edges (v0,v1), (v1,v2), (v2,v0) sit at averaged refined indices
        ij = np.column_stack([vtx_tri % nf, vtx_tri // nf])  # (n_tri, 6): i0 i1 i2 j0 j1 j2
        ii, jj = ij[:, :3], ij[:, 3:]
        mids = []
        for u, v in ((0, 1), (1, 2), (2, 0)):
            mids.append(fid((ii[:, u] + ii[:, v]) // 2, (jj[:, u] + jj[:, v]) // 2))
        cell_dofs = np.column_stack([vtx_tri] + mids)

    on_edge = lambda pts: (np.abs(np.abs(pts[:, 0]) - L) <= 1e-12 * max(1.0, L)) | (
        np.abs(np.abs(pts[:, 1]) - L) <= 1e-12 * max(1.0, L)
    )
    boundary_dofs = on_edge(dof_coords)

    # vertex numbering on the coarse grid
    vertex_fids = np.unique(vtx_tri)
    renum = -np.ones(nf * nf, dtype=np.int64)
    renum[vertex_fids] = np.arange(vertex_fids.size)
    nodes = dof_coords[vertex_fids]
    mesh = Mesh(
        nodes=nodes,
        triangles=renum[vtx_tri],
        boundary_node_flags=on_edge(nodes),
        half_width=float(L),
        nx=nx,
    )
    space = FeSpace(mesh=mesh, degree=p, dof_coords=dof_coords, cell_dofs=cell_dofs, boundary_dofs=boundary_dofs)
    return mesh, space


# ---------------------------------------------------------------------------
# reference element
# ---------------------------------------------------------------------------

def triangle_quadrature(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss rule on the reference triangle, exact up to ``degree``.

    Returns points ``(nq, 2)`` and weights summing to 1/2.
    """
    n = max(1, int(np.ceil((degree + 1) / 2)))
    s, ws = roots_legendre(n)
    t, wt = roots_jacobi(n, 1.0, 0.0)
    s = 0.5 * (s + 1.0)
    ws = 0.5 * ws
    t = 0.5 * (t + 1.0)
    wt = 0.25 * wt  # (1 - t) factor absorbed in the Jacobi weight
    S, T = np.meshgrid(s, t, indexing="ij")
    W = np.outer(ws, wt)
    pts = np.column_stack([(S * (1.0 - T)).ravel(), T.ravel()])
    return pts, W.ravel()


def shape_functions(degree: int, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values ``(nq, nloc)`` and reference gradients ``(nq, nloc, 2)``."""
    xi, eta = pts[:, 0], pts[:, 1]
    l0, l1, l2 = 1.0 - xi - eta, xi, eta
    # d(lambda_k)/d(xi, eta)
    dl = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    lam = np.column_stack([l0, l1, l2])
    if degree == 1:
        vals = lam
        grads = np.broadcast_to(dl, (pts.shape[0], 3, 2)).copy()
        return vals, grads
    if degree != 2:
        raise ValueError(f"unsupported degree {degree}")
    vals = np.empty((pts.shape[0], 6))
    grads = np.empty((pts.shape[0], 6, 2))
    for k in range(3):
        vals[:, k] = lam[:, k] * (2.0 * lam[:, k] - 1.0)
        grads[:, k, :] = (4.0 * lam[:, k] - 1.0)[:, None] * dl[k]
    for m, (u, v) in enumerate(((0, 1), (1, 2), (2, 0))):
        vals[:, 3 + m] = 4.0 * lam[:, u] * lam[:, v]
        grads[:, 3 + m, :] = 4.0 * (lam[:, u][:, None] * dl[v] + lam[:, v][:, None] * dl[u])
    return vals, grads


class ElementGeometry:
    """Per-element quadrature data for a space, degree-exact to ``4p``."""

    def __init__(self, space: FeSpace):
        self.space = space
        p = space.degree
        self.quad_degree = 4 * p
        qp, qw = triangle_quadrature(self.quad_degree)
        self.ref_points = qp
        self.phi, dphi = shape_functions(p, qp)  # (nq, nloc), (nq, nloc, 2)

        verts = space.dof_coords[space.cell_dofs[:, :3]]  # (ne, 3, 2)
        jac = np.stack([verts[:, 1] - verts[:, 0], verts[:, 2] - verts[:, 0]], axis=2)  # (ne, 2, 2)
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        if np.any(det <= 0):
            raise ValueError("mesh contains inverted or degenerate triangles")
        inv = np.empty_like(jac)
        inv[:, 0, 0] = jac[:, 1, 1] / det
        inv[:, 1, 1] = jac[:, 0, 0] / det
        inv[:, 0, 1] = -jac[:, 0, 1] / det
        inv[:, 1, 0] = -jac[:, 1, 0] / det
        self.det = det
        self.weights = det[:, None] * qw[None, :]  # (ne, nq)
        # physical points and gradients
        self.points = verts[:, None, 0, :] + np.einsum("eij,qj->eqi", jac, qp)  # (ne, nq, 2)
        self.grad_phi = np.einsum("eki,qak->eqai", inv, dphi)  # (ne, nq, nloc, 2)


def _assemble_scalar_matrices(space: FeSpace) -> dict:
    geo = space.geometry
    phi = geo.phi
    w = geo.weights
    mass_loc = np.einsum("eq,qa,qb->eab", w, phi, phi)
    stiff_loc = np.einsum("eq,eqai,eqbi->eab", w, geo.grad_phi, geo.grad_phi)
    r2 = np.sum(geo.points**2, axis=2)
    r2mass_loc = np.einsum("eq,qa,qb->eab", w * r2, phi, phi)
    rows = np.repeat(space.cell_dofs, space.nloc, axis=1).ravel()
    cols = np.tile(space.cell_dofs, (1, space.nloc)).ravel()
    shape = (space.n_s, space.n_s)
    out = {}
    for name, loc in (("mass", mass_loc), ("stiffness", stiff_loc), ("r2mass", r2mass_loc)):
        mat = sp.coo_matrix((loc.ravel(), (rows, cols)), shape=shape).tocsr()
        mat.sum_duplicates()
        mat.sort_indices()
        out[name] = mat
    return out


def assemble_constant_matrix(space: FeSpace, which: str) -> sp.csr_matrix:
    """Parameter-independent block-diagonal matrix over the full layout.

    ``which`` selects ``"A"`` (half stiffness), ``"B"`` (half ``|r|^2``
    weighted mass at unit trap strength), ``"M"`` (mass) or ``"K"``
    (stiffness).  The same scalar matrix acts on the phi and psi blocks.
    """
    scalar = space._constant_matrices
    if which == "A":
        s = 0.5 * scalar["stiffness"]
    elif which == "B":
        s = 0.5 * scalar["r2mass"]
    elif which == "M":
        s = scalar["mass"]
    elif which == "K":
        s = scalar["stiffness"]
    else:
        raise ValueError(f"unknown matrix {which!r}; expected one of A, B, M, K")
    return sp.block_diag([s, s], format="csr")


def condense(space: FeSpace, mat: sp.spmatrix) -> sp.csr_matrix:
    """Restrict a full-layout matrix to the free (interior) rows and columns."""
    free = space.free_dofs()
    return sp.csr_matrix(mat.tocsr()[free][:, free])


def inner_product(space: FeSpace, u: np.ndarray, v: np.ndarray, which: str = "L2") -> float:
    """L2 (``u^T M v``) or H1 (``u^T (M + K) v``) product of (phi, psi) pairs.

    Accepts full-layout or free-layout vectors (both of the same layout).
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError("inner_product: vector lengths differ")
    if u.shape[0] == space.n_full:
        free = False
    elif u.shape[0] == space.n_free:
        free = True
    else:
        raise ValueError(f"vector length {u.shape[0]} matches neither {space.n_full} nor {space.n_free}")
    X = inner_product_matrix(space, which, free=free)
    return float(u @ (X @ v))


def inner_product_matrix(space: FeSpace, which: str = "L2", free: bool = True) -> sp.csr_matrix:
    if which == "L2":
        return space.matrix("M", free)
    if which == "H1":
        cache = space.__dict__.setdefault("_matrix_cache", {})
        key = ("H1", free)
        if key not in cache:
            cache[key] = sp.csr_matrix(space.matrix("M", free) + space.matrix("K", free))
        return cache[key]
    raise ValueError(f"unknown inner product {which!r}; expected L2 or H1")


# ---------------------------------------------------------------------------
# cubic nonlinearity
# ---------------------------------------------------------------------------

def local_nonlinear(phi: np.ndarray, weights: np.ndarray, zloc: np.ndarray, with_matrix: bool = True):
    """Element contributions of ``n(., Z)`` and ``c(., ., Z)``.

    Parameters
    ----------
    phi : (nq, nloc) shape-function values at quadrature points.
    weights : (ne, nq) physical quadrature weights.
    zloc : (ne, nloc, 2) local (phi, psi) coefficients of ``Z``.

    Returns
    -------
    nloc_vec : (ne, 2, nloc)
        ``int |Z|^2 Z_c E_a``.
    cloc : (ne, 2, 2, nloc, nloc) or None
        ``int (2 Z_c Z_s + |Z|^2 delta_cs) E_b E_a`` indexed ``[e, c, s, a, b]``.
    """
    zq = np.einsum("qa,eac->ecq", phi, zloc)  # (ne, 2, nq)
    r2 = zq[:, 0] ** 2 + zq[:, 1] ** 2
    wr2 = weights * r2
    nvec = (wr2[:, None, :] * zq) @ phi  # (ne, 2, nloc)
    if not with_matrix:
        return nvec, None
    ne, nq = weights.shape
    nl = phi.shape[1]
    k = 2.0 * zq[:, :, None, :] * zq[:, None, :, :]  # (ne, 2, 2, nq)
    k[:, 0, 0] += r2
    k[:, 1, 1] += r2
    k *= weights[:, None, None, :]
    pp = (phi[:, :, None] * phi[:, None, :]).reshape(nq, nl * nl)
    cloc = (k.reshape(ne * 4, nq) @ pp).reshape(ne, 2, 2, nl, nl)
    return nvec, cloc


class NonlinearAssembler:
    """Repeated assembly of the state-dependent matrix ``C(Z)`` and vector ``n(Z)``.

    The sparsity pattern of the coupled 2x2 block system is fixed, so the
    scatter map from element entries to CSR slots is computed once.  With
    ``free=True`` everything is condensed to the interior dofs; entries
    touching boundary dofs go to a discarded slot.
    """

    def __init__(self, space: FeSpace, free: bool = True):
        self.space = space
        self.free = free
        geo = space.geometry
        self.phi = geo.phi
        self.weights = geo.weights
        cd = space.cell_dofs
        ne, nl = cd.shape
        if free:
            scal = space._free_index  # -1 on boundary
            nsc = space.n_int
        else:
            scal = np.arange(space.n_s)
            nsc = space.n_s
        self.n = 2 * nsc
        loc = scal[cd]  # (ne, nl)
        valid = loc >= 0
        # global index of (component c, local a): c*nsc + loc
        g = np.stack([loc, loc + nsc], axis=1)  # (ne, 2, nl)
        gv = np.stack([valid, valid], axis=1)
        # vector scatter
        self._vec_idx = np.where(gv, g, self.n).ravel()
        # matrix scatter, entry order [e, c, s, a, b]
        R = np.broadcast_to(g[:, :, None, :, None], (ne, 2, 2, nl, nl))
        Cc = np.broadcast_to(g[:, None, :, None, :], (ne, 2, 2, nl, nl))
        ok = np.broadcast_to(gv[:, :, None, :, None], (ne, 2, 2, nl, nl)) & np.broadcast_to(
            gv[:, None, :, None, :], (ne, 2, 2, nl, nl)
        )
        keys = np.where(ok, R.astype(np.int64) * self.n + Cc, -1).ravel()
        ukeys = np.unique(keys[keys >= 0])
        self.nnz = ukeys.size
        pos = np.searchsorted(ukeys, keys)
        pos[keys < 0] = self.nnz
        self._mat_idx = pos
        rows = ukeys // self.n
        self.indices = (ukeys % self.n).astype(np.int32)
        self.indptr = np.searchsorted(rows, np.arange(self.n + 1)).astype(np.int32)
        self._dof_map = cd

    def _local_state(self, z: np.ndarray) -> np.ndarray:
        if z.shape[0] == self.n and self.free:
            z = self.space.to_full(z)
        elif z.shape[0] != self.space.n_full:
            raise ValueError(f"state length {z.shape[0]} incompatible with space")
        ns = self.space.n_s
        return np.stack([z[:ns][self._dof_map], z[ns:][self._dof_map]], axis=2)

    def _matrix(self, data: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    def scatter_matrix_data(self, cloc: np.ndarray) -> np.ndarray:
        return np.bincount(self._mat_idx, weights=cloc.ravel(), minlength=self.nnz + 1)[: self.nnz]

    def assemble(self, z: np.ndarray, with_matrix: bool = True):
        """Return ``(C_data or None, n_vec)`` for state ``z`` (full or free layout)."""
        zloc = self._local_state(np.asarray(z, dtype=float))
        nvec, cloc = local_nonlinear(self.phi, self.weights, zloc, with_matrix)
        n_out = np.bincount(self._vec_idx, weights=nvec.ravel(), minlength=self.n + 1)[: self.n]
        data = self.scatter_matrix_data(cloc) if with_matrix else None
        return data, n_out

    def pattern_data(self, mat: sp.spmatrix) -> np.ndarray:
        """Values of ``mat`` laid out on this assembler's pattern (must be a subset)."""
        m = sp.csr_matrix(mat)
        m.sort_indices()
        coo = m.tocoo()
        keys = coo.row.astype(np.int64) * self.n + coo.col
        rows = np.repeat(np.arange(self.n), np.diff(self.indptr))
        pkeys = rows.astype(np.int64) * self.n + self.indices
        pos = np.searchsorted(pkeys, keys)
        if np.any(pos >= self.nnz) or np.any(pkeys[np.minimum(pos, self.nnz - 1)] != keys):
            raise ValueError("matrix sparsity is not contained in the nonlinear pattern")
        out = np.zeros(self.nnz)
        np.add.at(out, pos, coo.data)
        return out


def assemble_nonlinear(space: FeSpace, z: np.ndarray, free: bool = False) -> tuple[sp.csr_matrix, np.ndarray]:
    """Matrix ``C(Z)_ij = c(E^j, Z, E^i)`` and vector ``n_i = n(E^i, Z)``.

    ``z`` is a full-layout state; with ``free=True`` the outputs are
    condensed to interior dofs.  For repeated calls use
    :class:`NonlinearAssembler` directly.
    """
    z = np.asarray(z, dtype=float)
    if z.shape[0] not in (space.n_full, space.n_free):
        raise ValueError(f"state length {z.shape[0]} incompatible with space")
    asm = _cached_assembler(space, free)
    data, nvec = asm.assemble(z)
    return asm._matrix(data), nvec


def _cached_assembler(space: FeSpace, free: bool) -> NonlinearAssembler:
    cache = space.__dict__.setdefault("_assembler_cache", {})
    if free not in cache:
        cache[free] = NonlinearAssembler(space, free)
    return cache[free]
