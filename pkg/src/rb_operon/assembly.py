"""P1 finite-element assembly and parametric elliptic models.

All matrices are scipy CSR over the full node set; Dirichlet elimination is
done by index bookkeeping, never by row surgery.  Gradients of P1 hats are
triangle-wise constant, so stiffness integrands of piecewise-constant
coefficients are integrated exactly with one point.  Volume loads use the
three-midpoint rule (exact through degree 2) and boundary loads two-point
Gauss per edge.

A ParametricModel packages an affine family A(k) = sum_p theta_p(k) A_p with
its Dirichlet/free split, the reference operator A_star, the factorized
interior block, an implicit lifting map and the boundary energy metric.
"""

import numpy as np
from dataclasses import dataclass, field
from scipy import sparse
from scipy.sparse.linalg import splu

from .errors import EmptyMatrixError, NotCoerciveError


def _region_mask(mesh, region):
    if region is None:
        return np.ones(mesh.n_triangles, dtype=bool)
    if isinstance(region, (int, np.integer)):
        return mesh.triangle_tags == region
    region = np.asarray(region)
    if region.dtype == bool:
        return region
    return np.isin(mesh.triangle_tags, region)


def triangle_geometry(mesh, mask=None):
    """Per-triangle areas and P1 basis gradients.

    Returns (areas (m,), grads (m, 3, 2)) where grads[t, i] is the constant
    gradient of the hat function of local vertex i on triangle t.
    """
    tris = mesh.triangles if mask is None else mesh.triangles[mask]
    p = mesh.nodes[tris]
    v1 = p[:, 1] - p[:, 0]
    v2 = p[:, 2] - p[:, 0]
    det = v1[:, 0] * v2[:, 1] - v1[:, 1] * v2[:, 0]
    areas = 0.5 * np.abs(det)
    # grad lambda_1 = rot(v2)/det, grad lambda_2 = -rot(v1)/det, lambda_0 = -(1+2)
    g1 = np.column_stack([v2[:, 1], -v2[:, 0]]) / det[:, None]
    g2 = np.column_stack([-v1[:, 1], v1[:, 0]]) / det[:, None]
    g0 = -(g1 + g2)
    return areas, np.stack([g0, g1, g2], axis=1)


def _scatter(mesh, tris, local):
    """Accumulate (t, 3, 3) local matrices into a global CSR."""
    n = mesh.n_nodes
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    mat = sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n))
    out = mat.tocsr()
    out.sum_duplicates()
    return out


def _coefficient_values(mesh, mask, coefficient):
    """Per-triangle scalar or 2x2 tensor values on the selected triangles."""
    m = int(np.count_nonzero(mask))
    if coefficient is None:
        return np.ones(m)
    if callable(coefficient):
        cent = mesh.nodes[mesh.triangles[mask]].mean(axis=1)
        return np.asarray(coefficient(cent), dtype=float)
    coefficient = np.asarray(coefficient, dtype=float)
    if coefficient.ndim == 0:
        return np.full(m, float(coefficient))
    # per-triangle array given over the full mesh
    if coefficient.shape[0] == mesh.n_triangles:
        return coefficient[mask]
    if coefficient.shape[0] == m:
        return coefficient
    raise ValueError("coefficient shape does not match selected triangles")


def assemble_stiffness(mesh, region=None, coefficient=None):
    """Stiffness matrix int c grad(u).grad(v) over the selected subdomain.

    ``coefficient`` may be None (unit), a scalar, a callable of centroid
    coordinates, a per-triangle array, or a per-triangle (m, 2, 2) tensor
    field; tensors are contracted as grad(v).G.grad(u).
    """
    mask = _region_mask(mesh, region)
    if not np.any(mask):
        raise EmptyMatrixError("stiffness region selects no triangles")
    areas, grads = triangle_geometry(mesh, mask)
    c = _coefficient_values(mesh, mask, coefficient)
    if c.ndim == 3:
        local = np.einsum("t,tai,tij,tbj->tab", areas, grads, c, grads)
    else:
        local = np.einsum("t,tai,tbi->tab", areas * c, grads, grads)
    return _scatter(mesh, mesh.triangles[mask], local)


_LOCAL_MASS = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


def assemble_mass(mesh, region=None, coefficient=None):
    """Consistent P1 mass matrix (exact for constant coefficients)."""
    mask = _region_mask(mesh, region)
    if not np.any(mask):
        raise EmptyMatrixError("mass region selects no triangles")
    areas, _ = triangle_geometry(mesh, mask)
    c = _coefficient_values(mesh, mask, coefficient)
    local = (areas * c)[:, None, None] * _LOCAL_MASS[None]
    return _scatter(mesh, mesh.triangles[mask], local)


def assemble_boundary_mass(mesh, segment):
    """1D P1 mass on the named boundary segment: (len/6) [[2,1],[1,2]]."""
    sel = mesh.segment_of(segment)
    if not np.any(sel):
        raise EmptyMatrixError(f"no boundary edges on segment {segment!r}")
    edges = mesh.boundary_edges[sel]
    lens = np.linalg.norm(mesh.nodes[edges[:, 1]] - mesh.nodes[edges[:, 0]], axis=1)
    local = (lens / 6.0)[:, None, None] * np.array([[2.0, 1.0], [1.0, 2.0]])[None]
    n = mesh.n_nodes
    rows = np.repeat(edges, 2, axis=1).ravel()
    cols = np.tile(edges, (1, 2)).ravel()
    out = sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    out.sum_duplicates()
    return out


def assemble_load_volume(mesh, f, region=None):
    """Load vector int f v using the three-midpoint rule (degree-2 exact)."""
    mask = _region_mask(mesh, region)
    if not np.any(mask):
        raise EmptyMatrixError("load region selects no triangles")
    tris = mesh.triangles[mask]
    p = mesh.nodes[tris]
    areas, _ = triangle_geometry(mesh, mask)
    # midpoint opposite local vertex i carries basis values (0, 1/2, 1/2)
    mids = 0.5 * (p[:, [1, 2, 0]] + p[:, [2, 0, 1]])
    fv = np.asarray(f(mids.reshape(-1, 2)), dtype=float).reshape(-1, 3)
    w = areas[:, None] / 6.0
    local = np.empty_like(fv)
    local[:, 0] = w[:, 0] * (fv[:, 1] + fv[:, 2])
    local[:, 1] = w[:, 0] * (fv[:, 2] + fv[:, 0])
    local[:, 2] = w[:, 0] * (fv[:, 0] + fv[:, 1])
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, tris.ravel(), local.ravel())
    return out


def assemble_load_boundary(mesh, segment, g):
    """Load vector int g v over a named segment, two-point Gauss per edge."""
    sel = mesh.segment_of(segment)
    if not np.any(sel):
        raise EmptyMatrixError(f"no boundary edges on segment {segment!r}")
    edges = mesh.boundary_edges[sel]
    a = mesh.nodes[edges[:, 0]]
    b = mesh.nodes[edges[:, 1]]
    lens = np.linalg.norm(b - a, axis=1)
    s = 1.0 / np.sqrt(3.0)
    out = np.zeros(mesh.n_nodes)
    for sg in (-s, s):
        x = 0.5 * (1.0 - sg) * a + 0.5 * (1.0 + sg) * b
        gv = np.asarray(g(x), dtype=float)
        np.add.at(out, edges[:, 0], 0.5 * lens * 0.5 * (1.0 - sg) * gv)
        np.add.at(out, edges[:, 1], 0.5 * lens * 0.5 * (1.0 + sg) * gv)
    return out


def interpolate(mesh, fn):
    """Nodal interpolation of a callable over node coordinates."""
    return np.asarray(fn(mesh.nodes), dtype=float)


class AffineSparse:
    """Family sum_p theta_p A_p over a shared sparsity pattern.

    Stores one data row per term aligned to a common CSR template so that
    assembling at a parameter costs a single matvec on nnz-sized arrays.
    """

    def __init__(self, mats):
        if not mats:
            raise ValueError("need at least one term")
        shape = mats[0].shape
        ncols = shape[1]
        coos = [m.tocoo() for m in mats]
        keys = np.concatenate(
            [c.row.astype(np.int64) * ncols + c.col.astype(np.int64) for c in coos])
        uniq, inv = np.unique(keys, return_inverse=True)
        data = np.zeros((len(mats), uniq.size))
        off = 0
        for t, c in enumerate(coos):
            np.add.at(data[t], inv[off:off + c.nnz], c.data)
            off += c.nnz
        rows = (uniq // ncols).astype(np.int32)
        cols = (uniq % ncols).astype(np.int32)
        # unique keys are already row-major sorted, matching CSR data order
        self.template = sparse.csr_matrix(
            (np.zeros(uniq.size), (rows, cols)), shape=shape)
        self.data = data
        self.shape = shape

    @property
    def n_terms(self):
        return self.data.shape[0]

    def term(self, p):
        out = self.template.copy()
        out.data = self.data[p].copy()
        return out

    def assemble(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = self.template.copy()
        out.data = theta @ self.data
        return out


def _check_spd(matrix, factor, rng, what):
    for _ in range(3):
        x = rng.standard_normal(matrix.shape[0])
        if x @ (matrix @ x) <= 0.0:
            raise NotCoerciveError(f"{what} is not positive definite")
    # LU of an SPD matrix has positive pivots throughout
    if np.any(factor.U.diagonal() <= 0.0):
        raise NotCoerciveError(f"{what} has nonpositive pivots")


@dataclass
class ParametricModel:
    """Affine parametric operator with Dirichlet bookkeeping.

    a_terms hold the full-node-set matrices A_p; theta_a maps a parameter
    vector to their weights.  Optional affine load terms (theta_f, f_terms)
    cover right-hand sides that share the parameterization.  k_star fixes
    the reference operator A_star used for lifting, the boundary metric and
    every norm downstream.
    """

    mesh: object
    free: np.ndarray
    dirichlet: np.ndarray
    theta_a: object
    a_terms: list
    k_star: np.ndarray
    theta_f: object = None
    f_terms: list = field(default_factory=list)
    a_star_override: object = None

    def __post_init__(self):
        n = self.mesh.n_nodes
        if len(self.free) + len(self.dirichlet) != n:
            raise ValueError("free/dirichlet split does not cover the node set")
        self.affine_II = AffineSparse(
            [m[self.free][:, self.free].tocsr() for m in self.a_terms])
        self.affine_IB = AffineSparse(
            [m[self.free][:, self.dirichlet].tocsr() for m in self.a_terms])
        if self.a_star_override is not None:
            a_star = self.a_star_override.tocsr()
        else:
            a_star = self.assemble_full(self.k_star)
        self.a_star = a_star
        self.a_star_II = a_star[self.free][:, self.free].tocsr()
        self.a_star_IB = a_star[self.free][:, self.dirichlet].tocsr()
        self.a_star_BB = a_star[self.dirichlet][:, self.dirichlet].toarray()
        self.star_factor = splu(self.a_star_II.tocsc())
        _check_spd(self.a_star_II, self.star_factor,
                   np.random.default_rng(0), "reference interior operator")
        if len(self.dirichlet):
            x = self.star_factor.solve(self.a_star_IB.toarray())
            self.lift_block = -x
            self.w_gamma = self.a_star_BB - self.a_star_IB.T @ x
        else:
            self.lift_block = np.zeros((len(self.free), 0))
            self.w_gamma = np.zeros((0, 0))

    @property
    def n_free(self):
        return len(self.free)

    def assemble_full(self, k):
        th = np.asarray(self.theta_a(np.asarray(k, dtype=float)), dtype=float)
        out = th[0] * self.a_terms[0]
        for p in range(1, len(self.a_terms)):
            out = out + th[p] * self.a_terms[p]
        return out.tocsr()

    def assemble_interior(self, k):
        return self.affine_II.assemble(self.theta_a(np.asarray(k, dtype=float)))

    def load_interior(self, k):
        """Affine right-hand side restricted to free nodes (no lifting)."""
        if not self.f_terms:
            return np.zeros(self.n_free)
        th = np.asarray(self.theta_f(np.asarray(k, dtype=float)), dtype=float)
        out = th[0] * self.f_terms[0]
        for q in range(1, len(self.f_terms)):
            out = out + th[q] * self.f_terms[q]
        return out[self.free]

    def star_solve(self, rhs):
        """Solve A_star_II x = rhs for one vector or a column stack."""
        return self.star_factor.solve(np.asarray(rhs, dtype=float))


def build_model(mesh, free, dirichlet, theta_a, a_terms, k_star,
                theta_f=None, f_terms=(), a_star=None):
    """Assemble-once constructor for :class:`ParametricModel`."""
    return ParametricModel(
        mesh=mesh,
        free=np.asarray(free, dtype=np.int64),
        dirichlet=np.asarray(dirichlet, dtype=np.int64),
        theta_a=theta_a,
        a_terms=list(a_terms),
        k_star=np.asarray(k_star, dtype=float),
        theta_f=theta_f,
        f_terms=list(f_terms),
        a_star_override=a_star,
    )


def discrete_lifting(model, g_b):
    """Reference-harmonic extension of Dirichlet data to all nodes."""
    g_b = np.asarray(g_b, dtype=float)
    if g_b.shape[0] != len(model.dirichlet):
        raise ValueError("Dirichlet data length mismatch")
    out = np.zeros(model.mesh.n_nodes)
    out[model.free] = model.lift_block @ g_b
    out[model.dirichlet] = g_b
    return out


def aggregated_load(model, k, f_free=None, g_b=None):
    """Right-hand side on free nodes after lifting the Dirichlet data.

    ``f_free`` is the assembled load vector (volume plus natural-boundary
    contributions) restricted to free nodes; ``g_b`` holds nodal Dirichlet
    values.  The lifting correction uses A blocks assembled at k.
    """
    out = np.zeros(model.n_free) if f_free is None else np.array(f_free, dtype=float)
    if g_b is not None and len(model.dirichlet):
        g_b = np.asarray(g_b, dtype=float)
        th = model.theta_a(np.asarray(k, dtype=float))
        lifted = model.lift_block @ g_b
        out -= model.affine_II.assemble(th) @ lifted
        out -= model.affine_IB.assemble(th) @ g_b
    return out


def truth_solve(model, k, f_hat, factor=None):
    """Direct solve of A_II(k) w = f_hat; returns the free-node coefficients."""
    a = model.assemble_interior(k) if factor is None else None
    try:
        lu = splu(a.tocsc()) if factor is None else factor
    except RuntimeError as exc:
        raise NotCoerciveError(f"interior operator factorization failed: {exc}")
    f_hat = np.asarray(f_hat, dtype=float)
    w = lu.solve(f_hat)
    if a is not None:
        ref = np.linalg.norm(f_hat)
        if ref > 0 and np.linalg.norm(a @ w - f_hat) > 1e-8 * ref:
            raise NotCoerciveError("direct solve residual too large")
    return w


def interior_factor(model, k):
    """Reusable factorization of A_II(k) for repeated right-hand sides."""
    try:
        return splu(model.assemble_interior(k).tocsc())
    except RuntimeError as exc:
        raise NotCoerciveError(f"interior operator factorization failed: {exc}")


def full_field(model, w_free, g_b=None):
    """Recombine free coefficients and Dirichlet data into a nodal field."""
    out = np.zeros(model.mesh.n_nodes)
    out[model.free] = w_free
    if g_b is not None and len(model.dirichlet):
        out += discrete_lifting(model, np.asarray(g_b, dtype=float))
    return out


def dump_matrix(a, path):
    """Coordinate text dump: header `matrix <rows> <cols> <nnz>`, then i j value."""
    coo = sparse.coo_matrix(a)
    with open(path, "w") as fh:
        fh.write(f"matrix {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {float(v)!r}\n")


def load_matrix(path):
    with open(path) as fh:
        head = fh.readline().split()
        if head[0] != "matrix":
            raise ValueError("bad matrix header")
        nr, nc, nnz = int(head[1]), int(head[2]), int(head[3])
        rows = np.empty(nnz, dtype=np.int64)
        cols = np.empty(nnz, dtype=np.int64)
        data = np.empty(nnz)
        for t in range(nnz):
            i, j, v = fh.readline().split()
            rows[t], cols[t], data[t] = int(i), int(j), float(v)
    return sparse.coo_matrix((data, (rows, cols)), shape=(nr, nc)).tocsr()


def dump_vector(v, path):
    """Text dump: header `vector <n>`, then one index/value pair per line."""
    v = np.asarray(v)
    with open(path, "w") as fh:
        fh.write(f"vector {v.shape[0]}\n")
        for i, x in enumerate(v):
            fh.write(f"{i} {float(x)!r}\n")


def load_vector(path):
    with open(path) as fh:
        head = fh.readline().split()
        if head[0] != "vector":
            raise ValueError("bad vector header")
        n = int(head[1])
        out = np.empty(n)
        for _ in range(n):
            i, x = fh.readline().split()
            out[int(i)] = float(x)
    return out
