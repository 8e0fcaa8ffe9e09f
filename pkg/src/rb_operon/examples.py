"""Benchmark problem definitions: domains, geometry, data families.

Three parametric elliptic problems exercise the toolkit end to end:

1. diffusion with a circular inclusion on (-1/2,1/2)^2, Dirichlet top,
   flux load on the base; parameters (contrast k1, flux k2).
2. reaction-diffusion with a Robin edge on the unit square; the operator
   parameters (kappa0, alpha0, beta0) ride along independently sampled
   manufactured data, so loads and Dirichlet traces vary freely.
3. the inclusion problem with a parameterized inclusion radius, pulled back
   to the reference mesh by a radial map and compressed with EIM.
"""

import numpy as np
from dataclasses import dataclass, field
from scipy.sparse.linalg import eigsh, splu

from .assembly import (assemble_stiffness, assemble_mass, assemble_boundary_mass,
                       assemble_load_volume, assemble_load_boundary, build_model)
from .geomap import RadialMap, eim_build, eim_coefficients, assemble_eim_terms
from .mesh import unit_square_mesh, square_with_inclusion_mesh, dirichlet_nodes
from .reduction import coercivity_lower_bound

HIDDEN_SIZES = (256, 256, 256, 256)


@dataclass(frozen=True)
class ExampleSpec:
    """Pinned constants of one benchmark: domain, recipe, tolerances, sizes."""

    example: int
    param_ranges: tuple        # ((lo, hi), ...) per parameter coordinate
    k_star: tuple
    mesh_recipe: dict
    trunk: dict                # pod_tol / greedy_tol / greedy_fixed_n
    data: dict = field(default_factory=dict)
    n_pool: int = 2000         # trunk snapshot/sweep pool
    n_train: int = 2000
    n_val: int = 200
    n_test: int = 1000

    def __post_init__(self):
        if self.example not in (1, 2, 3):
            raise ValueError("example id must be 1, 2 or 3")
        pr = np.asarray(self.param_ranges, dtype=float)
        if pr.ndim != 2 or pr.shape[1] != 2 or np.any(pr[:, 1] <= pr[:, 0]):
            raise ValueError("parameter ranges must be nonempty intervals")
        ks = np.asarray(self.k_star, dtype=float)
        if ks.shape != (pr.shape[0],) or np.any(ks < pr[:, 0]) or np.any(ks > pr[:, 1]):
            raise ValueError("reference parameter outside the domain")

    @property
    def n_params(self):
        return len(self.param_ranges)


def example_spec(example):
    """The three pinned benchmark configurations."""
    if example == 1:
        return ExampleSpec(
            example=1,
            param_ranges=((0.1, 10.0), (-1.0, 1.0)),
            k_star=(1.0, 1.0),
            mesh_recipe={"kind": "inclusion", "r0": 0.2, "h": 1.0 / 43.0},
            trunk={"pod_tol": 1e-7, "pod_fixed_n": 3, "greedy_fixed_n": 3},
            n_pool=2100,
            n_train=2000,
            n_val=200,
        )
    if example == 2:
        return ExampleSpec(
            example=2,
            param_ranges=((0.5, 2.0), (0.0, 2.0), (0.0, 10.0)),
            k_star=(1.2, 0.6, 1.0),
            mesh_recipe={"kind": "unit_square", "n": 64},
            # target ranks cap the certified greedy; the configured
            # tolerances stay active and the reached indicator is recorded
            # in each greedy trace
            trunk={"pod_tol": 1e-7, "greedy_tol": 1e-7, "greedy_n_max": 209},
            data={
                # (a1, a2, a3, a4, xc, yc, sigma)
                "xi_ranges": ((-1.0, 1.0), (-1.0, 1.0), (0.0, 1.0), (-1.0, 1.0),
                              (0.2, 0.8), (0.2, 0.8), (0.05, 0.2)),
                "mode_tol": 1e-7,
                "r_f_max": 128,
                "r_g_max": 16,
                "sweep_subset": 3000,
            },
            n_pool=10000,
            n_train=8000,
            n_val=2000,
        )
    if example == 3:
        return ExampleSpec(
            example=3,
            param_ranges=((0.1, 10.0), (-1.0, 1.0), (0.05, 0.45)),
            k_star=(1.0, 1.0, 0.2),
            mesh_recipe={"kind": "inclusion", "r0": 0.2, "h": 1.0 / 43.0},
            trunk={"pod_tol": 1e-7, "pod_fixed_n": 5, "greedy_fixed_n": 5},
            data={
                "radial": {"r_minus": 0.03, "r0": 0.2, "r_plus": 0.6,
                           "r_min": 0.05, "r_max": 0.45},
                "eim_q": 15,
                "eim_train": 256,
            },
            n_pool=4000,
            n_train=2000,
            n_val=200,
        )
    raise ValueError("example id must be 1, 2 or 3")


def build_mesh(spec):
    recipe = spec.mesh_recipe
    if recipe["kind"] == "inclusion":
        return square_with_inclusion_mesh(r0=recipe["r0"], h=recipe["h"])
    if recipe["kind"] == "unit_square":
        return unit_square_mesh(recipe["n"])
    raise ValueError(f"unknown mesh recipe {recipe['kind']!r}")


def _uniform_box(rng, ranges, n):
    r = np.asarray(ranges, dtype=float)
    return rng.uniform(r[:, 0], r[:, 1], size=(n, r.shape[0]))


def sample_parameters(spec, n, rng):
    """i.i.d. uniform draws from the parameter box."""
    return _uniform_box(rng, spec.param_ranges, n)


def sample_xi(spec, n, rng):
    """Data-family draws (the manufactured-solution knobs)."""
    if "xi_ranges" not in spec.data:
        raise ValueError("this example has no independent data family")
    return _uniform_box(rng, spec.data["xi_ranges"], n)


@dataclass(frozen=True)
class ManufacturedSolution:
    """Closed-form scalar field: two sine products, a Gaussian bump and a
    cos*sinh term, with hand-differentiated gradient and Laplacian."""

    a1: float
    a2: float
    a3: float
    a4: float
    xc: float
    yc: float
    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    @classmethod
    def from_xi(cls, xi):
        return cls(*(float(v) for v in xi))

    def _parts(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return x[:, 0], x[:, 1]

    def _bump(self, xx, yy):
        dx = xx - self.xc
        dy = yy - self.yc
        return dx, dy, np.exp(-(dx * dx + dy * dy) / (2.0 * self.sigma ** 2))

    def value(self, x):
        xx, yy = self._parts(x)
        pi = np.pi
        _, _, bump = self._bump(xx, yy)
        return (self.a1 * np.sin(pi * xx) * np.sin(pi * yy)
                + self.a2 * np.sin(2 * pi * xx) * np.sin(pi * yy)
                + self.a3 * bump
                + self.a4 * np.cos(pi * xx) * np.sinh(yy - 0.5))

    def grad(self, x):
        xx, yy = self._parts(x)
        pi = np.pi
        dx, dy, bump = self._bump(xx, yy)
        s2 = self.sigma ** 2
        gx = (self.a1 * pi * np.cos(pi * xx) * np.sin(pi * yy)
              + self.a2 * 2 * pi * np.cos(2 * pi * xx) * np.sin(pi * yy)
              - self.a3 * dx / s2 * bump
              - self.a4 * pi * np.sin(pi * xx) * np.sinh(yy - 0.5))
        gy = (self.a1 * pi * np.sin(pi * xx) * np.cos(pi * yy)
              + self.a2 * pi * np.sin(2 * pi * xx) * np.cos(pi * yy)
              - self.a3 * dy / s2 * bump
              + self.a4 * np.cos(pi * xx) * np.cosh(yy - 0.5))
        return np.column_stack([gx, gy])

    def laplacian(self, x):
        xx, yy = self._parts(x)
        pi = np.pi
        dx, dy, bump = self._bump(xx, yy)
        s2 = self.sigma ** 2
        rho2 = dx * dx + dy * dy
        return (-2 * pi ** 2 * self.a1 * np.sin(pi * xx) * np.sin(pi * yy)
                - 5 * pi ** 2 * self.a2 * np.sin(2 * pi * xx) * np.sin(pi * yy)
                + self.a3 * bump * (rho2 / s2 ** 2 - 2.0 / s2)
                + self.a4 * (1.0 - pi ** 2) * np.cos(pi * xx) * np.sinh(yy - 0.5))


@dataclass
class Problem:
    """Assembled benchmark: the parametric model plus metric weights."""

    spec: ExampleSpec
    mesh: object
    model: object
    m_full: object            # full-node mass matrix
    alpha_lb: float
    surrogate: object = None  # example 3 EIM surrogate

    def __post_init__(self):
        free = self.model.free
        self.m_ii = self.m_full[free][:, free].tocsr()


def _pencil_floor(a_part, a_star):
    """Smallest generalized eigenvalue of a_part v = lam a_star v."""
    lam = eigsh(a_part.tocsc(), k=1, M=a_star.tocsc(), sigma=0.0,
                which="LM", return_eigenvectors=False)
    return float(lam[0])


def _radial_tensor_floor(rm, n_rho=2000, n_r=101):
    """Min eigenvalue of the pullback tensor over radius and position."""
    rho = np.linspace(1e-6, np.sqrt(2.0) / 2.0, n_rho)
    best = np.inf
    for r in np.linspace(rm.r_min, rm.r_max, n_r):
        s, ds = rm.mapped_radius(rho, r)
        phi = s / rho
        lam = np.minimum(phi / ds, ds / phi)
        best = min(best, float(lam.min()))
    return best


def _box_corners(ranges):
    r = np.asarray(ranges, dtype=float)
    grids = np.meshgrid(*[r[i] for i in range(r.shape[0])], indexing="ij")
    return np.column_stack([g.ravel() for g in grids])


def build_problem(spec, mesh=None, surrogate=None):
    """Mesh, boundary split, affine operator family and coercivity bound."""
    if mesh is None:
        mesh = build_mesh(spec)
    m_full = assemble_mass(mesh)

    if spec.example in (1, 3):
        bd = dirichlet_nodes(mesh, ["top"])
        free = np.setdiff1d(np.arange(mesh.n_nodes), bd)
        f_base = assemble_load_boundary(mesh, "base", lambda x: np.ones(len(x)))

        if spec.example == 1:
            a0 = assemble_stiffness(mesh, region=0)
            a1 = assemble_stiffness(mesh, region=1)
            model = build_model(
                mesh, free, bd,
                theta_a=lambda k: np.array([k[0], 1.0]),
                a_terms=[a0, a1],
                k_star=spec.k_star,
                theta_f=lambda k: np.array([k[1]]),
                f_terms=[f_base],
            )
            alpha = coercivity_lower_bound(
                model, samples=_box_corners(spec.param_ranges))
            return Problem(spec=spec, mesh=mesh, model=model,
                           m_full=m_full, alpha_lb=alpha)

        rm = RadialMap(**spec.data["radial"])
        if surrogate is None:
            centroids = mesh.nodes[mesh.triangles].mean(axis=1)
            radii = np.linspace(rm.r_min, rm.r_max, spec.data["eim_train"])
            surrogate = eim_build(rm, centroids, radii, q_max=spec.data["eim_q"])
        inside, outside = assemble_eim_terms(mesh, surrogate)
        q = surrogate.rank

        def theta_a(k, _q=q, _sur=surrogate):
            alpha_q = eim_coefficients(_sur, k[2])
            return np.concatenate([alpha_q, k[0] * alpha_q])

        model = build_model(
            mesh, free, bd,
            theta_a=theta_a,
            a_terms=list(outside) + list(inside),
            k_star=spec.k_star,
            theta_f=lambda k: np.array([k[1]]),
            f_terms=[f_base],
            a_star=assemble_stiffness(mesh),
        )
        floor = _radial_tensor_floor(rm)
        alpha = min(1.0, spec.param_ranges[0][0]) * floor * 0.95
        return Problem(spec=spec, mesh=mesh, model=model, m_full=m_full,
                       alpha_lb=coercivity_lower_bound(model, fixed=alpha),
                       surrogate=surrogate)

    # example 2: diffusion + reaction + Robin edge, data supplied per sample
    bd = dirichlet_nodes(mesh, ["left", "top"])
    free = np.setdiff1d(np.arange(mesh.n_nodes), bd)
    stiff = assemble_stiffness(mesh)
    robin = assemble_boundary_mass(mesh, "right")
    model = build_model(
        mesh, free, bd,
        theta_a=lambda k: np.asarray(k, dtype=float),
        a_terms=[stiff, m_full, robin],
        k_star=spec.k_star,
    )
    # reaction and Robin weights may vanish, so certify against the
    # diffusion block alone: a(v,v;k) >= kappa0_min * lam_min(K vs A_star).
    kii = model.affine_II.term(0)
    floor = spec.param_ranges[0][0] * _pencil_floor(kii, model.a_star_II)
    return Problem(spec=spec, mesh=mesh, model=model, m_full=m_full,
                   alpha_lb=coercivity_lower_bound(model, fixed=floor))


def example2_load(problem, k, ms):
    """Exact-data load (volume + flux + Robin) and Dirichlet trace."""
    k0, al, be = (float(v) for v in k)
    mesh = problem.mesh

    def f(p):
        return k0 * (-ms.laplacian(p)) + al * ms.value(p)

    vec = assemble_load_volume(mesh, f)
    # outward normal is (0,-1) on the bottom edge and (1,0) on the right
    vec += assemble_load_boundary(mesh, "bottom", lambda p: -k0 * ms.grad(p)[:, 1])
    vec += assemble_load_boundary(
        mesh, "right", lambda p: k0 * ms.grad(p)[:, 0] + be * ms.value(p))
    g_b = ms.value(mesh.nodes[problem.model.dirichlet])
    return vec[problem.model.free], g_b


def example3_direct_operator(problem, k3):
    """Full-order stiffness blocks with the exact pullback tensor at k3."""
    mesh = problem.mesh
    cent = mesh.nodes[mesh.triangles].mean(axis=1)
    g = problem.surrogate.radial_map.jacobian_tensor(cent, k3)
    a0 = assemble_stiffness(mesh, region=0, coefficient=g)
    a1 = assemble_stiffness(mesh, region=1, coefficient=g)
    return a0, a1


def example3_direct_solve(problem, k):
    """Truth solve against the exactly assembled (non-affine) operator."""
    a0, a1 = example3_direct_operator(problem, float(k[2]))
    a = (float(k[0]) * a0 + a1).tocsr()
    free = problem.model.free
    a_ii = a[free][:, free].tocsc()
    return splu(a_ii).solve(problem.model.load_interior(k))
