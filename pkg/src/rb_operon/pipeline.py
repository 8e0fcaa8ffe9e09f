"""End-to-end orchestration over artifact directories.

``run_offline`` builds everything that does not depend on a query parameter
(mesh, affine operator family, data modes, trunks, reduced blocks) and
persists it with a manifest.  ``run_train`` fits a branch network against
the persisted reduced systems.  ``run_eval`` draws fresh test parameters,
runs truth solves plus every surrogate, and writes a metrics report.
``online_budget_audit`` times the online path on two mesh resolutions and
checks that its allocations do not grow with the full-order dimension.

Artifacts are deterministic functions of (configuration, seeds): no
timestamps, sorted-key JSON, fixed binary array format.
"""

import time
import tracemalloc
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import solve_triangular

from .artifacts import (ArtifactDir, load_boundary_modes, load_case2_blocks,
                        load_net, load_source_modes, load_space,
                        load_surrogate, save_boundary_modes,
                        save_case2_blocks, save_net, save_source_modes,
                        save_space, save_surrogate)
from .assembly import aggregated_load, full_field, interior_factor, truth_solve
from .branchnet import (MLP, ResidualData, Standardizer, SupervisedData,
                        TrainConfig, forward, train)
from .datamodes import (boundary_greedy, case2_blocks, encode_boundary,
                        encode_source, reduced_rhs_case2,
                        reduced_rhs_case2_batch, source_greedy)
from .examples import (HIDDEN_SIZES, ExampleSpec, ManufacturedSolution,
                       build_problem, example3_direct_solve, example2_load,
                       example_spec, sample_parameters, sample_xi)
from .geomap import eim_coefficients
from .mesh import min_angle_deg, read_mesh_text, write_mesh_text
from .metrics import MethodMetrics, MetricsReport, metric_context, sample_metrics
from .reduction import (OnlineRB, greedy_build, pod_build, solve_reduced,
                        solve_reduced_batch)
from .svgplot import line_plot, mesh_heatmap

FOOTNOTE = ("rows are limited to the methods implemented here; "
            "external baselines are omitted.")

# branch shape is fixed; only the input/output widths vary per benchmark
NOMINAL_PARAM_COUNTS = {1: 198915, 2: 288977, 3: 199685}

_SIZE_KEYS = ("n_pool", "n_train", "n_val", "n_test")
_TRUNK_KEYS = ("pod_tol", "pod_fixed_n", "greedy_tol", "greedy_fixed_n")
_MESH_KEYS = ("h", "n", "r0")
_DATA_KEYS = ("mode_tol", "r_f_max", "r_g_max", "sweep_subset",
              "eim_q", "eim_train")


def apply_overrides(spec, overrides):
    """Return a copy of ``spec`` with named constants replaced.

    Accepted keys: pool/train/val/test sizes, trunk tolerances and fixed
    dimensions, mesh recipe knobs present in the recipe, and data-family
    knobs present for the example.  Anything else raises ValueError.
    """
    if not overrides:
        return spec
    kwargs = {}
    recipe = dict(spec.mesh_recipe)
    trunk = dict(spec.trunk)
    data = {k: (dict(v) if isinstance(v, dict) else v)
            for k, v in spec.data.items()}
    for key, val in overrides.items():
        if key in _SIZE_KEYS:
            kwargs[key] = int(val)
        elif key in _TRUNK_KEYS:
            trunk[key] = None if val is None else (
                int(val) if key.endswith("_fixed_n") else float(val))
        elif key in _MESH_KEYS:
            if key not in recipe:
                raise ValueError(f"mesh recipe has no knob {key!r}")
            recipe[key] = int(val) if key == "n" else float(val)
        elif key in _DATA_KEYS:
            if key not in data:
                raise ValueError(f"example has no data knob {key!r}")
            cur = data[key]
            data[key] = type(cur)(val)
        else:
            raise ValueError(f"unknown override {key!r}")
    return replace(spec, mesh_recipe=recipe, trunk=trunk, data=data, **kwargs)


def spec_from_manifest(manifest):
    """Rebuild the pinned configuration recorded by ``run_offline``."""
    return ExampleSpec(
        example=int(manifest["example"]),
        param_ranges=tuple(tuple(r) for r in manifest["param_ranges"]),
        k_star=tuple(manifest["k_star"]),
        mesh_recipe=manifest["mesh_recipe"],
        trunk=manifest["trunk"],
        data=manifest["data"],
        **{k: int(manifest["sizes"][k]) for k in _SIZE_KEYS},
    )


def theta_batch(example, ks, surrogate=None):
    """Operator weights theta_a for a batch of parameter rows."""
    ks = np.atleast_2d(np.asarray(ks, dtype=float))
    if example == 1:
        return np.column_stack([ks[:, 0], np.ones(len(ks))])
    if example == 2:
        return ks.copy()
    alphas = np.vstack([eim_coefficients(surrogate, r) for r in ks[:, 2]])
    return np.hstack([alphas, ks[:, 0:1] * alphas])


def _pool_snapshots(model, ks, f_hat_all):
    out = np.empty_like(f_hat_all)
    for i, k in enumerate(ks):
        out[:, i] = interior_factor(model, k).solve(f_hat_all[:, i])
    return out


def _example2_pool(problem, ks, xis):
    """Data loads and Dirichlet traces for every pool sample (columns)."""
    n = len(ks)
    f_data = np.empty((problem.model.n_free, n))
    g_data = np.empty((len(problem.model.dirichlet), n))
    for i in range(n):
        ms = ManufacturedSolution.from_xi(xis[i])
        f_data[:, i], g_data[:, i] = example2_load(problem, ks[i], ms)
    return f_data, g_data


def _attach_mass(problem, space):
    space.mass_rb = space.psi.T @ (problem.m_ii @ space.psi)
    return space


def build_data_modes(problem, spec, adir, rng):
    """Sample the data pool and compress it into source/boundary modes.

    Persists the pool draws, the mode bases and the per-sample modal
    coordinates; returns what the trunk stage needs on top of that.
    """
    model = problem.model
    ks = sample_parameters(spec, spec.n_pool, rng)
    adir.save_array("pool_params", ks)
    xis = sample_xi(spec, spec.n_pool, rng)
    adir.save_array("pool_xi", xis)
    f_data, g_data = _example2_pool(problem, ks, xis)
    f_hat_all = np.empty_like(f_data)
    for i in range(spec.n_pool):
        f_hat_all[:, i] = aggregated_load(model, ks[i], f_data[:, i],
                                          g_data[:, i])
    smodes = source_greedy(model, f_data, tol=spec.data["mode_tol"],
                           r_max=spec.data["r_f_max"], rng=rng)
    bmodes = boundary_greedy(model, g_data, tol=spec.data["mode_tol"],
                             r_max=spec.data["r_g_max"], rng=rng)
    save_source_modes(adir, smodes)
    save_boundary_modes(adir, bmodes)
    adir.save_array("pool_a", encode_source(smodes, f_data).T)
    adir.save_array("pool_b", encode_boundary(bmodes, model, g_data).T)
    return ks, f_hat_all, smodes, bmodes


def run_offline(example, outdir, seed=0, pod=True, overrides=None):
    """Build and persist the parameter-independent half of one benchmark.

    Writes mesh, sampled pools, data modes (example 2), EIM surrogate
    (example 3), greedy trunk with its certification trace, optional POD
    trunk with supervised targets, and a manifest of every constant.
    """
    spec = apply_overrides(example_spec(example), overrides)
    adir = ArtifactDir(outdir)
    rng = np.random.default_rng(seed)
    problem = build_problem(spec)
    model = problem.model
    write_mesh_text(problem.mesh, adir.file("mesh.txt"))

    manifest = {
        "example": spec.example,
        "seed": seed,
        "param_ranges": [list(r) for r in spec.param_ranges],
        "k_star": list(spec.k_star),
        "mesh_recipe": spec.mesh_recipe,
        "trunk": spec.trunk,
        "data": spec.data,
        "sizes": {k: getattr(spec, k) for k in _SIZE_KEYS},
        "hidden_sizes": list(HIDDEN_SIZES),
        "alpha_lb": problem.alpha_lb,
        "mesh": {
            "n_nodes": problem.mesh.n_nodes,
            "n_triangles": problem.mesh.n_triangles,
            "n_free": model.n_free,
            "n_dirichlet": len(model.dirichlet),
            "min_angle_deg": min_angle_deg(problem.mesh),
        },
    }

    bmodes = smodes = None
    if spec.example == 2:
        ks, f_hat_all, smodes, bmodes = build_data_modes(problem, spec,
                                                         adir, rng)
        manifest["dims_modes"] = {"r_f": smodes.rank, "r_g": bmodes.rank}
        sweep = np.arange(min(int(spec.data["sweep_subset"]), spec.n_pool))
        space_g, gtrace = greedy_build(
            model, ks, f_hat_all=f_hat_all,
            tol=spec.trunk.get("greedy_tol"),
            fixed_n=spec.trunk.get("greedy_fixed_n"),
            n_max=spec.trunk.get("greedy_n_max"),
            alpha_lb=problem.alpha_lb, sweep_subset=sweep)
    else:
        ks = sample_parameters(spec, spec.n_pool, rng)
        adir.save_array("pool_params", ks)
        f_hat_all = np.column_stack([model.load_interior(k) for k in ks])
        space_g, gtrace = greedy_build(
            model, ks, f_hat_all=f_hat_all,
            tol=spec.trunk.get("greedy_tol"),
            fixed_n=spec.trunk.get("greedy_fixed_n"),
            n_max=spec.trunk.get("greedy_n_max"),
            alpha_lb=problem.alpha_lb)

    save_space(adir, "greedy", _attach_mass(problem, space_g))
    adir.save_json("greedy_trace", {
        "selected": gtrace.selected,
        "params": gtrace.params,
        "max_estimator": gtrace.max_estimator,
        "basis_size": gtrace.basis_size,
        "rounds": gtrace.rounds,
    })
    manifest["dims_trunk"] = {"greedy_n": space_g.dim}
    line_plot(adir.file("greedy_decay.svg"),
              [("max estimator", gtrace.basis_size, gtrace.max_estimator)],
              title=f"example {spec.example}: greedy certification",
              xlabel="basis size", ylabel="max estimator", logy=True)

    if spec.example == 2:
        save_case2_blocks(adir, case2_blocks(model, space_g.psi, bmodes,
                                             smodes), "case2_greedy")
    if spec.example == 3:
        save_surrogate(adir, problem.surrogate)
        manifest["dims_eim"] = {"q": problem.surrogate.rank}
        line_plot(adir.file("eim_decay.svg"),
                  [("sup-norm error",
                    np.arange(1, problem.surrogate.rank + 1),
                    problem.surrogate.trace)],
                  title="tensor interpolation greedy",
                  xlabel="basis size", ylabel="training error", logy=True)

    if pod:
        snaps = _pool_snapshots(model, ks, f_hat_all)
        space_p = pod_build(model, snaps, tol=spec.trunk.get("pod_tol"),
                            fixed_n=spec.trunk.get("pod_fixed_n"))
        space_p.alpha_lb = problem.alpha_lb
        save_space(adir, "pod", _attach_mass(problem, space_p))
        a_snaps = model.a_star_II @ snaps
        adir.save_array("pod_targets", (space_p.psi.T @ a_snaps).T)
        adir.save_array("pod_squares", np.einsum("ij,ij->j", snaps, a_snaps))
        manifest["dims_trunk"]["pod_n"] = space_p.dim
        if spec.example == 2:
            save_case2_blocks(adir, case2_blocks(model, space_p.psi, bmodes,
                                                 smodes), "case2_pod")

    adir.write_manifest(manifest)
    return adir


def _load_trained(adir, prefix):
    if adir.has(prefix + "_net.json"):
        net, std, _ = load_net(adir, prefix)
        return net, std
    return None


def _features_fresh(spec, ks):
    return np.asarray(ks, dtype=float)


def run_train(outdir, method="rb", seed=1, config=None):
    """Fit the branch network for one surrogate and persist it.

    method "rb": greedy trunk, label-free residual loss on the reduced
    variational system.  method "pod": POD trunk, supervised loss on the
    pool snapshots' trunk coordinates.
    """
    if method not in ("rb", "pod"):
        raise ValueError(f"unknown training method {method!r}")
    adir = ArtifactDir(outdir)
    manifest = adir.read_manifest()
    spec = spec_from_manifest(manifest)
    prefix = "greedy" if method == "rb" else "pod"
    if not adir.has(prefix + "_psi.arr"):
        raise ValueError(f"no {prefix} trunk in {outdir}; run the offline "
                         "stage first")
    space = load_space(adir, prefix)
    surrogate = load_surrogate(adir) if spec.example == 3 else None

    opts = {"seed": seed, "loss": "residual" if method == "rb" else "supervised"}
    opts.update(config or {})
    cfg = TrainConfig(**opts)

    if method == "rb":
        if spec.example == 2:
            ks = adir.load_array("pool_params")
            a_co = adir.load_array("pool_a")
            b_co = adir.load_array("pool_b")
            feats = np.column_stack([ks, a_co, b_co])
            theta = theta_batch(2, ks)
            blocks = load_case2_blocks(adir, "case2_greedy")
            f_rb = reduced_rhs_case2_batch(blocks, theta, a_co, b_co)
        else:
            rng = np.random.default_rng(seed)
            ks = sample_parameters(spec, spec.n_train + spec.n_val, rng)
            feats = _features_fresh(spec, ks)
            theta = theta_batch(spec.example, ks, surrogate)
            f_rb = ks[:, 1:2] @ space.f_blocks
        c_n = solve_reduced_batch(space.a_blocks, theta, f_rb)
        a_flat = space.a_blocks.reshape(space.a_blocks.shape[0], -1)

        def subset(sl):
            return ResidualData(features=feats[sl], theta=theta[sl],
                                a_flat=a_flat, c_n=c_n[sl])
    else:
        if spec.example == 2:
            ks = adir.load_array("pool_params")
            feats = np.column_stack([ks, adir.load_array("pool_a"),
                                     adir.load_array("pool_b")])
        else:
            ks = adir.load_array("pool_params")
            feats = _features_fresh(spec, ks)
        targets = adir.load_array("pod_targets")
        squares = adir.load_array("pod_squares")

        def subset(sl):
            return SupervisedData(features=feats[sl], m_n=space.gram_ref,
                                  targets=targets[sl], squares=squares[sl])

    n_total = len(feats)
    n_tr = min(spec.n_train, n_total)
    n_va = min(spec.n_val, n_total - n_tr)
    if n_va <= 0:
        raise ValueError("no validation samples left after the train split")
    data_tr = subset(slice(0, n_tr))
    data_va = subset(slice(n_tr, n_tr + n_va))

    net = MLP([feats.shape[1], *HIDDEN_SIZES, space.dim], seed=seed)
    net, std, hist = train(net, data_tr, data_va, cfg)
    save_net(adir, method, net, std, hist)
    epochs = np.arange(1, len(hist.train_loss) + 1)
    line_plot(adir.file(f"{method}_loss.svg"),
              [("train", epochs, hist.train_loss),
               ("validation", epochs, hist.val_loss)],
              title=f"{method} branch training", xlabel="epoch",
              ylabel="loss", logy=True)
    adir.update_manifest(**{f"train_{method}": {
        "seed": seed,
        "n_train": n_tr,
        "n_val": n_va,
        "epochs_run": len(hist.train_loss),
        "best_epoch": hist.best_epoch,
        "stopped_epoch": hist.stopped_epoch,
        "n_params": net.n_params,
        "config": {"epochs": cfg.epochs, "batch": cfg.batch, "lr": cfg.lr,
                   "weight_decay": cfg.weight_decay, "loss": cfg.loss},
    }})
    return net, std, hist


@dataclass
class _EvalCase:
    """One test parameter with everything a method needs to be judged."""

    k: np.ndarray
    theta: np.ndarray
    u_ref: np.ndarray        # free-node truth (lifting included)
    lift: np.ndarray         # free-node lifting part shared by predictions
    g_b: np.ndarray          # Dirichlet trace (empty when homogeneous)
    features: np.ndarray
    f_rb: dict               # per-trunk reduced right-hand side
    f_hat: np.ndarray        # aggregated full-order load (certification)


def _eval_cases(adir, spec, problem, spaces, ks, rng):
    """Truth solves plus per-trunk reduced data for every test parameter."""
    model = problem.model
    surrogate = problem.surrogate
    theta_all = theta_batch(spec.example, ks, surrogate)
    cases = []
    if spec.example == 2:
        smodes = load_source_modes(adir)
        bmodes = load_boundary_modes(adir)
        blocks = {name: load_case2_blocks(adir, f"case2_{name}")
                  for name in spaces}
        xis = sample_xi(spec, len(ks), rng)
        for i, k in enumerate(ks):
            ms = ManufacturedSolution.from_xi(xis[i])
            f_data, g_b = example2_load(problem, k, ms)
            f_hat = aggregated_load(model, k, f_data, g_b)
            w = truth_solve(model, k, f_hat)
            lift = model.lift_block @ g_b
            a_co = encode_source(smodes, f_data)
            b_co = encode_boundary(bmodes, model, g_b)
            f_rb = {name: reduced_rhs_case2(blocks[name], theta_all[i],
                                            a_co, b_co)
                    for name in spaces}
            cases.append(_EvalCase(
                k=k, theta=theta_all[i], u_ref=w + lift, lift=lift, g_b=g_b,
                features=np.concatenate([k, a_co, b_co]),
                f_rb=f_rb, f_hat=f_hat))
        return cases
    none_g = np.zeros(len(model.dirichlet))
    for i, k in enumerate(ks):
        f_hat = model.load_interior(k)
        if spec.example == 3:
            u_ref = example3_direct_solve(problem, k)
        else:
            u_ref = truth_solve(model, k, f_hat)
        f_rb = {name: float(k[1]) * spaces[name].f_blocks[0]
                for name in spaces}
        cases.append(_EvalCase(
            k=k, theta=theta_all[i], u_ref=u_ref,
            lift=np.zeros(model.n_free), g_b=none_g,
            features=np.asarray(k, dtype=float), f_rb=f_rb, f_hat=f_hat))
    return cases


def run_eval(outdir, n_test=None, seed=2, methods=None, plots=False):
    """Fresh-sample comparison of every available surrogate.

    Reports relative L2, relative reference-energy and reduced-residual
    measures per method (mean and 95th percentile), written as report.json
    and an aligned report.txt next to the artifacts.
    """
    adir = ArtifactDir(outdir)
    manifest = adir.read_manifest()
    spec = spec_from_manifest(manifest)
    mesh = read_mesh_text(adir.file("mesh.txt"))
    surrogate = load_surrogate(adir) if spec.example == 3 else None
    problem = build_problem(spec, mesh=mesh, surrogate=surrogate)
    model = problem.model

    spaces = {"greedy": load_space(adir, "greedy")}
    if adir.has("pod_psi.arr"):
        spaces["pod"] = load_space(adir, "pod")
    nets = {m: _load_trained(adir, m) for m in ("rb", "pod")}

    available = ["rb_galerkin"]
    if nets["rb"] is not None:
        available.append("rb_deeponet")
    if nets["pod"] is not None and "pod" in spaces:
        available.append("pod_deeponet")
    methods = list(methods) if methods else available
    unknown = set(methods) - {"rb_galerkin", "rb_deeponet", "pod_deeponet"}
    if unknown:
        raise ValueError(f"unknown evaluation methods {sorted(unknown)}")
    missing = set(methods) - set(available)
    if missing:
        raise ValueError(f"methods {sorted(missing)} lack trained artifacts")

    trunk_of = {"rb_galerkin": "greedy", "rb_deeponet": "greedy",
                "pod_deeponet": "pod"}
    used = {trunk_of[m] for m in methods}
    spaces = {name: spaces[name] for name in used}

    n_test = int(n_test or spec.n_test)
    rng = np.random.default_rng(seed)
    ks = sample_parameters(spec, n_test, rng)
    cases = _eval_cases(adir, spec, problem, spaces, ks, rng)

    contexts = {name: metric_context(model, spaces[name], problem.m_ii)
                for name in spaces}
    feats = np.vstack([c.features for c in cases])
    coeffs = {}
    for method in methods:
        trunk = trunk_of[method]
        space = spaces[trunk]
        if method == "rb_galerkin":
            f_rb_all = np.vstack([c.f_rb[trunk] for c in cases])
            theta_all = np.vstack([c.theta for c in cases])
            coeffs[method] = solve_reduced_batch(space.a_blocks, theta_all,
                                                 f_rb_all)
        else:
            net, std = nets["rb" if method == "rb_deeponet" else "pod"]
            coeffs[method] = forward(net, std, feats)

    triples = {m: [] for m in methods}
    for i, case in enumerate(cases):
        a_rb = {name: np.tensordot(case.theta, spaces[name].a_blocks, axes=1)
                for name in spaces}
        for method in methods:
            trunk = trunk_of[method]
            c = coeffs[method][i]
            u_pred = spaces[trunk].psi @ c + case.lift
            triples[method].append(sample_metrics(
                contexts[trunk], case.u_ref, u_pred, a_rb[trunk],
                case.f_rb[trunk], c))

    report = MetricsReport(
        methods={m: MethodMetrics.from_triples(triples[m]) for m in methods},
        n_samples=n_test,
        seed=seed,
        footnote=FOOTNOTE,
        extras={
            "example": spec.example,
            "dims": manifest.get("dims_trunk", {}),
            "modes": manifest.get("dims_modes", {}),
            "eim": manifest.get("dims_eim", {}),
            "alpha_lb": manifest.get("alpha_lb"),
        },
    )
    adir.save_json("report", report.to_json_dict())
    adir.save_text("report.txt", report.format_table() + "\n")

    if plots:
        case = cases[0]
        # full_field treats its first argument as the homogeneous part
        truth_nodes = full_field(model, case.u_ref - case.lift, case.g_b)
        mesh_heatmap(adir.file("field_truth.svg"), mesh, truth_nodes,
                     title="truth, first test parameter")
        best = methods[-1]
        c0 = coeffs[best][0]
        pred_hom = spaces[trunk_of[best]].psi @ c0
        mesh_heatmap(adir.file("field_pred.svg"), mesh,
                     full_field(model, pred_hom, case.g_b),
                     title=f"{best} prediction")
        err = np.abs(pred_hom + case.lift - case.u_ref)
        mesh_heatmap(adir.file("field_error.svg"), mesh,
                     full_field(model, err), title=f"{best} absolute error")
    return report


@dataclass
class OnlineBundle:
    """Reduced-size state of the online path; never holds a trunk matrix."""

    example: int
    online: OnlineRB
    chol_star: np.ndarray
    net: object
    std: object
    theta_fn: object
    blocks: object = None      # modal right-hand-side blocks (example 2)
    n_free: int = 0

    def arrays(self):
        out = [self.online.a_blocks, self.online.f_blocks, self.chol_star,
               self.std.mean, self.std.std]
        out += self.net.parameters()
        if self.blocks is not None:
            out += [self.blocks.f_s, self.blocks.g_p]
        return out

    def shapes(self):
        return sorted(tuple(int(d) for d in a.shape) for a in self.arrays())

    def max_dim(self):
        return max(max(s) for s in self.shapes() if s)


def _ex3_theta_fn(adir):
    """Pivot-only tensor interpolation weights; O(Q^2) and mesh-free."""
    from .geomap import RadialMap

    meta = adir.load_json("eim_meta")
    rm = RadialMap(**meta["radial_map"])
    pivots = adir.load_array("eim_pivots")
    points = adir.load_array("eim_points")
    pivot_points = points[pivots // 3].copy()
    pivot_comps = (pivots % 3).copy()
    tri_mat = adir.load_array("eim_tri_mat")
    del points
    rows = np.arange(len(pivot_comps))

    def fn(k):
        g = rm.jacobian_tensor(pivot_points, float(k[2]))
        comps = np.stack([g[:, 0, 0], g[:, 0, 1], g[:, 1, 1]], axis=1)
        alpha = solve_triangular(tri_mat, comps[rows, pivot_comps], lower=True)
        return np.concatenate([alpha, float(k[0]) * alpha])

    return fn


def load_online_bundle(adir):
    """Online-path state from a finished offline directory.

    Loads only reduced-size arrays (the trunk stays on disk); when no
    trained branch exists an untrained one of the right shape stands in,
    which is enough for budget measurements.
    """
    manifest = adir.read_manifest()
    example = int(manifest["example"])
    a_blocks = adir.load_array("greedy_a_blocks")
    f_blocks = adir.load_array("greedy_f_blocks")
    meta = adir.load_json("greedy_meta")
    online = OnlineRB(a_blocks=a_blocks, f_blocks=f_blocks,
                      alpha_lb=float(meta["alpha_lb"]))
    k_star = np.asarray(manifest["k_star"], dtype=float)
    blocks = None
    if example == 2:
        blocks = load_case2_blocks(adir, "case2_greedy")
        theta_fn = lambda k: np.asarray(k, dtype=float)
        d_in = len(k_star) + blocks.f_s.shape[0] + blocks.g_p.shape[1]
    elif example == 3:
        theta_fn = _ex3_theta_fn(adir)
        d_in = len(k_star)
    else:
        theta_fn = lambda k: np.array([k[0], 1.0])
        d_in = len(k_star)
    chol_star = np.linalg.cholesky(
        np.tensordot(theta_fn(k_star), a_blocks, axes=1))
    if adir.has("rb_net.json"):
        net, std, _ = load_net(adir, "rb")
    else:
        net = MLP([d_in, *HIDDEN_SIZES, a_blocks.shape[1]], seed=0)
        std = Standardizer(mean=np.zeros(d_in), std=np.ones(d_in))
    return OnlineBundle(example=example, online=online, chol_star=chol_star,
                        net=net, std=std, theta_fn=theta_fn, blocks=blocks,
                        n_free=int(manifest["mesh"]["n_free"]))


def online_query(bundle, k, a=None, b=None):
    """One certified online prediction: branch, Galerkin, residual norm."""
    if bundle.example == 2:
        feats = np.concatenate([k, a, b])
    else:
        feats = np.asarray(k, dtype=float)
    c_net = bundle.net.forward(feats[None, :], bundle.std)[0]
    theta = bundle.theta_fn(k)
    a_rb = np.tensordot(theta, bundle.online.a_blocks, axes=1)
    if bundle.example == 2:
        f_rb = reduced_rhs_case2(bundle.blocks, theta, a, b)
    else:
        f_rb = float(k[1]) * bundle.online.f_blocks[0]
    c_gal = solve_reduced(a_rb, f_rb)
    r = f_rb - a_rb @ c_net
    res = float(np.linalg.norm(np.linalg.solve(bundle.chol_star, r)))
    return c_net, c_gal, res


def _draw_queries(manifest, n, seed):
    rng = np.random.default_rng(seed)
    pr = np.asarray(manifest["param_ranges"], dtype=float)
    ks = rng.uniform(pr[:, 0], pr[:, 1], size=(n, pr.shape[0]))
    if int(manifest["example"]) != 2:
        return [(k, None, None) for k in ks]
    r_f = int(manifest["dims_modes"]["r_f"])
    r_g = int(manifest["dims_modes"]["r_g"])
    a = rng.standard_normal((n, r_f))
    b = rng.standard_normal((n, r_g))
    return [(ks[i], a[i], b[i]) for i in range(n)]


def _time_queries(bundle, queries, rounds=7):
    best = np.inf
    for _ in range(rounds):
        t0 = time.perf_counter()
        for q in queries:
            online_query(bundle, *q)
        best = min(best, time.perf_counter() - t0)
    return best / len(queries)


def _alloc_peak(bundle, queries, reps=15):
    """Median per-query transient allocation (bytes above the pre-call line)."""
    tracemalloc.start()
    online_query(bundle, *queries[0])
    peaks = []
    for q in queries[1:reps + 1]:
        cur0 = tracemalloc.get_traced_memory()[0]
        tracemalloc.reset_peak()
        online_query(bundle, *q)
        _, peak = tracemalloc.get_traced_memory()
        peaks.append(peak - cur0)
    tracemalloc.stop()
    return float(np.median(peaks))


def _doubled_recipe(recipe):
    out = dict(recipe)
    if recipe["kind"] == "inclusion":
        return {"h": recipe["h"] / np.sqrt(2.0)}
    return {"n": int(round(recipe["n"] * np.sqrt(2.0)))}


def online_budget_audit(outdir, doubled_dir=None, n_queries=200, seed=7):
    """Prove the online path is independent of the full-order dimension.

    Builds (or reuses) a second offline directory on a mesh with roughly
    twice the nodes but identical reduced dimensions, then compares the
    per-query wall time and the per-query transient allocation between the
    two.  All results land in audit.json next to the base artifacts.
    """
    adir = ArtifactDir(outdir)
    manifest = adir.read_manifest()
    example = int(manifest["example"])
    if doubled_dir is None:
        doubled_dir = adir.path.rstrip("/\\") + "_x2"
    d_adir = ArtifactDir(doubled_dir)
    if not d_adir.has("manifest.json"):
        overrides = dict(_doubled_recipe(manifest["mesh_recipe"]))
        overrides["greedy_fixed_n"] = int(manifest["dims_trunk"]["greedy_n"])
        overrides["greedy_tol"] = None
        if example == 2:
            overrides["mode_tol"] = 0.0
            overrides["r_f_max"] = int(manifest["dims_modes"]["r_f"])
            overrides["r_g_max"] = int(manifest["dims_modes"]["r_g"])
        run_offline(example, doubled_dir, seed=int(manifest["seed"]),
                    pod=False, overrides=overrides)

    base = load_online_bundle(adir)
    doubled = load_online_bundle(d_adir)
    queries = _draw_queries(manifest, n_queries, seed)

    shapes_equal = base.shapes() == doubled.shapes()
    t_base = _time_queries(base, queries)
    t_doubled = _time_queries(doubled, queries)
    alloc_base = _alloc_peak(base, queries)
    alloc_doubled = _alloc_peak(doubled, queries)
    slack = max(4096.0, 0.02 * alloc_base)

    result = {
        "n_free": {"base": base.n_free, "doubled": doubled.n_free},
        "n_free_ratio": doubled.n_free / base.n_free,
        "reduced_shapes_equal": shapes_equal,
        "max_array_dim": {"base": base.max_dim(), "doubled": doubled.max_dim()},
        "per_query_seconds": {"base": t_base, "doubled": t_doubled},
        "time_ratio": t_doubled / t_base,
        "alloc_peak_bytes": {"base": alloc_base, "doubled": alloc_doubled},
        "alloc_gap_bytes": abs(alloc_doubled - alloc_base),
        "alloc_within_slack": bool(abs(alloc_doubled - alloc_base) <= slack),
        "n_queries": n_queries,
        "seed": seed,
    }
    adir.save_json("audit", result)
    return result


def _gate(fails, name, value, bound):
    if not value <= bound:
        fails.append(f"{name}: {value:.3e} exceeds {bound:.3e}")


def _within(value, nominal, frac):
    return abs(value - nominal) <= frac * nominal


def bench_gates(example, report, manifest, audit=None):
    """The pinned pass/fail bounds for one benchmark report."""
    s = report.summary()
    fails = []
    if example == 1:
        _gate(fails, "rb_galerkin rel_l2 mean",
              s["rb_galerkin"]["rel_l2"]["mean"], 1e-5)
        _gate(fails, "rb_galerkin rel_residual mean",
              s["rb_galerkin"]["rel_residual"]["mean"], 1e-12)
        if "rb_deeponet" in s:
            _gate(fails, "rb_deeponet rel_l2 mean",
                  s["rb_deeponet"]["rel_l2"]["mean"], 2e-2)
            _gate(fails, "rb_deeponet rel_l2 p95",
                  s["rb_deeponet"]["rel_l2"]["p95"], 5e-2)
        if "pod_deeponet" in s:
            _gate(fails, "pod_deeponet rel_l2 mean",
                  s["pod_deeponet"]["rel_l2"]["mean"], 2e-2)
    elif example == 2:
        _gate(fails, "rb_galerkin rel_l2 mean",
              s["rb_galerkin"]["rel_l2"]["mean"], 1e-2)
        if "rb_deeponet" in s:
            _gate(fails, "rb_deeponet rel_l2 mean",
                  s["rb_deeponet"]["rel_l2"]["mean"], 5e-2)
        dims = manifest["dims_trunk"]
        modes = manifest["dims_modes"]
        for label, value, nominal in (("trunk dimension", dims["greedy_n"], 209),
                                      ("source rank", modes["r_f"], 128),
                                      ("boundary rank", modes["r_g"], 16)):
            if not _within(value, nominal, 0.30):
                fails.append(f"{label} {value} outside 30% of {nominal}")
    else:
        _gate(fails, "rb_galerkin rel_l2 mean",
              s["rb_galerkin"]["rel_l2"]["mean"], 5e-3)
        if "rb_deeponet" in s:
            _gate(fails, "rb_deeponet rel_l2 mean",
                  s["rb_deeponet"]["rel_l2"]["mean"], 8e-2)
    if example in NOMINAL_PARAM_COUNTS and example != 2:
        counted = manifest.get("train_rb", {}).get("n_params")
        if counted is not None and counted != NOMINAL_PARAM_COUNTS[example]:
            fails.append(f"branch parameter count {counted} != "
                         f"{NOMINAL_PARAM_COUNTS[example]}")
    if audit is not None:
        if not audit["reduced_shapes_equal"]:
            fails.append("online arrays changed shape under mesh refinement")
        if not audit["alloc_within_slack"]:
            fails.append("online allocation grew under mesh refinement")
        _gate(fails, "online time change", abs(audit["time_ratio"] - 1.0), 0.2)
    return fails


def run_bench(example, outdir, seed=0, check=False, pod=None, audit=None,
              train_config=None, overrides=None):
    """Offline + training + evaluation for one benchmark, with gates.

    Returns (report, fails); ``fails`` is non-empty when ``check`` is set
    and a pinned bound is violated.
    """
    if pod is None:
        pod = example in (1, 3)
    if audit is None:
        audit = example == 1
    adir = run_offline(example, outdir, seed=seed, pod=pod,
                       overrides=overrides)
    run_train(outdir, "rb", seed=seed + 1, config=train_config)
    if pod:
        run_train(outdir, "pod", seed=seed + 1, config=train_config)
    report = run_eval(outdir, seed=seed + 2, plots=True)
    audit_result = online_budget_audit(outdir) if audit else None
    fails = []
    if check:
        fails = bench_gates(example, report, adir.read_manifest(),
                            audit_result)
        adir.update_manifest(bench_check={"passed": not fails,
                                          "failures": fails})
    return report, fails
