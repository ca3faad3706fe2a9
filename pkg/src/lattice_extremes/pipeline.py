"""Config-driven experiment runner: census, simulation, estimation and comparison steps."""
from __future__ import annotations

import itertools
import json
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__, mc
from .config import ConfigError, ExperimentConfig, config_hash
from .exceedance_cluster import (default_g_grid, empirical_laplace, limit_laplace_psil, limit_laplace_q,
                                 normalizer)
from .extremal_index import (BlockScheme, ac_diagnostic, block_theta, frechet_fit, theta_index4,
                             theta_lattice_forms, theta_u_index)
from .field_models import (ConstantV, DeHaanMaxStable, IIDFrechet, LinearHeavyTail, MovingMaxima, ShiftedKernelV,
                           describe_model, kernel_from_list, marginal_tail, simulate_box, spectral_tail_oracle)
from .lattice_core import IndexSet, InvariantOrder, Sublattice, read_point_list
from .shape_analysis import analyze_structures, census, weight_identities
from .tail_spectral import (Bump, Modulus, SpectralBatch, Threshold, estimate_spectral_tail, pareto_check,
                            time_change_check, upsilon_tail_oracle)

ORDER = ("census", "simulate", "tailfield", "timechange", "ac", "theta", "laplace", "frechet")
DEPENDS = {
    "census": (),
    "simulate": (),
    "tailfield": ("simulate",),
    "timechange": (),
    "ac": ("simulate",),
    "theta": ("census", "simulate"),
    "laplace": ("census",),
    "frechet": ("simulate", "theta"),
}


class StepFailure(Exception):
    def __init__(self, step, msg):
        super().__init__(f"step {step} failed: {msg}")
        self.step = step


def with_dependencies(steps, analytic_theta: bool = True) -> list:
    """Close the step list under DEPENDS; models without an exact Θ also need tailfield."""
    want = set()

    def add(s):
        if s in want:
            return
        want.add(s)
        for d in DEPENDS[s]:
            add(d)
        if not analytic_theta and s in ("timechange", "laplace", "theta"):
            add("tailfield")

    for s in steps:
        add(s)
    return [s for s in ORDER if s in want]


# ---------------------------------------------------------------------------
# builders


def build_index_set(cfg) -> IndexSet:
    c = cfg.index_set
    if c.kind == "hyperrectangle":
        return IndexSet(itertools.product(*[range(1, n + 1) for n in c.n]))
    if c.kind == "file":
        lam, _ = read_point_list(c.path)
        return lam
    if c.kind == "lattice_union":
        k = len(c.offsets[0])
        L = Sublattice.from_generators(c.basis, k=k)
        n = c.n if len(c.n) == k else [c.n[0]] * k
        pts = set()
        for o in c.offsets:
            pts.update(L.points_in_box(tuple(o), [1] * k, n))
        return IndexSet(pts, k=k)
    if c.kind == "spacetime":
        if c.stations is not None:
            C = [tuple(s) for s in c.stations]
        else:
            C = list(read_point_list(c.stations_path)[0].points)
        return IndexSet([(c.period * t,) + tuple(s) for t in range(1, c.m + 1) for s in C])
    raise ValueError(c.kind)


def build_order(cfg, k: int) -> InvariantOrder:
    return InvariantOrder(k, tuple(cfg.order.perm) if cfg.order.perm is not None else None)


def build_model(mc_, k: int):
    if mc_.kind == "iid_frechet":
        return IIDFrechet(mc_.alpha, mc_.scale, k)
    if mc_.kind in ("moving_maxima", "linear"):
        if mc_.kernel_points:
            ker = tuple((tuple(kp.point), kp.weight) for kp in mc_.kernel_points)
        else:
            ker = tuple(((i,) + (0,) * (k - 1), w) for i, w in enumerate(mc_.kernel))
        return MovingMaxima(ker, mc_.alpha) if mc_.kind == "moving_maxima" else LinearHeavyTail(ker, mc_.alpha)
    v = mc_.v
    if v.kind == "constant":
        vs = ConstantV(v.c)
        vs.k = k
    else:
        vs = ShiftedKernelV([tuple(((i,) + (0,) * (k - 1), w) for i, w in enumerate(kk)) for kk in v.kernels],
                            v.probs)
    return DeHaanMaxStable(vs, envelope=mc_.envelope, rel_tol=mc_.rel_tol)


def build_g(gc):
    if gc.kind == "threshold":
        return Threshold(gc.level, gc.c)
    return Bump(gc.b1, gc.b2, gc.c)


def _unit(k, i=0, v=1):
    p = [0] * k
    p[i] = v
    return tuple(p)


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, (np.bool_, bool)):
        return bool(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating, float)):
        return float(o)
    if isinstance(o, Fraction):
        return str(o)
    if hasattr(o, "to_dict"):
        return _jsonable(o.to_dict())
    return o


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------


@dataclass
class Context:
    cfg: ExperimentConfig
    out: Path
    threads: int
    lam: IndexSet | None = None
    order: InvariantOrder | None = None
    model: object = None
    cache: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)

    def emit(self, step, name, obj=None):
        path = self.out / name
        if obj is not None:
            write_json(path, obj)
        self.outputs.setdefault(step, []).append(name)
        return path

    def seed(self, name):
        return mc.substream(self.cfg.seed, name)

    # grid of the bounding box of Λ and the mask of Λ inside it
    def grid(self):
        if "grid" not in self.cache:
            arr = self.lam.to_array()
            lo = arr.min(axis=0)
            shape = tuple(int(x) for x in arr.max(axis=0) - lo + 1)
            mask = np.zeros(shape, bool)
            mask[tuple((arr - lo).T)] = True
            self.cache["grid"] = (lo, shape, mask)
        return self.cache["grid"]

    def simulate(self, shape, count, name):
        block = self.cfg.simulate.block
        parts = mc.run_blocks(lambda g, n: simulate_box(self.model, shape, n, g), self.seed(name), count, block,
                              self.threads)
        return np.concatenate(parts, axis=0)

    def oracle(self):
        try:
            return spectral_tail_oracle(self.model)
        except TypeError:
            return None

    def a_n(self, size, tau=1.0):
        return normalizer(marginal_tail(self.model), [size], tau=tau).values[0]


# ---------------------------------------------------------------------------
# steps


def step_census(ctx: Context):
    c = ctx.cfg.census
    ps = sorted(set(c.ps))
    cens = {p: census(ctx.lam, p, ctx.order).to_json() for p in ps}
    rep = analyze_structures(ctx.lam, ps[-1], ctx.order, c.probe_radius)
    structs = []
    for i, s in enumerate(rep.structures):
        row = {"index": i, "key": [list(q) for q in s.key], "weight": str(s.weight), "weight_float": float(s.weight),
               "D": s.D.to_dict() if s.D is not None else None, "error": s.error}
        if s.xi is not None:
            row.update({"L": [list(b) for b in s.xi.L.basis], "E": [list(e) for e in s.xi.E],
                        "gamma_star": str(s.xi.gamma_star), "tip": s.xi.tip,
                        "b": s.partition.b})
        structs.append(row)
    out = {"n": len(ctx.lam), "k": ctx.lam.k, "order": ctx.order.to_dict(), "census": cens,
           "structures": structs, "i_star": rep.representatives, "xi_identity": str(rep.xi_identity())}
    if len(ps) >= 2:
        out["identities"] = weight_identities(ctx.lam, ps, ctx.order, c.probe_radius)
    if c.ns and ctx.cfg.index_set.kind == "hyperrectangle":
        sweep = {}
        for n in c.ns:
            lam = IndexSet(itertools.product(*[range(1, n + 1)] * ctx.lam.k))
            r = analyze_structures(lam, ps[-1], ctx.order, c.probe_radius)
            sweep[n] = {"xi_identity": str(r.xi_identity()), "shapes": len(r.census.shapes)}
        out["schedule"] = sweep
    ctx.cache["structures"] = rep
    ctx.emit("census", "census.json", out)


def step_simulate(ctx: Context):
    lo, shape, mask = ctx.grid()
    X = ctx.simulate(shape, ctx.cfg.simulate.realizations, "simulate")
    ctx.cache["fields"] = X
    vals = X[:, mask]
    tail = marginal_tail(ctx.model)
    levels = np.quantile(np.abs(vals), [0.5, 0.9, 0.99])
    # stationarity: two far-apart points against the analytic marginal
    idx = np.argwhere(mask)
    first, last = tuple(idx[0]), tuple(idx[-1])
    rows = []
    for u in levels:
        rows.append({"u": float(u), "analytic": float(tail(u)),
                     "empirical": float(np.mean(np.abs(vals) > u)),
                     "first_point": float(np.mean(np.abs(X[(slice(None),) + first]) > u)),
                     "last_point": float(np.mean(np.abs(X[(slice(None),) + last]) > u))})
    out = {"model": describe_model(ctx.model), "realizations": int(X.shape[0]), "grid": list(shape),
           "grid_origin": [int(v) for v in lo], "points": int(mask.sum()), "marginal": rows,
           "dkw_band": float(np.sqrt(np.log(40) / (2 * X.shape[0])))}
    ctx.emit("simulate", "simulate.json", out)
    if ctx.cfg.simulate.dump:
        from .field_models import FieldRealization

        pts = ctx.lam.to_array()
        real = FieldRealization(ctx.lam, X[0][tuple((pts - lo).T)], describe_model(ctx.model), ctx.cfg.seed)
        real.to_csv(ctx.out / "realization_0.csv", sidecar=ctx.out / "realization_0.json")
        ctx.emit("simulate", "realization_0.csv")
        ctx.emit("simulate", "realization_0.json")


def step_tailfield(ctx: Context):
    c = ctx.cfg.tailfield
    X = ctx.cache["fields"]
    k = ctx.lam.k
    W = list(itertools.product(range(-c.radius, c.radius + 1), repeat=k))
    alpha = getattr(ctx.model, "alpha", 1.0)
    oracle = ctx.oracle()
    _, _, mask = ctx.grid()
    res = []
    best = None
    for q in c.quantiles:
        u = float(np.quantile(np.abs(X[:, mask]), q))
        row = {"quantile": q, "u": u}
        try:
            b = estimate_spectral_tail(X, u, W, alpha, min_quantile=c.min_quantile)
        except ValueError as e:
            row["error"] = str(e)
            res.append(row)
            continue
        row["anchors"] = len(b)
        pc = pareto_check(b.radial, alpha)
        row["pareto"] = {"max_deviation": pc["max_deviation"], "band": pc["band"], "pass": pc["pass"]}
        e1 = _unit(k)
        th = b.column(e1)
        row["theta_e1_mean"] = float(th.mean())
        if oracle is not None:
            ref = oracle.sample(mc.rng(ctx.seed(f"tailfield/{q}")), 100_000, [e1])[:, 0]
            row["theta_e1_oracle_mean"] = float(ref.mean())
            row["theta_e1_mean_gap"] = abs(float(th.mean()) - float(ref.mean()))
        res.append(row)
        if len(b) >= 30:
            best = b
    if best is None:
        raise ValueError("no threshold gave at least 30 anchors")
    ctx.cache["theta_batch"] = best
    best.to_csv(ctx.out / "spectral_samples.csv")
    ctx.emit("tailfield", "spectral_samples.csv")
    ctx.emit("tailfield", "tailfield.json", {"window_radius": c.radius, "thresholds": res})


def _theta_sampler(ctx):
    smp = ctx.oracle()
    if smp is None:
        smp = ctx.cache.get("theta_batch")
    if smp is None:
        raise ValueError("no analytic Θ for this model: run tailfield first")
    return smp


class _Floored:
    """Empirical Θ with entries below tol set to 0, so 1(Θ_t ≠ 0) is meaningful at finite u."""

    def __init__(self, batch, tol):
        self.batch, self.tol = batch, tol

    def sample(self, rng, n, offsets):
        v = self.batch.sample(rng, n, offsets)
        return np.where(np.abs(v) < self.tol, 0.0, v)


def step_timechange(ctx: Context):
    c = ctx.cfg.timechange
    k = ctx.lam.k
    smp = _theta_sampler(ctx)
    if isinstance(smp, SpectralBatch):
        smp = _Floored(smp, c.zero_tol)
    alpha = getattr(ctx.model, "alpha", 1.0)
    pairs = c.pairs or [[[0], [0]], [[1], [1]], [[1], [0]], [[-1], [1]]]
    rows = []
    for gi, gc in enumerate(c.g):
        g = build_g(gc)
        for s, t in pairs:
            s = tuple(s) + (0,) * (k - len(s))
            t = tuple(t) + (0,) * (k - len(t))
            for version in ("theta", "Y"):
                r = time_change_check(smp, g, s, t, alpha, c.budget,
                                      seed=ctx.seed(f"timechange/{gi}/{s}/{t}/{version}"), version=version)
                r.update({"g": g.describe(), "version": version})
                rows.append(r)
    ctx.emit("timechange", "timechange.json", {"checks": rows, "all_pass": all(r["pass"] for r in rows)})


def _shapes(ctx, R):
    rep = ctx.cache["structures"]
    return [(s.D, float(s.weight)) for s in rep.structures if s.D is not None]


def _istar(ctx):
    rep = ctx.cache["structures"]
    return [s for s in rep.i_star() if s.xi.gamma_star > 0]


def _gammas(ctx, istar):
    # finite-n γ* rescaled so that Σ γ*|E| = 1, as it is in the limit
    tot = float(ctx.cache["structures"].xi_identity())
    return [float(s.xi.gamma_star) / tot for s in istar]


def step_laplace(ctx: Context):
    c = ctx.cfg.laplace
    gs = [build_g(x) for x in c.g] if c.g else default_g_grid()
    alpha = getattr(ctx.model, "alpha", 1.0)
    k = ctx.lam.k
    if c.sizes and ctx.cfg.index_set.kind == "hyperrectangle":
        sizes = list(c.sizes)
        grids = {n: ((n,) * k, None) for n in sizes}
    else:
        _, shape, mask = ctx.grid()
        sizes = [len(ctx.lam)]
        grids = {sizes[0]: (shape, mask)}
    emp = {}
    for n, (shape, mask) in grids.items():
        X = ctx.simulate(shape, c.realizations, f"laplace/{n}")
        size = int(np.prod(shape)) if mask is None else int(mask.sum())
        a = ctx.a_n(size)
        vals = X.reshape(X.shape[0], -1) if mask is None else X[:, mask]
        emp[n] = {"a": a, "sums": [g(vals / a).sum(axis=1) for g in gs]}
    smp = _theta_sampler(ctx)
    R = c.R
    if isinstance(smp, SpectralBatch):
        R = min(R, ctx.cfg.tailfield.radius)
    shapes = _shapes(ctx, R)
    istar = _istar(ctx)
    rows = []
    for gi, g in enumerate(gs):
        lim = limit_laplace_psil(smp, shapes, g, alpha, c.budget, R, seed=ctx.seed(f"laplace/limit/{gi}"),
                                 max_residual=c.max_residual)
        row = {"g": g.describe(), "limit": {"PsiL": lim}, "empirical": {}}
        if ctx.oracle() is not None and istar:
            smps = [upsilon_tail_oracle(ctx.model, Modulus.alpha_norm(s.xi.E, alpha)) for s in istar]
            structs = [(s.xi.E, s.xi.L, gm, sm.c_value()) for s, sm, gm in zip(istar, smps, _gammas(ctx, istar))]
            row["limit"]["QForm"] = limit_laplace_q(smps, structs, g, alpha, c.budget, R,
                                                    seed=ctx.seed(f"laplace/limitq/{gi}"),
                                                    max_residual=c.max_residual)
        for n in sizes:
            e = empirical_laplace(emp[n]["sums"][gi])
            e["a"] = emp[n]["a"]
            e["gap"] = abs(e["mean"] - lim["mean"])
            e["gap_se"] = float(np.hypot(e["se"], lim["se"]))
            row["empirical"][n] = e
        last = row["empirical"][sizes[-1]]
        row["pass"] = bool(last["gap"] <= 3 * last["gap_se"])
        rows.append(row)
    ctx.cache["laplace"] = {"sizes": sizes, "rows": rows}
    ctx.emit("laplace", "laplace.json", {"sizes": sizes, "rows": rows})
    with open(ctx.out / "laplace.csv", "w") as fh:
        fh.write("g_index,b1,c,n,empirical,empirical_se,limit,limit_se\n")
        for gi, row in enumerate(rows):
            for n in sizes:
                e = row["empirical"][n]
                lm = row["limit"]["PsiL"]
                fh.write(f"{gi},{row['g'].get('b1', row['g'].get('level'))},{row['g']['c']},{n},"
                         f"{e['mean']!r},{e['se']!r},{lm['mean']!r},{lm['se']!r}\n")
    ctx.emit("laplace", "laplace.csv")


def _box_fields(ctx):
    _, shape, mask = ctx.grid()
    if not mask.all():
        raise ValueError("block estimators need a box-shaped index set")
    return ctx.cache["fields"], shape


def step_ac(ctx: Context):
    c = ctx.cfg.ac
    X, shape = _box_fields(ctx)
    k = len(shape)
    r = c.r or max(2, int(min(shape) ** 0.5))
    u = ctx.a_n(int(np.prod(shape)))
    out = {"r": r, "u": u, "curves": [ac_diagnostic(X, r, u, c.l, ctx.order, eps=c.eps)]}
    if "structures" in ctx.cache:
        for s in _istar(ctx):
            if len(s.xi.E) > 1:
                try:
                    cur = ac_diagnostic(X, r, u, c.l, ctx.order, E=s.xi.E, eps=c.eps)
                except ValueError as e:
                    cur = {"error": str(e)}
                cur["E"] = [list(e) for e in s.xi.E]
                out["curves"].append(cur)
    out["pass"] = all(cv.get("pass", False) for cv in out["curves"])
    ctx.cache["ac"] = out
    ctx.emit("ac", "ac.json", out)


def step_theta(ctx: Context):
    c = ctx.cfg.theta
    X, shape = _box_fields(ctx)
    k = len(shape)
    size = int(np.prod(shape))
    r = c.r or max(2, int(min(shape) ** 0.5))
    tail = marginal_tail(ctx.model)
    reports = {}
    sweep = []
    for tau in sorted(set(c.tau_sweep) | {c.tau}):
        u = normalizer(tail, [size], tau=tau).values[0]
        est = block_theta(X, BlockScheme(size, k, r, u, tau))
        if tau == c.tau:
            reports["block"] = est
        sweep.append({"tau": tau, "value": est.value, "se": est.se})
    alpha = getattr(ctx.model, "alpha", 1.0)
    oracle = ctx.oracle()
    if oracle is not None:
        shapes = _shapes(ctx, c.R)
        ui = theta_u_index(oracle, shapes, alpha, c.budget, c.R, seed=ctx.seed("theta/u_index"))
        reports["u_index"] = ui["sup_difference"]
        reports["u_index_pareto"] = ui["pareto"]
        istar = _istar(ctx)
        gms = _gammas(ctx, istar) if istar else []
        lattices = [(s.xi.xi_star, gm) for s, gm in zip(istar, gms) if len(s.xi.E) == 1]
        if istar and len(lattices) == len(istar):
            lf = theta_lattice_forms(oracle, lattices, alpha, ctx.order, c.budget, c.R,
                                     seed=ctx.seed("theta/lattice"))
            for name in ("Q_sup", "ratio", "T_star"):
                reports[f"lattice_{name}"] = lf[name]
            reports["lattice_gaps"] = lf["gaps"]
        if istar:
            smps = [upsilon_tail_oracle(ctx.model, Modulus.alpha_norm(s.xi.E, alpha)) for s in istar]
            structs = [(s.xi.E, s.xi.L, gm) for s, gm in zip(istar, gms)]
            reports["upsilon_index4"] = theta_index4(smps, structs, alpha, ctx.order, c.budget, c.R,
                                                     seed=ctx.seed("theta/index4"))
    ac = ctx.cache.get("ac")
    diag = {"ac_pass": None if ac is None else ac["pass"]}
    out = {"r": r, "tau": c.tau, "tau_sweep": sweep, "diagnostics": diag,
           "estimates": {k_: (v.to_dict() if hasattr(v, "to_dict") else v) for k_, v in reports.items()}}
    ctx.cache["theta"] = reports["block"].value
    ctx.emit("theta", "theta.json", out)


def step_frechet(ctx: Context):
    c = ctx.cfg.frechet
    X = ctx.cache["fields"]
    _, shape, mask = ctx.grid()
    size = int(mask.sum())
    a = ctx.a_n(size)
    alpha = getattr(ctx.model, "alpha", 1.0)
    th = c.theta if c.theta is not None else ctx.cache["theta"]
    maxima = np.abs(X[:, mask]).max(axis=1)
    fit = frechet_fit(maxima, a, alpha, th, c.level)
    wrong = 1.0 if th < 0.9 else 0.5
    neg = frechet_fit(maxima, a, alpha, wrong, c.level)
    out = {"a": a, "fit": fit, "negative_control": {k_: neg[k_] for k_ in ("ks", "band", "pass", "theta")}}
    ctx.cache["frechet"] = fit
    ctx.emit("frechet", "frechet.json", out)


STEP_FUNCS = {"census": step_census, "simulate": step_simulate, "tailfield": step_tailfield,
              "timechange": step_timechange, "ac": step_ac, "theta": step_theta, "laplace": step_laplace,
              "frechet": step_frechet}


def run(cfg: ExperimentConfig, steps=None, threads: int | None = None) -> dict:
    """Execute the selected steps (plus what they need) and write the manifest."""
    from .plots import emit_plots

    need = set(steps or cfg.steps) - {"census"}
    if need and cfg.model is None:
        raise ConfigError(f"steps {sorted(need)} need a model block")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    ctx = Context(cfg, out, threads or cfg.threads)
    timing = {}
    try:
        ctx.lam = build_index_set(cfg)
    except (OSError, ValueError) as e:
        raise StepFailure("ingest", str(e)) from None
    if len(ctx.lam) == 0:
        raise StepFailure("ingest", "index set is empty")
    ctx.order = build_order(cfg, ctx.lam.k)
    if cfg.model is not None:
        try:
            ctx.model = build_model(cfg.model, ctx.lam.k)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"model: {e}") from None
    steps = with_dependencies(steps or cfg.steps, ctx.model is None or ctx.oracle() is not None)
    for s in steps:
        t0 = time.perf_counter()
        try:
            STEP_FUNCS[s](ctx)
        except StepFailure:
            raise
        except Exception as e:  # noqa: BLE001 - reported with the step name
            raise StepFailure(s, f"{type(e).__name__}: {e}") from e
        timing[s] = round(time.perf_counter() - t0, 3)
    if cfg.plots:
        reports = {}
        if "ac" in ctx.cache:
            reports["ac"] = ctx.cache["ac"]
        if "frechet" in ctx.cache:
            reports["frechet"] = ctx.cache["frechet"]
        if "laplace" in ctx.cache:
            reports["laplace"] = ctx.cache["laplace"]
        files = emit_plots(reports, out / "plots")
        if files:
            ctx.outputs["plots"] = [str(Path("plots") / f) for f in files]
    manifest = {
        "config_hash": config_hash(cfg),
        "tool_version": __version__,
        "seed": cfg.seed,
        "substreams": {s: list(mc.substream(cfg.seed, s).spawn_key) for s in steps},
        "steps": steps,
        "wall_clock_seconds": timing,
        "outputs": ctx.outputs,
    }
    for files in ctx.outputs.values():
        for f in files:
            p = out / f
            if not p.exists() or p.stat().st_size == 0:
                raise StepFailure("manifest", f"declared output {f} is missing or empty")
    write_json(out / "manifest.json", manifest)
    return manifest
