"""Acceptance suite: one PASS/FAIL line per criterion (see the summary at the end of the run)."""
import functools
import itertools
import json
import random
from fractions import Fraction

import numpy as np
import yaml

from lattice_extremes import mc
from lattice_extremes.cli import main
from lattice_extremes.exceedance_cluster import (
    default_g_grid,
    empirical_laplace,
    laplace_sums,
    limit_laplace_psil,
    normalizer,
)
from lattice_extremes.extremal_index import (
    ac_diagnostic,
    block_scheme,
    block_theta,
    frechet_fit,
    theta_index4,
    theta_lattice_forms,
    theta_u_index,
)
from lattice_extremes.field_models import (
    DeHaanMaxStable,
    IIDFrechet,
    LinearHeavyTail,
    MovingMaxima,
    ShiftedKernelV,
    kernel_from_list,
    marginal_tail,
    maxstable_tail_oracle,
    simulate_box,
    simulate_points,
    spectral_tail_oracle,
)
from lattice_extremes.lattice_core import IndexSet, InvariantOrder, LatticeUnion, Sublattice
from lattice_extremes.shape_analysis import (
    analyze_structures,
    census,
    census_xi,
    check_partition,
    refinement_residual,
)
from lattice_extremes.tail_spectral import (
    Bump,
    Modulus,
    Threshold,
    estimate_spectral_tail,
    pareto_check,
    time_change_check,
    upsilon_tail_oracle,
)

MM11 = MovingMaxima(kernel_from_list([1.0, 1.0]), 1.0)
MM21 = MovingMaxima(kernel_from_list([2.0, 1.0]), 1.0)
LIN = LinearHeavyTail(kernel_from_list([1.0, -0.6]), 1.5)
IID = IIDFrechet()
L1, L2, L3 = InvariantOrder(1), InvariantOrder(2), InvariantOrder(3)
HORIZ = InvariantOrder(2, (1, 0))
Z = Sublattice.full(1)
XI = LatticeUnion.periodic(Z, [(0,)])
POS = XI.positive(L1)


# --- synthetic index sets ----------------------------------------------------------


def box(*n):
    return IndexSet(itertools.product(*[range(1, m + 1) for m in n]))


def spacetime(m, stations, period=1):
    return IndexSet([(period * t,) + c for t in range(1, m + 1) for c in stations])


GRID3 = [(a, b) for a in range(3) for b in range(3)]


def families():
    rnd = random.Random(5)
    return {
        "segment50": (box(50), L1),
        "segment200": (box(200), L1),
        "sparse3Z": (IndexSet([(i,) for i in range(0, 300, 3)]), L1),
        "union_2Z_5Z": (IndexSet([(i,) for i in range(200) if i % 2 == 0 or i % 5 == 0]), L1),
        "rect12x9": (box(12, 9), L2),
        "rect20": (box(20, 20), L2),
        "rect_permuted": (box(15, 10), HORIZ),
        "lattice_x+2y": (IndexSet([(x, y) for x in range(30) for y in range(30) if (x + 2 * y) % 3 == 0]), L2),
        "coset_union": (IndexSet([(x, y) for x in range(30) for y in range(30) if (x + 2 * y) % 3 != 1]), L2),
        "checkerboard": (IndexSet([(x, y) for x in range(20) for y in range(20) if (x + y) % 2 == 0]), L2),
        "shifted_cosets": (IndexSet([(x, y) for x in range(40) for y in range(40)
                                     if (x % 2 == 0 and y % 3 == 0) or (x % 2 == 1 and y % 3 == 1)]), L2),
        "L_shape": (IndexSet([(x, y) for x in range(20) for y in range(20) if x < 6 or y < 6]), L2),
        "random_sparse": (IndexSet({(rnd.randrange(25), rnd.randrange(25)) for _ in range(150)}), L2),
        "two_lines40": (IndexSet([(x, y) for x in range(1, 41) for y in (0, 1)]), HORIZ),
        "two_lines120": (IndexSet([(x, y) for x in range(1, 121) for y in (0, 1)]), HORIZ),
        "cube6": (box(6, 6, 6), L3),
        "spacetime10": (spacetime(10, GRID3), L3),
        "spacetime25": (spacetime(25, GRID3), L3),
        "spacetime_period2": (spacetime(12, [(a, b) for a in range(2) for b in range(2)], 2), L3),
        "spacetime_irregular": (spacetime(20, [(0, 0), (0, 1), (2, 3)]), L3),
    }


# census radii must resolve the shortest period of a shape (p >= 2 * period)
RADII = {"sparse3Z": (3, 6)}


@functools.lru_cache(maxsize=None)
def family_results():
    out = {}
    for name, (lam, order) in families().items():
        p, q = RADII.get(name, (1, 2) if lam.k == 3 else (2, 4))  # 3-d windows grow as (2p+1)^3
        c1, c2 = census(lam, p, order), census(lam, q, order)
        rep = analyze_structures(lam, q, order)
        out[name] = {
            "n": len(lam), "k": lam.k, "p": q,
            "counts": (sum(s.count for s in c1.shapes), sum(s.count for s in c2.shapes)),
            "sum_lambda": (sum(c1.weights(), Fraction(0)), sum(c2.weights(), Fraction(0))),
            "refinement": (refinement_residual(c1, c2), refinement_residual(census_xi(lam, p), census_xi(lam, q))),
            "partitions": [check_partition(s.D, s.partition, order, 32) for s in rep.structures
                           if s.partition is not None],
            "xi_identity": rep.xi_identity(),
            "shapes": len(rep.census.shapes),
        }
    return out


def test_criterion_1_lattice_identities(acceptance):
    res = family_results()
    bad = [name for name, r in res.items()
           if r["counts"] != (r["n"], r["n"]) or r["refinement"] != (0, 0) or not all(r["partitions"])]
    checked = sum(len(r["partitions"]) for r in res.values())
    ok = acceptance(1, "lattice identities", len(res) == 20 and not bad,
                    f"{len(res)} families, {checked} partitions checked to K_32, failures={bad}")
    assert ok


def test_criterion_2_weight_identities(acceptance):
    res = family_results()
    worst_sum = max(abs(s - 1) for r in res.values() for s in r["sum_lambda"])
    bad = []
    for name, r in res.items():
        bound = Fraction(2 * (2 * r["p"] + 1) ** r["k"] * r["shapes"], r["n"])
        if abs(r["xi_identity"] - 1) > bound:
            bad.append(name)
    # stations on a 3x3 grid over m periods: one class of |C| = 9 points, γ* → 1/9
    st = []
    for m in (10, 25, 40):
        rep = analyze_structures(spacetime(m, GRID3), 2, L3)
        live = [s for s in rep.i_star() if s.xi.gamma_star > 0]
        resid = max(abs(float(s.xi.gamma_star) - 1 / 9) for s in live)
        st.append((m, len(live), live[0].xi.n, resid))
    st_ok = all(n_live == 1 and nE == 9 and resid <= 1 / m for m, n_live, nE, resid in st)
    ok = acceptance(2, "weight identities", worst_sum == 0 and not bad and st_ok,
                    f"max|Σλ-1|={worst_sum}, bound failures={bad}, "
                    f"space-time (m, |I*|, |E|, |γ*-1/9|)={[(m, a, b, round(c, 4)) for m, a, b, c in st]}")
    assert ok


# --- tail field --------------------------------------------------------------------


@functools.lru_cache(maxsize=None)
def mm_tail_batch():
    X = simulate_box(MM11, (10_000,), 600, np.random.default_rng(0))
    u = float(np.quantile(X, 0.999))
    return estimate_spectral_tail(X, u, [(-1,), (0,), (1,)], 1.0)


def test_criterion_3_pareto_law(acceptance):
    b = mm_tail_batch()
    pc = pareto_check(b.radial[:5000], 1.0)
    ok = acceptance(3, "tail-field Pareto law", pc["n"] == 5000 and pc["pass"],
                    f"max deviation {pc['max_deviation']:.4f} vs DKW band {pc['band']:.4f} on y in [1, 10], "
                    f"{pc['n']} anchors")
    assert ok


def test_criterion_4_spectral_oracle(acceptance):
    b = mm_tail_batch()
    th = np.abs(b.column((1,))[:5000])
    atom = np.where(th > 0.5, 1.0, 0.0)  # nearest atom of {0, 1}
    tv = abs(atom.mean() - 0.5)
    spread = float(np.abs(th - atom).max())
    ok = acceptance(4, "spectral oracle equivalence", len(th) == 5000 and tv <= 0.05,
                    f"TV {tv:.4f} (P(Θ_1=1) est {atom.mean():.4f} vs 0.5), max distance to atom {spread:.3f}")
    assert ok


def test_criterion_5_time_change(acceptance):
    pairs = [((1,), (1,)), ((1,), (0,)), ((-1,), (1,)), ((1,), (2,))]
    gs = [Threshold(0.4), Bump(0.3, 3.0), Bump(0.1, 1.5, 2.0)]
    worst = 0.0
    fails = []
    for mi, model in enumerate((MM11, MM21, LIN)):
        smp = spectral_tail_oracle(model)
        for gi, g in enumerate(gs):
            for pi, (s, t) in enumerate(pairs):
                r = time_change_check(smp, g, s, t, model.alpha, 100_000, seed=mi * 100 + gi * 10 + pi)
                z = abs(r["lhs"] - r["rhs"]) / r["se"] if r["se"] > 0 else (0.0 if r["lhs"] == r["rhs"] else np.inf)
                worst = max(worst, z)
                if not abs(r["lhs"] - r["rhs"]) <= 3 * r["se"] + 1e-12:
                    fails.append((mi, gi, pi))
    ok = acceptance(5, "time-change formula", not fails,
                    f"36 cells, max |lhs-rhs|/SE = {worst:.2f}, failures={fails}")
    assert ok


def test_criterion_6_max_stable_oracle(acceptance):
    v = ShiftedKernelV([kernel_from_list([0.5, 0.5]), kernel_from_list([0.2, 0.6, 0.2])])
    model = DeHaanMaxStable(v)
    pts = np.arange(10).reshape(-1, 1)
    parts = mc.run_blocks(lambda g, n: simulate_points(model, pts, n, g), 1, 100_000, 10_000, 4)
    F = np.concatenate(parts)
    u = float(np.quantile(F, 0.995))
    probes = [([(1,)], [1.0]), ([(1,), (-1,)], [0.5, 2.0]), ([(2,)], [0.3]), ([(1,), (2,)], [2.0, 2.0])]
    gaps = []
    for offs, ys in probes:
        o = np.array([x[0] for x in offs])
        num = den = 0
        for t0 in range(max(0, -o.min()), 10 - max(0, o.max())):
            ex = F[:, t0] > u
            hit = np.ones(ex.sum(), bool)
            for oo, y in zip(o, ys):
                hit &= F[ex, t0 + oo] / u < y
            num += hit.sum()
            den += ex.sum()
        est, _ = maxstable_tail_oracle(v, offs, ys, 10 ** 6, 3)
        gaps.append(float(abs(num / den - est)))
    ok = acceptance(6, "max-stable tail oracle", F.shape[0] == 100_000 and max(gaps) <= 0.02,
                    f"gaps at 4 probes {[round(x, 4) for x in gaps]} (tolerance 0.02), {F.shape[0]} fields")
    assert ok


# --- extremal index ------------------------------------------------------------------


def exact_block_theta(model, r, u):
    """P(max over r consecutive sites > u) / (r P(X_0 > u)) by summing the noise weights that reach the block."""
    w = {j[0]: a for j, a in dict(model.kernel).items()}
    lags = range(min(w) - r, max(w) + r + 1)
    reach = sum(max(w.get(t - s, 0.0) for t in range(r)) for s in lags)
    return -np.expm1(-reach / u) / (r * -np.expm1(-sum(w.values()) / u))


@functools.lru_cache(maxsize=None)
def long_runs(name):
    model = {"MM11": MM11, "MM21": MM21, "IID": IID}[name]
    n, r = 10_000, 100
    sch = block_scheme(n, 1, marginal_tail(model), r=r)
    g = np.random.default_rng({"MM11": 11, "MM21": 21, "IID": 1}[name])
    be = pe = 0
    maxima = []
    first = None
    for _ in range(8):
        X = simulate_box(model, (n,), 500, g)
        d = block_theta(X, sch).diagnostics
        be += d["block_exceedances"]
        pe += d["point_exceedances"]
        maxima.append(np.abs(X).max(axis=1))
        if first is None:
            first = X
    th = be / pe  # (be / blocks) / (r (pe / (blocks r)))
    se = th * np.sqrt(1 / be + 1 / pe)
    return {"model": model, "scheme": sch, "theta": th, "se": float(se), "maxima": np.concatenate(maxima),
            "first": first}


def test_criterion_7_extremal_index(acceptance):
    mm = long_runs("MM11")
    ui = theta_u_index(spectral_tail_oracle(MM11), [(POS, 1.0)], 1.0, 100_000, 8, seed=7)
    lf = theta_lattice_forms(spectral_tail_oracle(MM11), [(XI, 1.0)], 1.0, L1, 100_000, 8, seed=7)
    gaps = {k: g["gap"] / g["se"] if g["se"] > 0 else 0.0 for k, g in lf["gaps"].items()}
    m2 = long_runs("MM21")
    truth2 = exact_block_theta(MM21, m2["scheme"].r, m2["scheme"].u)
    truth1 = exact_block_theta(MM11, mm["scheme"].r, mm["scheme"].u)
    checks = [abs(mm["theta"] - 0.5) <= 0.05, abs(ui["sup_difference"].value - 0.5) <= 0.02,
              all(g["gap"] <= 3 * g["se"] + 1e-12 for g in lf["gaps"].values()),
              abs(m2["theta"] - 2 / 3) <= 0.05, abs(truth2 - 2 / 3) <= 0.05]
    ok = acceptance(7, "extremal index triangulation", all(checks),
                    f"MM(1,1) block {mm['theta']:.4f}±{mm['se']:.4f} (oracle {truth1:.4f}), "
                    f"u_index {ui['sup_difference'].value:.4f}, lattice gap/SE max {max(gaps.values()):.2f}; "
                    f"MM(2,1) block {m2['theta']:.4f}±{m2['se']:.4f} (oracle {truth2:.4f})")
    assert ok


def test_criterion_8_iid_sanity(acceptance):
    iid = long_runs("IID")
    smp = spectral_tail_oracle(IID)
    thetas = {"block": iid["theta"],
              "u_index": theta_u_index(smp, [(POS, 1.0)], 1.0, 100_000, 8, seed=8)["sup_difference"].value}
    lf = theta_lattice_forms(smp, [(XI, 1.0)], 1.0, L1, 100_000, 8, seed=8)
    for name in ("Q_sup", "ratio", "T_star"):
        thetas[name] = lf[name].value
    m = Modulus.alpha_norm([(0,)], 1.0)
    thetas["index4"] = theta_index4([upsilon_tail_oracle(IID, m)], [([(0,)], Z, 1.0)], 1.0, L1,
                                    100_000, 8, seed=8).value
    u = iid["scheme"].u
    ac = ac_diagnostic(iid["first"], 50, u, [1, 2, 5, 10, 25], L1)
    n = 1000
    X = simulate_box(IID, (n,), 4000, np.random.default_rng(88))
    a = normalizer(marginal_tail(IID), [n]).values[0]
    lap = []
    for gi, g in enumerate(default_g_grid()):
        e = empirical_laplace(laplace_sums(X, a, g))
        lim = limit_laplace_psil(smp, [(POS, 1.0)], g, 1.0, 100_000, 8, seed=gi)
        lap.append(abs(e["mean"] - lim["mean"]) / np.hypot(e["se"], lim["se"]))
    checks = [all(abs(v - 1) <= 0.03 for v in thetas.values()), max(ac["curve"]) <= 0.02, max(lap) <= 3]
    ok = acceptance(8, "iid sanity", all(checks),
                    f"θ {({k: round(v, 4) for k, v in thetas.items()})}, AC max {max(ac['curve']):.4f}, "
                    f"Laplace gap/SE max {max(lap):.2f} over {len(lap)} g")
    assert ok


def test_criterion_9_frechet(acceptance):
    rows = []
    for name in ("IID", "MM11"):
        run = long_runs(name)
        a = normalizer(marginal_tail(run["model"]), [10_000]).values[0]
        fit = frechet_fit(run["maxima"], a, 1.0, run["theta"])
        wrong = 0.5 if run["theta"] > 0.9 else 1.0
        neg = frechet_fit(run["maxima"], a, 1.0, wrong)
        rows.append((name, fit["ks"], neg["ks"], fit["band"], fit["pass"] and not neg["pass"]))
    ok = acceptance(9, "Fréchet limit", all(r[-1] for r in rows),
                    "; ".join(f"{n}: KS {k:.4f}, wrong-θ KS {w:.4f}, band {b:.4f}" for n, k, w, b, _ in rows))
    assert ok


def test_criterion_10_laplace_convergence(acceptance):
    smp = spectral_tail_oracle(MM11)
    gs = default_g_grid()
    lims = [limit_laplace_psil(smp, [(POS, 1.0)], g, 1.0, 100_000, 8, seed=i) for i, g in enumerate(gs)]
    sizes = (200, 800, 3200)
    emp = {}
    for n in sizes:
        X = simulate_box(MM11, (n,), 4000, np.random.default_rng(n))
        a = normalizer(marginal_tail(MM11), [n]).values[0]
        emp[n] = [empirical_laplace(laplace_sums(X, a, g)) for g in gs]
    worst = -np.inf
    for i in range(len(gs)):
        gap = [(abs(emp[n][i]["mean"] - lims[i]["mean"]), np.hypot(emp[n][i]["se"], lims[i]["se"])) for n in sizes]
        for (g0, s0), (g1, s1) in zip(gap, gap[1:]):
            worst = max(worst, (g1 - g0) / (2 * np.hypot(s0, s1)))
    ok = acceptance(10, "Laplace convergence", worst <= 1.0,
                    f"max increase of |Ψ̂-Ψ| between consecutive n, in units of 2 joint SE: {worst:.2f} "
                    f"({len(gs)} g, n={sizes})")
    assert ok


# --- determinism -----------------------------------------------------------------------


def test_criterion_11_determinism(acceptance, tmp_path):
    cfg = {
        "seed": 5,
        "model": {"kind": "moving_maxima", "alpha": 1.0, "kernel": [1.0, 1.0]},
        "index_set": {"kind": "hyperrectangle", "n": [300]},
        "simulate": {"realizations": 300, "block": 40},
        "timechange": {"budget": 5000},
        "laplace": {"realizations": 200, "budget": 5000},
        "theta": {"budget": 5000},
    }
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump(cfg))
    a, b = tmp_path / "a", tmp_path / "b"
    codes = [main(["run", "--config", str(p), "--out", str(a), "--threads", "1"]),
             main(["run", "--config", str(p), "--out", str(b), "--threads", "4"])]
    files = sorted(f.relative_to(a) for f in a.rglob("*") if f.suffix in (".json", ".csv"))
    same = files == sorted(f.relative_to(b) for f in b.rglob("*") if f.suffix in (".json", ".csv"))
    diff = []
    for f in files:
        if f.name == "manifest.json":
            ma, mb = (json.loads((d / f).read_text()) for d in (a, b))
            ma.pop("wall_clock_seconds")
            mb.pop("wall_clock_seconds")
            if ma != mb:
                diff.append(str(f))
        elif (a / f).read_bytes() != (b / f).read_bytes():
            diff.append(str(f))
    ok = acceptance(11, "determinism", codes == [0, 0] and same and not diff and len(files) > 5,
                    f"{len(files)} JSON/CSV files compared across --threads 1 and 4, differing={diff}")
    assert ok
