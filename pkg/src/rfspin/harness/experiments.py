"""Named experiment suites: each turns a config into CSV tables plus a short summary."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import convex as cx
from ..disorder import WeightFunction, sample_field
from ..exact import CapExceeded, exact_gibbs, fluc_exact
from ..ground import ea_satisfied_density
from ..hierarchy import GoodnessCriterion, build_partition, density_floor_default, scan_to_csv, \
    trend_nonincreasing, uncovered_probability_scan
from ..lattice import BoxRegion, box
from ..mcmc import candidate_boundaries, estimate_fluc, site_expectations
from ..models import ModelSpec, state_values
from ..spinwave import mw_fe_gap
from ..system import outer_layer, uniform_boundary
from .config import ConfigError, ExperimentConfig, replica_seed, write_manifest
from .stats import mean_stderr, median_iqr


@dataclass
class ExperimentResult:
    name: str
    tables: dict[str, tuple[list[str], list[dict]]] = field(default_factory=dict)
    raw: dict[str, str] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def table_to_csv(columns: list[str], rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in columns])
    return buf.getvalue()


def write_outputs(result: ExperimentResult, config: ExperimentConfig, out_dir=None) -> list[Path]:
    out = Path(out_dir if out_dir is not None else config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for name, (cols, rows) in result.tables.items():
        (out / name).write_text(table_to_csv(cols, rows))
        names.append(name)
    for name, text in result.raw.items():
        (out / name).write_text(text)
        names.append(name)
    manifest = write_manifest(config, out, sorted(names))
    return [out / n for n in sorted(names)] + [manifest]


def _map(fn, tasks: list, workers: int) -> list:
    """Ordered map over tasks; the result does not depend on the worker count."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def _tasks(config: ExperimentConfig, *extra) -> list[tuple]:
    payload = config.to_json()
    return [(payload, L, r) + extra for L in config.L for r in range(config.replicas)]


def random_boundaries(spec: ModelSpec, region, count: int, seed: int) -> list[dict]:
    rng = np.random.default_rng(seed)
    sites = outer_layer(spec, region)
    out = []
    for _ in range(count):
        if spec.discrete:
            states = state_values(spec)
            out.append({x: states[p] for x, p in zip(sites, rng.integers(len(states), size=len(sites)))})
        else:
            g = rng.standard_normal((len(sites), spec.n))
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            out.append({x: tuple(row) for x, row in zip(sites, g)})
    return out


def _fluc_cell(config: ExperimentConfig, L: int, r: int, weight: WeightFunction | None):
    spec = config.spec
    region = box(L, spec.d)
    seed = replica_seed(config.seed, L, r)
    eta = sample_field(region, spec.m, seed)
    mode = "weighted" if weight is not None else "full_sup"
    try:
        rep = fluc_exact(spec, region, eta, mode=mode, weight=weight, cap=config.exact_cap)
        return seed, rep, math.nan
    except CapExceeded:
        cands = candidate_boundaries(spec, region) + random_boundaries(spec, region, config.random_boundaries, seed)
        rep, est = estimate_fluc(spec, region, eta, cands, weight=weight, n_sweeps=config.mcmc.sweeps,
                                 burn_in=config.mcmc.burn_in, n_chains=config.mcmc.chains, seed=seed)
        return seed, rep, float(est.stderr[0])


def _fluc_task(task):
    payload, L, r = task
    config = ExperimentConfig.model_validate_json(payload)
    seed, rep, se = _fluc_cell(config, L, r, None)
    return {"L": L, "replica": r, "seed": seed, "fluc": rep.fluc, "stderr": se, "method": rep.method,
            "lower_bound": rep.lower_bound}


def _summary_by_L(rows: list[dict], key: str, Ls: list[int]) -> list[dict]:
    out = []
    for L in Ls:
        x = [row[key] for row in rows if row["L"] == L]
        med, q1, q3 = median_iqr(x)
        m, se = mean_stderr(x)
        out.append({"L": L, "n": len(x), "median": med, "q1": q1, "q3": q3, "mean": m, "stderr": se})
    return out


def run_fluc_decay(config: ExperimentConfig) -> ExperimentResult:
    rows = _map(_fluc_task, _tasks(config), config.workers)
    summ = _summary_by_L(rows, "fluc", config.L)
    meds = [s["median"] for s in summ]
    res = ExperimentResult("fluc-decay")
    res.tables["fluc_decay.csv"] = (["L", "replica", "seed", "fluc", "stderr", "method", "lower_bound"], rows)
    res.tables["fluc_decay_summary.csv"] = (["L", "n", "median", "q1", "q3", "mean", "stderr"], summ)
    res.summary = {"medians": meds, "median_nonincreasing": all(b <= a + 1e-12 for a, b in zip(meds, meds[1:]))}
    return res


def make_weight(kind: str, region, m: int) -> WeightFunction:
    if kind == "checkerboard":
        return WeightFunction.checkerboard(region, m)
    return WeightFunction.constant(region, m, 0.0 if kind == "zero" else 1.0)


def _weighted_task(task):
    payload, L, r = task
    config = ExperimentConfig.model_validate_json(payload)
    spec = config.spec
    w = make_weight(config.weight, box(L, spec.d), spec.m)
    seed, rep, se = _fluc_cell(config, L, r, w)
    cap = 2.0 * math.sqrt(w.mean_square())
    return {"L": L, "replica": r, "seed": seed, "weight": config.weight, "fluc_w": rep.fluc, "stderr": se,
            "cs_cap": cap, "within_cap": rep.fluc <= cap + 1e-10, "method": rep.method}


def run_weighted_fluc(config: ExperimentConfig) -> ExperimentResult:
    rows = _map(_weighted_task, _tasks(config), config.workers)
    res = ExperimentResult("weighted-fluc")
    res.tables["weighted_fluc.csv"] = (["L", "replica", "seed", "weight", "fluc_w", "stderr", "cs_cap",
                                        "within_cap", "method"], rows)
    res.tables["weighted_fluc_summary.csv"] = (["L", "n", "median", "q1", "q3", "mean", "stderr"],
                                               _summary_by_L(rows, "fluc_w", config.L))
    res.summary = {"cap_violations": sum(not r["within_cap"] for r in rows)}
    return res


def _boundary_for(spec: ModelSpec, region, mode: str):
    """Fixed mode pins the outer layer to state 0 (clock) or e_0 (O(n))."""
    if mode != "fixed":
        return mode
    if spec.discrete:
        return uniform_boundary(spec, region, state_values(spec)[0])
    e = np.zeros(spec.n)
    e[0] = 1.0
    return uniform_boundary(spec, region, tuple(e))


def _mag_task(task):
    payload, L, r = task
    config = ExperimentConfig.model_validate_json(payload)
    spec = config.spec
    region = box(L, spec.d)
    window = box(min(config.window, L), spec.d) if config.window is not None else region
    seed = replica_seed(config.seed, L, r)
    eta = sample_field(region, spec.m, seed)
    tau = _boundary_for(spec, region, config.boundary)
    pos = [region.region.index[v] for v in window.vertices]
    try:
        if not spec.discrete:
            raise CapExceeded("continuous spins")
        obs = exact_gibbs(spec, region, tau, eta, cap=max(config.exact_cap, 2**16)).obs
        method = "exact"
    except (CapExceeded, ValueError):
        obs, _ = site_expectations(spec, region, tau, eta, n_sweeps=config.mcmc.sweeps,
                                   burn_in=config.mcmc.burn_in, n_chains=config.mcmc.chains, seed=seed)
        method = "mcmc"
    avg = obs[pos].mean(axis=0)
    row = {"L": L, "replica": r, "seed": seed, "magnitude": float(np.linalg.norm(avg)), "method": method,
           "h_in_range": float(np.linalg.norm(spec.h_vec)) <= L ** -2.0}
    for i, x in enumerate(avg):
        row[f"m_{i}"] = float(x)
    return row


def run_magnetization_decay(config: ExperimentConfig) -> ExperimentResult:
    spec = config.spec
    if spec.kind not in ("on", "clock"):
        raise ConfigError("magnetization decay runs on O(n) or clock models")
    rows = _map(_mag_task, _tasks(config), config.workers)
    summ = []
    for L in config.L:
        sel = [r for r in rows if r["L"] == L]
        m, se = mean_stderr([r["magnitude"] for r in sel])
        entry = {"L": L, "n": len(sel), "mean_magnitude": m, "stderr": se,
                 "h_in_range": all(r["h_in_range"] for r in sel)}
        for i in range(spec.m):
            mi, si = mean_stderr([r[f"m_{i}"] for r in sel])
            entry[f"mean_{i}"], entry[f"se_{i}"] = mi, si
        summ.append(entry)
    means = [s["mean_magnitude"] for s in summ]
    slope = float(np.polyfit(np.log(config.L), np.log(np.maximum(means, 1e-300)), 1)[0]) if len(config.L) > 1 \
        else math.nan
    for s in summ:
        s["fitted_exponent"], s["target_exponent"] = slope, -(4 - spec.d) / 2
    comp = [f"m_{i}" for i in range(spec.m)]
    res = ExperimentResult("mag-decay")
    res.tables["mag_decay.csv"] = (["L", "replica", "seed", "magnitude", *comp, "method", "h_in_range"], rows)
    res.tables["mag_decay_summary.csv"] = (["L", "n", "mean_magnitude", "stderr",
                                            *[c for i in range(spec.m) for c in (f"mean_{i}", f"se_{i}")],
                                            "fitted_exponent", "target_exponent", "h_in_range"], summ)
    zero = all(abs(s[f"mean_{i}"]) <= 4 * s[f"se_{i}"] for s in summ for i in range(spec.m))
    res.summary = {"means": means, "fitted_exponent": slope,
                   "decreasing": all(b <= a for a, b in zip(means, means[1:])), "zero_mean_within_4se": zero}
    return res


def run_mw_gap(config: ExperimentConfig) -> ExperimentResult:
    spec = config.spec
    rows = []
    for L in config.L:
        for ell in config.ell:
            if 2 * ell > L:
                continue
            g = mw_fe_gap(spec, BoxRegion.cube(L, spec.d), BoxRegion.cube(ell, spec.d), replicas=config.replicas,
                          seed=replica_seed(config.seed, L, ell))
            rows.append({"d": spec.d, "L": L, "ell": ell, "n_states": spec.n_states,
                         "h": float(np.linalg.norm(spec.h_vec)), "gap": float(g.estimate.mean[0]),
                         "budget": g.budget, "stderr": float(g.estimate.stderr[0]), "holds": g.holds()})
    res = ExperimentResult("mw-gap")
    res.tables["mw_gap.csv"] = (["d", "L", "ell", "n_states", "h", "gap", "budget", "stderr", "holds"], rows)
    res.summary = {"violations": sum(not r["holds"] for r in rows)}
    return res


STABILITY_GRID = {"lam": (0.5, 1.0, 2.0), "delta": (0.1, 0.5, 1.0), "r": (0.01, 0.05, 0.2)}


def run_stability_suite(config: ExperimentConfig) -> ExperimentResult:
    rng = np.random.default_rng(config.seed)
    rows, vrows = [], []
    for lam in STABILITY_GRID["lam"]:
        for delta in STABILITY_GRID["delta"]:
            for r in STABILITY_GRID["r"]:
                for rep in range(config.replicas):
                    g = cx.random_convex(rng, lam)
                    outer = cx.stab_outer(g, delta, r)
                    bound = cx.stab_measure_bound(lam, delta, r)
                    ts = np.linspace(-7.0, 7.0, 141)
                    wit = [t for t in ts if cx.stab_witness(g, float(t), delta, r) is not None]
                    inside = sum(float(t) in outer for t in wit)
                    rows.append({"lam": lam, "delta": delta, "r": r, "replica": rep, "outer_measure": outer.measure,
                                 "bound": bound, "bound_ok": outer.measure <= bound + 1e-12,
                                 "witnesses": len(wit), "witnesses_inside": inside})
    for delta in (0.1, 0.5, 1.0):
        for rep in range(config.replicas):
            g = cx.random_class_g(rng)
            integral = cx.class_g_gaussian_bound(g)
            ga = cx.random_class_g(rng, lower=-1.0)
            mass, floor = cx.sublevel_gaussian_lower(ga, delta)
            vrows.append({"delta": delta, "replica": rep, "class_g_integral": integral,
                          "class_g_ok": abs(integral) <= cx.CLASS_G_LIMIT + 1e-12, "sublevel_mass": mass,
                          "sublevel_floor": floor, "sublevel_ok": mass >= floor - 1e-12})
    res = ExperimentResult("stability-suite")
    res.tables["stability.csv"] = (["lam", "delta", "r", "replica", "outer_measure", "bound", "bound_ok",
                                    "witnesses", "witnesses_inside"], rows)
    res.tables["variational.csv"] = (["delta", "replica", "class_g_integral", "class_g_ok", "sublevel_mass",
                                      "sublevel_floor", "sublevel_ok"], vrows)
    res.summary = {
        "bound_violations": sum(not r["bound_ok"] for r in rows),
        "witnesses_outside": sum(r["witnesses"] - r["witnesses_inside"] for r in rows),
        "class_g_violations": sum(not r["class_g_ok"] for r in vrows),
        "sublevel_violations": sum(not r["sublevel_ok"] for r in vrows),
    }
    return res


def make_criterion(config: ExperimentConfig, L: int) -> GoodnessCriterion:
    c = config.criterion
    spec = config.spec
    kw = dict(delta=c.delta, exact_cap=config.exact_cap, mcmc_sweeps=config.mcmc.sweeps,
              mcmc_burn=config.mcmc.burn_in, mcmc_chains=config.mcmc.chains, seed=config.seed)
    if c.kind == "field_quantile":
        return GoodnessCriterion("field_quantile", component=c.component, **kw)
    if c.kind == "fluc_threshold":
        return GoodnessCriterion("fluc_threshold", spec=spec, **kw)
    return GoodnessCriterion("weighted_fluc_threshold", spec=spec,
                             weight=make_weight(config.weight, box(L, spec.d), spec.m),
                             density_floor=density_floor_default(L, c.density_floor_exponent), **kw)


def run_partition_scan(config: ExperimentConfig) -> ExperimentResult:
    spec = config.spec
    rows = []
    res = ExperimentResult("partition-scan")
    for L in config.L:
        crit = make_criterion(config, L)
        rows += uncovered_probability_scan([L], config.criterion.k, crit, config.replicas, config.seed, spec.d,
                                           spec.m, config.criterion.l_max)
        eta = sample_field(box(L, spec.d), spec.m, config.seed + L)
        rep = build_partition(L, config.criterion.k, rows[-1].l_max, crit, eta, spec.d)
        res.raw[f"partition_L{L}.json"] = json.dumps(rep.to_dict(), sort_keys=True) + "\n"
    res.raw["partition_scan.csv"] = scan_to_csv(rows)
    res.summary = {"uncovered": [r.uncovered_prob for r in rows], "trend_ok": trend_nonincreasing(rows),
                   "lower_bound_goodness": any(r.lower_bound_goodness for r in rows)}
    return res


def _facts_task(task):
    payload, L, r = task
    config = ExperimentConfig.model_validate_json(payload)
    spec = config.spec
    region = BoxRegion([0] * spec.d, [L - 1] * spec.d)
    seed = replica_seed(config.seed, L, r)
    if spec.kind == "ea":
        rep = ea_satisfied_density(spec, region, [seed])
        return {"L": L, "replica": r, "seed": seed, "value_0": rep.density}
    eta = sample_field(region, spec.m, seed)
    obs = exact_gibbs(spec, region, "free", eta).obs.mean(axis=0)
    return {"L": L, "replica": r, "seed": seed, **{f"value_{i}": float(x) for i, x in enumerate(obs)}}


def run_model_facts(config: ExperimentConfig) -> ExperimentResult:
    """Potts colour frequencies (free boundary) or EA ground-state agreeing-edge density, on side-L boxes."""
    spec = config.spec
    if spec.kind not in ("potts", "ea"):
        raise ConfigError("model facts cover Potts and EA")
    rows = _map(_facts_task, _tasks(config), config.workers)
    k = spec.q if spec.kind == "potts" else 1
    target = 1.0 / spec.q if spec.kind == "potts" else 0.5
    symmetric = spec.kind == "ea" or not np.any(spec.h_vec)
    summ = []
    for L in config.L:
        for i in range(k):
            m, se = mean_stderr([r[f"value_{i}"] for r in rows if r["L"] == L])
            summ.append({"L": L, "component": i, "mean": m, "stderr": se, "target": target,
                         "within_4se": abs(m - target) <= 4 * se, "asserted": symmetric})
    res = ExperimentResult("model-facts")
    res.tables["model_facts.csv"] = (["L", "replica", "seed", *[f"value_{i}" for i in range(k)]], rows)
    res.tables["model_facts_summary.csv"] = (["L", "component", "mean", "stderr", "target", "within_4se",
                                              "asserted"], summ)
    res.summary = {"facts_hold": all(s["within_4se"] for s in summ) if symmetric else None,
                   "means": [s["mean"] for s in summ]}
    return res


def _alpha_task(task):
    payload, L, r = task
    config = ExperimentConfig.model_validate_json(payload)
    spec = config.spec
    region = box(L, spec.d)
    seed = replica_seed(config.seed, L, r)
    eta = sample_field(region, spec.m, seed)
    mags = np.stack([exact_gibbs(spec, region, tau, eta, cap=max(config.exact_cap, 2**16)).obs.mean(axis=0)
                     for tau in candidate_boundaries(spec, region)])
    return {"L": L, "replica": r, "sup": mags.max(axis=0).tolist(), "inf": mags.min(axis=0).tolist()}


def run_alpha_estimate(config: ExperimentConfig) -> ExperimentResult:
    """Midpoint of the disorder-averaged sup/inf of candidate-boundary magnetizations."""
    spec = config.spec
    cells = _map(_alpha_task, _tasks(config), config.workers)
    rows = []
    for L in config.L:
        sel = [c for c in cells if c["L"] == L]
        for i in range(spec.m):
            sup = np.array([c["sup"][i] for c in sel])
            inf = np.array([c["inf"][i] for c in sel])
            ms, ses = mean_stderr(sup)
            mi, sei = mean_stderr(inf)
            rows.append({"L": L, "component": i, "sup_mean": ms, "inf_mean": mi, "alpha_hat": 0.5 * (ms + mi),
                         "width": ms - mi, "stderr": 0.5 * math.hypot(ses, sei)})
    res = ExperimentResult("alpha")
    res.tables["alpha.csv"] = (["L", "component", "sup_mean", "inf_mean", "alpha_hat", "width", "stderr"], rows)
    largest = [r for r in rows if r["L"] == max(config.L)]
    res.summary = {"alpha_hat": [r["alpha_hat"] for r in largest], "width": [r["width"] for r in largest]}
    return res


RUNNERS = {
    "fluc-decay": run_fluc_decay,
    "weighted-fluc": run_weighted_fluc,
    "mag-decay": run_magnetization_decay,
    "mw-gap": run_mw_gap,
    "stability-suite": run_stability_suite,
    "partition-scan": run_partition_scan,
    "model-facts": run_model_facts,
    "alpha": run_alpha_estimate,
}


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    return RUNNERS[config.experiment](config)
