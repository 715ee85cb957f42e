"""Experiment drivers behind ``rankbal run``.

Each driver fans replications out (optionally over worker processes),
collects results in replication order, and writes plot-ready CSVs plus a
JSON report.  Replication ``r`` of family ``f`` always uses
``replicate_seed(master, r, f)``, so serial and parallel runs match.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .io import write_json, write_samples, write_scaled_path, write_sde_path
from .model import DiffusionParams, ModelParams, in_drift_hull
from .queue import scaled_path, simulate, terminal_scaled
from .reflect import skorokhod_map
from .rng import replicate_seed
from .sde import TieRule, integrate, integrate_coupled, occupation_near_tie
from .stats import dumps_report, ks_statistic, mean_with_se, ranked_marginals, report_entry

QUEUE_FAMILY = 0
SDE_FAMILY = 1


class _Output:
    """Output directory that remembers which files this run wrote."""

    def __init__(self, root: Path):
        self.root = root
        self.written: list[str] = []

    def path(self, name: str, sidecar: bool = False) -> Path:
        self.written.append(name)
        if sidecar:
            self.written.append(str(Path(name).with_suffix(".json")))
        return self.root / name


def _map(fn, items, jobs: int):
    items = list(items)
    if jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    chunk = max(1, len(items) // (4 * jobs))
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items, chunksize=chunk))


def _seeds(cfg: ExperimentConfig, family: int, count: int | None = None) -> list[int]:
    count = cfg.replications if count is None else count
    return [replicate_seed(cfg.seed, r, family) for r in range(count)]


# picklable per-replication workers


def _queue_rep(seed: int, mp: ModelParams, horizon: float) -> dict:
    return terminal_scaled(simulate(mp, horizon, seed, record=False), mp)


def _sde_rep(seed: int, dp: DiffusionParams, T: float, dt: float, reflected: bool, rule: TieRule):
    p = integrate(dp, T, dt, seed, reflected, rule)
    return p.X[-1].copy(), p.L[-1].copy()


def _gap_rep(seed: int, dp, T, dt, reflected, rule_a, rule_b) -> float:
    return integrate_coupled(dp, T, dt, seed, reflected, rule_a, rule_b)[2]


def _occupation_rep(seed: int, dp, T, dt, reflected, rule, pair, eps) -> list[float]:
    p = integrate(dp, T, dt, seed, reflected, rule)
    return [occupation_near_tie(p, pair[0] - 1, pair[1] - 1, e) for e in eps]


# ---------------------------------------------------------------------------


def _queue_terminals(cfg: ExperimentConfig, n: int, jobs: int):
    mp = cfg.model_params(n)
    seeds = _seeds(cfg, QUEUE_FAMILY)
    res = _map(partial(_queue_rep, mp=mp, horizon=cfg.horizon), seeds, jobs)
    return mp, seeds, res


def _sde_terminals(cfg: ExperimentConfig, dt: float, jobs: int):
    dp = cfg.diffusion_params()
    seeds = _seeds(cfg, SDE_FAMILY)
    fn = partial(_sde_rep, dp=dp, T=cfg.horizon, dt=dt, reflected=cfg.sde["reflected"], rule=cfg.tie_rule)
    res = _map(fn, seeds, jobs)
    return seeds, np.array([r[0] for r in res]), np.array([r[1] for r in res])


def _write_queue_samples(out, name: str, seeds, res, N: int):
    header = (
        ["rep", "seed"]
        + [f"X_{i + 1}" for i in range(N)]
        + [f"L_{i + 1}" for i in range(N)]
        + [f"M_{i + 1}" for i in range(N)]
        + ["A0"]
    )
    rows = [[r, s, *d["X"], *d["L"], *d["M"], d["A0_hat"]] for r, (s, d) in enumerate(zip(seeds, res))]
    write_samples(out.path(name), header, rows)


def _write_sde_samples(out, name: str, seeds, X, L):
    N = X.shape[1]
    header = ["rep", "seed"] + [f"X_{i + 1}" for i in range(N)] + [f"L_{i + 1}" for i in range(N)]
    rows = [[r, s, *x, *l] for r, (s, x, l) in enumerate(zip(seeds, X, L))]
    write_samples(out.path(name), header, rows)


def _ks_entries(label, a_vecs, b_vecs, threshold, sizes, seeds, gating, **extra):
    out = []
    for ra, rb in zip(ranked_marginals(a_vecs), ranked_marginals(b_vecs)):
        ks = ks_statistic(ra, rb)
        out.append(
            report_entry(
                f"ks_{label}_rank{ra.meta['rank']}", ks, threshold, ks <= threshold,
                sizes, seeds, gating=gating, **extra,
            )
        )
    return out


def _skorokhod_error(log, mp) -> float:
    sp = scaled_path(log, mp)
    err = 0.0
    for i in range(mp.N):
        pair = skorokhod_map(sp.grid, sp.U[:, i], sp.U_left[:, i])
        err = max(err, float(np.max(np.abs(pair.x - sp.X[:, i]))), float(np.max(np.abs(pair.z - sp.L[:, i]))))
    return err


def run_queue(cfg: ExperimentConfig, out: _Output, jobs: int) -> list[dict]:
    entries = []
    thr = cfg.thresholds["martingale_se"]
    for n in cfg.n_ladder:
        mp, seeds, res = _queue_terminals(cfg, n, jobs)
        log = simulate(mp, cfg.horizon, seeds[0])
        write_scaled_path(out.path(f"queue_n{n}_path.csv", sidecar=True), scaled_path(log, mp), mp, seeds[0], cfg.horizon)
        _write_queue_samples(out, f"queue_n{n}_terminal.csv", seeds, res, mp.N)
        sizes = {"replications": len(seeds), "n": n}
        seed_info = {"master": cfg.seed, "family": QUEUE_FAMILY}
        M = np.array([d["M"] for d in res])
        for i in range(mp.N):
            mean, se = mean_with_se(M[:, i]) if len(seeds) > 1 else (float(M[0, i]), math.inf)
            entries.append(
                report_entry(
                    f"martingale_mean_server{i + 1}", mean, thr * se, abs(mean) <= thr * se,
                    sizes, seed_info, standard_error=se, n=n,
                )
            )
        balance = max(abs(int(np.sum(d["A"])) - d["A0"]) for d in res)
        entries.append(report_entry("routing_balance_max_error", balance, 0, balance == 0, sizes, seed_info, n=n))
        if mp.ic.regime == "IC0":
            err = _skorokhod_error(log, mp)
            entries.append(
                report_entry("skorokhod_identity_max_error", err, 1e-9, err <= 1e-9, {"replications": 1, "n": n},
                             {"seed": seeds[0]}, n=n)
            )
    return entries


def run_sde(cfg: ExperimentConfig, out: _Output, jobs: int) -> list[dict]:
    entries = []
    dp = cfg.diffusion_params()
    for dt in cfg.dt_ladder:
        seeds, X, L = _sde_terminals(cfg, dt, jobs)
        first = integrate(dp, cfg.horizon, dt, seeds[0], cfg.sde["reflected"], cfg.tie_rule)
        write_sde_path(out.path(f"sde_dt{dt:g}_path.csv", sidecar=True), first)
        _write_sde_samples(out, f"sde_dt{dt:g}_terminal.csv", seeds, X, L)
        outside = sum(
            not in_drift_hull(first.beta[k], first.X[k], dp.b) for k in range(first.beta.shape[0])
        )
        sizes = {"replications": len(seeds), "dt": dt}
        seed_info = {"master": cfg.seed, "family": SDE_FAMILY}
        entries.append(
            report_entry("drift_outside_hull_steps", outside, 0, outside == 0, {"steps": first.beta.shape[0]},
                         {"seed": seeds[0]}, dt=dt)
        )
        for r in ranked_marginals(X):
            v = r.scalars()
            entries.append(
                report_entry(f"mean_X_rank{r.meta['rank']}", float(v.mean()), None, True, sizes, seed_info,
                             gating=False, dt=dt)
            )
    return entries


def run_convergence(cfg: ExperimentConfig, out: _Output, jobs: int) -> list[dict]:
    thr = cfg.thresholds["ks"]
    queue = {}
    for n in cfg.n_ladder:
        mp, seeds, res = _queue_terminals(cfg, n, jobs)
        _write_queue_samples(out, f"queue_n{n}_terminal.csv", seeds, res, mp.N)
        queue[n] = (seeds, np.array([d["X"] for d in res]), np.array([d["L"] for d in res]))
    sde = {}
    for dt in cfg.dt_ladder:
        seeds, X, L = _sde_terminals(cfg, dt, jobs)
        _write_sde_samples(out, f"sde_dt{dt:g}_terminal.csv", seeds, X, L)
        sde[dt] = (seeds, X, L)
    entries, table = [], []
    final = (cfg.n_ladder[-1], cfg.dt_ladder[-1])
    for n in cfg.n_ladder:
        for dt in cfg.dt_ladder:
            gating = (n, dt) == final
            sizes = {"queue": len(queue[n][0]), "sde": len(sde[dt][0]), "n": n, "dt": dt}
            seed_info = {"master": cfg.seed, "queue_family": QUEUE_FAMILY, "sde_family": SDE_FAMILY}
            for label, k in (("X", 1), ("L", 2)):
                es = _ks_entries(label, queue[n][k], sde[dt][k], thr, sizes, seed_info, gating, n=n, dt=dt)
                entries += es
                table += [[n, dt, label, rank + 1, e["value"]] for rank, e in enumerate(es)]
    write_samples(out.path("ks_table.csv"), ["n", "dt", "quantity", "rank", "ks"], table)
    return entries


def run_uniqueness(cfg: ExperimentConfig, out: _Output, jobs: int) -> list[dict]:
    dp = cfg.diffusion_params()
    rule_a = TieRule.parse(cfg.coupling["rule_a"])
    rule_b = TieRule.parse(cfg.coupling["rule_b"])
    seeds = _seeds(cfg, SDE_FAMILY)
    medians, rows, entries = [], [], []
    seed_info = {"master": cfg.seed, "family": SDE_FAMILY}
    for dt in cfg.dt_ladder:
        fn = partial(_gap_rep, dp=dp, T=cfg.horizon, dt=dt, reflected=cfg.sde["reflected"], rule_a=rule_a, rule_b=rule_b)
        gaps = _map(fn, seeds, jobs)
        rows += [[dt, r, s, g] for r, (s, g) in enumerate(zip(seeds, gaps))]
        med = float(np.median(gaps))
        medians.append(med)
        entries.append(
            report_entry("median_sup_gap", med, None, True, {"replications": len(seeds), "dt": dt}, seed_info,
                         gating=False, dt=dt)
        )
    write_samples(out.path("gaps.csv"), ["dt", "rep", "seed", "gap"], rows)
    write_samples(out.path("median_gap.csv"), ["dt", "median_gap"], list(zip(cfg.dt_ladder, medians)))
    decreasing = all(b < a for a, b in zip(medians, medians[1:]))
    sizes = {"replications": len(seeds), "dt": list(cfg.dt_ladder)}
    entries.append(report_entry("median_gap_strictly_decreasing", medians, None, decreasing, sizes, seed_info))
    thr = cfg.thresholds["gap"]
    entries.append(
        report_entry("median_gap_finest_dt", medians[-1], thr, medians[-1] < thr, sizes, seed_info,
                     dt=cfg.dt_ladder[-1])
    )
    return entries


def run_occupation(cfg: ExperimentConfig, out: _Output, jobs: int) -> list[dict]:
    dp = cfg.diffusion_params()
    dt = cfg.dt_ladder[-1]
    eps = cfg.occupation["eps"]
    pair = cfg.occupation["pair"]
    seeds = _seeds(cfg, SDE_FAMILY)
    fn = partial(_occupation_rep, dp=dp, T=cfg.horizon, dt=dt, reflected=cfg.sde["reflected"],
                 rule=cfg.tie_rule, pair=pair, eps=eps)
    occ = np.array(_map(fn, seeds, jobs))
    write_samples(out.path("occupation_samples.csv"), ["rep", "seed"] + [f"eps_{e:g}" for e in eps],
                  [[r, s, *row] for r, (s, row) in enumerate(zip(seeds, occ))])
    stats = [mean_with_se(occ[:, k]) if len(seeds) > 1 else (float(occ[0, k]), math.nan) for k in range(len(eps))]
    write_samples(out.path("occupation.csv"), ["eps", "mean_occupation", "standard_error"],
                  [[e, m, se] for e, (m, se) in zip(eps, stats)])
    sizes = {"replications": len(seeds), "dt": dt, "pair": pair}
    seed_info = {"master": cfg.seed, "family": SDE_FAMILY}
    means = [m for m, _ in stats]
    order = np.argsort(eps)
    sorted_means = [means[k] for k in order]
    monotone = all(b >= a for a, b in zip(sorted_means, sorted_means[1:]))
    entries = [report_entry("mean_occupation_nonincreasing_in_eps", means, None, monotone, sizes, seed_info, eps=eps)]
    smallest = int(order[0])
    limit = cfg.thresholds["occupation_fraction"] * cfg.horizon
    entries.append(
        report_entry("mean_occupation_smallest_eps", means[smallest], limit, means[smallest] < limit, sizes,
                     seed_info, eps=eps[smallest])
    )
    return entries


def run_idle(cfg: ExperimentConfig, out: _Output, jobs: int) -> list[dict]:
    thr_idle = cfg.thresholds["idle"]
    thr_ks = cfg.thresholds["ks"]
    dt = cfg.dt_ladder[-1]
    sde_seeds, sX, _ = _sde_terminals(cfg, dt, jobs)
    _write_sde_samples(out, f"sde_dt{dt:g}_terminal.csv", sde_seeds, sX, np.zeros_like(sX))
    entries = []
    for n in cfg.n_ladder:
        mp, seeds, res = _queue_terminals(cfg, n, jobs)
        _write_queue_samples(out, f"queue_n{n}_terminal.csv", seeds, res, mp.N)
        gating = n == cfg.n_ladder[-1]
        L = np.array([d["L"] for d in res])
        frac = float(np.mean(L.max(axis=1) > 0))
        sizes = {"queue": len(seeds), "sde": len(sde_seeds), "n": n, "dt": dt}
        seed_info = {"master": cfg.seed, "queue_family": QUEUE_FAMILY, "sde_family": SDE_FAMILY}
        entries.append(report_entry("idle_fraction", frac, thr_idle, frac <= thr_idle, sizes, seed_info,
                                    gating=gating, n=n))
        X = np.array([d["X"] for d in res])
        entries += _ks_entries("Xcheck", X, sX, thr_ks, sizes, seed_info, gating, n=n, dt=dt)
    return entries


DRIVERS = {
    "queue": run_queue,
    "sde": run_sde,
    "convergence": run_convergence,
    "uniqueness": run_uniqueness,
    "occupation": run_occupation,
    "idle": run_idle,
}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run(cfg: ExperimentConfig, out_dir, jobs: int = 1) -> dict:
    """Run ``cfg`` into ``out_dir``; returns the parsed report."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    out = _Output(root)
    entries = DRIVERS[cfg.experiment](cfg, out, max(1, int(jobs)))
    text = dumps_report(entries, experiment=cfg.experiment, master_seed=cfg.seed,
                        replications=cfg.replications, version=__version__)
    out.path("report.json").write_text(text)
    outputs = {name: _sha256(root / name) for name in sorted(set(out.written))}
    write_json(root / "manifest.json", {"config": cfg.to_dict(), "version": __version__, "outputs": outputs})
    return json.loads(text)
