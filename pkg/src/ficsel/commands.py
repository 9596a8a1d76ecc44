"""Command implementations behind the CLI. Each returns a ``Report``."""

from __future__ import annotations

import csv
import math
from typing import Sequence

import numpy as np
from scipy.stats import norm

from . import criteria as cr
from ._linalg import RANK_TOL
from ._rng import run_blocks, sub_seed
from .config import RunConfig, check_family_size, focus_from_dict
from .design import Dataset, Subset, compute_moments, fit_all, load_dataset, subset_family
from .errors import ValidationError
from .limit import (
    LimitSpec,
    WeightScheme,
    limit_ave_fic,
    limit_aic,
    limit_fic,
    limit_losses,
    limit_risk_closed_form,
    simulate_limit_D,
    tolerance_check,
    tolerance_ellipse_predicate,
    ToleranceSpec,
)
from .order import OrderSpec, finite_sample_distribution, limit_distribution, order_schemes
from .report import Report, dumps, sha256
from .second_order import b1_v1_from_limit

NEAR_SINGULAR = 1e-8


def read_csv(path: str) -> tuple[list[dict], bytes]:
    with open(path, "rb") as fh:
        raw = fh.read()
    text = raw.decode("utf-8-sig")
    rows = list(csv.DictReader(text.splitlines()))
    return rows, raw


def _new_report(cfg: RunConfig, data_bytes: bytes | None = None) -> Report:
    digest = sha256(dumps(cfg.digest_view()).encode() + b"\0" + (data_bytes or b""))
    return Report(cfg.command, cfg.seed, digest, metadata={"reps": cfg.reps, "threads": cfg.threads})


def _dataset(cfg: RunConfig, rows: Sequence[dict] | None) -> tuple[Dataset, bytes]:
    raw = b""
    if rows is None:
        if cfg.data_path is None:
            raise ValidationError("no data supplied (data_path or --data)")
        rows, raw = read_csv(cfg.data_path)
    else:
        raw = dumps(list(rows)).encode()
    return load_dataset(rows, cfg.roles or {}), raw


def _moment_warnings(report: Report, Sigma: np.ndarray) -> None:
    s = np.linalg.svd(Sigma, compute_uv=False)
    if s.size and RANK_TOL <= s[-1] / s[0] < NEAR_SINGULAR:
        report.warn(f"near-singular moment matrix (singular value ratio {s[-1] / s[0]:.3g})")


def _family(cfg: RunConfig, q: int) -> list[Subset]:
    check_family_size(q, cfg.subset_family)
    return subset_family(q, cfg.subset_family, cfg.subsets)


def _cost_model(cfg: RunConfig, q: int) -> cr.CostModel | None:
    if cfg.cost is None:
        return None
    extra = set(cfg.cost) - {"alpha", "costs", "on"}
    if extra:
        raise ValidationError(f"unknown cost keys: {sorted(extra)}")
    alpha = float(cfg.cost.get("alpha", 0.0))
    costs = cfg.cost.get("costs")
    if costs is None:
        return cr.CostModel(alpha=alpha)
    if len(costs) != q:
        raise ValidationError("cost list needs one entry per uncertain column")
    return cr.CostModel.per_column(alpha, costs)


# ---------------------------------------------------------------------------


def cmd_fic(cfg: RunConfig, rows: Sequence[dict] | None = None, default_rank: str | None = None) -> Report:
    d, raw = _dataset(cfg, rows)
    report = _new_report(cfg, raw)
    m = compute_moments(d)
    _moment_warnings(report, m.Sigma)
    focus = focus_from_dict(cfg.focus) if cfg.focus else None
    cost = _cost_model(cfg, d.q)
    cost_on = (cfg.cost or {}).get("on", "risk_hat")
    subsets = _family(cfg, d.q)
    scores = cr.score_subsets(d, subsets, focus, cost, cost_on)
    rank_by = cfg.rank_by or default_rank or ("fic" if focus is not None and d.q else "risk_hat")
    ranked = cr.rank_and_shortlist(scores, len(scores), rank_by)
    for s in ranked:
        if cr.NEGATIVE_RISK in s.flags:
            report.warn(f"negative risk estimate for S={s.S}: {s.risk_hat:.6g}")
    fit0 = fit_all(d, [subsets[0]], m)[0]
    report.results = {
        "n": d.n, "p": d.p, "q": d.q,
        "sigma2_full": fit0.sigma2_full,
        "rank_by": rank_by,
        "scores": [s.to_dict() for s in ranked],
        "shortlist": [s.S.to_list() for s in ranked[: cfg.shortlist]],
    }
    return report


def cmd_avefic(cfg: RunConfig, rows: Sequence[dict] | None = None) -> Report:
    return cmd_fic(cfg, rows, default_rank="ave_fic")


def cmd_gof(cfg: RunConfig, rows: Sequence[dict] | None = None) -> Report:
    d, raw = _dataset(cfg, rows)
    report = _new_report(cfg, raw)
    m = compute_moments(d)
    _moment_warnings(report, m.Sigma)
    fit = fit_all(d, [Subset.full(d.q)], m)[0]
    g = cr.gof_statistic(fit, cr.K_hat(fit, m))
    report.results = {"statistic": g.statistic, "dof": g.dof, "pvalue": g.pvalue}
    return report


def cmd_tolerance(cfg: RunConfig, rows: Sequence[dict] | None = None) -> Report:
    report = _new_report(cfg)
    t = ToleranceSpec(np.asarray(cfg.omega, dtype=float), np.asarray(cfg.K, dtype=float), int(cfg.n))
    out = []
    for g in cfg.gamma_offsets or [[0.0] * t.omega.size]:
        res = tolerance_check(t, g)
        out.append({"gamma_offset": list(map(float, g)), "inside": res.inside, "lhs": res.lhs, "rhs": res.rhs,
                    "inside_all_foci": tolerance_ellipse_predicate(t.K, g, t.n)})
    report.results = {"omega": t.omega, "K": t.K, "n": t.n, "rows": out}
    return report


def cmd_order(cfg: RunConfig, rows: Sequence[dict] | None = None) -> Report:
    report = _new_report(cfg)
    spec = OrderSpec.from_dict(cfg.order_spec)  # type: ignore[arg-type]
    limit = []
    for which in ("backward", "forward"):
        if spec.independent:
            limit.append(limit_distribution(spec, which, method="closed").to_dict())
        if cfg.order_mc or not spec.independent:
            reps = max(cfg.reps, 10_000)
            limit.append(limit_distribution(spec, which, reps, sub_seed(cfg.seed, 1), "mc",
                                            cfg.threads).to_dict())
    finite = []
    for i, n in enumerate(cfg.order_n or []):
        res = finite_sample_distribution(spec, int(n), cfg.reps, sub_seed(cfg.seed, 2, i), threads=cfg.threads)
        finite.append(res.to_dict())
    report.results = {"order_spec": spec.to_dict(), "limit": limit, "finite_sample": finite}
    return report


def _deltas(cfg: RunConfig, q: int, default) -> list[np.ndarray]:
    if cfg.deltas is not None:
        out = [np.asarray(x, dtype=float) for x in cfg.deltas]
    elif cfg.delta_grid is not None:
        g = cfg.delta_grid
        extra = set(g) - {"direction", "start", "stop", "num"}
        if extra:
            raise ValidationError(f"unknown delta_grid keys: {sorted(extra)}")
        direction = np.asarray(g["direction"], dtype=float)
        out = [t * direction for t in np.linspace(float(g.get("start", 0.0)), float(g["stop"]), int(g.get("num", 11)))]
    else:
        out = [np.asarray(default, dtype=float)]
    for x in out:
        if x.shape != (q,):
            raise ValidationError(f"delta vectors must have length q={q}")
    return out


def build_schemes(spec: LimitSpec, decls: Sequence[dict] | None, focus=None) -> dict[str, WeightScheme]:
    """Translate scheme declarations into weight schemes for one LimitSpec."""
    q = spec.q
    if not decls:
        decls = [{"type": "always", "subset": list(range(1, q + 1))}]
    out: dict[str, WeightScheme] = {}
    for i, dcl in enumerate(decls):
        kind = dcl.get("type")
        name = dcl.get("name") or f"{kind}{i}"
        family = subset_family(q, dcl.get("family", "all"), dcl.get("subsets"))
        if kind == "always":
            sch = WeightScheme.always(Subset(tuple(dcl.get("subset", []))).check(q), name)
        elif kind == "fixed":
            sch = WeightScheme.fixed([Subset(tuple(s)).check(q) for s in dcl["subsets"]], dcl["weights"], name)
        elif kind in ("select", "smooth"):
            crit_name = dcl.get("criterion", "ave_fic")
            if crit_name == "ave_fic":
                crit = limit_ave_fic(spec)
            elif crit_name == "aic":
                crit = limit_aic(spec)
            elif crit_name == "fic":
                if focus is None:
                    raise ValidationError("criterion 'fic' needs a focus")
                crit = limit_fic(spec, spec.omega(focus))
            else:
                raise ValidationError(f"unknown criterion {crit_name!r}")
            if kind == "select":
                sch = WeightScheme.select(family, crit, name)
            else:
                sch = WeightScheme.exp_weights(family, crit, float(dcl.get("kappa", 0.5)), name)
        elif kind in ("backward", "forward"):
            sch = order_schemes(spec, dcl.get("alpha", 0.05))[kind]
            sch = WeightScheme(sch.kind, sch.support, sch.weights_fn, name)
        else:
            raise ValidationError(f"unknown scheme type {kind!r}")
        out[name] = sch
    return out


def _reference(spec: LimitSpec, sch: WeightScheme, focus, loss: str) -> float | None:
    """Exact value for fixed-subset schemes, where one exists."""
    if sch.kind != "single" or len(sch.support) != 1:
        return None
    S = sch.support[0]
    if focus is None:
        return limit_risk_closed_form(spec, S) if loss == "squared" else None
    B1, V1 = b1_v1_from_limit(spec, S, focus)
    if loss == "squared":
        return B1**2 + V1
    if V1 == 0:
        return abs(B1)
    s = math.sqrt(V1)
    return s * math.sqrt(2 / math.pi) * math.exp(-B1**2 / (2 * V1)) + B1 * (1 - 2 * norm.cdf(-B1 / s))


def cmd_limit_risk(cfg: RunConfig, rows: Sequence[dict] | None = None) -> Report:
    report = _new_report(cfg)
    base = LimitSpec.from_dict(cfg.limit_spec)  # type: ignore[arg-type]
    focus = focus_from_dict(cfg.focus) if cfg.focus else None
    out = []
    for i, delta in enumerate(_deltas(cfg, base.q, base.delta)):
        spec = base.with_delta(delta)
        schemes = build_schemes(spec, cfg.schemes, focus)
        seed = sub_seed(cfg.seed, 3, i)
        losses = limit_losses(spec, schemes, focus, cfg.loss, cfg.reps, seed, threads=cfg.threads)
        for name, vals in losses.items():
            out.append({"delta": delta, "scheme": name, "estimate": float(vals.mean()),
                        "se": float(vals.std(ddof=1) / math.sqrt(vals.size)), "reps": int(vals.size),
                        "seed": seed, "reference": _reference(spec, schemes[name], focus, cfg.loss)})
    report.results = {"limit_spec": base.to_dict(), "loss": cfg.loss, "rows": out}
    return report


# ---------------------------------------------------------------------------
# Finite-sample simulation under y = X beta + U (gamma0 + delta / sqrt(n)) + noise
# ---------------------------------------------------------------------------


def simulation_design(spec: LimitSpec, n: int, seed: int) -> np.ndarray:
    """An n x (p+q) design whose moment matrix equals spec.Sigma exactly."""
    d = spec.p + spec.q
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(41,)))
    O, _ = np.linalg.qr(rng.standard_normal((n, d)))
    return math.sqrt(n) * O @ np.linalg.cholesky(spec.Sigma).T


def cmd_simulate(cfg: RunConfig, rows: Sequence[dict] | None = None) -> Report:
    report = _new_report(cfg)
    spec = LimitSpec.from_dict(cfg.limit_spec)  # type: ignore[arg-type]
    p, q = spec.p, spec.q
    check_family_size(q, cfg.subset_family)
    subsets = subset_family(q, cfg.subset_family, cfg.subsets)
    beta = np.zeros(p) if cfg.beta is None else np.asarray(cfg.beta, dtype=float)
    ns = cfg.n_values or [cfg.n or 200]
    selector = WeightScheme.select(subsets, limit_ave_fic(spec), "ave_fic")
    lim_losses = limit_losses(spec, {"ave_fic": selector}, None, "squared", max(cfg.reps, 1000),
                              sub_seed(cfg.seed, 4), threads=cfg.threads)["ave_fic"]
    D_draws = simulate_limit_D(spec.delta, spec.K, max(cfg.reps, 1000), sub_seed(cfg.seed, 5), cfg.threads)
    lim_pick = selector.weights(D_draws).mean(axis=0)
    per_n = []
    for i, n in enumerate(ns):
        n = int(n)
        Z = simulation_design(spec, n, sub_seed(cfg.seed, 6, i))
        X, U = Z[:, :p], Z[:, p:]
        gamma = spec.delta / math.sqrt(n)
        mean = X @ beta + U @ gamma
        base = Dataset(mean + 1.0, X, U)
        m = compute_moments(base)
        theta = np.concatenate([beta, gamma])

        def block(rng, size):
            out = np.empty((size, 3 * len(subsets) + 1))
            for r in range(size):
                y = mean + spec.sigma * rng.standard_normal(n)
                d = Dataset(y, X, U)
                fits = fit_all(d, subsets, m)
                for k, f in enumerate(fits):
                    est = np.concatenate([f.beta_S, np.zeros(q)])
                    est[p + f.S.zero_based()] = f.gamma_S
                    diff = est - theta
                    out[r, k] = cr.risk_estimate(f, m)
                    out[r, len(subsets) + k] = n * float(diff @ m.Sigma @ diff)
                    out[r, 2 * len(subsets) + k] = cr.ave_fic(f, m)
                pick = int(np.argmin([out[r, 2 * len(subsets) + k] for k in range(len(subsets))]))
                out[r, -1] = pick
            return out

        vals = np.concatenate(run_blocks(block, cfg.reps, sub_seed(cfg.seed, 7, i), threads=cfg.threads))
        R = vals.shape[0]
        se = vals.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.full(vals.shape[1], math.nan)
        picks = vals[:, -1].astype(int)
        sel_loss = vals[np.arange(R), len(subsets) + picks]
        freq = np.bincount(picks, minlength=len(subsets)) / R
        sub_rows = []
        for k, S in enumerate(subsets):
            sub_rows.append({
                "subset": S.to_list(),
                "mean_risk_hat": vals[:, k].mean(), "se_risk_hat": se[k],
                "mean_n_loss": vals[:, len(subsets) + k].mean(), "se_n_loss": se[len(subsets) + k],
                "limit_risk": limit_risk_closed_form(spec, S),
                "selection_freq": freq[k], "limit_selection_freq": lim_pick[k],
            })
        per_n.append({
            "n": n,
            "subsets": sub_rows,
            "ave_fic_selector": {
                "mean_n_loss": float(sel_loss.mean()),
                "se_n_loss": float(sel_loss.std(ddof=1) / math.sqrt(R)) if R > 1 else math.nan,
                "limit_risk": float(lim_losses.mean()),
                "limit_se": float(lim_losses.std(ddof=1) / math.sqrt(lim_losses.size)),
            },
            "tv_selection": 0.5 * float(np.abs(freq - lim_pick).sum()),
        })
    report.results = {"limit_spec": spec.to_dict(), "beta": beta, "runs": per_n}
    return report


COMMAND_TABLE = {
    "fic": cmd_fic,
    "avefic": cmd_avefic,
    "gof": cmd_gof,
    "tolerance": cmd_tolerance,
    "order": cmd_order,
    "limit-risk": cmd_limit_risk,
    "simulate": cmd_simulate,
}


def run(cfg: RunConfig, rows: Sequence[dict] | None = None) -> Report:
    return COMMAND_TABLE[cfg.command](cfg, rows)
