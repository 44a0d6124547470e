"""Batch experiment driver: TOML configs in, deterministic CSV/JSON artifacts out.

Six commands share one reproducibility scheme: a master seed (flag > env >
config) names every random stream, worker count never changes results, and
each CSV opens with a `# run <hash>` comment whose hash covers the config
bytes, command, seed, and tool version but not wall time, so reruns are
byte-identical.  Stream ids within a run: 0 primary estimate, 1 series
diagnostics, 2 MDP comparison, 3 demonstration walk, 4 measure checks.

Exit codes: 0 success, 2 configuration or parameter error, 3 numeric failure
(including a failed validity suite), 4 schedule-range or censoring-only
results.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import re
import sys
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from ._parallel import run_blocks
from .coboundary import binned_martingale_means, extract_martingale, poisson_residual, solve_poisson
from .cocycle import estimate_lambda, estimate_variance, log_norm_cocycle
from .deviation_lab import (
    BnSpec,
    baum_katz_partial,
    c_of_n,
    finite_support_tail_fn,
    lil_curve,
    linear_path,
    mdp_compare,
    mdp_rate,
    pareto_tail_fn,
    rate_extract,
    regime_fit,
    tail_estimate,
    arcones_check,
)
from .errors import (
    ConfigError,
    DomainError,
    GllabError,
    InvariantError,
    NumericFailure,
    ScheduleRangeError,
)
from .matrix_walk import (
    FiniteSupport,
    GaussianEntries,
    HeavyTailedConjugatedDiagonal,
    MeasureSpec,
    ProjectivePoint,
    RngStream,
    ScaledRotation,
    big_n,
    direction_grid,
    iter_batch_increments,
    run_walk,
    sample_entries,
)
from .mg_tools import (
    FiniteAdaptedSpace,
    haeusler_bound,
    haeusler_plain_term,
    haeusler_sharp_term,
    maximal_lp_lhs,
    maximal_lp_rhs,
    vbe_constant,
)

_NS_CLI = 41

_REGIMES = ("large-dev", "subexp", "weak-moment", "mdp")
_SUITES = ("haeusler", "maximal", "vbe")


# ---------------------------------------------------------------------------
# config access with line-anchored errors


class _Config:
    def __init__(self, path: str):
        try:
            with open(path, "rb") as f:
                raw = f.read()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}")
        self.path = path
        self.sha256 = hashlib.sha256(raw).hexdigest()
        try:
            self.text = raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ConfigError(f"{path}: config is not valid UTF-8: {e}")
        try:
            self.data = tomllib.loads(self.text)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: invalid config syntax: {e}")

    def _anchor(self, section: str, key: Optional[str]) -> Optional[int]:
        sec_line = None
        in_sec = False
        for i, line in enumerate(self.text.splitlines(), start=1):
            s = line.strip()
            if s.startswith("["):
                in_sec = s == f"[{section}]"
                if in_sec and sec_line is None:
                    sec_line = i
            elif in_sec and key is not None and re.match(rf"{re.escape(key)}\s*=", s):
                return i
        return sec_line

    def err(self, section: str, key: Optional[str], msg: str):
        line = self._anchor(section, key)
        where = f"{self.path}:{line}" if line else self.path
        what = f"[{section}] {key}" if key else f"[{section}]"
        raise ConfigError(f"{where}: {what}: {msg}")

    def section(self, name: str, required: bool = True) -> dict:
        sec = self.data.get(name)
        if sec is None:
            if required:
                raise ConfigError(f"{self.path}: missing required section [{name}]")
            return {}
        if not isinstance(sec, dict):
            raise ConfigError(f"{self.path}: [{name}] must be a section, not a value")
        return sec


_MISSING = object()

_KINDS = {
    "int": (lambda v: isinstance(v, int) and not isinstance(v, bool), "an integer"),
    "float": (lambda v: isinstance(v, (int, float)) and not isinstance(v, bool), "a number"),
    "str": (lambda v: isinstance(v, str), "a string"),
    "bool": (lambda v: isinstance(v, bool), "a boolean"),
    "list": (lambda v: isinstance(v, list), "a list"),
}


def _get(cfg: _Config, section: str, key: str, kind: str, default=_MISSING):
    sec = cfg.section(section, required=default is _MISSING)
    if key not in sec:
        if default is _MISSING:
            cfg.err(section, key, "missing required key")
        return default
    v = sec[key]
    check, label = _KINDS[kind]
    if not check(v):
        cfg.err(section, key, f"must be {label}, got {v!r}")
    return float(v) if kind == "float" else v


def _number_list(cfg, section, key, default=_MISSING):
    v = _get(cfg, section, key, "list", default=default)
    if v is default and default is not _MISSING:
        return default
    out = []
    for item in v:
        if not isinstance(item, (int, float)) or isinstance(item, bool):
            cfg.err(section, key, f"must contain only numbers, got {item!r}")
        out.append(float(item))
    return out


def _int_list(cfg, section, key, default=_MISSING):
    v = _get(cfg, section, key, "list", default=default)
    if v is default and default is not _MISSING:
        return default
    out = []
    for item in v:
        if not isinstance(item, int) or isinstance(item, bool):
            cfg.err(section, key, f"must contain only integers, got {item!r}")
        out.append(item)
    return out


def _parse_measure(cfg: _Config) -> MeasureSpec:
    kind = _get(cfg, "measure", "kind", "str")
    sec = cfg.section("measure")
    try:
        if kind == "finite_support":
            mats = sec.get("matrices")
            if not isinstance(mats, list) or not mats:
                cfg.err("measure", "matrices", "must be a non-empty list of square matrices")
            return FiniteSupport(
                matrices=tuple(np.asarray(m, dtype=float) for m in mats),
                weights=np.asarray(_number_list(cfg, "measure", "weights")),
            )
        if kind == "scaled_rotation":
            return ScaledRotation(
                log_scales=np.asarray(_number_list(cfg, "measure", "log_scales")),
                weights=np.asarray(_number_list(cfg, "measure", "weights")),
                uniform_rotation=_get(cfg, "measure", "uniform_rotation", "bool", default=True),
                dim=_get(cfg, "measure", "dim", "int", default=2),
            )
        if kind == "heavy_tailed":
            return HeavyTailedConjugatedDiagonal(
                tail_index=_get(cfg, "measure", "tail_index", "float")
            )
        if kind == "gaussian":
            return GaussianEntries(
                entry_std=_get(cfg, "measure", "entry_std", "float"),
                dim=_get(cfg, "measure", "dim", "int", default=2),
            )
    except InvariantError as e:
        cfg.err("measure", None, str(e))
    except ValueError as e:
        cfg.err("measure", None, f"malformed measure data: {e}")
    cfg.err("measure", "kind", f"unknown measure kind {kind!r}")


# ---------------------------------------------------------------------------
# run context and artifact emission


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        f = float(v)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return format(f, ".17g")
    return str(v)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return _cell(obj)
    return obj


@dataclass
class _RunContext:
    cfg: _Config
    spec: MeasureSpec
    command: str
    seed: int
    seed_source: str
    threads: int
    out_dir: str
    run_hash: str
    outputs: list = field(default_factory=list)

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def csv(self, name: str, header, rows):
        with open(self.path(name), "w", encoding="utf-8", newline="") as f:
            f.write(f"# run {self.run_hash}\n")
            w = csv.writer(f, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_cell(v) for v in row])
        self.outputs.append(name)

    def json(self, name: str, payload: dict):
        with open(self.path(name), "w", encoding="utf-8", newline="") as f:
            json.dump(_plain(payload), f, indent=2, sort_keys=True)
            f.write("\n")
        self.outputs.append(name)

    def write_manifest(self, wall_time: float):
        payload = {
            "command": self.command,
            "config_sha256": self.cfg.sha256,
            "master_seed": self.seed,
            "seed_source": self.seed_source,
            "outputs": sorted(self.outputs),
            "run_hash": self.run_hash,
            "threads": self.threads,
            "version": __version__,
            "wall_time_s": round(wall_time, 6),
        }
        with open(self.path("run_manifest.json"), "w", encoding="utf-8", newline="") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")


def _resolve_seed(args, cfg: _Config):
    if args.seed is not None:
        return int(args.seed), "flag"
    env = os.environ.get("GLLAB_SEED")
    if env is not None:
        try:
            return int(env), "env"
        except ValueError:
            raise ConfigError(f"GLLAB_SEED must be an integer, got {env!r}")
    run = cfg.section("run", required=False)
    if "seed" in run:
        return _get(cfg, "run", "seed", "int"), "config"
    raise ConfigError(
        f"{cfg.path}: no master seed: set [run] seed, the GLLAB_SEED variable, or --seed"
    )


def _lam_variants(ctx: _RunContext, sec_name: str, n_hint: int):
    """Centering drifts for deviation events: exact from config, or estimated
    with a sensitivity pair at +-2 standard errors."""
    sec = ctx.cfg.section(sec_name)
    if "lam" in sec:
        lam = _get(ctx.cfg, sec_name, "lam", "float")
        return [("", lam)], {"lam_source": "config", "lam_center": lam}
    lyap_n = _get(ctx.cfg, sec_name, "lyap_n", "int", default=max(256, n_hint))
    lyap_reps = _get(ctx.cfg, sec_name, "lyap_reps", "int", default=2000)
    est = estimate_lambda(
        ctx.spec, log_norm_cocycle(ctx.spec.dim), n=lyap_n, reps=lyap_reps,
        x_grid=4, rng=RngStream(ctx.seed, 0), threads=ctx.threads,
    )
    lam, se = est.lambda_hat, est.std_error
    variants = [("", lam), ("_lam_minus", lam - 2.0 * se), ("_lam_plus", lam + 2.0 * se)]
    info = {
        "lam_source": "estimated",
        "lam_center": lam,
        "lam_std_error": se,
        "lam_estimate_n": lyap_n,
        "lam_estimate_reps": lyap_reps,
    }
    return variants, info


# ---------------------------------------------------------------------------
# commands


def cmd_lyapunov(ctx: _RunContext) -> int:
    cfg = ctx.cfg
    n = _get(cfg, "lyapunov", "n", "int")
    reps = _get(cfg, "lyapunov", "reps", "int")
    x_grid = _get(cfg, "lyapunov", "x_grid", "int", default=4)
    if n < 1:
        cfg.err("lyapunov", "n", "must be at least 1")
    if reps < 2:
        cfg.err("lyapunov", "reps", "must be at least 2")
    coc = log_norm_cocycle(ctx.spec.dim)
    rng = RngStream(ctx.seed, 0)
    lam = estimate_lambda(ctx.spec, coc, n=n, reps=reps, x_grid=x_grid, rng=rng, threads=ctx.threads)
    var = estimate_variance(
        ctx.spec, coc, lam=lam.lambda_hat, n=n, reps=reps, rng=rng, threads=ctx.threads
    )

    x0 = direction_grid(ctx.spec.dim, 1)[0]

    def block(bi, lo, hi):
        gen = rng.substream(_NS_CLI, 0, bi)
        dirs = np.tile(x0, (hi - lo, 1))
        tot = np.zeros(hi - lo)
        for inc in iter_batch_increments(ctx.spec, dirs, n, gen):
            tot += inc
        return tot / n

    means = np.concatenate(run_blocks(reps, block, threads=ctx.threads))
    ctx.csv(
        "trajectory_means.csv",
        ["trajectory", "mean_increment"],
        ((i, m) for i, m in enumerate(means)),
    )
    ctx.json(
        "lyapunov.json",
        {
            "lambda_hat": lam.lambda_hat,
            "lambda_std_error": lam.std_error,
            "v_hat": var.v_hat,
            "v_std_error": var.std_error,
            "start_agreement": var.x_agreement,
            "n": n,
            "reps": reps,
            "x_grid": x_grid,
        },
    )
    return 0


def cmd_tails(ctx: _RunContext) -> int:
    cfg = ctx.cfg
    n = _get(cfg, "tails", "n", "int")
    alpha = _get(cfg, "tails", "alpha", "float")
    y_grid = np.asarray(_number_list(cfg, "tails", "y_grid"))
    x_grid = _get(cfg, "tails", "x_grid", "int", default=4)
    reps = _get(cfg, "tails", "reps", "int")
    if y_grid.size == 0 or np.any(y_grid <= 0) or np.any(np.diff(y_grid) <= 0):
        cfg.err("tails", "y_grid", "must be positive and strictly increasing")

    variants, lam_info = _lam_variants(ctx, "tails", n)
    center = None
    for suffix, lam in variants:
        curve = tail_estimate(
            ctx.spec, lam, n=n, alpha=alpha, y_grid=y_grid, x_grid=x_grid,
            reps=reps, rng=RngStream(ctx.seed, 0), threads=ctx.threads,
        )
        if suffix == "":
            center = curve
        ctx.csv(
            f"tails{suffix}.csv",
            ["n", "alpha", "y", "p_hat", "ci_lo", "ci_hi", "x_grid", "reps", "seed"],
            (
                (n, alpha, y, p, lo, hi, x_grid, reps, ctx.seed)
                for y, p, lo, hi in zip(curve.y_grid, curve.p_hat, curve.ci_lo, curve.ci_hi)
            ),
        )

    report = dict(lam_info)
    report.update(
        {
            "n": n,
            "alpha": alpha,
            "reps": reps,
            "censored_points": int(np.sum(center.p_hat == 0.0)),
            "total_points": int(center.p_hat.size),
        }
    )

    regime = _get(cfg, "tails", "regime", "str", default=None)
    if regime is not None:
        if regime not in _REGIMES:
            cfg.err("tails", "regime", f"must be one of {_REGIMES}")
        bn = None
        if regime == "mdp":
            bn = BnSpec.power(_get(cfg, "tails", "bn_alpha", "float"))
        seq = rate_extract(
            center, regime,
            r=_get(cfg, "tails", "r", "float", default=None),
            p=_get(cfg, "tails", "p", "float", default=None),
            bn=bn,
        )
        window = _number_list(cfg, "tails", "fit_window", default=None)
        win = tuple(window) if window else None
        try:
            fit = regime_fit(center.y_grid, seq.values, regime, window=win)
            win_str = f"{win[0]:g}:{win[1]:g}" if win else "full"
            ctx.csv(
                "rate_fit.csv",
                ["regime", "exponent_hat", "constant_hat", "r_squared", "window"],
                [(fit.regime, fit.exponent_hat, fit.constant_hat, fit.r_squared, win_str)],
            )
            report["fit"] = {
                "regime": fit.regime,
                "exponent_hat": fit.exponent_hat,
                "constant_hat": fit.constant_hat,
                "r_squared": fit.r_squared,
                "n_points": fit.n_points,
            }
        except DomainError as e:
            report["fit_error"] = str(e)

    series = _get(cfg, "tails", "series", "str", default=None)
    if series is not None:
        if series not in ("baum-katz", "lil"):
            cfg.err("tails", "series", "must be 'baum-katz' or 'lil'")
        schedule = _int_list(cfg, "tails", "series_schedule")
        s_y = _get(cfg, "tails", "series_y", "float")
        lam0 = variants[0][1]
        if series == "baum-katz":
            rep = baum_katz_partial(
                ctx.spec, lam0, alpha=alpha, p=_get(cfg, "tails", "series_p", "float"),
                y=s_y, n_schedule=schedule, reps=reps, rng=RngStream(ctx.seed, 1),
                x_grid=x_grid, threads=ctx.threads,
            )
        else:
            rep = lil_curve(
                ctx.spec, lam0, v=_get(cfg, "tails", "series_v", "float"),
                n_schedule=schedule, y=s_y, reps=reps, rng=RngStream(ctx.seed, 1),
                x_grid=x_grid, threads=ctx.threads,
            )
        ctx.csv(
            "series.csv",
            ["n", "term", "partial_sum", "verdict"],
            (
                (nn, t, s, rep.verdict)
                for nn, t, s in zip(rep.n_schedule, rep.terms, rep.partial_sums)
            ),
        )
        report["series"] = {"kind": series, "verdict": rep.verdict, "censored": rep.censored}

    ctx.json("tails.json", report)
    return 4 if np.all(center.p_hat == 0.0) else 0


def _sign_pattern_space(n: int, code: int) -> FiniteAdaptedSpace:
    """Adapted +-1 sequence on the binary tree from 2-bit level symbols.

    Symbol 0/1: constant +1/-1; symbol 2/3: the newest coin with sign +/-.
    The family covers every per-level-measurability class of +-1 sequences
    that depend on at most the latest coin, martingale differences included.
    """
    values = []
    for k in range(n):
        sym = (code >> (2 * k)) & 3
        size = 1 << (k + 1)
        last = 1.0 - 2.0 * (np.arange(size) & 1)
        if sym == 0:
            vals = np.ones(size)
        elif sym == 1:
            vals = -np.ones(size)
        elif sym == 2:
            vals = last
        else:
            vals = -last
        values.append(vals)
    return FiniteAdaptedSpace.binary(values)


def cmd_bounds(ctx: _RunContext) -> int:
    cfg = ctx.cfg
    suites = _get(cfg, "bounds", "suites", "list", default=list(_SUITES))
    for s in suites:
        if s not in _SUITES:
            cfg.err("bounds", "suites", f"unknown suite {s!r}; valid: {_SUITES}")
    report = {}
    violations_total = 0

    if "haeusler" in suites:
        gammas = _number_list(cfg, "bounds", "gamma_grid", default=None)
        us = _number_list(cfg, "bounds", "u_grid", default=None)
        vs = _number_list(cfg, "bounds", "v_grid", default=None)
        default_grid = list(np.geomspace(0.25, 4.0, 5))
        gammas = gammas or default_grid
        us = us or default_grid
        vs = vs or default_grid
        p1 = _get(cfg, "bounds", "haeusler_p1", "float", default=0.0)
        p2 = _get(cfg, "bounds", "haeusler_p2", "float", default=0.0)
        rows = []
        for g in gammas:
            for u in us:
                for v in vs:
                    rows.append(
                        (
                            g, u, v, p1, p2,
                            haeusler_bound(g, u, v, p1, p2),
                            haeusler_plain_term(g, u, v),
                            haeusler_sharp_term(g, u, v),
                        )
                    )
        ctx.csv(
            "bounds_haeusler.csv",
            ["gamma", "u", "v", "p1", "p2", "bound", "plain_term", "sharp_term"],
            rows,
        )
        report["haeusler_rows"] = len(rows)

    if "maximal" in suites:
        max_n = _get(cfg, "bounds", "max_n", "int", default=5)
        if not 1 <= max_n <= 8:
            cfg.err("bounds", "max_n", "must lie in 1..8")
        p_list = _number_list(cfg, "bounds", "p_grid", default=[1.1, 1.5, 1.9])
        rows = []
        for nn in range(1, max_n + 1):
            spaces = [_sign_pattern_space(nn, code) for code in range(4**nn)]
            for p in p_list:
                worst = math.inf
                bad = 0
                for space in spaces:
                    margin = maximal_lp_rhs(space, p) - maximal_lp_lhs(space, p)
                    worst = min(worst, margin)
                    if margin < -1e-12:
                        bad += 1
                violations_total += bad
                rows.append((nn, p, len(spaces), bad, worst))
        ctx.csv(
            "bounds_maximal.csv",
            ["n", "p", "cases", "violations", "worst_margin"],
            rows,
        )
        report["maximal_violations"] = violations_total

    if "vbe" in suites:
        p_list = _number_list(cfg, "bounds", "vbe_p", default=[1.1, 1.5, 1.9])
        rows = [(p, vbe_constant(p)) for p in p_list]  # DomainError -> exit 2
        ctx.csv("bounds_vbe.csv", ["p", "constant"], rows)
        report["vbe_rows"] = len(rows)

    report["zero_violations"] = violations_total == 0
    ctx.json("bounds.json", report)
    if violations_total:
        raise NumericFailure(
            f"maximal inequality violated in {violations_total} enumerated cases"
        )
    return 0


def cmd_mdp(ctx: _RunContext) -> int:
    cfg = ctx.cfg
    sec = cfg.section("mdp")
    has_alpha, has_table = "bn_alpha" in sec, "bn_table" in sec
    if has_alpha == has_table:
        cfg.err("mdp", None, "provide exactly one of bn_alpha or bn_table")
    try:
        if has_alpha:
            bn = BnSpec.power(_get(cfg, "mdp", "bn_alpha", "float"))
        else:
            bn = BnSpec.from_table(np.asarray(_number_list(cfg, "mdp", "bn_table")))
    except InvariantError as e:
        cfg.err("mdp", "bn_alpha" if has_alpha else "bn_table", str(e))
    v = _get(cfg, "mdp", "v", "float")
    if v <= 0:
        cfg.err("mdp", "v", "must be positive")

    c_max = _get(cfg, "mdp", "c_table_max", "int", default=20)
    rows = []
    for nn in range(1, c_max + 1):
        try:
            rows.append((nn, c_of_n(bn, nn)))
        except ScheduleRangeError:
            rows.append((nn, ""))
    ctx.csv("mdp_c_of_n.csv", ["n", "c"], rows)

    rate_ys = _number_list(cfg, "mdp", "rate_paths", default=[0.5, 1.0, 1.5, 2.0])
    ctx.csv(
        "mdp_rates.csv",
        ["y", "rate"],
        ((y, mdp_rate(linear_path(y), v)) for y in rate_ys),
    )

    report = {"v": v, "bn": "power" if has_alpha else "table"}

    schedule = _int_list(cfg, "mdp", "schedule", default=None)

    if schedule and isinstance(ctx.spec, (FiniteSupport, HeavyTailedConjugatedDiagonal)):
        tail_fn = (
            finite_support_tail_fn(ctx.spec)
            if isinstance(ctx.spec, FiniteSupport)
            else pareto_tail_fn(ctx.spec.tail_index)
        )
        arc = arcones_check(tail_fn, bn, schedule)
        ctx.csv(
            "mdp_arcones.csv",
            ["n", "b_n", "verbatim", "log_reading"],
            zip(arc.n_schedule, arc.bn_values, arc.verbatim, arc.log_reading),
        )
        report["arcones_verdict"] = arc.verdict

    all_censored = False
    if _get(cfg, "mdp", "compare", "bool", default=True):
        if not schedule:
            cfg.err("mdp", "schedule", "missing required key (needed for the comparison run)")
        y = _get(cfg, "mdp", "y", "float", default=1.0)
        reps = _get(cfg, "mdp", "reps", "int", default=2000)
        variants, lam_info = _lam_variants(ctx, "mdp", schedule[-1])
        report.update(lam_info)
        center = None
        for suffix, lam in variants:
            rep = mdp_compare(
                ctx.spec, lam, v=v, bn=bn, y=y, n_schedule=schedule, reps=reps,
                rng=RngStream(ctx.seed, 2), threads=ctx.threads,
            )
            if suffix == "":
                center = rep
            ctx.csv(
                f"mdp_compare{suffix}.csv",
                [
                    "n", "b_n", "p_hat", "ci_lo", "ci_hi",
                    "value", "value_ci_lo", "value_ci_hi", "censored",
                ],
                (
                    (nn, bv, p, lo, hi, val, vlo, vhi, c)
                    for nn, bv, p, lo, hi, val, vlo, vhi, c in zip(
                        rep.n_schedule,
                        [bn.b(int(m)) for m in rep.n_schedule],
                        rep.p_hat, rep.ci_lo, rep.ci_hi,
                        rep.values, rep.values_ci_lo, rep.values_ci_hi,
                        rep.censored,
                    )
                ),
            )
        report["target"] = center.target
        report["censored_points"] = int(np.sum(center.censored))
        all_censored = bool(np.all(center.censored))

    ctx.json("mdp.json", report)
    return 4 if all_censored else 0


def cmd_decompose(ctx: _RunContext) -> int:
    cfg = ctx.cfg
    if ctx.spec.dim != 2:
        raise ConfigError(
            "the coboundary solver requires d = 2; for higher dimensions center "
            "with an exact drift and use the martingale/remainder split "
            "(r_seq and um_d_seq from extract_martingale) instead"
        )
    grid_size = _get(cfg, "decompose", "grid_size", "int", default=2048)
    tol = _get(cfg, "decompose", "tol", "float", default=1e-8)
    n = _get(cfg, "decompose", "n", "int", default=64)
    binned_reps = _get(cfg, "decompose", "binned_reps", "int", default=0)

    sol = solve_poisson(ctx.spec, grid_size=grid_size, tol=tol)
    resid = poisson_residual(sol, ctx.spec, refine=1)
    ctx.csv("psi.csv", ["angle", "psi"], zip(sol.grid, sol.psi))

    x0 = ProjectivePoint.from_vector(direction_grid(2, 1)[0])
    path = run_walk(ctx.spec, x0, n, RngStream(ctx.seed, 3))
    ext = extract_martingale(path, sol, spec=ctx.spec)
    prev_dirs = np.vstack([x0.direction, path.directions[:-1]])
    psi_prev = np.atleast_1d(sol.psi_at(prev_dirs))
    psi_cur = np.atleast_1d(sol.psi_at(path.directions))
    ctx.csv(
        "decompose.csv",
        ["k", "increment", "d", "psi_prev", "psi_cur"],
        (
            (k + 1, inc, d, pp, pc)
            for k, (inc, d, pp, pc) in enumerate(
                zip(path.increments, ext.d_seq, psi_prev, psi_cur)
            )
        ),
    )
    report = {
        "lambda_used": sol.lambda_used,
        "grid_size": sol.grid_size,
        "truncation_terms": sol.truncation_terms,
        "tail_bound": sol.tail_bound,
        "sup_psi": sol.sup_abs(),
        "residual": resid,
        "residual_within_10tol": bool(resid <= 10.0 * tol),
        "coboundary_gap": ext.coboundary_gap,
        "n": n,
    }
    if binned_reps > 0:
        check = binned_martingale_means(
            ctx.spec, x0, n=n, reps=binned_reps, sol=sol,
            rng=RngStream(ctx.seed, 3), threads=ctx.threads,
        )
        report["binned_max_violation"] = check.max_violation(5e-3)
        ctx.csv(
            "binned_means.csv",
            ["bin_center", "mean", "std_error", "count"],
            zip(check.bin_centers, check.means, check.std_errors, check.counts),
        )
    ctx.json("decompose.json", report)
    return 0


def cmd_check_measure(ctx: _RunContext) -> int:
    samples = _get(ctx.cfg, "check_measure", "samples", "int", default=256)
    if samples < 8:
        ctx.cfg.err("check_measure", "samples", "must be at least 8")
    gen = RngStream(ctx.seed, 4).generator()
    checks = []

    ys = sample_entries(ctx.spec, gen, samples)
    checks.append(("entries-finite", bool(np.all(np.isfinite(ys))), float(np.abs(ys).max())))

    norms_n = [big_n(m) for m in ys[: min(samples, 64)]]
    checks.append(("invertible", all(math.isfinite(t) for t in norms_n), max(norms_n)))

    # cocycle identity on sampled pairs and random unit directions
    half = samples // 2
    g, gp = ys[:half], ys[half : 2 * half]
    u = gen.standard_normal((half, ctx.spec.dim))
    u /= np.linalg.norm(u, axis=1)[:, None]
    gpu = np.einsum("bij,bj->bi", gp, u)
    npu = np.linalg.norm(gpu, axis=1)
    w = gpu / npu[:, None]
    lhs = np.log(np.linalg.norm(np.einsum("bij,bjk,bk->bi", g, gp, u), axis=1))
    rhs = np.log(np.linalg.norm(np.einsum("bij,bj->bi", g, w), axis=1)) + np.log(npu)
    coc_gap = float(np.abs(lhs - rhs).max())
    checks.append(("cocycle-identity", coc_gap <= 1e-10, coc_gap))

    dirs = np.tile(direction_grid(ctx.spec.dim, 1)[0], (128, 1))
    for _ in iter_batch_increments(ctx.spec, dirs, 64, gen):
        pass
    drift = float(np.abs(np.linalg.norm(dirs, axis=1) - 1.0).max())
    checks.append(("unit-direction-drift", drift <= 1e-12, drift))

    if isinstance(ctx.spec, ScaledRotation):
        dirs = np.tile(direction_grid(ctx.spec.dim, 1)[0], (256, 1))
        incs = np.concatenate(list(iter_batch_increments(ctx.spec, dirs, 4, gen)))
        exact = bool(np.all(np.isin(incs, ctx.spec.log_scales)))
        checks.append(("increments-in-log-scales", exact, float(incs.max())))
    elif isinstance(ctx.spec, HeavyTailedConjugatedDiagonal):
        logs = np.array([math.log(big_n(m)) for m in ys])
        t = 2.0
        emp = float(np.mean(logs > t))
        target = t**-ctx.spec.tail_index
        se = math.sqrt(target * (1.0 - target) / samples)
        checks.append(("heavy-tail-index", abs(emp - target) <= 5.0 * se + 0.02, emp))

    ctx.csv("check_measure.csv", ["check", "passed", "statistic"], checks)
    ctx.json(
        "check_measure.json",
        {
            "samples": samples,
            "checks": [{"name": c, "passed": p, "statistic": s} for c, p, s in checks],
            "all_passed": all(p for _, p, _ in checks),
        },
    )
    if not all(p for _, p, _ in checks):
        raise NumericFailure(
            "measure sanity checks failed: "
            + ", ".join(c for c, p, _ in checks if not p)
        )
    return 0


_COMMANDS = {
    "lyapunov": cmd_lyapunov,
    "tails": cmd_tails,
    "bounds": cmd_bounds,
    "mdp": cmd_mdp,
    "decompose": cmd_decompose,
    "check-measure": cmd_check_measure,
}


# ---------------------------------------------------------------------------
# entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gllab",
        description="Monte Carlo laboratory for products of random invertible matrices",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML experiment config")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--threads", type=int, default=None, help="worker pool size")
        p.add_argument("--out", default=None, help="output directory")
    return parser


def _run(args) -> int:
    cfg = _Config(args.config)
    spec = _parse_measure(cfg)
    label = _get(cfg, "run", "cocycle", "str", default="log-norm")
    if label != "log-norm":
        cfg.err("run", "cocycle", f"only the 'log-norm' cocycle is configurable, got {label!r}")
    seed, seed_source = _resolve_seed(args, cfg)
    if not 0 <= seed < 2**64:
        raise ConfigError(f"master seed must lie in [0, 2^64), got {seed}")
    threads = args.threads if args.threads is not None else _get(cfg, "run", "threads", "int", default=1)
    if threads < 1:
        raise ConfigError(f"thread count must be positive, got {threads}")
    out_dir = args.out if args.out is not None else _get(
        cfg, "run", "out", "str", default=os.path.join("runs", args.command)
    )
    os.makedirs(out_dir, exist_ok=True)
    digest = hashlib.sha256(
        f"{cfg.sha256}|{args.command}|{seed}|{__version__}".encode()
    ).hexdigest()
    ctx = _RunContext(
        cfg=cfg, spec=spec, command=args.command, seed=seed, seed_source=seed_source,
        threads=threads, out_dir=out_dir, run_hash=digest[:16],
    )
    started = time.perf_counter()
    try:
        return _COMMANDS[args.command](ctx)
    finally:
        ctx.write_manifest(time.perf_counter() - started)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _run(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (DomainError, InvariantError) as e:
        print(f"invalid parameter: {e}", file=sys.stderr)
        return 2
    except ScheduleRangeError as e:
        print(f"schedule range: {e}", file=sys.stderr)
        return 4
    except NumericFailure as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3
    except GllabError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
