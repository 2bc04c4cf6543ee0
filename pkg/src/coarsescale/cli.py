"""Command line harness: JSON config in, CSV data and a JSON summary out.

Every run is deterministic given its config and seed, and the summary
echoes the full merged config so no default is hidden.

Exit codes: 0 PASS, 1 FAIL, 2 INCONCLUSIVE, 64 usage error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import scaling
from .coarse_space import NetSpace, folner_box, growth, min_separation, shell_measure
from .glued import (
    QUOTED,
    GluedScalingMap,
    GluedSpace,
    GluedSpaceSpec,
    attachment_count,
    attachment_drift,
    attachment_table,
    flat_growth,
    growth_degree,
    multiplicity_bound,
)
from .group_model import GroupSpec
from .net import Box, BudgetExceeded, NetIndex, NetSet, count_net, enumerate_net, haar_measure, round_arrays
from .qi import parse_stages

EXIT_PASS, EXIT_FAIL, EXIT_INCONCLUSIVE, EXIT_USAGE = 0, 1, 2, 64

COMMON = {"rank": 1, "seed": 0, "radius": 1.0, "tol": None, "threads": 1}

FAMILY = {"base": 2.0, "js": [5, 6, 7, 8], "scale": None, "exponents": None, "margin": 0.0, "offset": None,
          "budget": 10**7}

DEFAULTS = {
    "net-check": {
        "samples": 100000, "k_bound": 20, "m_bound": 1000000,
        "window": [[-4, 12], [-4, 12], [-2, 3]], "centers": 100, "ball_radii": [1, 2, 3],
        "boxes": 200, "side": [1.0, 50.0], "box_offset": 50.0, "height_offset": 5.0,
    },
    "folner": {"family": dict(FAMILY, js=[3, 4, 5, 6, 7, 8]), "threshold": 0.05},
    "growth": {"r_max": 8, "min_slope": 0.5, "flat_dims": [2]},
    "scaling": {"map": ["round"], "family": dict(FAMILY, margin=3.0), "k": None,
                "growth_tol": scaling.DEFAULT_GROWTH_TOL, "floor": scaling.DEFAULT_RESIDUAL_FLOOR,
                "gammas": None, "glued_locus": None, "flat_rule": QUOTED},
    "non-scaling": {"map": ["pwl 1 0 1,2", "round"],
                    "family_a": dict(FAMILY, js=[8, 10, 12, 14, 16], scale=[8.0, 1.0], exponents=[0, 1], offset=[-8.0, 0.0]),
                    "family_b": dict(FAMILY, js=[8, 10, 12, 14, 16], scale=[8.0, 1.0], exponents=[0, 1], offset=[0.0, 0.0]),
                    "budget": 10**8},
    "glued-check": {"gammas": [2.0], "J": 40, "sets": 100, "window": [[-4, 24], [-4, 8], [-2, 3]],
                    "flat_radius": 1, "set_side": [1.0, 40.0]},
    "drift": {"gammas": [2.0], "locus": 1, "m": 4.0, "J": 30, "bound": None},
}

TOL_DEFAULTS = {"net-check": 1e-9, "folner": None, "growth": None, "scaling": scaling.DEFAULT_TOL,
                "non-scaling": scaling.DEFAULT_NON_SCALING_TOL, "glued-check": None, "drift": None}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="coarsescale", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(DEFAULTS))
    p.add_argument("--config", type=Path, help="JSON config file")
    p.add_argument("--out", type=Path, help="directory for <command>.csv and <command>.json")
    p.add_argument("--seed", type=int)
    p.add_argument("--radius", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--threads", type=int)
    return p


def merge_config(command: str, user: dict, overrides: dict) -> dict:
    cfg = copy.deepcopy(COMMON)
    cfg["tol"] = TOL_DEFAULTS[command]
    cfg.update(copy.deepcopy(DEFAULTS[command]))
    unknown = set(user) - set(cfg)
    if unknown:
        raise UsageError(f"unknown config keys for {command}: {sorted(unknown)}")
    for key, val in user.items():
        if isinstance(cfg.get(key), dict) and isinstance(val, dict):
            bad = set(val) - set(cfg[key])
            if bad:
                raise UsageError(f"unknown keys in {key}: {sorted(bad)}")
            cfg[key].update(val)
        else:
            cfg[key] = val
    for key, val in overrides.items():
        if val is not None:
            cfg[key] = val
    if not isinstance(cfg["rank"], int) or cfg["rank"] < 1:
        raise UsageError("rank must be a positive integer")
    if cfg["threads"] < 1:
        raise UsageError("threads must be at least 1")
    if cfg["seed"] < 0 or cfg["seed"] >= 2**64:
        raise UsageError("seed must fit in an unsigned 64-bit integer")
    return cfg


# ---------------------------------------------------------------------------
# helpers


def _rows_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        obj = float(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def build_family(spec: GroupSpec, fam: dict) -> list:
    """Net sets of folner_box(scale_i * base^(exponent_i * j)) for j in fam['js']."""
    d = spec.dim_x
    scale = fam["scale"] or [1.0] * d
    expo = fam["exponents"] or [1] * d
    if len(scale) != d or len(expo) != d:
        raise UsageError(f"family scale and exponents need {d} entries")
    out = []
    for j in fam["js"]:
        shape = [s * fam["base"] ** (e * j) for s, e in zip(scale, expo)]
        box = folner_box(spec, shape, margin=fam["margin"], offset=fam["offset"])
        out.append(enumerate_net(spec, box, int(fam["budget"])))
    return out


def _boundary_sizes(space, family, r, threads):
    if threads <= 1:
        return [len(space.boundary(S, r)) for S in family]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(lambda S: len(space.boundary(S, r)), family))


def _verdict_code(verdict: str) -> int:
    return {"PASS": EXIT_PASS, "FAIL": EXIT_FAIL}.get(verdict, EXIT_INCONCLUSIVE)


# ---------------------------------------------------------------------------
# subcommands


def run_net_check(cfg):
    spec = GroupSpec(cfg["rank"])
    space = NetSpace(spec, tol=cfg["tol"])
    rng = np.random.default_rng(cfg["seed"])
    checks = {}

    n = int(cfg["samples"])
    k = rng.integers(-cfg["k_bound"], cfg["k_bound"] + 1, size=(n, spec.dim_t))
    m = rng.integers(-cfg["m_bound"], cfg["m_bound"] + 1, size=(n, spec.dim_x))
    x = np.exp(spec.heights(k.astype(float))) * m
    kk, mm = round_arrays(spec, x, k.astype(float), cfg["tol"])
    failures = int(np.sum(np.any(kk != k, axis=1) | np.any(mm != m, axis=1)))
    checks["round_trip_failures"] = failures

    win = cfg["window"]
    window = enumerate_net(spec, Box(tuple(map(tuple, win[: spec.dim_x])), tuple(map(tuple, win[spec.dim_x :]))))
    checks["separation"] = min_separation(space, window)
    checks["window_size"] = len(window)

    mismatches = 0
    sizes = {}
    for r in cfg["ball_radii"]:
        for _ in range(int(cfg["centers"])):
            kc = tuple(int(v) for v in rng.integers(-10, 11, size=spec.dim_t))
            mc = tuple(int(v) for v in rng.integers(-50, 51, size=spec.dim_x))
            a = space.ball_size(NetIndex(kc, mc), r)
            b = space.ball_size(NetIndex((0,) * spec.dim_t, mc), r)
            mismatches += a != b
            sizes[r] = max(sizes.get(r, 0), a)
    checks["ball_translation_mismatches"] = int(mismatches)
    checks["max_ball_size"] = {str(r): v for r, v in sizes.items()}

    rows = []
    violations = 0
    if spec.n == 1:
        D = space.unit_box_diameter()
        checks["unit_box_diameter"] = D
        lo, hi = cfg["side"]
        for i in range(int(cfg["boxes"])):
            lx, ly, lt = rng.uniform(lo, hi, size=3)
            x0, y0 = rng.uniform(-cfg["box_offset"], cfg["box_offset"], size=2)
            c = rng.uniform(-cfg["height_offset"], cfg["height_offset"])
            box = Box(((x0, x0 + lx), (y0, y0 + ly)), ((c, c + lt),))
            mu, cnt, sh = haar_measure(box), count_net(spec, box, cfg["tol"]), shell_measure(space, box, D)
            ok = abs(mu - cnt) <= sh
            violations += not ok
            rows.append((i, float(x0), float(lx), float(y0), float(ly), float(c), float(lt), mu, cnt, sh, int(ok)))
        checks["count_measure_violations"] = violations
    else:
        checks["count_measure_violations"] = None
    ok = failures == 0 and checks["separation"] > 0 and mismatches == 0 and violations == 0
    csv_text = _rows_csv(("box", "x0", "lx", "y0", "ly", "t0", "lt", "measure", "count", "shell", "ok"), rows)
    return ("PASS" if ok else "FAIL"), checks, csv_text


def run_folner(cfg):
    spec = GroupSpec(cfg["rank"])
    space = NetSpace(spec)
    fam = build_family(spec, cfg["family"])
    bsz = _boundary_sizes(space, fam, cfg["radius"], cfg["threads"])
    ratios = [b / len(S) for S, b in zip(fam, bsz)]
    decreasing = all(b < a for a, b in zip(ratios, ratios[1:]))
    below = ratios[-1] < cfg["threshold"]
    rows = [(i, len(S), b, r) for i, (S, b, r) in enumerate(zip(fam, bsz, ratios))]
    summary = {"ratios": ratios, "strictly_decreasing": decreasing, "final_below_threshold": below}
    return ("PASS" if decreasing and below else "FAIL"), summary, _rows_csv(
        ("set_index", "set_size", "boundary_size", "ratio"), rows)


def run_growth(cfg):
    spec = GroupSpec(cfg["rank"])
    space = NetSpace(spec)
    centre = NetIndex((0,) * spec.dim_t, (0,) * spec.dim_x)
    counts = growth(space, centre, int(cfg["r_max"]))
    radii = np.arange(1, len(counts))
    slope = float(np.polyfit(radii, np.log(counts[1:]), 1)[0])
    degrees = {}
    rows = [("net", r, c) for r, c in enumerate(counts)]
    for d in cfg["flat_dims"]:
        fc = flat_growth(int(d), 64)
        rr = list(range(8, 65))
        degrees[str(d)] = growth_degree(fc[8:], rr)
        rows += [(f"flat{d}", r, c) for r, c in enumerate(fc[: int(cfg["r_max"]) + 1])]
    ok = slope > cfg["min_slope"]
    summary = {"net_counts": counts, "log_slope": slope, "flat_degrees": degrees}
    return ("PASS" if ok else "FAIL"), summary, _rows_csv(("space", "r", "count"), rows)


def _build_map(cfg, spec):
    if cfg.get("glued_locus") is not None:
        if not cfg.get("gammas"):
            raise UsageError("a glued map needs gammas")
        gspec = GluedSpaceSpec(spec, tuple(cfg["gammas"]))
        return GluedScalingMap(gspec, int(cfg["glued_locus"]), cfg["flat_rule"])
    try:
        return parse_stages(spec, cfg["map"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def run_scaling(cfg):
    spec = GroupSpec(cfg["rank"])
    space = NetSpace(spec)
    q = _build_map(cfg, spec)
    fam = build_family(spec, cfg["family"])
    bsz = _boundary_sizes(space, fam, cfg["radius"], cfg["threads"])
    rep = scaling.estimate_scaling(q, fam, cfg["radius"], space, cfg["tol"], bsz)
    k = cfg["k"] if cfg["k"] is not None else rep.k
    chk = scaling.check_k_to_1(q, k, fam, cfg["radius"], space, cfg["growth_tol"], cfg["floor"], bsz)
    summary = {"estimate": rep.summary(), "k_to_1": chk.summary(), "k": k}
    if rep.verdict != scaling.CONVERGED:
        verdict = "INCONCLUSIVE"
    else:
        verdict = chk.verdict
    return verdict, summary, rep.to_csv()


def run_non_scaling(cfg):
    spec = GroupSpec(cfg["rank"])
    space = NetSpace(spec, budget=int(cfg["budget"]))
    q = _build_map(cfg, spec)
    fa = build_family(spec, cfg["family_a"])
    fb = build_family(spec, cfg["family_b"])
    res = scaling.non_scaling_test(q, fa, fb, cfg["radius"], cfg["tol"], scaling.DEFAULT_TOL, space)
    rows = []
    for name, rep in zip("ab", res.reports):
        rows += [(name, r.set_index, r.set_size, r.preimage_size, r.boundary_size, r.ratio, r.residual) for r in rep.rows]
    verdict = {"NOT_SCALING": "PASS", "CONSISTENT": "FAIL"}.get(res.verdict, "INCONCLUSIVE")
    csv_text = _rows_csv(("family",) + scaling.CSV_COLUMNS, rows)
    return verdict, res.summary(), csv_text


def run_glued_check(cfg):
    spec = GroupSpec(cfg["rank"])
    gspec = GluedSpaceSpec(spec, tuple(cfg["gammas"]), int(cfg["J"]))
    X = GluedSpace(gspec)
    rng = np.random.default_rng(cfg["seed"])
    table = attachment_table(gspec)
    mult = max(len(v) for v in table.values())
    bound = max(multiplicity_bound(g) for g in gspec.gammas)
    win = cfg["window"]
    window = enumerate_net(spec, Box(tuple(map(tuple, win[: spec.dim_x])), tuple(map(tuple, win[spec.dim_x :]))))
    sep = X.min_separation(X.window(window, int(cfg["flat_radius"])))
    rows, violations = [], 0
    lo, hi = cfg["set_side"]
    attempts = 0
    while len(rows) < int(cfg["sets"]) and attempts < 10 * int(cfg["sets"]):
        attempts += 1
        sides = rng.uniform(lo, hi, size=spec.dim_x)
        offs = rng.uniform(-hi / 4, hi / 2, size=spec.dim_x)
        c = rng.uniform(-1.5, 0.5, size=spec.dim_t)
        lt = rng.uniform(0.5, 3.0, size=spec.dim_t)
        box = Box(tuple((float(o), float(o + a)) for o, a in zip(offs, sides)),
                  tuple((float(a), float(a + b)) for a, b in zip(c, lt)))
        S = enumerate_net(spec, box)
        if not S:
            continue
        na = attachment_count(gspec, S, table)
        nb = len(X.net.boundary(S, cfg["radius"]))
        violations += na > nb
        rows.append((len(rows), len(S), na, nb, int(na <= nb)))
    ok = sep > 0 and mult <= bound and violations == 0
    summary = {"separation": sep, "max_multiplicity": mult, "multiplicity_bound": bound,
               "attachment_points": len(table), "attachment_violations": violations, "sets_checked": len(rows),
               "sets_with_attachments": sum(1 for r in rows if r[2] > 0)}
    return ("PASS" if ok else "FAIL"), summary, _rows_csv(("set", "set_size", "attachments", "boundary_size", "ok"), rows)


def default_drift_bound(gamma: float) -> float:
    """Distance across a rounding error of gamma^2 + 1 at height 0."""
    return 2.0 * math.asinh((gamma**2 + 1.0) / 2.0)


def run_drift(cfg):
    spec = GroupSpec(cfg["rank"])
    gspec = GluedSpaceSpec(spec, tuple(cfg["gammas"]), max(int(cfg["J"]) + 3, 1))
    i = int(cfg["locus"])
    curve = attachment_drift(gspec, float(cfg["m"]), i, int(cfg["J"]))
    bound = cfg["bound"] if cfg["bound"] is not None else default_drift_bound(gspec.gammas[i - 1])
    tail = curve[-10:]
    increasing = len(tail) > 1 and all(b > a for a, b in zip(tail, tail[1:]))
    if max(curve) <= bound:
        verdict, shape = "PASS", "BOUNDED"
    elif increasing:
        verdict, shape = "FAIL", "UNBOUNDED"
    else:
        verdict, shape = "INCONCLUSIVE", "UNCLEAR"
    summary = {"curve": curve, "bound": bound, "max": max(curve), "tail_increasing": increasing, "shape": shape}
    return verdict, summary, _rows_csv(("j", "drift"), [(j + 1, v) for j, v in enumerate(curve)])


RUNNERS = {
    "net-check": run_net_check,
    "folner": run_folner,
    "growth": run_growth,
    "scaling": run_scaling,
    "non-scaling": run_non_scaling,
    "glued-check": run_glued_check,
    "drift": run_drift,
}


def run(command: str, cfg: dict):
    """Run one experiment; returns (exit code, summary dict, csv text)."""
    verdict, details, csv_text = RUNNERS[command](cfg)
    summary = {"command": command, "verdict": verdict, "config": cfg, "result": details}
    return _verdict_code(verdict), _jsonable(summary), csv_text


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        user = {}
        if args.config is not None:
            try:
                user = json.loads(args.config.read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise UsageError(f"cannot read config: {exc}") from exc
            if not isinstance(user, dict):
                raise UsageError("config must be a JSON object")
        overrides = {"seed": args.seed, "radius": args.radius, "tol": args.tol, "threads": args.threads}
        cfg = merge_config(args.command, user, overrides)
        code, summary, csv_text = run(args.command, cfg)
    except (UsageError, BudgetExceeded, ValueError, TypeError, KeyError) as exc:
        print(f"coarsescale: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    text = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / f"{args.command}.json").write_text(text)
        (args.out / f"{args.command}.csv").write_text(csv_text)
    sys.stdout.write(text)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
