"""Command-line surface: env, walk, oracle, check, renorm, regen, clt.

Every command writes a report envelope embedding the resolved
configuration and its hash; rerunning with the same configuration
reproduces every numeric field byte for byte (timestamps aside).
Exit codes: 0 success, 1 validation or I/O error, 2 inconclusive verdict
under --strict.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import reports
from .ballisticity import (effective_criterion_check,
                           polynomial_condition_check, tgamma_decay_fit)
from .clt import atypical_quenched_frequency, clt_scaling_check, velocity_plugin
from .environment import (EnvironmentSpec, MixingParams, Region, constant_env,
                          generate, load_snapshot, save_snapshot)
from .geometry import BoxSpec, ConeSpec, DirectionSpec, make_rotation
from .oracle import exit_distribution_exact
from .regen import collect_regenerations, tail_and_moments
from .renorm import (build_ladder_ec, build_ladder_poly, classify_boxes,
                     poly_boxes, preset_by_name)
from .walk import (BoxExit, ConeExit, LevelDown, LevelUp, StopSpec,
                   TransverseExit, simulate_batch)


class CliError(ValueError):
    pass


def _parse_region(text: str) -> Region:
    lo, hi = [], []
    for part in text.split(","):
        a, b = part.split(":")
        lo.append(int(a))
        hi.append(int(b))
    return Region(tuple(lo), tuple(hi))


def _parse_vec(text: str, cast=int):
    return tuple(cast(x) for x in text.split(","))


def _parse_stops(text: str, d: int) -> StopSpec:
    clauses = []
    horizon = None
    for part in text.split(";"):
        bits = part.split(":")
        kind = bits[0]
        if kind == "horizon":
            horizon = int(bits[1])
        elif kind in ("up", "down"):
            u = _parse_vec(bits[1], float)
            c = float(bits[2])
            clauses.append(LevelUp(u, c) if kind == "up" else LevelDown(u, c))
        elif kind == "box":
            L, Lf, Lt = (float(x) for x in bits[1].split(","))
            direction = _parse_vec(bits[2]) if len(bits) > 2 else (1,) + (0,) * (d - 1)
            clauses.append(BoxExit(BoxSpec(make_rotation(direction), L, Lf, Lt,
                                           (0,) * d)))
        elif kind == "cone":
            zeta = float(bits[1])
            direction = _parse_vec(bits[2]) if len(bits) > 2 else (1,) + (0,) * (d - 1)
            clauses.append(ConeExit(ConeSpec((0,) * d, DirectionSpec.from_int(direction), zeta)))
        elif kind == "trans":
            u = float(bits[1])
            direction = _parse_vec(bits[2]) if len(bits) > 2 else (1,) + (0,) * (d - 1)
            clauses.append(TransverseExit(make_rotation(direction), u, (0,) * d))
        else:
            raise CliError(f"unknown stop clause kind {kind!r}")
    if horizon is None:
        raise CliError("a horizon clause is required in every stop spec")
    return StopSpec.first_of(*clauses, horizon=horizon)


def _env_from_args(args) -> tuple:
    """(environment, description) from --env FILE or generator flags."""
    if getattr(args, "env", None):
        env = load_snapshot(args.env)
        return env, {"snapshot": args.env, "source": env.source}
    if getattr(args, "probs", None):
        probs = _parse_vec(args.probs, float)
        env = constant_env(probs, kappa=getattr(args, "kappa", None))
        return env, env.source
    raise CliError("provide --env FILE or --probs for a constant environment")


def _spec_from_args(args) -> EnvironmentSpec:
    kind = getattr(args, "kind", "iid")
    alpha = _parse_vec(args.alpha, float) if getattr(args, "alpha", None) else None
    region = _parse_region(args.region) if getattr(args, "region", None) else None
    mixing = None
    if kind == "gibbs":
        mixing = MixingParams(C=args.C, g=args.g, r=args.r)
    probs = _parse_vec(args.probs, float) if getattr(args, "probs", None) else None
    if probs is not None:
        kind = "constant"
    return EnvironmentSpec(kind=kind, d=args.d, kappa=args.kappa, alpha=alpha,
                           probs=probs, region=region, mixing=mixing,
                           sweeps=getattr(args, "sweeps", 0) or 0)


def _emit(args, command: str, payload, warnings=None, out_name="report.json") -> int:
    config = {k: v for k, v in vars(args).items()
              if k not in ("func", "out", "out_dir") and v is not None}
    config["command"] = command
    env = reports.envelope(command, config, payload, warnings=warnings,
                           seed=getattr(args, "seed", None))
    out = getattr(args, "out", None)
    if out is None:
        out_dir = getattr(args, "out_dir", ".") or "."
        os.makedirs(out_dir, exist_ok=True)
        out = os.path.join(out_dir, out_name)
    reports.write_report(out, env)
    print(out)
    verdict = payload.get("verdict") if isinstance(payload, dict) else None
    if args.strict and verdict == "inconclusive":
        return 2
    return 0


# ---------------------------------------------------------------------------
# subcommand handlers


def cmd_env_gen(args) -> int:
    spec = _spec_from_args(args)
    if spec.region is None:
        raise CliError("--region is required to materialize a snapshot")
    env = generate(spec, args.seed)
    save_snapshot(env, args.out)
    print(args.out)
    return 0


def cmd_env_inspect(args) -> int:
    env = load_snapshot(args.file)
    info = {"d": env.d, "kappa": env.kappa,
            "region": [list(env.region.lo), list(env.region.hi)],
            "sites": env.region.size(), "source": env.source}
    print(json.dumps(info, sort_keys=True, indent=2))
    return 0


def cmd_walk_sim(args) -> int:
    env, desc = _env_from_args(args)
    stop = _parse_stops(args.stops, env.d)
    start = _parse_vec(args.start)
    mode = 1 if args.mode == "coupled" else 0
    res = simulate_batch(env, start, stop, args.seed, args.n, mode=mode,
                         record=bool(args.dump), threads=args.threads)
    payload = {"environment": desc, "start": list(start),
               "stops": stop.names() + [f"horizon({stop.horizon})"],
               "fired": res.fired_counts(),
               "mean_steps": float(res.n_steps.mean()),
               "mean_final": [float(x) for x in res.final.mean(axis=0)],
               "n": args.n, "mode": args.mode}
    if args.dump:
        with open(args.dump, "w") as fh:
            for i in range(args.n):
                t = res.trajectory(i)
                fh.write(json.dumps({"start": list(t.start),
                                     "steps": t.moves.tolist(),
                                     "annotations": {"stop": t.stop_name,
                                                     "index": t.stop_index}}) + "\n")
    warn = []
    if (res.status == -1).any():
        warn.append("some walks were horizon-truncated")
    return _emit(args, "walk sim", payload, warnings=warn, out_name="walk_sim.json")


def cmd_oracle_exit(args) -> int:
    env, desc = _env_from_args(args)
    bits = args.box.split(":")
    L, Lf, Lt = (float(x) for x in bits[0].split(","))
    direction = _parse_vec(bits[1]) if len(bits) > 1 else (1,) + (0,) * (env.d - 1)
    box = BoxSpec(make_rotation(direction), L, Lf, Lt, (0,) * env.d)
    start = _parse_vec(args.start) if args.start else (0,) * env.d
    res = exit_distribution_exact(env, box, start)
    payload = {"environment": desc, "box": [L, Lf, Lt],
               "direction": list(direction), "start": list(start),
               "class_probs": res.class_probs, "n_states": res.n_states,
               "prob_sum": float(sum(res.class_probs.values()))}
    return _emit(args, "oracle exit", payload, out_name="oracle_exit.json")


def cmd_check_pj(args) -> int:
    spec = _spec_from_args(args)
    rep = polynomial_condition_check(spec, _parse_vec(args.direction), args.N0,
                                     args.J, args.n_env, args.seed,
                                     preset_name=args.preset, method=args.method)
    warn = ["start subsample in use"] if rep.details.get("start_subsample") else []
    if "warning" in rep.details:
        warn.append(rep.details["warning"])
    return _emit(args, "check pj", rep.to_dict(), warnings=warn, out_name="check_pj.json")


def cmd_check_ec(args) -> int:
    spec = _spec_from_args(args)
    try:
        rep = effective_criterion_check(spec, _parse_vec(args.direction),
                                        _parse_vec(args.Lgrid, float),
                                        _parse_vec(args.Ltildegrid, float),
                                        _parse_vec(args.agrid, float),
                                        args.n_env, args.seed,
                                        c_prime=args.Cprime,
                                        c_dblprime=args.Cdoubleprime)
    except ValueError as exc:
        if "empty feasible grid" in str(exc):
            print(f"error: {exc}", file=sys.stderr)
            return 1
        raise
    return _emit(args, "check ec", rep.to_dict(), out_name="check_ec.json")


def cmd_check_tgamma(args) -> int:
    if getattr(args, "env", None) or getattr(args, "probs", None):
        source = _env_from_args(args)[0]
    else:
        source = _spec_from_args(args)
    rep = tgamma_decay_fit(source, _parse_vec(args.direction), args.b,
                           _parse_vec(args.levels, float), args.n_walks, args.seed)
    warn = [r["note"] for r in rep["levels"] if "note" in r]
    rep["verdict"] = rep["fit"].get("verdict", "inconclusive")
    return _emit(args, "check tgamma", rep, warnings=warn, out_name="check_tgamma.json")


def cmd_renorm_ladder(args) -> int:
    if args.kind == "ec":
        lad = build_ladder_ec(args.L0, args.Ltilde0, args.u0, args.a0, args.k_max,
                              d=args.d)
        payload = {"kind": "ec", "L": list(lad.L), "Lt": list(lad.Lt),
                   "N": list(lad.N), "a": list(lad.a), "u": list(lad.u)}
    else:
        preset = preset_by_name(args.preset)
        lad = build_ladder_poly(args.N0, args.kappa, args.k_max, d=args.d,
                                multiplier_override=preset.multiplier_override,
                                v=preset.v)
        payload = {"kind": "poly", "N": [int(n) for n in lad.N],
                   "multiplier": lad.multiplier,
                   "ratio_divisible_110": lad.ratio_divisible_110,
                   "preset": args.preset}
    return _emit(args, "renorm ladder", payload, out_name="renorm_ladder.json")


def cmd_renorm_classify(args) -> int:
    env, desc = _env_from_args(args)
    boxes = poly_boxes(_parse_vec(args.direction), args.N0, env.kappa, args.level,
                       preset=preset_by_name(args.preset))
    anchors = [tuple(int(x) for x in a.split(",")) for a in args.anchors.split(";")]
    gb = classify_boxes(env, boxes, args.level, anchors)
    payload = {"environment": desc, "level": args.level, "preset": args.preset,
               "status": {str(k): bool(v) for k, v in gb.status.items()},
               "witness": {str(k): list(v) for k, v in gb.witness.items()},
               "n_bad": gb.n_bad()}
    warn = [f"preset {args.preset} in use"] if args.preset != "paper" else []
    return _emit(args, "renorm classify", payload, warnings=warn,
                 out_name="renorm_classify.json")


def cmd_regen_stats(args) -> int:
    env, desc = _env_from_args(args)
    records, _ = collect_regenerations(env, _parse_vec(args.l), args.L,
                                       args.n, args.horizon, args.seed,
                                       zeta=args.zeta, window=args.window,
                                       threads=args.threads)
    out = tail_and_moments(records, args.L, env.kappa, seed=args.seed, g=args.g,
                           d=env.d)
    payload = {"environment": desc, **{k: v for k, v in out.items()}}
    warn = []
    if out.get("censoring_fraction", 0) > 0:
        warn.append(f"censoring fraction {out['censoring_fraction']:.3f}")
    code = _emit(args, "regen stats", payload, warnings=warn, out_name="regen_stats.json")
    if args.csv and "tail" in out:
        reports.write_csv(args.csv, ["u", "survival"],
                          list(zip(out["tail"].u_grid, out["tail"].survival)))
    return code


def cmd_clt_check(args) -> int:
    env, desc = _env_from_args(args)
    payload = {"environment": desc, "grid": {}}
    warn = []
    for n in _parse_vec(args.n_grid):
        rep = clt_scaling_check(env, int(n), args.reps, args.seed,
                                ratio_reps=args.ratio_reps, threads=args.threads)
        payload["grid"][str(n)] = rep
    v = velocity_plugin(env, int(max(_parse_vec(args.n_grid))), max(args.reps, 100),
                        args.seed + 1, threads=args.threads)
    payload["velocity"] = {"v_hat": [float(x) for x in v.v_hat], "ci": v.ci}
    return _emit(args, "clt check", payload, warnings=warn, out_name="clt_check.json")


def cmd_clt_atypical(args) -> int:
    spec = _spec_from_args(args)
    rep = atypical_quenched_frequency(spec, args.M, args.beta, args.c,
                                      _parse_vec(args.direction), args.n_env,
                                      args.seed, method=args.method, g=args.g)
    warn = []
    if rep.get("beta_outside_window"):
        warn.append("beta outside the admissible window")
    if rep.get("verdict") == "inconclusive":
        warn.append(rep.get("note", "inconclusive"))
    return _emit(args, "clt atypical", rep, warnings=warn, out_name="clt_atypical.json")


# ---------------------------------------------------------------------------


def _add_env_generator_flags(p, need_d=True):
    if need_d:
        p.add_argument("--d", type=int, default=2)
    p.add_argument("--kappa", type=float, default=0.05)
    p.add_argument("--kind", choices=["iid", "gibbs"], default="iid")
    p.add_argument("--alpha", help="comma-separated Dirichlet shapes (2d values)")
    p.add_argument("--region", help="inclusive bounds per axis, e.g. -32:32,-32:32")
    p.add_argument("--C", type=float, default=1.0)
    p.add_argument("--g", type=float, default=7.0)
    p.add_argument("--r", type=int, default=1)
    p.add_argument("--sweeps", type=int, default=20)
    p.add_argument("--probs", help="constant environment transition vector")


def _add_env_source_flags(p):
    p.add_argument("--env", help="environment snapshot file")
    p.add_argument("--probs", help="constant environment transition vector")
    p.add_argument("--kappa", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rwre",
                                 description="random walks in random environments: "
                                             "simulation, exact solvers, statistics")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--preset", choices=["paper", "mini"], default="paper")
    common.add_argument("--strict", action="store_true",
                        help="exit 2 on inconclusive verdicts")
    common.add_argument("--out-dir", default=".")
    common.add_argument("--config", help="JSON file supplying flag defaults")
    sub = ap.add_subparsers(dest="group", required=True)

    def leaf(group, name):
        return group.add_parser(name, parents=[common])

    env = sub.add_parser("env").add_subparsers(dest="sub", required=True)
    g = leaf(env, "gen")
    _add_env_generator_flags(g)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_env_gen)
    i = leaf(env, "inspect")
    i.add_argument("file")
    i.set_defaults(func=cmd_env_inspect)

    walk = sub.add_parser("walk").add_subparsers(dest="sub", required=True)
    w = leaf(walk, "sim")
    _add_env_source_flags(w)
    w.add_argument("--start", default="0,0")
    w.add_argument("--stops", required=True)
    w.add_argument("--n", type=int, default=1000)
    w.add_argument("--mode", choices=["quenched", "coupled"], default="quenched")
    w.add_argument("--out")
    w.add_argument("--dump", help="write trajectories as JSON lines")
    w.set_defaults(func=cmd_walk_sim)

    orc = sub.add_parser("oracle").add_subparsers(dest="sub", required=True)
    o = leaf(orc, "exit")
    _add_env_source_flags(o)
    o.add_argument("--box", required=True, help="L,Lfront,Ltilde[:direction]")
    o.add_argument("--start")
    o.add_argument("--out")
    o.set_defaults(func=cmd_oracle_exit)

    chk = sub.add_parser("check").add_subparsers(dest="sub", required=True)
    pj = leaf(chk, "pj")
    _add_env_generator_flags(pj)
    pj.add_argument("--N0", type=int, required=True)
    pj.add_argument("--J", type=float, required=True)
    pj.add_argument("--direction", default="1,0")
    pj.add_argument("--n-env", type=int, default=50)
    pj.add_argument("--method", choices=["exact", "mc"], default="exact")
    pj.add_argument("--out")
    pj.set_defaults(func=cmd_check_pj)
    ec = leaf(chk, "ec")
    _add_env_generator_flags(ec)
    ec.add_argument("--Lgrid", required=True)
    ec.add_argument("--Ltildegrid", required=True)
    ec.add_argument("--agrid", required=True)
    ec.add_argument("--Cprime", type=float, default=1.0)
    ec.add_argument("--Cdoubleprime", type=float, default=None)
    ec.add_argument("--direction", default="1,0")
    ec.add_argument("--n-env", type=int, default=100)
    ec.add_argument("--out")
    ec.set_defaults(func=cmd_check_ec)
    tg = leaf(chk, "tgamma")
    _add_env_generator_flags(tg)
    tg.add_argument("--env")
    tg.add_argument("--levels", required=True)
    tg.add_argument("--b", type=float, default=1.0)
    tg.add_argument("--n-walks", type=int, default=20000)
    tg.add_argument("--direction", default="1,0")
    tg.add_argument("--out")
    tg.set_defaults(func=cmd_check_tgamma)

    rn = sub.add_parser("renorm").add_subparsers(dest="sub", required=True)
    rl = leaf(rn, "ladder")
    rl.add_argument("--kind", choices=["ec", "poly"], required=True)
    rl.add_argument("--d", type=int, default=2)
    rl.add_argument("--L0", type=float, default=10.0)
    rl.add_argument("--Ltilde0", type=float, default=20.0)
    rl.add_argument("--u0", type=float, default=0.5)
    rl.add_argument("--a0", type=float, default=1.0)
    rl.add_argument("--N0", type=int, default=100)
    rl.add_argument("--kappa", type=float, default=0.05)
    rl.add_argument("--k-max", type=int, default=3)
    rl.add_argument("--out")
    rl.set_defaults(func=cmd_renorm_ladder)
    rc = leaf(rn, "classify")
    _add_env_source_flags(rc)
    rc.add_argument("--level", type=int, default=0)
    rc.add_argument("--N0", type=int, required=True)
    rc.add_argument("--direction", default="1,0")
    rc.add_argument("--anchors", default="0,0", help="semicolon-separated anchors")
    rc.add_argument("--out")
    rc.set_defaults(func=cmd_renorm_classify)

    rg = sub.add_parser("regen").add_subparsers(dest="sub", required=True)
    rs = leaf(rg, "stats")
    _add_env_source_flags(rs)
    rs.add_argument("--l", default="1,0")
    rs.add_argument("--L", type=int, default=1)
    rs.add_argument("--zeta", type=float, default=None)
    rs.add_argument("--window", type=int, default=1000)
    rs.add_argument("--n", type=int, default=1000)
    rs.add_argument("--horizon", type=int, default=20000)
    rs.add_argument("--g", type=float, default=None)
    rs.add_argument("--csv", help="write the survival table as CSV")
    rs.add_argument("--out")
    rs.set_defaults(func=cmd_regen_stats)

    cl = sub.add_parser("clt").add_subparsers(dest="sub", required=True)
    cc = leaf(cl, "check")
    _add_env_source_flags(cc)
    cc.add_argument("--n-grid", default="10000")
    cc.add_argument("--reps", type=int, default=500)
    cc.add_argument("--ratio-reps", type=int, default=None)
    cc.add_argument("--out")
    cc.set_defaults(func=cmd_clt_check)
    ca = leaf(cl, "atypical")
    _add_env_generator_flags(ca)
    ca.add_argument("--M", type=float, required=True)
    ca.add_argument("--beta", type=float, required=True)
    ca.add_argument("--c", type=float, required=True)
    ca.add_argument("--direction", default="1,0")
    ca.add_argument("--n-env", type=int, default=50)
    ca.add_argument("--method", choices=["exact", "mc"], default="exact")
    ca.add_argument("--out")
    ca.set_defaults(func=cmd_clt_atypical)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    if argv is None:
        argv = sys.argv[1:]
    args = ap.parse_args(argv)
    if args.config:
        with open(args.config) as fh:
            defaults = json.load(fh)
        given = {tok.split("=", 1)[0].lstrip("-").replace("-", "_")
                 for tok in argv if tok.startswith("--")}
        for k, v in defaults.items():
            key = k.replace("-", "_")
            if key not in given and hasattr(args, key):
                setattr(args, key, v)
    try:
        return args.func(args)
    except (CliError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
