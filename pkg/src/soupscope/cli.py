"""Command line entry point: ``soupscope <subcommand> ...``.

Exit codes: 0 success, 2 invalid configuration or input, 3 solver or
consistency failure, 4 an invariant violation found by ``verify`` (or a
bound violation found by ``lamination``).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import (ConfigError, ConsistencyError, DegenerateInputError, DomainError, InvalidInputError,
                     NoBridgeError, RejectedConfigurationError, SolverError)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_VIOLATION = 4

log = logging.getLogger("soupscope")


def _dump(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True, default=_jsonable)
    if path:
        Path(path).write_text(text + "\n")
    else:
        print(text)


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (set, frozenset)):
        return sorted(x)
    raise TypeError(f"not JSON serialisable: {type(x).__name__}")


def _load_quad(path):
    from .geometry import Quad
    doc = json.loads(Path(path).read_text())
    if "corners" in doc:
        corners = doc["corners"]
    elif "arcs" in doc:
        corners = [int(a[0]) for a in doc["arcs"]]
    else:
        raise ConfigError("quad file needs 'corners' or 'arcs'")
    return Quad(np.asarray(doc["boundary"], dtype=float), corners)


# -- subcommands ---------------------------------------------------------------

def cmd_sample(args):
    from .harness import load_config
    from .soup import sample_soup
    cfg = load_config(args.config)
    out = args.out or cfg.output.get("samples")
    sc = cfg.soup_config()
    if args.seed is not None:
        sc = sc.with_seed(args.seed)
    lines = []
    for k in range(args.count):
        sc_k = sc.with_seed((sc.seed + k) % 2 ** 64)
        lines.append(sample_soup(sc_k).to_jsonl())
    text = "".join(lines)
    if out:
        Path(out).write_text(text)
        log.info("wrote %d samples to %s", args.count, out)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_tails(args):
    from .harness import load_config, run_tail_experiment, write_results
    cfg = load_config(args.config)
    spec = cfg.experiment()
    est = run_tail_experiment(spec, workers=args.workers)
    summary = write_results(est, cfg, cfg.output.get("csv"), cfg.output.get("json"))
    for r in est.rows():
        print(f"{r['n']:3d} {r['count']:7d} {r['p_hat']:.6f} [{r['ci_lo']:.6f}, {r['ci_hi']:.6f}]")
    print("ratios non-increasing:", summary["ratios_non_increasing"],
          "log-convexity violations:", summary["log_convexity_violations"])
    return EXIT_OK


def cmd_verify(args):
    from .harness import load_config, verify_sample
    from .soup import read_samples_jsonl, sample_soup
    cfg = load_config(args.config)
    if cfg.radii is None or cfg.a is None:
        raise ConfigError("verify needs 'radii' and 'a' in the config")
    center = (0.0, 0.0)
    if cfg.target and "center" in cfg.target:
        center = tuple(cfg.target["center"])
    sc = cfg.soup_config()
    failures = 0
    reports = []
    if args.samples:
        samples = read_samples_jsonl(Path(args.samples).read_text())
    else:
        samples = (sample_soup(sc.with_seed((sc.seed + k) % 2 ** 64)) for k in range(cfg.replicas))
    for k, smp in enumerate(samples):
        rep = verify_sample(smp, cfg.radii, cfg.a, center=center, mesh=sc.domain.mesh, domain=sc.domain)
        if not rep.passed:
            failures += 1
            print(f"sample {k}: FAIL")
            print(rep)
        reports.append(rep.to_dict())
    print(f"{len(reports)} samples, {failures} with violations")
    if cfg.output.get("json"):
        _dump({"config": cfg.to_dict(), "reports": reports}, cfg.output["json"])
    return EXIT_VIOLATION if failures else EXIT_OK


def _write_table(rows, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["n", "value", "bound", "ratio"])
        for n, value, bound in rows:
            w.writerow([n, f"{value:.12g}", f"{bound:.12g}", f"{value / bound:.12g}" if bound else "nan"])


def cmd_fomin(args):
    from .bounds import fomin_sup_search, u_n_closed_bound
    res = fomin_sup_search(args.n, args.theta1, args.theta2, args.iters, args.starts, args.seed)
    if args.csv:
        rows = []
        for m in range(1, args.n + 1):
            r = res if m == args.n else fomin_sup_search(m, args.theta1, args.theta2, args.iters,
                                                          args.starts, args.seed)
            rows.append((m, r.lower_bound, u_n_closed_bound(m, args.theta1, args.theta2)))
        _write_table(rows, args.csv)
    _dump({"n": args.n, "theta1": args.theta1, "theta2": args.theta2,
           "sup_lower_bound": res.lower_bound, "closed_bound": u_n_closed_bound(args.n, args.theta1, args.theta2),
           "evaluations": res.evaluations, "best_x": list(res.best.x), "best_y": list(res.best.y)})
    return EXIT_OK


def cmd_recursion(args):
    from .bounds import RecursionParams, iterate_recursion
    p = RecursionParams(args.s, args.q, args.c, args.eps, args.K, args.f0)
    res = iterate_recursion(p, args.N)
    if args.csv:
        # bound column: s^n, the decay the iterate is compared against
        _write_table([(n, float(res.f[n]), args.s ** n) for n in range(args.N + 1)], args.csv)
    _dump({"hypothesis_holds": p.hypothesis_holds, "bounded": res.bounded, "max_ratio": res.max_ratio,
           "final_ratio": float(res.ratio[-1])})
    return EXIT_OK


def cmd_modulus(args):
    from .conformal import discrete_modulus, pinch_annulus, quad_annuli_cover
    quad = _load_quad(args.quad)
    res = discrete_modulus(quad, args.mesh)
    out = {"modulus": res.modulus, "dirichlet_energy": res.dirichlet_energy,
           "solver_residual": res.solver_residual, "mesh": res.mesh}
    if args.pinch:
        p = pinch_annulus(quad, args.mesh, res.modulus)
        out["pinch"] = {"center": [p.annulus.center.x, p.annulus.center.y], "r": p.annulus.inner_r,
                        "R": p.annulus.outer_r, "d1": p.d1, "guarantee": p.guarantee}
    if args.cover is not None:
        cov = quad_annuli_cover(quad, args.mesh, K=args.cover or None)
        out["cover"] = {"K": cov.K, "sub_moduli": cov.sub_moduli,
                        "annuli": [{"center": [a.center.x, a.center.y], "r": a.inner_r, "R": a.outer_r}
                                   for a in cov.annuli]}
    _dump(out, args.out)
    return EXIT_OK


def _lamination_files(args):
    from .geometry import Point, PolyLoop
    from .lamination import PunctureSet, complexity_bound, extract_lamination
    from .soup import read_samples_jsonl
    if not (args.loops and args.punctures):
        raise ConfigError("--loops and --punctures go together")
    try:
        pts = json.loads(Path(args.punctures).read_text())
        text = Path(args.loops).read_text()
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read lamination input: {e}") from e
    if isinstance(pts, dict):
        pts = pts["punctures"]
    p = PunctureSet(tuple(Point(float(x), float(y)) for x, y in pts))
    if text.lstrip().startswith("["):
        loops = [PolyLoop(np.asarray(v, dtype=float), id=k) for k, v in enumerate(json.loads(text))]
    else:
        loops = [l for smp in read_samples_jsonl(text) for l in smp.loops]
    lam = extract_lamination(loops, p)
    cb = complexity_bound(loops, p)
    _dump({"N": p.N, "subsets": {str(k): sorted(v) for k, v in lam.subsets.items()},
           "laminar": lam.is_laminar(), "per_annulus": cb.per_annulus,
           "raw_intersections": cb.raw_intersections, "bound": cb.bound}, args.out)
    return EXIT_OK


def cmd_lamination(args):
    from .lamination import (build_triangulation, complexity_bound, concentric_representatives,
                             random_laminar_family, random_punctures)
    if args.loops or args.punctures:
        return _lamination_files(args)
    rng = np.random.default_rng(args.seed)
    violations = 0
    rows = []
    for k in range(args.families):
        p = random_punctures(args.N, rng)
        fam = random_laminar_family(args.N, rng)
        if not fam:
            continue
        loops = concentric_representatives(fam, p, rng)
        tri = build_triangulation(p)
        cb = complexity_bound(loops, p, tri)
        bad = cb.raw_intersections > cb.bound
        violations += bad
        rows.append({"family": [sorted(s) for s in fam], "edges": tri.n_edges,
                     "raw_intersections": cb.raw_intersections, "bound": cb.bound,
                     "per_annulus": cb.per_annulus, "violation": bool(bad)})
    _dump({"N": args.N, "families": len(rows), "violations": violations, "rows": rows if args.rows else []})
    return EXIT_VIOLATION if violations else EXIT_OK


def cmd_probe_tube(args):
    from .harness import TubeGeometry, load_config, narrow_tube_probe
    cfg = load_config(args.config)
    widths = [float(w) for w in args.widths.split(",")]
    rows = narrow_tube_probe(widths, TubeGeometry(args.x0, args.x1, args.yc), cfg.soup_config(), args.replicas)
    for r in rows:
        print(f"{r['width']:8.3f} {r['count']:6d} {r['p_hat']:.4f} [{r['ci_lo']:.4f}, {r['ci_hi']:.4f}]")
    if cfg.output.get("json"):
        _dump({"config": cfg.to_dict(), "rows": rows}, cfg.output["json"])
    return EXIT_OK


def cmd_render(args):
    from .clusters import build_clusters
    from .geometry import Annulus, Point
    from .harness import render_svg
    from .soup import read_samples_jsonl
    objs = []
    if args.samples:
        samples = read_samples_jsonl(Path(args.samples).read_text())
        if not 0 <= args.index < len(samples):
            raise ConfigError(f"sample index {args.index} out of range ({len(samples)} samples)")
        smp = samples[args.index]
        mesh = smp.config.domain.mesh if smp.config else 1.0
        objs.append(build_clusters(smp.loops, mesh) if args.clusters else smp)
    if args.annulus:
        x, y, r, R = (float(v) for v in args.annulus.split(","))
        objs.append(Annulus(Point(x, y), r, R))
    if args.quad:
        objs.append(_load_quad(args.quad))
    render_svg(objs, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="soupscope", description="Random walk loop soup crossing experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="draw loop soups and write them as JSON lines")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--count", type=int, default=1, help="samples with seeds seed, seed+1, ...")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("tails", help="Monte Carlo tail estimate of a crossing statistic")
    p.add_argument("--config", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_tails)

    p = sub.add_parser("verify", help="run the deterministic inequality suite on samples")
    p.add_argument("--config", required=True)
    p.add_argument("--samples", help="JSON lines file of samples (default: draw from the config)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("fomin", help="search the determinant sup and compare with the closed bound")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--theta1", type=float, required=True)
    p.add_argument("--theta2", type=float, required=True)
    p.add_argument("--iters", "--search-iters", dest="iters", type=int, default=200)
    p.add_argument("--starts", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", help="table of n, sup lower bound, closed bound, ratio for 1..n")
    p.set_defaults(func=cmd_fomin)

    p = sub.add_parser("recursion", help="iterate the tail recursion")
    for name in ("s", "q", "c", "eps"):
        p.add_argument(f"--{name}", type=float, required=True)
    p.add_argument("--K", type=float, default=0.0)
    p.add_argument("--f0", type=float, default=1.0)
    p.add_argument("--N", type=int, default=500)
    p.add_argument("--csv", help="table of n, f(n), s^n, f(n)/s^n")
    p.set_defaults(func=cmd_recursion)

    p = sub.add_parser("modulus", help="discrete modulus of a quad, optional pinch annulus and cover")
    p.add_argument("--quad", required=True)
    p.add_argument("--mesh", type=float, required=True)
    p.add_argument("--pinch", action="store_true")
    p.add_argument("--cover", type=int, nargs="?", const=0, default=None,
                   help="annulus cover with K x K pieces (no value: choose K automatically)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_modulus)

    p = sub.add_parser("lamination", help="complexity bound on random concentric laminations")
    p.add_argument("--N", type=int, default=4)
    p.add_argument("--families", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rows", action="store_true", help="include per-family rows")
    p.add_argument("--loops", help="loops as JSON lines samples or a JSON list of vertex lists")
    p.add_argument("--punctures", help="JSON list of [x, y] punctures with increasing moduli")
    p.add_argument("--out")
    p.set_defaults(func=cmd_lamination)

    p = sub.add_parser("probe-tube", help="chain-crossing frequency of shrinking tubes")
    p.add_argument("--config", required=True)
    p.add_argument("--widths", required=True, help="comma separated, decreasing")
    p.add_argument("--x0", type=float, required=True)
    p.add_argument("--x1", type=float, required=True)
    p.add_argument("--yc", type=float, required=True)
    p.add_argument("--replicas", type=int, default=100)
    p.set_defaults(func=cmd_probe_tube)

    p = sub.add_parser("render", help="write an SVG of a sample, annulus or quad")
    p.add_argument("--samples")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--clusters", action="store_true", help="fill outermost cluster components")
    p.add_argument("--annulus", help="x,y,r,R")
    p.add_argument("--quad")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InvalidInputError, RejectedConfigurationError, DomainError,
            DegenerateInputError, NoBridgeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, ConsistencyError) as e:
        print(f"failure: {e}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
