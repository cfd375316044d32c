"""Command-line surface: codesign, enumerate, qi-check, comm-norm, gen-example.

All identifiers in files are 0-indexed; numbers in CSV output are written
with 17 significant digits so reruns of the same manifest are byte
identical.  Output files are written atomically (temp file plus rename) and
every command leaves a manifest.json describing its inputs and resolved
configuration next to its outputs.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile

import numpy as np

from . import __version__, codesign, commgraph, firmath, qispace, solvers, sysmodel
from .commgraph import EdgeSet, Graph

EXIT_OK = 0
EXIT_QI_FAIL = 1
EXIT_VALIDATION = 2
EXIT_SOLVER = 3


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_VALIDATION):
        super().__init__(message)
        self.code = code


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".commlink-")
    try:
        with os.fdopen(fd, "w", newline="") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path: str, doc) -> None:
    _atomic_write(path, json.dumps(doc, indent=2) + "\n")


def _load_json(path: str, what: str):
    try:
        with open(path) as handle:
            return json.load(handle)
    except FileNotFoundError:
        raise CliError(f"{what} file not found: {path}")
    except json.JSONDecodeError as exc:
        raise CliError(f"{what} file {path} is not valid JSON: {exc}")


def _load_plant(path: str):
    try:
        return sysmodel.load_plant(_load_json(path, "plant"))
    except ValueError as exc:
        raise CliError(f"plant file {path}: {exc}")


def _load_graph(path: str) -> Graph:
    try:
        return Graph.from_doc(_load_json(path, "graph"))
    except ValueError as exc:
        raise CliError(f"graph file {path}: {exc}")


def _load_edges(path: str) -> EdgeSet:
    try:
        return EdgeSet.from_doc(_load_json(path, "edges"))
    except ValueError as exc:
        raise CliError(f"edges file {path}: {exc}")


def _config_from_file(path: str | None) -> codesign.CodesignConfig:
    if path is None:
        return codesign.CodesignConfig()
    doc = _load_json(path, "config")
    mapping = {
        "lambdaGrid": "lambda_grid",
        "N": "N",
        "tolTail": "tol_tail",
        "tolGap": "tol_gap",
        "tolCg": "tol_cg",
        "edgeSelectEps": "edge_select_eps",
        "checkHorizon": "check_horizon",
        "maxIters": "max_iters",
        "seed": "seed",
    }
    kwargs = {}
    for key, value in doc.items():
        if key not in mapping:
            raise CliError(f"config file {path}: unknown key {key!r}")
        if key == "lambdaGrid" and value is not None:
            value = tuple(float(v) for v in value)
        kwargs[mapping[key]] = value
    try:
        return codesign.CodesignConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise CliError(f"config file {path}: {exc}")


def _resolved_config_doc(cfg: codesign.CodesignConfig, n_param: int, check_horizon: int) -> dict:
    return {
        "lambdaGrid": list(cfg.lambda_grid) if cfg.lambda_grid is not None else None,
        "N": n_param,
        "tolTail": cfg.tol_tail,
        "tolGap": cfg.tol_gap,
        "tolCg": cfg.tol_cg,
        "edgeSelectEps": cfg.edge_select_eps,
        "checkHorizon": check_horizon,
        "maxIters": cfg.max_iters,
        "seed": cfg.seed,
    }


def _write_manifest(out_dir: str, command: str, inputs: dict, config: dict, seed: int) -> None:
    _write_json(
        os.path.join(out_dir, "manifest.json"),
        {
            "command": command,
            "inputs": inputs,
            "config": config,
            "version": __version__,
            "seed": seed,
        },
    )


def _csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _edges_label(edges) -> str:
    return ";".join(f"{i}<-{j}" for i, j in edges)


def _base_for(plant, part, base_path: str | None) -> Graph:
    if base_path is not None:
        return _load_graph(base_path)
    try:
        return commgraph.base_graph(plant, part)
    except ValueError as exc:
        raise CliError(f"cannot derive the base graph: {exc}")


def cmd_codesign(args) -> int:
    plant, part = _load_plant(args.plant)
    edges = _load_edges(args.edges)
    base = _base_for(plant, part, args.base)
    cfg = _config_from_file(args.config)
    out = args.out

    try:
        if args.sweep:
            results = codesign.lambda_sweep(plant, part, base, edges, cfg)
        else:
            results = [codesign.run_codesign(plant, part, base, edges, args.lam, cfg)]
    except ValueError as exc:
        raise CliError(str(exc))
    except solvers.SolverError as exc:
        raise CliError(str(exc), EXIT_SOLVER)

    n_param = results[0].polished.t_max
    oracle_horizon = cfg.check_horizon
    if oracle_horizon is None:
        oracle_horizon = firmath.truncation_horizon(plant, n_param, cfg.tol_tail)[0]

    header = [
        "lambda", "num_extra_links", "selected_edges", "nu_polished",
        "reg_objective", "iters", "gap", "converged",
    ]
    rows = []
    for idx, res in enumerate(results):
        rows.append([
            res.lam,
            len(res.selected_edges),
            _edges_label(res.selected_edges),
            res.nu_polished,
            res.reg_objective,
            res.diagnostics["iters"],
            res.diagnostics["gap"],
            bool(res.diagnostics["converged"]),
        ])
        tag = f"{idx:03d}"
        _write_json(os.path.join(out, f"parameter_{tag}.json"), res.polished.to_doc())
        _write_json(os.path.join(out, f"graph_{tag}.json"), res.gamma_des.to_doc())
        k_seq = firmath.recover_controller(plant, res.polished, oracle_horizon)
        _write_json(os.path.join(out, f"controller_{tag}.json"), k_seq.to_doc())
    _atomic_write(os.path.join(out, "sweep.csv"), _csv_text(header, rows))

    inputs = {"plant": args.plant, "edges": args.edges, "base": args.base}
    config = _resolved_config_doc(cfg, n_param, oracle_horizon)
    if not args.sweep:
        config["lambda"] = args.lam
    _write_manifest(out, "codesign", inputs, config, cfg.seed)

    failed = [r for r in results if not r.diagnostics["converged"]]
    if failed:
        print(f"{len(failed)} of {len(results)} solves did not converge", file=sys.stderr)
        return EXIT_SOLVER
    print(f"wrote {len(results)} result row(s) to {os.path.join(out, 'sweep.csv')}")
    return EXIT_OK


def cmd_enumerate(args) -> int:
    plant, part = _load_plant(args.plant)
    edges = _load_edges(args.edges)
    base = _base_for(plant, part, args.base)
    cfg = _config_from_file(args.config)
    out = args.out

    try:
        rows = codesign.enumerate_solve(plant, part, base, edges, cfg)
    except ValueError as exc:
        raise CliError(str(exc))
    except solvers.SolverError as exc:
        raise CliError(str(exc), EXIT_SOLVER)

    header = ["bitmask", "num_extra_links", "edges", "nu"]
    table = [[r.bitmask, r.num_extra_links, _edges_label(r.edges), r.nu] for r in rows]
    _atomic_write(os.path.join(out, "enumerate.csv"), _csv_text(header, table))

    report = codesign.nesting_report(rows)
    lines = [f"{len(report.violations)} violations (max excess {_fmt(report.max_violation)})"]
    for m1, m2, excess in report.violations:
        lines.append(f"bitmask {m1} subset of {m2}: nu increased by {_fmt(excess)}")
    _atomic_write(os.path.join(out, "nesting_report.txt"), "\n".join(lines) + "\n")

    n_param = codesign._resolve_horizon(cfg, int(commgraph.graph_delay(base)))
    _write_manifest(
        out,
        "enumerate",
        {"plant": args.plant, "edges": args.edges, "base": args.base},
        _resolved_config_doc(cfg, n_param, cfg.check_horizon),
        cfg.seed,
    )
    print(f"wrote {len(rows)} rows to {os.path.join(out, 'enumerate.csv')}")
    return EXIT_OK


def _print_matrix(label: str, m: np.ndarray) -> None:
    print(label)
    for row in m:
        print("  " + " ".join("inf" if math.isinf(v) else f"{int(v)}" for v in row))


def cmd_qi_check(args) -> int:
    plant, part = _load_plant(args.plant)
    g = _load_graph(args.graph)
    if g.n != part.n:
        raise CliError(f"graph has {g.n} nodes but the plant partition has {part.n}")

    base = _base_for(plant, part, None)
    _write_manifest(args.out, "qi-check",
                    {"plant": args.plant, "graph": args.graph}, {}, 0)

    if np.any(base.adj > g.adj):
        missing = [(int(i), int(j)) for i, j in zip(*np.where(base.adj > g.adj))]
        print(f"FAIL: graph is missing base edges {missing}; the design set requires "
              "every graph to nest the base graph")
        return EXIT_QI_FAIL

    d = commgraph.graph_delay(g)
    if d == commgraph.INFINITE:
        print("FAIL: infinite graph delay (graph is not strongly connected)")
        return EXIT_QI_FAIL

    c = commgraph.comm_delays(g)
    try:
        p = commgraph.propagation_delays(plant, part, mode="structural")
    except ValueError as exc:
        raise CliError(str(exc))
    cert = qispace.qi_delay_check(c, p)

    _print_matrix("communication delays:", c)
    _print_matrix("propagation delays:", p)
    print(f"graph delay d = {int(d)}")
    if cert.ok:
        print("PASS: delay certificate holds")
        return EXIT_OK
    print(f"FAIL: {len(cert.violations)} delay-certificate violations")
    for v in cert.violations:
        print(f"  {v}")
    return EXIT_QI_FAIL


def cmd_comm_norm(args) -> int:
    plant, part = _load_plant(args.plant)
    base = _load_graph(args.graph)
    edges = _load_edges(args.edges)
    fir = firmath.FirTM.from_doc(_load_json(args.fir, "FIR"))

    try:
        edges.check_against(base)
        n_param = max(int(commgraph.graph_delay(base)), 1)
        spec = codesign.build_group_spec(base, edges, part, n_param)
        value = solvers.comm_link_norm(fir, spec)
    except ValueError as exc:
        raise CliError(str(exc))
    except solvers.SolverError as exc:
        raise CliError(str(exc), EXIT_SOLVER)

    _write_manifest(args.out, "comm-norm",
                    {"fir": args.fir, "plant": args.plant, "graph": args.graph,
                     "edges": args.edges}, {}, 0)
    print("infinite" if math.isinf(value) else _fmt(value))
    return EXIT_OK


def cmd_gen_example(args) -> int:
    if args.n < 2:
        raise CliError("n >= 2 required")
    plant, part = sysmodel.gen_chain_plant(args.n, args.couple, args.seed)
    base = commgraph.base_graph(plant, part)
    delays = commgraph.comm_delays(base)
    pairs = [
        (i, j)
        for i in range(args.n)
        for j in range(args.n)
        if delays[i, j] == 2.0
    ]
    edges = EdgeSet(tuple(sorted(pairs)[:6]))

    out = args.out
    _write_json(os.path.join(out, "plant.json"), sysmodel.save_plant(plant, part))
    _write_json(os.path.join(out, "base.json"), base.to_doc())
    _write_json(os.path.join(out, "edges.json"), edges.to_doc())
    _write_manifest(out, "gen-example", {},
                    {"n": args.n, "couple": args.couple, "seed": args.seed}, args.seed)
    print(f"wrote plant.json, base.json, edges.json to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="commlink",
        description="Co-design a distributed controller and its communication graph",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("codesign", help="penalized solve, edge read-off, and polish")
    p.add_argument("--plant", required=True)
    p.add_argument("--edges", required=True)
    p.add_argument("--base", default=None, help="base graph JSON (default: block support of A)")
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--lambda", dest="lam", type=float, help="single penalty weight")
    mode.add_argument("--sweep", action="store_true", help="sweep a descending penalty grid")
    p.add_argument("--out", default=".")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_codesign)

    p = sub.add_parser("enumerate", help="brute-force polish over the whole design set")
    p.add_argument("--plant", required=True)
    p.add_argument("--edges", required=True)
    p.add_argument("--base", default=None)
    p.add_argument("--out", default=".")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_enumerate)

    p = sub.add_parser("qi-check", help="delay certificate for a plant/graph pair")
    p.add_argument("--plant", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_qi_check)

    p = sub.add_parser("comm-norm", help="evaluate the communication link norm of an FIR file")
    p.add_argument("--fir", required=True)
    p.add_argument("--plant", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--edges", required=True)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_comm_norm)

    p = sub.add_parser("gen-example", help="write a seeded chain example (plant/base/edges)")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--couple", type=float, default=0.2)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_gen_example)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
