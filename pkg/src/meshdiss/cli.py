"""Command-line front end: ``meshdiss {generate,analyze,design,simulate,compare,verify}``.

Exit codes: 0 success, 1 verification failed, 2 infeasible design,
3 configuration error, 4 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dissipativity import (AssumptionError, DesignConfig, InfeasibleError, SmsError, network_analyze,
                            node_stage, group_problem_pi, run_pipeline, sms_report)
from .evaluation import (BaselineSpec, compare_methods, metric_jm, verify_group_trajectory,
                         verify_network_trajectory, verify_node_certificate)
from .netmodel import ConfigError, GenConfig, NetworkFormatError, generate_random, load_network, save_network
from .sim import DisturbanceProfile, export_csv, make_disturbance, metric_jx, simulate

log = logging.getLogger("meshdiss")

EXIT_OK, EXIT_VERIFY, EXIT_INFEASIBLE, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3, 4

# defaults for every option; a --config JSON file may override them and flags override both
DEFAULTS = {
    "seed": None,
    "network": None,
    "out": ".",
    "groups": "5,6,7,4",
    "p_intra": 0.3,
    "p_inter": 0.2,
    "c_m": 1.0,
    "delta_m": 1.0,
    "alpha": 0.0,
    "beta": 1.0,
    "sms": False,
    "t_m": None,
    "d_m": None,
    "match_effort": False,
    "horizon": 200.0,
    "dt": 0.01,
    "variants": [],
    "design": None,
    "dist_seeds": 3,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="meshdiss", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"meshdiss {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, network=True):
        sp.add_argument("--config", help="JSON file with option values (flags take precedence)")
        sp.add_argument("--seed", type=int, default=argparse.SUPPRESS)
        sp.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
        sp.add_argument("-v", "--verbose", action="count", default=0)
        if network:
            sp.add_argument("--network", default=argparse.SUPPRESS,
                            help="network JSON; without it a network is generated from --seed")
        sp.add_argument("--groups", default=argparse.SUPPRESS, help="comma-separated group sizes")
        sp.add_argument("--p-intra", type=float, default=argparse.SUPPRESS)
        sp.add_argument("--p-inter", type=float, default=argparse.SUPPRESS)

    def design_opts(sp):
        sp.add_argument("--c-m", type=float, default=argparse.SUPPRESS)
        sp.add_argument("--delta-m", type=float, default=argparse.SUPPRESS)
        sp.add_argument("--alpha", type=float, default=argparse.SUPPRESS)
        sp.add_argument("--beta", type=float, default=argparse.SUPPRESS)
        sp.add_argument("--sms", action="store_true", default=argparse.SUPPRESS)

    def sim_opts(sp):
        sp.add_argument("--horizon", type=float, default=argparse.SUPPRESS)
        sp.add_argument("--dt", type=float, default=argparse.SUPPRESS)

    common(sub.add_parser("generate", help="draw a random network"), network=False)
    sp = sub.add_parser("analyze", help="certify the nominal network's L2 gain")
    common(sp)
    sp.add_argument("--design", default=argparse.SUPPRESS, help="analyze this network's inter-group matrix instead")
    sp = sub.add_parser("design", help="run the node/group/network design pipeline")
    common(sp)
    design_opts(sp)
    sp = sub.add_parser("simulate", help="simulate a topology under the default disturbance")
    common(sp)
    sim_opts(sp)
    sp.add_argument("--design", default=argparse.SUPPRESS, help="network JSON whose inter-group matrix is used")
    sp.add_argument("--t-m", type=float, default=argparse.SUPPRESS)
    sp.add_argument("--d-m", type=float, default=argparse.SUPPRESS)
    sp = sub.add_parser("compare", help="compare designed and pruned topologies")
    common(sp)
    design_opts(sp)
    sim_opts(sp)
    sp.add_argument("--t-m", type=float, default=argparse.SUPPRESS)
    sp.add_argument("--d-m", type=float, default=argparse.SUPPRESS)
    sp.add_argument("--match-effort", action="store_true", default=argparse.SUPPRESS,
                    help="tune baselines to the design's effort even if --t-m/--d-m are given")
    sp.add_argument("--variants", nargs="*", default=argparse.SUPPRESS, metavar="dissbc:C_M,DELTA_M")
    sp = sub.add_parser("verify", help="check certificates against independent oracles")
    common(sp)
    design_opts(sp)
    sim_opts(sp)
    sp.add_argument("--dist-seeds", type=int, default=argparse.SUPPRESS)
    return p


def effective_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError:
            raise
        except json.JSONDecodeError as err:
            raise ConfigError(f"{args.config}: {err}") from err
        unknown = set(data) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"{args.config}: unknown keys {sorted(unknown)}")
        cfg.update(data)
    for key, value in vars(args).items():
        if key in DEFAULTS:
            cfg[key] = value
    cfg["command"] = args.command
    return cfg


def parse_variants(items) -> list:
    out = []
    for item in items:
        try:
            kind, rest = item.split(":", 1)
            c_m, delta_m = (float(v) for v in rest.split(","))
        except ValueError:
            raise ConfigError(f"bad variant {item!r}; expected dissbc:C_M,DELTA_M") from None
        if kind.lower() != "dissbc":
            raise ConfigError(f"unknown variant kind {kind!r}")
        out.append((c_m, delta_m))
    return out


def _gen_config(cfg) -> GenConfig:
    try:
        sizes = [int(s) for s in str(cfg["groups"]).split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"bad group sizes {cfg['groups']!r}") from None
    return GenConfig(group_sizes=sizes, p_intra=cfg["p_intra"], p_inter=cfg["p_inter"], seed=cfg["seed"])


def _network(cfg):
    if cfg["network"]:
        return load_network(cfg["network"])
    if cfg["seed"] is None:
        raise ConfigError("give --network or a --seed to generate one")
    return generate_random(_gen_config(cfg))


def _design_config(cfg) -> DesignConfig:
    return DesignConfig(c_m=cfg["c_m"], delta_m=cfg["delta_m"], alpha=cfg["alpha"], beta=cfg["beta"],
                        sms=bool(cfg["sms"])).validate()


def _out_dir(cfg) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_report(path: Path, cfg: dict, body: dict) -> None:
    """JSON report; everything except ``header`` is deterministic for fixed inputs."""
    doc = {
        "header": {"tool": "meshdiss", "version": __version__,
                   "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")},
        "config": cfg,
        **body,
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_default) + "\n", encoding="utf-8")


def _default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _summary(net) -> dict:
    intra = int(sum(np.count_nonzero(g.m_intra) for g in net.groups))
    return {"groups": net.sizes, "nodes": net.n_nodes, "intra_edges": intra,
            "inter_edges": int(np.count_nonzero(net.m_inter))}


# -- commands -----------------------------------------------------------------


def cmd_generate(cfg) -> int:
    if cfg["seed"] is None:
        raise ConfigError("generate needs --seed so the network is reproducible")
    net = generate_random(_gen_config(cfg))
    out = _out_dir(cfg)
    save_network(net, out / "network.json")
    s = _summary(net)
    print(f"groups {s['groups']}  nodes {s['nodes']}  intra edges {s['intra_edges']}  "
          f"inter edges {s['inter_edges']}  -> {out / 'network.json'}")
    return EXIT_OK


def _certify_groups(net, eps=1e-6):
    nodes = [node_stage(g, i, eps) for i, g in enumerate(net.groups)]
    return [group_problem_pi(g, nodes[i], i, eps) for i, g in enumerate(net.groups)]


def cmd_analyze(cfg) -> int:
    net = _network(cfg)
    groups = _certify_groups(net)
    m = load_network(cfg["design"]).m_inter if cfg["design"] else net.m_inter
    res = network_analyze(net, groups, m)
    out = _out_dir(cfg)
    write_report(out / "analyze.json", cfg, {"analysis": res.to_dict(), "groups": [g.to_dict() for g in groups]})
    print(f"certified: {res.certified}" + (f"  gamma = {res.gamma:.6g}" if res.certified else "  (uncertifiable)"))
    return EXIT_OK


def cmd_design(cfg) -> int:
    net = _network(cfg)
    dcfg = _design_config(cfg)
    result = run_pipeline(net, dcfg)
    d = result.design
    out = _out_dir(cfg)
    save_network(net.with_inter(d.m_inter), out / "designed_network.json")
    write_report(out / "design.json", cfg, {"certificates": result.to_dict()})
    print(f"gamma = {d.gamma:.6g} (g = {d.g:.6g})  J_M = {d.j_m:.4f}")
    if d.sms is not None:
        print(f"mesh stability condition satisfied: {d.sms['satisfied']}")
    return EXIT_OK


def _topology(cfg, net):
    m = load_network(cfg["design"]).m_inter if cfg["design"] else net.m_inter
    if cfg["t_m"] is not None:
        m = BaselineSpec("tbc", cfg["t_m"]).apply(m)
    if cfg["d_m"] is not None:
        m = BaselineSpec("degbc", cfg["d_m"]).apply(m)
    return m


def cmd_simulate(cfg) -> int:
    net = _network(cfg)
    seed = 0 if cfg["seed"] is None else cfg["seed"]
    m = _topology(cfg, net)
    dist = make_disturbance(DisturbanceProfile(), net, cfg["horizon"], cfg["dt"], seed)
    traj = simulate(net, m, dist, T=cfg["horizon"], dt=cfg["dt"], seed=seed)
    out = _out_dir(cfg)
    export_csv(traj, out / "trajectory.csv", every=max(1, int(round(0.1 / cfg["dt"]))))
    jx = metric_jx(traj)
    jm = metric_jm(net.m_inter, m) if np.any(net.m_inter) else 0.0
    write_report(out / "metrics.json", cfg, {"metrics": {"j_x": jx, "j_m": jm,
                                                        "max_box_violation": traj.max_box_violation}})
    print(f"J_x = {jx:.6g}  J_M = {jm:.4f}")
    return EXIT_OK


def cmd_compare(cfg) -> int:
    net = _network(cfg)
    seed = 0 if cfg["seed"] is None else cfg["seed"]
    variants = [(cfg["c_m"], cfg["delta_m"])] + parse_variants(cfg["variants"])
    base = _design_config(cfg)
    match = cfg["match_effort"]
    comp = compare_methods(net, variants, base, T=cfg["horizon"], dt=cfg["dt"], sim_seed=seed, dist_seed=seed,
                           t_m=None if match else cfg["t_m"], d_m=None if match else cfg["d_m"])
    out = _out_dir(cfg)
    write_report(out / "report.json", cfg, {"comparison": comp.to_dict()})
    labels = list(comp.series)
    with open(out / "series.csv", "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t"] + labels)
        for k, t in enumerate(comp.series_times):
            wr.writerow([repr(float(t))] + [repr(float(comp.series[lab][k])) for lab in labels])
    manifest = {"figure": "mean infection over time", "data": "series.csv", "x": "t", "y": labels,
                "xlabel": "time", "ylabel": "mean infection level"}
    (out / "plots.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    print(f"{'method':<28}{'J_x':>10}{'J_M':>9}{'gamma':>12}")
    for r in comp.rows:
        jx = "-" if r.j_x is None else f"{r.j_x:.4f}"
        jm = "-" if r.j_m is None else f"{r.j_m:.4f}"
        g = f"{r.gamma:.2f}" if r.certified and r.gamma is not None else "-"
        print(f"{r.label:<28}{jx:>10}{jm:>9}{g:>12}" + (f"   ({r.error})" if r.error else ""))
    return EXIT_OK


def cmd_verify(cfg) -> int:
    net = _network(cfg)
    result = run_pipeline(net, _design_config(cfg))
    seed = 0 if cfg["seed"] is None else cfg["seed"]
    nodes = []
    for i, certs in enumerate(result.nodes):
        for k, cert in enumerate(certs):
            v = verify_node_certificate(cert, net.groups[i].nodes[k])
            nodes.append({"group": i, "node": k, "passed": v.passed, "minimum": v.minimum, "argmin": v.argmin})
    traj_checks = []
    for s in range(cfg["dist_seeds"]):
        dist = make_disturbance(DisturbanceProfile(), net, cfg["horizon"], cfg["dt"], seed + s)
        traj = simulate(net, result.design.m_inter, dist, T=cfg["horizon"], dt=cfg["dt"], seed=seed + s)
        for gc in result.groups:
            v = verify_group_trajectory(traj, net, gc)
            traj_checks.append({"seed": seed + s, "level": f"group {gc.index}", "passed": v.passed,
                                "min_residual": v.min_residual, "threshold": v.threshold})
        v = verify_network_trajectory(traj, result)
        traj_checks.append({"seed": seed + s, "level": "network", "passed": v.passed,
                            "min_residual": v.min_residual, "threshold": v.threshold})
    body = {"nodes": nodes, "trajectories": traj_checks}
    if cfg["sms"]:
        body["sms"] = sms_report(net, result.groups, result.design.m_inter)
    ok = all(r["passed"] for r in nodes) and all(r["passed"] for r in traj_checks)
    out = _out_dir(cfg)
    write_report(out / "verify.json", cfg, {"passed": ok, **body})
    print(f"node certificates: {sum(r['passed'] for r in nodes)}/{len(nodes)} pass; "
          f"trajectory checks: {sum(r['passed'] for r in traj_checks)}/{len(traj_checks)} pass")
    return EXIT_OK if ok else EXIT_VERIFY


COMMANDS = {"generate": cmd_generate, "analyze": cmd_analyze, "design": cmd_design, "simulate": cmd_simulate,
            "compare": cmd_compare, "verify": cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = effective_config(args)
        return COMMANDS[args.command](cfg)
    except InfeasibleError as err:
        print(f"infeasible at stage {err.stage}: {err}", file=sys.stderr)
        print(json.dumps(err.to_dict(), indent=2, default=_default), file=sys.stderr)
        return EXIT_INFEASIBLE
    except NetworkFormatError as err:
        print(f"invalid network file: {err}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, AssumptionError, SmsError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
