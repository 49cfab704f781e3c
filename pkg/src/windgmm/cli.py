"""Command-line entry points.

Subcommands: synth, topology, fit-em, fit-map, fit-dmap, fit-naive,
eval-rmse, eval-conditional, plotdata.  Every command takes a scenario
file (``--config``), an optional seed override and an output directory.
Exit codes: 0 success, 1 validation/usage error, 2 numerical
non-convergence.
"""

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .config import load_scenario, save_topology
from .datasets import (
    aggregate_observations,
    generate_synthetic,
    load_csv,
    observation_blocks,
    write_csv,
)
from .distributed import fit_dmap, estimate_aggregated_outputs, fit_naive_single_node
from .errors import NumericalError, ValidationError, WindgmmError
from .evaluation import (
    EmpiricalPdf,
    conditional_empirical,
    cut_links,
    density_grid,
    evaluate_conditional_fit,
    marginal_rmse,
)
from .fitting import default_hyperparams, fit_em, fit_map, init_params
from .network import attach_virtual_node, k_shell, select_key_nodes


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def _write_params(path, params):
    Path(path).write_text(params.to_json() + "\n", encoding="utf-8")


def _write_curve(path, xs, ys):
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["x", "density"])
        for x, y in zip(xs, ys):
            writer.writerow([repr(float(x)), repr(float(y))])


def _parse_cut(text):
    try:
        a, b = text.split(",")
        return int(a) - 1, int(b) - 1
    except ValueError:
        raise ValidationError(
            f"--cut-link expects 'm,n' with 1-based node ids, got {text!r}"
        ) from None


class _Run:
    """Materialized scenario: topology, training farms, test pairs."""

    def __init__(self, scenario, seed, cuts):
        self.scenario = scenario
        self.seed = seed
        self.topology = scenario.build_topology()
        all_cuts = tuple(scenario.link_cuts) + tuple(cuts)
        if all_cuts:
            self.topology = cut_links(self.topology, all_cuts)

        self.synthetic = None
        if scenario.csv_dir is not None:
            loaded = load_csv(scenario.csv_dir)
            self.farms = loaded.farms
            self.dropped_rows = loaded.dropped_rows
            if len(self.farms) != scenario.n_farms:
                raise ValidationError(
                    f"scenario lists {scenario.n_farms} farms but "
                    f"{scenario.csv_dir} holds {len(self.farms)} CSV files"
                )
            self.test_aggregate = aggregate_observations(self.farms)
        else:
            self.synthetic = generate_synthetic(
                scenario.truths(), scenario.train_samples, seed)
            self.farms = self.synthetic.farms
            self.dropped_rows = 0
            held_out = generate_synthetic(
                scenario.truths(), scenario.test_samples, seed + 1)
            self.test_aggregate = aggregate_observations(held_out.farms)

        self.observations = observation_blocks(self.farms)
        self.train_aggregate = aggregate_observations(self.farms)

    def shared_model_config(self):
        """Hyperparameters and init shared by every fit of this run."""
        scenario = self.scenario
        hyper = default_hyperparams(self.train_aggregate, scenario.components,
                                    **scenario.hyper_overrides)
        init = init_params(self.train_aggregate, scenario.components, self.seed)
        return hyper, init


def _node_label(index, n_farms):
    return "vn" if index >= n_farms else f"{index + 1}"


# ---------------------------------------------------------------------------
# Commands


def cmd_synth(run, out):
    if run.synthetic is None:
        raise ValidationError("scenario reads CSV data; nothing to synthesize")
    write_csv(run.farms, out / "farms")
    save_topology(run.topology, out / "topology.toml")
    _write_params(out / "aggregated_truth.json",
                  run.synthetic.aggregated_truth)
    _write_json(out / "synth_report.json", {
        "scenario": run.scenario.name,
        "seed": run.seed,
        "farms": len(run.farms),
        "samples": run.scenario.train_samples,
        "clamped_values": run.synthetic.clamped_values,
    })
    print(f"wrote {len(run.farms)} farm series to {out / 'farms'}")
    return 0


def cmd_topology(run, out, attach_vn):
    topo = run.topology
    coreness = k_shell(topo)
    keys = select_key_nodes(topo, run.scenario.key_fraction, coreness)
    if attach_vn:
        topo = attach_virtual_node(topo, keys)
    save_topology(topo, out / "topology.toml")
    print("node  x_km  y_km  degree  coreness  key")
    for m in range(topo.n_real):
        mark = "*" if m in keys else ""
        print(f"{m + 1:>4}  {topo.coordinates[m, 0]:>5.2f}  "
              f"{topo.coordinates[m, 1]:>5.2f}  "
              f"{len(topo.real_neighbors(m)):>6}  {coreness[m]:>8}  {mark}")
    if topo.has_virtual_node:
        print(f"virtual node {topo.n_real + 1} linked to "
              + ", ".join(str(k + 1) for k in keys))
    return 0


def _report_fit(name, report, out):
    _write_params(out / f"params_{name}.json", report.params)
    _write_json(out / f"fit_report_{name}.json", report.to_dict())
    state = "converged" if report.converged else "did not converge"
    print(f"{name}: {state} after {report.iterations} iterations")
    return 0 if report.converged else 2


def cmd_fit_map(run, out):
    hyper, init = run.shared_model_config()
    report = fit_map(run.train_aggregate, hyper, init, run.scenario.fit)
    return _report_fit("map", report, out)


def cmd_fit_em(run, out):
    _, init = run.shared_model_config()
    report = fit_em(run.train_aggregate, init, run.scenario.fit)
    return _report_fit("em", report, out)


def cmd_fit_naive(run, out, node):
    if not 1 <= node <= len(run.farms):
        raise ValidationError(f"node must be in 1..{len(run.farms)}")
    hyper, init = run.shared_model_config()
    estimates, _ = estimate_aggregated_outputs(
        run.observations, run.topology, run.scenario.consensus)
    report = fit_naive_single_node(estimates[node - 1], hyper, init,
                                   run.scenario.fit)
    return _report_fit(f"naive_node{node:02d}", report, out)


def _run_dmap(run):
    hyper, init = run.shared_model_config()
    return fit_dmap(run.observations, run.topology,
                    run.scenario.key_fraction, hyper, init,
                    run.scenario.consensus, run.scenario.fit), hyper, init


def cmd_fit_dmap(run, out):
    result, _, _ = _run_dmap(run)
    n_farms = len(run.farms)
    for node in result.nodes:
        label = _node_label(node.node, n_farms)
        name = "vn" if node.is_virtual else f"node{node.node + 1:02d}"
        _write_params(out / f"params_{name}.json", node.params)
    _write_json(out / "dmap_report.json", {
        "scenario": run.scenario.name,
        "seed": run.seed,
        "key_nodes": [k + 1 for k in result.key_nodes],
        "coreness": [int(c) for c in result.coreness],
        "decision_node": "vn",
        "outer_iterations": result.outer_iterations,
        "converged": result.converged,
        "aggregation_rounds": result.aggregation_rounds,
        "consensus_rounds": list(result.consensus_rounds),
        "messages": result.messages,
        "nodes": [
            {"node": _node_label(n.node, n_farms), "virtual": n.is_virtual,
             "iterations": n.report.iterations,
             "converged": n.report.converged}
            for n in result.nodes
        ],
    })
    print(f"distributed fit over {n_farms} farms + virtual node: "
          + ("converged" if result.converged else "did not converge")
          + f" after {result.outer_iterations} outer iterations")
    return 0 if result.converged else 2


def cmd_eval_rmse(run, out):
    result, hyper, init = _run_dmap(run)
    pooled = np.concatenate([n.estimates for n in result.farm_nodes()])
    benchmark = fit_map(pooled, hyper, init, run.scenario.fit)
    rows = []
    for node in result.nodes:
        label = _node_label(node.node, len(run.farms))
        rows.append((label, marginal_rmse(benchmark.params, node.params,
                                          "awo")))
    with open(out / "rmse_nodes.csv", "w", newline="",
              encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["node", "rmse"])
        for label, value in rows:
            writer.writerow([label, repr(value)])
    worst = max(value for _, value in rows)
    print(f"marginal-awo RMSE vs centralized benchmark: worst {worst:.3e}")
    return 0


def cmd_eval_conditional(run, out, bins):
    result, hyper, init = _run_dmap(run)
    em = fit_em(run.train_aggregate, init, run.scenario.fit)
    test = run.test_aggregate
    errors = test[:, 0] - test[:, 1]
    binned = conditional_empirical(errors, test[:, 1], bins)
    for name, params in (("map", result.decision_params), ("em", em.params)):
        scores = evaluate_conditional_fit(params, binned)
        with open(out / f"conditional_rmse_{name}.csv", "w", newline="",
                  encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["bin", "rmse"])
            for score in scores:
                writer.writerow([score.bin_index,
                                 "" if score.rmse is None else repr(score.rmse)])
    print(f"scored {bins} forecast bins "
          f"({binned.out_of_range} pairs outside every bin)")
    return 0


def cmd_plotdata(run, out, forecast):
    result, hyper, init = _run_dmap(run)
    benchmark = fit_map(run.train_aggregate, hyper, init, run.scenario.fit)
    em = fit_em(run.train_aggregate, init, run.scenario.fit)
    vn = result.decision_params
    test = run.test_aggregate
    for axis, column in (("awo", 0), ("fwo", 1)):
        empirical = EmpiricalPdf.from_samples(test[:, column], 50)
        lo = min(empirical.edges[0],
                 *(p.marginal(axis).support()[0] for p in (vn, em,
                                                           benchmark.params)))
        hi = max(empirical.edges[-1],
                 *(p.marginal(axis).support()[1] for p in (vn, em,
                                                           benchmark.params)))
        grid = density_grid(lo, hi, 200)
        _write_curve(out / f"curve_{axis}_empirical.csv",
                     empirical.bin_centers, empirical.densities)
        _write_curve(out / f"curve_{axis}_vn.csv", grid,
                     vn.marginal(axis).pdf(grid))
        _write_curve(out / f"curve_{axis}_map.csv", grid,
                     benchmark.params.marginal(axis).pdf(grid))
        _write_curve(out / f"curve_{axis}_em.csv", grid,
                     em.params.marginal(axis).pdf(grid))
    if forecast is not None:
        conditional = vn.condition_on_forecast(forecast)
        lo, hi = conditional.support()
        grid = density_grid(lo, hi, 200)
        _write_curve(out / f"curve_error_given_{forecast:g}.csv", grid,
                     conditional.pdf(grid))
    print(f"density curves written to {out}")
    return 0


# ---------------------------------------------------------------------------


def _build_parser():
    parser = _Parser(prog="windgmm",
                     description="Distributed mixture modeling of aggregated "
                                 "wind power forecast error")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="scenario TOML file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the scenario seed")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--cut-link", action="append", default=[],
                       metavar="M,N",
                       help="remove a farm link (1-based ids; repeatable)")

    common(sub.add_parser("synth", help="generate the synthetic farm data"))
    topo = sub.add_parser("topology", help="build and inspect the topology")
    common(topo)
    topo.add_argument("--attach-vn", action="store_true",
                      help="also select key nodes and attach the virtual node")
    common(sub.add_parser("fit-map", help="centralized posterior-mode fit"))
    common(sub.add_parser("fit-em", help="centralized maximum-likelihood fit"))
    naive = sub.add_parser("fit-naive",
                           help="fit one node's estimated aggregates alone")
    common(naive)
    naive.add_argument("--node", type=int, required=True,
                       help="farm node id (1-based)")
    common(sub.add_parser("fit-dmap", help="distributed fit with virtual node"))
    common(sub.add_parser("eval-rmse",
                          help="per-node marginal RMSE vs the centralized "
                               "benchmark"))
    cond = sub.add_parser("eval-conditional",
                          help="per-bin conditional-error RMSE, fitted vs "
                               "empirical")
    common(cond)
    cond.add_argument("--bins", type=int, default=9,
                      help="number of forecast bins (default 9)")
    plot = sub.add_parser("plotdata", help="emit density curves as CSV")
    common(plot)
    plot.add_argument("--forecast", type=float, default=None,
                      help="also emit the conditional error density at this "
                           "forecast value (MW)")
    return parser


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        scenario = load_scenario(args.config)
        seed = scenario.seed if args.seed is None else args.seed
        cuts = [_parse_cut(c) for c in args.cut_link]
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        run = _Run(scenario, seed, cuts)

        if args.command == "synth":
            return cmd_synth(run, out)
        if args.command == "topology":
            return cmd_topology(run, out, args.attach_vn)
        if args.command == "fit-map":
            return cmd_fit_map(run, out)
        if args.command == "fit-em":
            return cmd_fit_em(run, out)
        if args.command == "fit-naive":
            return cmd_fit_naive(run, out, args.node)
        if args.command == "fit-dmap":
            return cmd_fit_dmap(run, out)
        if args.command == "eval-rmse":
            return cmd_eval_rmse(run, out)
        if args.command == "eval-conditional":
            return cmd_eval_conditional(run, out, args.bins)
        if args.command == "plotdata":
            return cmd_plotdata(run, out, args.forecast)
        raise ValidationError(f"unknown command {args.command!r}")
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 2
    except WindgmmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
