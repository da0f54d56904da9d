"""``empl`` command line: train, eval, oracle, report.

Exit codes: 0 success, 2 invalid configuration or parameters, 3 runtime
failure (including empty test sets and incomplete run directories), 4
checkpoint mismatch.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import nn, oracles
from .config import ConfigError, ExperimentConfig, config_hash, from_ini, load_config, to_ini
from .experiments import bimodal, football, urn
from .experiments.gaussian import gaussian_band
from .experiments.metrics import (METRICS, SCALE, EmptyTestSet, evaluate_metrics, format_metric_table,
                                  metric_values)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_CHECKPOINT = 0, 2, 3, 4
HELD_OUT_SIZE = 2000


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _held_out_rng(seed: int):
    return np.random.default_rng([seed, 1])


# -- building experiments from configs -------------------------------------------------

def urn_experiment(cfg: ExperimentConfig) -> urn.UrnExperiment:
    d = cfg.data_dict
    return urn.UrnExperiment(d["n_balls"], d["max_log10_draws"], cfg.hidden, cfg.batch_norm,
                             cfg.dropout, cfg.loss, cfg.schedule, cfg.seed)


def bimodal_experiment(cfg: ExperimentConfig) -> bimodal.BimodalExperiment:
    return bimodal.BimodalExperiment(cfg.hidden, cfg.batch_norm, cfg.loss, cfg.schedule,
                                     cfg.baseline, cfg.data_dict["eval_samples"], cfg.seed)


def football_experiment(cfg: ExperimentConfig) -> football.FootballExperiment:
    d = cfg.data_dict
    tests = tuple(s.strip() for s in d["test_seasons"].split(",") if s.strip())
    return football.FootballExperiment(d["source"], d["n_seasons"], tests, d["replays"], cfg.hidden,
                                       cfg.batch_norm, cfg.dropout, cfg.loss, cfg.schedule,
                                       d["n_bootstrap"], cfg.seed, cfg.baseline)


def held_out_data(kind: str, cfg: ExperimentConfig, size: int):
    """Seeded held-out ``(x, labels)`` for the metric table."""
    rng = _held_out_rng(cfg.seed)
    d = cfg.data_dict
    if kind == "urn":
        _, x, labels = urn.held_out_set(d["n_balls"], size, rng, d["max_log10_draws"])
        return x, labels
    if kind == "bimodal":
        return bimodal.sample_batch(rng, size)
    exp = football_experiment(cfg)
    _, test = football.load_seasons(exp, np.random.default_rng(cfg.seed))
    x, y = football.season_dataset(test)
    return x[:size], y[:size]


def metric_rows(nets: dict, x, labels) -> dict:
    rows = {name: evaluate_metrics(net, x, labels) for name, net in nets.items()}
    uniform = np.full_like(np.asarray(labels, dtype=np.float64), 1.0 / np.shape(labels)[1])
    raw = metric_values(labels, uniform)
    rows["uniform"] = {k: raw[k] * SCALE[k] for k in METRICS}
    return rows


def write_metrics(out: Path, rows: dict) -> str:
    write_csv(out / "metrics.csv", ("model",) + METRICS,
              ([name] + [vals[m] for m in METRICS] for name, vals in rows.items()))
    return format_metric_table(rows)


def write_curves(out: Path, curves: dict) -> None:
    write_csv(out / "loss_curve.csv", ("model", "iteration", "loss"),
              ((name, it, v) for name, curve in curves.items() for it, v in curve))


def _band_block(path) -> str:
    return f"\n[{path.name}]\n" + path.read_text()


# -- train -----------------------------------------------------------------------------

def _train_urn(cfg, out, progress):
    exp = urn_experiment(cfg)
    net, curve, report = urn.run_urn(exp, progress)
    write_curves(out, {"empl": curve})
    write_csv(out / "bands.csv", ("draws", "tau", "bin", "predicted", "analytic"), report.rows())
    x, labels = held_out_data("urn", cfg, HELD_OUT_SIZE)
    table = write_metrics(out, metric_rows({"empl": net}, x, labels))
    summary = (f"max abs deviation {report.max_dev:.6f}\n"
               f"mean abs deviation {report.mean_dev:.6f}\n")
    return {"model.npz": net}, table + summary


def _train_bimodal(cfg, out, progress):
    empl_net, gauss_net, curves, rep = bimodal.run_bimodal(bimodal_experiment(cfg), progress)
    write_curves(out, curves)
    rows = []
    for i, x_in in enumerate(rep.panel_inputs):
        for model, band in (("empl", rep.empl_bands), ("gaussian", rep.gauss_bands),
                            ("truth", rep.truth_bands)):
            for t, tau in enumerate(rep.levels):
                for j in range(band.shape[2]):
                    rows.append((i, *x_in, model, tau, j + 1, band[i, t, j]))
    write_csv(out / "bands.csv", ("input", "b1", "b2", "xi", "model", "tau", "bin", "value"), rows)
    write_csv(out / "cdf_bin5.csv", ("model", "tau", "value"),
              [("empl", t, v) for t, v in zip(rep.cdf_taus, rep.cdf_empl)]
              + [("gaussian", t, v) for t, v in zip(rep.cdf_taus, rep.cdf_gauss)])
    n = len(rep.cdf_truth_sorted)
    write_csv(out / "cdf_truth_bin5.csv", ("value", "cdf"),
              ((v, (k + 1) / n) for k, v in enumerate(rep.cdf_truth_sorted)))
    write_csv(out / "calibration.csv", ("alpha", "empl", "gaussian"),
              zip(rep.alphas, rep.empl_coverage, rep.gauss_coverage))
    x, labels = held_out_data("bimodal", cfg, HELD_OUT_SIZE)
    table = write_metrics(out, metric_rows({"empl": empl_net, "gaussian": gauss_net}, x, labels))
    summary = (f"empl max calibration error {rep.empl_max_calibration_error:.6f}\n"
               f"gaussian max calibration error {rep.gauss_max_calibration_error:.6f}\n")
    return {"model.npz": empl_net, "baseline.npz": gauss_net}, table + summary


def _train_football(cfg, out, progress):
    empl_net, gauss_net, curves, rep = football.run_football(football_experiment(cfg), progress)
    write_curves(out, curves)
    rows, flags = [], []
    for c in rep.clubs:
        for model, band in (("empl", c.empl_band), ("gaussian", c.gauss_band),
                            ("bootstrap", c.bootstrap_band)):
            for t, tau in enumerate(rep.levels):
                for j in range(band.shape[1]):
                    rows.append((c.season, c.club, model, tau, j + 1, band[t, j]))
        for j, v in enumerate(c.truth):
            rows.append((c.season, c.club, "truth", "", j + 1, v))
        flags.append((c.season, c.club, c.final_position, c.gauss_out_of_range,
                      c.gauss_non_monotone, c.band_overlap_bins))
    write_csv(out / "bands.csv", ("season", "club", "model", "tau", "bin", "value"), rows)
    write_csv(out / "flags.csv", ("season", "club", "final_position", "gauss_out_of_range",
                                  "gauss_non_monotone", "overlap_bins"), flags)
    x, labels = held_out_data("football", cfg, 10**9)
    table = write_metrics(out, metric_rows({"empl": empl_net, "gaussian": gauss_net}, x, labels))
    summary = (f"empl bands valid {rep.empl_bands_valid()}\n"
               f"gaussian band flags {rep.gauss_flag_total}\n")
    return {"model.npz": empl_net, "baseline.npz": gauss_net}, table + summary


TRAINERS = {"urn": _train_urn, "bimodal": _train_bimodal, "football": _train_football}


def cmd_train(cfg: ExperimentConfig, out: Path, verbose: bool = False) -> int:
    out.mkdir(parents=True, exist_ok=True)
    progress = None
    if verbose:
        def progress(it, value):
            print(f"iteration {it} loss {value:.6g}", file=sys.stderr)
    start = time.perf_counter()
    try:
        nets, report_text = TRAINERS[cfg.kind](cfg, out, progress)
    except (football.DataUnavailable, football.MalformedSeason, EmptyTestSet) as exc:
        raise CliError(EXIT_RUNTIME, f"{type(exc).__name__}: {exc}") from exc
    wall = time.perf_counter() - start

    ini = to_ini(cfg)
    meta = {"kind": cfg.kind, "config": ini, "config_hash": config_hash(cfg)}
    files = ["config.ini", "loss_curve.csv", "metrics.csv", "report.txt"]
    for name, net in nets.items():
        nn.save_checkpoint(out / name, net, dict(meta, role=name[:-4]))
        files.append(name)
    (out / "config.ini").write_text(ini)
    blocks = "".join(_band_block(out / p) for p in ("bands.csv", "calibration.csv", "flags.csv")
                     if (out / p).exists())
    (out / "report.txt").write_text(f"{cfg.kind} experiment, seed {cfg.seed}\n\n" + report_text + blocks)
    files += sorted(p.name for p in out.glob("*.csv") if p.name not in files)
    manifest = {"kind": cfg.kind, "seed": cfg.seed, "config_hash": config_hash(cfg),
                "wall_time_seconds": round(wall, 3), "files": sorted(set(files))}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(report_text, end="")
    return EXIT_OK


# -- eval ------------------------------------------------------------------------------

def cmd_eval(checkpoint: Path, out: Path, taus, draws, test_size: int, seed=None) -> int:
    try:
        net, meta = nn.load_checkpoint(checkpoint)
    except (nn.CheckpointError, FileNotFoundError, OSError) as exc:
        raise CliError(EXIT_CHECKPOINT, f"checkpoint: {exc}") from exc
    try:
        cfg = from_ini(meta["config"])
    except (KeyError, ConfigError) as exc:
        raise CliError(EXIT_CHECKPOINT, "checkpoint carries no valid experiment config") from exc
    if seed is not None:
        cfg = cfg.replace(seed=seed)
    taus = np.asarray(taus, dtype=np.float64)
    if np.any((taus <= 0) | (taus >= 1)):
        raise CliError(EXIT_CONFIG, "--taus: levels must lie in (0, 1)")
    out.mkdir(parents=True, exist_ok=True)

    def band(x):
        if net.head == "gaussian":
            return gaussian_band(net, x, taus)
        return nn.predict_cumulative(net, x, taus)

    if cfg.kind == "urn":
        n_balls = cfg.data_dict["n_balls"]
        if net.n_bins != n_balls:
            raise CliError(EXIT_CHECKPOINT, "checkpoint bins do not match the config")
        pred = band(urn.draws_feature(draws))
        rows = []
        for a, x in enumerate(draws):
            truth = oracles.urn_quantile_table(oracles.UrnSpec(n_balls, int(x)), taus)
            for t, tau in enumerate(taus):
                for j in range(n_balls):
                    rows.append((int(x), tau, j + 1, pred[a, t, j], truth[t, j]))
        write_csv(out / "bands.csv", ("draws", "tau", "bin", "predicted", "analytic"), rows)
    elif cfg.kind == "bimodal":
        inputs = np.asarray(bimodal.PANEL_INPUTS)
        pred = band(inputs)
        write_csv(out / "bands.csv", ("input", "b1", "b2", "xi", "tau", "bin", "value"),
                  ((i, *inputs[i], tau, j + 1, pred[i, t, j]) for i in range(len(inputs))
                   for t, tau in enumerate(taus) for j in range(pred.shape[2])))
    if test_size < 1:
        raise CliError(EXIT_RUNTIME, "EmptyTestSet: cannot evaluate metrics on an empty test set")
    try:
        x, labels = held_out_data(cfg.kind, cfg, test_size)
        if cfg.kind == "football":
            pred = band(x)
            write_csv(out / "bands.csv", ("sample", "tau", "bin", "value"),
                      ((s, tau, j + 1, pred[s, t, j]) for s in range(len(x))
                       for t, tau in enumerate(taus) for j in range(pred.shape[2])))
        if x.shape[1] != net.input_dim:
            raise CliError(EXIT_CHECKPOINT, "checkpoint input width does not match the experiment")
        table = write_metrics(out, metric_rows({meta.get("role", "model"): net}, x, labels))
    except (EmptyTestSet, football.DataUnavailable) as exc:
        raise CliError(EXIT_RUNTIME, f"{type(exc).__name__}: {exc}") from exc
    (out / "metrics.txt").write_text(table)
    print(table, end="")
    return EXIT_OK


# -- oracle ----------------------------------------------------------------------------

def cmd_oracle(args) -> int:
    try:
        if args.oracle == "urn":
            vals = oracles.urn_quantile_table(oracles.UrnSpec(args.n, args.x), [args.tau])[0]
            print("bin,value")
            for j, v in enumerate(vals):
                print(f"{j + 1},{float(v)!r}")
        elif args.oracle == "urn-band":
            band = oracles.urn_quantile_table(oracles.UrnSpec(args.n, args.x), args.taus)
            text = oracles.QuantileBand(tuple(args.taus), band).to_csv()
            if args.output:
                Path(args.output).write_text(text)
            else:
                print(text, end="")
        elif args.oracle == "emd-strategies":
            s1 = oracles.expected_emd_strategy("median", args.n)
            s2 = oracles.expected_emd_strategy("mean", args.n)
            print(f"strategy_1,{s1!r}")
            print(f"strategy_2,{s2!r}")
            print(f"ratio,{s2 / s1!r}" if s1 > 0 else "ratio,nan")
        elif args.oracle == "binomial-cdf":
            print(repr(float(oracles.binomial_cdf(args.l, args.x, args.p))))
    except (oracles.DomainError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"{args.oracle}: {exc}") from exc
    return EXIT_OK


# -- report ----------------------------------------------------------------------------

def _require(run: Path, names) -> None:
    missing = [n for n in names if not (run / n).is_file()]
    if missing:
        raise CliError(EXIT_RUNTIME, f"incomplete run directory {run}: missing {', '.join(missing)}")


def _report_urn(run: Path, out: Path):
    from . import plots
    rows = read_csv(run / "bands.csv")
    draws = sorted({int(r["draws"]) for r in rows})
    written = []
    for x in draws:
        sub = [r for r in rows if int(r["draws"]) == x]
        taus = sorted({float(r["tau"]) for r in sub})
        n = max(int(r["bin"]) for r in sub)
        pred = np.zeros((len(taus), n))
        truth = np.zeros((len(taus), n))
        for r in sub:
            t, j = taus.index(float(r["tau"])), int(r["bin"]) - 1
            pred[t, j], truth[t, j] = float(r["predicted"]), float(r["analytic"])
        stem = f"band_x{x}"
        plots.band_plot(out / f"{stem}.svg", taus, pred, truth, title=f"{x} draws")
        write_csv(out / f"{stem}.csv", ("tau", "bin", "predicted", "analytic"),
                  ((taus[t], j + 1, pred[t, j], truth[t, j]) for t in range(len(taus)) for j in range(n)))
        written.append(stem)
    return written


def _report_bimodal(run: Path, out: Path):
    from . import plots
    _require(run, ("cdf_bin5.csv", "cdf_truth_bin5.csv", "calibration.csv"))
    rows = read_csv(run / "bands.csv")
    written = []
    for i in sorted({int(r["input"]) for r in rows}):
        sub = [r for r in rows if int(r["input"]) == i]
        taus = sorted({float(r["tau"]) for r in sub})
        n = max(int(r["bin"]) for r in sub)
        arr = {m: np.zeros((len(taus), n)) for m in ("empl", "gaussian", "truth")}
        for r in sub:
            arr[r["model"]][taus.index(float(r["tau"])), int(r["bin"]) - 1] = float(r["value"])
        label = f"X = ({sub[0]['b1']}, {sub[0]['b2']}, {sub[0]['xi']})"
        for model in ("empl", "gaussian"):
            stem = f"band_input{i}_{model}"
            plots.band_plot(out / f"{stem}.svg", taus, arr[model], arr["truth"], title=f"{model}, {label}")
            write_csv(out / f"{stem}.csv", ("tau", "bin", model, "truth"),
                      ((taus[t], j + 1, arr[model][t, j], arr["truth"][t, j])
                       for t in range(len(taus)) for j in range(n)))
            written.append(stem)
    cdf = read_csv(run / "cdf_bin5.csv")
    taus = [float(r["tau"]) for r in cdf if r["model"] == "empl"]
    empl_q = [float(r["value"]) for r in cdf if r["model"] == "empl"]
    gauss_q = [float(r["value"]) for r in cdf if r["model"] == "gaussian"]
    truth = [float(r["value"]) for r in read_csv(run / "cdf_truth_bin5.csv")]
    plots.cdf_plot(out / "cdf_bin5.svg", truth, taus, empl_q, gauss_q, title="bin 5")
    write_csv(out / "cdf_bin5.csv", ("tau", "empl", "gaussian"), zip(taus, empl_q, gauss_q))
    cal = read_csv(run / "calibration.csv")
    alphas = [float(r["alpha"]) for r in cal]
    curves = {"EMPL": [float(r["empl"]) for r in cal], "Gaussian": [float(r["gaussian"]) for r in cal]}
    plots.calibration_plot(out / "calibration.svg", alphas, curves, title="coverage")
    write_csv(out / "calibration.csv", ("alpha", "empl", "gaussian"),
              zip(alphas, curves["EMPL"], curves["Gaussian"]))
    return written + ["cdf_bin5", "calibration"]


def _report_football(run: Path, out: Path):
    from . import plots
    rows = read_csv(run / "bands.csv")
    written = []
    seasons = list(dict.fromkeys(r["season"] for r in rows))
    for s in seasons:
        # first listed club of each test season, enough for a figure-equivalent
        club = next(r["club"] for r in rows if r["season"] == s)
        sub = [r for r in rows if r["season"] == s and r["club"] == club]
        n = max(int(r["bin"]) for r in sub)
        taus = sorted({float(r["tau"]) for r in sub if r["tau"]})
        arr = {m: np.zeros((len(taus), n)) for m in ("empl", "gaussian", "bootstrap")}
        truth = np.zeros(n)
        for r in sub:
            if r["model"] == "truth":
                truth[int(r["bin"]) - 1] = float(r["value"])
            else:
                arr[r["model"]][taus.index(float(r["tau"])), int(r["bin"]) - 1] = float(r["value"])
        stem = f"band_{s}_{club}".replace(" ", "_").replace("/", "-")
        plots.band_plot(out / f"{stem}.svg", taus, arr["empl"], None, arr["bootstrap"][0],
                        arr["bootstrap"][-1], title=f"{club}, {s}")
        write_csv(out / f"{stem}.csv", ("tau", "bin", "empl", "gaussian", "bootstrap", "truth"),
                  ((taus[t], j + 1, arr["empl"][t, j], arr["gaussian"][t, j], arr["bootstrap"][t, j],
                    truth[j]) for t in range(len(taus)) for j in range(n)))
        written.append(stem)
    return written


def cmd_report(run: Path, out: Path | None = None) -> int:
    if not run.is_dir():
        raise CliError(EXIT_RUNTIME, f"run directory {run} does not exist")
    _require(run, ("manifest.json", "loss_curve.csv", "bands.csv"))
    from . import plots
    kind = json.loads((run / "manifest.json").read_text()).get("kind")
    out = out or run / "figures"
    out.mkdir(parents=True, exist_ok=True)
    try:
        written = {"urn": _report_urn, "bimodal": _report_bimodal,
                   "football": _report_football}[kind](run, out)
    except KeyError as exc:
        raise CliError(EXIT_RUNTIME, f"malformed run directory {run}: {exc}") from exc
    curve = read_csv(run / "loss_curve.csv")
    empl = [r for r in curve if r["model"] == "empl"]
    plots.loss_curve_plot(out / "loss_curve.svg", [int(r["iteration"]) for r in empl],
                          [float(r["loss"]) for r in empl])
    for stem in written + ["loss_curve"]:
        print(out / f"{stem}.svg")
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------------

def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the config seed")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--config", default=argparse.SUPPRESS,
                        help="config file path or bundled config name")

    p = argparse.ArgumentParser(prog="empl", parents=[common],
                                description="Histogram quantile regression experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="train from a config")
    t.add_argument("config_path", nargs="?", help="config file (alternative to --config)")
    t.add_argument("--verbose", action="store_true", help="log training progress to stderr")

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("--taus", type=_float_list, default=list(urn.EVAL_TAUS))
    e.add_argument("--draws", type=_int_list, default=list(urn.EVAL_DRAWS))
    e.add_argument("--test-size", type=int, default=HELD_OUT_SIZE)

    o = sub.add_parser("oracle", parents=[common], help="run an oracle standalone")
    osub = o.add_subparsers(dest="oracle", required=True)
    ou = osub.add_parser("urn", help="analytic urn quantiles for one level")
    ou.add_argument("--n", type=int, required=True)
    ou.add_argument("--x", type=int, required=True)
    ou.add_argument("--tau", type=float, required=True)
    ob = osub.add_parser("urn-band", help="analytic urn quantile band as CSV")
    ob.add_argument("--n", type=int, required=True)
    ob.add_argument("--x", type=int, required=True)
    ob.add_argument("--taus", type=_float_list, default=list(urn.EVAL_TAUS))
    ob.add_argument("--output")
    oe = osub.add_parser("emd-strategies", help="expected EMD of the two single-draw strategies")
    oe.add_argument("--n", type=int, required=True)
    oc = osub.add_parser("binomial-cdf", help="P(Binomial(x, p) <= l)")
    oc.add_argument("--l", type=int, required=True)
    oc.add_argument("--x", type=int, required=True)
    oc.add_argument("--p", type=float, required=True)

    r = sub.add_parser("report", parents=[common], help="figures from a run directory")
    r.add_argument("run_dir")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    seed = getattr(args, "seed", None)
    out = getattr(args, "out", None)
    try:
        if args.command == "train":
            source = getattr(args, "config", None) or args.config_path
            if source is None:
                raise CliError(EXIT_CONFIG, "train: a config is required (--config)")
            try:
                cfg = load_config(source)
                if seed is not None:
                    if seed < 0:
                        raise ConfigError("experiment.seed", "must be >= 0")
                    cfg = cfg.replace(seed=seed)
            except ConfigError as exc:
                raise CliError(EXIT_CONFIG, f"config error: {exc}") from exc
            return cmd_train(cfg, Path(out or cfg.output_dir), args.verbose)
        if args.command == "eval":
            return cmd_eval(Path(args.checkpoint), Path(out or Path(args.checkpoint).parent / "eval"),
                            args.taus, args.draws, args.test_size, seed)
        if args.command == "oracle":
            return cmd_oracle(args)
        if args.command == "report":
            return cmd_report(Path(args.run_dir), Path(out) if out else None)
    except CliError as exc:
        print(f"empl: {exc}", file=sys.stderr)
        return exc.code
    return EXIT_CONFIG


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
