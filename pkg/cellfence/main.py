"""
Command-line front end.

    cellfence scenario --out FILE
    cellfence generate --scenario FILE --connections N --seed S [--frontend {synthetic,wideband}] --out DATASET
    cellfence train --dataset DATASET --out MODEL
    cellfence eval --model MODEL --dataset DATASET --out METRICS
    cellfence run --scenario FILE --model MODEL --mode {inproc,socket} [--frontend {synthetic,wideband}] --out DIR
    cellfence sweep KIND --out CSV
    cellfence bench {bus,channelizer}

Exit codes: 0 success, 1 usage, 2 configuration, 3 runtime.
"""

import argparse
import logging
import os
import sys

import pandas as pd

from cellfence.central.relative_features import feature_groups, n_features
from cellfence.channel.scenario import default_scenario, load_scenario, save_scenario
from cellfence.config import BUS_BASE_PORT, BUS_HOST, DECISION_THRESHOLD, DEFAULT_SCENARIO, DEFAULT_SEED, FRONT_ENDS
from cellfence.errors import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, CellfenceError, ConfigurationError
from cellfence.model.dataset import Dataset
from cellfence.model.ensemble import EnsembleModel, train_ensemble
from cellfence.model.metrics import connection_table, evaluate, roc_curve, score_dataset
from cellfence.model.mlp import MlpConfig, grid_search, train_mlp
from cellfence.model.model_file import load_model, save_model
from cellfence.utils.logging_setup import log_library_versions, setup_logging

logger = logging.getLogger("Cellfence")

SWEEP_KINDS = ("power", "msgtypes", "snr", "aoa", "dropout", "delay", "aoa_sep", "msgcount")
SWEEP_ALIASES = {
    "power_fig5a": "power",
    "msgtypes_fig5b": "msgtypes",
    "snr_fig5c": "snr",
    "aoa_fig6": "aoa",
    "dropout_fig_lru": "dropout",
}
GRID = {"h1": [32, 64], "h2": [16, 32], "dropout": [0.1, 0.2], "learning_rate": [1e-3, 3e-3]}


class CliParser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _scenario(args):
    scenario = load_scenario(args.scenario) if args.scenario else default_scenario()
    if getattr(args, "receivers", None):
        ids = [int(r) for r in args.receivers.split(",")]
        unknown = set(ids) - set(scenario.receiver_ids)
        if unknown:
            raise ConfigurationError(f"Scenario has no receivers {sorted(unknown)}")
        scenario = scenario.with_receivers(ids)
    return scenario


def _models(args, n_receivers):
    if not args.model:
        return None, None
    model, ensemble = load_model(args.model, n_features(n_receivers))
    if getattr(args, "weights", None):
        ensemble = EnsembleModel.load_weights(args.weights)
    return model, ensemble


def _out_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def cmd_scenario(args):
    save_scenario(default_scenario(), args.out)
    logger.info(f"Wrote the default scenario to {args.out}")


def cmd_generate(args):
    from cellfence.sim.pipeline import generate_dataset

    scenario = _scenario(args)
    result = generate_dataset(scenario, args.connections, args.seed, loss_rate=args.loss_rate,
                              day=args.day, decision_log=args.decisions, frontend=args.frontend)
    result.dataset.save(args.out)
    balance = result.class_balance
    print(f"Class balance: {balance['inside']:.1%} inside / {balance['outside']:.1%} outside "
          f"over {args.connections} connections, {len(result.dataset)} messages")
    print(f"Measurement loss: {result.status['measurement_loss']:.4%}")


def _train_rows(dataset):
    usable = dataset.usable()
    if not usable.any():
        raise CellfenceError("No message in the dataset has two valid ports")
    return dataset.subset(usable)


def cmd_train(args):
    dataset = Dataset.load(args.dataset)
    rows = _train_rows(dataset)
    config = MlpConfig(max_epochs=args.epochs, receiver_dropout=args.receiver_dropout)
    groups = feature_groups(len(dataset.receiver_ids))
    values, masks, labels = rows.values(), rows.masks(), rows.labels()
    if args.grid:
        config, model, results = grid_search(values, masks, labels, rows.groups(), GRID, config, args.seed, groups)
        pd.DataFrame(results).to_csv(f"{args.out}.grid.csv", index=False)
        logger.info(f"Selected {config}")
    else:
        model, history = train_mlp(values, masks, labels, rows.groups(), config, args.seed, groups)
        pd.DataFrame(history).to_csv(f"{args.out}.history.csv", index=False)

    table = connection_table(dataset, score_dataset(model, dataset))
    ensemble = train_ensemble(table[["prach", "pusch", "pucch"]].to_numpy(), table["label"].to_numpy())
    save_model(args.out, model, ensemble)
    ensemble.save_weights(f"{args.out}.weights.json")

    result = evaluate(model, ensemble, dataset)
    print(f"Training accuracy: message {result.message.accuracy:.4f}, connection {result.connection.accuracy:.4f}")


def cmd_eval(args):
    dataset = Dataset.load(args.dataset)
    model, ensemble = _models(args, len(dataset.receiver_ids))
    result = evaluate(model, ensemble, dataset, args.threshold)
    result.summary_frame().to_csv(args.out, index=False, float_format="%.6f")
    base = os.path.splitext(args.out)[0]
    result.per_route.to_csv(f"{base}_routes.csv", index=False, float_format="%.6f")
    result.decisions.to_csv(f"{base}_connections.csv", index=False, float_format="%.6f")
    if args.roc:
        roc_curve(dataset.labels(), score_dataset(model, dataset)).to_csv(args.roc, index=False, float_format="%.6f")
    print("Per-message confusion:")
    print(result.message.confusion_table().to_string())
    print("Per-connection confusion:")
    print(result.connection.confusion_table().to_string())
    print(f"Message accuracy {result.message.accuracy:.4%}, connection accuracy {result.connection.accuracy:.4%} "
          f"(FPR {result.connection.fpr:.4%}, FNR {result.connection.fnr:.4%})")


def cmd_run(args):
    scenario = _scenario(args)
    out = _out_dir(args.out)
    if args.mode == "socket":
        if args.frontend != "synthetic":
            raise ConfigurationError("Socket mode runs the synthetic front end only")
        from cellfence.sim.supervisor import LiveRun

        run = LiveRun(scenario, args.connections, out, args.seed, args.model, args.host, args.port,
                      kill_receiver_after_s=args.kill_receiver_after)
        result = run.run()
        if result.crashed:
            raise CellfenceError(f"Components crashed during the run: {result.crashed}")
        if result.accuracy is not None:
            print(f"Connection accuracy: {result.accuracy:.4%}")
        print(result.latency.format())
        return

    from cellfence.sim.pipeline import InProcessPipeline
    model, ensemble = _models(args, len(scenario.receivers))
    pipeline = InProcessPipeline(scenario, args.connections, args.seed, model, ensemble,
                                 decision_log=os.path.join(out, "decisions.csv"), frontend=args.frontend)
    result = pipeline.run()
    result.latency.write_csv(os.path.join(out, "latency.csv"))
    result.latency.write_summary_csv(os.path.join(out, "latency_summary.csv"))
    result.dataset.save(os.path.join(out, "dataset.csv"))
    if model is not None:
        evaluated = evaluate(model, ensemble, result.dataset)
        print(f"Connection accuracy: {evaluated.connection.accuracy:.4%}")
    print(result.latency.format())


def cmd_sweep(args):
    from cellfence.sim import sweeps

    kind = SWEEP_ALIASES.get(args.kind, args.kind)
    if kind == "power":
        frame = sweeps.power_sweep(trials=args.trials, seed=args.seed, interference_db=args.interference_db)
    elif kind == "msgtypes":
        frame = sweeps.message_type_sweep(trials=args.trials, seed=args.seed)
    elif kind == "snr":
        frame = sweeps.snr_sweep(trials=args.trials, seed=args.seed)
    elif kind == "delay":
        frame = sweeps.delay_sweep(trials=args.trials, seed=args.seed)
    elif kind == "aoa":
        frame = sweeps.aoa_sweep(trials=args.trials, seed=args.seed)
    elif kind == "aoa_sep":
        frame, samples = sweeps.aoa_separation_sweep(_scenario(args), seed=args.seed)
        samples.to_csv(f"{os.path.splitext(args.out)[0]}_samples.csv", index=False, float_format="%.6f")
    else:
        if not (args.model and args.dataset):
            raise ConfigurationError(f"Sweep {kind} needs --model and --dataset")
        dataset = Dataset.load(args.dataset)
        model, ensemble = _models(args, len(dataset.receiver_ids))
        if kind == "dropout":
            frame = sweeps.receiver_dropout_sweep(model, ensemble, dataset, seed=args.seed)
        else:
            frame = sweeps.message_count_sweep(model, ensemble, dataset)
    frame.to_csv(args.out, index=False, float_format="%.6f")
    print(frame.to_string(index=False))


def cmd_bench(args):
    if args.kind == "bus":
        from cellfence.bus.bench import round_trip_bench
        from cellfence.utils.stats import format_table

        stats = round_trip_bench(args.n, args.payload_size, args.host, args.port)
        print(format_table({"Round trip": stats}))
        if args.out:
            pd.DataFrame([{"operation": "Round trip", "mean_us": stats.mean, "std_us": stats.std, "min_us": stats.min,
                           "p50_us": stats.p50, "p99_us": stats.p99, "count": stats.count}]).to_csv(args.out,
                                                                                                   index=False)
    else:
        from cellfence.dsp.channelizer import channelizer_crossover

        frame = pd.DataFrame(channelizer_crossover(seed=args.seed))
        print(frame.to_string(index=False))
        if args.out:
            frame.to_csv(args.out, index=False, float_format="%.6f")


def build_parser():
    parser = CliParser(prog="cellfence", description="LTE uplink geofencing pipeline")
    parser.add_argument("--log-file", help="Also write the log to this file")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)

    p = sub.add_parser("scenario", help="Write the default benchmark scenario")
    p.add_argument("--out", default=DEFAULT_SCENARIO, help="Scenario JSON file to write")
    p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("generate", help="Simulate connections and write a labeled dataset")
    p.add_argument("--scenario", help="Scenario JSON file (default: built-in benchmark)")
    p.add_argument("--connections", "-n", type=int, default=1000, help="Connections to simulate")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="Run seed")
    p.add_argument("--day", type=int, help="Day tag stored in the dataset (default: the seed)")
    p.add_argument("--loss-rate", type=float, default=0.0, help="Bus loss probability per delivery")
    p.add_argument("--receivers", help="Comma-separated receiver ids to keep")
    p.add_argument("--decisions", help="Also write the central unit's decision log")
    p.add_argument("--frontend", choices=FRONT_ENDS, default="synthetic", help="Receiver front end")
    p.add_argument("--out", required=True, help="Dataset CSV to write")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="Train the per-message classifier and the fusion weights")
    p.add_argument("--dataset", required=True, help="Training dataset CSV")
    p.add_argument("--out", required=True, help="Model file to write")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="Training seed")
    p.add_argument("--epochs", type=int, default=MlpConfig.max_epochs, help="Maximum epochs")
    p.add_argument("--receiver-dropout", type=float, default=MlpConfig.receiver_dropout,
                   help="Share of training rows with one receiver masked")
    p.add_argument("--grid", action="store_true", help="Grid-search hidden sizes, dropout and learning rate")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Evaluate a model on a dataset")
    p.add_argument("--model", required=True, help="Model file")
    p.add_argument("--weights", help="Ensemble weights JSON overriding the model file's")
    p.add_argument("--dataset", required=True, help="Dataset CSV")
    p.add_argument("--threshold", type=float, default=DECISION_THRESHOLD, help="Inside decision threshold")
    p.add_argument("--roc", help="Also write the message-level ROC curve to this CSV")
    p.add_argument("--out", required=True, help="Metrics CSV to write")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run", help="Run the whole pipeline and report decisions and latency")
    p.add_argument("--scenario", help="Scenario JSON file (default: built-in benchmark)")
    p.add_argument("--model", help="Model file; without it every connection scores 0.5")
    p.add_argument("--weights", help="Ensemble weights JSON overriding the model file's")
    p.add_argument("--connections", "-n", type=int, default=200, help="Connections to run")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="Run seed")
    p.add_argument("--mode", choices=("inproc", "socket"), default="inproc", help="Bus and process layout")
    p.add_argument("--frontend", choices=FRONT_ENDS, default="synthetic", help="Receiver front end (inproc only for wideband)")
    p.add_argument("--receivers", help="Comma-separated receiver ids to keep")
    p.add_argument("--host", default=BUS_HOST, help="Socket bus interface")
    p.add_argument("--port", type=int, default=BUS_BASE_PORT, help="First socket bus port")
    p.add_argument("--kill-receiver-after", type=float, help="Socket mode: terminate one receiver after this many seconds")
    p.add_argument("--out", default="run", help="Output directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="Write the curve data of one study")
    p.add_argument("kind", choices=SWEEP_KINDS + tuple(SWEEP_ALIASES), help="Study to run")
    p.add_argument("--trials", type=int, default=100, help="Trials per point")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="Sweep seed")
    p.add_argument("--interference-db", type=float, help="Power sweep: co-channel interferer level")
    p.add_argument("--scenario", help="aoa_sep: scenario JSON file")
    p.add_argument("--receivers", help="Comma-separated receiver ids to keep")
    p.add_argument("--model", help="dropout, msgcount: model file")
    p.add_argument("--weights", help="Ensemble weights JSON overriding the model file's")
    p.add_argument("--dataset", help="dropout, msgcount: evaluation dataset")
    p.add_argument("--out", required=True, help="CSV file to write")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="Bus round trip or channelizer crossover benchmark")
    p.add_argument("kind", choices=("bus", "channelizer"), help="Benchmark to run")
    p.add_argument("-n", type=int, default=1000, help="Round trips")
    p.add_argument("--payload-size", type=int, help="Bytes per message (default: one report)")
    p.add_argument("--host", default=BUS_HOST, help="Interface for the bench servers")
    p.add_argument("--port", type=int, default=BUS_BASE_PORT, help="Ping server port")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="Channelizer bench seed")
    p.add_argument("--out", help="CSV file to write")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    setup_logging("Cellfence", args.log_file)
    log_library_versions(logger)

    try:
        args.func(args)
    except CellfenceError as e:
        logger.error(f"{type(e).__name__}: {str(e)}")
        return e.exit_code
    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        return EXIT_RUNTIME
    except OSError as e:
        logger.error(f"I/O error: {str(e)}")
        return EXIT_RUNTIME
    except Exception as e:
        logger.exception(f"Unexpected failure: {str(e)}")
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
