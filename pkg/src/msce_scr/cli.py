"""Command-line entry point: ``msce-scr <subcommand> ...``.

Logs go to stderr; artifacts go under ``--out``. ``--config FILE`` loads a
JSON object whose keys (kebab- or snake-case) override the parsed flags.
"""

import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from . import corpus, lexicon as lx, model as M, toy, train as tr
from .decoder import DecoderConfig
from .evaluate import (
    EvalError,
    RocPoint,
    compute_metrics,
    default_thresholds,
    nearest_far,
    relative_gain,
    roc_sweep,
    score_dataset,
    write_confusion_csv,
    write_report,
    write_roc_csv,
)
from .graph import GraphError, build_graph, graph_stats
from .numerics import Rng

log = logging.getLogger("msce_scr")

DEFAULT_FAR_POINTS = (0.01, 0.02, 0.05)


class UsageError(Exception):
    pass


def _csv_ints(text):
    return tuple(int(x) for x in text.split(",") if x.strip())


def _csv_floats(text):
    return tuple(float(x) for x in text.split(",") if x.strip())


def _add_commands(p):
    p.add_argument("--commands", help="command list file (default: built-in toy set)")
    p.add_argument("--lexicon", help="lexicon file (default: built-in toy lexicon)")
    p.add_argument("--states-per-phone", type=int, default=3)


def _add_common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="JSON file whose keys override flags")
    p.add_argument("--out", required=False, default=".")


def _add_decoder(p):
    p.add_argument("--beam", type=float, default=DecoderConfig.beam)
    p.add_argument("--max-tokens", type=int, default=DecoderConfig.max_tokens)
    p.add_argument("--no-blank-absorb", action="store_true")


def load_command_set(args):
    if bool(args.commands) != bool(args.lexicon):
        raise UsageError("--commands and --lexicon go together")
    if args.commands:
        return lx.CommandSet.from_files(args.commands, args.lexicon, args.states_per_phone)
    return toy.command_set(args.states_per_phone)


def decoder_config(args, threshold):
    return DecoderConfig(
        beam=args.beam,
        trigger_threshold=threshold,
        blank_absorb=not args.no_blank_absorb,
        max_tokens=args.max_tokens,
    )


def cmd_build_graph(args):
    cs = load_command_set(args)
    g = build_graph(cs)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "graph.txt"), "w", encoding="utf-8") as fh:
        fh.write(g.dump())
    stats = graph_stats(g)
    with open(os.path.join(args.out, "graph_stats.json"), "w", encoding="utf-8") as fh:
        json.dump(stats, fh, sort_keys=True, indent=1)
    print(json.dumps(stats, sort_keys=True))
    return 0


def cmd_confusion_sets(args):
    cs = load_command_set(args)
    table = lx.build_pss_sets(cs, args.n)
    text = lx.dump_confusion_sets(cs, table)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "confusion_sets.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    sys.stdout.write(text)
    return 0


def _parse_confusable(items, default):
    if items is None:
        return default
    out = []
    for item in items:
        a, b, d = item.split(":")
        out.append((a, b, float(d)))
    return tuple(out)


def cmd_synth_data(args):
    cs = load_command_set(args)
    confusable = _parse_confusable(args.confusable, toy.CONFUSABLE if not args.commands else ())
    profile = corpus.make_profile(
        cs,
        Rng(args.seed, "profile"),
        feature_dim=args.feature_dim,
        state_std=args.state_std,
        noise_std=args.noise_std,
        confusable=confusable,
        dur_min=args.min_duration,
        dur_max=args.max_duration,
    )
    os.makedirs(args.out, exist_ok=True)
    splits = [
        ("train", args.train_per_command, args.train_negatives),
        ("eval", args.eval_per_command, args.eval_negatives),
    ]
    for split, pos, neg in splits:
        m = corpus.synth_corpus(
            cs, profile, os.path.join(args.out, split), pos, neg, args.seed, args.snr_db, split
        )
        log.info("%s: %d utterances", split, len(m.records))
    with open(os.path.join(args.out, "commands.txt"), "w", encoding="utf-8") as fh:
        fh.write("".join(c.name + "\n" for c in cs.commands))
    lex_text = toy.LEXICON
    if args.lexicon:
        with open(args.lexicon, encoding="utf-8") as fh:
            lex_text = fh.read()
    with open(os.path.join(args.out, "lexicon.txt"), "w", encoding="utf-8") as fh:
        fh.write(lex_text)
    return 0


def _model_config(args, cs, input_dim):
    if args.toy_model:
        return toy.model_config(cs, input_dim)
    return M.ModelConfig(
        output_units=cs.output_units,
        num_blocks=args.num_blocks,
        kernel_size=args.kernel_size,
        channels=args.channels,
        dilations=_csv_ints(args.dilations) if args.dilations else M.PAPER_DILATIONS[: args.num_blocks],
        causal_blocks=_csv_ints(args.causal_blocks),
        input_dim=input_dim,
        dropout_rate=args.dropout_rate,
    )


def cmd_train(args):
    cs = load_command_set(args)
    manifest = corpus.read_manifest(args.manifest)
    cfg = tr.TrainConfig(
        stage=args.stage,
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        strategy=args.strategy,
        n_confusers=args.n_confusers,
        beta_mix=args.beta_mix,
        xi=args.xi,
        alpha_shift=args.alpha_shift,
        seed=args.seed,
        checkpoint_every=args.checkpoint_every,
        average_last_k=args.average_last_k,
    )
    init = M.load_checkpoint(args.init) if args.init else None
    if cfg.stage == "msce" and init is None:
        raise UsageError("--stage msce requires --init CHECKPOINT")
    mcfg = None if init else _model_config(args, cs, manifest.header["feature_dim"])
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, f"{cfg.stage}_train_config.json"), "w", encoding="utf-8") as fh:
        json.dump(tr.train_config_dict(cfg), fh, sort_keys=True, indent=1)
    _, _, final = tr.train(
        manifest,
        cs,
        cfg,
        args.out,
        model_config=mcfg,
        init=init,
        log_path=os.path.join(args.out, f"{cfg.stage}_log.jsonl"),
    )
    print(final)
    return 0


def _score(args, threshold):
    cs = load_command_set(args)
    manifest = corpus.read_manifest(args.manifest)
    params, mcfg = M.load_checkpoint(args.checkpoint)
    graph = build_graph(cs)
    outcomes = score_dataset(params, mcfg, graph, manifest, decoder_config(args, threshold))
    return cs, outcomes, corpus.manifest_hash(args.manifest)


def cmd_evaluate(args):
    cs, outcomes, mhash = _score(args, args.threshold)
    report = compute_metrics(outcomes, len(cs))
    report.threshold = float(args.threshold)
    sweep = roc_sweep(outcomes, default_thresholds(outcomes, args.sweep_steps), len(cs))
    os.makedirs(args.out, exist_ok=True)
    extra = {
        "manifest_hash": mhash,
        "commands": [c.name for c in cs.commands],
        "roc": [_row(p) for p in sweep],
        "outcomes": [
            {"utt_id": o.utt_id, "truth": o.truth, "decoded": o.decoded, "score": _num(o.score)}
            for o in outcomes
        ],
    }
    write_report(os.path.join(args.out, "report.json"), report, extra)
    write_confusion_csv(os.path.join(args.out, "confusion.csv"), report, [c.name for c in cs.commands])
    print(json.dumps({k: v for k, v in report.to_dict().items() if k != "confusion_matrix"}, sort_keys=True))
    return 0


def cmd_roc(args):
    if not args.theta_min < args.theta_max:
        raise UsageError("--theta-min must be below --theta-max")
    if args.steps < 2:
        raise UsageError("--steps must be at least 2")
    cs, outcomes, _ = _score(args, args.theta_min)
    thresholds = list(np.linspace(args.theta_max, args.theta_min, args.steps))
    points = roc_sweep(outcomes, thresholds, len(cs))
    os.makedirs(args.out, exist_ok=True)
    write_roc_csv(os.path.join(args.out, "roc.csv"), points)
    return 0


def cmd_compare(args):
    with open(args.report_a, encoding="utf-8") as fh:
        a = json.load(fh)
    with open(args.report_b, encoding="utf-8") as fh:
        b = json.load(fh)
    if a.get("manifest_hash") != b.get("manifest_hash"):
        raise UsageError("reports were computed on different evaluation manifests")
    def points(rep):
        return [RocPoint(r["threshold"], r["far"], r["frr"], r["confusions"]) for r in rep["roc"]]

    pa, pb = points(a), points(b)
    rows = []
    for far in args.far_points:
        ra, rb = nearest_far(pa, far), nearest_far(pb, far)
        row = {"far_target": far, "a": _row(ra), "b": _row(rb)}
        for f in ("frr", "far", "confusions"):
            try:
                row[f"gain_{f}"] = relative_gain(getattr(ra, f), getattr(rb, f))
            except EvalError:
                row[f"gain_{f}"] = None
        rows.append(row)
    print(f"{'FAR':>6} {'conf A':>7} {'conf B':>7} {'gain conf %':>12} {'gain FRR %':>11}")
    for r in rows:
        print(
            f"{r['far_target']:>6} {r['a']['confusions']:>7} {r['b']['confusions']:>7} "
            f"{_pct(r['gain_confusions']):>12} {_pct(r['gain_frr']):>11}"
        )
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "compare.json"), "w", encoding="utf-8") as fh:
            json.dump(rows, fh, sort_keys=True, indent=1)
    return 0


def _row(p):
    return {"threshold": p.threshold, "far": p.far, "frr": p.frr, "confusions": p.confusions}


def _num(x):
    return x if math.isfinite(x) else None


def _pct(x):
    return "undef" if x is None else f"{x:.2f}"


def build_parser():
    ap = argparse.ArgumentParser(prog="msce-scr", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-graph", help="build the command search graph")
    _add_commands(p)
    _add_common(p)
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("confusion-sets", help="dump similarity-based confusing sets")
    _add_commands(p)
    _add_common(p)
    p.add_argument("--n", type=int, default=4)
    p.set_defaults(func=cmd_confusion_sets)

    p = sub.add_parser("synth-data", help="generate a synthetic train/eval corpus")
    _add_commands(p)
    _add_common(p)
    p.add_argument("--train-per-command", type=int, default=200)
    p.add_argument("--eval-per-command", type=int, default=50)
    p.add_argument("--train-negatives", type=int, default=500)
    p.add_argument("--eval-negatives", type=int, default=500)
    p.add_argument("--feature-dim", type=int, default=40)
    p.add_argument("--state-std", type=float, default=0.5)
    p.add_argument("--noise-std", type=float, default=1.0)
    p.add_argument("--min-duration", type=int, default=2)
    p.add_argument("--max-duration", type=int, default=6)
    p.add_argument("--snr-db", type=float, default=None)
    p.add_argument(
        "--confusable", action="append", metavar="A:B:DIST",
        help="place phone B's state means DIST from phone A's (repeatable)",
    )
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="CE pretraining or MSCE fine-tuning")
    _add_commands(p)
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--stage", choices=("ce", "msce"), default="ce")
    p.add_argument("--init", help="initial checkpoint (required for msce)")
    p.add_argument("--epochs", type=int, default=8)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--strategy", choices=tr.STRATEGIES, default="HS")
    p.add_argument("--n-confusers", type=int, default=4)
    p.add_argument("--beta-mix", type=float, default=0.8)
    p.add_argument("--xi", type=float, default=1.0)
    p.add_argument("--alpha-shift", type=float, default=0.0)
    p.add_argument("--checkpoint-every", type=int, default=1)
    p.add_argument("--average-last-k", type=int, default=3)
    p.add_argument("--toy-model", action="store_true", help="use the small toy network")
    p.add_argument("--num-blocks", type=int, default=16)
    p.add_argument("--kernel-size", type=int, default=3)
    p.add_argument("--channels", type=int, default=128)
    p.add_argument("--dilations", default=None, help="comma-separated, one per block")
    p.add_argument("--causal-blocks", default="6,7,8,9")
    p.add_argument("--dropout-rate", type=float, default=0.1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="FRR/FAR/confusion report at one threshold")
    _add_commands(p)
    _add_common(p)
    _add_decoder(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--threshold", type=float, default=DecoderConfig.trigger_threshold)
    p.add_argument("--sweep-steps", type=int, default=200)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("roc", help="threshold sweep to CSV")
    _add_commands(p)
    _add_common(p)
    _add_decoder(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--theta-min", type=float, required=True)
    p.add_argument("--theta-max", type=float, required=True)
    p.add_argument("--steps", type=int, default=20)
    p.set_defaults(func=cmd_roc)

    p = sub.add_parser("compare", help="relative gains of report B over report A")
    p.add_argument("report_a")
    p.add_argument("report_b")
    p.add_argument("--far-points", type=_csv_floats, default=DEFAULT_FAR_POINTS)
    p.add_argument("--out", default=None)
    p.add_argument("--config", help="JSON file whose keys override flags")
    p.set_defaults(func=cmd_compare)
    return ap


def apply_config_file(args):
    path = getattr(args, "config", None)
    if not path:
        return args
    with open(path, encoding="utf-8") as fh:
        overrides = json.load(fh)
    for key, value in overrides.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise UsageError(f"unknown option in {path}: {key}")
        setattr(args, attr, value)
    return args


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        apply_config_file(args)
        return args.func(args)
    except UsageError as e:
        print(f"msce-scr {args.command}: {e}", file=sys.stderr)
        return 2
    except (lx.LexiconError, lx.ConfigError, GraphError, corpus.CorpusError,
            M.ModelError, M.CheckpointError, tr.TrainError, EvalError, OSError) as e:
        print(f"msce-scr {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
