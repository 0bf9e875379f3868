"""Command-line entry point: synth, prepare, train, eval, check.

Exit codes: 0 success, 1 usage/configuration error, 2 data error,
3 numeric failure. Every emitted artifact records the invoking command line
and seed for provenance, and identical invocations produce byte-identical
outputs.
"""

import argparse
import sys
from pathlib import Path

from . import checks, data, evaluation, training
from .errors import ConfigError, CrossRecError, DataError, NumericError

__all__ = ["main", "build_parser"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    """argparse variant honoring the exit-code contract (usage errors -> 1)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="crossrec",
                     description="Cross-domain recommendation with hierarchical "
                                 "subspace disentanglement and flow-based transport.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_synth = sub.add_parser("synth", help="generate a two-domain synthetic dataset "
                                           "with known ground-truth latents")
    p_synth.add_argument("--users", type=int, default=100, help="users per domain")
    p_synth.add_argument("--overlap", type=int, default=50, help="overlapped users")
    p_synth.add_argument("--items", type=int, default=80, help="items per domain")
    p_synth.add_argument("--d-shared", type=int, default=4)
    p_synth.add_argument("--d-variant", type=int, default=2)
    p_synth.add_argument("--map", choices=("affine", "monotone"), default="affine",
                         help="family of the variant-factor map between domains")
    p_synth.add_argument("--map-scale", type=float, default=1.0)
    p_synth.add_argument("--map-shift", type=float, default=0.0)
    p_synth.add_argument("--shared-weight", type=float, default=1.0,
                         help="correlation knob: weight of shared dims in the "
                              "interaction logits")
    p_synth.add_argument("--variant-weight", type=float, default=1.0)
    p_synth.add_argument("--temperature", type=float, default=1.0)
    p_synth.add_argument("--bias", type=float, default=1.2,
                         help="logit offset controlling edge density")
    p_synth.add_argument("--noise", type=float, default=0.0)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("-o", "--outdir", required=True)

    p_prep = sub.add_parser("prepare", help="build a leave-one-out split manifest")
    p_prep.add_argument("--domain-x", required=True, help="interaction file, domain X")
    p_prep.add_argument("--domain-y", required=True, help="interaction file, domain Y")
    p_prep.add_argument("--ratios", type=float, nargs=3, default=(0.6, 0.2, 0.2),
                        metavar=("TRAIN", "TEST", "VAL"))
    p_prep.add_argument("--negatives", type=int, default=999,
                        help="sampled negatives per query")
    p_prep.add_argument("--non-overlap", action="store_true",
                        help="exclude every overlapped user from training")
    p_prep.add_argument("--seed", type=int, default=0)
    p_prep.add_argument("-o", "--output", required=True, help="split manifest path")

    p_train = sub.add_parser("train", help="fit the model on a prepared split")
    p_train.add_argument("--config", required=True, help="key = value config file")
    p_train.add_argument("--domain-x", required=True)
    p_train.add_argument("--domain-y", required=True)
    p_train.add_argument("--split", required=True, help="split manifest path")
    p_train.add_argument("--direction", choices=("xy", "yx", "both"),
                         help="override the config's transfer direction")
    p_train.add_argument("--variant", choices=("full", "A", "B", "C", "D"),
                         help="override the config's ablation variant")
    p_train.add_argument("--seed", type=int, help="override the config's seed")
    p_train.add_argument("-o", "--outdir", required=True)

    p_eval = sub.add_parser("eval", help="score a checkpoint's held-out queries")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--domain-x", required=True)
    p_eval.add_argument("--domain-y", required=True)
    p_eval.add_argument("--split", required=True)
    p_eval.add_argument("--direction", choices=("xy", "yx"),
                        help="restrict to one stored direction")
    p_eval.add_argument("--which", choices=("test", "validation"), default="test")
    p_eval.add_argument("-o", "--outdir", required=True)

    p_check = sub.add_parser("check", help="run the numeric invariant suite")
    p_check.add_argument("--only", help="restrict to one check family "
                                        "(mmd, flow, metrics, grad)")
    p_check.add_argument("--inject-fault",
                         help="add a designed-to-fail check (for demonstration); "
                              "known value: mmd-inclusive-nullity")
    return parser


def _command_line() -> str:
    return "crossrec " + " ".join(sys.argv[1:])


def _load_domains(args):
    sx = data.load_interactions(args.domain_x, "x")
    sy = data.load_interactions(args.domain_y, "y")
    return {"x": sx, "y": sy}


def cmd_synth(args) -> int:
    try:
        config = data.SyntheticConfig(
            users_per_domain=args.users, overlap=args.overlap,
            items_per_domain=args.items, d_shared=args.d_shared,
            d_variant=args.d_variant, map_family=args.map,
            map_scale=args.map_scale, map_shift=args.map_shift,
            shared_weight=args.shared_weight, variant_weight=args.variant_weight,
            temperature=args.temperature, bias=args.bias, noise=args.noise)
        config.validate()
    except ValueError as exc:
        print(f"error: invalid synthetic config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    sx, sy, truth = data.generate_synthetic(config, seed=args.seed)
    paths = {
        "x": outdir / "domain_x.tsv",
        "y": outdir / "domain_y.tsv",
        "truth": outdir / "ground_truth.bin",
        "manifest": outdir / "synth_manifest.txt",
    }
    data.write_interactions(paths["x"], sx)
    data.write_interactions(paths["y"], sy)
    data.write_ground_truth(paths["truth"], truth, command=_command_line())
    with open(paths["manifest"], "w", encoding="utf-8") as fh:
        fh.write("# crossrec synthetic dataset manifest\n")
        fh.write(f"command = {_command_line()}\n")
        fh.write(f"seed = {args.seed}\n")
        for dom, s in (("x", sx), ("y", sy)):
            fh.write(f"users_{dom} = {s.n_users}\n")
            fh.write(f"items_{dom} = {s.n_items}\n")
            fh.write(f"edges_{dom} = {len(s.edges)}\n")
        fh.write(f"overlap = {config.overlap}\n")
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return EXIT_OK


def cmd_prepare(args) -> int:
    domains = _load_domains(args)
    split = data.split_overlapped(
        domains["x"], domains["y"], ratios=tuple(args.ratios), seed=args.seed,
        negatives=args.negatives, non_overlap=args.non_overlap)
    data.write_split_manifest(args.output, split, domains["x"], domains["y"],
                              command=_command_line())
    n_test = len(split.test_queries["x"])
    n_val = len(split.validation_queries["x"])
    print(f"wrote {args.output} ({split.scenario}; {n_test} test and {n_val} "
          f"validation users per domain)")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = training.parse_config_file(args.config)
    if args.direction:
        cfg.direction = args.direction
    if args.variant:
        cfg.variant = args.variant
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.validate()
    domains = _load_domains(args)
    split = data.load_split_manifest(args.split, domains["x"], domains["y"])
    if split.scenario != cfg.scenario:
        cfg.scenario = split.scenario
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    checkpoint, logs = training.fit(cfg, domains, split)
    ckpt_path = outdir / "checkpoint.bin"
    training.save_checkpoint(checkpoint, ckpt_path)
    emitted = [str(ckpt_path)]
    for direction, rows in logs.items():
        log_path = outdir / f"train_log_{direction}.tsv"
        with open(log_path, "w", encoding="utf-8") as fh:
            fh.write(f"# command = {_command_line()}\n# seed = {cfg.seed}\n")
            fh.write(training.format_log_rows(rows))
        emitted.append(str(log_path))
    for direction in checkpoint.models:
        best = checkpoint.best_epoch[direction]
        mrr = checkpoint.best_val_mrr[direction]
        print(f"direction {direction}: best epoch {best}, validation MRR {mrr:.4f}")
    print(f"wrote {', '.join(emitted)}")
    return EXIT_OK


def cmd_eval(args) -> int:
    checkpoint = training.load_checkpoint(args.checkpoint)
    domains = _load_domains(args)
    split = data.load_split_manifest(args.split, domains["x"], domains["y"])
    directions = ([args.direction] if args.direction
                  else sorted(checkpoint.models))
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    graphs = training.build_graphs(domains, split,
                                   checkpoint.config.normalization, "context")
    emitted = []
    for direction in directions:
        if direction not in checkpoint.models:
            raise DataError(f"checkpoint has no direction {direction!r}")
        model = checkpoint.models[direction]
        report = evaluation.evaluate(model, domains, split, graphs, which=args.which)
        path = outdir / f"metrics_{direction}_{args.which}.txt"
        evaluation.write_metrics_report(path, report, command=_command_line())
        emitted.append(str(path))
        print(f"direction {direction} ({args.which}): MRR {100 * report.mrr:.2f}% "
              f"HR@10 {100 * report.hr[10]:.2f}% over {report.query_count} queries")
    print(f"wrote {', '.join(emitted)}")
    return EXIT_OK


def cmd_check(args) -> int:
    try:
        passed, lines = checks.run_checks(only=args.only,
                                          inject_fault=args.inject_fault)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    for line in lines:
        print(line)
    if not passed:
        failed = [ln for ln in lines if ln.startswith("FAIL")]
        print(f"{len(failed)} check(s) failed", file=sys.stderr)
        return EXIT_NUMERIC
    print("all checks passed")
    return EXIT_OK


_COMMANDS = {
    "synth": cmd_synth,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "eval": cmd_eval,
    "check": cmd_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CrossRecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
