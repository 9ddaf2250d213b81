"""Command-line entry point.

Exit codes: 0 success, 1 check failure, 2 usage/config error, 3 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .checkpoint import CheckpointError, load_checkpoint_full
from .config import load_run_config
from .data import (Vocab, build_vocab, decode_ids, detokenize, encode_sentence, read_lines,
                   tokenize)
from .metrics import corpus_bleu
from .model import ConfigError, build_model, count_params, greedy_decode_batch, param_breakdown
from .verify import COMPONENTS, gradcheck_component

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3
RUN_DIR_ENV = "GATEDFORMER_RUN_DIR"

log = logging.getLogger("gatedformer")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _read(path) -> list[str]:
    try:
        return read_lines(path)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror or exc}", EXIT_IO) from None
    except UnicodeDecodeError as exc:
        raise CliError(f"{path} is not valid UTF-8: {exc}", EXIT_IO) from None


def cmd_build_vocab(args) -> int:
    src_lines, tgt_lines = _read(args.src_file), _read(args.tgt_file)
    if len(src_lines) != len(tgt_lines):
        raise CliError(f"{args.src_file} has {len(src_lines)} lines, {args.tgt_file} has "
                       f"{len(tgt_lines)}", EXIT_USAGE)
    n_train = len(src_lines) - int(len(src_lines) * args.holdout)
    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create {out}: {exc.strerror}", EXIT_IO) from None
    for side, lines in (("src", src_lines), ("tgt", tgt_lines)):
        vocab = build_vocab(lines[:n_train], args.min_freq)
        try:
            vocab.save(out / f"{side}.vocab")
        except OSError as exc:
            raise CliError(f"cannot write {out / f'{side}.vocab'}: {exc.strerror}", EXIT_IO) from None
        held = [tok for line in lines[n_train:] for tok in tokenize(line)]
        oov = (f"{sum(vocab.id(t) == 1 for t in held) / len(held):.4f}" if held else "n/a")
        print(f"{side}: size={len(vocab)} train_lines={n_train} "
              f"heldout_lines={len(lines) - n_train} heldout_oov_rate={oov}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .train import TrainingError, train

    run = load_run_config(args.config)
    run_dir = os.environ.get(RUN_DIR_ENV) or args.run_dir or (run.train and run.train.run_dir)
    if not run_dir:
        raise CliError(f"no run directory: set train.run_dir, --run-dir or ${RUN_DIR_ENV}", EXIT_USAGE)
    try:
        result = train(run, run_dir, Path(args.resume) if args.resume else None, progress=True)
    except TrainingError as exc:
        raise CliError(f"training aborted: {exc}", EXIT_CHECK) from None
    if result.dropped:
        print(f"dropped {result.dropped} over-length training pairs")
    if result.evals:
        step, val_loss, acc = result.evals[-1]
        print(f"step {step}: val_loss={val_loss:.6f} val_token_acc={acc:.6f}")
    print(f"params={count_params(result.model)} run_dir={run_dir}")
    return EXIT_OK


def cmd_params(args) -> int:
    run = load_run_config(args.config)
    model = build_model(run.model_config())
    report = param_breakdown(model)
    if args.json:
        print(json.dumps(report, indent=2))
        return EXIT_OK
    cfg = model.cfg
    print(f"variant: eau={cfg.use_eau} grc={cfg.use_grc}  l={cfg.num_layers} n={cfg.max_seq_len} "
          f"k={cfg.model_dim} f={cfg.ffn_dim}  V_src={cfg.src_vocab_size} V_tgt={cfg.tgt_vocab_size}")
    print(f"embeddings      {report['embeddings']:>12,}")
    for i, n in enumerate(report["encoder_layers"]):
        print(f"encoder[{i}]      {n:>12,}")
    for i, n in enumerate(report["decoder_layers"]):
        print(f"decoder[{i}]      {n:>12,}")
    print(f"generator       {report['generator']:>12,}")
    print(f"  of which EAU  {report['eau_total']:>12,}")
    print(f"  of which GRC  {report['grc_total']:>12,}")
    print(f"total           {report['total']:>12,}")
    return EXIT_OK


def _load_for_inference(path, src_vocab=None, tgt_vocab=None):
    try:
        model, header, _ = load_checkpoint_full(path)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}", EXIT_IO) from None
    vocabs = header.get("vocab", {})
    src = Vocab.load(src_vocab) if src_vocab else (Vocab(vocabs["src"]) if "src" in vocabs else None)
    tgt = Vocab.load(tgt_vocab) if tgt_vocab else (Vocab(vocabs["tgt"]) if "tgt" in vocabs else None)
    if src is None or tgt is None:
        raise CliError(f"{path} carries no vocabulary; pass --src-vocab/--tgt-vocab", EXIT_USAGE)
    if len(src) != model.cfg.src_vocab_size or len(tgt) != model.cfg.tgt_vocab_size:
        raise CliError(f"vocabulary sizes {len(src)}/{len(tgt)} do not match checkpoint "
                       f"{model.cfg.src_vocab_size}/{model.cfg.tgt_vocab_size}", EXIT_USAGE)
    return model, src, tgt


def translate_lines(model, src_vocab, tgt_vocab, lines, max_len=None, batch_size=64) -> list[str]:
    """Greedy translation, one detokenized line per input line."""
    max_len = max_len or model.cfg.max_seq_len
    limit = model.cfg.max_seq_len - 2
    out = []
    for start in range(0, len(lines), batch_size):
        chunk = [encode_sentence(src_vocab, tokenize(line)[:limit]) for line in lines[start:start + batch_size]]
        for ids in greedy_decode_batch(model, chunk, max_len):
            out.append(detokenize(decode_ids(tgt_vocab, ids)))
    return out


def cmd_translate(args) -> int:
    model, src, tgt = _load_for_inference(args.checkpoint, args.src_vocab, args.tgt_vocab)
    lines = _read(args.input_file)
    text = "".join(line + "\n" for line in translate_lines(model, src, tgt, lines, args.max_len))
    if args.output:
        try:
            Path(args.output).write_text(text, encoding="utf-8")
        except OSError as exc:
            raise CliError(f"cannot write {args.output}: {exc.strerror}", EXIT_IO) from None
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    refs = _read(args.ref_file)
    if args.hyp_file:
        hyps = _read(args.hyp_file)
    elif args.checkpoint and args.src_file:
        model, src, tgt = _load_for_inference(args.checkpoint, args.src_vocab, args.tgt_vocab)
        src_lines = _read(args.src_file)
        if len(src_lines) != len(refs):
            raise CliError(f"{args.src_file} has {len(src_lines)} lines, {args.ref_file} has "
                           f"{len(refs)}", EXIT_USAGE)
        hyps = translate_lines(model, src, tgt, src_lines)
    else:
        raise CliError("evaluate needs --hyp, or --checkpoint with --src", EXIT_USAGE)
    if len(hyps) != len(refs):
        raise CliError(f"{len(hyps)} hypotheses but {len(refs)} references", EXIT_USAGE)
    if not refs:
        raise CliError("nothing to evaluate: empty files", EXIT_USAGE)
    report = corpus_bleu([tokenize(h) for h in hyps], [tokenize(r) for r in refs])
    if args.json:
        print(json.dumps({"bleu": report.bleu, "precisions": list(report.precisions),
                          "brevity_penalty": report.brevity_penalty,
                          "candidate_len": report.candidate_len,
                          "reference_len": report.reference_len}))
    else:
        print(report.format())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    names = COMPONENTS if args.component == "all" else (args.component,)
    reports = [gradcheck_component(c, args.seed, args.tolerance) for c in names]
    for r in reports:
        print("\n".join(r.lines()))
    passed = all(r.passed for r in reports)
    print(f"overall: {'PASS' if passed else 'FAIL'} ({sum(r.passed for r in reports)}/{len(reports)})")
    if args.json:
        payload = {"passed": passed, "reports": [r.to_dict() for r in reports]}
        try:
            Path(args.json).write_text(json.dumps(payload, indent=2) + "\n")
        except OSError as exc:
            raise CliError(f"cannot write {args.json}: {exc.strerror}", EXIT_IO) from None
    return EXIT_OK if passed else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gatedformer", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-vocab", help="build source/target vocabulary files")
    p.add_argument("src_file")
    p.add_argument("tgt_file")
    p.add_argument("--min-freq", type=int, default=2)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--holdout", type=float, default=0.1,
                   help="trailing fraction of lines kept out of the vocabulary for the OOV report")
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("train", help="train a model from a JSON run config")
    p.add_argument("config")
    p.add_argument("--run-dir", help=f"output directory (overridden by ${RUN_DIR_ENV})")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="greedy-decode each line of a file")
    p.add_argument("checkpoint")
    p.add_argument("input_file")
    p.add_argument("-o", "--output")
    p.add_argument("--max-len", type=int)
    p.add_argument("--src-vocab")
    p.add_argument("--tgt-vocab")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("evaluate", help="corpus BLEU of hypotheses or of a checkpoint's translations")
    p.add_argument("--ref", dest="ref_file", required=True)
    p.add_argument("--hyp", dest="hyp_file")
    p.add_argument("--checkpoint")
    p.add_argument("--src", dest="src_file")
    p.add_argument("--src-vocab")
    p.add_argument("--tgt-vocab")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("params", help="count learnable parameters for a config")
    p.add_argument("config")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("component", choices=(*COMPONENTS, "all"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--json", help="write the machine-readable report here")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, CheckpointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
