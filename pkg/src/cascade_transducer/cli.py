"""Command-line entry point.

Exit status: 0 success, 2 configuration error, 3 data error, 4 numeric
divergence, 1 anything else raised by the package.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from typing import Optional, Sequence

from .errors import CascadeError, ConfigError, DataError, DivergenceError, VocabularyError

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3, 4

TRAIN_KINDS = ("acoustic", "s2c", "lm", "character-baseline")
DECODE_MODES = ("baseline", "baseline+lm", "cascade")


def _config(args):
    from .config import load_config

    cfg = load_config(args.config, args.seed)
    train = cfg.train
    if getattr(args, "steps", None) is not None:
        train = dataclasses.replace(train, steps=args.steps)
        cfg = dataclasses.replace(cfg, train=train, s2c_steps=args.steps, lm_steps=args.steps)
    beam = cfg.beam
    if getattr(args, "beam", None) is not None:
        beam = dataclasses.replace(beam, beam_size=args.beam)
    if getattr(args, "lam", None) is not None:
        beam = dataclasses.replace(beam, lambda_=args.lam)
    if beam is not cfg.beam:
        from .decode import BeamConfig

        beam = BeamConfig(beam.beam_size, beam.lambda_, beam.max_symbols_per_step, beam.fusion_mode)
        cfg = dataclasses.replace(cfg, beam=beam)
    return cfg


def _vocab_prints(corpus) -> dict:
    return {"syllables": corpus.syllable_vocab.fingerprint(), "characters": corpus.char_vocab.fingerprint()}


def _roles(kind: str, corpus) -> dict:
    s, c = corpus.syllable_vocab.fingerprint(), corpus.char_vocab.fingerprint()
    return {"acoustic": {"output": s}, "character-baseline": {"output": c}, "s2c": {"input": s, "output": c},
            "lm": {"output": c}}[kind]


def _write_curve(losses, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, v in enumerate(losses, 1):
            fh.write(f"{i}\t{v:.6f}\n")


def cmd_gen_data(args) -> int:
    from .experiment import corpus_for
    from .records import write_corpus

    cfg = _config(args)
    corpus = corpus_for(cfg)
    try:
        write_corpus(corpus, args.out)
    except OSError as exc:
        raise DataError(f"cannot write corpus to {args.out}: {exc}") from None
    print(json.dumps(corpus.stats, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    from .checkpoint import save_model
    from .experiment import model_configs
    from .models import LanguageModel, TransducerModel
    from .records import read_corpus
    from .training import train_acoustic, train_character_baseline, train_lm, train_s2c
    from .data import TextPair

    cfg = _config(args)
    corpus = read_corpus(args.data)
    if args.kind != "s2c" and (args.conv or args.augment or args.self_fusion):
        raise ConfigError("--conv, --augment and --self-fusion apply to s2c training only")
    mcfg = _model_configs(cfg, corpus)
    text_pairs = list(corpus.text) + [TextPair(u.syllables, u.characters, "normal", u.utt_id) for u in corpus.paired]
    if args.kind == "acoustic":
        model = TransducerModel(mcfg["acoustic"])
        res = train_acoustic(model, corpus.paired, cfg.train, dev=corpus.dev)
    elif args.kind == "character-baseline":
        model = TransducerModel(mcfg["baseline"])
        res = train_character_baseline(model, corpus.paired, cfg.train, dev=corpus.dev)
    elif args.kind == "lm":
        model = LanguageModel(mcfg["lm"])
        res = train_lm(model, [p.characters for p in text_pairs], dataclasses.replace(cfg.train, steps=cfg.lm_steps))
    else:
        key = "E3" if args.self_fusion else ("E1" if args.conv else "E0")
        mc = mcfg["s2c"][key]
        if args.self_fusion and not args.conv:
            mc = dataclasses.replace(mc, conv_kernel=0)
        model = TransducerModel(mc)
        res = train_s2c(model, text_pairs, dataclasses.replace(cfg.train, steps=cfg.s2c_steps), augment=args.augment,
                        n_syllables=len(corpus.syllable_vocab) - 4)
    save_model(model, args.out, vocabs=_roles(args.kind, corpus), extra={"kind": args.kind, "seed": cfg.seed})
    _write_curve(res.losses, args.out + ".loss.tsv")
    if res.dev is not None:
        print(f"dev {res.dev.format()}")
    return EXIT_OK


def _model_configs(cfg, corpus) -> dict:
    from .experiment import model_configs

    return model_configs(cfg, corpus)


def _load(path: str, kind: Optional[str] = None):
    from .checkpoint import load_model

    if not path:
        raise ConfigError("missing checkpoint path")
    model, header = load_model(path)
    if kind is not None and getattr(model, "kind", "lm") != kind:
        raise ConfigError(f"{path} holds a {getattr(model, 'kind', 'lm')} model, expected {kind}")
    return model, header


def cmd_finetune_correction(args) -> int:
    from .checkpoint import check_vocab, save_model
    from .data import TextPair, build_correction_set
    from .records import read_corpus
    from .training import finetune_with_correction

    cfg = _config(args)
    corpus = read_corpus(args.data)
    acoustic, ah = _load(args.acoustic, "acoustic")
    s2c, sh = _load(args.s2c, "s2c")
    check_vocab(ah, "output", corpus.syllable_vocab.fingerprint())
    check_vocab(sh, "input", corpus.syllable_vocab.fingerprint())
    check_vocab(sh, "output", corpus.char_vocab.fingerprint())
    normal = list(corpus.text) + [TextPair(u.syllables, u.characters, "normal", u.utt_id) for u in corpus.paired]
    correction = build_correction_set(acoustic, corpus.paired, cfg.beam.max_symbols_per_step)
    res = finetune_with_correction(s2c, normal, correction, cfg.train, augment=args.augment,
                                   n_syllables=len(corpus.syllable_vocab) - 4)
    save_model(s2c, args.out, vocabs=sh.get("vocabs"), extra={"kind": "s2c", "finetuned": True, "seed": cfg.seed})
    _write_curve(res.losses, args.out + ".loss.tsv")
    print(f"correction pairs {len(correction)}")
    return EXIT_OK


def _inputs(args, corpus):
    from .records import read_records

    if args.input:
        return read_records(args.input, corpus.syllable_vocab, corpus.char_vocab, need_features=True)
    return getattr(corpus, args.split)


def cmd_decode(args) -> int:
    from .checkpoint import check_vocab
    from .decode import BeamConfig, beam_search, cascade_decode, greedy_decode
    from .records import read_corpus, write_transcripts

    cfg = _config(args)
    corpus = read_corpus(args.data)
    utts = _inputs(args, corpus)
    ms = cfg.beam.max_symbols_per_step
    cv = corpus.char_vocab
    rows, nbest_rows = [], []
    if args.mode in ("baseline", "baseline+lm"):
        model, header = _load(args.model, "acoustic")
        check_vocab(header, "output", cv.fingerprint())
        lm = None
        mode = "none"
        if args.mode == "baseline+lm":
            lm, lh = _load(args.lm)
            check_vocab(lh, "output", cv.fingerprint())
            mode = "external_lm"
        bc = BeamConfig(cfg.beam.beam_size, cfg.beam.lambda_, ms, mode)
        for u in utts:
            hyps = beam_search(model, u.features, bc, lm)
            rows.append((u.utt_id, cv.decode(hyps[0].tokens), hyps[0].fused_score))
            nbest_rows.append((u.utt_id, hyps))
    else:
        acoustic, ah = _load(args.acoustic, "acoustic")
        s2c, sh = _load(args.s2c, "s2c")
        check_vocab(ah, "output", corpus.syllable_vocab.fingerprint())
        check_vocab(sh, "input", corpus.syllable_vocab.fingerprint())
        check_vocab(sh, "output", cv.fingerprint())
        mode = "self_fusion" if s2c.lm_head is not None else "none"
        bc = BeamConfig(cfg.beam.beam_size, cfg.beam.lambda_, ms, mode)
        for u in utts:
            syl = greedy_decode(acoustic, u.features, ms)
            hyps = beam_search(s2c, syl, bc) if syl else []
            best = hyps[0] if hyps else None
            rows.append((u.utt_id, cv.decode(best.tokens) if best else [], best.fused_score if best else 0.0))
            nbest_rows.append((u.utt_id, hyps))
    out = args.out or "-"
    if out == "-":
        for utt_id, toks, score in rows:
            sys.stdout.write(f"{utt_id}\t{' '.join(toks)}\t{score:.6f}\n")
    else:
        write_transcripts(rows, out)
        if args.nbest:
            with open(out + ".nbest", "w", encoding="utf-8", newline="\n") as fh:
                for utt_id, hyps in nbest_rows:
                    for rank, h in enumerate(hyps[:args.nbest], 1):
                        fh.write(f"{utt_id}\t{rank}\t{' '.join(cv.decode(h.tokens))}\t{h.fused_score:.6f}\n")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import corpus_report
    from .records import read_transcripts

    refs = read_transcripts(args.ref)
    hyps = read_transcripts(args.hyp)
    missing = sorted(set(refs) - set(hyps))
    if missing:
        raise DataError(f"hypotheses missing for {len(missing)} utterance(s), e.g. {missing[0]}")
    if not refs:
        raise DataError("no reference records")
    report = corpus_report((refs[k], hyps[k]) for k in sorted(refs))
    print(f"CER (D/I/S)  {report.format()}")
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(report.to_record(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return EXIT_OK


def cmd_experiment(args) -> int:
    from .experiment import run_experiment

    cfg = _config(args)
    out = args.out or cfg.out_dir
    report = run_experiment(cfg, out_dir=out, progress=lambda m: logging.getLogger(__name__).info(m))
    sys.stdout.write(report.render())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cascade-transducer", description="Syllable-to-character cascade transducers.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=False):
        sp.add_argument("--config", help="YAML experiment config")
        sp.add_argument("--seed", type=int, help="overrides the config and CASCADE_SEED")
        sp.add_argument("--out", required=out_required)

    sp = sub.add_parser("gen-data", help="generate the toy corpus")
    common(sp, True)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="train one model")
    sp.add_argument("kind", choices=TRAIN_KINDS)
    sp.add_argument("--data", required=True)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--conv", action="store_true", help="s2c: causal conv front-end")
    sp.add_argument("--augment", action="store_true", help="s2c: random syllable substitution")
    sp.add_argument("--self-fusion", action="store_true", help="s2c: LM head trained for self fusion")
    common(sp, True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("finetune-correction", help="finetune an s2c model on recognised syllables")
    sp.add_argument("--acoustic", required=True)
    sp.add_argument("--s2c", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--augment", action="store_true")
    common(sp, True)
    sp.set_defaults(func=cmd_finetune_correction)

    sp = sub.add_parser("decode", help="decode a split or record file")
    sp.add_argument("mode", choices=DECODE_MODES)
    sp.add_argument("--data", required=True)
    sp.add_argument("--split", default="test_novel", choices=("dev", "test_matched", "test_novel", "paired"))
    sp.add_argument("--input", help="corpus record file with feature references")
    sp.add_argument("--model", help="character baseline checkpoint")
    sp.add_argument("--lm", help="external LM checkpoint")
    sp.add_argument("--acoustic")
    sp.add_argument("--s2c")
    sp.add_argument("--beam", type=int)
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.add_argument("--nbest", type=int, default=0)
    common(sp)
    sp.set_defaults(func=cmd_decode)

    sp = sub.add_parser("eval", help="score hypotheses against references")
    sp.add_argument("--ref", required=True)
    sp.add_argument("--hyp", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("experiment", help="run the whole ladder")
    sp.add_argument("--beam", type=int)
    sp.add_argument("--lambda", dest="lam", type=float)
    common(sp)
    sp.set_defaults(func=cmd_experiment)
    return p


def exit_code(exc: BaseException) -> int:
    from .experiment import StageError

    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, DivergenceError):
        return EXIT_DIVERGED
    if isinstance(exc, (DataError, VocabularyError)):
        return EXIT_DATA
    return EXIT_OTHER


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CascadeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code(exc)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
