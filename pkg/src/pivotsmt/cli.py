"""``pivotsmt`` command line: one subcommand per operation plus ``run --config``.

Text inputs default to standard input and outputs to standard output. Segmented
text is one sentence per line with units separated by spaces.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .align import AlignmentMatrix, align_bitext, check_bitext
from .decoder import Decoder, FeatureWeights, tune_weights
from .evalmetrics import bleu, bootstrap_significance, lebleu
from .experiment import ExperimentConfig, StageError, run_experiment
from .ngramlm import NGramLM, train_lm
from .phrasetab import PRUNE_FLOOR, PhraseTable, extract_phrases, score_phrases, table_size_ratio
from .pivot import InterpolationSpec, PipelineConfig, TriangulationJob, interpolate, pipeline_translate, triangulate
from .synthlang import SynthLangSpec, default_family_spec, generate_family
from .textseg import (
    DEFAULT_MARKER,
    SCHEMES,
    BpeModel,
    Segmenter,
    desegment,
    load_profile,
    os_vocab_size,
    train_bpe,
    train_bpe_matching,
)


def read_lines(path) -> list:
    if path in (None, "-"):
        return sys.stdin.read().splitlines()
    return Path(path).read_text(encoding="utf-8").splitlines()


def write_lines(path, lines) -> None:
    text = "".join(l + "\n" for l in lines)
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def read_units(path) -> list:
    return [line.split() for line in read_lines(path)]


def write_lex(path, table) -> None:
    write_lines(path, [f"{s} {t} {p:.10g}" for (s, t), p in sorted(table.probs.items())])


def read_lex(path) -> dict:
    out = {}
    for line in read_lines(path):
        s, t, p = line.split()
        out[(s, t)] = float(p)
    return out


def load_system(path, pop_limit=1000, table_limit=20):
    """A system directory: ``system.json`` naming its table, LM, weights and segmenters."""
    d = Path(path)
    meta = json.loads((d / "system.json").read_text())

    def seg(key):
        bpe = meta.get(key)
        return Segmenter("bpe", bpe_model=BpeModel.load(d / bpe)) if bpe else Segmenter(meta["scheme"])

    table = PhraseTable.read(d / meta["table"])
    lm = NGramLM.read_arpa(d / meta["lm"])
    w = FeatureWeights.load(d / meta["weights"]) if (d / meta["weights"]).exists() else FeatureWeights()
    return Decoder(table, lm, w, pop_limit=pop_limit, table_limit=table_limit), seg("src_bpe"), seg("tgt_bpe")


# ---------------------------------------------------------------------------
# subcommands


def cmd_segment(a):
    kw = {"marker": a.marker}
    if a.profile:
        kw["profile"] = load_profile(a.profile)
    if a.bpe_model:
        kw["bpe_model"] = BpeModel.load(a.bpe_model)
    seg = Segmenter(a.scheme, **kw)
    write_lines(a.output, [" ".join(seg(line).units) for line in read_lines(a.input)])


def cmd_desegment(a):
    write_lines(a.output, [desegment(line.split(), a.marker, a.scheme) for line in read_lines(a.input)])


def cmd_train_bpe(a):
    corpus = read_lines(a.input)
    if a.match_os_vocab:
        model = train_bpe_matching(corpus, os_vocab_size(corpus, load_profile(a.profile) if a.profile else None))
    else:
        model = train_bpe(corpus, a.merges)
    model.save(a.out)
    print(f"merges={model.num_merges}")


def cmd_os_vocab_size(a):
    print(f"os_vocab_size={os_vocab_size(read_lines(a.input), load_profile(a.profile) if a.profile else None)}")


def cmd_train_align(a):
    src, tgt = read_units(a.src), read_units(a.tgt)
    fwd_t, rev_t, fwd, rev, sym = align_bitext(src, tgt, a.iters)
    for path, als in ((a.out_fwd, fwd), (a.out_rev, rev), (a.out_sym, sym)):
        if path:
            write_lines(path, [m.to_moses() for m in als])
    if a.out_lex:
        write_lex(a.out_lex + ".s2t", fwd_t)
        write_lex(a.out_lex + ".t2s", rev_t)


def cmd_extract_phrases(a):
    src, tgt, al = read_units(a.src), read_units(a.tgt), read_lines(a.align)
    check_bitext(src, tgt)
    check_bitext(src, al)
    aligns = [AlignmentMatrix.from_moses(l, len(s), len(t)) for l, s, t in zip(al, src, tgt)]
    out = []
    for s, t, links in extract_phrases(zip(src, tgt), aligns, a.max_len):
        out.append(f"{' '.join(s)} ||| {' '.join(t)} ||| {' '.join(f'{i}-{j}' for i, j in links)}")
    write_lines(a.out, out)


def cmd_score_phrases(a):
    def pairs():
        for line in read_lines(a.extract):
            s, t, links = [p.strip() for p in line.split("|||")]
            yield s.split(), t.split(), tuple(tuple(int(x) for x in l.split("-")) for l in links.split())

    fwd = read_lex(a.lex_fwd) if a.lex_fwd else None
    rev = read_lex(a.lex_rev) if a.lex_rev else None
    meta = {"scheme": a.scheme} if a.scheme else {}
    score_phrases(pairs(), fwd, rev, a.prune, meta).write(a.out)


def cmd_table_stats(a):
    table = PhraseTable.read(a.table)
    for k, v in table.stats().items():
        print(f"{k}={v}")
    if a.sp and a.pt:
        print(f"ratio={table_size_ratio(table, PhraseTable.read(a.sp), PhraseTable.read(a.pt)):.6f}")


def cmd_train_lm(a):
    train_lm(read_units(a.input), a.order).write_arpa(a.out)


def cmd_perplexity(a):
    print(f"perplexity={NGramLM.read_arpa(a.lm).perplexity(read_units(a.input)):.6f}")


def cmd_decode(a):
    table, lm = PhraseTable.read(a.table), NGramLM.read_arpa(a.lm)
    w = FeatureWeights.load(a.weights) if a.weights else FeatureWeights()
    dec = Decoder(table, lm, w, pop_limit=a.pop_limit or None, table_limit=a.table_limit or None)
    out = []
    for sid, units in enumerate(read_units(a.input)):
        nb = dec.decode(units, a.nbest)
        out.extend(nb.to_lines(sid) if a.nbest > 1 else [" ".join(nb.best.units) if nb.best else ""])
    write_lines(a.output, out)


def cmd_tune(a):
    table, lm = PhraseTable.read(a.table), NGramLM.read_arpa(a.lm)
    init = FeatureWeights.load(a.weights) if a.weights else FeatureWeights()
    dec = Decoder(table, lm, init, pop_limit=a.pop_limit or None, table_limit=a.table_limit or None)
    scheme = a.scheme or table.scheme or "word"
    w = tune_weights(
        read_units(a.dev_src), read_lines(a.dev_ref), init, dec,
        lambda u: desegment(u, a.marker, scheme), iterations=a.iterations,
    )
    w.save(a.out)


def cmd_triangulate(a):
    sp, pt = PhraseTable.read(a.sp), PhraseTable.read(a.pt)
    src_filter = {tuple(l.split()) for l in read_lines(a.filter)} if a.filter else None
    job = TriangulationJob(sp, pt, prune_floor=a.prune, output_limit=a.limit or None)
    tri = triangulate(job, src_filter)
    tri.write(a.out)
    print(f"entries={len(tri)}\nratio={table_size_ratio(tri, sp, pt):.6f}")


def cmd_pipeline(a):
    limits = (a.pop_limit or None, a.table_limit or None)
    sp, sp_src, sp_tgt = load_system(a.sp_sys, *limits)
    pt, pt_src, pt_tgt = load_system(a.pt_sys, *limits)
    same = sp_tgt.scheme == pt_src.scheme and sp_tgt.bpe_model == pt_src.bpe_model
    reseg = None if same else (lambda u: pt_src(sp_tgt.desegment(u)).units)
    cfg = PipelineConfig(sp, pt, k=a.k, resegment=reseg)
    out = []
    for line in read_lines(a.input):
        best = pipeline_translate(sp_src(line).units, cfg).best
        out.append(pt_tgt.desegment(best.units if best else ()))
    write_lines(a.output, out)


def cmd_interpolate(a):
    tables = [PhraseTable.read(p) for p in a.tables.split(",")]
    alphas = [float(x) for x in a.alphas.split(",")] if a.alphas else [1.0 / len(tables)] * len(tables)
    interpolate(InterpolationSpec(tables, alphas)).write(a.out)


def cmd_evaluate(a):
    cand, ref = read_lines(a.cand), read_lines(a.ref)
    if a.metric == "bleu":
        print(f"bleu={bleu(cand, ref):.4f}")
    else:
        print(f"lebleu={lebleu(cand, ref, a.threshold):.6f}")


def cmd_significance(a):
    rep = bootstrap_significance(read_lines(a.sysA), read_lines(a.sysB), read_lines(a.ref), a.resamples, a.seed)
    sys.stdout.write(rep.to_kv())


def cmd_synth(a):
    if a.spec:
        spec = SynthLangSpec.load(a.spec)
    else:
        spec = default_family_spec(a.languages, a.cognate_rate, a.seed)
    for p in generate_family(spec, a.sentences).write(a.out_dir):
        print(p)


def cmd_run(a):
    cfg = ExperimentConfig.load(a.config)
    if a.output_dir:
        cfg.output_dir = a.output_dir
    report = run_experiment(cfg)
    sys.stdout.write(report.text())
    sys.stdout.write(report.kv())


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pivotsmt", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"pivotsmt {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def cmd(name, fn, help, io=False):
        sp = sub.add_parser(name, help=help)
        sp.set_defaults(fn=fn)
        if io:
            sp.add_argument("input", nargs="?", default="-")
            sp.add_argument("-o", "--output", default="-")
        return sp

    s = cmd("segment", cmd_segment, "split text into units", io=True)
    s.add_argument("--scheme", choices=SCHEMES, required=True)
    s.add_argument("--profile", help="script profile name or JSON file")
    s.add_argument("--bpe-model")
    s.add_argument("--marker", default=DEFAULT_MARKER)

    s = cmd("desegment", cmd_desegment, "join units back into words", io=True)
    s.add_argument("--marker", default=DEFAULT_MARKER)
    s.add_argument("--scheme", choices=SCHEMES)

    s = cmd("train-bpe", cmd_train_bpe, "learn BPE merges", io=True)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--merges", type=int)
    g.add_argument("--match-os-vocab", action="store_true", help="stop at the OS vocabulary size")
    s.add_argument("--profile")
    s.add_argument("--out", required=True)

    s = cmd("os-vocab-size", cmd_os_vocab_size, "count distinct OS units", io=True)
    s.add_argument("--profile")

    s = cmd("train-align", cmd_train_align, "IBM Model 1 both ways plus symmetrization")
    s.add_argument("--src", required=True)
    s.add_argument("--tgt", required=True)
    s.add_argument("--iters", type=int, default=5)
    s.add_argument("--out-fwd")
    s.add_argument("--out-rev")
    s.add_argument("--out-sym", required=True)
    s.add_argument("--out-lex", help="prefix for lexical tables (.s2t, .t2s)")

    s = cmd("extract-phrases", cmd_extract_phrases, "consistent phrase pairs from aligned text")
    s.add_argument("--src", required=True)
    s.add_argument("--tgt", required=True)
    s.add_argument("--align", required=True)
    s.add_argument("--max-len", type=int, default=7)
    s.add_argument("--out", default="-")

    s = cmd("score-phrases", cmd_score_phrases, "score extracted pairs into a phrase table")
    s.add_argument("--extract", required=True)
    s.add_argument("--lex-fwd")
    s.add_argument("--lex-rev")
    s.add_argument("--prune", type=float, default=PRUNE_FLOOR)
    s.add_argument("--scheme", choices=SCHEMES)
    s.add_argument("--out", required=True)

    s = cmd("table-stats", cmd_table_stats, "entry counts, vocabulary sizes, size ratio")
    s.add_argument("table")
    s.add_argument("--sp", help="source-pivot component, for the size ratio")
    s.add_argument("--pt", help="pivot-target component, for the size ratio")

    s = cmd("train-lm", cmd_train_lm, "Kneser-Ney n-gram LM", io=True)
    s.add_argument("--order", type=int, required=True)
    s.add_argument("--out", required=True)

    s = cmd("perplexity", cmd_perplexity, "LM perplexity of a text", io=True)
    s.add_argument("--lm", required=True)

    for name, fn, hlp in (("decode", cmd_decode, "translate segmented text"), ("tune", cmd_tune, "tune feature weights")):
        s = cmd(name, fn, hlp, io=(name == "decode"))
        s.add_argument("--table", required=True)
        s.add_argument("--lm", required=True)
        s.add_argument("--weights")
        s.add_argument("--pop-limit", type=int, default=1000, help="0 for exhaustive search")
        s.add_argument("--table-limit", type=int, default=20, help="0 for no limit")
    s_dec = sub.choices["decode"]
    s_dec.add_argument("--nbest", type=int, default=1)
    s = sub.choices["tune"]
    s.add_argument("--dev-src", required=True)
    s.add_argument("--dev-ref", required=True, help="word-level references")
    s.add_argument("--scheme", choices=SCHEMES)
    s.add_argument("--marker", default=DEFAULT_MARKER)
    s.add_argument("--iterations", type=int, default=3)
    s.add_argument("--out", required=True)

    s = cmd("triangulate", cmd_triangulate, "source-target table through a pivot")
    s.add_argument("--sp", required=True)
    s.add_argument("--pt", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--prune", type=float, default=PRUNE_FLOOR)
    s.add_argument("--filter", help="file of source phrases to keep")
    s.add_argument("--limit", type=int, default=0, help="options kept per source phrase, 0 for all")

    s = cmd("pipeline", cmd_pipeline, "chain two systems over k-best pivot output", io=True)
    s.add_argument("--sp-sys", required=True)
    s.add_argument("--pt-sys", required=True)
    s.add_argument("--k", type=int, default=20)
    s.add_argument("--pop-limit", type=int, default=1000, help="0 for exhaustive search")
    s.add_argument("--table-limit", type=int, default=20, help="0 for no limit")

    s = cmd("interpolate", cmd_interpolate, "convex combination of tables")
    s.add_argument("--tables", required=True, help="comma-separated table files")
    s.add_argument("--alphas", help="comma-separated weights; equal when omitted")
    s.add_argument("--out", required=True)

    s = cmd("evaluate", cmd_evaluate, "BLEU or LeBLEU")
    s.add_argument("--metric", choices=("bleu", "lebleu"), default="bleu")
    s.add_argument("--cand", required=True)
    s.add_argument("--ref", required=True)
    s.add_argument("--threshold", type=float, default=0.4)

    s = cmd("significance", cmd_significance, "paired bootstrap test")
    s.add_argument("--sysA", required=True)
    s.add_argument("--sysB", required=True)
    s.add_argument("--ref", required=True)
    s.add_argument("--resamples", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)

    s = cmd("synth", cmd_synth, "generate a synthetic language family")
    s.add_argument("--spec", help="family spec JSON; default family when omitted")
    s.add_argument("--languages", type=int, default=5)
    s.add_argument("--cognate-rate", type=float, default=0.8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--sentences", type=int, required=True)
    s.add_argument("--out-dir", required=True)

    s = cmd("run", cmd_run, "run an experiment from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--output-dir", help="override the configured output directory")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        args.fn(args)
    except StageError as exc:
        print(f"pivotsmt: {args.command}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # any failure is reported with the subcommand as stage
        print(f"pivotsmt: {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
