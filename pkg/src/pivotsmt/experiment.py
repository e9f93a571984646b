"""End-to-end experiment driver: data, segmentation, tables, LMs, pivoting, tuning, decoding, report.

Every stage writes plain artifacts under the output directory and a manifest in
``stages/`` holding a hash of its parameters and of its upstream stages. A rerun
skips a stage whose hash is unchanged and whose outputs still exist.

Layout::

    config.json  report.txt  report.kv  report.tsv  bleu.png  ratio.png  timings.json
    data/{train,tune,test}.{lang}
    {scheme}/seg/{lang}.bpe
    {scheme}/tables/{a}-{b}.npz
    {scheme}/lm/{lang}.arpa
    {scheme}/systems/{name}/table.gz weights.json system.json test.hyp
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import plots
from .align import align_bitext
from .decoder import Decoder, FeatureWeights, tune_weights
from .evalmetrics import bleu, bootstrap_significance, lebleu
from .ngramlm import NGramLM, train_lm
from .phrasetab import DEFAULT_MAX_LEN, PhraseArrays, PhraseTable, build_phrase_arrays, table_size_ratio
from .pivot import PipelineConfig, TriangulationJob, combine_multi_pivot, pipeline_translate, triangulate_arrays
from .synthlang import SynthLangSpec, default_family_spec, generate_family
from .textseg import SCHEMES, BpeModel, Segmenter, os_vocab_size, train_bpe_matching

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
METHODS = ("triangulate", "pipeline")
DEFAULT_LM_ORDER = {"word": 5, "char": 10, "os": 10, "bpe": 10}
# table features only when cutting option lists before tuning
LIMIT_WEIGHTS = (1.0, 1.0, 1.0, 1.0)
SIG_LEVEL = 0.05


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage}: {type(cause).__name__}: {cause}")


@dataclass
class ExperimentConfig:
    output_dir: str
    source: str = "L0"
    target: str = "L4"
    pivots: list = field(default_factory=lambda: ["L1", "L2", "L3"])
    schemes: list = field(default_factory=lambda: ["word", "bpe"])
    methods: list = field(default_factory=lambda: ["triangulate"])
    multi_pivot: bool = True
    direct: bool = False
    # synthetic family: keyword arguments of default_family_spec plus optional
    # "num_sentences", or {"spec_file": path}; alternatively corpus_dir holds
    # {train,tune,test}.{lang} files
    synth: dict | None = None
    corpus_dir: str | None = None
    train_size: int = 5000
    # source-pivot and pivot-target bitexts come from different training sentences
    disjoint_bitexts: bool = True
    tune_size: int | None = None
    test_size: int | None = None
    lm_order: dict = field(default_factory=dict)
    max_phrase_len: dict = field(default_factory=dict)
    align_iterations: int = 5
    pop_limit: int | None = 1000
    table_limit: int = 20
    k: int = 20
    # False stops after the table stages (size ratios only)
    decode: bool = True
    tune: bool = True
    tune_iterations: int = 5
    lebleu_threshold: float = 0.4
    resamples: int = 1000
    seed: int = 0
    figures: bool = True
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"config schema_version {self.schema_version}, expected {SCHEMA_VERSION}")
        for s in self.schemes:
            if s not in SCHEMES:
                raise ConfigError(f"unknown scheme {s!r}")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown pivot method {m!r}")
        if not self.schemes or not self.methods:
            raise ConfigError("need at least one scheme and one method")
        if not self.pivots:
            raise ConfigError("need at least one pivot language")
        if (self.synth is None) == (self.corpus_dir is None):
            raise ConfigError("give exactly one of synth and corpus_dir")
        if self.train_size < 1:
            raise ConfigError("train_size must be positive")
        if self.corpus_dir is not None:
            langs = {self.source, self.target, *self.pivots}
            for split in ("train", "tune", "test"):
                for lang in sorted(langs):
                    p = Path(self.corpus_dir) / f"{split}.{lang}"
                    if not p.exists():
                        raise ConfigError(f"missing corpus file {p}")
        if self.synth is not None and "spec_file" in self.synth and not Path(self.synth["spec_file"]).exists():
            raise ConfigError(f"missing synth spec {self.synth['spec_file']}")
        # scheme defaults, merged once; re-loading a saved config is a no-op
        self.lm_order = {**DEFAULT_LM_ORDER, **self.lm_order}
        self.max_phrase_len = {**DEFAULT_MAX_LEN, **self.max_phrase_len}

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "schema_version" not in d:
            raise ConfigError("config lacks schema_version")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _write_lines(path: Path, lines) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(l + "\n" for l in lines), encoding="utf-8")


def _read_lines(path) -> list:
    return Path(path).read_text(encoding="utf-8").splitlines()


def _spans(sents, max_len: int) -> set:
    out = set()
    for u in sents:
        u = tuple(u)
        for i in range(len(u)):
            for j in range(i + 1, min(len(u), i + max_len) + 1):
                out.add(u[i:j])
    return out


# ---------------------------------------------------------------------------
# report


@dataclass
class Report:
    config: dict
    rows: list = field(default_factory=list)  # (scheme, system, method, pivot)
    bleu: dict = field(default_factory=dict)  # (scheme, system) -> score
    lebleu: dict = field(default_factory=dict)
    pvalue: dict = field(default_factory=dict)  # (scheme, system) -> p vs first scheme
    ratio: dict = field(default_factory=dict)  # (scheme, pivot) -> size ratio
    sizes: dict = field(default_factory=dict)  # (scheme, pivot) -> (sp, pt, joined)
    combo_pvalue: dict = field(default_factory=dict)  # scheme -> p of all pivots vs best pivot
    status: str = "ok"
    failed_stage: str | None = None
    error: str | None = None

    def best_pivot(self, scheme: str) -> str | None:
        cands = [(self.bleu[(scheme, s)], s) for sc, s, m, p in self.rows if sc == scheme and m == "tri" and p]
        return max(cands, key=lambda c: (c[0], [-ord(ch) for ch in c[1]]))[1] if cands else None

    def mark(self, scheme, system) -> str:
        p = self.pvalue.get((scheme, system))
        return "*" if p is not None and p < SIG_LEVEL else ""

    def systems(self, scheme) -> list:
        return [s for sc, s, _, _ in self.rows if sc == scheme]

    # -- renderers --------------------------------------------------------

    def text(self) -> str:
        cfg = self.config
        schemes = cfg["schemes"]
        first = schemes[0]
        out = ["pivotsmt experiment report", ""]
        out.append(
            f"source={cfg['source']} target={cfg['target']} pivots={','.join(cfg['pivots'])} "
            f"seed={cfg['seed']} status={self.status}"
        )
        if self.status != "ok":
            out.append(f"failed stage: {self.failed_stage}: {self.error}")
        names = []
        for s in schemes:
            for n in self.systems(s):
                if n not in names:
                    names.append(n)
        w = max([len(n) for n in names] + [18])

        def table(title, rownames, cols, cell):
            out.extend(["", title, f"{'':<{w}}" + "".join(f"{c:>14}" for c in cols)])
            for r in rownames:
                out.append(f"{r:<{w}}" + "".join(f"{cell(r, c):>14}" for c in cols))

        def fmt_bleu(scheme, system):
            v = self.bleu.get((scheme, system))
            return "-" if v is None else f"{v:.2f}{self.mark(scheme, system)}"

        sig = f" (* p<{SIG_LEVEL} vs {first})" if len(schemes) > 1 else ""
        table(f"BLEU, word level{sig}", names, schemes, lambda r, c: fmt_bleu(c, r))
        table(
            "LeBLEU",
            names,
            schemes,
            lambda r, c: "-" if (c, r) not in self.lebleu else f"{self.lebleu[(c, r)]:.4f}",
        )
        if "pipeline" in cfg["methods"]:
            cols = [f"{s} {m}" for s in schemes for m in ("tri", "pip")]
            table(
                "Triangulation (tri) vs pipelining (pip), BLEU",
                cfg["pivots"],
                cols,
                lambda r, c: fmt_bleu(c.split()[0], f"{c.split()[1]}.{r}"),
            )
        if self.ratio:
            table(
                "Triangulated / larger component table size",
                cfg["pivots"],
                schemes,
                lambda r, c: "-" if (c, r) not in self.ratio else f"{self.ratio[(c, r)]:.3f}",
            )
            table(
                "Table entries",
                cfg["pivots"],
                [f"{s} {k}" for s in schemes for k in ("sp", "pt", "joined")],
                lambda r, c: self._size_cell(c, r),
            )
        if cfg["decode"] and "triangulate" in cfg["methods"] and (len(cfg["pivots"]) > 1 or cfg["direct"]):
            labels = self.combination_rows()
            table("Combining pivots, BLEU", [l for l, _ in labels], schemes, lambda r, c: self._combo_cell(c, dict(labels)[r]))
        out.append("")
        return "\n".join(out) + "\n"

    def _size_cell(self, col, pivot) -> str:
        scheme, part = col.split()
        if (scheme, pivot) not in self.sizes:
            return "-"
        return str(self.sizes[(scheme, pivot)][("sp", "pt", "joined").index(part)])

    def combination_rows(self) -> list:
        cfg = self.config
        rows = [("best pivot", "best")]
        if cfg["multi_pivot"] and len(cfg["pivots"]) > 1:
            rows.append(("all pivots", "all-pivots"))
        if cfg["direct"]:
            rows.append(("direct", "direct"))
            if cfg["multi_pivot"] and len(cfg["pivots"]) > 1:
                rows.append(("direct+all pivots", "direct+all-pivots"))
        return rows

    def _combo_cell(self, scheme, system) -> str:
        if system == "best":
            bp = self.best_pivot(scheme)
            return "-" if bp is None else f"{self.bleu[(scheme, bp)]:.2f} ({bp.split('.', 1)[1]})"
        v = self.bleu.get((scheme, system))
        if v is None:
            return "-"
        p = self.combo_pvalue.get(scheme) if system == "all-pivots" else None
        return f"{v:.2f}" + ("*" if p is not None and p < SIG_LEVEL else "")

    def kv(self) -> str:
        lines = [f"status={self.status}"]
        if self.status != "ok":
            lines += [f"failed_stage={self.failed_stage}", f"error={self.error}"]
        for scheme, system, _, _ in self.rows:
            key = f"{scheme}.{system}"
            if (scheme, system) in self.bleu:
                lines.append(f"bleu.{key}={self.bleu[(scheme, system)]:.4f}")
                lines.append(f"lebleu.{key}={self.lebleu[(scheme, system)]:.6f}")
            if (scheme, system) in self.pvalue:
                lines.append(f"p_value.{key}={self.pvalue[(scheme, system)]:.4f}")
        for (scheme, pivot), r in sorted(self.ratio.items()):
            lines.append(f"ratio.{scheme}.{pivot}={r:.6f}")
            sp, pt, joined = self.sizes[(scheme, pivot)]
            lines.append(f"entries.{scheme}.{pivot}={sp},{pt},{joined}")
        for scheme in self.config["schemes"]:
            bp = self.best_pivot(scheme)
            if bp:
                lines.append(f"best_pivot.{scheme}={bp.split('.', 1)[1]}")
            if scheme in self.combo_pvalue:
                lines.append(f"p_value.{scheme}.all-pivots_vs_best={self.combo_pvalue[scheme]:.4f}")
        return "\n".join(lines) + "\n"

    def tsv(self) -> str:
        lines = ["scheme\tsystem\tmethod\tpivot\tbleu\tlebleu\tp_value\tmark"]
        for scheme, system, method, pivot in self.rows:
            if (scheme, system) not in self.bleu:
                continue
            p = self.pvalue.get((scheme, system))
            lines.append(
                f"{scheme}\t{system}\t{method}\t{pivot or ''}\t{self.bleu[(scheme, system)]:.4f}\t"
                f"{self.lebleu[(scheme, system)]:.6f}\t{'' if p is None else f'{p:.4f}'}\t{self.mark(scheme, system)}"
            )
        return "\n".join(lines) + "\n"

    def scores(self) -> dict:
        """Flat ``{"bleu.<scheme>.<system>": value, ...}`` view of the key-value report."""
        out = {}
        for line in self.kv().splitlines():
            k, v = line.split("=", 1)
            try:
                out[k] = float(v)
            except ValueError:
                out[k] = v
        return out


# ---------------------------------------------------------------------------
# driver


class Experiment:
    def __init__(self, config: ExperimentConfig):
        self.cfg = config
        self.root = Path(config.output_dir)
        self.memo: dict = {}
        self.keys: dict = {}
        self.timings: dict = {}
        self.skipped: list = []
        self.seg_cache: dict = {}

    # -- stage bookkeeping -------------------------------------------------

    def stage(self, name: str, params: dict, deps, outputs, build, load):
        """Run ``build`` unless the manifest matches; returns a getter for the stage result."""
        key = _hash({"stage": name, "params": params, "deps": [self.keys[d] for d in deps]})
        self.keys[name] = key
        manifest = self.root / "stages" / (name.replace("/", "__") + ".json")
        outs = [self.root / o for o in outputs]
        fresh = False
        if manifest.exists():
            try:
                fresh = json.loads(manifest.read_text()).get("key") == key and all(o.exists() for o in outs)
            except ValueError:
                fresh = False
        if fresh:
            self.skipped.append(name)
        else:
            log.info("stage %s", name)
            t0 = time.time()
            try:
                self.memo[name] = build()
            except StageError:
                raise
            except Exception as exc:
                raise StageError(name, exc) from exc
            self.timings[name] = round(time.time() - t0, 3)
            manifest.parent.mkdir(parents=True, exist_ok=True)
            manifest.write_text(json.dumps({"key": key, "outputs": outputs}, indent=1) + "\n")

        def get():
            if name not in self.memo:
                try:
                    self.memo[name] = load()
                except Exception as exc:
                    raise StageError(name, exc) from exc
            return self.memo[name]

        return get

    def forget(self, *names):
        for n in names:
            self.memo.pop(n, None)

    # -- data ---------------------------------------------------------------

    def languages(self) -> list:
        c = self.cfg
        return sorted({c.source, c.target, *c.pivots})

    def data_stage(self):
        c = self.cfg
        langs = self.languages()
        outputs = [f"data/{s}.{l}" for s in ("train", "tune", "test") for l in langs]
        need = c.train_size * (2 if c.disjoint_bitexts else 1)
        if c.synth is not None:
            synth = dict(c.synth)
            if "spec_file" in synth:
                spec = SynthLangSpec.load(synth.pop("spec_file"))
                n = synth.pop("num_sentences", None)
                params = {"spec": spec.to_dict(), "n": n}
            else:
                n = synth.pop("num_sentences", None)
                spec = default_family_spec(seed=c.seed, **synth)
                params = {"spec": spec.to_dict(), "n": n}
            n = n or int(math.ceil(need / 0.8))

            def build():
                fam = generate_family(spec, n)
                missing = set(langs) - set(spec.names)
                if missing:
                    raise ConfigError(f"languages {sorted(missing)} not in the synthetic family")
                for split, per_lang in fam.corpora.items():
                    for lang in langs:
                        _write_lines(self.root / f"data/{split}.{lang}", per_lang[lang])
                return None

            params["n"] = n
        else:
            digest = hashlib.sha256()
            for o in outputs:
                digest.update((Path(c.corpus_dir) / Path(o).name).read_bytes())
            params = {"corpus": digest.hexdigest()}

            def build():
                for o in outputs:
                    _write_lines(self.root / o, _read_lines(Path(c.corpus_dir) / Path(o).name))

        self.stage("data", params, [], outputs, build, lambda: None)
        self.data = {
            s: {l: _read_lines(self.root / f"data/{s}.{l}") for l in langs} for s in ("train", "tune", "test")
        }
        train = self.data["train"]
        n = c.train_size
        if any(len(v) < need for v in train.values()):
            raise StageError("data", ConfigError(f"training split has fewer than {need} lines"))
        self.block_a = {l: v[:n] for l, v in train.items()}
        self.block_b = {l: v[n : 2 * n] for l, v in train.items()} if c.disjoint_bitexts else self.block_a
        self.tune = {l: v[: c.tune_size] if c.tune_size else v for l, v in self.data["tune"].items()}
        self.test = {l: v[: c.test_size] if c.test_size else v for l, v in self.data["test"].items()}

    # -- per scheme -----------------------------------------------------------

    def segmenter_stage(self, scheme: str, lang: str):
        name = f"{scheme}/seg.{lang}"
        if scheme != "bpe":
            self.keys[name] = _hash({"scheme": scheme})
            return lambda: Segmenter(scheme)
        path = f"{scheme}/seg/{lang}.bpe"
        lines = self.bpe_text(lang)

        def build():
            model = train_bpe_matching(lines, os_vocab_size(lines))
            (self.root / path).parent.mkdir(parents=True, exist_ok=True)
            model.save(self.root / path)
            return Segmenter("bpe", bpe_model=model)

        return self.stage(
            name, {"train": self.cfg.train_size, "disjoint": self.cfg.disjoint_bitexts}, ["data"], [path], build,
            lambda: Segmenter("bpe", bpe_model=BpeModel.load(self.root / path)),
        )

    def bpe_text(self, lang):
        a, b = self.block_a[lang], self.block_b[lang]
        return a + b if b is not a else a

    def seg(self, scheme, lang, lines, tag):
        key = (scheme, lang, tag)
        if key not in self.seg_cache:
            segmenter = self.segmenters[scheme][lang]()
            self.seg_cache[key] = [segmenter(x).units for x in lines]
        return self.seg_cache[key]

    def component_stage(self, scheme, a, b, block):
        name = f"{scheme}/table.{a}-{b}"
        path = f"{scheme}/tables/{a}-{b}.npz"
        data = self.block_a if block == "a" else self.block_b
        c = self.cfg

        def build():
            S = self.seg(scheme, a, data[a], block)
            T = self.seg(scheme, b, data[b], block)
            fwd, rev, _, _, sym = align_bitext(S, T, c.align_iterations)
            arr = build_phrase_arrays(
                S, T, sym, fwd, rev, c.max_phrase_len[scheme],
                metadata={"scheme": scheme, "src_lang": a, "tgt_lang": b},
            )
            (self.root / path).parent.mkdir(parents=True, exist_ok=True)
            arr.save(self.root / path)
            return arr

        params = {"block": block, "iters": c.align_iterations, "max_len": c.max_phrase_len[scheme]}
        deps = ["data", f"{scheme}/seg.{a}", f"{scheme}/seg.{b}"]
        return self.stage(name, params, deps, [path], build, lambda: PhraseArrays.load(self.root / path))

    def lm_stage(self, scheme, lang, block):
        name = f"{scheme}/lm.{lang}"
        path = f"{scheme}/lm/{lang}.arpa"
        order = self.cfg.lm_order[scheme]
        data = self.block_a if block == "a" else self.block_b

        def build():
            lm = train_lm(self.seg(scheme, lang, data[lang], block), order)
            (self.root / path).parent.mkdir(parents=True, exist_ok=True)
            lm.write_arpa(self.root / path)
            return lm

        return self.stage(
            name, {"order": order, "block": block}, ["data", f"{scheme}/seg.{lang}"], [path], build,
            lambda: NGramLM.read_arpa(self.root / path),
        )

    def write_system(self, scheme, system, table: PhraseTable, lm_path: str, src_lang, tgt_lang) -> None:
        d = self.root / scheme / "systems" / system
        d.mkdir(parents=True, exist_ok=True)
        table.write(d / "table.gz")
        seg = lambda l: f"../../seg/{l}.bpe" if scheme == "bpe" else None
        meta = {
            "scheme": scheme, "table": "table.gz", "lm": f"../../../{lm_path}", "weights": "weights.json",
            "src_lang": src_lang, "tgt_lang": tgt_lang, "src_bpe": seg(src_lang), "tgt_bpe": seg(tgt_lang),
        }
        (d / "system.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")

    def table_stage(self, scheme, system, deps, make, lm_path, src_lang, tgt_lang, extra=None):
        """A filtered decoding table written as a system directory."""
        name = f"{scheme}/{system}/table"
        path = f"{scheme}/systems/{system}/table.gz"

        def build():
            table, info = make()
            self.write_system(scheme, system, table, lm_path, src_lang, tgt_lang)
            if info is not None:
                (self.root / scheme / "systems" / system / "stats.json").write_text(json.dumps(info, sort_keys=True) + "\n")
            return table, info

        def load():
            info_path = self.root / scheme / "systems" / system / "stats.json"
            info = json.loads(info_path.read_text()) if info_path.exists() else None
            return PhraseTable.read(self.root / path), info

        params = {"limit": self.cfg.table_limit, "tune": self.cfg.tune_size, "test": self.cfg.test_size, **(extra or {})}
        return self.stage(name, params, deps, [path], build, load)

    def run_stage(self, scheme, system, table_get, lm_get, src_units, refs, test_units, tgt_seg, deps):
        """Tune on the dev set, decode the test set, write ``test.hyp``."""
        c = self.cfg
        d = f"{scheme}/systems/{system}"
        name = f"{scheme}/{system}/run"

        def build():
            table, _ = table_get()
            dec = Decoder(table, lm_get(), FeatureWeights(), pop_limit=c.pop_limit, table_limit=c.table_limit)
            w = FeatureWeights()
            if c.tune:
                w = tune_weights(src_units[0], refs, w, dec, tgt_seg.desegment, iterations=c.tune_iterations)
            dec.set_weights(w)
            w.save(self.root / d / "weights.json")
            hyps = [tgt_seg.desegment(dec.translate(u)) for u in test_units]
            _write_lines(self.root / d / "test.hyp", hyps)
            return hyps

        params = {"pop": c.pop_limit, "limit": c.table_limit, "tune": c.tune, "iters": c.tune_iterations}
        return self.stage(
            name, params, deps, [f"{d}/weights.json", f"{d}/test.hyp"], build,
            lambda: _read_lines(self.root / d / "test.hyp"),
        )

    def run_scheme(self, scheme, report: Report) -> dict:
        c = self.cfg
        src, tgt = c.source, c.target
        self.segmenters[scheme] = {l: self.segmenter_stage(scheme, l) for l in self.languages()}
        L = c.max_phrase_len[scheme]
        src_tune = self.seg(scheme, src, self.tune[src], "tune")
        src_test = self.seg(scheme, src, self.test[src], "test")
        wanted = _spans(src_tune + src_test, L)
        tgt_seg = self.segmenters[scheme][tgt]()
        lm_get = self.lm_stage(scheme, tgt, "b") if c.decode else None
        lm_name, lm_path = f"{scheme}/lm.{tgt}", f"{scheme}/lm/{tgt}.arpa"
        refs = self.tune[tgt]
        hyps: dict = {}
        tables: dict = {}

        def run(system, method, pivot, table_get, deps, seg=tgt_seg, lm=lm_get, inputs=(src_tune, src_test), dev_refs=refs):
            if not c.decode:
                return
            deps = deps + [lm_name, f"{scheme}/seg.{tgt}"]
            hyps[system] = self.run_stage(scheme, system, table_get, lm, (inputs[0],), dev_refs, inputs[1], seg, deps)
            report.rows.append((scheme, system, method, pivot))

        for p in c.pivots:
            sp = self.component_stage(scheme, src, p, "a")
            pt = self.component_stage(scheme, p, tgt, "b")
            comp = [f"{scheme}/table.{src}-{p}", f"{scheme}/table.{p}-{tgt}"]

            def make(sp=sp, pt=pt):
                a, b = sp(), pt()
                job = TriangulationJob(a, b, output_limit=c.table_limit, limit_weights=LIMIT_WEIGHTS)
                tri = triangulate_arrays(job, wanted)
                info = {
                    "sp_entries": len(a), "pt_entries": len(b), "joined_entries": int(tri.metadata["joined_entries"]),
                    "ratio": table_size_ratio(tri, a, b),
                }
                return tri.to_table(), info

            sysname = f"tri.{p}"
            tget = self.table_stage(scheme, sysname, comp + ["data"], make, lm_path, src, tgt)
            tables[p] = tget
            if "triangulate" in c.methods:
                run(sysname, "tri", p, tget, [f"{scheme}/{sysname}/table"])
            info = tget()[1]
            report.ratio[(scheme, p)] = info["ratio"]
            report.sizes[(scheme, p)] = (info["sp_entries"], info["pt_entries"], info["joined_entries"])
            if "pipeline" in c.methods and c.decode:
                self.pipeline_pivot(scheme, p, sp, pt, comp, lm_get, lm_path, report, hyps)
            self.forget(*comp)

        if c.direct:
            comp = self.component_stage(scheme, src, tgt, "a")

            def make_direct():
                arr = comp()
                keep = np.array([ph in wanted for ph in arr.src_phrases], dtype=bool)
                arr = arr.select(np.nonzero(keep[arr.src])[0]).limit(c.table_limit, LIMIT_WEIGHTS)
                return arr.to_table(), None

            tables["direct"] = self.table_stage(
                scheme, "direct", [f"{scheme}/table.{src}-{tgt}", "data"], make_direct, lm_path, src, tgt
            )
            run("direct", "direct", None, tables["direct"], [f"{scheme}/direct/table"])
            self.forget(f"{scheme}/table.{src}-{tgt}")

        if "triangulate" in c.methods and c.multi_pivot and len(c.pivots) > 1:
            deps = [f"{scheme}/tri.{p}/table" for p in c.pivots]

            def make_multi(with_direct=False):
                members = [tables[p]()[0] for p in c.pivots]
                return combine_multi_pivot(members, tables["direct"]()[0] if with_direct else None), None

            mget = self.table_stage(scheme, "all-pivots", deps, make_multi, lm_path, src, tgt)
            run("all-pivots", "multi", None, mget, [f"{scheme}/all-pivots/table"])
            if c.direct:
                dget = self.table_stage(
                    scheme, "direct+all-pivots", deps + [f"{scheme}/direct/table"], lambda: make_multi(True),
                    lm_path, src, tgt,
                )
                run("direct+all-pivots", "multi", None, dget, [f"{scheme}/direct+all-pivots/table"])
        return hyps

    def pipeline_pivot(self, scheme, p, sp_get, pt_get, comp, lm_get, lm_path, report, hyps):
        """Source->pivot and pivot->target systems chained over k-best pivot sentences."""
        c = self.cfg
        src, tgt = c.source, c.target
        L = c.max_phrase_len[scheme]
        src_tune = self.seg(scheme, src, self.tune[src], "tune")
        src_test = self.seg(scheme, src, self.test[src], "test")
        piv_seg = self.segmenters[scheme][p]()
        tgt_seg = self.segmenters[scheme][tgt]()
        piv_lm = self.lm_stage(scheme, p, "a")
        piv_tune = self.seg(scheme, p, self.tune[p], "tune")

        def filtered(arr, wanted):
            keep = np.array([ph in wanted for ph in arr.src_phrases], dtype=bool)
            return arr.select(np.nonzero(keep[arr.src])[0]).limit(c.table_limit, LIMIT_WEIGHTS).to_table()

        sp_name = f"sp.{p}"
        wanted = _spans(src_tune + src_test, L)
        sp_table = self.table_stage(
            scheme, sp_name, [comp[0], "data"], lambda: (filtered(sp_get(), wanted), None),
            f"{scheme}/lm/{p}.arpa", src, p,
        )
        sp_run = self.run_stage(
            scheme, sp_name, sp_table, piv_lm, (src_tune,), self.tune[p], src_test, piv_seg,
            [f"{scheme}/{sp_name}/table", f"{scheme}/lm.{p}", f"{scheme}/seg.{p}"],
        )
        sp_run()

        def sp_decoder():
            table, _ = sp_table()
            w = FeatureWeights.load(self.root / scheme / "systems" / sp_name / "weights.json")
            return Decoder(table, piv_lm(), w, pop_limit=c.pop_limit, table_limit=c.table_limit)

        pt_name = f"pt.{p}"

        def make_pt():
            dec = sp_decoder()
            outs = [e.units for u in src_test for e in dec.decode(u, c.k)]
            return filtered(pt_get(), _spans(outs + piv_tune, L)), None

        pt_table = self.table_stage(
            scheme, pt_name, [comp[1], f"{scheme}/{sp_name}/run", "data"], make_pt, lm_path, p, tgt,
            extra={"k": c.k},
        )
        piv_test = [list(u) for u in self.seg(scheme, p, self.test[p], "test")]
        self.run_stage(
            scheme, pt_name, pt_table, lm_get, (piv_tune,), self.tune[tgt], piv_test, tgt_seg,
            [f"{scheme}/{pt_name}/table", f"{scheme}/lm.{tgt}", f"{scheme}/seg.{tgt}"],
        )()
        name = f"pip.{p}"
        d = f"{scheme}/systems/{name}"

        def build():
            table, _ = pt_table()
            w = FeatureWeights.load(self.root / scheme / "systems" / pt_name / "weights.json")
            pt_dec = Decoder(table, lm_get(), w, pop_limit=c.pop_limit, table_limit=c.table_limit)
            cfg = PipelineConfig(sp_decoder(), pt_dec, k=c.k)
            out = []
            for u in src_test:
                best = pipeline_translate(u, cfg).best
                out.append(tgt_seg.desegment(best.units if best else ()))
            _write_lines(self.root / d / "test.hyp", out)
            return out

        hyps[name] = self.stage(
            f"{scheme}/{name}/run", {"k": c.k, "pop": c.pop_limit}, [f"{scheme}/{sp_name}/run", f"{scheme}/{pt_name}/run"],
            [f"{d}/test.hyp"], build, lambda: _read_lines(self.root / d / "test.hyp"),
        )
        report.rows.append((scheme, name, "pip", p))

    # -- top level ------------------------------------------------------------

    def evaluate(self, report: Report, hyps: dict) -> None:
        c = self.cfg
        refs = self.test[c.target]
        first = c.schemes[0]
        outputs = {}
        for scheme, system, _, _ in report.rows:
            h = hyps[scheme][system]()
            outputs[(scheme, system)] = h
            report.bleu[(scheme, system)] = bleu(h, refs)
            report.lebleu[(scheme, system)] = lebleu(h, refs, c.lebleu_threshold)
        for (scheme, system), h in outputs.items():
            if scheme != first and (first, system) in outputs:
                sig = bootstrap_significance(h, outputs[(first, system)], refs, c.resamples, c.seed)
                report.pvalue[(scheme, system)] = sig.p_value
        for scheme in c.schemes:
            bp = report.best_pivot(scheme)
            if bp and (scheme, "all-pivots") in outputs:
                sig = bootstrap_significance(outputs[(scheme, "all-pivots")], outputs[(scheme, bp)], refs, c.resamples, c.seed)
                report.combo_pvalue[scheme] = sig.p_value

    def run(self) -> Report:
        self.root.mkdir(parents=True, exist_ok=True)
        self.cfg.save(self.root / "config.json")
        report = Report(self.cfg.to_dict())
        self.segmenters: dict = {}
        try:
            self.data_stage()
            hyps = {}
            for scheme in self.cfg.schemes:
                hyps[scheme] = self.run_scheme(scheme, report)
            self.evaluate(report, hyps)
        except StageError as exc:
            report.status = "failed"
            report.failed_stage = exc.stage
            report.error = f"{type(exc.cause).__name__}: {exc.cause}"
            self.write_report(report)
            raise
        self.write_report(report)
        return report

    def write_report(self, report: Report) -> None:
        (self.root / "report.txt").write_text(report.text())
        (self.root / "report.kv").write_text(report.kv())
        (self.root / "report.tsv").write_text(report.tsv())
        path = self.root / "timings.json"
        stages = {}
        if path.exists():
            try:
                stages = json.loads(path.read_text()).get("stages", {})
            except ValueError:
                pass
        # skipped stages keep the time of the run that built them
        stages.update(self.timings)
        path.write_text(json.dumps({"stages": stages, "skipped": self.skipped}, indent=1, sort_keys=True) + "\n")
        if self.cfg.figures and report.bleu:
            names = []
            for _, s, _, _ in report.rows:
                if s not in names:
                    names.append(s)
            plots.bleu_figure(self.root / "bleu.png", names, self.cfg.schemes, report.bleu)
            if report.ratio:
                plots.ratio_figure(self.root / "ratio.png", self.cfg.pivots, self.cfg.schemes, report.ratio)


def run_experiment(config: ExperimentConfig) -> Report:
    """Run (or resume) the experiment described by ``config``; see :class:`Experiment`."""
    return Experiment(config).run()
