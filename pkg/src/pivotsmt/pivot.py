"""Source-target translation through a pivot language.

* :func:`triangulate` joins a source-pivot and a pivot-target phrase table on
  shared pivot phrases and marginalizes the pivot out of every feature.
* :func:`pipeline_translate` chains two decoders, passing the top-k pivot
  sentences through and summing target probabilities over them.
* :func:`interpolate` / :func:`combine_multi_pivot` mix several tables with
  convex weights.
"""

from __future__ import annotations

import logging
import math
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .decoder import Decoder, NBestEntry, NBestList
from .phrasetab import PRUNE_FLOOR, PhraseArrays, PhraseEntry, PhraseTable, as_arrays, top_rows

log = logging.getLogger(__name__)

JOIN_BATCH = 2_000_000


class SchemeMismatch(ValueError):
    pass


class WeightError(ValueError):
    pass


class EmptyJoinWarning(UserWarning):
    pass


@dataclass
class TriangulationJob:
    sp_table: PhraseTable
    pt_table: PhraseTable
    prune_floor: float = PRUNE_FLOOR
    compose_alignments: bool = True
    # keep only this many best targets per source phrase in each component first
    component_limit: int | None = None
    # keep only this many best targets per source phrase in the output; ranking
    # uses ``sum_k w_k log10 f_k + limit_length_weight * len(tgt)``
    output_limit: int | None = None
    limit_weights: tuple | None = None
    limit_length_weight: float = 0.0


def _check_schemes(tables: Sequence[PhraseTable]) -> None:
    schemes = {t.metadata.get("scheme") for t in tables} - {None}
    if len(schemes) > 1:
        raise SchemeMismatch(f"tables use different segmentation schemes: {sorted(schemes)}")


def _compose_links(sp_links, pt_links) -> tuple:
    by_pivot = defaultdict(list)
    for j, k in pt_links:
        by_pivot[j].append(k)
    return tuple(sorted({(i, k) for i, j in sp_links for k in by_pivot.get(j, ())}))


def triangulate_arrays(job: TriangulationJob, src_filter=None) -> PhraseArrays:
    """Join on pivot phrases; each feature becomes ``sum_p f(t|p) f(p|s)``.

    The reverse features compose the same way (``sum_p f(s|p) f(p|t)``).
    Output alignments are composed through the pivot path with the largest
    ``P(t|p) P(p|s)`` contribution. The join is expanded a bounded batch of
    source phrases at a time, so each batch's sums are already final.

    With ``src_filter`` only rows for those source phrases are returned;
    ``metadata["joined_entries"]`` always counts the full table.
    """
    sp, pt = as_arrays(job.sp_table), as_arrays(job.pt_table)
    _check_schemes([sp, pt])
    sp_mid, pt_mid = sp.metadata.get("tgt_lang"), pt.metadata.get("src_lang")
    if sp_mid and pt_mid and sp_mid != pt_mid:
        raise SchemeMismatch(f"pivot languages differ: {sp_mid} vs {pt_mid}")
    if job.component_limit:
        sp = sp.limit(job.component_limit)
        pt = pt.limit(job.component_limit)
    meta = {
        "scheme": sp.metadata.get("scheme") or pt.metadata.get("scheme"),
        "src_lang": sp.metadata.get("src_lang"),
        "tgt_lang": pt.metadata.get("tgt_lang"),
        "pivot_lang": sp_mid or pt_mid,
        "origin": "triangulated",
    }
    meta = {k: v for k, v in meta.items() if v is not None}
    empty = PhraseArrays(
        sp.src_phrases, pt.tgt_phrases, np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64),
        np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0, dtype=np.int64), [()], meta,
    )

    # pivot id = row of the phrase in pt.src_phrases
    pt_index = {p: i for i, p in enumerate(pt.src_phrases)}
    sp_piv_of = np.array([pt_index.get(p, -1) for p in sp.tgt_phrases], dtype=np.int64)
    sp_piv = sp_piv_of[sp.tgt] if len(sp) else np.zeros(0, dtype=np.int64)
    pt_rows = np.argsort(pt.src, kind="stable")
    npiv = len(pt.src_phrases)
    b0 = np.searchsorted(pt.src[pt_rows], np.arange(npiv), side="left")
    nb = np.searchsorted(pt.src[pt_rows], np.arange(npiv), side="right") - b0
    fan = np.where(sp_piv >= 0, nb[np.maximum(sp_piv, 0)], 0) if npiv else np.zeros(len(sp), dtype=np.int64)
    rows = np.nonzero(fan > 0)[0]
    if len(rows) == 0:
        warnings.warn("no pivot phrase is shared by the two tables; result is empty", EmptyJoinWarning)
        empty.metadata["joined_entries"] = 0
        return empty
    # walk the join grouped by source phrase so every chunk's sums are final
    rows = rows[np.argsort(sp.src[rows], kind="stable")]
    fan = fan[rows]
    src_of_row = sp.src[rows]
    cum = np.cumsum(fan)
    src_starts = np.nonzero(np.append(True, src_of_row[1:] != src_of_row[:-1]))[0]
    wanted = None
    if src_filter is not None:
        wanted = np.array([p in src_filter for p in sp.src_phrases], dtype=bool)
    ntgt = np.int64(len(pt.tgt_phrases))
    sp_f, pt_f = sp.features, pt.features
    if job.output_limit:
        rank = pt.tgt_rank()
        tgt_len = np.array([len(p) for p in pt.tgt_phrases], dtype=float)
    out_keys, out_feats, out_si, out_ti = [], [], [], []
    total_entries = 0
    start = 0
    while start < len(rows):
        base = cum[start - 1] if start else 0
        stop = int(np.searchsorted(cum, base + JOIN_BATCH, side="right"))
        k = int(np.searchsorted(src_starts, max(stop, start + 1), side="left"))
        stop = int(src_starts[k]) if k < len(src_starts) else len(rows)
        r = rows[start:stop]
        c = fan[start:stop]
        n = int(c.sum())
        si = np.repeat(r, c)
        offs = np.repeat(np.cumsum(c) - c, c)
        ti = pt_rows[b0[sp_piv[si]] + np.arange(n, dtype=np.int64) - offs]
        feats = np.column_stack(
            (
                pt_f[ti, 0] * sp_f[si, 0],
                pt_f[ti, 1] * sp_f[si, 1],
                sp_f[si, 2] * pt_f[ti, 2],
                sp_f[si, 3] * pt_f[ti, 3],
            )
        )
        keys = sp.src[si] * ntgt + pt.tgt[ti]
        keys, feats, si, ti = _aggregate(keys, feats, si, ti)
        keep = feats.max(axis=1) >= job.prune_floor
        total_entries += int(keep.sum())
        if wanted is not None:
            keep &= wanted[keys // ntgt]
        if job.output_limit:
            kept = np.nonzero(keep)[0]
            best = top_rows(
                keys[kept] // ntgt, keys[kept] % ntgt, feats[kept], job.output_limit, job.limit_weights,
                job.limit_length_weight, rank, tgt_len,
            )
            keep = np.zeros(len(keys), dtype=bool)
            keep[kept[best]] = True
        out_keys.append(keys[keep])
        out_feats.append(feats[keep])
        out_si.append(si[keep])
        out_ti.append(ti[keep])
        start = stop

    keys = np.concatenate(out_keys)
    feats = np.concatenate(out_feats)
    si = np.concatenate(out_si)
    ti = np.concatenate(out_ti)
    if job.compose_alignments and len(keys):
        pair = np.column_stack((sp.align[si], pt.align[ti]))
        uniq, inv = np.unique(pair, axis=0, return_inverse=True)
        vocab = [_compose_links(sp.align_vocab[x], pt.align_vocab[y]) for x, y in uniq.tolist()]
        align = inv.ravel().astype(np.int64)
    else:
        vocab, align = [()], np.zeros(len(keys), dtype=np.int64)
    meta["joined_entries"] = total_entries
    return PhraseArrays(
        sp.src_phrases, pt.tgt_phrases, keys // ntgt, keys % ntgt, feats, np.zeros((len(keys), 3)),
        align, vocab, meta,
    )


def _aggregate(keys, feats, si, ti):
    """Sum features per key; keep the rows of the first largest ``feats[:, 0]`` contribution."""
    order = np.argsort(keys, kind="stable")
    keys, feats, si, ti = keys[order], feats[order], si[order], ti[order]
    first = np.ones(len(keys), dtype=bool)
    first[1:] = keys[1:] != keys[:-1]
    starts = np.nonzero(first)[0]
    sizes = np.diff(np.append(starts, len(keys)))
    sums = np.add.reduceat(feats, starts, axis=0)
    gmax = np.maximum.reduceat(feats[:, 0], starts)
    at_max = np.nonzero(feats[:, 0] == np.repeat(gmax, sizes))[0]
    group = np.cumsum(first)[at_max] - 1
    lead = at_max[np.append(True, group[1:] != group[:-1])]
    return keys[starts], sums, si[lead], ti[lead]


def triangulate(job: TriangulationJob, src_filter=None) -> PhraseTable:
    """:func:`triangulate_arrays` materialized as a :class:`PhraseTable`.

    With ``src_filter`` only entries for those source phrases are built.
    """
    return triangulate_arrays(job, src_filter).to_table()


def triangulate_oracle(sp: PhraseTable, pt: PhraseTable) -> dict:
    """Plain double loop over the join, for checking :func:`triangulate`."""
    acc: dict = {}
    for e in sp:
        for g in pt.get(e.tgt):
            f = (g.features[0] * e.features[0], g.features[1] * e.features[1],
                 e.features[2] * g.features[2], e.features[3] * g.features[3])
            k = (e.src, g.tgt)
            old = acc.get(k, (0.0, 0.0, 0.0, 0.0))
            acc[k] = tuple(a + b for a, b in zip(old, f))
    return acc


# ---------------------------------------------------------------------------
# pipelining


@dataclass
class PipelineConfig:
    sp: Decoder
    pt: Decoder
    k: int = 20
    temperature: float = 1.0
    # size of each pivot sentence's target n-best list (defaults to k)
    target_nbest: int | None = None
    # optional re-segmentation of pivot output before the second decoder
    resegment: Callable | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


def posteriors(nbest: NBestList, temperature: float = 1.0) -> list[float]:
    """Normalize log10 model scores of an n-best list into probabilities."""
    if not len(nbest):
        return []
    scores = [e.score / temperature for e in nbest]
    top = max(scores)
    weights = [10.0 ** (s - top) for s in scores]
    z = sum(weights)
    return [w / z for w in weights]


def aggregate_pipeline(candidates) -> list[tuple]:
    """``[(P(p|s), [(t, P(t|p)), ...]), ...]`` -> ``[(t, sum_i P(t|p_i) P(p_i|s))]`` best first."""
    agg: dict = defaultdict(float)
    for p_prob, targets in candidates:
        for t, q in targets:
            agg[t] += q * p_prob
    return sorted(agg.items(), key=lambda kv: (-kv[1], kv[0]))


def pipeline_translate(sentence, cfg: PipelineConfig) -> NBestList:
    units = list(sentence.units if hasattr(sentence, "units") else sentence)
    pivots = cfg.sp.decode(units, cfg.k)
    p_post = posteriors(pivots, cfg.temperature)
    n = cfg.target_nbest or cfg.k
    candidates = []
    for entry, pp in zip(pivots, p_post):
        mid = cfg.resegment(entry.units) if cfg.resegment else entry.units
        targets = cfg.pt.decode(list(mid), n)
        t_post = posteriors(targets, cfg.temperature)
        candidates.append((pp, [(t.units, q) for t, q in zip(targets, t_post)]))
    ranked = aggregate_pipeline(candidates)
    return NBestList([NBestEntry(t, math.log10(p) if p > 0 else -math.inf, ()) for t, p in ranked])


# ---------------------------------------------------------------------------
# interpolation


@dataclass
class InterpolationSpec:
    tables: list
    alphas: list = field(default_factory=list)

    def __post_init__(self):
        if not self.tables:
            raise WeightError("need at least one table")
        if not self.alphas:
            self.alphas = [1.0 / len(self.tables)] * len(self.tables)
        if len(self.alphas) != len(self.tables):
            raise WeightError(f"{len(self.alphas)} weights for {len(self.tables)} tables")
        if any(a < 0 for a in self.alphas):
            raise WeightError(f"negative interpolation weight in {self.alphas}")
        if abs(sum(self.alphas) - 1.0) > 1e-9:
            raise WeightError(f"interpolation weights sum to {sum(self.alphas)!r}, not 1")


def interpolate(spec: InterpolationSpec) -> PhraseTable:
    """Per-feature convex combination; a table lacking an entry contributes 0."""
    _check_schemes(spec.tables)
    meta = dict(spec.tables[0].metadata)
    meta["origin"] = "interpolated"
    out = PhraseTable(metadata=meta)
    lookups = [t.lookup() for t in spec.tables]
    keys = sorted(set().union(*lookups))
    # highest weight first, earlier table on ties
    preference = sorted(range(len(spec.tables)), key=lambda i: (-spec.alphas[i], i))
    for key in keys:
        f = [0.0, 0.0, 0.0, 0.0]
        count = 0.0
        for a, lk in zip(spec.alphas, lookups):
            e = lk.get(key)
            if e is not None:
                for j, v in enumerate(e.features):
                    f[j] += a * v
                count += a * e.joint_count
        if max(f) <= 0.0:
            continue
        links = next(lookups[i][key].alignment for i in preference if key in lookups[i])
        out.add(PhraseEntry(key[0], key[1], *f, links, count))
    return out


def combine_multi_pivot(tables: Sequence[PhraseTable], direct: PhraseTable | None = None) -> PhraseTable:
    """Equal-weight interpolation of pivot tables, optionally with the direct table as one more member."""
    if len(tables) < 2:
        raise WeightError("combining pivots needs at least two tables")
    members = list(tables) + ([direct] if direct is not None else [])
    return interpolate(InterpolationSpec(members, [1.0 / len(members)] * len(members)))
