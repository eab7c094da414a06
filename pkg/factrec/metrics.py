"""
Statement-level factuality metrics.

St2Exp judges each statement of one side against the full text of the other
side. StEnt and StCoh align statements pairwise with an NLI model and keep, for
every statement, its best-supported counterpart. All sums go through
math.fsum in statement-index order, so scores do not depend on scheduling.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from nltk.translate.bleu_score import SmoothingFunction, modified_precision, sentence_bleu
from rouge_score import rouge_scorer, tokenizers

from factrec.exceptions import PreconditionError, UndefinedCorrelation
from factrec.models import NliVerdict

logger = logging.getLogger(__name__)

Judge = Callable[[str, str], float]
Nli = Callable[[str, str], NliVerdict]

NGRAM_METRICS = ("bleu4", "rouge1", "rouge2", "rougeL")
BLEU_WEIGHTS = (0.25, 0.25, 0.25, 0.25)


def harmonic_mean(p: float, r: float) -> float:
    """2pr/(p+r), 0 when p + r = 0. Clamped into [min(p, r), max(p, r)]."""
    if p + r == 0:
        return 0.0
    if p == r:
        return p
    f1 = 2 * p * r / (p + r)
    return min(max(f1, min(p, r)), max(p, r))


def _mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)


@dataclass(frozen=True)
class St2ExpScores:
    p: float
    r: float
    f1: float
    degenerate: bool = False


def st2exp(
    gen_statements: Sequence[str],
    ref_statements: Sequence[str],
    gen_text: str,
    ref_text: str,
    judge: Judge,
) -> St2ExpScores:
    """
    Statement-to-explanation precision, recall and F1.

    Precision judges every generated statement against the reference text,
    recall judges every reference statement against the generated text. With
    no generated statements precision is 0 and the result is degenerate.

    :param judge: f(statement, context) -> score in [0, 1].
    :raises PreconditionError: no reference statements.
    """
    if not ref_statements:
        raise PreconditionError("st2exp needs at least one reference statement")
    degenerate = not gen_statements
    p = 0.0 if degenerate else _mean([judge(s, ref_text) for s in gen_statements])
    r = _mean([judge(s, gen_text) for s in ref_statements])
    return St2ExpScores(p=p, r=r, f1=harmonic_mean(p, r), degenerate=degenerate)


@dataclass(frozen=True)
class AlignmentMatrix:
    """
    NLI probabilities for every directed statement pair.

    `ent[k, l]` and `con[k, l]` use generated statement k as premise and
    reference statement l as hypothesis; `ent_rev[l, k]` and `con_rev[l, k]`
    the other way round.
    """

    gen_statements: Tuple[str, ...]
    ref_statements: Tuple[str, ...]
    ent: np.ndarray
    con: np.ndarray
    ent_rev: np.ndarray
    con_rev: np.ndarray

    def __post_init__(self) -> None:
        n, m = len(self.gen_statements), len(self.ref_statements)
        for name, shape in (("ent", (n, m)), ("con", (n, m)), ("ent_rev", (m, n)), ("con_rev", (m, n))):
            a = getattr(self, name)
            if a.shape != shape:
                raise ValueError(f"{name} has shape {a.shape}, expected {shape}")
            if a.size and (a.min() < 0.0 or a.max() > 1.0):
                raise ValueError(f"{name} has cells outside [0, 1]")

    @classmethod
    def from_lists(
        cls,
        ent: Sequence[Sequence[float]],
        con: Sequence[Sequence[float]],
        ent_rev: Sequence[Sequence[float]],
        con_rev: Sequence[Sequence[float]],
        gen_statements: Optional[Sequence[str]] = None,
        ref_statements: Optional[Sequence[str]] = None,
    ) -> "AlignmentMatrix":
        n = len(ent)
        m = len(ent_rev)
        return cls(
            gen_statements=tuple(gen_statements or (f"g{k}" for k in range(n))),
            ref_statements=tuple(ref_statements or (f"r{l}" for l in range(m))),
            ent=np.array(ent, dtype=float).reshape(n, m),
            con=np.array(con, dtype=float).reshape(n, m),
            ent_rev=np.array(ent_rev, dtype=float).reshape(m, n),
            con_rev=np.array(con_rev, dtype=float).reshape(m, n),
        )


def nli_alignment(
    gen_statements: Sequence[str], ref_statements: Sequence[str], nli: Nli
) -> AlignmentMatrix:
    """
    Classify every (generated, reference) pair in both directions: 2nm calls,
    of which repeated pairs are served by the backend cache.
    """
    if not ref_statements:
        raise PreconditionError("nli_alignment needs at least one reference statement")
    n, m = len(gen_statements), len(ref_statements)
    ent = np.zeros((n, m))
    con = np.zeros((n, m))
    ent_rev = np.zeros((m, n))
    con_rev = np.zeros((m, n))
    for k, g in enumerate(gen_statements):
        for l, r in enumerate(ref_statements):
            forward = nli(g, r)
            ent[k, l], con[k, l] = forward.entailment, forward.contradiction
            backward = nli(r, g)
            ent_rev[l, k], con_rev[l, k] = backward.entailment, backward.contradiction
    return AlignmentMatrix(
        gen_statements=tuple(gen_statements),
        ref_statements=tuple(ref_statements),
        ent=ent,
        con=con,
        ent_rev=ent_rev,
        con_rev=con_rev,
    )


@dataclass(frozen=True)
class AlignmentScores:
    stent_p: Optional[float]
    stent_r: float
    stent_f1: Optional[float]
    stcoh_p: Optional[float]
    stcoh_r: float
    stcoh_f1: Optional[float] = None
    degenerate: bool = False
    # best counterpart index per statement, lowest index on ties
    argmax_alignments: Dict[str, Tuple[int, ...]] = field(default_factory=dict)


def _best(rows: np.ndarray) -> Tuple[float, Tuple[int, ...]]:
    """Mean of the row maxima and the argmax of every row."""
    idx = np.argmax(rows, axis=1)
    maxima = [float(rows[i, j]) for i, j in enumerate(idx)]
    return math.fsum(maxima) / len(maxima), tuple(int(j) for j in idx)


def stent_stcoh(matrix: AlignmentMatrix) -> AlignmentScores:
    """
    Entailment (StEnt) and coherence (StCoh = E - C) precision and recall.

    With no generated statements precision is undefined (None) and every
    reference maximum is taken over an empty set: 0 for entailment, -1 for
    coherence.
    """
    n, m = matrix.ent.shape
    if m == 0:
        raise PreconditionError("stent_stcoh needs at least one reference statement")
    coh = matrix.ent - matrix.con
    coh_rev = matrix.ent_rev - matrix.con_rev
    if n == 0:
        return AlignmentScores(
            stent_p=None,
            stent_r=0.0,
            stent_f1=None,
            stcoh_p=None,
            stcoh_r=-1.0,
            degenerate=True,
        )
    stent_p, ent_p_idx = _best(matrix.ent)
    stent_r, ent_r_idx = _best(matrix.ent_rev)
    stcoh_p, coh_p_idx = _best(coh)
    stcoh_r, coh_r_idx = _best(coh_rev)
    return AlignmentScores(
        stent_p=stent_p,
        stent_r=stent_r,
        stent_f1=harmonic_mean(stent_p, stent_r),
        stcoh_p=stcoh_p,
        stcoh_r=stcoh_r,
        stcoh_f1=harmonic_mean(stcoh_p, stcoh_r) if stcoh_p > 0 and stcoh_r > 0 else None,
        argmax_alignments={
            "stent_p": ent_p_idx,
            "stent_r": ent_r_idx,
            "stcoh_p": coh_p_idx,
            "stcoh_r": coh_r_idx,
        },
    )


_tokenizer = tokenizers.DefaultTokenizer(use_stemmer=False)
_rouge = rouge_scorer.RougeScorer(["rouge1", "rouge2", "rougeL"], tokenizer=_tokenizer)
_smoothing = SmoothingFunction()


def ngram_tokens(text: str) -> Tuple[str, ...]:
    """Lowercased alphanumeric tokens; punctuation and whitespace separate."""
    return tuple(_tokenizer.tokenize(text))


def bleu4(candidate: Sequence[str], reference: Sequence[str]) -> float:
    """
    Sentence BLEU-4 with brevity penalty. Add-one smoothing is applied to the
    2- to 4-gram precisions only when one of them has a zero match count.
    """
    if not candidate or not reference:
        return 0.0
    refs = [list(reference)]
    hyp = list(candidate)
    needs_smoothing = any(
        modified_precision(refs, hyp, n).numerator == 0 for n in range(2, 5)
    )
    smoothing = _smoothing.method2 if needs_smoothing else _smoothing.method0
    return float(sentence_bleu(refs, hyp, weights=BLEU_WEIGHTS, smoothing_function=smoothing))


def ngram_baselines(candidate: str, reference: str) -> Dict[str, float]:
    """BLEU-4 and ROUGE-1/2/L F1 of candidate against reference."""
    cand_tokens = ngram_tokens(candidate)
    ref_tokens = ngram_tokens(reference)
    if not cand_tokens or not ref_tokens:
        return {name: 0.0 for name in NGRAM_METRICS}
    rouge = _rouge.score(reference, candidate)
    return {
        "bleu4": bleu4(cand_tokens, ref_tokens),
        "rouge1": float(rouge["rouge1"].fmeasure),
        "rouge2": float(rouge["rouge2"].fmeasure),
        "rougeL": float(rouge["rougeL"].fmeasure),
    }


def pearson_r(xs: Sequence[float], ys: Sequence[float]) -> float:
    """
    Sample Pearson correlation coefficient.

    :raises UndefinedCorrelation: lengths differ, fewer than two points, or a
        constant series.
    """
    if len(xs) != len(ys):
        raise UndefinedCorrelation(f"series lengths differ: {len(xs)} != {len(ys)}")
    if len(xs) < 2:
        raise UndefinedCorrelation("at least two points are needed")
    if len(set(xs)) == 1 or len(set(ys)) == 1:
        raise UndefinedCorrelation("correlation with a constant series is undefined")
    mx, my = math.fsum(xs) / len(xs), math.fsum(ys) / len(ys)
    dx = [x - mx for x in xs]
    dy = [y - my for y in ys]
    cov = math.fsum(a * b for a, b in zip(dx, dy))
    spread = math.sqrt(math.fsum(a * a for a in dx) * math.fsum(b * b for b in dy))
    if spread == 0.0 or math.isnan(cov / spread):
        raise UndefinedCorrelation("correlation is not a number")
    return max(-1.0, min(1.0, cov / spread))
