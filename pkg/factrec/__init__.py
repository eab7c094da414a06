__version__ = "0.1.0"

from .composer import ComposerTemplate, compose_explanation, parse_composed
from .core import normalize_statement, validate_triplet
from .metrics import ngram_baselines, nli_alignment, pearson_r, st2exp, stent_stcoh
from .models import (
    BenchmarkRecord,
    DomainConfig,
    GeneratedExplanation,
    Interaction,
    MetricRecord,
    NliVerdict,
    StatementTriplet,
)

__all__ = (
    "BenchmarkRecord",
    "ComposerTemplate",
    "DomainConfig",
    "GeneratedExplanation",
    "Interaction",
    "MetricRecord",
    "NliVerdict",
    "StatementTriplet",
    "compose_explanation",
    "ngram_baselines",
    "nli_alignment",
    "normalize_statement",
    "parse_composed",
    "pearson_r",
    "st2exp",
    "stent_stcoh",
    "validate_triplet",
)
