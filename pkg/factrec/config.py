import json
import logging
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError
from typing_extensions import Literal

from factrec.backends import BackendConfig
from factrec.composer import ComposerTemplate
from factrec.datasets import SplitSpec
from factrec.exceptions import ConfigError
from factrec.models import DomainConfig

logger = logging.getLogger(__name__)

ReportFormat = Literal["csv", "json", "markdown"]

DEFAULT_CORRELATIONS: Tuple[Tuple[str, str], ...] = (
    ("st2exp_p", "bleu4"),
    ("st2exp_r", "bleu4"),
    ("st2exp_p", "rougeL"),
    ("st2exp_r", "rougeL"),
)


class RunConfig(BaseModel):
    """
    Settings shared by every command. Loaded from the JSON file given with
    --config; each field has a default so a file is optional.

    :param domain_config: packaged domain name ("toys", "clothes", ...) or a path to a domain JSON file.
    :param dataset: dataset label written into metric records; defaults to the domain name.
    :param stub_fixtures: JSON object mapping trigger substrings to scripted stub replies.
    :param id_join_threshold: largest tolerated fraction of generated ids missing from the benchmark.
    :param correlations: metric pairs correlated by the report command.
    :param review_reference: also score n-gram baselines against the raw review text.
    :param emit_stcoh_f1: write StCoh-F1 records when both coherence values are positive.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    domain_config: str = "generic"
    dataset: str = ""
    extractor_backend: BackendConfig = BackendConfig(model_id="extractor")
    judge_backend: BackendConfig = BackendConfig(model_id="judge")
    nli_backend: BackendConfig = BackendConfig(model_id="nli")
    parallelism: int = Field(default=4, ge=1)
    split: SplitSpec = SplitSpec()
    report_formats: Tuple[ReportFormat, ...] = ("markdown",)
    composer: ComposerTemplate = ComposerTemplate()
    judge_answer_map: Literal["binary", "graded"] = "binary"
    stub_fixtures: Optional[str] = None
    id_join_threshold: float = Field(default=0.05, ge=0.0, le=1.0)
    correlations: Tuple[Tuple[str, str], ...] = DEFAULT_CORRELATIONS
    correlation_granularity: Literal["system", "interaction"] = "system"
    min_review_chars: int = Field(default=1, ge=1)
    review_reference: bool = False
    emit_stcoh_f1: bool = False
    topics_k: int = Field(default=10, ge=1)

    def with_overrides(
        self,
        parallelism: Optional[int] = None,
        seed: Optional[int] = None,
        force_stub: bool = False,
    ) -> "RunConfig":
        update: Dict[str, Any] = {}
        if parallelism is not None:
            if parallelism < 1:
                raise ConfigError("--parallelism must be at least 1")
            update["parallelism"] = parallelism
        if seed is not None:
            update["split"] = self.split.model_copy(update={"seed": seed})
        if force_stub:
            for name in ("extractor_backend", "judge_backend", "nli_backend"):
                update[name] = getattr(self, name).model_copy(update={"kind": "stub"})
        return self.model_copy(update=update)


def _read_json(path: Path, what: str) -> Any:
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except (OSError, ValueError) as e:
        raise ConfigError(f"cannot read {what} {path}: {e}") from e


def load_run_config(path: Optional[Union[str, Path]] = None) -> RunConfig:
    """
    :raises ConfigError: unreadable file or invalid settings.
    """
    if path is None:
        return RunConfig()
    path = Path(path)
    data = _read_json(path, "run config")
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid run config {path}:\n{e}") from e
    # relative paths inside the file are relative to the file
    update: Dict[str, Any] = {}
    if cfg.stub_fixtures and not Path(cfg.stub_fixtures).is_absolute():
        update["stub_fixtures"] = str(path.parent / cfg.stub_fixtures)
    if cfg.domain_config.endswith(".json") and not Path(cfg.domain_config).is_absolute():
        update["domain_config"] = str(path.parent / cfg.domain_config)
    for name in ("extractor_backend", "judge_backend", "nli_backend"):
        backend: BackendConfig = getattr(cfg, name)
        if backend.cache_path and not Path(backend.cache_path).is_absolute():
            update[name] = backend.model_copy(
                update={"cache_path": str(path.parent / backend.cache_path)}
            )
    logger.debug("loaded run config %s", path)
    return cfg.model_copy(update=update) if update else cfg


def packaged_domains() -> List[str]:
    return sorted(
        entry.name[: -len(".json")]
        for entry in resources.files("factrec.domains").iterdir()
        if entry.name.endswith(".json")
    )


def load_domain_config(ref: str) -> DomainConfig:
    """
    Resolve a domain by packaged name or file path.

    :raises ConfigError: unknown name, unreadable file or invalid document.
    """
    path = Path(ref)
    if path.suffix == ".json" or path.exists():
        data = _read_json(path, "domain config")
        source = str(path)
    else:
        entry = resources.files("factrec.domains").joinpath(f"{ref}.json")
        if not entry.is_file():
            raise ConfigError(
                f"unknown domain {ref!r}; packaged domains: {', '.join(packaged_domains())}"
            )
        data = json.loads(entry.read_text(encoding="utf-8"))
        source = f"packaged domain {ref}"
    try:
        return DomainConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid domain config ({source}):\n{e}") from e


def save_domain_config(path: Union[str, Path], cfg: DomainConfig) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(cfg.model_dump(exclude_none=True), f, ensure_ascii=False, indent=2)
        f.write("\n")
