"""
Application configuration
Settings come from environment variables (pydantic-settings); the pipeline
configuration comes from a TOML file with command-line overrides
"""
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, Literal, Mapping, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.core.errors import ConfigError
from app.schemas.forest import ForestParams


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    model_config = SettingsConfigDict(env_file=".env", case_sensitive=True, extra="ignore")

    # Application Settings
    APP_NAME: str = "Glass Defect Inspector"
    APP_VERSION: str = "1.0.0"
    API_V1_STR: str = "/api/v1"
    DEBUG: bool = False

    # Logging Configuration
    LOG_LEVEL: str = "INFO"
    LOG_FILE: Optional[str] = None

    # Pipeline
    CONFIG_FILE: Optional[Path] = Field(default=None, description="Default pipeline config (TOML)")
    MODEL_DIR: Path = Field(default=Path("models"), description="Directory holding bd.model.json and dc.model.json")
    CACHE_DIR: Optional[Path] = None
    JOBS: int = Field(default=1, ge=1)

    @field_validator("LOG_LEVEL", mode="before")
    @classmethod
    def normalise_log_level(cls, v):
        """Accept lower-case level names."""
        return v.upper() if isinstance(v, str) else v


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ProposalConfig(_Section):
    """Stage I constants (continuous region selection)."""

    sobel_kernel: Literal[3, 5, 7] = 5
    threshold: int = Field(default=200, ge=0, le=255)
    dilation_kernel: Tuple[int, int] = (3, 3)
    t_nms: float = Field(default=0.2, ge=0.0, le=1.0)
    min_area: int = Field(default=1, ge=1)
    # frames larger than tile_size in either direction are processed in tiles
    tile_size: Optional[int] = Field(default=4096, ge=64)
    # largest expected defect box, footprint included
    max_defect_extent: int = Field(default=160, ge=1)
    # None means twice max_defect_extent
    tile_overlap: Optional[int] = Field(default=None, ge=0)
    luma: bool = False

    @field_validator("dilation_kernel")
    @classmethod
    def odd_kernel(cls, v):
        if any(d < 1 or d % 2 == 0 for d in v):
            raise ValueError(f"dilation kernel dimensions must be odd and >= 1, got {v}")
        return v

    @model_validator(mode="after")
    def overlap_fits_tile(self):
        if self.tile_size is not None and self.overlap >= self.tile_size:
            raise ValueError("tile_overlap must be smaller than tile_size")
        return self

    @property
    def overlap(self) -> int:
        """Tile overlap; whole defects then always fit inside one tile."""
        if self.tile_overlap is not None:
            return self.tile_overlap
        return 2 * self.max_defect_extent

    @property
    def footprint(self) -> int:
        """Pixels by which a stage-I box extends past the bright pixels it bounds."""
        return self.sobel_kernel // 2 + max(self.dilation_kernel) // 2


class EmbeddingConfig(_Section):
    provider: Literal["baseline", "onnx"] = "baseline"
    model_path: Optional[Path] = None
    dim: int = Field(default=512, ge=1)
    cache_dir: Optional[Path] = Field(default_factory=lambda: settings.CACHE_DIR)

    @model_validator(mode="after")
    def model_for_onnx(self):
        if self.provider == "onnx" and self.model_path is None:
            raise ValueError("embedding.provider 'onnx' requires embedding.model_path")
        return self


class SemisupConfig(_Section):
    k: int = Field(default=10, ge=1)
    keep: int = Field(default=6, ge=1)
    # None means 1% of the initial point count
    drop_threshold: Optional[int] = Field(default=None, ge=1)
    seed: int = 0
    max_iter: int = Field(default=100, ge=1)
    n_init: int = Field(default=1, ge=1)
    strict_drop: bool = False
    # keep a low-ranked cluster whole when its labels lean defect
    spare_clusters: bool = True

    @model_validator(mode="after")
    def keep_below_k(self):
        if self.keep >= self.k:
            raise ValueError(f"semisup.keep ({self.keep}) must be smaller than semisup.k ({self.k})")
        return self


class ClassifyConfig(_Section):
    dc_scope: Literal["all", "defects-only"] = "all"


class EvaluationConfig(_Section):
    iou: float = Field(default=0.3, gt=0.0, le=1.0)
    # None means the stage-I footprint of the proposal config
    truth_margin: Optional[int] = Field(default=None, ge=0)
    # "defect": positives are defect verdicts; "region": positives are correctly judged regions
    accounting: Literal["defect", "region"] = "defect"


class SynthConfig(_Section):
    width: int = Field(default=640, ge=64)
    height: int = Field(default=480, ge=64)
    background_mean: float = Field(default=30.0, ge=0.0, le=200.0)
    noise_sigma: float = Field(default=0.5, ge=0.0)


class PipelineConfig(_Section):
    """Every tunable of the pipeline; defaults are the standard inspection constants."""

    seed: Optional[int] = None
    jobs: int = Field(default_factory=lambda: settings.JOBS, ge=1)
    proposals: ProposalConfig = Field(default_factory=ProposalConfig)
    embedding: EmbeddingConfig = Field(default_factory=EmbeddingConfig)
    semisup: SemisupConfig = Field(default_factory=SemisupConfig)
    forest: ForestParams = Field(default_factory=ForestParams)
    classify: ClassifyConfig = Field(default_factory=ClassifyConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    synth: SynthConfig = Field(default_factory=SynthConfig)

    @model_validator(mode="after")
    def propagate_seed(self):
        """A global seed overrides the per-section seeds."""
        if self.seed is not None:
            self.semisup.seed = self.seed
            self.forest.seed = self.seed
        return self

    @property
    def truth_margin(self) -> int:
        if self.evaluation.truth_margin is not None:
            return self.evaluation.truth_margin
        return self.proposals.footprint


def _set_dotted(data: Dict[str, Any], dotted: str, value: Any) -> None:
    node = data
    *parents, leaf = dotted.split(".")
    for key in parents:
        child = node.setdefault(key, {})
        if not isinstance(child, dict):
            raise ConfigError(f"cannot override '{dotted}': '{key}' is not a section")
        node = child
    node[leaf] = value


def load_pipeline_config(
    path: Optional[Path] = None, overrides: Optional[Mapping[str, Any]] = None
) -> PipelineConfig:
    """Read a TOML config file, apply dotted-key overrides and validate."""
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid TOML: {exc}") from exc

    for key, value in (overrides or {}).items():
        if value is not None:
            _set_dotted(data, key, value)

    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as exc:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in exc.errors()
        )
        raise ConfigError(f"invalid pipeline config: {problems}") from exc


# Global settings instance
settings = Settings()
