"""Strict JSON configuration.  Unknown keys are rejected at every level."""
import json
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..attributions import AttributionMethodSpec
from ..aggregation import StrategySpec
from ..core import Shape
from ..errors import ConfigError
from ..models import ToyLinear, ToyMlp
from ..perturb import BaselineSpec, NoiseSpec, RegionMaskSpec


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ModelConfig(_Strict):
    kind: Literal["contrast_detector", "blob_detector", "toy_mlp", "toy_linear",
                  "external"] = "contrast_detector"
    seed: int = 1
    sizes: list[int] = [256, 32, 1]
    activation: Literal["tanh", "relu"] = "tanh"
    output_scale: float = 1.0
    params: dict[str, Union[int, float]] = {}
    command: list[str] = []

    @model_validator(mode="after")
    def _external_needs_command(self):
        if self.kind == "external" and not self.command:
            raise ValueError("external models need a command")
        return self

    def build(self, shape):
        """Instantiate the model; external models spawn their process here."""
        d = shape.d
        try:
            if self.kind == "contrast_detector":
                return ToyMlp.contrast_detector(d, seed=self.seed, **self.params)
            if self.kind == "blob_detector":
                if shape.channels != 1:
                    raise ConfigError("blob_detector needs single-channel inputs")
                return ToyMlp.blob_detector(shape.height, shape.width, seed=self.seed,
                                            **self.params)
            if self.kind == "toy_mlp":
                if self.sizes[0] != d:
                    raise ConfigError(f"toy_mlp input size {self.sizes[0]} != d = {d}")
                return ToyMlp.random(self.sizes, self.seed, self.activation,
                                     output_scale=self.output_scale)
            if self.kind == "toy_linear":
                from ..rng import Rng
                return ToyLinear(Rng(self.seed).normal(d), 0.0)
        except TypeError as exc:
            raise ConfigError(f"bad model params: {exc}") from exc
        from ..msp import ExternalModel
        model = ExternalModel(self.command)
        if model.input_dim != d:
            model.close()
            raise ConfigError(f"external model expects d = {model.input_dim}, data has d = {d}")
        return model


class DatasetConfig(_Strict):
    n: int = Field(20, ge=1)
    height: int = Field(16, ge=1)
    width: int = Field(16, ge=1)
    fraction_range: tuple[float, float] = (0.05, 0.6)
    noise_level: float = Field(0.05, ge=0)

    @property
    def shape(self):
        return Shape(self.height, self.width, 1)


class MethodConfig(_Strict):
    kind: Literal["saliency", "input_x_grad", "integrated_gradients", "smoothgrad", "vargrad",
                  "occlusion", "lime_patch"]
    name: str = ""
    ig_steps: int = 64
    ig_baseline: Literal["zeros", "mean", "blur"] = "zeros"
    sg_samples: int = 25
    sg_sigma: float = 0.1
    occlusion_patch: tuple[int, int] = (4, 4)
    occlusion_baseline: Literal["zeros", "mean", "blur"] = "zeros"
    lime_patch_size: tuple[int, int] = (4, 4)
    lime_samples: int = 200
    lime_lambda: float = 0.0
    lime_baseline: Literal["zeros", "mean", "blur"] = "zeros"
    blur_sigma: float = 2.0
    seed: int = 0
    normalize_output: bool = True

    def spec(self):
        return AttributionMethodSpec(**self.model_dump())


class CustomTerm(_Strict):
    metric: Literal["sens", "infd"]
    weight: float = Field(1.0, ge=0)


class StrategyConfig(_Strict):
    kind: Literal["mean", "var", "robust", "faith", "opt", "custom"]
    name: str = ""
    var_epsilon: float = Field(1e-6, gt=0)
    frobenius_normalize: Optional[bool] = None
    terms: list[CustomTerm] = []

    @model_validator(mode="after")
    def _custom_terms(self):
        if (self.kind == "custom") != bool(self.terms):
            raise ValueError("terms are required for, and only allowed on, custom strategies")
        return self

    @property
    def label(self):
        return self.name or {"mean": "AGG_Mean", "var": "AGG_Var", "robust": "AGG_robust",
                             "faith": "AGG_faith", "opt": "AGG_opt"}.get(self.kind, "AGG_custom")

    def spec(self, sample_sets=None):
        custom = ()
        if self.kind == "custom":
            custom = tuple((sample_sets[t.metric], t.weight) for t in self.terms)
        return StrategySpec(self.kind, self.var_epsilon, custom, self.frobenius_normalize,
                            self.label)


class PerturbConfig(_Strict):
    noise_bound: float = Field(0.1, gt=0)
    mask_mode: Literal["square", "scattered"] = "square"
    mask_fraction: float = Field(0.2, gt=0, lt=1)
    baseline: Literal["blur", "zeros", "mean"] = "blur"
    blur_sigma: float = Field(2.0, gt=0)

    @property
    def noise(self):
        return NoiseSpec(self.noise_bound)

    @property
    def masks(self):
        return RegionMaskSpec(self.mask_mode, self.mask_fraction)

    @property
    def baseline_spec(self):
        return BaselineSpec(self.baseline, self.blur_sigma)


def default_roster():
    return [MethodConfig(kind=k) for k in ("saliency", "input_x_grad", "integrated_gradients",
                                           "smoothgrad", "vargrad", "occlusion")]


def default_strategies():
    return [StrategyConfig(kind=k) for k in ("mean", "var", "robust", "faith", "opt")]


class LimeExperimentConfig(_Strict):
    model: ModelConfig = ModelConfig(kind="blob_detector")
    n_per_group: int = Field(100, ge=1)
    height: int = 16
    width: int = 16
    small_fraction: tuple[float, float] = (0.05, 0.05)
    large_fraction: tuple[float, float] = (0.6, 0.6)
    noise_level: float = Field(0.05, ge=0)
    patch_sizes: list[tuple[int, int]] = [(2, 2), (4, 4)]
    lambdas: list[float] = [0.0, 0.01, 0.1]
    lime_samples: int = 200
    m_agg: int = Field(50, ge=1)
    perturbation: PerturbConfig = PerturbConfig(baseline="zeros")

    @property
    def shape(self):
        return Shape(self.height, self.width, 1)


class VerifyConfig(_Strict):
    identity_cases: int = 100
    qp_cases: int = 200
    gram_cases: int = 100
    gradient_cases: int = 20
    regret_pool: int = 1000
    regret_trials: int = 20
    regret_m_grid: list[int] = [10, 25, 50, 100, 200]


class BenchConfig(_Strict):
    seed: int = Field(0, ge=0, lt=2**64)
    model: ModelConfig = ModelConfig()
    dataset: DatasetConfig = DatasetConfig()
    methods: list[MethodConfig] = Field(default_factory=default_roster, min_length=1)
    strategies: list[StrategyConfig] = Field(default_factory=default_strategies)
    m_agg: int = Field(50, ge=1)
    m_eval: int = Field(200, ge=1)
    perturbation: PerturbConfig = PerturbConfig()
    output_dir: Optional[str] = None
    heatmaps: bool = False
    threads: int = Field(1, ge=0)
    lime_experiment: LimeExperimentConfig = LimeExperimentConfig()
    verify: VerifyConfig = VerifyConfig()

    @model_validator(mode="after")
    def _unique_names(self):
        names = [m.spec().name for m in self.methods] + [s.label for s in self.strategies]
        if len(set(names)) != len(names):
            raise ValueError(f"row names must be unique, got {names}")
        return self

    def roster(self):
        return [m.spec() for m in self.methods]


def parse_config(data):
    """Validate a config mapping; errors become :class:`ConfigError`."""
    try:
        return BenchConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path=None):
    if path is None:
        return BenchConfig()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(data)


def override(config, **changes):
    """Return a re-validated copy with top-level fields replaced."""
    data = config.model_dump()
    data.update({k: v for k, v in changes.items() if v is not None})
    return parse_config(data)
