"""
SA-INR — Pydantic Models

Schemas for every non-array record: acquisition and training configuration,
direction sets, metric reports, array headers and the experiment manifest.
"""
import math
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

NoiseModel = Literal["none", "gaussian", "rician"]
SplitTag = Literal["train", "held_out"]


# --- Acquisition ---

class AcquisitionProtocol(BaseModel):
    """Thick-slice acquisition parameters shared by every slice of an experiment."""
    model_config = ConfigDict(extra="forbid")

    thickness_factor: int = Field(4, ge=1)
    noise_sigma: float = Field(10.0, ge=0.0)
    noise_model: NoiseModel = "gaussian"
    # replace the b=0 prior by a thick-slice, noisy copy (stress test)
    degrade_prior: bool = False


class AcquisitionConfig(AcquisitionProtocol):
    """Acquisition parameters plus the seed driving the noise draw."""
    rng_seed: int = 0

    @property
    def has_noise(self) -> bool:
        return self.noise_model != "none" and self.noise_sigma > 0.0

    def noiseless(self) -> "AcquisitionConfig":
        """Same geometry with noise disabled (the trainer's view of M)."""
        return self.model_copy(update={"noise_model": "none", "noise_sigma": 0.0})


class ViewAngle(BaseModel):
    """In-plane slice orientation derived from a diffusion direction."""
    model_config = ConfigDict(extra="forbid")

    theta: float = Field(ge=0.0, lt=math.pi)
    source_direction: tuple[float, float, float]


# --- Directions ---

class DirectionSet(BaseModel):
    """Unit b-vectors on one shell with their train/held-out split."""
    model_config = ConfigDict(extra="forbid")

    directions: list[tuple[float, float, float]]
    b_value: float = Field(gt=0.0)
    split: list[SplitTag]

    @field_validator("directions")
    @classmethod
    def _unit_and_distinct(cls, value: list[tuple[float, float, float]]):
        if not value:
            raise ValueError("direction set is empty")
        vecs = np.asarray(value, dtype=np.float64)
        norms = np.linalg.norm(vecs, axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > 1e-9)
        if bad.size:
            raise ValueError(f"direction {int(bad[0])} is not unit norm (|g|={norms[bad[0]]:.12f})")
        # |g_i x g_j| is the sine of the angle, so it also catches antipodes
        for i in range(len(vecs) - 1):
            sines = np.linalg.norm(np.cross(vecs[i], vecs[i + 1:]), axis=1)
            close = np.flatnonzero(sines < 1e-6)
            if close.size:
                raise ValueError(f"directions {i} and {i + 1 + int(close[0])} coincide up to sign")
        return value

    @model_validator(mode="after")
    def _split_covers_directions(self):
        if len(self.split) != len(self.directions):
            raise ValueError(
                f"split has {len(self.split)} tags for {len(self.directions)} directions"
            )
        return self

    @property
    def vectors(self) -> np.ndarray:
        return np.asarray(self.directions, dtype=np.float64)

    @property
    def train_indices(self) -> list[int]:
        return [i for i, tag in enumerate(self.split) if tag == "train"]

    @property
    def held_out_indices(self) -> list[int]:
        return [i for i, tag in enumerate(self.split) if tag == "held_out"]

    def __len__(self) -> int:
        return len(self.directions)

    def subset(self, indices: list[int]) -> "DirectionSet":
        """The given directions, in the given order, with their split tags."""
        return DirectionSet(
            directions=[self.directions[i] for i in indices],
            b_value=self.b_value,
            split=[self.split[i] for i in indices],
        )


class DirectionProtocol(BaseModel):
    """How many directions to draw and how many of them to train on."""
    model_config = ConfigDict(extra="forbid")

    count: int = Field(50, ge=1)
    train: int = Field(40, ge=1)
    b_value: float = Field(1000.0, gt=0.0)

    @model_validator(mode="after")
    def _train_fits(self):
        if self.train > self.count:
            raise ValueError(f"train={self.train} exceeds count={self.count}")
        return self


# --- Network and training ---

class InrConfig(BaseModel):
    """Architecture hyper-parameters of the spatial-angular INR."""
    model_config = ConfigDict(extra="forbid")

    spatial_features: int = Field(64, ge=1)
    spatial_sigma: float = Field(8.0, gt=0.0)
    angular_features: int = Field(16, ge=1)
    angular_sigma: float = Field(1.0, gt=0.0)
    hidden_layers: int = Field(4, ge=1)
    hidden_width: int = Field(64, ge=1)
    film_hidden: int = Field(32, ge=1)
    prior_channels: int = Field(16, ge=1)
    prior_blocks: int = Field(3, ge=1)
    prior_growth: int = Field(8, ge=1)
    prior_layers_per_block: int = Field(3, ge=1)
    prior_padding: Literal["reflect", "circular", "zeros"] = "reflect"
    film_zero_init: bool = True


class TrainingProtocol(BaseModel):
    """Optimizer budget and model variant, without the seed."""
    model_config = ConfigDict(extra="forbid")

    iterations: int = Field(2000, gt=0)
    directions_per_step: int = Field(8, gt=0)
    learning_rate: float = Field(1e-3, gt=0.0)
    log_every: int = Field(100, gt=0)
    use_prior: bool = True
    inr: InrConfig = Field(default_factory=InrConfig)


class TrainConfig(TrainingProtocol):
    """Everything train_slice needs; deterministic given these fields."""
    seed: int = 0


class TrainReport(BaseModel):
    """Loss history of one training run."""
    loss_curve: list[tuple[int, float]]
    initial_loss: float
    final_loss: float
    wall_time: float

    @field_validator("loss_curve")
    @classmethod
    def _finite_nonempty(cls, value: list[tuple[int, float]]):
        if not value:
            raise ValueError("loss curve is empty")
        if not all(math.isfinite(loss) for _, loss in value):
            raise ValueError("loss curve contains non-finite values")
        return value


# --- Metrics ---

class DirectionMetrics(BaseModel):
    """Image-quality metrics for one direction."""
    index: int
    psnr: float
    ssim: float
    nmse: float
    nmse_ratio: float  # NMSE on DWI/S0


class MetricSummary(BaseModel):
    mean: float
    std: float


class MetricReport(BaseModel):
    """Per-direction metrics and Mean(Std) aggregates for one split and method."""
    split: Literal["trained", "unseen"]
    method: str
    directions: list[DirectionMetrics]
    aggregates: dict[str, MetricSummary]

    @classmethod
    def from_directions(cls, split: str, method: str, rows: list[DirectionMetrics]) -> "MetricReport":
        aggregates = {}
        for key in ("psnr", "ssim", "nmse", "nmse_ratio"):
            values = np.array([getattr(row, key) for row in rows], dtype=np.float64)
            aggregates[key] = MetricSummary(mean=float(values.mean()), std=float(values.std()))
        return cls(split=split, method=method, directions=rows, aggregates=aggregates)


class MapComparison(BaseModel):
    """NMSE of each DTI map of one fit against a reference fit."""
    slice_index: int = 0
    label: str
    reference: str
    direction_count: int
    nmse: dict[str, float]


# --- Storage ---

class ArrayHeader(BaseModel):
    """Header document of a sidecar array."""
    model_config = ConfigDict(extra="forbid")

    name: str
    dtype: Literal["float32"] = "float32"
    dims: list[int]
    units: str = ""
    endianness: Literal["little"] = "little"
    fnv1a64: str = Field(pattern=r"^[0-9a-f]{16}$")

    @field_validator("dims")
    @classmethod
    def _positive_dims(cls, value: list[int]):
        if any(d < 0 for d in value):
            raise ValueError(f"negative dimension in {value}")
        return value


class PhantomSpec(BaseModel):
    """Slice geometry of the synthetic phantom."""
    model_config = ConfigDict(extra="forbid")

    size: int = Field(64, ge=32)
    pixel_size_mm: float = Field(2.0, gt=0.0)

    @field_validator("size")
    @classmethod
    def _divisible_by_eight(cls, value: int):
        if value % 8:
            raise ValueError(f"size {value} is not divisible by 8")
        return value


class ExperimentManifest(BaseModel):
    """The full protocol of one experiment; all randomness flows from the two seeds."""
    model_config = ConfigDict(extra="forbid")

    version: str
    seed_data: int = 0
    seed_train: int = 0
    slices: int = Field(1, ge=1)
    phantom: PhantomSpec = Field(default_factory=PhantomSpec)
    directions: DirectionProtocol = Field(default_factory=DirectionProtocol)
    acquisition: AcquisitionProtocol = Field(default_factory=AcquisitionProtocol)
    training: TrainingProtocol = Field(default_factory=TrainingProtocol)
    ablation: bool = False

    @model_validator(mode="after")
    def _consistent(self):
        t_s = self.acquisition.thickness_factor
        if self.phantom.size % t_s:
            raise ValueError(f"phantom.size {self.phantom.size} is not divisible by thickness_factor {t_s}")
        if self.training.directions_per_step > self.directions.train:
            raise ValueError(
                f"training.directions_per_step {self.training.directions_per_step} "
                f"exceeds directions.train {self.directions.train}"
            )
        return self

    def slice_seed(self, slice_index: int) -> int:
        return self.seed_data + slice_index

    def acquisition_config(self, slice_index: int = 0) -> AcquisitionConfig:
        return AcquisitionConfig(**self.acquisition.model_dump(), rng_seed=self.slice_seed(slice_index))

    def train_config(self, use_prior: Optional[bool] = None) -> TrainConfig:
        fields = self.training.model_dump()
        if use_prior is not None:
            fields["use_prior"] = use_prior
        return TrainConfig(**fields, seed=self.seed_train)
