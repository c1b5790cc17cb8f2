import logging
import math
from typing import Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from scissor import __version__

LOG_LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


class Settings(BaseSettings):
    LOG: Literal["error", "warn", "info", "debug"] = "info"
    SOURCE_DATE_EPOCH: int = 0
    TOOL_VERSION: str = __version__

    model_config = SettingsConfigDict(env_prefix="SCISSOR_", env_file=".env", extra="ignore")

    @property
    def log_level(self) -> int:
        return LOG_LEVELS[self.LOG]


settings = Settings()


class StrictModel(BaseModel):
    """Config base: unknown keys are an error, instances are immutable."""

    model_config = ConfigDict(extra="forbid", frozen=True)


class GeneratorConfig(StrictModel):
    seed: int = Field(0, ge=0, lt=2**64)
    segments_min: int = Field(3, ge=2)
    segments_max: int = 15
    straight_len_range: Tuple[float, float] = (20.0, 150.0)
    turn_radius_range: Tuple[float, float] = (5.0, 47.0)
    turn_angle_range: Tuple[float, float] = (15.0, 120.0)
    p_straight: float = Field(0.3, ge=0)
    p_left: float = Field(0.35, ge=0)
    p_right: float = Field(0.35, ge=0)
    friction: float = Field(0.8, gt=0, le=2)
    clearance_m: float = Field(8.0, gt=0)
    min_length_m: float = Field(50.0, gt=0)
    max_retries: int = Field(200, ge=1)

    @model_validator(mode="after")
    def _check_ranges(self):
        if self.segments_max < self.segments_min:
            raise ValueError("segments_max must be >= segments_min")
        lo, hi = self.straight_len_range
        if not 0 < lo <= hi:
            raise ValueError("straight_len_range must be a non-empty positive interval")
        lo, hi = self.turn_radius_range
        if not 2 <= lo <= hi <= 47:
            raise ValueError("turn_radius_range must lie inside [2, 47]")
        lo, hi = self.turn_angle_range
        if not 15 <= lo <= hi <= 120:
            raise ValueError("turn_angle_range must lie inside [15, 120]")
        total = self.p_straight + self.p_left + self.p_right
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"segment probabilities sum to {total}, expected 1")
        return self


class DriverConfig(StrictModel):
    name: str = "custom"
    aggression: float = Field(1.5, gt=0)
    mu_assumed: float = Field(0.7, gt=0, le=2)
    v_max: float = Field(30.0, gt=0)
    a_acc: float = Field(3.0, gt=0)
    a_dec: float = Field(6.0, gt=0)
    perception_noise: float = Field(0.25, ge=0, lt=0.5)
    noise_seed: int = Field(0, ge=0, lt=2**64)
    g: float = Field(9.81, gt=0)
    overhead_s: float = Field(5.0, ge=0)
    grid_m: float = Field(1.0, gt=0)


class FeatureConfig(StrictModel):
    # Angle statistics over |angle| when true, over signed angles otherwise.
    absolute_angles: bool = True


class Hyperparameters(StrictModel):
    l2: float = Field(0.01, ge=0)
    max_iter: int = Field(10_000, ge=1)
    tol: float = Field(1e-6, gt=0)
    min_leaf: int = Field(5, ge=1)
    max_depth: Optional[int] = Field(None, ge=1)
    n_trees: int = Field(100, ge=1)
    forest_min_leaf: int = Field(1, ge=1)
    max_features: Optional[int] = Field(None, ge=1)
    var_floor: float = Field(1e-9, gt=0)
    laplace: float = Field(1.0, ge=0)

    def features_per_split(self, n_features: int) -> int:
        if self.max_features is not None:
            return min(self.max_features, n_features)
        return max(1, math.ceil(math.sqrt(n_features)))


class CostModel(StrictModel):
    generation_s: float = Field(0.5, ge=0)
    prediction_s: float = Field(0.01, ge=0)
    retrain_coeff: float = Field(0.2, ge=0)
    retrain_exponent: float = Field(0.5, ge=0)
    bootstrap_tests: int = Field(60, ge=1)
    retrain_every: int = Field(1, ge=1)

    def retrain_s(self, n_rows: int) -> float:
        return self.retrain_coeff * float(n_rows) ** self.retrain_exponent


class LearnConfig(StrictModel):
    kind: Literal["logistic", "decision_tree", "random_forest", "naive_bayes", "majority"] = "logistic"
    feature_set: Literal["full", "segment"] = "full"
    train_fraction: float = Field(0.8, gt=0, lt=1)
    rebalance: bool = True
    kfold: Optional[int] = Field(None, ge=2)
    hyper: Hyperparameters = Field(default_factory=Hyperparameters)


# (safe_fraction, unsafe_fraction) of the four standard offline pools.
STANDARD_COMPOSITIONS: Tuple[Tuple[float, float], ...] = (
    (0.95, 0.05), (0.8, 0.2), (0.6, 0.4), (0.3, 0.7))


class ExperimentConfig(StrictModel):
    suite_size: int = Field(50, ge=1)
    reach_n: int = Field(10, ge=1)
    reps: int = Field(30, ge=1)
    compositions: Tuple[Tuple[float, float], ...] = STANDARD_COMPOSITIONS
    pool_size: Optional[int] = Field(None, ge=1)

    @model_validator(mode="after")
    def _check_compositions(self):
        for safe, unsafe in self.compositions:
            if safe < 0 or unsafe < 0 or abs(safe + unsafe - 1.0) > 1e-9:
                raise ValueError(f"pool composition ({safe}, {unsafe}) must be two fractions summing to 1")
        return self


class RealTimeConfig(StrictModel):
    mode: Literal["baseline", "pretrained", "adaptive"] = "baseline"
    budget_s: float = Field(21_600.0, gt=0)
    max_tests: int = Field(100_000, ge=1)
    cost: CostModel = Field(default_factory=CostModel)
