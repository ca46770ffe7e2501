import logging
import math
import os

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, field_validator

from src.errors import ConfigError

load_dotenv()

SCHEDULES = ("cosine", "constant")


class Settings(BaseModel):
    """Environment-driven defaults shared by the CLI and the tool server"""

    data_dir: str = "./data"
    model_dir: str = "./models"
    database_url: str = "sqlite:///seofp_runs.db"
    log_level: str = "INFO"
    seed: int = 1

    @field_validator("log_level")
    @classmethod
    def _known_level(cls, value: str) -> str:
        value = value.upper()
        if value not in logging.getLevelNamesMapping():
            raise ValueError(f"unknown log level {value!r}")
        return value


def get_settings() -> Settings:
    """Read settings from the environment (.env already loaded)"""
    try:
        return Settings(
            data_dir=os.getenv("SEOFP_DATA_DIR", "./data"),
            model_dir=os.getenv("SEOFP_MODEL_DIR", "./models"),
            database_url=os.getenv("DATABASE_URL", "sqlite:///seofp_runs.db"),
            log_level=os.getenv("SEOFP_LOG_LEVEL", "INFO"),
            seed=int(os.getenv("SEOFP_SEED", "1")),
        )
    except (ValidationError, ValueError) as e:
        raise ConfigError(f"invalid environment settings: {e}") from e


class TrainConfig(BaseModel):
    """Hyper-parameters of the quantize-in-the-loop training run.

    The optimizer is SGD with momentum on the MSE loss. Each layer's step is
    the gradient of the per-frame squared error, divided by the number of
    positions a conv kernel is shared across, so one learning rate suits
    dense and conv layers of any frame length. ``schedule`` is ``cosine``
    (decay towards zero over the epochs) or ``constant``. ``x`` is the
    retained bit-width applied to every parameter after each update
    (32 disables it).
    """

    x: int = Field(default=9, ge=9, le=32)
    learning_rate: float = Field(default=0.1, ge=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    schedule: str = "cosine"
    epochs: int = Field(default=30, ge=0)
    batch_size: int = Field(default=32, ge=1)
    seed: int = 1
    loss: str = "mse"

    @field_validator("loss")
    @classmethod
    def _mse_only(cls, value: str) -> str:
        if value.lower() != "mse":
            raise ValueError("only the 'mse' objective is supported")
        return value.lower()

    @field_validator("schedule")
    @classmethod
    def _known_schedule(cls, value: str) -> str:
        if value.lower() not in SCHEDULES:
            raise ValueError(f"schedule must be one of {', '.join(SCHEDULES)}")
        return value.lower()

    def learning_rate_at(self, epoch: int) -> float:
        if self.schedule == "constant" or self.epochs == 0:
            return self.learning_rate
        return self.learning_rate * 0.5 * (1.0 + math.cos(math.pi * epoch / self.epochs))

    @classmethod
    def build(cls, **kwargs) -> "TrainConfig":
        try:
            return cls(**kwargs)
        except ValidationError as e:
            raise ConfigError(f"invalid training config: {e}") from e
