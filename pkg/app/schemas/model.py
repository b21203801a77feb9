"""
Task model schemas
Architecture and optimizer settings for the feed-forward classifier
Reference: https://docs.pydantic.dev/latest/concepts/models/
"""
import hashlib
from enum import Enum

from pydantic import BaseModel, ConfigDict, Field, model_validator


class Activation(str, Enum):
    """Hidden-layer nonlinearity."""

    RELU = "relu"
    TANH = "tanh"


class ModelArch(BaseModel):
    """
    Multilayer perceptron architecture.

    An empty hidden_dims gives a linear (softmax regression) classifier.
    Parameters are laid out layer by layer as W (in x out, row-major) followed by b (out).

    Attributes:
        input_dim: Number of input features
        hidden_dims: Widths of the hidden layers
        num_classes: Number of output logits
        activation: Hidden-layer nonlinearity
    """

    model_config = ConfigDict(frozen=True)

    input_dim: int = Field(..., gt=0, description="Number of input features")
    hidden_dims: tuple[int, ...] = Field(default=(64, 64), description="Hidden layer widths")
    num_classes: int = Field(..., ge=2, description="Number of classes")
    activation: Activation = Field(default=Activation.RELU, description="Hidden-layer activation")

    @model_validator(mode="after")
    def _check_hidden(self) -> "ModelArch":
        if any(width <= 0 for width in self.hidden_dims):
            raise ValueError("hidden_dims must be positive")
        return self

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) for each affine layer."""
        dims = [self.input_dim, *self.hidden_dims, self.num_classes]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def param_count(self) -> int:
        return sum(fan_in * fan_out + fan_out for fan_in, fan_out in self.layer_shapes)

    @property
    def fingerprint(self) -> str:
        """Stable 16-hex-digit hash of the architecture fields."""
        key = f"{self.input_dim}|{','.join(map(str, self.hidden_dims))}|{self.num_classes}|{self.activation.value}"
        return hashlib.sha256(key.encode("ascii")).hexdigest()[:16]


class SgdConfig(BaseModel):
    """
    Local optimizer settings.

    Update rule: v <- momentum * v + g + weight_decay * theta; theta <- theta - learning_rate * v
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    learning_rate: float = Field(default=0.01, gt=0, description="SGD step size")
    momentum: float = Field(default=0.9, ge=0, lt=1, description="Heavy-ball momentum")
    weight_decay: float = Field(default=0.01, ge=0, description="L2 coefficient folded into the momentum buffer")
    epochs: int = Field(default=20, ge=0, description="Passes over the local training set")
    batch_size: int = Field(default=64, gt=0, description="Mini-batch size")
