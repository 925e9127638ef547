import hashlib
from typing import Annotated, List, Literal, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, PositiveInt

Triple = Tuple[int, int, int]


class _Layer(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class Conv3dSpec(_Layer):
    kind: Literal["conv3d"] = "conv3d"
    kernel: Triple = (3, 3, 3)
    stride: Triple = (1, 1, 1)
    out_channels: PositiveInt
    bias: bool = True


class ConvTranspose3dSpec(_Layer):
    kind: Literal["conv_transpose3d"] = "conv_transpose3d"
    kernel: Triple = (1, 4, 4)
    stride: Triple = (1, 2, 2)
    padding: Triple = (0, 1, 1)
    out_channels: PositiveInt
    zero_init: bool = False


class BatchNormSpec(_Layer):
    kind: Literal["batchnorm"] = "batchnorm"
    momentum: float = 0.1
    eps: float = 1e-5


class ReluSpec(_Layer):
    kind: Literal["relu"] = "relu"


class SpatialPoolSpec(_Layer):
    kind: Literal["spatial_pool"] = "spatial_pool"


class FlattenSpec(_Layer):
    kind: Literal["flatten"] = "flatten"


class ReshapeSpec(_Layer):
    kind: Literal["reshape"] = "reshape"
    shape: Tuple[int, ...]


class FullyConnectedSpec(_Layer):
    kind: Literal["fully_connected"] = "fully_connected"
    out_dim: PositiveInt
    zero_init: bool = False


class SigmoidSpec(_Layer):
    kind: Literal["sigmoid"] = "sigmoid"


class SoftmaxSpec(_Layer):
    kind: Literal["softmax"] = "softmax"


LayerSpec = Annotated[
    Union[
        Conv3dSpec,
        ConvTranspose3dSpec,
        BatchNormSpec,
        ReluSpec,
        SpatialPoolSpec,
        FlattenSpec,
        ReshapeSpec,
        FullyConnectedSpec,
        SigmoidSpec,
        SoftmaxSpec,
    ],
    Field(discriminator="kind"),
]


class NetworkSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = "network"
    input_shape: Tuple[int, ...]
    layers: List[LayerSpec]
    output_dim: PositiveInt

    def digest(self) -> bytes:
        return hashlib.sha256(self.model_dump_json().encode("utf-8")).digest()
