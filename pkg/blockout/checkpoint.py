"""
Network checkpoints in the BLKO binary format.

Layout (little-endian): magic "BLKO", version u16, layer count u16, then per layer
a type tag u8 followed by that layer's dimensions and raw float64 parameters:

    1 dense        d_in u32, d_out u32, W, bias
    2 relu         width u32
    3 blockout     d_in u32, d_out u32, k u32, shares_input u8, W̃, bias, θ_out[, θ_in]
    4 softmax loss classes u32
    5 standardize  dim u32, mean, scale

θ_in is present only when shares_input is 0; otherwise the layer reuses the output
cluster parameters of the preceding Blockout layer.
"""

import logging
from pathlib import Path
from typing import List, Optional, Union

from blockout.blockout_layer import BlockoutLayer, ClusterParameters
from blockout.constants import (
    CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
    LAYER_TAG_BLOCKOUT,
    LAYER_TAG_DENSE,
    LAYER_TAG_RELU,
    LAYER_TAG_SOFTMAX_LOSS,
    LAYER_TAG_STANDARDIZE,
)
from blockout.exceptions import BlockoutError, ParseError
from blockout.layers import DenseLayer, ReLU, StandardizeLayer
from blockout.network import Network, SoftmaxLoss
from blockout.shared.binary_io import ByteReader, float64_bytes, pack

logger = logging.getLogger(__name__)


def encode_checkpoint(network: Network) -> bytes:
    parts = [CHECKPOINT_MAGIC, pack("HH", CHECKPOINT_VERSION, len(network.layers))]
    for layer in network.layers:
        if isinstance(layer, DenseLayer):
            parts += [pack("BII", LAYER_TAG_DENSE, layer.d_in, layer.d_out), float64_bytes(layer.weights), float64_bytes(layer.bias)]
        elif isinstance(layer, ReLU):
            parts.append(pack("BI", LAYER_TAG_RELU, layer.width))
        elif isinstance(layer, BlockoutLayer):
            parts += [
                pack("BIIIB", LAYER_TAG_BLOCKOUT, layer.d_in, layer.d_out, layer.k, 0 if layer.owns_input else 1),
                float64_bytes(layer.weights_tilde),
                float64_bytes(layer.bias),
                float64_bytes(layer.cluster_out.logits),
            ]
            if layer.owns_input:
                parts.append(float64_bytes(layer.cluster_in.logits))
        elif isinstance(layer, SoftmaxLoss):
            parts.append(pack("BI", LAYER_TAG_SOFTMAX_LOSS, layer.num_classes))
        elif isinstance(layer, StandardizeLayer):
            parts += [pack("BI", LAYER_TAG_STANDARDIZE, layer.width), float64_bytes(layer.mean), float64_bytes(layer.scale)]
        else:
            raise TypeError(f"cannot checkpoint layer of type {type(layer).__name__}")
    return b"".join(parts)


def decode_checkpoint(data: bytes) -> Network:
    """
    Rebuild a network from checkpoint bytes.

    Raises:
        ParseError: With the byte offset of the first malformed field
    """
    reader = ByteReader(data)
    reader.expect(CHECKPOINT_MAGIC)
    version = reader.unpack("H", "version")
    if version != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {version}", reader.offset - 2)
    count = reader.unpack("H", "layer count")

    layers: List = []
    previous_blockout: Optional[BlockoutLayer] = None
    for index in range(count):
        start = reader.offset
        tag = reader.unpack("B", f"layer {index} tag")
        try:
            if tag == LAYER_TAG_DENSE:
                d_in, d_out = reader.unpack("I", "d_in"), reader.unpack("I", "d_out")
                weights = reader.float64s(d_in * d_out, "dense weights").reshape(d_out, d_in)
                layer = DenseLayer(weights, reader.float64s(d_out, "dense bias"))
            elif tag == LAYER_TAG_RELU:
                layer = ReLU(reader.unpack("I", "relu width"))
            elif tag == LAYER_TAG_BLOCKOUT:
                d_in, d_out, k = reader.unpack("I", "d_in"), reader.unpack("I", "d_out"), reader.unpack("I", "k")
                if k == 0:
                    raise ParseError("cluster count k must be positive", reader.offset - 4)
                shares_input = reader.unpack("B", "shares_input")
                if shares_input not in (0, 1):
                    raise ParseError(f"shares_input flag must be 0 or 1, got {shares_input}", reader.offset - 1)
                weights = reader.float64s(d_in * d_out, "blockout weights").reshape(d_out, d_in)
                bias = reader.float64s(d_out, "blockout bias")
                cluster_out = ClusterParameters(f"layer{index}.out", reader.float64s(d_out * k, "output logits").reshape(d_out, k))
                if shares_input:
                    if len(layers) < 2 or layers[-2] is not previous_blockout:
                        raise ParseError("shared input clusters without an adjacent blockout layer", start)
                    cluster_in = previous_blockout.cluster_out
                else:
                    cluster_in = ClusterParameters(f"layer{index}.in", reader.float64s(d_in * k, "input logits").reshape(d_in, k))
                layer = BlockoutLayer(weights, bias, cluster_out, cluster_in, owns_input=not shares_input)
            elif tag == LAYER_TAG_SOFTMAX_LOSS:
                layer = SoftmaxLoss(reader.unpack("I", "class count"))
            elif tag == LAYER_TAG_STANDARDIZE:
                dim = reader.unpack("I", "standardize width")
                layer = StandardizeLayer(reader.float64s(dim, "mean"), reader.float64s(dim, "scale"))
            else:
                raise ParseError(f"unknown layer tag {tag}", start)
        except ParseError:
            raise
        except BlockoutError as exc:
            raise ParseError(f"invalid layer {index}: {exc}", start) from exc
        previous_blockout = layer if isinstance(layer, BlockoutLayer) else previous_blockout
        layers.append(layer)
    reader.expect_end()

    try:
        return Network(layers)
    except BlockoutError as exc:
        raise ParseError(f"invalid layer stack: {exc}", reader.offset) from exc


def save_checkpoint(network: Network, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(network))
    logger.info(f"Saved checkpoint with {len(network.layers)} layers to {path}")


def load_checkpoint(path: Union[str, Path]) -> Network:
    return decode_checkpoint(Path(path).read_bytes())
