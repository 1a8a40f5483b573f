"""Multi-stream encoder-decoder for splice localization."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from ..nncore import (
    BatchNorm2d,
    Conv2d,
    ConvTranspose2x2,
    Layer,
    LayerSpec,
    MaxPool2x2,
    ParamStore,
    ReLU,
    Sequential,
    ShapeError,
    Sigmoid,
    concat_channels,
    concat_channels_backward,
)
from .config import ModelConfig


class MissingInputError(KeyError):
    pass


class ResidualBlock(Layer):
    """conv3x3 -> BN -> ReLU -> conv3x3 -> BN, plus identity, then ReLU."""

    def __init__(self, store: ParamStore, name: str, cin: int, cout: int, rng: np.random.Generator):
        self.body = Sequential([
            Conv2d(store, f"{name}.conv1", LayerSpec.conv3x3(cin, cout), rng),
            BatchNorm2d(store, f"{name}.bn1", cout),
            ReLU(),
            Conv2d(store, f"{name}.conv2", LayerSpec.conv3x3(cout, cout), rng),
            BatchNorm2d(store, f"{name}.bn2", cout),
        ])
        self.shortcut = None if cin == cout else Conv2d(store, f"{name}.proj", LayerSpec.conv1x1(cin, cout), rng)
        self.out_relu = ReLU()

    def forward(self, x, training=False):
        y = self.body.forward(x, training)
        y = y + (x if self.shortcut is None else self.shortcut.forward(x, training))
        return self.out_relu.forward(y, training)

    def backward(self, dout):
        d = self.out_relu.backward(dout)
        dx = self.body.backward(d)
        dx = dx + (d if self.shortcut is None else self.shortcut.backward(d))
        return dx


class EncoderStream:
    """Five conv -> residual block -> maxpool stages and a final 3x3 conv.

    When ``tap`` is set, the stage-2 residual output (before pooling) is
    returned alongside the bottleneck for the decoder skip connection.
    """

    SKIP_STAGE = 1

    def __init__(self, store: ParamStore, name: str, cin: int, config: ModelConfig,
                 rng: np.random.Generator, tap: bool):
        self.tap = tap
        self.stages = []
        prev = cin
        for i, c in enumerate(config.encoder_channels):
            conv = Conv2d(store, f"{name}.stage{i + 1}.conv", LayerSpec.conv3x3(prev, c), rng)
            res = ResidualBlock(store, f"{name}.stage{i + 1}.res", c, c, rng)
            self.stages.append((conv, res, MaxPool2x2()))
            prev = c
        self.head = Conv2d(store, f"{name}.out", LayerSpec.conv3x3(prev, config.stream_out_channels), rng)

    def forward(self, x, training=False):
        skip = None
        for i, (conv, res, pool) in enumerate(self.stages):
            x = res.forward(conv.forward(x, training), training)
            if i == self.SKIP_STAGE and self.tap:
                skip = x
            x = pool.forward(x, training)
        return self.head.forward(x, training), skip

    def backward(self, dout, dskip=None):
        d = self.head.backward(dout)
        for i in reversed(range(len(self.stages))):
            conv, res, pool = self.stages[i]
            d = pool.backward(d)
            if i == self.SKIP_STAGE and self.tap and dskip is not None:
                d = d + dskip
            d = conv.backward(res.backward(d))
        return d


class Decoder:
    """Five 2x2 transpose convolutions, optional skip concat before the fifth,
    then two 3x3 convs, a 1x1 conv to one channel and a sigmoid."""

    def __init__(self, store: ParamStore, config: ModelConfig, rng: np.random.Generator):
        ch = config.decoder_channels
        self.upsample = []
        prev = config.decoder_in_channels
        for i, c in enumerate(ch[:4]):
            layers = [ConvTranspose2x2(store, f"decoder.up{i + 1}", LayerSpec.tconv2x2(prev, c), rng)]
            if i < 3:
                layers.append(ReLU())
            self.upsample.append(Sequential(layers))
            prev = c
        self.layer4_channels = prev
        self.skip_channels = config.skip_channels
        self.up5 = ConvTranspose2x2(
            store, "decoder.up5", LayerSpec.tconv2x2(prev + self.skip_channels, ch[4]), rng)
        self.head = Sequential([
            Conv2d(store, "decoder.conv1", LayerSpec.conv3x3(ch[4], 2), rng),
            Conv2d(store, "decoder.conv2", LayerSpec.conv3x3(2, 2), rng),
            Conv2d(store, "decoder.score", LayerSpec.conv1x1(2, 1), rng),
            Sigmoid(),
        ])
        self._skip_split: list[int] = []

    @property
    def layer_in_channels(self) -> list[int]:
        return [seq.layers[0].spec.in_channels for seq in self.upsample] + [self.up5.spec.in_channels]

    def forward(self, x, skips: list[np.ndarray], training=False):
        for seq in self.upsample:
            x = seq.forward(x, training)
        if skips:
            x = concat_channels([x] + skips)
            self._skip_split = [self.layer4_channels] + [s.shape[1] for s in skips]
        else:
            self._skip_split = []
        x = self.up5.forward(x, training)
        return self.head.forward(x, training)

    def backward(self, dout):
        d = self.up5.backward(self.head.backward(dout))
        dskips: list[np.ndarray] = []
        if self._skip_split:
            parts = concat_channels_backward(d, self._skip_split)
            d, dskips = parts[0], parts[1:]
        for seq in reversed(self.upsample):
            d = seq.backward(d)
        return d, dskips


class Network:
    """The full model: encoder streams fused at the bottleneck, one decoder.

    ``forward`` takes a mapping with ``"image"`` (n, 3, H, W) and one
    (n, 1, H, W) array per configured signal, and returns the (n, 1, H, W)
    probability map.
    """

    def __init__(self, config: ModelConfig, dtype=np.float32):
        self.config = config
        self.store = ParamStore()
        rng = np.random.default_rng(config.seed)
        tapped = set(config.tapped_streams)
        self.streams = [
            EncoderStream(self.store, f"stream{i}", config.stream_in_channels(i), config, rng, tap=i in tapped)
            for i in range(config.num_streams)
        ]
        self.decoder = Decoder(self.store, config, rng)
        if dtype != np.float32:
            self.store.astype(dtype)
        self._bottleneck_channels: list[int] = []

    @property
    def dtype(self):
        return next(iter(self.store.params.values())).data.dtype

    def num_parameters(self) -> int:
        return self.store.num_trainable()

    def _stream_input(self, index: int, inputs: Mapping[str, np.ndarray]) -> np.ndarray:
        parts = []
        for name in self.config.stream_inputs[index]:
            if name not in inputs:
                what = "image" if name == "image" else f"signal {name!r}"
                raise MissingInputError(f"missing {what} required by config {self.config.label()}")
            arr = inputs[name]
            want = 3 if name == "image" else 1
            if arr.ndim != 4 or arr.shape[1] != want:
                raise ShapeError(f"input {name!r} must be (n, {want}, H, W), got {arr.shape}")
            size = self.config.input_size
            if arr.shape[2:] != (size, size):
                raise ShapeError(f"input {name!r} must be {size}x{size}, got {arr.shape[2]}x{arr.shape[3]}")
            parts.append(arr)
        x = parts[0] if len(parts) == 1 else np.concatenate(parts, axis=1)
        return np.ascontiguousarray(x, dtype=self.dtype)

    def forward(self, inputs: Mapping[str, np.ndarray], training: bool = False) -> np.ndarray:
        feats, skips = [], []
        for i, stream in enumerate(self.streams):
            bott, skip = stream.forward(self._stream_input(i, inputs), training)
            feats.append(bott)
            if skip is not None:
                skips.append(skip)
        self._bottleneck_channels = [f.shape[1] for f in feats]
        fused = concat_channels(feats) if len(feats) > 1 else feats[0]
        return self.decoder.forward(fused, skips, training)

    def backward(self, dprob: np.ndarray) -> None:
        dfused, dskips = self.decoder.backward(dprob)
        dfeats = (concat_channels_backward(dfused, self._bottleneck_channels)
                  if len(self.streams) > 1 else [dfused])
        it = iter(dskips)
        for stream, d in zip(self.streams, dfeats):
            stream.backward(d, next(it) if stream.tap else None)

    def bottleneck_shapes(self, inputs: Mapping[str, np.ndarray]) -> list[tuple[int, ...]]:
        """Per-stream bottleneck shapes, leaving every stored array untouched.

        Runs in training mode so an untrained network works too; the
        batch-norm buffers it updates are restored afterwards.
        """
        saved = {name: t.data.copy() for name, t in self.store.items() if not t.requires_grad}
        try:
            shapes = []
            for i, stream in enumerate(self.streams):
                bott, _ = stream.forward(self._stream_input(i, inputs), training=True)
                shapes.append(bott.shape)
        finally:
            for name, data in saved.items():
                self.store[name].data = data
        return shapes


def expected_parameter_count(config: ModelConfig) -> int:
    """Closed-form trainable parameter count of a configuration."""

    def conv(cin, cout, k):
        return cout * cin * k * k + cout

    def bn(c):
        return 2 * c

    total = 0
    for i in range(config.num_streams):
        prev = config.stream_in_channels(i)
        for c in config.encoder_channels:
            total += conv(prev, c, 3) + 2 * (conv(c, c, 3) + bn(c))
            prev = c
        total += conv(prev, config.stream_out_channels, 3)
    ch = config.decoder_channels
    prev = config.decoder_in_channels
    for c in ch[:4]:
        total += conv(prev, c, 2)
        prev = c
    total += conv(prev + config.skip_channels, ch[4], 2)
    total += conv(ch[4], 2, 3) + conv(2, 2, 3) + conv(2, 1, 1)
    return total
