"""Trainable Siamese embedding networks with contrastive loss.

Two desk-scale encoders stand in for the large pretrained backbones while
keeping the same contracts: a face path (per-frame convolutional encoder
whose outputs feed a recurrent aggregator; the final recurrent state is
the embedding) and a voice path (residual convolutional encoder over
normalized 512x300 log-spectrograms with global temporal pooling). All
arithmetic is float64 and deterministic given the seed.

The pair distance d is the Euclidean norm ||a - b||; the loss is
L = 1/(2N) sum_n [ y_n d_n^2 + (1 - y_n) max(M - d_n, 0)^2 ].
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .audiofeat import Spectrogram
from .core import FeatureVector
from .errors import DataError, DimensionError, NumericError

NN_MAGIC = b"KVNN"
NN_VERSION = 1

DEFAULT_MARGIN = 1.0

torch.set_default_dtype(torch.float64)


@dataclass(frozen=True)
class NetSpec:
    """Architecture description; shapes are validated at construction."""

    kind: str                      # "face" | "voice" | "fusion"
    input_shape: tuple[int, ...]   # face: (H, W); voice: (freq, time); fusion: (in,)
    output_dim: int
    conv_channels: tuple[int, ...] = ()
    conv_kernel: int = 3
    recurrent_width: int = 0       # face only; equals output_dim

    def __post_init__(self):
        if self.kind not in ("face", "voice", "fusion"):
            raise DataError(f"unknown net kind {self.kind!r}")
        if self.output_dim <= 0:
            raise DataError("output_dim must be positive")
        if self.kind == "face" and self.recurrent_width != self.output_dim:
            raise DataError("face nets use the final recurrent state: "
                            "recurrent_width must equal output_dim")
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "conv_channels", tuple(self.conv_channels))


def face_spec(
    input_size: int = 32,
    conv_channels: tuple[int, ...] = (8, 16, 32),
    recurrent_width: int = 128,
) -> NetSpec:
    return NetSpec(
        kind="face",
        input_shape=(input_size, input_size),
        output_dim=recurrent_width,
        conv_channels=conv_channels,
        recurrent_width=recurrent_width,
    )


def voice_spec(
    input_shape: tuple[int, int] = (512, 300),
    conv_channels: tuple[int, ...] = (4, 8, 8, 16, 16),
    output_dim: int = 512,
) -> NetSpec:
    """First channel entry is the stem; each later one is a residual block."""
    return NetSpec(
        kind="voice",
        input_shape=input_shape,
        output_dim=output_dim,
        conv_channels=conv_channels,
    )


class FaceNet(nn.Module):
    """Per-frame conv encoder + tanh recurrent aggregator over frames."""

    def __init__(self, spec: NetSpec):
        super().__init__()
        if spec.kind != "face":
            raise DataError("FaceNet needs a face spec")
        self.spec = spec
        h, w = spec.input_shape
        convs = []
        in_ch = 1
        for out_ch in spec.conv_channels:
            convs.append(nn.Conv2d(in_ch, out_ch, spec.conv_kernel, stride=2, padding=1))
            h, w = (h + 1) // 2, (w + 1) // 2
            in_ch = out_ch
        if h < 1 or w < 1:
            raise DimensionError("too many conv layers for the input size")
        self.convs = nn.ModuleList(convs)
        self.frame_fc = nn.Linear(in_ch * h * w, spec.recurrent_width)
        self.rnn_in = nn.Linear(spec.recurrent_width, spec.recurrent_width)
        self.rnn_hh = nn.Linear(spec.recurrent_width, spec.recurrent_width, bias=False)

    def encode_frames(self, frames: torch.Tensor) -> torch.Tensor:
        """(T, H, W) -> (T, recurrent_width) per-frame codes."""
        x = frames[:, None, :, :]
        for conv in self.convs:
            x = torch.tanh(conv(x))
        return torch.tanh(self.frame_fc(x.flatten(1)))

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        if frames.ndim != 3 or frames.shape[1:] != self.spec.input_shape:
            raise DimensionError(
                f"face input must be (T, {self.spec.input_shape[0]}, "
                f"{self.spec.input_shape[1]}), got {tuple(frames.shape)}"
            )
        codes = self.encode_frames(frames)
        h = torch.zeros(self.spec.recurrent_width, dtype=frames.dtype)
        for t in range(codes.shape[0]):
            h = torch.tanh(self.rnn_in(codes[t]) + self.rnn_hh(h))
        return h


class ResidualBlock(nn.Module):
    """Downsampling conv then a two-conv residual branch around the skip."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int):
        super().__init__()
        pad = kernel // 2
        self.down = nn.Conv2d(in_ch, out_ch, kernel, stride=2, padding=pad)
        self.conv1 = nn.Conv2d(out_ch, out_ch, kernel, stride=1, padding=pad)
        self.conv2 = nn.Conv2d(out_ch, out_ch, kernel, stride=1, padding=pad)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = torch.tanh(self.down(x))
        return x + self.conv2(torch.tanh(self.conv1(x)))


class VoiceNet(nn.Module):
    """Residual conv encoder over a spectrogram; global temporal pooling."""

    def __init__(self, spec: NetSpec):
        super().__init__()
        if spec.kind != "voice":
            raise DataError("VoiceNet needs a voice spec")
        if len(spec.conv_channels) < 2:
            raise DataError("voice nets need a stem plus at least one block")
        self.spec = spec
        f, t = spec.input_shape
        pad = spec.conv_kernel // 2
        self.stem = nn.Conv2d(1, spec.conv_channels[0], spec.conv_kernel,
                              stride=2, padding=pad)
        f, t = (f + 1) // 2, (t + 1) // 2
        blocks = []
        in_ch = spec.conv_channels[0]
        for out_ch in spec.conv_channels[1:]:
            blocks.append(ResidualBlock(in_ch, out_ch, spec.conv_kernel))
            f, t = (f + 1) // 2, (t + 1) // 2
            in_ch = out_ch
        if f < 1 or t < 1:
            raise DimensionError("too many blocks for the input size")
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Linear(in_ch * f, spec.output_dim)

    def forward(self, spec_bins: torch.Tensor) -> torch.Tensor:
        if spec_bins.shape != self.spec.input_shape:
            raise DimensionError(
                f"voice input must be {self.spec.input_shape}, got {tuple(spec_bins.shape)}"
            )
        x = spec_bins[None, None, :, :]
        x = torch.tanh(self.stem(x))
        for block in self.blocks:
            x = block(x)
        pooled = x.mean(dim=3)  # global temporal pooling
        return self.head(pooled.flatten(1))[0]


class FusionNet(nn.Module):
    """Single affine layer mapping a concatenated feature to the fused embedding."""

    def __init__(self, spec: NetSpec):
        super().__init__()
        if spec.kind != "fusion":
            raise DataError("FusionNet needs a fusion spec")
        self.spec = spec
        self.fc = nn.Linear(spec.input_shape[0], spec.output_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape != (self.spec.input_shape[0],):
            raise DimensionError(
                f"fusion input must be ({self.spec.input_shape[0]},), got {tuple(x.shape)}"
            )
        return self.fc(x)


def build_net(spec: NetSpec) -> nn.Module:
    net = {"face": FaceNet, "voice": VoiceNet, "fusion": FusionNet}[spec.kind](spec)
    return net.double()


def init_parameters(net: nn.Module, seed: int) -> None:
    """Fan-in-scaled uniform init; biases zero; deterministic given seed."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in net.named_parameters():
            if name.endswith("bias"):
                p.zero_()
            else:
                fan_in = p.shape[1:].numel() if p.ndim > 1 else p.shape[0]
                bound = 1.0 / np.sqrt(max(fan_in, 1))
                p.uniform_(-bound, bound, generator=gen)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 40
    epochs: int = 3
    margin: float = DEFAULT_MARGIN
    seed: int = 0
    train_last_n: int | None = None  # freeze all but the last n parameter tensors

    def __post_init__(self):
        if min(self.learning_rate, self.batch_size, self.epochs, self.margin) <= 0:
            raise DataError("learning_rate, batch_size, epochs and margin must be positive")


def contrastive_loss(distances, labels, margin: float = DEFAULT_MARGIN) -> float:
    """Mean contrastive loss over N pairs; distances are Euclidean, >= 0."""
    d = np.asarray(distances, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if d.shape != y.shape or d.ndim != 1 or d.size == 0:
        raise DimensionError("distances and labels must be equal-length non-empty vectors")
    if np.any(d < 0):
        raise DataError("distances must be nonnegative")
    hinge = np.maximum(margin - d, 0.0)
    return float((y * d**2 + (1.0 - y) * hinge**2).sum() / (2.0 * d.size))


def _pair_loss(net: nn.Module, batch, margin: float) -> torch.Tensor:
    terms = []
    for xa, xb, y in batch:
        ea, eb = net(xa), net(xb)
        dist = torch.linalg.vector_norm(ea - eb)
        if y:
            terms.append(dist**2)
        else:
            terms.append(torch.clamp(margin - dist, min=0.0) ** 2)
    return torch.stack(terms).sum() / (2.0 * len(batch))


def _to_tensors(batch):
    return [
        (torch.as_tensor(xa, dtype=torch.float64),
         torch.as_tensor(xb, dtype=torch.float64),
         int(y))
        for xa, xb, y in batch
    ]


def loss_gradient(net: nn.Module, batch, margin: float = DEFAULT_MARGIN) -> np.ndarray:
    """Flat gradient of the batch contrastive loss w.r.t. all parameters."""
    if not batch:
        raise DataError("empty batch")
    net.zero_grad(set_to_none=True)
    loss = _pair_loss(net, _to_tensors(batch), margin)
    loss.backward()
    grads = []
    for p in net.parameters():
        grads.append(
            np.zeros(p.numel()) if p.grad is None else p.grad.detach().numpy().ravel()
        )
    return np.concatenate(grads)


def batch_loss(net: nn.Module, batch, margin: float = DEFAULT_MARGIN) -> float:
    with torch.no_grad():
        return float(_pair_loss(net, _to_tensors(batch), margin))


def train_siamese(
    net: nn.Module,
    pairs,
    cfg: TrainConfig,
) -> list[tuple[int, int, float]]:
    """Mini-batch gradient descent on the contrastive loss.

    ``pairs`` is a list of (input_a, input_b, label) with label 1 for kin.
    Returns the loss trace as (epoch, batch, loss) rows. Shuffling and
    updates are deterministic given cfg.seed.
    """
    if not pairs:
        raise DataError("empty pair stream")
    data = _to_tensors(pairs)
    params = list(net.parameters())
    trainable = set(range(len(params)))
    if cfg.train_last_n is not None:
        trainable = set(range(max(len(params) - cfg.train_last_n, 0), len(params)))
    gen = torch.Generator().manual_seed(cfg.seed)
    trace: list[tuple[int, int, float]] = []
    for epoch in range(cfg.epochs):
        order = torch.randperm(len(data), generator=gen).tolist()
        for bi, start in enumerate(range(0, len(data), cfg.batch_size)):
            batch = [data[i] for i in order[start : start + cfg.batch_size]]
            net.zero_grad(set_to_none=True)
            loss = _pair_loss(net, batch, cfg.margin)
            value = float(loss.detach())
            if not np.isfinite(value):
                raise NumericError(f"training diverged at epoch {epoch} batch {bi}")
            loss.backward()
            with torch.no_grad():
                for i, p in enumerate(params):
                    if i in trainable and p.grad is not None:
                        p -= cfg.learning_rate * p.grad
            trace.append((epoch, bi, value))
    return trace


def face_embed(frames, net: FaceNet) -> FeatureVector:
    """Embed a (T, H, W) grayscale frame stack; deterministic given parameters."""
    x = torch.as_tensor(np.asarray(frames, dtype=np.float64))
    with torch.no_grad():
        emb = net(x)
    return FeatureVector(emb.numpy(), "face_net")


def voice_embed(spec: Spectrogram, net: VoiceNet) -> FeatureVector:
    """Embed a normalized spectrogram."""
    if not spec.normalized:
        raise DataError("voice_embed requires a per-bin normalized spectrogram")
    x = torch.as_tensor(spec.bins)
    with torch.no_grad():
        emb = net(x)
    return FeatureVector(emb.numpy(), "voice_net")


def save_net(net: nn.Module, path) -> None:
    spec_json = json.dumps(asdict(net.spec), sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(NN_MAGIC)
        fh.write(struct.pack("<II", NN_VERSION, len(spec_json)))
        fh.write(spec_json)
        for _, p in sorted(net.state_dict().items()):
            fh.write(p.numpy().astype("<f8").tobytes())


def load_net(path) -> nn.Module:
    data = Path(path).read_bytes()
    if data[:4] != NN_MAGIC:
        raise DataError(f"{path}: bad magic {data[:4]!r}")
    version, spec_len = struct.unpack_from("<II", data, 4)
    if version != NN_VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    spec_dict = json.loads(data[12 : 12 + spec_len])
    spec = NetSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in spec_dict.items()})
    net = build_net(spec)
    offset = 12 + spec_len
    state = net.state_dict()
    for name in sorted(state):
        n = state[name].numel()
        vals = np.frombuffer(data, "<f8", n, offset).reshape(tuple(state[name].shape))
        state[name] = torch.as_tensor(vals.copy())
        offset += 8 * n
    net.load_state_dict(state)
    return net


def parameter_checksum(net: nn.Module) -> bytes:
    import hashlib

    h = hashlib.sha256()
    for _, p in sorted(net.state_dict().items()):
        h.update(p.numpy().astype("<f8").tobytes())
    return h.digest()
