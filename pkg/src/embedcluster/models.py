"""Generator head, EEGNet-8-2 and the contextual autoencoder on top of ``nn``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .nn import BatchNorm, Tensor


class ModelError(ValueError):
    pass


def _param(rng, shape, fan_in, name, zero=False) -> Tensor:
    data = np.zeros(shape) if zero else nn.uniform_init(rng, shape, fan_in)
    return Tensor(data, requires_grad=True, name=name)


class Module:
    """Ordered named parameters plus batchnorm buffers."""

    def named_params(self) -> list[tuple[str, Tensor]]:
        raise NotImplementedError

    def batchnorms(self) -> list[tuple[str, BatchNorm]]:
        return []

    @property
    def params(self) -> list[Tensor]:
        return [p for _, p in self.named_params()]

    def n_params(self) -> int:
        return sum(p.data.size for p in self.params)


class GeneratorHead(Module):
    """Dense 10 -> hidden (ELU) -> T, reshaped to one channel of T samples."""

    def __init__(self, rng=None, hidden: int = 256, length: int = 2048, n_in: int = 10, zero: bool = False):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_in, self.hidden, self.length = n_in, hidden, length
        self.W1 = _param(rng, (hidden, n_in), n_in, "gen.W1", zero)
        self.b1 = _param(rng, (hidden,), n_in, "gen.b1", zero)
        self.W2 = _param(rng, (length, hidden), hidden, "gen.W2", zero)
        self.b2 = _param(rng, (length,), hidden, "gen.b2", zero)

    def named_params(self):
        return [("gen.W1", self.W1), ("gen.b1", self.b1), ("gen.W2", self.W2), ("gen.b2", self.b2)]

    def __call__(self, bands) -> Tensor:
        x = nn.as_tensor(bands)
        if x.shape[-1] != self.n_in or x.data.ndim not in (1, 2):
            raise ModelError(f"generator expects {self.n_in} features, got shape {x.shape}")
        single = x.data.ndim == 1
        h = nn.elu(nn.dense_forward(x, self.W1, self.b1))
        out = nn.dense_forward(h, self.W2, self.b2)
        return nn.reshape(out, (1, self.length) if single else (x.shape[0], 1, self.length))


@dataclass(frozen=True)
class EEGNetShape:
    length: int = 2048
    f1: int = 8
    depth: int = 2
    f2: int = 16
    temporal_kernel: int = 64
    separable_kernel: int = 16
    pool1: int = 4
    pool2: int = 8
    dropout: float = 0.25

    @property
    def embedding_len(self) -> int:
        return self.f2 * self.length // (self.pool1 * self.pool2)


class EEGNet82(Module):
    """Single-channel EEGNet-8-2 returning (probability, flattened block-2 features).

    With the default shape, (1, 2048) input gives 16 x 512 after block 1,
    16 x 64 after block 2 and a 1024-long embedding. Parameter count: 2145.
    """

    def __init__(self, rng=None, shape: EEGNetShape = EEGNetShape(), zero: bool = False):
        rng = rng if rng is not None else np.random.default_rng(0)
        s = self.shape = shape
        if s.length % (s.pool1 * s.pool2):
            raise ModelError(f"length {s.length} not divisible by pooling {s.pool1 * s.pool2}")
        fd = s.f1 * s.depth
        self.temporal = _param(rng, (s.f1, 1, s.temporal_kernel), s.temporal_kernel, "eeg.temporal", zero)
        self.bn1 = BatchNorm(s.f1, name="eeg.bn1")
        # spatial depthwise filter degenerates to 1x1 with a single electrode
        self.depthwise = _param(rng, (fd, 1, 1), 1, "eeg.depthwise", zero)
        self.bn2 = BatchNorm(fd, name="eeg.bn2")
        self.separable = _param(rng, (fd, 1, s.separable_kernel), s.separable_kernel, "eeg.separable", zero)
        self.pointwise = _param(rng, (s.f2, fd, 1), fd, "eeg.pointwise", zero)
        self.bn3 = BatchNorm(s.f2, name="eeg.bn3")
        self.W = _param(rng, (1, s.embedding_len), s.embedding_len, "eeg.W", zero)
        self.b = _param(rng, (1,), s.embedding_len, "eeg.b", zero)
        if zero:
            for bn in (self.bn1, self.bn2, self.bn3):
                bn.gamma.data[:] = 0.0

    def named_params(self):
        return [
            ("eeg.temporal", self.temporal),
            ("eeg.bn1.gamma", self.bn1.gamma),
            ("eeg.bn1.beta", self.bn1.beta),
            ("eeg.depthwise", self.depthwise),
            ("eeg.bn2.gamma", self.bn2.gamma),
            ("eeg.bn2.beta", self.bn2.beta),
            ("eeg.separable", self.separable),
            ("eeg.pointwise", self.pointwise),
            ("eeg.bn3.gamma", self.bn3.gamma),
            ("eeg.bn3.beta", self.bn3.beta),
            ("eeg.W", self.W),
            ("eeg.b", self.b),
        ]

    def batchnorms(self):
        return [("eeg.bn1", self.bn1), ("eeg.bn2", self.bn2), ("eeg.bn3", self.bn3)]

    def blocks(self, x, training: bool = False, rng=None) -> tuple[Tensor, Tensor]:
        """Return (block-1 output, block-2 output) for (N, 1, T) or (1, T) input."""
        s = self.shape
        x = nn.as_tensor(x)
        if x.shape[-2:] != (1, s.length) or x.data.ndim not in (2, 3):
            raise ModelError(f"EEGNet expects input (1, {s.length}), got {x.shape}")
        h = nn.conv1d_forward(x, self.temporal, groups=1, padding="same")
        h = self.bn1(h, training)
        h = nn.conv1d_forward(h, self.depthwise, groups=s.f1, padding="valid")
        h = self.bn2(h, training)
        h = nn.elu(h)
        h = nn.avg_pool(h, s.pool1)
        block1 = nn.dropout(h, s.dropout, rng, training)
        h = nn.conv1d_forward(block1, self.separable, groups=s.f1 * s.depth, padding="same")
        h = nn.conv1d_forward(h, self.pointwise, groups=1, padding="valid")
        h = self.bn3(h, training)
        h = nn.elu(h)
        h = nn.avg_pool(h, s.pool2)
        block2 = nn.dropout(h, s.dropout, rng, training)
        return block1, block2

    def __call__(self, x, training: bool = False, rng=None) -> tuple[Tensor, Tensor]:
        x = nn.as_tensor(x)
        single = x.data.ndim == 2
        _, block2 = self.blocks(x, training, rng)
        emb = nn.flatten(block2) if not single else nn.reshape(block2, (1, -1))
        logit = nn.dense_forward(emb, self.W, self.b)
        prob = nn.sigmoid(nn.reshape(logit, (-1,)))
        if single:
            return prob, nn.reshape(emb, (-1,))
        return prob, emb


class SeizureModel(Module):
    """Band vector -> standardize -> generator -> EEGNet."""

    def __init__(self, generator: GeneratorHead, eegnet: EEGNet82, mean=None, std=None):
        if generator.length != eegnet.shape.length:
            raise ModelError("generator output length does not match EEGNet input length")
        self.generator = generator
        self.eegnet = eegnet
        self.mean = np.zeros(generator.n_in) if mean is None else np.asarray(mean, dtype=np.float64)
        self.std = np.ones(generator.n_in) if std is None else np.asarray(std, dtype=np.float64)

    @classmethod
    def create(cls, seed: int = 0, hidden: int = 256, shape: EEGNetShape = EEGNetShape()) -> "SeizureModel":
        rng = np.random.default_rng(seed)
        return cls(GeneratorHead(rng, hidden=hidden, length=shape.length), EEGNet82(rng, shape))

    def named_params(self):
        return self.generator.named_params() + self.eegnet.named_params()

    def batchnorms(self):
        return self.eegnet.batchnorms()

    def standardize(self, bands) -> np.ndarray:
        return (np.asarray(bands, dtype=np.float64) - self.mean) / self.std

    def __call__(self, bands, training: bool = False, rng=None) -> tuple[Tensor, Tensor]:
        z = self.standardize(bands)
        return self.eegnet(self.generator(z), training, rng)


class ContextAutoencoder(Module):
    """Symmetric 10 -> 8 -> 4 -> 8 -> 10 autoencoder; the 4-d middle layer is the code."""

    def __init__(self, rng=None, n_in: int = 10, hidden: int = 8, code: int = 4, zero: bool = False, mean=None, std=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_in, self.hidden, self.code = n_in, hidden, code
        dims = [(hidden, n_in), (code, hidden), (hidden, code), (n_in, hidden)]
        self._named = []
        for i, (o, fan_in) in enumerate(dims, start=1):
            self._named.append((f"ae.W{i}", _param(rng, (o, fan_in), fan_in, f"ae.W{i}", zero)))
            self._named.append((f"ae.b{i}", _param(rng, (o,), fan_in, f"ae.b{i}", zero)))
        self.mean = None if mean is None else np.asarray(mean, dtype=np.float64)
        self.std = None if std is None else np.asarray(std, dtype=np.float64)

    def named_params(self):
        return list(self._named)

    def _layer(self, i):
        return self._named[2 * i][1], self._named[2 * i + 1][1]

    def standardize(self, bands) -> np.ndarray:
        if self.mean is None or self.std is None:
            raise ModelError("autoencoder has no standardization statistics")
        return (np.asarray(bands, dtype=np.float64) - self.mean) / self.std

    def encode(self, z) -> Tensor:
        x = nn.as_tensor(z)
        if x.shape[-1] != self.n_in or x.data.ndim not in (1, 2):
            raise ModelError(f"autoencoder expects {self.n_in} features, got shape {x.shape}")
        h = nn.elu(nn.dense_forward(x, *self._layer(0)))
        return nn.dense_forward(h, *self._layer(1))

    def decode(self, code) -> Tensor:
        h = nn.elu(nn.dense_forward(code, *self._layer(2)))
        return nn.dense_forward(h, *self._layer(3))

    def __call__(self, z) -> tuple[Tensor, Tensor]:
        """Forward an already standardized vector; returns (reconstruction, code)."""
        code = self.encode(z)
        return self.decode(code), code


def generator_forward(gen: GeneratorHead, band) -> np.ndarray:
    values = band.as_array() if hasattr(band, "as_array") else np.asarray(band, dtype=np.float64)
    if values.shape != (gen.n_in,):
        raise ModelError(f"generator expects a {gen.n_in}-vector, got shape {values.shape}")
    return gen(values).data


def eegnet_forward(net: EEGNet82, x, training: bool = False, rng=None) -> tuple[float, np.ndarray]:
    prob, emb = net(np.asarray(x, dtype=np.float64), training, rng)
    return float(prob.data[0]), emb.data


def autoencoder_forward(ae: ContextAutoencoder, z) -> tuple[np.ndarray, np.ndarray]:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (ae.n_in,):
        raise ModelError(f"autoencoder expects a {ae.n_in}-vector, got shape {z.shape}")
    rec, code = ae(z)
    return rec.data, code.data
