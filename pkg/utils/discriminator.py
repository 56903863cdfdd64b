"""
Residual 1D convolutional classifier for 24-hour delay vectors.

Architecture: per-hour z-score normalization, ``n_blocks`` residual blocks of
``layers_per_block`` same-padded convolutions with ReLU (a 1x1 convolution on
the shortcut when the channel count changes), global average pooling over
time, an affine head and a two-class softmax. Class 1 is "real".

Weights live in one flat float64 array. Its layout, in order, is:

    for each block b, for each layer l:
        block{b}.conv{l}.weight   (filters, in_channels, kernel_size)
        block{b}.conv{l}.bias     (filters,)
    block{b}.shortcut.weight      (filters, in_channels, 1)   only if in_channels != filters
    block{b}.shortcut.bias        (filters,)                  only if in_channels != filters
    head.weight                   (2, filters)
    head.bias                     (2,)

Activations are kept channel-last, (batch, time, channels), internally.
"""

import json
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import List

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from utils.data_manager import DataFormatError, atomic_write
from utils.ingest import HOURS
from utils.rng import MAX_SEED, STREAM_DISCRIMINATOR, STREAM_REPEAT, derive_rng, derive_seed

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

MODEL_MAGIC = b'DSDM'
MODEL_VERSION = 1


@dataclass(frozen=True)
class DiscriminatorConfig:
    n_blocks: int = 2
    layers_per_block: int = 3
    filters: int = 32
    kernel_size: int = 5
    epochs: int = 50
    learning_rate: float = 1e-3
    l2_rate: float = 0.0
    batch_size: int = 32
    rng_seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be at least 1, got {self.epochs}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be a positive odd integer, got {self.kernel_size}")
        if self.filters < 1:
            raise ValueError(f"filters must be at least 1, got {self.filters}")
        if self.n_blocks < 1 or self.layers_per_block < 1:
            raise ValueError("n_blocks and layers_per_block must be at least 1")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.learning_rate <= 0 or self.l2_rate < 0:
            raise ValueError("learning_rate must be positive and l2_rate non-negative")
        if not 0 <= self.rng_seed <= MAX_SEED:
            raise ValueError(f"rng_seed must be an unsigned 64-bit integer, got {self.rng_seed}")

    def to_dict(self):
        return asdict(self)


@dataclass
class LabeledSet:
    vectors: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.vectors = _as_vectors(self.vectors)
        self.labels = np.asarray(self.labels, dtype=bool).ravel()
        if self.labels.shape[0] != self.vectors.shape[0]:
            raise ValueError(f"Got {self.vectors.shape[0]} vectors but {self.labels.shape[0]} labels")

    @classmethod
    def from_classes(cls, real, synthetic):
        real, synthetic = _as_vectors(real), _as_vectors(synthetic)
        labels = np.concatenate([np.ones(len(real), dtype=bool), np.zeros(len(synthetic), dtype=bool)])
        return cls(np.vstack([real, synthetic]), labels)


def _as_vectors(vectors):
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim == 1:
        vectors = vectors[None, :]
    if vectors.ndim != 2 or vectors.shape[1] != HOURS:
        raise ValueError(f"Expected vectors with {HOURS} columns, got shape {vectors.shape}")
    return vectors


def parameter_layout(cfg):
    """Ordered (name, shape) pairs of the flat weight array"""
    layout = []
    in_channels = 1
    for b in range(cfg.n_blocks):
        channels = in_channels
        for l in range(cfg.layers_per_block):
            layout.append((f"block{b}.conv{l}.weight", (cfg.filters, channels, cfg.kernel_size)))
            layout.append((f"block{b}.conv{l}.bias", (cfg.filters,)))
            channels = cfg.filters
        if in_channels != cfg.filters:
            layout.append((f"block{b}.shortcut.weight", (cfg.filters, in_channels, 1)))
            layout.append((f"block{b}.shortcut.bias", (cfg.filters,)))
        in_channels = cfg.filters
    layout.append(('head.weight', (2, cfg.filters)))
    layout.append(('head.bias', (2,)))
    return layout


def weight_count(cfg):
    return int(sum(np.prod(shape) for _, shape in parameter_layout(cfg)))


def _unpack(flat, layout):
    params, offset = {}, 0
    for name, shape in layout:
        size = int(np.prod(shape))
        params[name] = flat[offset:offset + size].reshape(shape)
        offset += size
    return params


def _is_regularized(name):
    return name.endswith('.weight') and not name.startswith('head')


@dataclass
class DiscriminatorModel:
    weights: np.ndarray
    cfg: DiscriminatorConfig
    mean: np.ndarray
    std: np.ndarray
    history: List[float] = field(default_factory=list)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.weights.shape != (weight_count(self.cfg),):
            raise ValueError(f"Expected {weight_count(self.cfg)} weights, got {self.weights.shape}")
        if self.mean.shape != (HOURS,) or self.std.shape != (HOURS,):
            raise ValueError("Normalization statistics must have one entry per hour")
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.std)) and np.all(self.std > 0)):
            raise ValueError("Normalization statistics must be finite with positive scale")

    def normalize(self, vectors):
        return (vectors - self.mean) / self.std


def init_model(cfg, mean=None, std=None, rng=None):
    """
    Untrained model: He-normal convolution weights, zero biases and a zero
    head, so every input maps to probability 0.5.
    """
    rng = rng if rng is not None else derive_rng(cfg.rng_seed)
    layout = parameter_layout(cfg)
    flat = np.zeros(weight_count(cfg))
    params = _unpack(flat, layout)
    for name, shape in layout:
        if _is_regularized(name):
            fan_in = shape[1] * shape[2]
            params[name][...] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
    mean = np.zeros(HOURS) if mean is None else mean
    std = np.ones(HOURS) if std is None else std
    return DiscriminatorModel(flat, cfg, mean, std)


def _im2col(h, k):
    # h: (N, T, C) -> (N*T, C*k)
    n, t, c = h.shape
    p = k // 2
    padded = np.pad(h, ((0, 0), (p, p), (0, 0)))
    windows = sliding_window_view(padded, k, axis=1)  # (N, T, C, k)
    return windows.reshape(n * t, c * k)


def _col2im(dcols, shape, k):
    n, t, c = shape
    p = k // 2
    dcols = dcols.reshape(n, t, c, k)
    dpadded = np.zeros((n, t + 2 * p, c))
    for j in range(k):
        dpadded[:, j:j + t, :] += dcols[:, :, :, j]
    return dpadded[:, p:p + t, :]


def _forward(params, cfg, z):
    n, t = z.shape
    h = z[:, :, None]
    caches = []
    for b in range(cfg.n_blocks):
        block_in = h
        layers = []
        for l in range(cfg.layers_per_block):
            w = params[f"block{b}.conv{l}.weight"]
            cols = _im2col(h, cfg.kernel_size)
            pre = (cols @ w.reshape(w.shape[0], -1).T + params[f"block{b}.conv{l}.bias"]).reshape(n, t, -1)
            layers.append((h.shape, cols, pre))
            h = np.maximum(pre, 0.0)
        key = f"block{b}.shortcut.weight"
        if key in params:
            shortcut = block_in @ params[key][:, :, 0].T + params[f"block{b}.shortcut.bias"]
        else:
            shortcut = block_in
        h = h + shortcut
        caches.append((block_in, layers))
    pooled = h.mean(axis=1)
    logits = pooled @ params['head.weight'].T + params['head.bias']
    return logits, pooled, caches


def _softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def class_probabilities(model, vectors):
    """(n, 2) softmax output; column 1 is the probability of "real"."""
    z = model.normalize(_as_vectors(vectors))
    params = _unpack(model.weights, parameter_layout(model.cfg))
    logits, _, _ = _forward(params, model.cfg, z)
    return _softmax(logits)


def loss_and_gradient(model, vectors, labels, weights=None):
    """
    Mean cross-entropy plus ``l2_rate`` times the squared convolution weights,
    and its gradient with respect to the flat weight array.
    """
    cfg = model.cfg
    layout = parameter_layout(cfg)
    flat = model.weights if weights is None else np.asarray(weights, dtype=np.float64)
    params = _unpack(flat, layout)
    z = model.normalize(_as_vectors(vectors))
    labels = np.asarray(labels, dtype=bool)
    n, t = z.shape

    logits, pooled, caches = _forward(params, cfg, z)
    probs = _softmax(logits)
    target = labels.astype(int)
    loss = -np.mean(np.log(np.clip(probs[np.arange(n), target], 1e-300, None)))

    grad_flat = np.zeros_like(flat)
    grads = _unpack(grad_flat, layout)

    dlogits = probs.copy()
    dlogits[np.arange(n), target] -= 1.0
    dlogits /= n
    grads['head.weight'][...] = dlogits.T @ pooled
    grads['head.bias'][...] = dlogits.sum(axis=0)
    dpooled = dlogits @ params['head.weight']
    dh = np.repeat(dpooled[:, None, :] / t, t, axis=1)

    for b in reversed(range(cfg.n_blocks)):
        block_in, layers = caches[b]
        key = f"block{b}.shortcut.weight"
        if key in params:
            f, c = params[key].shape[:2]
            grads[key][:, :, 0] = dh.reshape(-1, f).T @ block_in.reshape(-1, c)
            grads[f"block{b}.shortcut.bias"][...] = dh.sum(axis=(0, 1))
            d_shortcut = dh @ params[key][:, :, 0]
        else:
            d_shortcut = dh
        d_layer = dh
        for l in reversed(range(cfg.layers_per_block)):
            in_shape, cols, pre = layers[l]
            w = params[f"block{b}.conv{l}.weight"]
            dpre = (d_layer * (pre > 0)).reshape(n * t, -1)
            grads[f"block{b}.conv{l}.weight"][...] = (dpre.T @ cols).reshape(w.shape)
            grads[f"block{b}.conv{l}.bias"][...] = dpre.sum(axis=0)
            dcols = dpre @ w.reshape(w.shape[0], -1)
            d_layer = _col2im(dcols, in_shape, cfg.kernel_size)
        dh = d_layer + d_shortcut

    if cfg.l2_rate > 0:
        for name, _ in layout:
            if _is_regularized(name):
                loss += cfg.l2_rate * float(np.sum(params[name] ** 2))
                grads[name] += 2.0 * cfg.l2_rate * params[name]
    return float(loss), grad_flat


def train(data, cfg):
    """
    Fit a discriminator with Adam on shuffled mini-batches.

    Rows are sorted canonically first, so the result depends only on the
    multiset of labelled rows and ``cfg.rng_seed``.
    """
    vectors, labels = data.vectors, data.labels
    if vectors.shape[0] < 2 or labels.all() or not labels.any():
        raise ValueError("Training requires at least two rows covering both classes")

    order = np.lexsort(np.column_stack([vectors, labels]).T[::-1])
    vectors, labels = vectors[order], labels[order]

    mean = vectors.mean(axis=0)
    std = vectors.std(axis=0)
    std[std < 1e-12] = 1.0

    rng = derive_rng(cfg.rng_seed)
    model = init_model(cfg, mean, std, rng)
    m = np.zeros_like(model.weights)
    v = np.zeros_like(model.weights)
    step = 0
    n = vectors.shape[0]
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = perm[start:start + cfg.batch_size]
            loss, grad = loss_and_gradient(model, vectors[batch], labels[batch])
            step += 1
            m = ADAM_BETA1 * m + (1 - ADAM_BETA1) * grad
            v = ADAM_BETA2 * v + (1 - ADAM_BETA2) * grad ** 2
            m_hat = m / (1 - ADAM_BETA1 ** step)
            v_hat = v / (1 - ADAM_BETA2 ** step)
            model.weights -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
            epoch_loss += loss * len(batch)
        model.history.append(epoch_loss / n)
        logger.debug("epoch %d/%d loss %.5f", epoch + 1, cfg.epochs, epoch_loss / n)
    return model


def predict(model, vectors):
    """Probability that each vector is real, in input order"""
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[1] != HOURS:
        raise ValueError(f"Expected vectors with {HOURS} columns, got shape {vectors.shape}")
    return class_probabilities(model, vectors)[:, 1]


def accuracy(model, vectors, labels):
    """Fraction correct at threshold 0.5; a probability of exactly 0.5 counts as wrong"""
    p = predict(model, vectors)
    labels = np.asarray(labels, dtype=bool)
    correct = (labels & (p > 0.5)) | (~labels & (p < 0.5))
    return float(correct.mean())


@dataclass
class ScoreDistribution:
    scores: np.ndarray
    train_scores: np.ndarray

    @property
    def median(self):
        return float(np.median(self.scores))

    @property
    def train_median(self):
        return float(np.median(self.train_scores))

    @property
    def min(self):
        return float(np.min(self.scores))

    @property
    def max(self):
        return float(np.max(self.scores))

    def to_dict(self):
        return {
            'scores': [float(s) for s in self.scores],
            'train_scores': [float(s) for s in self.train_scores],
            'median': self.median, 'min': self.min, 'max': self.max,
            'train_median': self.train_median,
        }


def split_train_score(positive, negative, cfg, rng):
    """
    Train on a random half of each class and score on the pooled remainder.

    Returns (test accuracy, train accuracy).
    """
    train_parts, test_parts = [], []
    for vectors, label in ((positive, True), (negative, False)):
        perm = rng.permutation(len(vectors))
        half = len(vectors) // 2
        train_parts.append((vectors[perm[:half]], label))
        test_parts.append((vectors[perm[half:]], label))

    def stack(parts):
        return LabeledSet(np.vstack([p[0] for p in parts]),
                          np.concatenate([np.full(len(p[0]), p[1]) for p in parts]))

    train_set, test_set = stack(train_parts), stack(test_parts)
    model = train(train_set, cfg)
    return (accuracy(model, test_set.vectors, test_set.labels),
            accuracy(model, train_set.vectors, train_set.labels))


def repeated_split_scores(positive, negative, cfg, n_repeats, seed=None, workers=1):
    positive, negative = _as_vectors(positive), _as_vectors(negative)
    if len(positive) < 2 or len(negative) < 2:
        raise ValueError("Each class needs at least two rows")
    if n_repeats < 1:
        raise ValueError(f"n_repeats must be at least 1, got {n_repeats}")
    seed = cfg.rng_seed if seed is None else seed

    def run(r):
        rng = derive_rng(seed, STREAM_REPEAT, r)
        repeat_cfg = replace(cfg, rng_seed=derive_seed(seed, STREAM_DISCRIMINATOR, r))
        return split_train_score(positive, negative, repeat_cfg, rng)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, range(n_repeats)))
    else:
        results = [run(r) for r in range(n_repeats)]
    return ScoreDistribution(np.array([r[0] for r in results]), np.array([r[1] for r in results]))


def discriminative_score(real, synthetic, cfg, n_repeats, seed=None, workers=1):
    """Held-out real-vs-synthetic accuracy over ``n_repeats`` random half splits"""
    dist = repeated_split_scores(real, synthetic, cfg, n_repeats, seed, workers)
    logger.info("discriminative score: median %.3f (min %.3f, max %.3f) over %d repeats",
                dist.median, dist.min, dist.max, n_repeats)
    return dist


def save_model(model, file_path):
    """
    Binary layout: magic 'DSDM', uint32 version, uint32 header length, UTF-8
    JSON header (config, normalization, layout), then little-endian float64
    weights.
    """
    header = json.dumps({
        'cfg': model.cfg.to_dict(),
        'mean': model.mean.tolist(),
        'std': model.std.tolist(),
        'layout': [[name, list(shape)] for name, shape in parameter_layout(model.cfg)],
        'n_weights': int(model.weights.size),
    }, sort_keys=True).encode('utf-8')
    with atomic_write(file_path, binary=True) as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack('<II', MODEL_VERSION, len(header)))
        f.write(header)
        f.write(model.weights.astype('<f8').tobytes())


def load_model(file_path):
    with open(file_path, 'rb') as f:
        blob = f.read()
    if blob[:4] != MODEL_MAGIC or len(blob) < 12:
        raise DataFormatError(f"{file_path} is not a discriminator model file")
    version, header_len = struct.unpack('<II', blob[4:12])
    if version != MODEL_VERSION:
        raise DataFormatError(f"Unsupported model version {version} in {file_path}")
    try:
        header = json.loads(blob[12:12 + header_len].decode('utf-8'))
        cfg = DiscriminatorConfig(**header['cfg'])
        weights = np.frombuffer(blob[12 + header_len:], dtype='<f8').copy()
        return DiscriminatorModel(weights, cfg, header['mean'], header['std'])
    except (KeyError, TypeError, ValueError) as e:
        raise DataFormatError(f"Invalid model file {file_path}: {str(e)}") from e
