"""Learned user-item relevance: projectors, metric MLP, baselines, quantization.

The relevance model is a pair of affine feature projectors (one per tower)
feeding an MLP that maps ``concat(h_u + noise, h_v)`` to a vector of
per-behavior interaction predictions, aggregated into one scalar by an
attention vector.

Every scoring path goes through :func:`_affine`, which uses ``np.einsum``
rather than BLAS matmul: einsum reduces each output element independently
of the other rows in the batch, so a pair's score is bit-identical no
matter how evaluation requests are sliced into batches.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FileFormatError, InvalidArgumentError, NumericError, WeightOverflowError

MODEL_MAGIC = b"NANN-MODEL"
MODEL_VERSION = 1
FP16_MAX = 65504.0

_ACTIVATIONS = ("relu", "identity")


def _affine(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-stable affine map ``x @ w.T + b`` for 2-D ``x``."""
    return np.einsum("ij,kj->ik", x, w, optimize=False) + b


def _compute_dtype(arr: np.ndarray) -> np.dtype:
    # fp16 weights are stored 16-bit but accumulate in 32-bit.
    return np.dtype(np.float32) if arr.dtype == np.float16 else arr.dtype


@dataclass
class Projector:
    """Affine map from raw features (d_x) to embeddings (d_h)."""

    weight: np.ndarray  # (d_x, d_h)
    bias: np.ndarray  # (d_h,)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]


def project(projector: Projector, features: np.ndarray) -> np.ndarray:
    """Project one feature vector or a batch of them."""
    features = np.asarray(features)
    single = features.ndim == 1
    x = features[None, :] if single else features
    if x.shape[1] != projector.in_dim:
        raise InvalidArgumentError(
            f"feature dim {x.shape[1]} != projector input dim {projector.in_dim}"
        )
    dtype = _compute_dtype(projector.weight)
    out = _affine(
        x.astype(dtype, copy=False),
        projector.weight.T.astype(dtype, copy=False),
        projector.bias.astype(dtype, copy=False),
    )
    return out[0] if single else out


@dataclass
class MetricModel:
    """MLP relevance metric with attention aggregation.

    ``layers[m]`` holds ``(W, b)`` with W shaped (d_out, d_in); layer 0
    consumes the concatenated pair embedding of width 2*d_h and the final
    layer emits one value per behavior type.  ReLU is applied between
    layers, never after the last one.
    """

    layers: list[tuple[np.ndarray, np.ndarray]]
    attention: np.ndarray  # (z_dim,)
    serendipity_sigma: float = 1.0
    activation: str = "relu"

    @property
    def precision(self) -> str:
        return "fp16" if self.layers[0][0].dtype == np.float16 else "fp32"

    @property
    def pair_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def z_dim(self) -> int:
        return self.layers[-1][0].shape[0]


def forward_batch(
    model: MetricModel,
    h_u: np.ndarray,
    h_v: np.ndarray,
    serendipity: np.ndarray | None = None,
) -> np.ndarray:
    """Predicted interaction vectors for n pairs: (n, d_h) x 2 -> (n, z_dim).

    ``serendipity`` is added to the user embeddings before concatenation;
    omitting it is deterministic inference mode.
    """
    h_u = np.atleast_2d(np.asarray(h_u))
    h_v = np.atleast_2d(np.asarray(h_v))
    if h_u.shape != h_v.shape:
        raise InvalidArgumentError(f"embedding shapes differ: {h_u.shape} vs {h_v.shape}")
    if h_u.shape[1] * 2 != model.pair_dim:
        raise InvalidArgumentError(
            f"embedding dim {h_u.shape[1]} != d_h {model.pair_dim // 2}"
        )
    if serendipity is not None:
        serendipity = np.atleast_2d(np.asarray(serendipity))
        if serendipity.shape != h_u.shape:
            raise InvalidArgumentError("serendipity shape must match user embeddings")
        h_u = h_u + serendipity

    dtype = _compute_dtype(model.layers[0][0])
    x = np.concatenate([h_u, h_v], axis=1).astype(dtype, copy=False)
    last = len(model.layers) - 1
    for m, (w, b) in enumerate(model.layers):
        x = _affine(x, w.astype(dtype, copy=False), b.astype(dtype, copy=False))
        if m < last and model.activation == "relu":
            x = np.maximum(x, 0)
    if not np.isfinite(x).all():
        raise NumericError("non-finite value in metric forward pass")
    return x


def forward(
    model: MetricModel,
    h_u: np.ndarray,
    h_v: np.ndarray,
    serendipity: np.ndarray | None = None,
) -> np.ndarray:
    """Single-pair interaction vector."""
    noise = None if serendipity is None else np.asarray(serendipity)[None, :]
    return forward_batch(model, h_u[None, :], h_v[None, :], noise)[0]


def relevance_batch(model: MetricModel, h_u: np.ndarray, h_v: np.ndarray) -> np.ndarray:
    """Scalar relevance for n pairs (inference mode, no serendipity)."""
    z = forward_batch(model, h_u, h_v)
    a = model.attention.astype(z.dtype, copy=False)
    return np.einsum("ij,j->i", z, a, optimize=False)


def relevance(model: MetricModel, h_u: np.ndarray, h_v: np.ndarray) -> float:
    return float(relevance_batch(model, h_u[None, :], h_v[None, :])[0])


def euclidean_distance(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape:
        raise InvalidArgumentError(f"shape mismatch: {x.shape} vs {y.shape}")
    return float(np.sqrt(((x - y) ** 2).sum()))


def euclidean_distances(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Row-wise Euclidean distances between two (n, d) arrays."""
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape:
        raise InvalidArgumentError(f"shape mismatch: {x.shape} vs {y.shape}")
    return np.sqrt(((x - y) ** 2).sum(axis=1))


def cosine_similarity(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape:
        raise InvalidArgumentError(f"shape mismatch: {x.shape} vs {y.shape}")
    nx = float(np.sqrt((x * x).sum()))
    ny = float(np.sqrt((y * y).sum()))
    if nx == 0.0 and ny == 0.0:
        return 0.0  # both-zero pair defined as 0 so the op is total
    if nx == 0.0 or ny == 0.0:
        return 0.0
    return float(np.dot(x, y) / (nx * ny))


@dataclass
class RelevanceModel:
    """Full trained bundle: both projectors plus the metric MLP."""

    user_projector: Projector
    item_projector: Projector
    metric: MetricModel

    @property
    def precision(self) -> str:
        return self.metric.precision

    @property
    def d_x(self) -> int:
        return self.user_projector.in_dim

    @property
    def d_h(self) -> int:
        return self.user_projector.out_dim

    @property
    def z_dim(self) -> int:
        return self.metric.z_dim

    def user_embedding(self, features: np.ndarray) -> np.ndarray:
        return project(self.user_projector, features)

    def item_embeddings(self, features: np.ndarray) -> np.ndarray:
        return project(self.item_projector, features)

    def score(self, h_u: np.ndarray, h_v_batch: np.ndarray) -> np.ndarray:
        """Relevance of one user embedding against a batch of item embeddings."""
        h_v_batch = np.atleast_2d(h_v_batch)
        h_u_rows = np.broadcast_to(h_u, h_v_batch.shape)
        return relevance_batch(self.metric, h_u_rows, h_v_batch)


def create_model(
    d_x: int,
    d_h: int,
    z_dim: int,
    hidden: tuple[int, ...] = (64, 64),
    seed: int = 0,
    serendipity_sigma: float = 1.0,
    activation: str = "relu",
    dtype=np.float32,
) -> RelevanceModel:
    """Randomly initialized model; attention starts uniform at 1/z_dim."""
    if activation not in _ACTIVATIONS:
        raise InvalidArgumentError(f"unknown activation {activation!r}")
    rng = np.random.default_rng(seed)

    def init(shape_out, shape_in):
        w = rng.normal(size=(shape_out, shape_in)) / np.sqrt(shape_in)
        return w.astype(dtype)

    def proj():
        return Projector(
            weight=(rng.normal(size=(d_x, d_h)) / np.sqrt(d_x)).astype(dtype),
            bias=np.zeros(d_h, dtype=dtype),
        )

    user_projector = proj()
    item_projector = proj()
    dims = [2 * d_h, *hidden, z_dim]
    layers = [
        (init(dims[m + 1], dims[m]), np.zeros(dims[m + 1], dtype=dtype))
        for m in range(len(dims) - 1)
    ]
    metric = MetricModel(
        layers=layers,
        attention=np.full(z_dim, 1.0 / z_dim, dtype=dtype),
        serendipity_sigma=serendipity_sigma,
        activation=activation,
    )
    return RelevanceModel(user_projector, item_projector, metric)


def _quantize_array(arr: np.ndarray, component: str) -> np.ndarray:
    if arr.dtype == np.float16:
        return arr.copy()
    max_abs = float(np.abs(arr).max()) if arr.size else 0.0
    if max_abs > FP16_MAX:
        raise WeightOverflowError(component, max_abs)
    # astype(float16) rounds to nearest, ties to even.
    return arr.astype(np.float16)


def quantize(model: RelevanceModel) -> RelevanceModel:
    """Round every weight block to half precision and keep it stored as such.

    Inference still accumulates in 32-bit.  Quantizing an already-quantized
    model returns an identical copy, so the operation is idempotent.
    """
    return RelevanceModel(
        user_projector=Projector(
            weight=_quantize_array(model.user_projector.weight, "user_projector.weight"),
            bias=_quantize_array(model.user_projector.bias, "user_projector.bias"),
        ),
        item_projector=Projector(
            weight=_quantize_array(model.item_projector.weight, "item_projector.weight"),
            bias=_quantize_array(model.item_projector.bias, "item_projector.bias"),
        ),
        metric=MetricModel(
            layers=[
                (
                    _quantize_array(w, f"mlp.{m}.weight"),
                    _quantize_array(b, f"mlp.{m}.bias"),
                )
                for m, (w, b) in enumerate(model.metric.layers)
            ],
            attention=_quantize_array(model.metric.attention, "attention"),
            serendipity_sigma=model.metric.serendipity_sigma,
            activation=model.metric.activation,
        ),
    )


def save_model(model: RelevanceModel, path: str) -> None:
    """Versioned little-endian binary; fp16 models store 16-bit payloads."""
    fp16 = model.precision == "fp16"
    payload_dtype = "<f2" if fp16 else "<f4"
    act = _ACTIVATIONS.index(model.metric.activation)
    n_layers = len(model.metric.layers)
    out_dims = [w.shape[0] for w, _ in model.metric.layers]
    header = MODEL_MAGIC + struct.pack(
        "<IBBdIIII",
        MODEL_VERSION,
        1 if fp16 else 0,
        act,
        model.metric.serendipity_sigma,
        model.d_x,
        model.d_h,
        model.z_dim,
        n_layers,
    )
    header += struct.pack(f"<{n_layers}I", *out_dims)
    blocks = [
        model.user_projector.weight,
        model.user_projector.bias,
        model.item_projector.weight,
        model.item_projector.bias,
    ]
    for w, b in model.metric.layers:
        blocks.extend([w, b])
    blocks.append(model.metric.attention)
    with open(path, "wb") as f:
        f.write(header)
        for block in blocks:
            f.write(np.ascontiguousarray(block, dtype=payload_dtype).tobytes())


def load_model(path: str) -> RelevanceModel:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[: len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise FileFormatError("not a model file (bad magic)", path=path)
    off = len(MODEL_MAGIC)
    head_fmt = "<IBBdIIII"
    head_size = struct.calcsize(head_fmt)
    if len(raw) < off + head_size:
        raise FileFormatError("truncated model header", path=path)
    version, fp16, act, sigma, d_x, d_h, z_dim, n_layers = struct.unpack_from(
        head_fmt, raw, off
    )
    if version != MODEL_VERSION:
        raise FileFormatError(f"unsupported model version {version}", path=path)
    if act >= len(_ACTIVATIONS):
        raise FileFormatError(f"unknown activation code {act}", path=path)
    off += head_size
    if len(raw) < off + 4 * n_layers:
        raise FileFormatError("truncated layer dimension table", path=path)
    out_dims = struct.unpack_from(f"<{n_layers}I", raw, off)
    off += 4 * n_layers

    payload_dtype = np.dtype("<f2" if fp16 else "<f4")
    shapes = [(d_x, d_h), (d_h,), (d_x, d_h), (d_h,)]
    in_dim = 2 * d_h
    for d_out in out_dims:
        shapes.extend([(d_out, in_dim), (d_out,)])
        in_dim = d_out
    shapes.append((z_dim,))

    arrays = []
    for shape in shapes:
        n = int(np.prod(shape))
        nbytes = n * payload_dtype.itemsize
        if len(raw) < off + nbytes:
            raise FileFormatError(f"truncated weight block at byte {off}", path=path)
        arrays.append(np.frombuffer(raw, dtype=payload_dtype, count=n, offset=off).reshape(shape).copy())
        off += nbytes
    if off != len(raw):
        raise FileFormatError(f"{len(raw) - off} trailing bytes", path=path)
    if out_dims and out_dims[-1] != z_dim:
        raise FileFormatError("final layer width != z_dim", path=path)

    it = iter(arrays)
    user_projector = Projector(next(it), next(it))
    item_projector = Projector(next(it), next(it))
    layers = [(next(it), next(it)) for _ in range(n_layers)]
    attention = next(it)
    metric = MetricModel(
        layers=layers,
        attention=attention,
        serendipity_sigma=sigma,
        activation=_ACTIVATIONS[act],
    )
    return RelevanceModel(user_projector, item_projector, metric)
