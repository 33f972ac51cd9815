"""Joint optimization of projectors and the relevance metric.

Two loss terms, both with hand-derived gradients:

- prediction: mean L2 norm of (target interaction vector - predicted),
  over observed pairs plus sampled unobserved pairs with zero targets;
- rank alignment: 1 / (rho + 1 + eps) where rho is the correlation between
  metric scores and *negated* embedding distances over freshly sampled
  pairs, pushing the metric's item ordering toward the Euclidean ordering
  that graph navigation relies on.

Gradients flow through both the score path and the distance path (the
embeddings appear in each).  Training math runs in float64; finished
models are emitted in float32.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import (
    DegenerateVarianceError,
    InvalidArgumentError,
    TrainingDivergedError,
)
from .metric import MetricModel, Projector, RelevanceModel


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 256
    learning_rate: float = 0.01
    n_scl_pairs: int = 32  # sampled pairs per step for the alignment term
    lambda_scl: float = 1.0
    negative_ratio: float = 1.0  # unobserved pairs sampled per observed pair
    epsilon_rho: float = 1e-3  # stabilizer in 1 / (rho + 1 + eps)
    rng_seed: int = 0
    optimizer: str = "adam"  # "adam" | "sgd"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    d_h: int = 32
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "relu"
    serendipity_sigma: float = 1.0
    train_attention: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidArgumentError("epochs and batch_size must be >= 1")
        if self.n_scl_pairs < 2:
            raise InvalidArgumentError("n_scl_pairs must be >= 2")
        if self.epsilon_rho <= 0:
            raise InvalidArgumentError("epsilon_rho must be > 0")
        # learning_rate 0 is allowed as an explicit no-op (useful in tests)
        if self.learning_rate < 0:
            raise InvalidArgumentError("learning_rate must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise InvalidArgumentError(f"unknown optimizer {self.optimizer!r}")


# ----------------------------------------------------------------------
# parameter dictionaries
# ----------------------------------------------------------------------


def init_params(
    d_x: int, d_h: int, z_dim: int, hidden: tuple[int, ...], rng: np.random.Generator
) -> dict[str, np.ndarray]:
    params = {
        "user_proj.weight": rng.normal(size=(d_x, d_h)) / np.sqrt(d_x),
        "user_proj.bias": np.zeros(d_h),
        "item_proj.weight": rng.normal(size=(d_x, d_h)) / np.sqrt(d_x),
        "item_proj.bias": np.zeros(d_h),
    }
    dims = [2 * d_h, *hidden, z_dim]
    for m in range(len(dims) - 1):
        params[f"mlp.{m}.weight"] = rng.normal(size=(dims[m + 1], dims[m])) / np.sqrt(dims[m])
        params[f"mlp.{m}.bias"] = np.zeros(dims[m + 1])
    params["attention"] = np.full(z_dim, 1.0 / z_dim)
    return params


def n_mlp_layers(params: dict[str, np.ndarray]) -> int:
    return sum(1 for k in params if k.endswith(".weight") and k.startswith("mlp."))


def params_from_model(model: RelevanceModel) -> dict[str, np.ndarray]:
    params = {
        "user_proj.weight": model.user_projector.weight.astype(np.float64),
        "user_proj.bias": model.user_projector.bias.astype(np.float64),
        "item_proj.weight": model.item_projector.weight.astype(np.float64),
        "item_proj.bias": model.item_projector.bias.astype(np.float64),
    }
    for m, (w, b) in enumerate(model.metric.layers):
        params[f"mlp.{m}.weight"] = w.astype(np.float64)
        params[f"mlp.{m}.bias"] = b.astype(np.float64)
    params["attention"] = model.metric.attention.astype(np.float64)
    return params


def model_from_params(
    params: dict[str, np.ndarray],
    serendipity_sigma: float = 1.0,
    activation: str = "relu",
    dtype=np.float32,
) -> RelevanceModel:
    n_layers = n_mlp_layers(params)
    return RelevanceModel(
        user_projector=Projector(
            params["user_proj.weight"].astype(dtype),
            params["user_proj.bias"].astype(dtype),
        ),
        item_projector=Projector(
            params["item_proj.weight"].astype(dtype),
            params["item_proj.bias"].astype(dtype),
        ),
        metric=MetricModel(
            layers=[
                (
                    params[f"mlp.{m}.weight"].astype(dtype),
                    params[f"mlp.{m}.bias"].astype(dtype),
                )
                for m in range(n_layers)
            ],
            attention=params["attention"].astype(dtype),
            serendipity_sigma=serendipity_sigma,
            activation=activation,
        ),
    )


# ----------------------------------------------------------------------
# forward / backward machinery
# ----------------------------------------------------------------------


def _mlp_forward(params, x0: np.ndarray, activation: str):
    """Returns (pre-activations per layer, inputs per layer, output)."""
    n_layers = n_mlp_layers(params)
    pres = []
    inputs = [x0]
    x = x0
    for m in range(n_layers):
        w = params[f"mlp.{m}.weight"]
        b = params[f"mlp.{m}.bias"]
        a = x @ w.T + b
        pres.append(a)
        if m < n_layers - 1:
            x = np.maximum(a, 0) if activation == "relu" else a
            inputs.append(x)
        else:
            x = a
    return pres, inputs, x


def _mlp_backward(params, pres, inputs, d_out: np.ndarray, activation: str, grads):
    """Backprop d_out (= dL/d output) through the MLP; returns dL/d x0."""
    n_layers = n_mlp_layers(params)
    g = d_out
    for m in range(n_layers - 1, -1, -1):
        grads[f"mlp.{m}.weight"] += g.T @ inputs[m]
        grads[f"mlp.{m}.bias"] += g.sum(axis=0)
        g = g @ params[f"mlp.{m}.weight"]
        if m > 0 and activation == "relu":
            g = g * (pres[m - 1] > 0)
    return g


def _embed(params, xu: np.ndarray, xv: np.ndarray):
    hu = xu @ params["user_proj.weight"] + params["user_proj.bias"]
    hv = xv @ params["item_proj.weight"] + params["item_proj.bias"]
    return hu, hv


def _embed_backward(params, xu, xv, dhu, dhv, grads):
    grads["user_proj.weight"] += xu.T @ dhu
    grads["user_proj.bias"] += dhu.sum(axis=0)
    grads["item_proj.weight"] += xv.T @ dhv
    grads["item_proj.bias"] += dhv.sum(axis=0)


def _zero_grads(params) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


def pearson_correlation(xs, ys) -> float:
    """Covariance of the two lists over the product of their root
    sum-of-squared deviations; raises if either list is constant."""
    a = np.asarray(xs, dtype=np.float64)
    b = np.asarray(ys, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise InvalidArgumentError("inputs must be equal-length 1-D sequences")
    if len(a) < 2:
        raise InvalidArgumentError("need at least 2 samples")
    da = a - a.mean()
    db = b - b.mean()
    saa = float(da @ da)
    sbb = float(db @ db)
    if saa == 0.0 or sbb == 0.0:
        raise DegenerateVarianceError("constant value list: correlation undefined")
    return float((da @ db) / (np.sqrt(saa) * np.sqrt(sbb)))


def _pred_term(params, xu, xv, targets, noise, activation, grads=None):
    """Mean L2 norm of the per-pair residual; optionally accumulate grads."""
    hu, hv = _embed(params, xu, xv)
    hu_in = hu if noise is None else hu + noise
    x0 = np.concatenate([hu_in, hv], axis=1)
    pres, inputs, z_hat = _mlp_forward(params, x0, activation)
    resid = z_hat - targets
    norms = np.sqrt((resid * resid).sum(axis=1))
    loss = float(norms.mean())
    if grads is None:
        return loss
    n = len(norms)
    safe = np.where(norms > 0, norms, 1.0)
    d_zhat = resid / (n * safe)[:, None]
    d_zhat[norms == 0] = 0.0
    dx0 = _mlp_backward(params, pres, inputs, d_zhat, activation, grads)
    d_h = hu.shape[1]
    _embed_backward(params, xu, xv, dx0[:, :d_h], dx0[:, d_h:], grads)
    return loss


def _scl_term(params, xu, xv, eps, activation, grads=None, train_attention=False):
    """Rank-alignment loss over sampled pairs; optionally accumulate grads.

    Scores use inference mode (no serendipity noise); distances are
    Euclidean between the pair's embeddings.  rho correlates scores with
    negated distances so rho -> 1 means the metric ranks near items high.
    """
    hu, hv = _embed(params, xu, xv)
    x0 = np.concatenate([hu, hv], axis=1)
    pres, inputs, z_hat = _mlp_forward(params, x0, activation)
    a_vec = params["attention"]
    delta = z_hat @ a_vec

    diff = hu - hv
    dist = np.sqrt((diff * diff).sum(axis=1))
    b = -dist

    da = delta - delta.mean()
    db = b - b.mean()
    saa = float(da @ da)
    sbb = float(db @ db)
    if saa <= 0.0 or sbb <= 0.0:
        raise DegenerateVarianceError("constant scores or distances in sampled pairs")
    sigma_a = np.sqrt(saa)
    sigma_b = np.sqrt(sbb)
    rho = float((da @ db) / (sigma_a * sigma_b))
    loss = 1.0 / (rho + 1.0 + eps)
    if grads is None:
        return loss, rho

    dl_drho = -1.0 / (rho + 1.0 + eps) ** 2
    d_delta = dl_drho * (db / (sigma_a * sigma_b) - rho * da / saa)
    d_b = dl_drho * (da / (sigma_a * sigma_b) - rho * db / sbb)
    d_dist = -d_b

    # score path
    d_zhat = np.outer(d_delta, a_vec)
    dx0 = _mlp_backward(params, pres, inputs, d_zhat, activation, grads)
    d_h = hu.shape[1]
    dhu = dx0[:, :d_h].copy()
    dhv = dx0[:, d_h:].copy()
    if train_attention:
        grads["attention"] += z_hat.T @ d_delta

    # distance path
    safe = np.where(dist > 0, dist, 1.0)
    d_diff = (d_dist / safe)[:, None] * diff
    d_diff[dist == 0] = 0.0
    dhu += d_diff
    dhv -= d_diff

    _embed_backward(params, xu, xv, dhu, dhv, grads)
    return loss, rho


def total_loss_value(
    params,
    xu,
    xv,
    targets,
    noise,
    scl_xu,
    scl_xv,
    lambda_scl,
    eps,
    activation="relu",
) -> float:
    """Pure loss evaluation (used by finite-difference checks)."""
    loss = _pred_term(params, xu, xv, targets, noise, activation)
    if lambda_scl != 0.0:
        scl, _ = _scl_term(params, scl_xu, scl_xv, eps, activation)
        loss += lambda_scl * scl
    return loss


def total_loss_and_grad(
    params,
    xu,
    xv,
    targets,
    noise,
    scl_xu,
    scl_xv,
    lambda_scl,
    eps,
    activation="relu",
    train_attention=False,
):
    """Returns (total, breakdown dict, gradient dict)."""
    grads = _zero_grads(params)
    pred = _pred_term(params, xu, xv, targets, noise, activation, grads)
    scl_value = 0.0
    rho = None
    if lambda_scl != 0.0:
        scl_grads = _zero_grads(params)
        scl_value, rho = _scl_term(
            params, scl_xu, scl_xv, eps, activation, scl_grads, train_attention
        )
        for k in grads:
            grads[k] += lambda_scl * scl_grads[k]
    total = pred + lambda_scl * scl_value
    breakdown = {"prediction": pred, "scl": scl_value, "rho": rho}
    if not train_attention:
        grads["attention"][:] = 0.0
    return total, breakdown, grads


# ----------------------------------------------------------------------
# convenience wrappers over a finished model (test-facing contracts)
# ----------------------------------------------------------------------


def prediction_loss(model: RelevanceModel, xu, xv, targets) -> float:
    """Mean L2 norm of (target - predicted interaction vector)."""
    if len(xu) == 0:
        raise InvalidArgumentError("empty batch")
    params = params_from_model(model)
    return _pred_term(
        params,
        np.asarray(xu, dtype=np.float64),
        np.asarray(xv, dtype=np.float64),
        np.asarray(targets, dtype=np.float64),
        None,
        model.metric.activation,
    )


def scl_loss(model: RelevanceModel, xu, xv, eps: float = 1e-3) -> float:
    """Alignment loss 1/(rho+1+eps) for the given sampled pair features."""
    params = params_from_model(model)
    loss, _ = _scl_term(
        params,
        np.asarray(xu, dtype=np.float64),
        np.asarray(xv, dtype=np.float64),
        eps,
        model.metric.activation,
    )
    return loss


def total_loss(
    model: RelevanceModel, xu, xv, targets, scl_xu, scl_xv, lambda_scl=1.0, eps=1e-3
) -> tuple[float, dict]:
    """Prediction + lambda * alignment, with the per-term breakdown."""
    pred = prediction_loss(model, xu, xv, targets)
    scl = scl_loss(model, scl_xu, scl_xv, eps) if lambda_scl != 0.0 else 0.0
    return pred + lambda_scl * scl, {"prediction": pred, "scl": scl}


# ----------------------------------------------------------------------
# the training loop
# ----------------------------------------------------------------------


@dataclass
class TrainState:
    params: dict[str, np.ndarray]
    config: TrainConfig
    epoch: int = 0
    step: int = 0
    loss_history: list[tuple[int, float, float, float]] = field(default_factory=list)
    opt_m: dict[str, np.ndarray] = field(default_factory=dict)
    opt_v: dict[str, np.ndarray] = field(default_factory=dict)

    def to_model(self) -> RelevanceModel:
        return model_from_params(
            self.params,
            serendipity_sigma=self.config.serendipity_sigma,
            activation=self.config.activation,
        )

    def loss_columns(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        h = np.array(self.loss_history)
        return h[:, 0], h[:, 1], h[:, 2], h[:, 3]


def _sample_negatives(rng, n_users, n_items, observed: set, count: int) -> np.ndarray:
    out = np.empty((count, 2), dtype=np.int64)
    filled = 0
    while filled < count:
        need = count - filled
        u = rng.integers(0, n_users, size=2 * need + 8)
        v = rng.integers(0, n_items, size=2 * need + 8)
        for uu, vv in zip(u, v):
            if int(uu) * n_items + int(vv) in observed:
                continue
            out[filled] = (uu, vv)
            filled += 1
            if filled == count:
                break
    return out


def fit(dataset: Dataset, config: TrainConfig) -> TrainState:
    """Minibatch gradient descent over observed pairs plus sampled negatives.

    Deterministic for a fixed ``rng_seed``.  Raises
    :class:`TrainingDivergedError` carrying the last finite state if the
    loss leaves the finite range.
    """
    if dataset.n_users == 0 or dataset.n_items == 0:
        raise InvalidArgumentError("dataset has no users or items")
    rng = np.random.default_rng(config.rng_seed)
    xu_all = dataset.user_features().astype(np.float64)
    xv_all = dataset.item_features().astype(np.float64)
    d_x = xu_all.shape[1]

    obs_pairs, obs_targets = dataset.pair_targets()
    if len(obs_pairs) == 0:
        raise InvalidArgumentError("dataset has no interactions to fit")
    observed = {int(u) * dataset.n_items + int(v) for u, v in obs_pairs}

    params = init_params(d_x, config.d_h, dataset.z_dim, config.hidden, rng)
    state = TrainState(
        params=params,
        config=config,
        opt_m={k: np.zeros_like(v) for k, v in params.items()},
        opt_v={k: np.zeros_like(v) for k, v in params.items()},
    )

    n_neg = int(round(len(obs_pairs) * config.negative_ratio))
    for epoch in range(config.epochs):
        negs = (
            _sample_negatives(rng, dataset.n_users, dataset.n_items, observed, n_neg)
            if n_neg > 0
            else np.empty((0, 2), dtype=np.int64)
        )
        pairs = np.concatenate([obs_pairs, negs])
        targets = np.concatenate(
            [obs_targets, np.zeros((len(negs), dataset.z_dim))]
        )
        perm = rng.permutation(len(pairs))
        for lo in range(0, len(perm), config.batch_size):
            sel = perm[lo : lo + config.batch_size]
            bu = xu_all[pairs[sel, 0]]
            bv = xv_all[pairs[sel, 1]]
            bz = targets[sel]
            noise = (
                rng.normal(size=(len(sel), config.d_h)) * config.serendipity_sigma
                if config.serendipity_sigma > 0
                else None
            )

            def draw_scl():
                iu = rng.integers(0, dataset.n_users, size=config.n_scl_pairs)
                iv = rng.integers(0, dataset.n_items, size=config.n_scl_pairs)
                return xu_all[iu], xv_all[iv]

            scl_xu, scl_xv = draw_scl()
            try:
                total, breakdown, grads = total_loss_and_grad(
                    params,
                    bu,
                    bv,
                    bz,
                    noise,
                    scl_xu,
                    scl_xv,
                    config.lambda_scl,
                    config.epsilon_rho,
                    config.activation,
                    config.train_attention,
                )
            except DegenerateVarianceError:
                scl_xu, scl_xv = draw_scl()  # resample once, then give up
                total, breakdown, grads = total_loss_and_grad(
                    params,
                    bu,
                    bv,
                    bz,
                    noise,
                    scl_xu,
                    scl_xv,
                    config.lambda_scl,
                    config.epsilon_rho,
                    config.activation,
                    config.train_attention,
                )
            if not np.isfinite(total):
                raise TrainingDivergedError(
                    f"non-finite loss at step {state.step}", state=state
                )

            state.step += 1
            lr = config.learning_rate
            if config.optimizer == "adam":
                b1, b2 = config.adam_beta1, config.adam_beta2
                t = state.step
                for k, g in grads.items():
                    state.opt_m[k] = b1 * state.opt_m[k] + (1 - b1) * g
                    state.opt_v[k] = b2 * state.opt_v[k] + (1 - b2) * g * g
                    m_hat = state.opt_m[k] / (1 - b1**t)
                    v_hat = state.opt_v[k] / (1 - b2**t)
                    params[k] -= lr * m_hat / (np.sqrt(v_hat) + config.adam_eps)
            else:
                for k, g in grads.items():
                    params[k] -= lr * g
            state.loss_history.append(
                (state.step, breakdown["prediction"], breakdown["scl"], total)
            )
        state.epoch = epoch + 1

    for k, v in params.items():
        if not np.isfinite(v).all():
            raise TrainingDivergedError("non-finite parameters after training", state=state)
    return state
