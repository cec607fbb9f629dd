"""AdamW training with validation-based early stopping."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import jax
import jax.numpy as jnp
import numpy as np
import optax

from . import metrics
from .models import KoopmanModel, LossWeights, NonFiniteError, SsmStack, cast, model_loss, predict
from .recurrence import realize_eigenvalues

__all__ = ["TrainConfig", "TrainResult", "train", "evaluate_rel_mse", "check_finite"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.003
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    max_epochs: int = 500
    early_stop_patience: int = 50
    batch_size: int = 32
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 0.01)
    seed: int = 0
    horizon: int | None = None
    dtype: str = "float32"

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be nonnegative")
        if any(w < 0 for w in self.loss_weights):
            raise ValueError("loss weights must be nonnegative")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ValueError("batch_size must be >= 1 and max_epochs >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss_weights"] = list(self.loss_weights)
        return d


@dataclass
class TrainResult:
    model: object
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    diverged: bool = False


def _decay_mask(model):
    """Weight decay on weights and maps only, never on eigenvalue or step parameters."""

    def mask_eigen(tree):
        return jax.tree_util.tree_map(lambda _: False, tree)

    mask = jax.tree_util.tree_map(lambda _: True, model)
    if isinstance(model, KoopmanModel):
        return mask._replace(eigen=mask_eigen(model.eigen))
    if isinstance(model, SsmStack):
        def fix(layer_mask, layer):
            return layer_mask._replace(eigen=mask_eigen(layer.eigen), delta_log=False)

        return mask._replace(
            ic_layer=fix(mask.ic_layer, model.ic_layer),
            layers=tuple(fix(lm, l) for lm, l in zip(mask.layers, model.layers)),
        )
    return mask


_predict_jit = jax.jit(predict, static_argnums=2)


def evaluate_rel_mse(model, trajectories, batch_size: int = 64) -> np.ndarray:
    """Per-trajectory relative MSE of full-length rollouts from each first frame."""
    trajectories = np.asarray(trajectories)
    length = trajectories.shape[1]
    out = []
    for start in range(0, len(trajectories), batch_size):
        chunk = trajectories[start : start + batch_size]
        pred = np.asarray(_predict_jit(model, jnp.asarray(chunk[:, 0]), length))
        out.append(metrics.rel_mse(pred, chunk))
    return np.concatenate(out) if out else np.zeros(0)


def check_finite(model, x0, steps: int) -> None:
    """Run a rollout eagerly and name the first stage producing non-finite values."""
    from .models import decode, encode, ic_layer_forward, silu, ssm_layer_forward

    x0 = jnp.asarray(x0)
    if isinstance(model, SsmStack):
        h = ic_layer_forward(model.ic_layer, x0, steps)
        stages = [("ic_layer", h)]
        for i, layer in enumerate(model.layers):
            h = h + silu(ssm_layer_forward(layer, h))
            stages.append((f"layers[{i}]", h))
        stages.append(("readout", h @ model.readout.weight + model.readout.bias))
    else:
        z = encode(model, x0)
        lam = realize_eigenvalues(model.eigen)
        stages = [("encoder", z), ("eigenvalues", lam), ("decoder", decode(model, z))]
    for name, value in stages:
        if not bool(jnp.all(jnp.isfinite(value))):
            raise NonFiniteError(f"non-finite activations in {name}")


def train(model, train_data, val_data, config: TrainConfig = TrainConfig()) -> TrainResult:
    """Fit ``model`` to ``train_data`` (N, L, N_x) with AdamW at a constant learning rate.

    Validation relative MSE is computed every epoch; the best-validation parameters are
    returned. A non-finite loss stops training and returns the last finite best.
    """
    dtype = jnp.dtype(config.dtype)
    horizon = config.horizon or train_data.shape[1]
    train_data = jnp.asarray(np.asarray(train_data)[:, :horizon], dtype=dtype)
    val_data = np.asarray(val_data)[:, :horizon].astype(dtype)
    weights = LossWeights(*config.loss_weights)
    params = cast(model, dtype)

    opt = optax.adamw(
        config.learning_rate,
        b1=config.beta1,
        b2=config.beta2,
        eps=config.eps,
        weight_decay=config.weight_decay,
        mask=_decay_mask(params),
    )
    opt_state = opt.init(params)

    @jax.jit
    def step(p, state, batch):
        (loss, terms), grads = jax.value_and_grad(lambda m: model_loss(m, batch, weights), has_aux=True)(p)
        updates, state = opt.update(grads, state, p)
        return optax.apply_updates(p, updates), state, loss, terms

    rng = np.random.default_rng(config.seed)
    n = train_data.shape[0]
    best, best_val, best_epoch, stale = params, np.inf, -1, 0
    history: list[dict] = []
    diverged = False
    for epoch in range(config.max_epochs):
        order = rng.permutation(n)
        sums: dict[str, float] = {}
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            new_params, new_state, loss, terms = step(params, opt_state, train_data[idx])
            if not np.isfinite(float(loss)):
                diverged = True
                break
            params, opt_state = new_params, new_state
            frac = len(idx) / n
            sums["loss"] = sums.get("loss", 0.0) + float(loss) * frac
            for k, v in terms.items():
                sums[k] = sums.get(k, 0.0) + float(v) * frac
        if diverged:
            log.warning("non-finite loss at epoch %d; keeping best checkpoint from epoch %d", epoch, best_epoch)
            break
        _assert_stable(params)
        val = float(np.mean(evaluate_rel_mse(params, val_data))) if len(val_data) else float(sums["loss"])
        if not np.isfinite(val):
            diverged = True
            break
        if val < best_val:
            best, best_val, best_epoch, stale = params, val, epoch, 0
        else:
            stale += 1
        history.append({"epoch": epoch, **sums, "val_rel_mse": val, "best_val_rel_mse": best_val})
        log.debug("epoch %d loss %.6g val %.6g", epoch, sums["loss"], val)
        if stale >= config.early_stop_patience:
            break
    return TrainResult(best, history, best_epoch, diverged)


def _assert_stable(model) -> None:
    eigens = []
    if isinstance(model, KoopmanModel):
        eigens.append(model.eigen)
    elif isinstance(model, SsmStack):
        eigens.extend(layer.eigen for layer in (model.ic_layer, *model.layers))
    for eigen in eigens:
        lam = realize_eigenvalues(jax.tree_util.tree_map(lambda a: jnp.asarray(a, jnp.float64), eigen))
        if not bool(jnp.all(jnp.abs(lam) < 1.0)):
            raise FloatingPointError("eigenvalue left the unit disc")
