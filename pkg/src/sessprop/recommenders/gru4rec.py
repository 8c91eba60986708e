"""GRU4Rec: a single-layer GRU over one-hot item inputs, trained with BPR-max.

Training is session-parallel: each mini-batch lane walks one session, and a
lane whose session ends picks up the next session with its hidden state
reset. Gradients are truncated to one step (the hidden state is carried
forward but not back-propagated through), and the other lanes' targets act
as negatives. Everything runs in numpy on one thread, so a fixed seed gives a
bit-identical parameter trajectory.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..core import InvalidInputError, MissingItemError, RankedScores, Session, SessPropError
from .losses import bpr_max_in_batch

logger = logging.getLogger(__name__)


class NumericError(SessPropError):
    pass


@dataclass(frozen=True)
class Gru4RecConfig:
    hidden_size: int = 100
    loss: str = "bpr-max"
    dropout: float = 0.3
    learning_rate: float = 0.03
    momentum: float = 0.1
    optimizer: str = "adagrad-momentum"
    epochs: int = 10
    batch_size: int = 32
    bpr_reg_lambda: float = 1.0
    init_scale: float | None = None
    adagrad_eps: float = 1e-6
    seed: int = 0

    def __post_init__(self) -> None:
        if self.hidden_size < 1 or self.batch_size < 1:
            raise InvalidInputError("hidden_size and batch_size must be positive")
        if self.epochs < 0:
            raise InvalidInputError("epochs must be >= 0")
        if self.loss != "bpr-max":
            raise InvalidInputError(f"unsupported loss {self.loss!r}")
        if self.optimizer != "adagrad-momentum":
            raise InvalidInputError(f"unsupported optimizer {self.optimizer!r}")
        if not 0 <= self.dropout < 1:
            raise InvalidInputError("dropout must lie in [0, 1)")
        if not 0 <= self.momentum < 1:
            raise InvalidInputError("momentum must lie in [0, 1)")
        for name in ("learning_rate", "adagrad_eps"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidInputError(f"{name} must be a positive finite number")
        if not (math.isfinite(self.bpr_reg_lambda) and self.bpr_reg_lambda >= 0):
            raise InvalidInputError("bpr_reg_lambda must be >= 0")


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class GRUParams:
    """``Wx`` maps a one-hot item to the stacked [update, reset, candidate]
    pre-activations; ``Wh`` does the same for the hidden state."""

    Wx: np.ndarray  # (n_items, 3H)
    Wh: np.ndarray  # (H, 3H)
    b: np.ndarray  # (3H,)
    Wy: np.ndarray  # (n_items, H)
    by: np.ndarray  # (n_items,)

    @property
    def hidden_size(self) -> int:
        return self.Wh.shape[0]

    @property
    def n_items(self) -> int:
        return self.Wx.shape[0]

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"Wx": self.Wx, "Wh": self.Wh, "b": self.b, "Wy": self.Wy, "by": self.by}

    @classmethod
    def zeros(cls, n_items: int, hidden: int) -> "GRUParams":
        return cls(
            np.zeros((n_items, 3 * hidden)),
            np.zeros((hidden, 3 * hidden)),
            np.zeros(3 * hidden),
            np.zeros((n_items, hidden)),
            np.zeros(n_items),
        )


def init_params(n_items: int, hidden: int, rng: np.random.Generator, scale: float | None = None) -> GRUParams:
    def uniform(shape, fan_in, fan_out):
        bound = scale if scale is not None else math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=shape)

    return GRUParams(
        Wx=uniform((n_items, 3 * hidden), n_items, hidden),
        Wh=uniform((hidden, 3 * hidden), hidden, hidden),
        b=np.zeros(3 * hidden),
        Wy=uniform((n_items, hidden), hidden, n_items),
        by=np.zeros(n_items),
    )


@dataclass
class GRUCache:
    x: np.ndarray
    h: np.ndarray
    z: np.ndarray
    r: np.ndarray
    c: np.ndarray


def gru_step(params: GRUParams, x: np.ndarray, h: np.ndarray) -> tuple[np.ndarray, GRUCache]:
    """One GRU step for a batch of item indices ``x`` (B,) and hidden states ``h`` (B, H)."""
    H = params.hidden_size
    if h.ndim != 2 or h.shape[1] != H or h.shape[0] != len(x):
        raise InvalidInputError(f"hidden state shape {h.shape} does not match ({len(x)}, {H})")
    gx = params.Wx[x] + params.b
    gh = h @ params.Wh[:, : 2 * H]
    z = sigmoid(gx[:, :H] + gh[:, :H])
    r = sigmoid(gx[:, H : 2 * H] + gh[:, H:])
    c = np.tanh(gx[:, 2 * H :] + (r * h) @ params.Wh[:, 2 * H :])
    h_new = (1.0 - z) * h + z * c
    return h_new, GRUCache(x, h, z, r, c)


def gru_cell_forward(params: GRUParams, x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """GRU recurrence for one dense input vector ``x`` (length n_items) and state ``h`` (length H)."""
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    H = params.hidden_size
    if x.shape != (params.n_items,) or h.shape != (H,):
        raise InvalidInputError(
            f"expected x of shape ({params.n_items},) and h of shape ({H},), got {x.shape} and {h.shape}"
        )
    gx = x @ params.Wx + params.b
    z = sigmoid(gx[:H] + h @ params.Wh[:, :H])
    r = sigmoid(gx[H : 2 * H] + h @ params.Wh[:, H : 2 * H])
    c = np.tanh(gx[2 * H :] + (r * h) @ params.Wh[:, 2 * H :])
    return (1.0 - z) * h + z * c


def gru_step_backward(params: GRUParams, cache: GRUCache, dh_new: np.ndarray, grads: GRUParams) -> None:
    """Accumulate parameter gradients of one step into ``grads``; ``cache.h`` is treated as constant."""
    H = params.hidden_size
    x, h, z, r, c = cache.x, cache.h, cache.z, cache.r, cache.c
    dz = dh_new * (c - h)
    dac = dh_new * z * (1.0 - c * c)
    rh = r * h
    dr = (dac @ params.Wh[:, 2 * H :].T) * h
    daz = dz * z * (1.0 - z)
    dar = dr * r * (1.0 - r)
    dgates = np.concatenate([daz, dar, dac], axis=1)
    grads.Wh[:, :H] += h.T @ daz
    grads.Wh[:, H : 2 * H] += h.T @ dar
    grads.Wh[:, 2 * H :] += rh.T @ dac
    grads.b += dgates.sum(axis=0)
    np.add.at(grads.Wx, x, dgates)


class AdagradMomentum:
    """Adagrad-scaled step fed into a classical momentum velocity.

    ``acc += g**2``; ``v = momentum * v - lr * g / sqrt(acc + eps)``; ``p += v``.
    Item-indexed matrices are updated only on the rows a batch touched.
    """

    def __init__(self, params: GRUParams, lr: float, momentum: float, eps: float):
        self.lr, self.momentum, self.eps = lr, momentum, eps
        self.acc = {k: np.zeros_like(v) for k, v in params.as_dict().items()}
        self.vel = {k: np.zeros_like(v) for k, v in params.as_dict().items()}

    def _update(self, name: str, p: np.ndarray, g: np.ndarray, rows: np.ndarray | None) -> None:
        acc, vel = self.acc[name], self.vel[name]
        if rows is None:
            acc += g * g
            vel *= self.momentum
            vel -= self.lr * g / np.sqrt(acc + self.eps)
            p += vel
        else:
            g = g[rows]
            acc[rows] += g * g
            vel[rows] = self.momentum * vel[rows] - self.lr * g / np.sqrt(acc[rows] + self.eps)
            p[rows] += vel[rows]

    def step(self, params: GRUParams, grads: GRUParams, input_rows: np.ndarray, output_rows: np.ndarray) -> None:
        self._update("Wx", params.Wx, grads.Wx, input_rows)
        self._update("Wh", params.Wh, grads.Wh, None)
        self._update("b", params.b, grads.b, None)
        self._update("Wy", params.Wy, grads.Wy, output_rows)
        self._update("by", params.by, grads.by, output_rows)


class GRU4Rec:
    kind = "gru4rec"

    def __init__(self, config: Gru4RecConfig = Gru4RecConfig()):
        self.config = config
        self.params: GRUParams | None = None
        self.epochs_trained = 0
        self.loss_history: list[float] = []

    @property
    def n_items(self) -> int:
        return self.params.n_items

    @property
    def trained(self) -> bool:
        return self.epochs_trained > 0

    def fit(self, sessions: Sequence[Session], n_items: int) -> "GRU4Rec":
        cfg = self.config
        if not sessions:
            raise InvalidInputError("cannot train GRU4Rec on an empty training partition")
        rng = np.random.default_rng(cfg.seed)
        self.params = init_params(n_items, cfg.hidden_size, rng, cfg.init_scale)
        optimizer = AdagradMomentum(self.params, cfg.learning_rate, cfg.momentum, cfg.adagrad_eps)
        session_items = [np.asarray(s.items, dtype=np.int64) for s in sessions if len(s) >= 2]
        self.loss_history = []
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(session_items))
            loss = self._train_epoch([session_items[i] for i in order], optimizer, rng, epoch)
            self.loss_history.append(loss)
            self.epochs_trained = epoch + 1
            logger.info("epoch %d: mean BPR-max loss %.6f", epoch + 1, loss)
        return self

    def _train_epoch(self, sessions: list[np.ndarray], optimizer: AdagradMomentum,
                     rng: np.random.Generator, epoch: int) -> float:
        cfg, params = self.config, self.params
        H = cfg.hidden_size
        n_lanes = min(cfg.batch_size, len(sessions))
        lane_session = np.arange(n_lanes)
        lane_pos = np.zeros(n_lanes, dtype=np.int64)
        hidden = np.zeros((n_lanes, H))
        next_session = n_lanes
        active = np.ones(n_lanes, dtype=bool)
        keep = 1.0 - cfg.dropout
        total, weight, step = 0.0, 0, 0

        while active.sum() >= 2:
            lanes = np.flatnonzero(active)
            x = np.array([sessions[lane_session[l]][lane_pos[l]] for l in lanes])
            y = np.array([sessions[lane_session[l]][lane_pos[l] + 1] for l in lanes])
            h_new, cache = gru_step(params, x, hidden[lanes])
            if cfg.dropout > 0:
                mask = (rng.random(h_new.shape) < keep) / keep
                h_out = h_new * mask
            else:
                mask, h_out = None, h_new
            Wy_t = params.Wy[y]
            scores = h_out @ Wy_t.T + params.by[y]
            loss, dscores = bpr_max_in_batch(scores, cfg.bpr_reg_lambda)
            if not math.isfinite(loss):
                bad = int(np.argmax(~np.isfinite(scores).all(axis=1)))
                raise NumericError(
                    f"non-finite loss at epoch {epoch + 1} step {step}: lane {int(lanes[bad])}, "
                    f"input item {int(x[bad])}, target item {int(y[bad])}"
                )

            grads = GRUParams.zeros(params.n_items, H)
            # scores[b, j] = h_out[b] . Wy[y[j]] + by[y[j]]
            np.add.at(grads.Wy, y, dscores.T @ h_out)
            np.add.at(grads.by, y, dscores.sum(axis=0))
            dh = dscores @ Wy_t
            if mask is not None:
                dh = dh * mask
            gru_step_backward(params, cache, dh, grads)
            optimizer.step(params, grads, np.unique(x), np.unique(y))

            hidden[lanes] = h_new
            total += loss * len(lanes)
            weight += len(lanes)
            step += 1

            lane_pos[lanes] += 1
            for l in lanes:
                if lane_pos[l] + 1 >= len(sessions[lane_session[l]]):
                    if next_session < len(sessions):
                        lane_session[l] = next_session
                        next_session += 1
                        lane_pos[l] = 0
                        hidden[l] = 0.0
                    else:
                        active[l] = False
        return total / weight if weight else float("nan")

    def _check_prefix(self, prefix: Sequence[int]) -> np.ndarray:
        if self.params is None:
            raise InvalidInputError("model has not been fitted")
        items = np.asarray(prefix, dtype=np.int64)
        if items.size == 0:
            raise InvalidInputError("prefix must be non-empty")
        if items.min() < 0 or items.max() >= self.params.n_items:
            bad = items[(items < 0) | (items >= self.params.n_items)][0]
            raise MissingItemError(int(bad))
        return items

    def final_hidden(self, prefix: Sequence[int]) -> np.ndarray:
        items = self._check_prefix(prefix)
        h = np.zeros((1, self.config.hidden_size))
        for item in items:
            h, _ = gru_step(self.params, np.array([item]), h)
        return h[0]

    def score(self, prefix: Sequence[int]) -> RankedScores:
        h = self.final_hidden(prefix)
        return RankedScores(self.params.Wy @ h + self.params.by)

    # persistence hooks
    def arrays(self) -> dict[str, np.ndarray]:
        arrays = dict(self.params.as_dict())
        arrays["loss_history"] = np.asarray(self.loss_history, dtype=np.float64)
        return arrays

    def meta(self) -> dict:
        return {"n_items": self.n_items, "epochs_trained": self.epochs_trained, "untrained": not self.trained}

    @classmethod
    def from_arrays(cls, config: Gru4RecConfig, meta: dict, arrays: dict[str, np.ndarray]) -> "GRU4Rec":
        model = cls(config)
        model.params = GRUParams(arrays["Wx"], arrays["Wh"], arrays["b"], arrays["Wy"], arrays["by"])
        model.epochs_trained = int(meta["epochs_trained"])
        model.loss_history = [float(v) for v in arrays["loss_history"]]
        return model


def gru4rec_train(sessions: Sequence[Session], config: Gru4RecConfig, n_items: int) -> GRU4Rec:
    return GRU4Rec(config).fit(sessions, n_items)


def gru4rec_score(model: GRU4Rec, prefix: Sequence[int]) -> RankedScores:
    return model.score(prefix)
