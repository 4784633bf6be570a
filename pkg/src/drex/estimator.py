"""sklearn-style facade so the regressor composes with the wider ecosystem.

X rows are concatenated feature vectors: the first dino_dim columns are
the transformer embedding, the remaining sum(block_dims) columns the
pooled conv stages, in block order. y is the human complexity score in
[0, 1].
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .features import DatasetManifest, FeatureRecord
from .model import FusionConfig, predict_batch
from .training import TrainConfig, train

_CHUNK = 1024


class DrexRegressor(RegressorMixin, BaseEstimator):
    """Attention-fused two-branch feature regressor with frozen inputs.

    Parameters mirror the underlying model and training configs;
    get_params/set_params therefore expose every knob to grid search and
    pipelines. fit() trains the fusion and head weights from scratch on
    the supplied feature matrix.
    """

    def __init__(
        self,
        dino_dim: int = 384,
        block_dims: tuple[int, ...] = (256, 512, 1024, 2048),
        proj_dim: int = 384,
        attn_hidden: int = 128,
        head_dims: tuple[int, ...] = (128, 64, 32),
        dropout_p: float = 0.1,
        tau_init: float = 1.0,
        alpha_init: float = 0.1,
        epochs: int = 10,
        batch_size: int = 16,
        max_lr: float = 1e-3,
        ema_decay: float = 0.999,
        huber_delta: float = 1.0,
        eval_with_ema: bool = True,
        random_state: int = 0,
    ):
        self.dino_dim = dino_dim
        self.block_dims = block_dims
        self.proj_dim = proj_dim
        self.attn_hidden = attn_hidden
        self.head_dims = head_dims
        self.dropout_p = dropout_p
        self.tau_init = tau_init
        self.alpha_init = alpha_init
        self.epochs = epochs
        self.batch_size = batch_size
        self.max_lr = max_lr
        self.ema_decay = ema_decay
        self.huber_delta = huber_delta
        self.eval_with_ema = eval_with_ema
        self.random_state = random_state

    def _expected_width(self) -> int:
        return int(self.dino_dim) + int(sum(self.block_dims))

    def _split(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        d = int(self.dino_dim)
        return (
            np.ascontiguousarray(X[:, :d], dtype=np.float32),
            np.ascontiguousarray(X[:, d:], dtype=np.float32),
        )

    def _check_width(self, X: np.ndarray) -> None:
        expected = self._expected_width()
        if X.shape[1] != expected:
            raise ValueError(
                f"X has {X.shape[1]} features; expected dino_dim + sum(block_dims) = {expected}"
            )

    def fit(self, X, y) -> "DrexRegressor":
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        self._check_width(X)
        if np.any(y < 0.0) or np.any(y > 1.0):
            raise ValueError("y must lie in [0, 1]")
        dino, resnet = self._split(X)
        records = [
            FeatureRecord(id=f"row_{i}", dino=dino[i], resnet=resnet[i], score=float(y[i]))
            for i in range(X.shape[0])
        ]
        manifest = DatasetManifest(
            records=records,
            split_name="fit",
            dino_dim=int(self.dino_dim),
            block_dims=tuple(self.block_dims),
        )
        model_config = FusionConfig(
            dino_dim=int(self.dino_dim),
            resnet_dim=int(sum(self.block_dims)),
            proj_dim=int(self.proj_dim),
            attn_hidden=int(self.attn_hidden),
            head_dims=tuple(self.head_dims),
            dropout_p=self.dropout_p,
            tau_init=self.tau_init,
            alpha_init=self.alpha_init,
            seed=int(self.random_state),
        )
        train_config = TrainConfig(
            epochs=int(self.epochs),
            batch_size=int(self.batch_size),
            max_lr=self.max_lr,
            ema_decay=self.ema_decay,
            huber_delta=self.huber_delta,
            seed=int(self.random_state),
            eval_with_ema=self.eval_with_ema,
        )
        self.checkpoint_, self.train_report_ = train(model_config, train_config, manifest, None)
        self.n_features_in_ = X.shape[1]
        return self

    def _forward(self, X) -> tuple[np.ndarray, np.ndarray]:
        check_is_fitted(self, "checkpoint_")
        X = check_array(X, dtype=np.float64)
        self._check_width(X)
        dino, resnet = self._split(X)
        params = self.checkpoint_.eval_params()
        preds = np.empty(X.shape[0], dtype=np.float64)
        w_d = np.empty(X.shape[0], dtype=np.float64)
        for start in range(0, X.shape[0], _CHUNK):
            stop = min(start + _CHUNK, X.shape[0])
            p, w = predict_batch(params, dino[start:stop], resnet[start:stop])
            preds[start:stop] = p
            w_d[start:stop] = w
        return preds, w_d

    def predict(self, X) -> np.ndarray:
        """Predicted complexity scores, one per row of X."""
        return self._forward(X)[0]

    def attention_weights(self, X) -> np.ndarray:
        """The transformer-branch attention weight w_d per row of X."""
        return self._forward(X)[1]

    def save(self, path) -> None:
        """Persist the fitted checkpoint in the binary checkpoint format."""
        check_is_fitted(self, "checkpoint_")
        save_checkpoint(self.checkpoint_, path)

    @classmethod
    def from_checkpoint(cls, path) -> "DrexRegressor":
        """Rebuild a fitted estimator from a saved checkpoint."""
        ckpt: Checkpoint = load_checkpoint(path)
        cfg = ckpt.params.config
        rec = ckpt.train_record
        est = cls(
            dino_dim=cfg.dino_dim,
            block_dims=(cfg.resnet_dim,),  # block structure is not in the checkpoint
            proj_dim=cfg.proj_dim,
            attn_hidden=cfg.attn_hidden,
            head_dims=cfg.head_dims,
            dropout_p=cfg.dropout_p,
            tau_init=cfg.tau_init,
            alpha_init=cfg.alpha_init,
            epochs=rec.get("epochs", 10),
            batch_size=rec.get("batch_size", 16),
            max_lr=rec.get("max_lr", 1e-3),
            ema_decay=rec.get("ema_decay", 0.999),
            huber_delta=rec.get("huber_delta", 1.0),
            eval_with_ema=rec.get("eval_with_ema", True),
            random_state=cfg.seed,
        )
        est.checkpoint_ = ckpt
        est.train_report_ = None
        est.n_features_in_ = cfg.dino_dim + cfg.resnet_dim
        return est
