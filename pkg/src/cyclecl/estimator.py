"""scikit-learn style wrapper around the training loop."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .head import HeadConfig
from .mining import AugmentConfig, MinerConfig
from .seqdata import FeatureSequence
from .training import TrainConfig, as_feature_arrays, embed_sequence, train


class CycleCL(TransformerMixin, BaseEstimator):
    """Projection head trained with similarity-mined triplets.

    ``fit`` takes a list of (N, S, C) feature arrays or FeatureSequences;
    ``transform`` maps the same kind of input to a list of (N, out_dim)
    embedding arrays (a single array in, a single array out).
    """

    def __init__(self, margin=0.5, clip_length=100, temporal_stride=2, batch_clips=4, epochs_max=100,
                 zero_loss_patience=20, loss_tol=1e-6, lr=1e-4, weight_decay=1e-3,
                 strategy="mean_threshold", beta=0.3, topk=4, max_triplets_per_anchor=16,
                 augment_mode="positives_only", hidden_channels=32, out_dim=16, kernel_size=3,
                 pooling="max", use_batchnorm=True, use_l2norm=True, random_state=0):
        self.margin = margin
        self.clip_length = clip_length
        self.temporal_stride = temporal_stride
        self.batch_clips = batch_clips
        self.epochs_max = epochs_max
        self.zero_loss_patience = zero_loss_patience
        self.loss_tol = loss_tol
        self.lr = lr
        self.weight_decay = weight_decay
        self.strategy = strategy
        self.beta = beta
        self.topk = topk
        self.max_triplets_per_anchor = max_triplets_per_anchor
        self.augment_mode = augment_mode
        self.hidden_channels = hidden_channels
        self.out_dim = out_dim
        self.kernel_size = kernel_size
        self.pooling = pooling
        self.use_batchnorm = use_batchnorm
        self.use_l2norm = use_l2norm
        self.random_state = random_state

    def _train_config(self, in_channels):
        head = HeadConfig(
            in_channels=in_channels, hidden_channels=self.hidden_channels, out_dim=self.out_dim,
            kernel_size=self.kernel_size, pooling=self.pooling, use_batchnorm=self.use_batchnorm,
            use_l2norm=self.use_l2norm,
        )
        miner = MinerConfig(strategy=self.strategy, beta=self.beta, k=self.topk,
                            max_triplets_per_anchor=self.max_triplets_per_anchor)
        return TrainConfig(
            margin=self.margin, clip_length=self.clip_length, temporal_stride=self.temporal_stride,
            batch_clips=self.batch_clips, epochs_max=self.epochs_max,
            zero_loss_patience=self.zero_loss_patience, loss_tol=self.loss_tol, lr=self.lr,
            weight_decay=self.weight_decay, seed=int(self.random_state), miner=miner,
            augment=AugmentConfig(mode=self.augment_mode), head=head,
        ).validate()

    def fit(self, X, y=None):
        feats = as_feature_arrays(X)
        self.config_ = self._train_config(feats[0].shape[-1])
        self.params_, self.report_ = train(feats, self.config_)
        self.n_features_in_ = feats[0].shape[-1]
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        head = self.config_.head
        if isinstance(X, FeatureSequence):
            return embed_sequence(X.features, self.params_, head)
        if isinstance(X, np.ndarray) and X.ndim == 3:
            return embed_sequence(X, self.params_, head)
        return [embed_sequence(f, self.params_, head) for f in as_feature_arrays(X)]
