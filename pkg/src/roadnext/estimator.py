"""Thin scikit-learn-style wrappers around the pipeline components.

These adapt the functional core to the fit/transform/predict convention so the
pieces compose with sklearn tooling (grid search, pipelines, clone).  The
estimators hold no state beyond what fit produces, and all heavy lifting stays
in the underlying modules.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import model as md
from . import training as tr
from .features import Normalizer


class DescriptorNormalizer(TransformerMixin, BaseEstimator):
    """Per-column z-scoring with a variance floor, as applied to POI
    descriptors before they enter the model."""

    def __init__(self, epsilon=1e-8):
        self.epsilon = epsilon

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if X.shape[0] < 2:
            raise ValueError("need at least 2 rows to fit the normalizer")
        self.mean_ = X.mean(axis=0)
        self.scale_ = np.maximum(X.std(axis=0), self.epsilon)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return (X - self.mean_) / self.scale_

    def to_normalizer(self) -> Normalizer:
        check_is_fitted(self, "mean_")
        return Normalizer(mean=self.mean_.copy(), std=self.scale_.copy())


class Node2VecEmbedder(TransformerMixin, BaseEstimator):
    """Structural node embeddings; fit on a RoadGraph, transform node ids."""

    def __init__(self, dim=64, p=1.0, q=1.0, walk_length=40, walks_per_node=10,
                 window=5, negatives=5, epochs=5, lr=0.025, seed=0, workers=1):
        self.dim = dim
        self.p = p
        self.q = q
        self.walk_length = walk_length
        self.walks_per_node = walks_per_node
        self.window = window
        self.negatives = negatives
        self.epochs = epochs
        self.lr = lr
        self.seed = seed
        self.workers = workers

    def fit(self, graph, y=None):
        from .embeddings import build_embeddings
        self.embeddings_ = build_embeddings(
            graph, dim=self.dim, p=self.p, q=self.q, walk_length=self.walk_length,
            walks_per_node=self.walks_per_node, window=self.window,
            negatives=self.negatives, epochs=self.epochs, lr=self.lr,
            seed=self.seed, workers=self.workers)
        return self

    def transform(self, node_ids):
        check_is_fitted(self, "embeddings_")
        return np.array([self.embeddings_.vector(int(n)) for n in node_ids])


class NextNodePredictor(BaseEstimator):
    """Next-node ranking model over projected Examples.

    `X` is a list of Examples; the road graph and feature store are fixed at
    construction because examples only carry node ids.
    """

    def __init__(self, graph=None, store=None, d=64, heads=4, layers_std=1,
                 layers_rel=1, d_ffn=64, d_h=64, gamma=0.1, dropout=0.1,
                 epochs=10, batch_size=16, lr=1e-4, val_fraction=0.1, seed=0):
        self.graph = graph
        self.store = store
        self.d = d
        self.heads = heads
        self.layers_std = layers_std
        self.layers_rel = layers_rel
        self.d_ffn = d_ffn
        self.d_h = d_h
        self.gamma = gamma
        self.dropout = dropout
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.val_fraction = val_fraction
        self.seed = seed

    def _config(self):
        poi_dim = len(next(iter(self.store.descriptors.values())).x)
        d_s = self.store.embeddings.dim
        return md.ModelConfig(d=self.d, heads=self.heads,
                              layers_std=self.layers_std,
                              layers_rel=self.layers_rel, d_ffn=self.d_ffn,
                              d_h=self.d_h, d_s=d_s, poi_dim=poi_dim,
                              gamma=self.gamma, dropout=self.dropout,
                              seed=self.seed)

    def fit(self, X, y=None):
        if self.graph is None or self.store is None:
            raise ValueError("NextNodePredictor requires graph= and store=")
        X = list(X)
        if not X:
            raise ValueError("empty example list")
        self.config_ = self._config()
        n_val = max(1, int(round(len(X) * self.val_fraction))) if len(X) > 1 else 0
        order = np.random.default_rng(self.seed).permutation(len(X))
        val = [X[i] for i in order[:n_val]]
        train = [X[i] for i in order[n_val:]] or X
        _, best, self.logs_ = tr.train(train, val, self.config_, self.store,
                                       self.graph, epochs=self.epochs,
                                       batch_size=self.batch_size, lr=self.lr,
                                       seed=self.seed)
        self.params_ = best
        return self

    def predict_proba(self, X):
        """Per example: probabilities aligned with its sorted candidate list."""
        check_is_fitted(self, "params_")
        out = []
        for ex in X:
            res = md.forward(ex, self.params_, self.config_, self.store,
                             self.graph, with_loss=False)
            out.append(res.probs)
        return out

    def predict(self, X):
        probs = self.predict_proba(X)
        return np.array([ex.candidates[int(np.argmax(p))]
                         for ex, p in zip(X, probs)])

    def score(self, X, y=None):
        """Acc@1 with pessimistic tie handling."""
        from .evaluation import rank_of_label
        check_is_fitted(self, "params_")
        ranks = []
        for ex in X:
            res = md.forward(ex, self.params_, self.config_, self.store,
                             self.graph, with_loss=False)
            ranks.append(rank_of_label(res.scores, ex.candidates, ex.label))
        return float(np.mean(np.asarray(ranks) == 1))
