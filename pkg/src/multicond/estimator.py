"""scikit-learn style wrapper around training and retrieval."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .catalog import Product
from .encoder import EncoderConfig, embed_for_retrieval
from .evaluation import embed_pool, evaluate, rank
from .sampler import Query, QuerySet
from .trainer import Trainer, TrainConfig
from .validation import ConfigError


class CoralRetriever(BaseEstimator):
    """Fine-tunes the toy encoder on composed queries and retrieves products.

    ``X`` is a sequence of :class:`Query` objects; the product catalog is
    passed to :meth:`fit` and kept as the retrieval pool.

    >>> est = CoralRetriever(preset="CL", lr=3e-3).fit(train_queries, catalog=catalog)
    >>> est.predict(test_queries, k=10).shape
    (500, 10)
    """

    def __init__(self, preset="CORAL", input_mode="Seq", lr=3e-3, epochs=1, global_batch=64,
                 use_lora=False, lora_r=8, lora_lr=1e-2, tau=0.02, delta=0.5,
                 lambda_reg=0.1, lambda_rec=0.1, d=64, n_layers=2, n_heads=4, n_slots=4,
                 random_state=0):
        self.preset = preset
        self.input_mode = input_mode
        self.lr = lr
        self.epochs = epochs
        self.global_batch = global_batch
        self.use_lora = use_lora
        self.lora_r = lora_r
        self.lora_lr = lora_lr
        self.tau = tau
        self.delta = delta
        self.lambda_reg = lambda_reg
        self.lambda_rec = lambda_rec
        self.d = d
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.n_slots = n_slots
        self.random_state = random_state

    def _train_config(self):
        return TrainConfig(
            preset=self.preset, input_mode=self.input_mode, lr=self.lr, epochs=self.epochs,
            global_batch=self.global_batch, use_lora=self.use_lora, lora_r=self.lora_r,
            lora_lr=self.lora_lr, tau=self.tau, delta=self.delta, lambda_reg=self.lambda_reg,
            lambda_rec=self.lambda_rec, seed=self.random_state,
        ).validate()

    def fit(self, X, y=None, catalog=None):
        if catalog is None:
            raise ValueError("fit needs the product catalog: fit(queries, catalog=...)")
        queries = _queries(X)
        config = self._train_config()
        enc_cfg = EncoderConfig(
            d=self.d, image_dim=catalog.products[0].image_features.shape[1],
            n_slots=self.n_slots, n_layers=self.n_layers, n_heads=self.n_heads,
            vocab_size=catalog.vocab.size, seed=self.random_state,
        )
        trainer = Trainer(catalog, queries, config, enc_cfg)
        trainer.run()
        self.encoder_ = trainer.encoder
        self.catalog_ = catalog
        self.loss_curve_ = trainer.loss_curve
        self.store_ = embed_pool(self.encoder_, catalog, self.input_mode)
        self.n_features_out_ = self.d
        return self

    def transform(self, X):
        """Unit-norm retrieval embeddings, one row per query or product."""
        check_is_fitted(self, "encoder_")
        items = list(X.queries if isinstance(X, QuerySet) else X)
        if not all(isinstance(x, (Query, Product)) for x in items):
            raise TypeError("transform expects Query or Product objects")
        if not items:
            return np.zeros((0, self.d))
        return embed_for_retrieval(self.encoder_, items, self.input_mode, self.catalog_)

    def predict(self, X, k=10):
        """Top-``k`` product ids per query (own condition products excluded)."""
        check_is_fitted(self, "encoder_")
        if isinstance(k, bool) or not isinstance(k, (int, np.integer)) or k < 1:
            raise ConfigError(f"k must be a positive integer, got {k!r}")
        queries = _queries(X)
        emb = self.transform(queries)
        out = np.full((len(queries), k), -1, dtype=np.int64)
        for i, (q, e) in enumerate(zip(queries, emb)):
            ids = rank(e, self.store_, exclude=set(q.condition_ids), query_id=q.id).ids[:k]
            out[i, :len(ids)] = ids
        return out

    def evaluate(self, X, splits=None):
        check_is_fitted(self, "encoder_")
        qs = X if isinstance(X, QuerySet) else QuerySet(_queries(X))
        return evaluate(self.encoder_, self.catalog_, qs, splits, mode=self.input_mode,
                        store=self.store_)

    def score(self, X, y=None):
        """Recall@1 over ``X``."""
        return self.evaluate(X).splits["overall"]["R@1"]


def _queries(X):
    queries = list(X.queries if isinstance(X, QuerySet) else X)
    if not queries:
        raise ValueError("need at least one query")
    if not all(isinstance(q, Query) for q in queries):
        raise TypeError("expected a sequence of Query objects")
    return queries
