"""scikit-learn style wrapper: federated training of a classifier on ``(X, y)``.

The rows of ``X`` are spread over simulated workers with a Dirichlet label
split, trained with the chosen aggregator, and the final global model is
kept for ``predict``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .config import FedConfig
from .engine import Simulation, classification_problem
from .tasks import LabeledDataset, make_objective


class FederatedClassifier(ClassifierMixin, BaseEstimator):
    """Classifier trained by a simulated federation.

    Parameters mirror the run config; ``random_state`` seeds all four random
    streams.  After ``fit``: ``classes_``, ``coef_`` (flat parameter vector),
    ``history_`` (list of per-round metric dicts) and ``n_features_in_``.
    """

    def __init__(self, aggregator="drag", objective="logistic", n_workers=40, n_selected=10,
                 n_rounds=300, local_steps=5, batch_size=10, stepsize=0.01, alpha=0.25, c=0.25,
                 c_t=0.5, dirichlet_beta=0.1, attack="none", attack_ratio=0.0, hidden=16,
                 eval_every=None, random_state=0):
        self.aggregator = aggregator
        self.objective = objective
        self.n_workers = n_workers
        self.n_selected = n_selected
        self.n_rounds = n_rounds
        self.local_steps = local_steps
        self.batch_size = batch_size
        self.stepsize = stepsize
        self.alpha = alpha
        self.c = c
        self.c_t = c_t
        self.dirichlet_beta = dirichlet_beta
        self.attack = attack
        self.attack_ratio = attack_ratio
        self.hidden = hidden
        self.eval_every = eval_every
        self.random_state = random_state

    def _config(self, n, d, n_classes) -> FedConfig:
        seed = 0 if self.random_state is None else int(self.random_state)
        return FedConfig.from_dict({
            "aggregator": self.aggregator, "objective": self.objective,
            "workers": self.n_workers, "selected": self.n_selected, "rounds": self.n_rounds,
            "local_steps": self.local_steps, "batch_size": self.batch_size, "stepsize": self.stepsize,
            "alpha": self.alpha, "c": self.c, "c_t": self.c_t, "beta": self.dirichlet_beta,
            "attack": self.attack, "ratio": self.attack_ratio, "hidden": self.hidden,
            "n_samples": n, "n_features": d, "n_classes": n_classes, "test_fraction": 0.0,
            "eval_every": self.eval_every or max(1, self.n_rounds),
        }).with_seed(seed)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, codes = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need samples of at least two classes")
        self.n_features_in_ = X.shape[1]
        cfg = self._config(X.shape[0], X.shape[1], len(self.classes_))
        problem = classification_problem(cfg, LabeledDataset(X, codes, len(self.classes_)))
        with Simulation(cfg, problem) as sim:
            self.history_ = [r.as_dict() for r in sim.run()]
            self.coef_ = sim.state.theta.copy()
        return self

    def _check(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def predict_proba(self, X):
        X = self._check(X)
        obj = make_objective(self.objective, self.n_features_in_, len(self.classes_), self.hidden)
        return obj.predict_proba(self.coef_, X)

    def predict(self, X):
        check_is_fitted(self, "coef_")
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]
