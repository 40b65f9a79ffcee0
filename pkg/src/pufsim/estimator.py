"""scikit-learn style wrapper around the federated simulator.

``FederatedClassifier`` trains with FedAvg over clients given by ``groups``
(or a partition it draws itself) and can later forget clients in place::

    clf = FederatedClassifier(rounds=30, random_state=0).fit(X, y, groups=client_ids)
    clf.unlearn([3], strategy="puf_special", recovery_rounds=5)
    clf.score(X_test, y_test)
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import FederatedDataset, partition_iid, partition_lda
from .engine import Hyper, train
from .nn import LabeledBatch, ModelArch, predict, predict_proba
from .unlearn import UnlearnRequest, apply_strategy, recover, sample_scope_filter


class FederatedClassifier(ClassifierMixin, BaseEstimator):
    """FedAvg-trained logistic regression or one-hidden-layer MLP.

    Parameters
    ----------
    arch : {"logistic", "mlp"}
    hidden_dim : int, used when ``arch="mlp"``
    n_clients : int, number of clients when ``groups`` is not passed to ``fit``
    partition : {"iid", "lda"}, how to split samples when ``groups`` is None
    alpha : float, Dirichlet concentration for ``partition="lda"``
    rounds, epochs, lr, batch_size, lr_decay, eta_s : FedAvg settings
    random_state : int
    n_jobs : int, threads for per-client training (results do not depend on it)
    """

    def __init__(
        self,
        arch="logistic",
        hidden_dim=16,
        n_clients=10,
        partition="iid",
        alpha=0.3,
        rounds=30,
        epochs=1,
        lr=0.1,
        batch_size=32,
        lr_decay=0.998,
        eta_s=1.0,
        random_state=0,
        n_jobs=1,
    ):
        self.arch = arch
        self.hidden_dim = hidden_dim
        self.n_clients = n_clients
        self.partition = partition
        self.alpha = alpha
        self.rounds = rounds
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.lr_decay = lr_decay
        self.eta_s = eta_s
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _hyper(self) -> Hyper:
        return Hyper(self.epochs, self.lr, self.batch_size, self.lr_decay, self.eta_s)

    def fit(self, X, y, groups=None):
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        self.n_features_in_ = X.shape[1]
        batch = LabeledBatch(X, encoded, np.arange(len(encoded)))
        k = len(self.classes_)

        if groups is not None:
            groups = np.asarray(groups)
            if groups.shape != (len(y),):
                raise ValueError("groups must have one entry per sample")
            self.client_ids_ = np.unique(groups)
            clients = tuple(batch.take(np.flatnonzero(groups == g)) for g in self.client_ids_)
            empty_test = LabeledBatch(np.empty((0, X.shape[1])), np.empty(0, dtype=np.int64))
            fd = FederatedDataset(clients, empty_test, k)
        elif self.partition == "iid":
            fd = partition_iid(batch, self.n_clients, self.random_state, num_classes=k)
            self.client_ids_ = np.arange(self.n_clients)
        elif self.partition == "lda":
            fd = partition_lda(batch, self.n_clients, self.alpha, seed=self.random_state, num_classes=k)
            self.client_ids_ = np.arange(self.n_clients)
        else:
            raise ValueError(f"unknown partition {self.partition!r}")

        self.arch_ = ModelArch(self.arch, X.shape[1], k, self.hidden_dim if self.arch == "mlp" else None)
        self.params_, self.history_ = train(
            fd, self.arch_, self.rounds, self._hyper(), seed=self.random_state, n_jobs=self.n_jobs
        )
        self.dataset_ = fd
        self.active_clients_ = list(range(fd.num_clients))
        return self

    def _client_index(self, client) -> int:
        hits = np.flatnonzero(self.client_ids_ == client)
        if hits.size == 0:
            raise KeyError(f"unknown client {client!r}")
        return int(hits[0])

    def unlearn(self, clients, strategy="puf_special", eta_u=None, eta_r=1.0, recovery_rounds=0, X_val=None, y_val=None):
        """Forget ``clients`` and optionally run recovery rounds without them.

        With ``X_val``/``y_val`` recovery stops early once validation
        accuracy is back at its pre-unlearning level.
        """
        check_is_fitted(self, "params_")
        if strategy in ("retrain", "pga"):
            raise ValueError(f"{strategy!r} is not available on the estimator; use the experiment runner")
        targets = frozenset(self._client_index(c) for c in np.atleast_1d(clients))
        request = UnlearnRequest(targets, strategy, eta_r=eta_r, eta_u=eta_u, seed=self.random_state)
        views = sample_scope_filter(request, self.dataset_)
        round_index = len(self.history_)
        w = apply_strategy(request, self.params_, views, self._hyper(), self.random_state, round_index, n_jobs=self.n_jobs)
        keep = [c for c in self.active_clients_ if c not in targets]
        if recovery_rounds > 0:
            if not keep:
                raise ValueError("no clients left for recovery")
            stop = None
            if X_val is not None:
                Xv = check_array(X_val, dtype=np.float64)
                eval_batch = LabeledBatch(Xv, np.searchsorted(self.classes_, np.asarray(y_val)))
                stop = float(np.mean(predict(self.params_, Xv) == eval_batch.labels))
            else:
                eval_batch = LabeledBatch.concat([self.dataset_.clients[c] for c in keep])
            w = recover(
                w, views.recovery, self._hyper(), recovery_rounds, stop, eval_batch, clients=keep,
                seed=self.random_state, round_offset=round_index, n_jobs=self.n_jobs,
            ).w
        self.params_ = w
        self.active_clients_ = keep
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return predict_proba(self.params_, X)

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return self.classes_[predict(self.params_, X)]
