"""scikit-learn style wrappers around training, estimation and attacks."""
import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .attack import AttackConfig, pgd
from .data import Dataset
from .evtlip import estimate_lipschitz
from .exceptions import InvalidInput
from .models import ModelSpec, forward
from .optim import Schedule, SnapshotLog, TrainConfig, make_poe_schedule, train


class PoEClassifier(BaseEstimator, ClassifierMixin):
    """MLP classifier trained with a baseline or PoE-rescaled learning-rate schedule.

    With ``multiplier=None`` the baseline schedule is used as is. With 1 or 2
    the baseline is trained first, the gradient Lipschitz constant is
    estimated from its snapshots, and the model is retrained from the same
    initialization with the schedule rescaled to start at ``multiplier / L_est``.
    Inputs must lie in [0, 1].
    """

    def __init__(self, hidden=(32,), activation="tanh", epochs=10, batch_size=None, momentum=0.0,
                 weight_decay=0.0, schedule="constant", eta1=0.1, milestones=(), multiplier=None,
                 snapshots_per_epoch=1, M_list=(50, 100), N_list=(20, 40),
                 shape0_list=(0.1, 1.0, 5.0, 10.0), alpha=0.55, random_state=0):
        self.hidden = hidden
        self.activation = activation
        self.epochs = epochs
        self.batch_size = batch_size
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.schedule = schedule
        self.eta1 = eta1
        self.milestones = milestones
        self.multiplier = multiplier
        self.snapshots_per_epoch = snapshots_per_epoch
        self.M_list = M_list
        self.N_list = N_list
        self.shape0_list = shape0_list
        self.alpha = alpha
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, codes = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise InvalidInput("need at least two classes")
        self.n_features_in_ = X.shape[1]
        seed = int(self.random_state or 0)
        ds = Dataset(X, codes, name="fit", seed=seed)
        self.spec_ = ModelSpec((X.shape[1], *self.hidden, len(self.classes_)), self.activation,
                               "softmax_ce", seed)
        cfg = TrainConfig(epochs=self.epochs, batch_size=self.batch_size, momentum=self.momentum,
                          weight_decay=self.weight_decay, seed=seed,
                          snapshots_per_epoch=self.snapshots_per_epoch)
        base = Schedule(self.schedule, self.eta1, milestones=tuple(self.milestones))
        res = train(self.spec_, ds, base, cfg)
        self.L_est_ = None
        if self.multiplier is not None:
            est = estimate_lipschitz(res.log, list(self.M_list), list(self.N_list), list(self.shape0_list),
                                     self.alpha, seed=seed)
            self.L_est_ = est.L_est
            base = make_poe_schedule(base, est.L_est, self.multiplier)
            res = train(self.spec_, ds, base, cfg)
        self.schedule_ = base
        self.theta_ = res.final
        self.history_ = res.history
        self.snapshots_ = res.log
        return self

    def decision_function(self, X):
        check_is_fitted(self, "theta_")
        X = check_array(X, dtype=np.float64)
        return forward(self.spec_, self.theta_, X)

    def predict_proba(self, X):
        z = self.decision_function(X)
        z = np.exp(z - z.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def predict(self, X):
        z = self.decision_function(X)
        return self.classes_[np.argmax(z, axis=1)]


class LipschitzEstimator(BaseEstimator):
    """Extreme-value estimate of the gradient Lipschitz constant of a training run.

    ``fit`` takes a :class:`~poelr.optim.SnapshotLog` or a pair of arrays
    ``(thetas, grads)`` with one row per snapshot.
    """

    def __init__(self, M_list=(50, 100), N_list=(20, 40), shape0_list=(0.1, 1.0, 5.0, 10.0), alpha=0.55,
                 report="location", random_state=0):
        self.M_list = M_list
        self.N_list = N_list
        self.shape0_list = shape0_list
        self.alpha = alpha
        self.report = report
        self.random_state = random_state

    def fit(self, X, y=None):
        log = X
        if not isinstance(X, SnapshotLog):
            thetas, grads = X
            thetas = check_array(thetas, dtype=np.float64)
            grads = check_array(grads, dtype=np.float64)
            if thetas.shape != grads.shape:
                raise InvalidInput("thetas and grads must have the same shape")
            log = SnapshotLog()
            for i, (t, g) in enumerate(zip(thetas, grads), 1):
                log.append(i, t, g)
        self.estimate_ = estimate_lipschitz(log, list(self.M_list), list(self.N_list), list(self.shape0_list),
                                            self.alpha, seed=int(self.random_state or 0), report=self.report)
        self.L_est_ = self.estimate_.L_est
        return self


class PGDTransformer(BaseEstimator, TransformerMixin):
    """Maps inputs to l-infinity PGD adversarial examples against a fitted :class:`PoEClassifier`.

    Without labels the attack targets the classifier's own predictions.
    """

    def __init__(self, classifier, epsilon=1.0 / 255, step_size=0.1 / 255, steps=20, random_init=True,
                 random_state=0):
        self.classifier = classifier
        self.epsilon = epsilon
        self.step_size = step_size
        self.steps = steps
        self.random_init = random_init
        self.random_state = random_state

    def fit(self, X=None, y=None):
        check_is_fitted(self.classifier, "theta_")
        self.config_ = AttackConfig(self.epsilon, self.step_size, self.steps, self.random_init,
                                    int(self.random_state or 0))
        return self

    def transform(self, X, y=None):
        check_is_fitted(self, "config_")
        X = check_array(X, dtype=np.float64)
        clf = self.classifier
        if y is None:
            codes = np.argmax(clf.decision_function(X), axis=1)
        else:
            codes = np.searchsorted(clf.classes_, np.asarray(y))
        return pgd(clf.spec_, clf.theta_, X, codes, self.config_)
