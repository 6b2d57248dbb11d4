"""scikit-learn estimators wrapping initialization + SVI training."""
import numpy as np
from scipy.special import softmax
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.preprocessing import LabelBinarizer
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, validate_data

from .initializers import INITIALIZERS, InitSpec, initialize
from .numkernel import make_rng
from .train import AnnealSchedule, TrainConfig, predictive_samples, train_loop
from .vnet import Classification, Regression, build_network

__all__ = ["VariationalRegressor", "VariationalClassifier"]


class _VariationalNetworkBase(BaseEstimator):
    def __init__(
        self,
        hidden_layer_sizes=(100,),
        activation="relu",
        init="iblm",
        max_iter=1000,
        batch_size=64,
        learning_rate=1e-3,
        n_mc_train=16,
        n_mc_test=128,
        local_reparam=True,
        kl_annealing=None,
        init_batch_size=64,
        blm_noise_variance=0.01,
        blm_prior_precision=None,
        alpha=0.01,
        lsuv_tol=0.1,
        lsuv_max_iter=10,
        input_shape=None,
        eval_interval=None,
        random_state=0,
    ):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.activation = activation
        self.init = init
        self.max_iter = max_iter
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.n_mc_train = n_mc_train
        self.n_mc_test = n_mc_test
        self.local_reparam = local_reparam
        self.kl_annealing = kl_annealing
        self.init_batch_size = init_batch_size
        self.blm_noise_variance = blm_noise_variance
        self.blm_prior_precision = blm_prior_precision
        self.alpha = alpha
        self.lsuv_tol = lsuv_tol
        self.lsuv_max_iter = lsuv_max_iter
        self.input_shape = input_shape
        self.eval_interval = eval_interval
        self.random_state = random_state

    def _seed(self):
        rs = self.random_state
        if rs is None:
            return int(np.random.SeedSequence().entropy % (2 ** 63))
        if isinstance(rs, np.random.RandomState):
            return int(rs.randint(2 ** 31))
        return int(rs)

    def _fit_network(self, X, Y, likelihood, X_val, Y_val):
        if self.init not in INITIALIZERS:
            raise ValueError(f"init must be one of {INITIALIZERS}, got {self.init!r}")
        seed = self._seed()
        self.network_ = build_network(X.shape[1], Y.shape[1], tuple(self.hidden_layer_sizes),
                                      self.activation, likelihood, self.input_shape)
        spec = InitSpec(self.init, seed, self.init_batch_size, self.alpha,
                        self.blm_prior_precision, self.blm_noise_variance,
                        self.lsuv_tol, self.lsuv_max_iter)
        _, self.init_diagnostics_ = initialize(self.network_, spec, X, Y)
        anneal = AnnealSchedule(**self.kl_annealing, enabled=True) if self.kl_annealing \
            else AnnealSchedule()
        config = TrainConfig(
            lr=self.learning_rate, batch_size=self.batch_size,
            n_mc_train=self.n_mc_train, n_mc_test=self.n_mc_test,
            max_iterations=self.max_iter,
            eval_interval=self.eval_interval or max(self.max_iter, 1),
            local_reparam=self.local_reparam, anneal=anneal, seed=seed)
        if X_val is None:
            X_val, Y_val = X, Y
        self.curve_ = train_loop(self.network_, (X, Y), (X_val, Y_val), config)
        self.n_iter_ = self.max_iter
        self._predict_seed = seed
        return self

    def _scale_x(self, X):
        return (X - self.x_mean_) / self.x_scale_

    def _check_predict_input(self, X):
        check_is_fitted(self)
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return self._scale_x(X)

    def _samples(self, X):
        # shared weight samples from a fixed stream: a row's prediction ignores the other rows
        rng = make_rng(self._predict_seed, 99)
        return predictive_samples(self.network_, X, self.n_mc_test, rng, local_reparam=False)

    def _fit_scaler(self, X):
        self.x_mean_ = X.mean(axis=0)
        scale = X.std(axis=0)
        self.x_scale_ = np.where(scale > 0, scale, 1.0)


class VariationalRegressor(RegressorMixin, _VariationalNetworkBase):
    """Bayesian neural network regressor trained by stochastic variational inference.

    Weights have a fully factorized Gaussian posterior and a ``N(0, 1)`` prior.
    Features and targets are standardized with training statistics.

    Parameters
    ----------
    hidden_layer_sizes : sequence, default=(100,)
        Dense widths, or ``("conv", out_channels, kernel, stride, padding)``
        entries when ``input_shape`` is given.
    activation : {"relu", "tanh", "identity"}, default="relu"
    init : {"iblm", "uninformative", "heuristic", "xavier", "orthogonal", "lsuv"}, default="iblm"
        How the variational parameters are initialized.
    max_iter : int, default=1000
        Adam iterations.
    batch_size : int, default=64
    learning_rate : float, default=1e-3
    n_mc_train, n_mc_test : int, default=16, 128
        Monte Carlo samples for the training objective and for prediction.
    local_reparam : bool, default=True
        Sample dense pre-activations instead of weights during training.
        Prediction always samples weights, shared across the rows of ``X``.
    kl_annealing : dict or None
        ``{"rate", "midpoint", "max_weight"}`` of a sigmoid KL-weight ramp.
    init_batch_size, blm_noise_variance, blm_prior_precision, alpha
        i-BLM settings (mini-batch per neuron, regression noise, prior
        precision, label-transform regularizer).
    lsuv_tol, lsuv_max_iter
        LSUV settings.
    input_shape : tuple of int, optional
        ``(C, H, W)`` of the flattened input for convolutional stacks.
    eval_interval : int, optional
        Record a learning-curve point every this many iterations
        (default: only at start and end).
    random_state : int, RandomState or None, default=0

    Attributes
    ----------
    network_ : vbinit.vnet.Network
    curve_ : list of CurveRecord
        Learning curve on the validation data (training data if none given),
        in standardized target units.
    init_diagnostics_ : list
    """

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.target_tags.multi_output = True
        return tags

    def fit(self, X, y, X_val=None, y_val=None):
        X, y = validate_data(self, X, y, dtype=np.float64, y_numeric=True, multi_output=True)
        self._fit_scaler(X)
        Y = y.reshape(len(y), -1)
        self._y_1d = y.ndim == 1
        self.y_mean_ = Y.mean(axis=0)
        scale = Y.std(axis=0)
        self.y_scale_ = np.where(scale > 0, scale, 1.0)
        Xs, Ys = self._scale_x(X), (Y - self.y_mean_) / self.y_scale_
        if X_val is not None:
            X_val = self._scale_x(check_array(X_val, dtype=np.float64))
            y_val = (np.asarray(y_val, dtype=np.float64).reshape(len(X_val), -1)
                     - self.y_mean_) / self.y_scale_
        return self._fit_network(Xs, Ys, Regression(), X_val, y_val)

    def predict(self, X, return_std=False):
        f = self._samples(self._check_predict_input(X))
        mean = f.mean(axis=0) * self.y_scale_ + self.y_mean_
        if not return_std:
            return mean[:, 0] if self._y_1d else mean
        noise = np.exp(self.network_.likelihood.log_noise_variance)
        std = np.sqrt(f.var(axis=0) + noise) * self.y_scale_
        if self._y_1d:
            return mean[:, 0], std[:, 0]
        return mean, std


class VariationalClassifier(ClassifierMixin, _VariationalNetworkBase):
    """Bayesian neural network classifier trained by stochastic variational inference.

    Accepts the same parameters as :class:`VariationalRegressor`; the
    likelihood is a softmax over the network outputs.

    Attributes
    ----------
    classes_ : ndarray of shape (n_classes,)
    network_ : vbinit.vnet.Network
    curve_ : list of CurveRecord
        ``test_metric`` holds the error rate.
    """

    def fit(self, X, y, X_val=None, y_val=None):
        X, y = validate_data(self, X, y, dtype=np.float64)
        check_classification_targets(y)
        self._fit_scaler(X)
        self._binarizer = LabelBinarizer().fit(y)
        self.classes_ = self._binarizer.classes_
        if len(self.classes_) < 2:
            raise ValueError("Classifier can't train when only one class is present.")
        Y = self._onehot(y)
        if X_val is not None:
            X_val = self._scale_x(check_array(X_val, dtype=np.float64))
            y_val = self._onehot(y_val)
        k = len(self.classes_)
        return self._fit_network(self._scale_x(X), Y, Classification(k, self.alpha),
                                 X_val, y_val)

    def _onehot(self, y):
        Y = self._binarizer.transform(y).astype(np.float64)
        if Y.shape[1] == 1:
            Y = np.hstack([1.0 - Y, Y])
        return Y

    def predict_proba(self, X):
        f = self._samples(self._check_predict_input(X))
        return softmax(f, axis=-1).mean(axis=0)

    def predict(self, X):
        check_is_fitted(self)
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]
