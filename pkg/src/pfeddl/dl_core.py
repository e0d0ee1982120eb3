"""Per-site sparse dictionary learning updates.

Shapes follow the column-sample convention used throughout the package:
``X`` is ``d x n`` (one sample per column), the dictionary ``D`` is
``d x k`` (one atom per column) and the code matrix ``S`` is ``k x n``.

The update rules are implemented as plain gradient / proximal steps.  Each
one is the gradient of an explicit generating function, which the finite
difference tests check against:

* codes, unsupervised:  ``0.5 * ||X - D S||_F^2``
* codes, supervised:    ``L(Y, S, w) + 0.5 * lambda1 * ||X - D S||_F^2``
* dictionary:           ``0.5 * lam_rec * ||X - D S||_F^2 + 0.25 * lam_orth * ||D^T D - I||_F^2``
* classifier:           ``L(Y, S, w) + 0.5 * lambda3 * ||w||^2``

``objective_site`` reports the federated objective with unit weights on
every penalty (no 1/2 or 1/4 factors), so it differs from the generating
functions above by constant factors on individual terms.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, DegenerateInputError, ShapeError

logger = logging.getLogger(__name__)

PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class Hyperparams:
    """Hyperparameters of one PFedDL run.

    Defaults suit full-size connectivity features (k=400 atoms of which
    370 are federated, tiny step size).  The three iteration counts are
    moderate choices; raise them for real data.
    """

    lambda1: float = 1.0
    lambda2: float = 0.005
    lambda3: float = 1.5
    lambda4: float = 0.01
    eta: float = 1e-4
    k: int = 400
    g: int = 370
    iters_local: int = 10
    iters_fed: int = 50
    iters_pretrain: int = 200
    seed: int = 0

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3", "lambda4"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ConfigurationError(f"{name} must be a nonnegative real, got {value!r}")
        if not np.isfinite(self.eta) or self.eta <= 0:
            raise ConfigurationError(f"eta must be positive, got {self.eta!r}")
        if self.k < 1:
            raise ConfigurationError(f"k must be at least 1, got {self.k}")
        if not 0 <= self.g <= self.k:
            raise ConfigurationError(f"g must satisfy 0 <= g <= k, got g={self.g}, k={self.k}")
        for name in ("iters_local", "iters_fed", "iters_pretrain"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be nonnegative, got {getattr(self, name)}")

    def with_(self, **changes) -> "Hyperparams":
        return replace(self, **changes)


@dataclass
class ClassifierWeights:
    """Linear classifier ``z = w^T s + b`` on sparse codes."""

    w: np.ndarray
    b: float = 0.0

    @classmethod
    def zeros(cls, k: int) -> "ClassifierWeights":
        return cls(np.zeros(k), 0.0)

    def copy(self) -> "ClassifierWeights":
        return ClassifierWeights(self.w.copy(), float(self.b))


def _check_factorization(D, S, X):
    if D.ndim != 2 or S.ndim != 2 or X.ndim != 2:
        raise ShapeError(f"expected 2-D arrays, got D{D.shape}, S{S.shape}, X{X.shape}")
    d, k = D.shape
    if S.shape[0] != k:
        raise ShapeError(f"code has {S.shape[0]} rows but dictionary has {k} atoms")
    if X.shape != (d, S.shape[1]):
        raise ShapeError(f"data is {X.shape}, expected ({d}, {S.shape[1]}) from D{D.shape} and S{S.shape}")


def _check_labels(Y, S, clf: ClassifierWeights | None = None):
    Y = np.asarray(Y)
    if Y.ndim != 1 or Y.shape[0] != S.shape[1]:
        raise ShapeError(f"{Y.shape[0] if Y.ndim == 1 else Y.shape} labels for {S.shape[1]} code columns")
    if clf is not None and np.shape(clf.w) != (S.shape[0],):
        raise ShapeError(f"classifier has {np.shape(clf.w)} weights for {S.shape[0]} atoms")
    return Y.astype(float)


def soft_threshold(x, lam: float):
    """``sign(x) * max(|x| - lam, 0)``, elementwise."""
    if lam < 0:
        raise ConfigurationError(f"threshold must be nonnegative, got {lam}")
    x = np.asarray(x, dtype=float)
    out = np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)
    return out if out.ndim else float(out)


def update_codes_unsupervised(D, S, X, eta: float, eps: float) -> np.ndarray:
    """One ISTA step on the codes: ``SoftThreshold(S - eta D^T (D S - X), eps)``."""
    _check_factorization(D, S, X)
    return soft_threshold(S - eta * (D.T @ (D @ S - X)), eps)


def update_dictionary(D, S, X, eta: float, lam_orth: float, lam_rec: float = 1.0) -> np.ndarray:
    """One gradient step on the dictionary with the Gram-form orthogonality penalty.

    Computes ``D - eta * (lam_rec (D S - X) S^T + lam_orth D (D^T D - I))``.
    Columns are not renormalized; see :func:`normalize_columns`.
    """
    _check_factorization(D, S, X)
    k = D.shape[1]
    gram = D.T @ D - np.eye(k)
    return D - eta * (lam_rec * ((D @ S - X) @ S.T) + lam_orth * (D @ gram))


def normalize_columns(D, rng: np.random.Generator | None = None, warnings: list | None = None) -> np.ndarray:
    """Scale every column of ``D`` to unit Euclidean norm.

    A zero column has no direction to keep.  It is replaced by a random unit
    vector drawn from ``rng`` and a message is appended to ``warnings``.
    Without an ``rng`` a zero column is an error.
    """
    D = np.array(D, dtype=float)
    norms = np.linalg.norm(D, axis=0)
    dead = np.flatnonzero(norms == 0)
    if dead.size:
        if rng is None:
            raise DegenerateInputError(f"zero dictionary column(s) {dead.tolist()} and no generator to redraw them")
        for j in dead:
            v = rng.standard_normal(D.shape[0])
            D[:, j] = v / np.linalg.norm(v)
            msg = f"atom {j} collapsed to zero and was redrawn at random"
            logger.warning(msg)
            if warnings is not None:
                warnings.append(msg)
        norms = np.linalg.norm(D, axis=0)
    return D / norms


def _sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def classification_loss(Y, S, clf: ClassifierWeights) -> float:
    """Mean binary cross-entropy of ``sigmoid(w^T s_a + b)`` against the labels."""
    y = _check_labels(Y, S, clf)
    p = np.clip(_sigmoid(clf.w @ S + clf.b), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(np.mean(-y * np.log(p) - (1.0 - y) * np.log(1.0 - p)))


def _loss_residual(Y, S, clf):
    """Per-sample ``(sigmoid(z_a) - y_a) / n``: the derivative of the mean loss w.r.t. ``z``."""
    y = _check_labels(Y, S, clf)
    return (_sigmoid(clf.w @ S + clf.b) - y) / y.shape[0]


def loss_gradients(Y, S, clf: ClassifierWeights):
    """Return ``(dL/dw, dL/db, dL/dS)`` for :func:`classification_loss`."""
    r = _loss_residual(Y, S, clf)
    return S @ r, float(r.sum()), np.outer(clf.w, r)


def update_classifier(clf: ClassifierWeights, Y, S, eta: float, lam3: float) -> ClassifierWeights:
    """``w <- w - eta (dL/dw + lam3 w)``; the bias takes a plain loss step."""
    r = _loss_residual(Y, S, clf)
    grad_w = S @ r + lam3 * clf.w
    return ClassifierWeights(clf.w - eta * grad_w, float(clf.b - eta * r.sum()))


def update_codes_supervised(S, D, X, Y, clf: ClassifierWeights, hyper: Hyperparams) -> np.ndarray:
    """Proximal step on the codes combining the classification and reconstruction gradients."""
    _check_factorization(D, S, X)
    r = _loss_residual(Y, S, clf)
    grad = np.outer(clf.w, r) + hyper.lambda1 * (D.T @ (D @ S - X))
    return soft_threshold(S - hyper.eta * grad, hyper.eta * hyper.lambda2)


def supervised_dictionary_step(D, S, X, hyper: Hyperparams) -> np.ndarray:
    return update_dictionary(D, S, X, hyper.eta, hyper.lambda4, lam_rec=hyper.lambda1)


def objective_site(X, Y, D, S, clf: ClassifierWeights, hyper: Hyperparams) -> float:
    """``L + l1 ||X-DS||_F^2 + l2 ||S||_1 + l3 ||w||^2 + l4 ||D^T D - I||_F^2`` for one site."""
    _check_factorization(D, S, X)
    k = D.shape[1]
    return (
        classification_loss(Y, S, clf)
        + hyper.lambda1 * float(np.sum((X - D @ S) ** 2))
        + hyper.lambda2 * float(np.sum(np.abs(S)))
        + hyper.lambda3 * float(clf.w @ clf.w)
        + hyper.lambda4 * float(np.sum((D.T @ D - np.eye(k)) ** 2))
    )


def dl_objective(X, D, S, lam_sparse: float, lam_orth: float) -> float:
    """Objective minimized by the unsupervised alternating steps.

    ``0.5 ||X - DS||_F^2 + lam_sparse ||S||_1 + 0.25 lam_orth ||D^T D - I||_F^2``
    """
    k = D.shape[1]
    return (
        0.5 * float(np.sum((X - D @ S) ** 2))
        + lam_sparse * float(np.sum(np.abs(S)))
        + 0.25 * lam_orth * float(np.sum((D.T @ D - np.eye(k)) ** 2))
    )


def init_dictionary(d: int, k: int, rng: np.random.Generator) -> np.ndarray:
    return normalize_columns(rng.standard_normal((d, k)), rng)


def pretrain_local(
    X,
    hyper: Hyperparams,
    rng: np.random.Generator | None = None,
    history: list | None = None,
    warnings: list | None = None,
):
    """Unsupervised alternating dictionary learning for one site.

    Starts from a random column-normalized Gaussian dictionary and zero
    codes, then repeats ``iters_pretrain`` times: an ISTA code step with
    threshold ``eta * lambda2``, a dictionary step with orthogonality weight
    ``lambda4``, and column normalization.

    If ``history`` is given, the value of :func:`dl_objective` is appended
    at initialization and every 10 iterations (and at the end).

    Returns:
        ``(D, S)`` with shapes ``(d, k)`` and ``(k, n)``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] < 1:
        raise ShapeError(f"data matrix must be 2-D with at least one sample, got shape {X.shape}")
    if rng is None:
        rng = np.random.default_rng(hyper.seed)
    d, n = X.shape
    D = init_dictionary(d, hyper.k, rng)
    S = np.zeros((hyper.k, n))
    eps = hyper.eta * hyper.lambda2

    def log(it):
        if history is not None:
            history.append((it, dl_objective(X, D, S, hyper.lambda2, hyper.lambda4)))

    log(0)
    for it in range(1, hyper.iters_pretrain + 1):
        S = update_codes_unsupervised(D, S, X, hyper.eta, eps)
        D = normalize_columns(update_dictionary(D, S, X, hyper.eta, hyper.lambda4), rng, warnings)
        if it % 10 == 0 or it == hyper.iters_pretrain:
            log(it)
    return D, S
