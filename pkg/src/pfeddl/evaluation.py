"""Cross-validation, held-out encoding, accuracy and ROI importance."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dataio import devectorize_lower_triangle, roi_count_for
from .dl_core import ClassifierWeights, Hyperparams, _sigmoid, soft_threshold
from .errors import ConfigurationError, PFedDLError, ShapeError
from .federation import FederationResult, run_pfeddl

logger = logging.getLogger(__name__)


@dataclass
class FoldSplit:
    """``sites[i][f]`` is the ``(train, test)`` index pair of fold ``f`` at site ``i``."""

    folds: int
    sites: list

    def fold(self, f: int):
        return [site[f] for site in self.sites]


def kfold_split(n_per_site, folds: int = 4, seed: int = 0) -> FoldSplit:
    """Shuffled near-equal partition of every site's samples into ``folds`` folds."""
    if folds < 2:
        raise ConfigurationError(f"need at least 2 folds to hold out data, got {folds}")
    rng = np.random.default_rng(seed)
    out = []
    for i, n in enumerate(n_per_site):
        if n < folds:
            raise ConfigurationError(f"site {i} has {n} samples, fewer than {folds} folds")
        parts = np.array_split(rng.permutation(n), folds)
        out.append([(np.sort(np.concatenate(parts[:f] + parts[f + 1 :])), np.sort(parts[f])) for f in range(folds)])
    return FoldSplit(folds, out)


def encode_test_samples(D, X, hyper: Hyperparams, tol: float = 1e-6, max_iter: int = 500) -> np.ndarray:
    """Sparse codes of ``X`` under a fixed dictionary.

    ISTA from zero with step ``eta`` and threshold ``eta * lambda2``; stops
    when the relative change of the code matrix drops below ``tol``.
    """
    D = np.asarray(D, dtype=float)
    X = np.asarray(X, dtype=float)
    if D.ndim != 2 or X.ndim != 2 or D.shape[0] != X.shape[0]:
        raise ShapeError(f"dictionary {D.shape} and data {X.shape} disagree on feature dimension")
    eta, thresh = hyper.eta, hyper.eta * hyper.lambda2
    S = np.zeros((D.shape[1], X.shape[1]))
    DtX = D.T @ X
    DtD = D.T @ D
    for _ in range(max_iter):
        S_new = soft_threshold(S - eta * (DtD @ S - DtX), thresh)
        change = np.linalg.norm(S_new - S)
        norm = np.linalg.norm(S_new)
        S = S_new
        if change == 0 or change < tol * norm:
            break
    return S


def predict(clf: ClassifierWeights, S) -> np.ndarray:
    """Label 1 where ``sigmoid(w^T s + b) >= 0.5``."""
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != np.shape(clf.w)[0]:
        raise ShapeError(f"classifier has {np.shape(clf.w)[0]} weights but codes have shape {S.shape}")
    return (_sigmoid(clf.w @ S + clf.b) >= 0.5).astype(np.int64)


def accuracy(pred, truth) -> float:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ShapeError(f"prediction shape {pred.shape} differs from truth shape {truth.shape}")
    if pred.size == 0:
        raise ShapeError("cannot score an empty label vector")
    return float(np.mean(pred == truth))


@dataclass
class RoiImportance:
    scores: np.ndarray
    top_rois: np.ndarray
    top_atoms: np.ndarray


def roi_importance(D, clf: ClassifierWeights, m: int | None = None, top_atoms: int = 10, top_rois: int = 10, signed: bool = False) -> RoiImportance:
    """Score ROIs by their connectivity in the most discriminative atoms.

    The ``top_atoms`` atoms with the largest ``|w_j|`` are reshaped into
    symmetric ROI x ROI matrices.  The score of ROI ``p`` is
    ``sum_j |w_j| * sum_q |C_j[p, q]|``.  With ``signed=True`` the signed
    weights and connectivities are summed instead and the magnitude of the
    total is reported.
    """
    D = np.asarray(D, dtype=float)
    w = np.asarray(clf.w, dtype=float)
    if w.shape != (D.shape[1],):
        raise ShapeError(f"{w.shape} classifier weights for {D.shape[1]} atoms")
    if m is None:
        m = roi_count_for(D.shape[0])
    elif D.shape[0] != m * (m - 1) // 2:
        raise ShapeError(f"atom length {D.shape[0]} does not match {m} ROIs")
    # stable sort so equal |w| keep the lower atom index first
    chosen = np.argsort(-np.abs(w), kind="stable")[: min(top_atoms, w.shape[0])]
    scores = np.zeros(m)
    for j in chosen:
        C = devectorize_lower_triangle(D[:, j], m)
        if signed:
            scores += w[j] * C.sum(axis=1)
        else:
            scores += abs(w[j]) * np.abs(C).sum(axis=1)
    if signed:
        scores = np.abs(scores)
    ranking = np.argsort(-scores, kind="stable")[: min(top_rois, m)]
    return RoiImportance(scores, ranking, chosen)


@dataclass
class ExperimentConfig:
    hyper: Hyperparams = field(default_factory=Hyperparams)
    folds: int = 4
    threads: int = 1
    roi_count: int | None = None
    roi_signed: bool = False
    top_atoms: int = 10
    top_rois: int = 10
    retrain_full: bool = True


@dataclass
class FoldResult:
    fold: int
    accuracies: list
    train_sizes: list
    test_sizes: list
    final_objective: list


@dataclass
class FederationReport:
    site_names: list
    folds: list
    full: FederationResult | None = None
    roi: list | None = None
    notes: list = field(default_factory=list)

    @property
    def accuracy_table(self) -> np.ndarray:
        """``folds x sites`` test accuracies."""
        return np.array([f.accuracies for f in self.folds])

    @property
    def site_mean(self) -> np.ndarray:
        return self.accuracy_table.mean(axis=0)

    @property
    def site_std(self) -> np.ndarray:
        return self.accuracy_table.std(axis=0)

    @property
    def fold_average(self) -> np.ndarray:
        return self.accuracy_table.mean(axis=1)

    @property
    def mean_accuracy(self) -> float:
        return float(self.fold_average.mean())

    @property
    def std_accuracy(self) -> float:
        return float(self.fold_average.std())


class ExperimentError(PFedDLError):
    pass


def run_experiment(sites, config: ExperimentConfig, site_names=None) -> FederationReport:
    """K-fold evaluation of PFedDL over ``sites`` (a list of ``(X_i, Y_i)``).

    For every fold each site trains on its training part, encodes its held-out
    samples with its own personalized dictionary and is scored with its own
    classifier.  Afterwards the model is retrained on all data and, when the
    feature length is a connectivity triangle, ROI importance is attached.
    """
    site_names = site_names or [f"site_{i}" for i in range(len(sites))]
    hyper = config.hyper
    split = kfold_split([np.shape(X)[1] for X, _ in sites], config.folds, hyper.seed)
    report = FederationReport(site_names, [])
    for f in range(config.folds):
        idx = split.fold(f)
        train = [(X[:, tr], Y[tr]) for (X, Y), (tr, _) in zip(sites, idx)]
        try:
            result = run_pfeddl(train, hyper, threads=config.threads)
        except PFedDLError as exc:
            raise ExperimentError(f"fold {f}: {exc}") from exc
        accs = []
        for i, (client, (X, Y), (_, te)) in enumerate(zip(result.clients, sites, idx)):
            try:
                S = encode_test_samples(client.D, X[:, te], hyper)
                accs.append(accuracy(predict(client.clf, S), Y[te]))
            except PFedDLError as exc:
                raise ExperimentError(f"fold {f}, {site_names[i]}: {exc}") from exc
        final_obj = result.rounds[-1].objective_after if result.rounds else [c.objective(hyper) for c in result.clients]
        report.folds.append(FoldResult(f, accs, [len(t) for t, _ in idx], [len(t) for _, t in idx], list(final_obj)))
        report.notes.extend(f"fold {f}: {w}" for w in result.warnings)
        logger.info("fold %d accuracies %s", f, accs)

    if config.retrain_full:
        report.full = run_pfeddl([(np.asarray(X, float), np.asarray(Y)) for X, Y in sites], hyper, threads=config.threads)
        report.notes.extend(f"full: {w}" for w in report.full.warnings)
        d = np.shape(sites[0][0])[0]
        m = config.roi_count
        if m is None:
            try:
                m = roi_count_for(d)
            except ShapeError:
                report.notes.append(f"feature length {d} is not a connectivity triangle; ROI importance skipped")
        if m is not None:
            report.roi = [
                roi_importance(c.D, c.clf, m, config.top_atoms, config.top_rois, config.roi_signed)
                for c in report.full.clients
            ]
    return report
