"""Data sources: planted synthetic federations, connectivity features, text files.

Matrix text format::

    rows cols
    v11 v12 ... v1c
    ...

with values written as shortest round-trip decimals, so save/load is exact.
Label files hold one integer (0 or 1) per line.
"""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DegenerateInputError, MatrixFormatError, ShapeError

CORR_CLAMP = 1e-7


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a planted non-IID federation.

    Every site shares ``g_true`` global atoms and draws its own
    ``k_true - g_true`` local atoms.  Each sample uses ``sparsity`` atoms
    with coefficients of magnitude in ``[code_low, code_high]`` and random
    sign.  Labels follow a planted per-site linear rule on the codes;
    samples whose score lies within ``margin`` of the decision boundary are
    redrawn.
    """

    d: int = 64
    k_true: int = 16
    g_true: int = 10
    n_sites: int = 4
    n_per_site: tuple = (150, 150, 150, 150)
    sparsity: int = 3
    noise_std: float = 0.01
    margin: float = 0.1
    code_low: float = 0.5
    code_high: float = 1.0
    seed: int = 0

    def __post_init__(self):
        n = self.n_per_site
        if isinstance(n, int):
            n = (n,) * self.n_sites
        object.__setattr__(self, "n_per_site", tuple(int(v) for v in n))
        if min(self.d, self.k_true, self.n_sites, self.sparsity) < 1:
            raise ConfigurationError("d, k_true, n_sites and sparsity must be positive")
        if not 0 <= self.g_true <= self.k_true:
            raise ConfigurationError(f"g_true={self.g_true} must lie in [0, k_true={self.k_true}]")
        if self.sparsity > self.k_true:
            raise ConfigurationError(f"sparsity {self.sparsity} exceeds k_true {self.k_true}")
        if len(self.n_per_site) != self.n_sites or min(self.n_per_site) < 1:
            raise ConfigurationError(f"n_per_site must list {self.n_sites} positive counts, got {self.n_per_site}")
        if self.noise_std < 0 or self.margin < 0:
            raise ConfigurationError("noise_std and margin must be nonnegative")
        if not 0 < self.code_low <= self.code_high:
            raise ConfigurationError("need 0 < code_low <= code_high")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["n_per_site"] = list(self.n_per_site)
        return out


@dataclass
class GroundTruth:
    global_atoms: np.ndarray
    local_atoms: list = field(default_factory=list)
    codes: list = field(default_factory=list)
    classifiers: list = field(default_factory=list)

    def site_dictionary(self, i: int) -> np.ndarray:
        return np.hstack([self.global_atoms, self.local_atoms[i]])


def _unit_columns(rng, d, k):
    A = rng.standard_normal((d, k))
    return A / np.linalg.norm(A, axis=0)


def _draw_codes(rng, k, sparsity, low, high):
    s = np.zeros(k)
    support = rng.choice(k, size=sparsity, replace=False)
    s[support] = rng.uniform(low, high, size=sparsity) * rng.choice([-1.0, 1.0], size=sparsity)
    return s


def generate_synthetic_federation(spec: SyntheticSpec):
    """Draw a federation from ``spec``.

    Returns:
        ``(sites, truth)`` where ``sites`` is a list of ``(X_i, Y_i)`` with
        ``X_i`` of shape ``(d, n_i)`` and ``Y_i`` an int vector of 0/1
        labels, and ``truth`` is the :class:`GroundTruth`.
    """
    rng = np.random.default_rng(spec.seed)
    global_atoms = _unit_columns(rng, spec.d, spec.g_true)
    truth = GroundTruth(global_atoms)
    sites = []
    for n in spec.n_per_site:
        local = _unit_columns(rng, spec.d, spec.k_true - spec.g_true)
        D = np.hstack([global_atoms, local])
        w = rng.standard_normal(spec.k_true)
        w /= np.linalg.norm(w)
        S = np.zeros((spec.k_true, n))
        for a in range(n):
            # rejection keeps every sample at least `margin` from the boundary
            while True:
                s = _draw_codes(rng, spec.k_true, spec.sparsity, spec.code_low, spec.code_high)
                if abs(w @ s) >= spec.margin:
                    break
            S[:, a] = s
        Y = (w @ S > 0).astype(np.int64)
        X = D @ S
        if spec.noise_std > 0:
            X = X + spec.noise_std * rng.standard_normal(X.shape)
        truth.local_atoms.append(local)
        truth.codes.append(S)
        truth.classifiers.append(w)
        sites.append((X, Y))
    return sites, truth


def triangle_size(m: int) -> int:
    return m * (m - 1) // 2


def roi_count_for(length: int) -> int:
    """Inverse of :func:`triangle_size`; raises if ``length`` is not triangular."""
    m = int(round((1 + math.sqrt(1 + 8 * length)) / 2))
    if m < 2 or triangle_size(m) != length:
        raise ShapeError(f"length {length} is not m(m-1)/2 for any ROI count m")
    return m


def _lower_indices(m):
    # strict lower triangle, column-stacked: (1,0), (2,0), ..., (m-1,0), (2,1), ...
    cols, rows = np.triu_indices(m, 1)
    return rows, cols


def vectorize_lower_triangle(M) -> np.ndarray:
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {M.shape}")
    rows, cols = _lower_indices(M.shape[0])
    return M[rows, cols].copy()


def devectorize_lower_triangle(v, m: int) -> np.ndarray:
    """Symmetric ``m x m`` matrix with zero diagonal whose lower triangle is ``v``."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.shape[0] != triangle_size(m):
        raise ShapeError(f"vector of length {v.shape} does not fit {m} ROIs (need {triangle_size(m)})")
    M = np.zeros((m, m))
    rows, cols = _lower_indices(m)
    M[rows, cols] = v
    M[cols, rows] = v
    return M


def pearson_fisher_features(timeseries) -> np.ndarray:
    """Fisher-z connectivity vector from an ``m x T`` ROI time-series matrix.

    Pearson correlations are clamped to ``[-1 + 1e-7, 1 - 1e-7]`` before
    ``arctanh`` and the strict lower triangle is returned column-stacked.
    """
    ts = np.asarray(timeseries, dtype=float)
    if ts.ndim != 2:
        raise ShapeError(f"time series must be m x T, got shape {ts.shape}")
    m, T = ts.shape
    if T < 3:
        raise ShapeError(f"need at least 3 time points, got {T}")
    if not np.all(np.isfinite(ts)):
        raise DegenerateInputError("time series contains non-finite values")
    centered = ts - ts.mean(axis=1, keepdims=True)
    scale = np.sqrt(np.sum(centered**2, axis=1))
    flat = np.flatnonzero(scale == 0)
    if flat.size:
        raise DegenerateInputError(f"ROI row {int(flat[0])} has zero variance")
    z = centered / scale[:, None]
    r = np.clip(z @ z.T, -1 + CORR_CLAMP, 1 - CORR_CLAMP)
    return vectorize_lower_triangle(np.arctanh(r))


def save_matrix(path, matrix) -> None:
    M = np.asarray(matrix, dtype=float)
    if M.ndim != 2:
        raise ShapeError(f"can only save 2-D matrices, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ShapeError("refusing to save non-finite values")
    lines = [f"{M.shape[0]} {M.shape[1]}"]
    lines.extend(" ".join(repr(float(x)) for x in row) for row in M)
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_float(tok, path, line, col):
    try:
        return float(tok)
    except ValueError:
        raise MatrixFormatError(f"not a number: {tok!r}", path, line, col) from None


def load_matrix(path) -> np.ndarray:
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise MatrixFormatError("empty file, expected a 'rows cols' header", path, 1)
    header = lines[0].split()
    if len(header) != 2 or not all(t.isdigit() for t in header):
        raise MatrixFormatError(f"bad header {lines[0]!r}, expected two integers", path, 1)
    rows, cols = int(header[0]), int(header[1])
    body = lines[1:]
    while body and not body[-1].strip():
        body.pop()
    if len(body) != rows:
        raise MatrixFormatError(f"header declares {rows} rows, found {len(body)}", path, len(body) + 2)
    M = np.empty((rows, cols))
    for i, raw in enumerate(body):
        lineno = i + 2
        toks = raw.split()
        if len(toks) != cols:
            raise MatrixFormatError(f"header declares {cols} columns, row has {len(toks)}", path, lineno)
        for j, tok in enumerate(toks):
            M[i, j] = _parse_float(tok, path, lineno, j + 1)
    if not np.all(np.isfinite(M)):
        raise MatrixFormatError("matrix contains non-finite values", path)
    return M


def save_labels(path, labels) -> None:
    y = np.asarray(labels)
    if y.ndim != 1 or not np.all((y == 0) | (y == 1)):
        raise ShapeError("labels must be a vector of 0/1 values")
    Path(path).write_text("".join(f"{int(v)}\n" for v in y))


def load_labels(path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise MatrixFormatError("empty label file", path, 1)
    out = []
    for i, raw in enumerate(lines):
        tok = raw.strip()
        if tok not in ("0", "1"):
            raise MatrixFormatError(f"label must be 0 or 1, got {tok!r}", path, i + 1, 1)
        out.append(int(tok))
    return np.array(out, dtype=np.int64)


def load_site_dir(path):
    """Read one site directory.

    Either ``X.txt`` (features x subjects) or a set of
    ``timeseries_<subject>.txt`` files (ROIs x time points, converted with
    :func:`pearson_fisher_features` in sorted subject order) plus ``Y.txt``.
    """
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"site directory not found: {path}")
    y_path = path / "Y.txt"
    if not y_path.exists():
        raise FileNotFoundError(f"missing label file: {y_path}")
    x_path = path / "X.txt"
    if x_path.exists():
        X = load_matrix(x_path)
    else:
        series = sorted(path.glob("timeseries_*.txt"))
        if not series:
            raise FileNotFoundError(f"missing data file: {x_path} (and no timeseries_*.txt files)")
        X = np.column_stack([pearson_fisher_features(load_matrix(p)) for p in series])
    Y = load_labels(y_path)
    if Y.shape[0] != X.shape[1]:
        raise ShapeError(f"{path}: {X.shape[1]} samples but {Y.shape[0]} labels")
    return X, Y


def write_federation(root, sites, truth: GroundTruth | None = None) -> list:
    """Write ``site_<i>/X.txt`` and ``Y.txt`` (and a ground-truth bundle) under ``root``.

    Returns the list of written paths relative to ``root``.
    """
    root = Path(root)
    written = []
    for i, (X, Y) in enumerate(sites):
        site = root / f"site_{i}"
        site.mkdir(parents=True, exist_ok=True)
        save_matrix(site / "X.txt", X)
        save_labels(site / "Y.txt", Y)
        written += [f"site_{i}/X.txt", f"site_{i}/Y.txt"]
    if truth is not None:
        gt = root / "ground_truth"
        gt.mkdir(parents=True, exist_ok=True)
        save_matrix(gt / "global_atoms.txt", truth.global_atoms)
        written.append("ground_truth/global_atoms.txt")
        for i in range(len(truth.local_atoms)):
            save_matrix(gt / f"site_{i}_local_atoms.txt", truth.local_atoms[i])
            save_matrix(gt / f"site_{i}_codes.txt", truth.codes[i])
            save_matrix(gt / f"site_{i}_classifier.txt", truth.classifiers[i][None, :])
            written += [f"ground_truth/site_{i}_{name}.txt" for name in ("local_atoms", "codes", "classifier")]
    return written


def atomic_replace_dir(tmp: os.PathLike, dest: os.PathLike) -> None:
    """Move a fully written temporary directory into place."""
    dest = Path(dest)
    if dest.exists():
        raise FileExistsError(f"output already exists: {dest}")
    os.replace(tmp, dest)
