"""Retrieval metrics over simulation logs plus representation diagnostics.

Retrieval side: percentile rank of the hidden target, mean per-round
relevance, mean iterations to convergence, and the bounded convergence
score. Representation side: disentanglement/completeness/informativeness
from a latent-by-factor importance matrix, a group-conditional fairness
heatmap from K-NN predictions, and attribute distribution similarity.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.ensemble import GradientBoostingRegressor
from sklearn.linear_model import Ridge
from sklearn.neighbors import KNeighborsClassifier

from .corpus import Corpus


# -- retrieval metrics ----------------------------------------------------


def percentile_rank(log) -> float:
    """Mean per-iteration percentile of the target among scored candidates.

    Per iteration: 1 - rank/(candidates - 1) with rank 0 the highest score
    (defined as 1.0 when only one candidate was scored). Iterations without
    a score table are skipped; at least one scored iteration is required.
    """
    values = []
    for rec in log.records:
        if rec.target_rank is None or rec.n_scored is None:
            continue
        if rec.n_scored <= 1:
            values.append(1.0)
        else:
            values.append(1.0 - rec.target_rank / (rec.n_scored - 1))
    if not values:
        raise ValueError("log has no iterations with a scored target")
    return float(np.mean(values))


def average_relevance(log) -> float:
    """Mean over iterations of the fraction of shown images judged similar."""
    if not log.records:
        raise ValueError("log has no iterations")
    fractions = [len(rec.similar) / len(rec.shown)
                 for rec in log.records if rec.shown]
    if not fractions:
        raise ValueError("log has no nonempty batches")
    return float(np.mean(fractions))


def average_convergent_iterations(logs) -> float:
    """Mean iterations to convergence; non-converged runs count as the cap."""
    logs = list(logs)
    if not logs:
        raise ValueError("need at least one log")
    values = [log.n_iterations if log.converged else log.max_iterations
              for log in logs]
    return float(np.mean(values))


def convergence_score(n_iterations: int, max_iter: int, reported: bool) -> float:
    """1 - N/(max_iter + 5) when the user reported the target, else 0."""
    if not 0 <= n_iterations <= max_iter:
        raise ValueError(f"need 0 <= N <= max_iter, got {n_iterations}, {max_iter}")
    if not reported:
        return 0.0
    return 1.0 - n_iterations / (max_iter + 5)


# -- interpretability (importance matrix based) ---------------------------


@dataclass
class ImportanceMatrix:
    matrix: np.ndarray  # (n_latents, n_factors), nonnegative

    def __post_init__(self) -> None:
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise ValueError("importance matrix must be 2-D")
        if (self.matrix < 0).any():
            raise ValueError("importance weights must be nonnegative")
        if not self.matrix.any():
            raise ValueError("importance matrix is all zero")


def _split(n: int, seed: int, test_fraction: float = 0.25):
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_test = max(1, int(round(n * test_fraction)))
    return order[n_test:], order[:n_test]


def _importance_for_factor(z_train, y_train, regressor: str, seed: int) -> np.ndarray:
    if regressor == "boosted_stumps":
        model = GradientBoostingRegressor(max_depth=1, random_state=seed)
        model.fit(z_train, y_train)
        return np.asarray(model.feature_importances_, dtype=np.float64)
    if regressor == "ridge":
        scale = z_train.std(axis=0)
        scale[scale == 0] = 1.0
        model = Ridge(alpha=1.0)
        model.fit((z_train - z_train.mean(axis=0)) / scale, y_train)
        return np.abs(np.asarray(model.coef_, dtype=np.float64))
    raise ValueError(f"unknown regressor {regressor!r}")


def fit_importance(representations, factors, regressor: str = "boosted_stumps",
                   seed: int = 0) -> ImportanceMatrix:
    """Latent-by-factor importance weights from per-factor regressors.

    boosted_stumps attributes squared-error reduction per feature;
    ridge uses absolute standardized coefficients. Fit on a 75% split so
    `informativeness` can reuse the held-out remainder.
    """
    z = np.asarray(representations, dtype=np.float64)
    v = np.asarray(factors, dtype=np.float64)
    if v.ndim == 1:
        v = v[:, None]
    if z.shape[0] != v.shape[0]:
        raise ValueError("representations and factors disagree on sample count")
    if z.shape[0] < 20:
        raise ValueError("need at least 20 samples")
    train_idx, _ = _split(z.shape[0], seed)
    columns = []
    for j in range(v.shape[1]):
        y = v[train_idx, j]
        if np.ptp(y) == 0:
            raise ValueError(f"factor column {j} is constant")
        columns.append(_importance_for_factor(z[train_idx], y, regressor, seed))
    return ImportanceMatrix(np.stack(columns, axis=1))


def _entropy_unit(p: np.ndarray) -> float:
    """Shannon entropy with the log base set to len(p), so H is in [0, 1]."""
    if len(p) <= 1:
        return 0.0
    nz = p[p > 0]
    return float(-(nz * (np.log(nz) / np.log(len(p)))).sum())


def dci(importance: ImportanceMatrix) -> tuple[float, float]:
    """Disentanglement and completeness of an importance matrix.

    Disentanglement: one minus the row entropy, weighted by each latent's
    share of total importance. Completeness: mean over factors of one minus
    the column entropy. All-zero rows or columns are excluded from their
    normalization with a warning.
    """
    r = importance.matrix
    row_mass = r.sum(axis=1)
    col_mass = r.sum(axis=0)
    if (row_mass == 0).any():
        warnings.warn("importance matrix has all-zero latent rows; excluded")
    if (col_mass == 0).any():
        warnings.warn("importance matrix has all-zero factor columns; excluded")
    total = r.sum()
    disentanglement = 0.0
    for i in np.nonzero(row_mass)[0]:
        weight = row_mass[i] / total
        disentanglement += (1.0 - _entropy_unit(r[i] / row_mass[i])) * weight
    completeness_terms = [1.0 - _entropy_unit(r[:, j] / col_mass[j])
                          for j in np.nonzero(col_mass)[0]]
    completeness = float(np.mean(completeness_terms)) if completeness_terms else 0.0
    return float(disentanglement), completeness


def informativeness(representations, factors, regressor: str = "boosted_stumps",
                    seed: int = 0) -> float:
    """Held-out predictability of min-max normalized factors.

    Per factor: 1 - mean absolute error of its regressor on the 25% test
    split; averaged and clamped to [0, 1]. Constant factor columns are
    skipped with a warning.
    """
    z = np.asarray(representations, dtype=np.float64)
    v = np.asarray(factors, dtype=np.float64)
    if v.ndim == 1:
        v = v[:, None]
    if z.shape[0] != v.shape[0]:
        raise ValueError("representations and factors disagree on sample count")
    if z.shape[0] < 20:
        raise ValueError("need at least 20 samples")
    train_idx, test_idx = _split(z.shape[0], seed)
    scores = []
    for j in range(v.shape[1]):
        column = v[:, j]
        spread = np.ptp(column)
        if spread == 0:
            warnings.warn(f"factor column {j} is constant; skipped")
            continue
        y = (column - column.min()) / spread
        if regressor == "boosted_stumps":
            model = GradientBoostingRegressor(max_depth=1, random_state=seed)
        elif regressor == "ridge":
            model = Ridge(alpha=1.0)
        else:
            raise ValueError(f"unknown regressor {regressor!r}")
        model.fit(z[train_idx], y[train_idx])
        mae = float(np.mean(np.abs(model.predict(z[test_idx]) - y[test_idx])))
        scores.append(1.0 - mae)
    if not scores:
        raise ValueError("no usable factor columns")
    return float(np.clip(np.mean(scores), 0.0, 1.0))


# -- fairness --------------------------------------------------------------


@dataclass
class FairnessReport:
    heatmaps: dict[tuple[str, str], np.ndarray]  # (target, sensitive) -> grid
    heatmap_labels: dict[tuple[str, str], tuple[list[str], list[str]]]
    f_score: float  # mean conditional probability over all cells of all pairs
    dp_gap: float  # mean absolute pairwise column difference
    neighbor_count: int = 5
    cells: list = field(default_factory=list)


def _fit_predict_knn(z, labels, neighbor_count, train_idx, test_idx):
    model = KNeighborsClassifier(n_neighbors=neighbor_count)
    model.fit(z[train_idx], labels[train_idx])
    return model.predict(z[test_idx])


def fairness(representations, attributes: dict[str, list], neighbor_count: int = 5,
             split_seed: int = 0, max_attempts: int = 5) -> FairnessReport:
    """Group-conditional prediction heatmaps over every ordered attribute pair.

    For each pair (target t, sensitive s): a K-NN classifier trained on a
    75% split predicts t on the rest; cell (i, j) is the fraction of test
    points of sensitive class j predicted as class i, so every column sums
    to 1. The summary score averages all cells of all pairs; the parity gap
    averages |column - column| over unordered sensitive-class pairs. Splits
    missing a class are resampled with a fresh seed up to `max_attempts`.
    """
    z = np.asarray(representations, dtype=np.float64)
    names = sorted(attributes)
    if len(names) < 2:
        raise ValueError("need at least two attributes")
    columns = {}
    for name in names:
        values = np.asarray(attributes[name])
        if values.shape[0] != z.shape[0]:
            raise ValueError(f"attribute {name!r} length mismatch")
        if len(np.unique(values)) < 2:
            raise ValueError(f"attribute {name!r} has fewer than 2 classes")
        columns[name] = values

    heatmaps, labels_out, all_cells, gap_terms = {}, {}, [], []
    for target_name in names:
        for sensitive_name in names:
            if target_name == sensitive_name:
                continue
            t_vals, s_vals = columns[target_name], columns[sensitive_name]
            t_classes = sorted(np.unique(t_vals).tolist())
            s_classes = sorted(np.unique(s_vals).tolist())
            for attempt in range(max_attempts):
                train_idx, test_idx = _split(z.shape[0], split_seed + attempt)
                train_ok = set(np.unique(t_vals[train_idx])) == set(t_classes)
                test_ok = set(np.unique(s_vals[test_idx])) == set(s_classes)
                if train_ok and test_ok:
                    break
            else:
                raise ValueError(
                    f"classes missing from splits for pair ({target_name}, "
                    f"{sensitive_name}) after {max_attempts} attempts")
            predictions = _fit_predict_knn(z, t_vals, neighbor_count,
                                           train_idx, test_idx)
            grid = np.zeros((len(t_classes), len(s_classes)))
            sensitive_test = s_vals[test_idx]
            for j, s_class in enumerate(s_classes):
                mask = sensitive_test == s_class
                if not mask.any():
                    continue
                for i, t_class in enumerate(t_classes):
                    grid[i, j] = np.mean(predictions[mask] == t_class)
            heatmaps[(target_name, sensitive_name)] = grid
            labels_out[(target_name, sensitive_name)] = (t_classes, s_classes)
            all_cells.extend(grid.ravel().tolist())
            for i in range(len(t_classes)):
                for j in range(len(s_classes)):
                    for k in range(j + 1, len(s_classes)):
                        gap_terms.append(abs(grid[i, j] - grid[i, k]))
    return FairnessReport(
        heatmaps=heatmaps, heatmap_labels=labels_out,
        f_score=float(np.mean(all_cells)),
        dp_gap=float(np.mean(gap_terms)) if gap_terms else 0.0,
        neighbor_count=neighbor_count, cells=all_cells)


# -- distribution similarity ------------------------------------------------


def distribution_similarity(corpus: Corpus, selected_ids) -> dict[str, dict]:
    """Class histograms of the full corpus vs a selection, per attribute,
    with their total-variation distance."""
    selected_ids = list(selected_ids)
    if not selected_ids:
        raise ValueError("selection is empty")
    indexes = [corpus.index_of(i) for i in selected_ids]
    out = {}
    for attr, values in corpus.schema.items():
        full = np.array([
            sum(1 for rec in corpus.records if rec.attributes[attr] == v)
            for v in values], dtype=np.float64)
        sel = np.array([
            sum(1 for i in indexes if corpus.records[i].attributes[attr] == v)
            for v in values], dtype=np.float64)
        full_p = full / full.sum()
        sel_p = sel / sel.sum()
        out[attr] = {
            "classes": list(values),
            "corpus": full_p.tolist(),
            "selected": sel_p.tolist(),
            "tv_distance": float(0.5 * np.abs(full_p - sel_p).sum()),
        }
    return out
