"""Point-of-interest association analysis.

Per-imagelet category scores ln(1+count) (min-max normalized), tertile
high/low classes, logistic binary classifiers scored by Mann-Whitney AUC in
5-fold CV, the PoI logit linking predicted classes to category scores, and
the divide-by-4 effect rendering.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .geo import Point, point_in_polygon
from .raster import Imagelet

log = logging.getLogger(__name__)

POI_CATEGORIES = ("sustenance", "transportation", "entertainment")
LOGIT_COEF_CAP = 50.0
LOGIT_TOL = 1e-8


@dataclass
class PoiScores:
    imagelet_id: str
    counts: dict[str, int]
    raw: dict[str, float]  # ln(1 + count)
    s: dict[str, float]  # min-max normalized over the imagelet set


@dataclass
class ClassLabel:
    imagelet_id: str
    variable: str
    label: str  # "high" | "low"
    lower_threshold: float
    upper_threshold: float


@dataclass
class LogitModel:
    intercept: float
    coef: dict[str, float]
    std_err: dict[str, float]
    p_values: dict[str, float]
    significant: dict[str, bool]
    separated: bool = False
    converged: bool = True
    n: int = 0


def poi_scores(ims: list[Imagelet], pois: list[tuple[Point, str]]) -> list[PoiScores]:
    """Counts PoIs of each category inside each imagelet's bounds (boundary
    inclusive), scores ln(1+count), then min-max normalizes per category
    over the imagelet set."""
    per_cat_pts: dict[str, list[Point]] = {c: [] for c in POI_CATEGORIES}
    for pt, cat in pois:
        if cat not in POI_CATEGORIES:
            raise ValidationError(f"unknown PoI category {cat!r}")
        per_cat_pts[cat].append(pt)

    out: list[PoiScores] = []
    for im in ims:
        x0, y0, x1, y1 = im.bounds.bounds()
        counts = {}
        for cat in POI_CATEGORIES:
            c = 0
            for pt in per_cat_pts[cat]:
                if x0 <= pt.x <= x1 and y0 <= pt.y <= y1:
                    if point_in_polygon(im.bounds, pt):
                        c += 1
            counts[cat] = c
        raw = {cat: math.log1p(c) for cat, c in counts.items()}
        out.append(PoiScores(imagelet_id=im.id, counts=counts, raw=raw, s={}))

    for cat in POI_CATEGORIES:
        vals = [sc.raw[cat] for sc in out]
        lo, hi = min(vals, default=0.0), max(vals, default=0.0)
        span = hi - lo
        for sc in out:
            sc.s[cat] = (sc.raw[cat] - lo) / span if span > 0 else 0.0
    return out


def tertile_labels(values: dict[str, float], variable: str) -> list[ClassLabel]:
    """High = value >= upper-tertile threshold, low = value <= lower-tertile
    threshold (linear-interpolation quantiles at 1/3 and 2/3); the middle
    third is excluded."""
    if len(set(values.values())) < 3:
        raise ValidationError(
            f"tertile split of {variable!r} needs >= 3 distinct values, "
            f"got {len(set(values.values()))}"
        )
    arr = np.array(list(values.values()), dtype=float)
    lower = float(np.quantile(arr, 1.0 / 3.0))
    upper = float(np.quantile(arr, 2.0 / 3.0))
    out = []
    for key, v in values.items():
        if v >= upper:
            label = "high"
        elif v <= lower:
            label = "low"
        else:
            continue
        out.append(
            ClassLabel(
                imagelet_id=key,
                variable=variable,
                label=label,
                lower_threshold=lower,
                upper_threshold=upper,
            )
        )
    return out


# ---------------------------------------------------------------------------
# Logistic regression by Newton-Raphson maximum likelihood
# ---------------------------------------------------------------------------


def _sigmoid(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def logistic_log_likelihood(X: np.ndarray, y: np.ndarray, beta: np.ndarray) -> float:
    eta = X @ beta
    # log p(y|eta) = y*eta - log(1+exp(eta)), stably via logaddexp.
    return float((y * eta - np.logaddexp(0.0, eta)).sum())


def logistic_mle(
    X: np.ndarray,
    y: np.ndarray,
    tol: float = LOGIT_TOL,
    max_iter: int = 200,
    cap: float = LOGIT_COEF_CAP,
) -> tuple[np.ndarray, np.ndarray, bool, bool]:
    """Newton-Raphson with step halving on the design matrix X (intercept
    column included by the caller).

    Returns (beta, standard errors, converged, separated). Separation is
    flagged when a coefficient runs past ``cap``; coefficients are then
    clipped and iteration stops.
    """
    n, m = X.shape
    beta = np.zeros(m)
    ll = logistic_log_likelihood(X, y, beta)
    converged = False
    separated = False
    info = None
    for _ in range(max_iter):
        p = _sigmoid(X @ beta)
        W = p * (1.0 - p)
        grad = X.T @ (y - p)
        info = (X * W[:, None]).T @ X  # observed information
        try:
            step = np.linalg.solve(info + 1e-12 * np.eye(m), grad)
        except np.linalg.LinAlgError:
            separated = True
            break
        # Step halving keeps the likelihood non-decreasing.
        lam = 1.0
        for _ in range(40):
            cand = beta + lam * step
            ll_new = logistic_log_likelihood(X, y, cand)
            if ll_new >= ll - 1e-12:
                break
            lam *= 0.5
        beta = beta + lam * step
        if np.abs(beta).max() > cap:
            separated = True
            beta = np.clip(beta, -cap, cap)
            break
        delta = float(np.abs(lam * step).max())
        ll = logistic_log_likelihood(X, y, beta)
        if delta < tol:
            converged = True
            break
    if separated:
        log.warning("logistic regression separated; coefficients capped at |b| <= %g", cap)
    p = _sigmoid(X @ beta)
    W = np.maximum(p * (1.0 - p), 1e-12)
    info = (X * W[:, None]).T @ X
    try:
        cov = np.linalg.inv(info)
        se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    except np.linalg.LinAlgError:
        se = np.full(m, np.inf)
    return beta, se, converged, separated


def _wald_p(beta: float, se: float) -> float:
    if not math.isfinite(se) or se <= 0:
        return 1.0
    z = abs(beta / se)
    return math.erfc(z / math.sqrt(2.0))


def auc_mann_whitney(labels: np.ndarray, scores: np.ndarray) -> float:
    """Rank-statistic AUC with ties averaged."""
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=float)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("AUC needs both classes present")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    rank_pos = 1.0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        avg = (rank_pos + rank_pos + (j - i)) / 2.0
        ranks[order[i : j + 1]] = avg
        rank_pos += j - i + 1
        i = j + 1
    r_pos = ranks[labels == 1].sum()
    return (r_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def _stratified_folds(y: np.ndarray, k: int, rng: np.random.Generator):
    """Test-fold index lists with both classes spread across folds."""
    folds: list[list[int]] = [[] for _ in range(k)]
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        for pos, i in enumerate(idx):
            folds[pos % k].append(int(i))
    return [np.array(sorted(f)) for f in folds]


@dataclass
class BinaryClassifier:
    intercept: float
    weights: np.ndarray
    separated: bool
    auc_mean: float
    auc_std: float
    fold_aucs: list[float] = field(default_factory=list)

    def decision(self, X: np.ndarray) -> np.ndarray:
        return self.intercept + X @ self.weights

    def predict(self, X: np.ndarray) -> np.ndarray:
        return (self.decision(X) >= 0.0).astype(int)


def fit_binary_classifier(
    X: np.ndarray, labels: np.ndarray, seed: int = 0, k: int = 5
) -> BinaryClassifier:
    """Logistic classifier (the documented choice for the unspecified
    'binary classifiers') with Mann-Whitney AUC from stratified k-fold CV."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(labels, dtype=int)
    if set(np.unique(y)) != {0, 1}:
        raise ValidationError("binary classifier needs both classes present")
    rng = np.random.default_rng(seed)
    aucs = []
    folds = _stratified_folds(y, k, rng)
    all_idx = np.arange(len(y))
    for test in folds:
        train = np.setdiff1d(all_idx, test, assume_unique=True)
        A = np.column_stack([np.ones(len(train)), X[train]])
        beta, _, _, _ = logistic_mle(A, y[train].astype(float))
        scores = X[test] @ beta[1:] + beta[0]
        aucs.append(auc_mann_whitney(y[test], scores))
    A = np.column_stack([np.ones(len(y)), X])
    beta, _, _, separated = logistic_mle(A, y.astype(float))
    return BinaryClassifier(
        intercept=float(beta[0]),
        weights=beta[1:],
        separated=separated,
        auc_mean=float(np.mean(aucs)),
        auc_std=float(np.std(aucs)),
        fold_aucs=[float(a) for a in aucs],
    )


LOGIT_PREDICTORS = ("entertainment", "sustenance", "transportation")


def fit_poi_logit(predicted_classes: np.ndarray, scores: list[PoiScores]) -> LogitModel:
    """Pr(c=1) ~ sigmoid(a + b1*s_entertainment + b2*s_sustenance +
    b3*s_transportation) by maximum likelihood, with Wald standard errors
    from the inverse observed information."""
    c = np.asarray(predicted_classes, dtype=float)
    if len(c) != len(scores):
        raise ValidationError("classes and scores must align")
    if set(np.unique(c)) != {0.0, 1.0}:
        raise ValidationError("logit needs both predicted classes present")
    S = np.array([[sc.s[cat] for cat in LOGIT_PREDICTORS] for sc in scores])
    A = np.column_stack([np.ones(len(c)), S])
    beta, se, converged, separated = logistic_mle(A, c)
    coef = {cat: float(beta[i + 1]) for i, cat in enumerate(LOGIT_PREDICTORS)}
    sev = {cat: float(se[i + 1]) for i, cat in enumerate(LOGIT_PREDICTORS)}
    pv = {cat: _wald_p(coef[cat], sev[cat]) for cat in LOGIT_PREDICTORS}
    return LogitModel(
        intercept=float(beta[0]),
        coef=coef,
        std_err=sev,
        p_values=pv,
        significant={cat: pv[cat] < 0.05 for cat in LOGIT_PREDICTORS},
        separated=separated,
        converged=converged,
        n=len(c),
    )


def divide_by_four(model: LogitModel) -> dict[str, dict]:
    """Upper-bound marginal effects: beta/4, rendered as percentage-point
    change in Pr(high) per unit predictor change."""
    out = {}
    for cat in LOGIT_PREDICTORS:
        b = model.coef[cat]
        effect = b / 4.0
        out[cat] = {
            "beta": b,
            "effect": effect,
            "percent_per_unit": 100.0 * effect,
            "significant": model.significant[cat],
            "rendered": f"{100.0 * effect:+.4g}%" + ("*" if model.significant[cat] else ""),
        }
    return out
