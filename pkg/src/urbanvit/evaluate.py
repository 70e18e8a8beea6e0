"""Cross-validation harnesses, metrics, the two-stage proxy model, and
residual reports.

Per-fold metrics are computed in the fold's transformed target space (each
fold fits its own preprocessor on training rows only); per-district
predictions in reports are inverse-transformed to raw target units and
averaged over every repeat*fold in which the district was a test row.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .regress import (
    RegressorSpec,
    fit,
    fit_preprocessor,
    linear_coefficients,
    predict,
)
from . import vector_io

log = logging.getLogger(__name__)


@dataclass
class FoldPlan:
    k: int = 5
    repeats: int = 100
    seed: int = 0

    def partitions(self, n: int):
        """Yields (repeat, fold, train_idx, test_idx); every index appears in
        exactly one test fold per repeat and fold sizes differ by <= 1."""
        if n < self.k:
            raise ValidationError(f"need at least k={self.k} rows, got {n}")
        rng = np.random.default_rng(self.seed)
        for rep in range(self.repeats):
            perm = rng.permutation(n)
            folds = np.array_split(perm, self.k)
            for fold_i, test in enumerate(folds):
                train = np.setdiff1d(perm, test, assume_unique=True)
                yield rep, fold_i, np.sort(train), np.sort(test)


def r2_score(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    ss_tot = float(((y_true - y_true.mean()) ** 2).sum())
    if ss_tot <= 0.0:
        raise ValidationError("R^2 undefined: y_true is constant")
    ss_res = float(((y_true - y_pred) ** 2).sum())
    return 1.0 - ss_res / ss_tot


def adjusted_r2(r2: float, n: int, m: int) -> float:
    if n - m - 1 <= 0:
        raise ValidationError(f"adjusted R^2 undefined: N-m-1 = {n - m - 1}")
    return 1.0 - (1.0 - r2) * (n - 1) / (n - m - 1)


def compute_metrics(y_true, y_pred, m: int) -> tuple[float, float, float]:
    """(R^2, adjusted R^2, MAE) with m = number of model input columns."""
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    n = len(y_true)
    if n != len(y_pred) or n < 2:
        raise ValidationError(f"need two equal-length vectors of >= 2 values, got {n}")
    r2 = r2_score(y_true, y_pred)
    r2_adj = adjusted_r2(r2, n, m)
    mae = float(np.abs(y_true - y_pred).mean())
    return r2, r2_adj, mae


def _fold_metrics(y_true, y_pred, m: int) -> tuple[float, float | None, float]:
    """Fold-level metrics: R^2 and MAE always; adjusted R^2 is None when the
    test fold is too small for it (N - m - 1 <= 0) rather than failing the
    fold."""
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    n = len(y_true)
    if n != len(y_pred) or n < 2:
        raise ValidationError(f"need two equal-length vectors of >= 2 values, got {n}")
    r2 = r2_score(y_true, y_pred)
    try:
        r2a: float | None = adjusted_r2(r2, n, m)
    except ValidationError:
        r2a = None
    mae = float(np.abs(y_true - y_pred).mean())
    return r2, r2a, mae


def pearson_r(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ac, bc = a - a.mean(), b - b.mean()
    denom = math.sqrt(float(ac @ ac) * float(bc @ bc))
    return float(ac @ bc) / denom if denom > 0 else 0.0


@dataclass
class FoldResult:
    repeat: int
    fold: int
    r2: float
    r2_adj: float | None  # None when the test fold is too small (N-m-1 <= 0)
    mae: float
    test_indices: list[int]
    y_true_t: list[float]  # transformed target space of this fold
    y_pred_t: list[float]


@dataclass
class EvalReport:
    family: str
    target: str
    m: int
    folds: list[FoldResult] = field(default_factory=list)
    failed_folds: list[dict] = field(default_factory=list)
    district_ids: list[str] = field(default_factory=list)
    y_true_raw: list[float] = field(default_factory=list)
    y_pred_raw: list[float] = field(default_factory=list)  # mean over test predictions
    extra: dict = field(default_factory=dict)

    def aggregate(self, name: str) -> tuple[float, float]:
        vals = np.array([v for f in self.folds if (v := getattr(f, name)) is not None])
        if len(vals) == 0:
            return float("nan"), float("nan")
        return float(vals.mean()), float(vals.std())

    @property
    def residuals(self) -> list[float]:
        return [t - p for t, p in zip(self.y_true_raw, self.y_pred_raw)]

    def pooled_metrics(self) -> dict:
        r2, r2_adj, mae = _fold_metrics(self.y_true_raw, self.y_pred_raw, self.m)
        return {"r2": r2, "r2_adj": r2_adj, "mae": mae}

    def to_dict(self) -> dict:
        def _clean(pair):
            return [None if (isinstance(v, float) and math.isnan(v)) else v for v in pair]

        r2 = _clean(self.aggregate("r2"))
        r2a = _clean(self.aggregate("r2_adj"))
        mae = _clean(self.aggregate("mae"))
        return {
            "family": self.family,
            "target": self.target,
            "m": self.m,
            "n_folds": len(self.folds),
            "n_failed_folds": len(self.failed_folds),
            "failed_folds": self.failed_folds,
            "r2_mean": r2[0],
            "r2_std": r2[1],
            "r2_adj_mean": r2a[0],
            "r2_adj_std": r2a[1],
            "mae_mean": mae[0],
            "mae_std": mae[1],
            "pooled": self.pooled_metrics() if self.district_ids else None,
            "folds": [
                {
                    "repeat": f.repeat,
                    "fold": f.fold,
                    "r2": f.r2,
                    "r2_adj": f.r2_adj,
                    "mae": f.mae,
                    "test_indices": f.test_indices,
                    "y_true_t": f.y_true_t,
                    "y_pred_t": f.y_pred_t,
                }
                for f in self.folds
            ],
            "district_ids": self.district_ids,
            "y_true_raw": self.y_true_raw,
            "y_pred_raw": self.y_pred_raw,
            "residual": self.residuals,
            **self.extra,
        }

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")


def _finish_per_district(
    report: EvalReport, ids: list[str], y_raw: np.ndarray, sums: np.ndarray, counts: np.ndarray
) -> None:
    mask = counts > 0
    report.district_ids = [i for i, keep in zip(ids, mask) if keep]
    report.y_true_raw = [float(v) for v in y_raw[mask]]
    report.y_pred_raw = [float(s / c) for s, c in zip(sums[mask], counts[mask])]


def repeated_kfold(
    spec: RegressorSpec,
    X: np.ndarray,
    y: np.ndarray,
    plan: FoldPlan,
    district_ids: list[str] | None = None,
    x_log: list[bool] | None = None,
    y_log: bool = False,
    x_names: list[str] | None = None,
    target: str = "y",
) -> EvalReport:
    """Fits preprocessor and model on each training split only, scores the
    test split in the fold's transformed space, and aggregates over all
    repeat*fold pairs. Failed folds are excluded and surfaced."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, m = X.shape
    ids = district_ids or [str(i) for i in range(n)]
    report = EvalReport(family=spec.family, target=target, m=m)
    pred_sums = np.zeros(n)
    pred_counts = np.zeros(n)

    for rep, fold_i, train, test in plan.partitions(n):
        try:
            pre = fit_preprocessor(
                X[train], y[train], x_log=x_log, y_log=y_log, x_names=x_names, y_name=target
            )
            model = fit(spec, pre.transform_x(X[train]), pre.transform_y(y[train]))
            y_pred_t = predict(model, pre.transform_x(X[test]))
            y_true_t = pre.transform_y(y[test])
            r2, r2_adj, mae = _fold_metrics(y_true_t, y_pred_t, m)
        except Exception as exc:  # noqa: BLE001 - fold isolation
            report.failed_folds.append(
                {"repeat": rep, "fold": fold_i, "error": f"{type(exc).__name__}: {exc}"}
            )
            continue
        report.folds.append(
            FoldResult(
                repeat=rep,
                fold=fold_i,
                r2=r2,
                r2_adj=r2_adj,
                mae=mae,
                test_indices=[int(i) for i in test],
                y_true_t=[float(v) for v in y_true_t],
                y_pred_t=[float(v) for v in y_pred_t],
            )
        )
        pred_raw = pre.invert_y(y_pred_t)
        pred_sums[test] += pred_raw
        pred_counts[test] += 1

    _finish_per_district(report, ids, y, pred_sums, pred_counts)
    return report


def leave_one_city_out(
    spec: RegressorSpec,
    city_data: dict[str, tuple[np.ndarray, np.ndarray, list[str]]],
    x_log: list[bool] | None = None,
    y_log: bool = False,
    x_names: list[str] | None = None,
    target: str = "y",
) -> dict[str, EvalReport]:
    """city_data: city -> (X, y, district_ids). Trains on all other cities,
    tests on the held-out city; the preprocessor sees training cities only."""
    usable = {}
    for city, (X, y, ids) in city_data.items():
        if len(y) < 2:
            log.warning("city %s has %d districts; skipped from LOCO", city, len(y))
            continue
        usable[city] = (np.asarray(X, dtype=float), np.asarray(y, dtype=float), ids)
    if len(usable) < 2:
        raise ValidationError(f"leave-one-city-out needs >= 2 usable cities, got {len(usable)}")

    out: dict[str, EvalReport] = {}
    for city in usable:
        X_tr = np.vstack([usable[c][0] for c in usable if c != city])
        y_tr = np.concatenate([usable[c][1] for c in usable if c != city])
        X_te, y_te, ids = usable[city]
        m = X_tr.shape[1]
        report = EvalReport(family=spec.family, target=target, m=m)
        try:
            pre = fit_preprocessor(
                X_tr, y_tr, x_log=x_log, y_log=y_log, x_names=x_names, y_name=target
            )
            model = fit(spec, pre.transform_x(X_tr), pre.transform_y(y_tr))
            y_pred_t = predict(model, pre.transform_x(X_te))
            y_true_t = pre.transform_y(y_te)
            r2, r2_adj, mae = _fold_metrics(y_true_t, y_pred_t, m)
        except Exception as exc:  # noqa: BLE001 - per-city isolation
            report.failed_folds.append({"city": city, "error": f"{type(exc).__name__}: {exc}"})
            out[city] = report
            continue
        report.folds.append(
            FoldResult(
                repeat=0,
                fold=0,
                r2=r2,
                r2_adj=r2_adj,
                mae=mae,
                test_indices=list(range(len(y_te))),
                y_true_t=[float(v) for v in y_true_t],
                y_pred_t=[float(v) for v in y_pred_t],
            )
        )
        report.extra["pearson_r"] = pearson_r(y_true_t, y_pred_t)
        pred_raw = pre.invert_y(y_pred_t)
        report.district_ids = list(ids)
        report.y_true_raw = [float(v) for v in y_te]
        report.y_pred_raw = [float(v) for v in pred_raw]
        out[city] = report
    return out


def two_stage_vitality(
    spec_stage1: RegressorSpec,
    spec_stage2: RegressorSpec,
    X: np.ndarray,
    proxy_matrix: np.ndarray,
    proxy_names: list[str],
    proxy_log: list[bool],
    y_vitality: np.ndarray,
    plan: FoldPlan,
    district_ids: list[str] | None = None,
    y_log: bool = True,
    train_on_true_proxies: bool = False,
) -> EvalReport:
    """Stage 1 fits one model per proxy from the district feature vectors
    inside each training split; stage 2 fits vitality on the stage-1
    *training-split predictions* (or true proxies, as an ablation) and test
    districts are scored end-to-end."""
    X = np.asarray(X, dtype=float)
    P = np.asarray(proxy_matrix, dtype=float)
    y = np.asarray(y_vitality, dtype=float)
    n, m = X.shape
    n_proxies = P.shape[1]
    if P.shape[0] != n or len(y) != n:
        raise ValidationError("X, proxies, and vitality must have aligned rows")
    ids = district_ids or [str(i) for i in range(n)]

    report = EvalReport(
        family=f"{spec_stage1.family}+{spec_stage2.family}",
        target="activity_density",
        m=n_proxies,
    )
    pred_sums = np.zeros(n)
    pred_counts = np.zeros(n)
    coef_acc = np.zeros(n_proxies)
    coef_n = 0

    for rep, fold_i, train, test in plan.partitions(n):
        try:
            pre_x = fit_preprocessor(X[train], y[train], y_log=y_log)
            Xt_train = pre_x.transform_x(X[train])
            Xt_test = pre_x.transform_x(X[test])

            s1_train = np.empty((len(train), n_proxies))
            s1_test = np.empty((len(test), n_proxies))
            for kk in range(n_proxies):
                pre_k = fit_preprocessor(
                    X[train],
                    P[train, kk],
                    y_log=proxy_log[kk],
                    y_name=proxy_names[kk],
                )
                model_k = fit(spec_stage1, Xt_train, pre_k.transform_y(P[train, kk]))
                s1_train[:, kk] = predict(model_k, Xt_train)
                s1_test[:, kk] = predict(model_k, Xt_test)
                if train_on_true_proxies:
                    s1_train[:, kk] = pre_k.transform_y(P[train, kk])

            pre2 = fit_preprocessor(
                s1_train, y[train], y_log=y_log, x_names=proxy_names, y_name="activity_density"
            )
            model2 = fit(spec_stage2, pre2.transform_x(s1_train), pre2.transform_y(y[train]))
            y_pred_t = predict(model2, pre2.transform_x(s1_test))
            y_true_t = pre2.transform_y(y[test])
            r2, r2_adj, mae = _fold_metrics(y_true_t, y_pred_t, n_proxies)
        except Exception as exc:  # noqa: BLE001 - fold isolation
            report.failed_folds.append(
                {"repeat": rep, "fold": fold_i, "error": f"{type(exc).__name__}: {exc}"}
            )
            continue
        report.folds.append(
            FoldResult(
                repeat=rep,
                fold=fold_i,
                r2=r2,
                r2_adj=r2_adj,
                mae=mae,
                test_indices=[int(i) for i in test],
                y_true_t=[float(v) for v in y_true_t],
                y_pred_t=[float(v) for v in y_pred_t],
            )
        )
        lc = linear_coefficients(model2)
        if lc is not None:
            coef_acc += lc[1]
            coef_n += 1
        pred_raw = pre2.invert_y(y_pred_t)
        pred_sums[test] += pred_raw
        pred_counts[test] += 1

    _finish_per_district(report, ids, y, pred_sums, pred_counts)
    if coef_n:
        report.extra["stage2_coefficients"] = {
            name: float(c / coef_n) for name, c in zip(proxy_names, coef_acc)
        }
    return report


def residual_report(report: EvalReport, districts, geojson_path: str, csv_path: str) -> None:
    """GeoJSON of district polygons with true/predicted/residual properties
    (10-significant-digit decimals) plus a CSV twin."""
    by_id = {d.district_id: d for d in districts}
    missing = [i for i in report.district_ids if i not in by_id]
    if missing:
        raise ValidationError(f"districts missing from geometry input: {missing[:5]}")

    rows = []
    for did, t, p in zip(report.district_ids, report.y_true_raw, report.y_pred_raw):
        # Residual from the rounded values so the file is internally
        # consistent: residual == true - predicted as written.
        t10 = float(format(t, ".10g"))
        p10 = float(format(p, ".10g"))
        rows.append((did, t10, p10, float(format(t10 - p10, ".10g"))))

    feats = [
        (
            vector_io.polygon_geometry(by_id[did].polygon),
            {"district_id": did, "true": t, "predicted": p, "residual": r},
        )
        for did, t, p, r in rows
    ]
    vector_io.write_feature_collection(feats, geojson_path)

    with open(csv_path, "w", newline="") as fh:
        fh.write("district_id,true,predicted,residual\n")
        for did, t, p, r in rows:
            fh.write(f"{did},{format(t, '.10g')},{format(p, '.10g')},{format(r, '.10g')}\n")
