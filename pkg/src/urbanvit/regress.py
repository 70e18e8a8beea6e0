"""Target/feature preprocessing and the four regression solvers.

Families and default hyperparameters:
  ols         ordinary least squares
  elasticnet  (1/2N)||y-Xw||^2 + alpha*rho*||w||_1 + (alpha*(1-rho)/2)*||w||^2,
              alpha=0.01, rho=0.1, cyclic coordinate descent
  svr         epsilon-insensitive SVR, RBF kernel, C=1.0, epsilon=1e-4,
              gamma="scale" (= 1/(m*Var(all X entries))), SMO dual solver
  gbt         gradient boosting, 350 depth-<=3 trees, learning rate 0.01,
              Huber loss with delta = 0.9 quantile of current |residuals|

The conventional SVR "degree" parameter is accepted and recorded but inert
for the RBF kernel.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SingularSystemError, ValidationError

log = logging.getLogger(__name__)

FAMILIES = ("ols", "elasticnet", "svr", "gbt")

DEFAULT_PARAMS: dict[str, dict] = {
    "ols": {},
    "elasticnet": {"alpha": 0.01, "rho": 0.1},
    "svr": {"C": 1.0, "epsilon": 0.0001, "gamma": "scale", "degree": 3},
    "gbt": {
        "n_estimators": 350,
        "learning_rate": 0.01,
        "max_depth": 3,
        "loss": "huber",
        "huber_quantile": 0.9,
    },
}


@dataclass
class RegressorSpec:
    family: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown regressor family {self.family!r}")
        merged = dict(DEFAULT_PARAMS[self.family])
        merged.update(self.params)
        self.params = merged
        for key, val in self.params.items():
            if key in ("gamma", "loss"):
                continue
            if isinstance(val, (int, float)) and val < 0:
                raise ValidationError(f"{self.family}.{key} must be non-negative, got {val}")


# ---------------------------------------------------------------------------
# Preprocessing: per column, (1) optional natural log, (2) standardize,
# (3) min-max to [0,1]. Statistics always come from training data.
# ---------------------------------------------------------------------------


@dataclass
class ColumnTransform:
    log: bool
    mean: float
    std: float
    lo: float  # min of the standardized training column
    hi: float

    def apply(self, v: np.ndarray, name: str) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if self.log:
            if (v <= 0).any():
                row = int(np.argmax(v <= 0))
                raise ValidationError(
                    f"log transform of column {name!r}: non-positive value at row {row}"
                )
            v = np.log(v)
        v = (v - self.mean) / self.std
        return (v - self.lo) / (self.hi - self.lo)

    def invert(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float) * (self.hi - self.lo) + self.lo
        v = v * self.std + self.mean
        return np.exp(v) if self.log else v


def _fit_column(values: np.ndarray, want_log: bool, name: str) -> ColumnTransform:
    v = np.asarray(values, dtype=float)
    if want_log:
        if (v <= 0).any():
            row = int(np.argmax(v <= 0))
            raise ValidationError(
                f"log transform of column {name!r}: non-positive value at row {row}"
            )
        v = np.log(v)
    mean = float(v.mean())
    std = float(v.std())
    if std <= 0.0:
        raise ValidationError(f"column {name!r} is constant; cannot standardize")
    s = (v - mean) / std
    return ColumnTransform(log=want_log, mean=mean, std=std, lo=float(s.min()), hi=float(s.max()))


@dataclass
class Preprocessor:
    x_cols: list[ColumnTransform]
    y_col: ColumnTransform
    x_names: list[str]
    y_name: str

    def transform_x(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[1] != len(self.x_cols):
            raise ValidationError(f"expected {len(self.x_cols)} columns, got {X.shape[1]}")
        return np.column_stack(
            [c.apply(X[:, j], self.x_names[j]) for j, c in enumerate(self.x_cols)]
        )

    def transform_y(self, y: np.ndarray) -> np.ndarray:
        return self.y_col.apply(y, self.y_name)

    def invert_y(self, y: np.ndarray) -> np.ndarray:
        return self.y_col.invert(y)

    def to_dict(self) -> dict:
        return {
            "x_names": self.x_names,
            "y_name": self.y_name,
            "x_cols": [vars(c) for c in self.x_cols],
            "y_col": vars(self.y_col),
        }

    @staticmethod
    def from_dict(d: dict) -> "Preprocessor":
        return Preprocessor(
            x_cols=[ColumnTransform(**c) for c in d["x_cols"]],
            y_col=ColumnTransform(**d["y_col"]),
            x_names=d["x_names"],
            y_name=d["y_name"],
        )


def fit_preprocessor(
    X: np.ndarray,
    y: np.ndarray,
    x_log: list[bool] | None = None,
    y_log: bool = False,
    x_names: list[str] | None = None,
    y_name: str = "y",
) -> Preprocessor:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    m = X.shape[1]
    x_log = x_log or [False] * m
    x_names = x_names or [f"x{j}" for j in range(m)]
    if len(x_log) != m or len(x_names) != m:
        raise ValidationError("x_log/x_names length must match the column count")
    cols = [_fit_column(X[:, j], x_log[j], x_names[j]) for j in range(m)]
    ycol = _fit_column(y, y_log, y_name)
    return Preprocessor(x_cols=cols, y_col=ycol, x_names=list(x_names), y_name=y_name)


# ---------------------------------------------------------------------------
# Fitted models
# ---------------------------------------------------------------------------


@dataclass
class FittedModel:
    family: str
    params: dict
    n_features: int
    state: dict  # family-specific learned parameters
    converged: bool = True
    column_names: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "params": self.params,
            "n_features": self.n_features,
            "converged": self.converged,
            "column_names": self.column_names,
            "state": _jsonable(self.state),
        }

    @staticmethod
    def from_dict(d: dict) -> "FittedModel":
        state = _unjsonable(d["state"])
        return FittedModel(
            family=d["family"],
            params=d["params"],
            n_features=d["n_features"],
            state=state,
            converged=d["converged"],
            column_names=d.get("column_names", []),
        )


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return {"__array__": obj.tolist()}
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _unjsonable(obj):
    if isinstance(obj, dict):
        if "__array__" in obj and len(obj) == 1:
            return np.array(obj["__array__"])
        return {k: _unjsonable(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_unjsonable(v) for v in obj]
    return obj


def save_model(model: FittedModel, preproc: Preprocessor | None, path: str, extra: dict | None = None) -> None:
    payload = {"model": model.to_dict()}
    if preproc is not None:
        payload["preprocessor"] = preproc.to_dict()
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path: str) -> tuple[FittedModel, Preprocessor | None]:
    with open(path) as fh:
        payload = json.load(fh)
    model = FittedModel.from_dict(payload["model"])
    preproc = Preprocessor.from_dict(payload["preprocessor"]) if "preprocessor" in payload else None
    return model, preproc


# ---------------------------------------------------------------------------
# OLS
# ---------------------------------------------------------------------------


def fit_ols(X: np.ndarray, y: np.ndarray) -> FittedModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, m = X.shape
    if n <= m:
        raise SingularSystemError(f"OLS needs N > m rows, got N={n}, m={m}")
    A = np.column_stack([np.ones(n), X])
    w, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
    if rank < m + 1:
        raise SingularSystemError(f"design matrix rank {rank} below {m + 1} (with intercept)")
    return FittedModel(
        family="ols",
        params={},
        n_features=m,
        state={"intercept": float(w[0]), "weights": w[1:]},
    )


# ---------------------------------------------------------------------------
# ElasticNet via cyclic coordinate descent (intercept unpenalized)
# ---------------------------------------------------------------------------

ENET_TOL = 1e-7
ENET_MAX_SWEEPS = 10_000


def fit_elasticnet(
    X: np.ndarray, y: np.ndarray, alpha: float = 0.01, rho: float = 0.1
) -> FittedModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if alpha < 0 or not (0.0 <= rho <= 1.0):
        raise ValidationError(f"need alpha >= 0 and rho in [0,1], got {alpha}, {rho}")
    n, m = X.shape
    x_mean = X.mean(axis=0)
    y_mean = float(y.mean())
    Xc = X - x_mean
    yc = y - y_mean

    col_sq = (Xc * Xc).sum(axis=0) / n
    w = np.zeros(m)
    r = yc.copy()  # residual yc - Xc @ w
    thresh = alpha * rho
    l2 = alpha * (1.0 - rho)

    converged = False
    for _ in range(ENET_MAX_SWEEPS):
        max_delta = 0.0
        for j in range(m):
            old = w[j]
            if old != 0.0:
                r += Xc[:, j] * old
            rho_j = float(Xc[:, j] @ r) / n
            denom = col_sq[j] + l2
            if denom <= 0.0:
                new = 0.0
            else:
                new = math.copysign(max(abs(rho_j) - thresh, 0.0), rho_j) / denom
            if new != 0.0:
                r -= Xc[:, j] * new
            w[j] = new
            max_delta = max(max_delta, abs(new - old))
        if max_delta < ENET_TOL:
            converged = True
            break
    if not converged:
        log.warning("elasticnet did not converge in %d sweeps", ENET_MAX_SWEEPS)

    intercept = y_mean - float(x_mean @ w)
    return FittedModel(
        family="elasticnet",
        params={"alpha": alpha, "rho": rho},
        n_features=m,
        state={"intercept": intercept, "weights": w},
        converged=converged,
    )


def elasticnet_objective(X: np.ndarray, y: np.ndarray, intercept: float, w: np.ndarray,
                         alpha: float, rho: float) -> float:
    r = y - intercept - X @ w
    n = len(y)
    return (
        float(r @ r) / (2 * n)
        + alpha * rho * float(np.abs(w).sum())
        + alpha * (1 - rho) / 2 * float(w @ w)
    )


def elasticnet_kkt_violation(X: np.ndarray, y: np.ndarray, model: FittedModel) -> float:
    """Max subgradient-optimality violation across coordinates (0 at the
    exact optimum). Checked on the same objective the solver minimizes."""
    alpha, rho = model.params["alpha"], model.params["rho"]
    w = model.state["weights"]
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    Xc = X - X.mean(axis=0)
    yc = y - y.mean()
    g = -(Xc.T @ (yc - Xc @ w)) / n + alpha * (1 - rho) * w
    t = alpha * rho
    worst = 0.0
    for j in range(len(w)):
        if w[j] != 0.0:
            worst = max(worst, abs(g[j] + math.copysign(t, w[j])))
        else:
            worst = max(worst, max(0.0, abs(g[j]) - t))
    return worst


# ---------------------------------------------------------------------------
# epsilon-SVR with RBF kernel: SMO on the 2n-variable dual
#   min 0.5 t'Qt + p't  s.t.  z't = 0, 0 <= t <= C
# with t = [alpha; alpha*], z = [+1; -1], p = [eps - y; eps + y].
# ---------------------------------------------------------------------------

SVR_KKT_TOL = 1e-6


def _resolve_gamma(gamma, X: np.ndarray) -> float:
    if gamma == "scale":
        var = float(np.asarray(X, dtype=float).var())
        m = X.shape[1]
        return 1.0 / (m * var) if var > 0 else 1.0 / m
    g = float(gamma)
    if g <= 0:
        raise ValidationError(f"gamma must be positive, got {g}")
    return g


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    a2 = (A * A).sum(axis=1)[:, None]
    b2 = (B * B).sum(axis=1)[None, :]
    d2 = np.maximum(a2 + b2 - 2.0 * (A @ B.T), 0.0)
    return np.exp(-gamma * d2)


def _svr_recompute_gradient(K, t, y, epsilon):
    n = len(y)
    w = K @ (t[:n] - t[n:])
    return np.concatenate([w + epsilon - y, -w + epsilon + y])


def _svr_kkt_gap(t, G, z, C):
    s = z * G
    in_lower = ((z > 0) & (t > 0)) | ((z < 0) & (t < C))  # gives lower bounds on b
    in_upper = ((z > 0) & (t < C)) | ((z < 0) & (t > 0))  # gives upper bounds on b
    s_low = np.where(in_lower, s, -np.inf)
    s_up = np.where(in_upper, s, np.inf)
    return s_low, s_up


def _svr_smo_burst(K, kdiag, t, G, z, C, iters):
    """Second-order SMO pair updates in place; returns the final KKT gap."""
    n = K.shape[0]
    for _ in range(iters):
        s_low, s_up = _svr_kkt_gap(t, G, z, C)
        i = int(s_low.argmax())
        if s_low[i] - s_up.min() < SVR_KKT_TOL:
            return s_low[i] - s_up.min()
        # Among violating partners, maximize the guaranteed objective
        # decrease gap^2 / (2*curvature).
        ii = i % n
        krow = K[ii]
        gaps = s_low[i] - s_up
        curv_all = np.maximum(kdiag[i] + kdiag - 2.0 * np.concatenate([krow, krow]), 1e-12)
        score = np.where(gaps > 0, gaps * gaps / curv_all, -np.inf)
        j = int(score.argmax())
        gap = gaps[j]

        # Direction: t_i moves by -z_i*delta, t_j by +z_j*delta (keeps z't).
        room_i = t[i] if z[i] > 0 else C - t[i]
        room_j = C - t[j] if z[j] > 0 else t[j]
        jj = j % n
        curv = kdiag[i] + kdiag[j] - 2.0 * K[ii, jj]
        delta = gap / curv if curv > 1e-12 else np.inf
        delta = min(delta, room_i, room_j)
        if delta <= 0.0:
            break  # numerically stuck at the boundary
        di, dj = -z[i] * delta, z[j] * delta
        t[i] += di
        t[j] += dj
        # G += Q[:,i]*di + Q[:,j]*dj with Q[v,u] = z_v z_u K[v%n, u%n].
        upd = z[i] * di * krow + z[j] * dj * K[:, jj]
        G[:n] += upd
        G[n:] -= upd
    s_low, s_up = _svr_kkt_gap(t, G, z, C)
    return s_low.max() - s_up.min()


def _svr_refine_free_set(K, t, G, z, C, y, epsilon):
    """Active-set refinement: repeatedly solve the equality-constrained QP
    over the free variables exactly and move along the segment toward that
    optimum up to the first blocking box constraint (a descent step by
    convexity). Updates t and G in place; returns True if t changed."""
    n = K.shape[0]
    snap = 1e-10 * C
    changed = False
    for _ in range(2 * n):
        free = (t > snap) & (t < C - snap)
        nf = int(free.sum())
        if nf == 0:
            break
        idx = np.flatnonzero(free)
        rows = idx % n
        Qff = (z[idx, None] * z[None, idx]) * K[np.ix_(rows, rows)]
        # Q_FB t_B + p_F = G_F - Q_FF t_F at the current point.
        q = G[idx] - Qff @ t[idx]
        c = float(z[idx] @ t[idx])
        kkt = np.zeros((nf + 1, nf + 1))
        kkt[:nf, :nf] = Qff
        kkt[:nf, nf] = -z[idx]
        kkt[nf, :nf] = z[idx]
        rhs = np.concatenate([-q, [c]])
        sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
        step = sol[:nf] - t[idx]
        if np.abs(step).max() < 1e-14:
            break
        # Largest lambda in (0,1] keeping 0 <= t <= C on the free coordinates.
        with np.errstate(divide="ignore", invalid="ignore"):
            hi = np.where(step > 1e-300, (C - t[idx]) / step, np.inf)
            lo = np.where(step < -1e-300, -t[idx] / step, np.inf)
        lam = min(1.0, float(np.minimum(hi, lo).min()))
        if lam <= 0:
            break
        newvals = t[idx] + lam * step
        newvals[newvals < snap] = 0.0
        newvals[newvals > C - snap] = C
        t[idx] = newvals
        G[:] = _svr_recompute_gradient(K, t, y, epsilon)
        changed = True
        if lam >= 1.0:
            break  # free-set optimum reached without hitting the box
    return changed


def fit_svr(
    X: np.ndarray,
    y: np.ndarray,
    C: float = 1.0,
    epsilon: float = 0.0001,
    gamma="scale",
    max_rounds: int = 60,
) -> FittedModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if C <= 0 or epsilon < 0:
        raise ValidationError(f"need C > 0 and epsilon >= 0, got C={C}, epsilon={epsilon}")
    n, m = X.shape
    g = _resolve_gamma(gamma, X)
    K = rbf_kernel(X, X, g)

    t = np.zeros(2 * n)
    z = np.concatenate([np.ones(n), -np.ones(n)])
    G = np.concatenate([epsilon - y, epsilon + y])  # gradient Qt + p at t = 0
    kdiag = np.concatenate([np.diag(K), np.diag(K)])

    burst = max(200, 20 * n)
    converged = False
    for _ in range(max_rounds):
        gap = _svr_smo_burst(K, kdiag, t, G, z, C, burst)
        if gap < SVR_KKT_TOL:
            converged = True
            break
        _svr_refine_free_set(K, t, G, z, C, y, epsilon)
        s_low, s_up = _svr_kkt_gap(t, G, z, C)
        if s_low.max() - s_up.min() < SVR_KKT_TOL:
            converged = True
            break
    if not converged:
        log.warning("SVR solver stopped before reaching KKT tol %g", SVR_KKT_TOL)

    s = z * G
    in_lower = ((z > 0) & (t > 0)) | ((z < 0) & (t < C))
    in_upper = ((z > 0) & (t < C)) | ((z < 0) & (t > 0))
    lo = s[in_lower].max() if in_lower.any() else None
    up = s[in_upper].min() if in_upper.any() else None
    if lo is None:
        b_mult = up
    elif up is None:
        b_mult = lo
    else:
        b_mult = (lo + up) / 2.0
    bias = -float(b_mult)

    beta = t[:n] - t[n:]
    sv = np.abs(beta) > 1e-12
    return FittedModel(
        family="svr",
        params={"C": C, "epsilon": epsilon, "gamma": gamma, "degree": 3},
        n_features=m,
        state={
            "support_vectors": X[sv],
            "dual_coef": beta[sv],
            "bias": bias,
            "gamma_value": g,
            "alpha": t[:n],
            "alpha_star": t[n:],
        },
        converged=converged,
    )


def svr_dual_feasibility(model: FittedModel, C: float) -> tuple[float, float]:
    """(max box violation, |sum(alpha - alpha*)|) for the stored duals."""
    a, a_s = model.state["alpha"], model.state["alpha_star"]
    box = max(
        float(np.maximum(-a, 0).max(initial=0.0)),
        float(np.maximum(a - C, 0).max(initial=0.0)),
        float(np.maximum(-a_s, 0).max(initial=0.0)),
        float(np.maximum(a_s - C, 0).max(initial=0.0)),
    )
    return box, abs(float((a - a_s).sum()))


# ---------------------------------------------------------------------------
# Gradient-boosted trees with Huber loss
# ---------------------------------------------------------------------------


def _huber_loss(r: np.ndarray, delta: float) -> float:
    a = np.abs(r)
    return float(np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta)).mean())


def _best_split(X: np.ndarray, g: np.ndarray, idx: np.ndarray):
    """Exact greedy split of rows ``idx`` minimizing squared error on the
    gradient targets. Ties resolve to the lowest feature index, then the
    lowest threshold. Returns (feature, threshold, gain) or None."""
    n = len(idx)
    if n < 2:
        return None
    base = g[idx]
    total = base.sum()
    best = None
    for f in range(X.shape[1]):
        order = np.argsort(X[idx, f], kind="stable")
        xs = X[idx[order], f]
        gs = base[order]
        csum = np.cumsum(gs)
        distinct = np.nonzero(xs[1:] > xs[:-1])[0]  # split after position k
        if len(distinct) == 0:
            continue
        k = distinct
        left_n = k + 1.0
        right_n = n - left_n
        left_sum = csum[k]
        right_sum = total - left_sum
        # gain = sse_parent - sse_left - sse_right; the sum-of-squares term
        # cancels, leaving the score below minus the parent's mean term.
        score = (left_sum**2) / left_n + (right_sum**2) / right_n
        bi = int(score.argmax())
        gain = float(score[bi]) - total * total / n
        if gain > 1e-12 and (best is None or gain > best[2] + 1e-15):
            threshold = (xs[k[bi]] + xs[k[bi] + 1]) / 2.0
            best = (f, float(threshold), gain)
    return best


def _grow_tree(X: np.ndarray, g: np.ndarray, idx: np.ndarray, depth: int, max_depth: int) -> dict:
    split = _best_split(X, g, idx) if depth < max_depth else None
    if split is None:
        return {"leaf": idx}
    f, thr, _ = split
    mask = X[idx, f] <= thr
    left_idx = idx[mask]
    right_idx = idx[~mask]
    if len(left_idx) == 0 or len(right_idx) == 0:
        return {"leaf": idx}
    return {
        "feature": f,
        "threshold": thr,
        "left": _grow_tree(X, g, left_idx, depth + 1, max_depth),
        "right": _grow_tree(X, g, right_idx, depth + 1, max_depth),
    }


def _huber_leaf_value(r_leaf: np.ndarray, delta: float) -> float:
    med = float(np.median(r_leaf))
    return med + float(np.clip(r_leaf - med, -delta, delta).mean())


def _assign_leaves(tree: dict, X: np.ndarray, r: np.ndarray, delta: float, lr: float) -> None:
    if "leaf" in tree:
        idx = tree.pop("leaf")
        tree["value"] = lr * _huber_leaf_value(r[idx], delta)
        tree["_idx"] = idx
        return
    _assign_leaves(tree["left"], X, r, delta, lr)
    _assign_leaves(tree["right"], X, r, delta, lr)


def _tree_training_contrib(tree: dict, n: int) -> np.ndarray:
    out = np.zeros(n)

    def walk(node: dict) -> None:
        if "value" in node:
            out[node["_idx"]] = node["value"]
            return
        walk(node["left"])
        walk(node["right"])

    walk(tree)
    return out


def _scale_tree(tree: dict, factor: float) -> None:
    if "value" in tree:
        tree["value"] *= factor
        return
    _scale_tree(tree["left"], factor)
    _scale_tree(tree["right"], factor)


def _strip_tree(tree: dict) -> dict:
    if "value" in tree:
        return {"value": float(tree["value"])}
    return {
        "feature": int(tree["feature"]),
        "threshold": float(tree["threshold"]),
        "left": _strip_tree(tree["left"]),
        "right": _strip_tree(tree["right"]),
    }


def tree_predict(tree: dict, X: np.ndarray) -> np.ndarray:
    out = np.zeros(len(X))

    def walk(node: dict, idx: np.ndarray) -> None:
        if "value" in node:
            out[idx] = node["value"]
            return
        mask = X[idx, node["feature"]] <= node["threshold"]
        walk(node["left"], idx[mask])
        walk(node["right"], idx[~mask])

    walk(tree, np.arange(len(X)))
    return out


def fit_gbt(
    X: np.ndarray,
    y: np.ndarray,
    n_estimators: int = 350,
    learning_rate: float = 0.01,
    max_depth: int = 3,
    huber_quantile: float = 0.9,
    loss: str = "huber",
    seed: int = 0,
) -> FittedModel:
    """Boosted depth-limited trees on the Huber loss.

    delta is the ``huber_quantile`` quantile of current absolute residuals,
    capped to be non-increasing across iterations; a tree whose contribution
    would raise the recorded training loss is damped (halved, then dropped).
    Together these make the loss curve non-increasing by construction.
    No row/column subsampling: the fit is deterministic and ``seed`` only
    exists for interface uniformity.
    """
    if loss != "huber":
        raise ValidationError(f"only the huber loss is supported, got {loss!r}")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, m = X.shape
    if n < 2:
        raise ValidationError(f"GBT needs at least 2 rows, got {n}")

    init = float(np.median(y))
    F = np.full(n, init)
    trees: list[dict] = []
    losses: list[float] = []
    deltas: list[float] = []
    prev_delta = math.inf
    prev_loss = math.inf

    for _ in range(n_estimators):
        r = y - F
        delta = float(np.quantile(np.abs(r), huber_quantile))
        delta = min(delta, prev_delta)
        if delta <= 0.0:
            delta = 0.0
            grad = r.copy()  # all residuals zero
        else:
            grad = np.clip(r, -delta, delta)

        tree = _grow_tree(X, grad, np.arange(n), 0, max_depth)
        _assign_leaves(tree, X, r, delta, learning_rate)
        contrib = _tree_training_contrib(tree, n)

        new_loss = _huber_loss(y - (F + contrib), delta)
        halvings = 0
        while new_loss > min(prev_loss, _huber_loss(r, delta)) and halvings < 40:
            contrib *= 0.5
            _scale_tree(tree, 0.5)
            halvings += 1
            new_loss = _huber_loss(y - (F + contrib), delta)
        if halvings == 40:
            contrib[:] = 0.0
            _scale_tree(tree, 0.0)
            new_loss = _huber_loss(r, delta)

        F += contrib
        trees.append(_strip_tree(tree))
        losses.append(new_loss)
        deltas.append(delta)
        prev_delta = delta
        prev_loss = new_loss

    return FittedModel(
        family="gbt",
        params={
            "n_estimators": n_estimators,
            "learning_rate": learning_rate,
            "max_depth": max_depth,
            "loss": loss,
            "huber_quantile": huber_quantile,
        },
        n_features=m,
        state={"init": init, "trees": trees, "loss_curve": losses, "delta_curve": deltas},
    )


# ---------------------------------------------------------------------------
# Prediction and the family dispatcher
# ---------------------------------------------------------------------------


def fit(spec: RegressorSpec, X: np.ndarray, y: np.ndarray) -> FittedModel:
    p = spec.params
    if spec.family == "ols":
        return fit_ols(X, y)
    if spec.family == "elasticnet":
        return fit_elasticnet(X, y, alpha=p["alpha"], rho=p["rho"])
    if spec.family == "svr":
        return fit_svr(X, y, C=p["C"], epsilon=p["epsilon"], gamma=p["gamma"])
    if spec.family == "gbt":
        return fit_gbt(
            X,
            y,
            n_estimators=p["n_estimators"],
            learning_rate=p["learning_rate"],
            max_depth=p["max_depth"],
            huber_quantile=p["huber_quantile"],
            loss=p["loss"],
            seed=spec.seed,
        )
    raise ValidationError(f"unknown family {spec.family!r}")


def predict(model: FittedModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ValidationError(
            f"prediction input has {X.shape[1] if X.ndim == 2 else 'bad'} columns, "
            f"model expects {model.n_features}"
        )
    st = model.state
    if model.family in ("ols", "elasticnet"):
        return st["intercept"] + X @ st["weights"]
    if model.family == "svr":
        if len(st["support_vectors"]) == 0:
            return np.full(len(X), st["bias"])
        k = rbf_kernel(X, st["support_vectors"], st["gamma_value"])
        return k @ st["dual_coef"] + st["bias"]
    if model.family == "gbt":
        out = np.full(len(X), st["init"])
        for tree in st["trees"]:
            out += tree_predict(tree, X)
        return out
    raise ValidationError(f"unknown family {model.family!r}")


def linear_coefficients(model: FittedModel) -> tuple[float, np.ndarray] | None:
    """Intercept and weights for linear families; None otherwise."""
    if model.family in ("ols", "elasticnet"):
        return model.state["intercept"], np.asarray(model.state["weights"])
    return None
