"""Piecewise-affine dynamics identification over behavior segments.

Discrete-time model: x(t+1) = A_i x(t) + B_i u(t) + d_i while the linear
region discriminant picks mode i at (x(t), u(t)). Identification follows the
clustering-of-local-models recipe: per-point local least squares, k-means on
the local parameter vectors, cluster refits, and reassign/refit iteration.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .clustering import kmeans
from .core import wrap_angle

STATE_DIM = 4
CONTROL_DIM = 2


class SingularFitError(RuntimeError):
    pass


@dataclass
class PwaMode:
    A: np.ndarray  # (4, 4)
    B: np.ndarray  # (4, 2)
    d: np.ndarray  # (4,)

    def step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.A @ x + self.B @ u + self.d


@dataclass
class PwaModel:
    modes: list
    # one-vs-rest linear discriminant over (x, u, 1); argmax picks the region,
    # ties to the lowest index
    region_weights: np.ndarray  # (n_modes, 7)
    # state-only discriminant for callers that must classify without controls
    state_region_weights: np.ndarray = None  # (n_modes, 5)
    labels: np.ndarray = None  # training-point assignment

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    def region_of(self, x: np.ndarray, u: np.ndarray) -> int:
        feat = np.concatenate([x, u, [1.0]])
        return int(np.argmax(self.region_weights @ feat))

    def region_of_state(self, x: np.ndarray) -> int:
        feat = np.concatenate([x, [1.0]])
        return int(np.argmax(self.state_region_weights @ feat))


@dataclass
class ModeSemantics:
    labels: dict  # mode index -> "starting" | "coasting" | "approaching"
    mean_accel: np.ndarray
    mean_speed: np.ndarray

    def mode_of(self, label: str) -> int:
        for idx, lab in self.labels.items():
            if lab == label:
                return idx
        raise KeyError(label)


def _phi(x: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.concatenate([x, u, [1.0]])


def _fit_affine(X: np.ndarray, U: np.ndarray, Y: np.ndarray):
    """Least-squares (A, B, d) for Y ~ A X + B U + d. Returns (mode, rank)."""
    phi = np.column_stack([X, U, np.ones(len(X))])
    theta, _, rank, _ = np.linalg.lstsq(phi, Y, rcond=None)
    mode = PwaMode(
        A=theta[:STATE_DIM].T.copy(),
        B=theta[STATE_DIM : STATE_DIM + CONTROL_DIM].T.copy(),
        d=theta[-1].copy(),
    )
    return mode, rank


def regression_pairs(trajectories: list, segments=None):
    """(x(t), u(t)) -> x(t+1) pairs, trajectory-wise, heading rows unwrapped.

    If segments are given, only samples inside them are used; each pair
    remembers its (trajectory, sample, segment membership) origin.
    """
    xs, us, ys, origin = [], [], [], []
    if segments is None:
        iterator = [(ti, 0, len(t.states), None) for ti, t in enumerate(trajectories)]
    else:
        iterator = [(s.trajectory, s.start, s.end, s) for s in segments]
    for ti, start, end, seg in iterator:
        traj = trajectories[ti]
        states = traj.states
        for i in range(start, min(end, len(states)) - 1):
            x = states[i].copy()
            y = states[i + 1].copy()
            # regress on a locally continuous heading so the wrap seam does
            # not corrupt the affine fit
            y[3] = x[3] + wrap_angle(y[3] - x[3])
            xs.append(x)
            us.append(traj.controls[i].copy())
            ys.append(y)
            origin.append((ti, i, seg.membership if seg is not None else None))
    return np.array(xs), np.array(us), np.array(ys), origin


def identify_pwa(
    X: np.ndarray,
    U: np.ndarray,
    Y: np.ndarray,
    n_modes: int,
    c_local: int = 12,
    seed: int = 0,
    loc_weight: float = 0.3,
    ridge: float = 1e-6,
    max_rounds: int = 20,
) -> PwaModel:
    """Identify an n_modes piecewise-affine model from regression pairs.

    Local affine fits on c_local nearest neighbors feed a seeded k-means on
    (standardized parameter vector, loc_weight * standardized location);
    per-cluster refits and residual-based reassignment iterate to a fixed
    point (total squared residual asserted non-increasing), then linear
    one-vs-rest regions are fitted to the final labels.
    """
    n = len(X)
    if n < n_modes * c_local:
        raise ValueError(f"need at least n_modes*c_local={n_modes * c_local} pairs, got {n}")
    feats = np.column_stack([X, U])
    scale = feats.std(axis=0)
    scale[scale < 1e-12] = 1.0
    tree = cKDTree(feats / scale)

    n_features = STATE_DIM + CONTROL_DIM + 1
    params = np.empty((n, n_features * STATE_DIM))
    n_singular = 0
    for i in range(n):
        _, idx = tree.query(feats[i] / scale, k=c_local)
        mode, rank = _fit_affine(X[idx], U[idx], Y[idx])
        if rank < n_features:
            # enlarge the neighborhood once; fall back to the minimum-norm
            # solution when the data is genuinely rank-deficient there
            _, idx = tree.query(feats[i] / scale, k=min(2 * c_local, n))
            mode, rank = _fit_affine(X[idx], U[idx], Y[idx])
            if rank < n_features:
                n_singular += 1
        params[i] = np.concatenate([mode.A.ravel(), mode.B.ravel(), mode.d])
    if n_singular:
        warnings.warn(
            f"{n_singular}/{n} local regressions rank-deficient; minimum-norm fits used",
            RuntimeWarning,
        )

    def standardize(block):
        s = block.std(axis=0)
        s[s < 1e-12] = 1.0
        return (block - block.mean(axis=0)) / s

    cluster_feats = np.column_stack([standardize(params), loc_weight * standardize(feats)])
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0,)))
    _, labels = kmeans(cluster_feats, n_modes, rng)

    def refit(labels):
        modes = []
        keep = []
        for j in range(n_modes):
            mask = labels == j
            if mask.sum() < n_features:
                continue
            mode, _ = _fit_affine(X[mask], U[mask], Y[mask])
            modes.append(mode)
            keep.append(j)
        return modes, keep

    prev_ssr = math.inf
    prev_n_modes = None
    for _ in range(max_rounds):
        modes, keep = refit(labels)
        if len(modes) < n_modes:
            warnings.warn("empty mode dropped during PWA refit", RuntimeWarning)
        if prev_n_modes is not None and len(modes) != prev_n_modes:
            prev_ssr = math.inf  # mode count changed; residual baseline resets
        prev_n_modes = len(modes)
        preds = np.stack([np.column_stack([X, U, np.ones(n)]) @
                          np.vstack([m.A.T, m.B.T, m.d]).reshape(n_features, STATE_DIM)
                          for m in modes])
        resid = ((preds - Y[None, :, :]) ** 2).sum(axis=2)  # (n_modes_kept, n)
        new_labels_k = np.argmin(resid, axis=0)
        ssr = float(resid[new_labels_k, np.arange(n)].sum())
        assert ssr <= prev_ssr + 1e-9 * max(1.0, prev_ssr), "PWA refit increased residual"
        prev_ssr = ssr
        new_labels = np.array([keep[j] for j in new_labels_k])
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels

    modes, keep = refit(labels)
    remap = {old: new for new, old in enumerate(keep)}
    labels = np.array([remap[j] for j in labels])

    region_weights = _one_vs_rest(np.column_stack([X, U]), labels, len(modes), ridge)
    state_region_weights = _one_vs_rest(X, labels, len(modes), ridge)
    return PwaModel(
        modes=modes,
        region_weights=region_weights,
        state_region_weights=state_region_weights,
        labels=labels,
    )


def _one_vs_rest(feats: np.ndarray, labels: np.ndarray, n_modes: int, ridge: float) -> np.ndarray:
    phi = np.column_stack([feats, np.ones(len(feats))])
    gram = phi.T @ phi + ridge * np.eye(phi.shape[1])
    weights = np.empty((n_modes, phi.shape[1]))
    for j in range(n_modes):
        target = np.where(labels == j, 1.0, -1.0)
        weights[j] = np.linalg.solve(gram, phi.T @ target)
    return weights


def fit_autonomous_modes(X: np.ndarray, Y: np.ndarray, labels: np.ndarray, n_modes: int):
    """Closed-loop per-mode maps x(t+1) = A x(t) + d on the labeled pairs.

    Used where controls are unavailable (filtering measured states,
    prediction, generation). Returns (modes, residual covariances).
    """
    modes = []
    covs = []
    for j in range(n_modes):
        mask = labels == j
        Xj, Yj = X[mask], Y[mask]
        phi = np.column_stack([Xj, np.ones(len(Xj))])
        theta, _, _, _ = np.linalg.lstsq(phi, Yj, rcond=None)
        A = theta[:STATE_DIM].T.copy()
        d = theta[-1].copy()
        resid = Yj - phi @ theta
        cov = resid.T @ resid / max(len(Xj), 1)
        modes.append(PwaMode(A=A, B=np.zeros((STATE_DIM, CONTROL_DIM)), d=d))
        covs.append(cov)
    return modes, covs


def classify_mode_semantics(model: PwaModel, U: np.ndarray, X: np.ndarray) -> ModeSemantics:
    """Name the modes by their mean tangential acceleration.

    Largest mean acceleration -> starting, most negative -> approaching,
    remainder -> coasting. Deterministic tie order: candidates sort by
    (-mean accel, mean speed, index) for starting and by
    (mean accel, mean speed, index) for approaching.
    """
    n_modes = model.n_modes
    mean_a = np.empty(n_modes)
    mean_v = np.empty(n_modes)
    for j in range(n_modes):
        mask = model.labels == j
        mean_a[j] = float(U[mask, 1].mean()) if mask.any() else 0.0
        mean_v[j] = float(X[mask, 2].mean()) if mask.any() else 0.0

    labels = {}
    if n_modes == 3:
        order_start = sorted(range(3), key=lambda j: (-mean_a[j], mean_v[j], j))
        starting = order_start[0]
        rest = [j for j in range(3) if j != starting]
        order_app = sorted(rest, key=lambda j: (mean_a[j], mean_v[j], j))
        approaching = order_app[0]
        coasting = next(j for j in rest if j != approaching)
        labels = {starting: "starting", coasting: "coasting", approaching: "approaching"}
    else:
        warnings.warn(
            f"mode semantics defined for 3 modes, got {n_modes}; statistics only",
            RuntimeWarning,
        )
    return ModeSemantics(labels=labels, mean_accel=mean_a, mean_speed=mean_v)


def simulate_pwa(model: PwaModel, x0: np.ndarray, controls: np.ndarray, bounds=None):
    """Roll the identified model forward under given controls.

    Returns (states (len+1, 4), diverged flag). Divergence = leaving a
    10x-inflated bounds box, when bounds are given.
    """
    controls = np.asarray(controls, dtype=float)
    if not np.isfinite(controls).all():
        raise ValueError("controls must be finite")
    x = np.asarray(x0, dtype=float).copy()
    states = [x.copy()]
    diverged = False
    if bounds is not None:
        xmin, ymin, xmax, ymax = bounds
        cx, cy = 0.5 * (xmin + xmax), 0.5 * (ymin + ymax)
        hx, hy = 5.0 * (xmax - xmin), 5.0 * (ymax - ymin)
    for u in controls:
        mode = model.modes[model.region_of(x, u)]
        x = mode.step(x, u)
        states.append(x.copy())
        if bounds is not None and (abs(x[0] - cx) > hx or abs(x[1] - cy) > hy):
            diverged = True
            break
    return np.array(states), diverged
