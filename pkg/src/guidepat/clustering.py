"""Subgoal clustering: geodesic embedding, Gaussian-mixture selection, and
membership-based trajectory segmentation.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, shortest_path

from .core import AgentState, Dataset
from .symbolic import Quantizer, SubgoalObservation, SymbolicTrajectory


class DisconnectedGraphError(RuntimeError):
    def __init__(self, n_components: int, labels):
        super().__init__(f"k-NN graph has {n_components} components")
        self.n_components = n_components
        self.labels = labels


# ---------------------------------------------------------------------------
# Seeded k-means (shared by the mixture fit and the dynamics clustering)


def kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j:] = points[rng.integers(n, size=k - j)]
            break
        probs = np.cumsum(d2 / total)
        centers[j] = points[int(np.searchsorted(probs, rng.random()))]
        d2 = np.minimum(d2, np.sum((points - centers[j]) ** 2, axis=1))
    return centers


def kmeans(points: np.ndarray, k: int, rng: np.random.Generator, max_iter: int = 200):
    """Lloyd iterations from a k-means++ seed; deterministic given rng state.

    Returns (centers, labels). Emptied clusters are reseeded at the point
    farthest from its center.
    """
    points = np.asarray(points, dtype=float)
    k = min(k, len(points))
    centers = kmeans_pp_init(points, k, rng)
    labels = np.zeros(len(points), dtype=int)
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = np.argmin(d2, axis=1)
        for j in range(k):
            mask = new_labels == j
            if not mask.any():
                far = int(np.argmax(d2[np.arange(len(points)), new_labels]))
                centers[j] = points[far]
                new_labels[far] = j
                mask = new_labels == j
            centers[j] = points[mask].mean(axis=0)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return centers, labels


# ---------------------------------------------------------------------------
# Isomap + classical MDS


@dataclass
class Embedding:
    points: np.ndarray
    eigenvalues: np.ndarray
    source_ids: list
    gram: np.ndarray = None


def observation_features(obs: list, heading_weight: float = 0.5) -> np.ndarray:
    """(x, y, w cos psi, w sin psi) of each observation's representative state."""
    return np.array(
        [
            [
                o.rep_state.x,
                o.rep_state.y,
                heading_weight * math.cos(o.rep_state.psi),
                heading_weight * math.sin(o.rep_state.psi),
            ]
            for o in obs
        ]
    )


def isomap_points(points: np.ndarray, k_nn: int, d: int) -> Embedding:
    """Classical MDS on symmetric k-NN geodesic distances.

    Eigenvalues below 1e-10 of the Gram trace count as zero; if fewer than d
    positive directions exist the remaining coordinates are zero-padded with
    a warning.
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    if n < k_nn + 1:
        raise ValueError(f"need at least k_nn+1={k_nn + 1} points, got {n}")
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))

    order = np.argsort(dist, axis=1, kind="stable")
    rows, cols, vals = [], [], []
    for i in range(n):
        for j in order[i, 1 : k_nn + 1]:
            rows.append(i)
            cols.append(int(j))
            vals.append(dist[i, j])
    graph = csr_matrix((vals, (rows, cols)), shape=(n, n))
    graph = graph.maximum(graph.T)  # symmetric union of neighborhoods

    n_comp, labels = connected_components(graph, directed=False)
    if n_comp > 1:
        raise DisconnectedGraphError(n_comp, labels)

    geo = shortest_path(graph, method="D", directed=False)
    j_center = np.eye(n) - np.ones((n, n)) / n
    gram = -0.5 * j_center @ (geo**2) @ j_center
    evals, evecs = np.linalg.eigh(gram)
    idx = np.argsort(evals)[::-1]
    evals, evecs = evals[idx], evecs[:, idx]

    floor = 1e-10 * max(np.trace(gram), 1.0)
    positive = evals > floor
    n_pos = int(positive.sum())
    if n_pos < d:
        warnings.warn(
            f"requested {d} dimensions but Gram matrix has rank {n_pos}; zero-padding",
            RuntimeWarning,
        )
    coords = np.zeros((n, d))
    take = min(d, n_pos)
    coords[:, :take] = evecs[:, :take] * np.sqrt(evals[:take])
    return Embedding(points=coords, eigenvalues=evals, source_ids=list(range(n)), gram=gram)


def isomap_embed(obs: list, k_nn: int, d: int, heading_weight: float = 0.5) -> Embedding:
    emb = isomap_points(observation_features(obs, heading_weight), k_nn, d)
    emb.source_ids = list(range(len(obs)))
    return emb


# ---------------------------------------------------------------------------
# Gaussian mixture with BIC selection


@dataclass
class MixtureModel:
    k: int
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    bic: float
    log_likelihood: float
    responsibilities: np.ndarray = None

    def memberships(self) -> np.ndarray:
        # argmax responsibility; np.argmax already ties to the lower index
        return np.argmax(self.responsibilities, axis=1)


def _log_gaussian(points: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    d = points.shape[1]
    diff = points - mean
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        raise np.linalg.LinAlgError("covariance not positive definite")
    sol = np.linalg.solve(cov, diff.T).T
    maha = np.sum(diff * sol, axis=1)
    return -0.5 * (d * math.log(2 * math.pi) + logdet + maha)


def _logsumexp(a: np.ndarray, axis: int):
    m = a.max(axis=axis, keepdims=True)
    return m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))


def _floor_covariance(cov: np.ndarray, floor: float) -> tuple:
    """Clip covariance eigenvalues at the floor; returns (cov, floored?)."""
    evals, evecs = np.linalg.eigh(cov)
    if evals[0] >= floor:
        return cov, False
    evals = np.maximum(evals, floor)
    return (evecs * evals) @ evecs.T, True


def fit_gmm(
    points: np.ndarray,
    k: int,
    rng: np.random.Generator,
    tol: float = 1e-8,
    max_iter: int = 500,
    floor_scale: float = 1e-6,
) -> MixtureModel:
    """EM for a full-covariance mixture, k-means initialized.

    The log-likelihood is asserted non-decreasing each iteration. The
    assertion is suspended on iterations where the covariance floor clipped
    an eigenvalue: the flooring perturbs the exact M-step, so monotonicity
    is only guaranteed while it is inactive.
    """
    points = np.asarray(points, dtype=float)
    n, d = points.shape
    floor = floor_scale * max(float(np.var(points, axis=0).mean()), 1e-12)

    _, labels = kmeans(points, k, rng)
    weights = np.empty(k)
    means = np.empty((k, d))
    covs = np.empty((k, d, d))
    floored = False
    for j in range(k):
        mask = labels == j
        weights[j] = max(mask.sum(), 1) / n
        sel = points[mask] if mask.any() else points
        means[j] = sel.mean(axis=0)
        covs[j], f = _floor_covariance(np.cov(sel.T, bias=True).reshape(d, d), floor)
        floored = floored or f
    weights /= weights.sum()

    prev_ll = -math.inf
    ll = prev_ll
    for _ in range(max_iter):
        log_prob = np.column_stack(
            [_log_gaussian(points, means[j], covs[j]) + math.log(weights[j]) for j in range(k)]
        )
        norm = _logsumexp(log_prob, axis=1)
        ll = float(norm.sum())
        if not floored:
            assert ll >= prev_ll - 1e-8 * max(1.0, abs(prev_ll)), "EM log-likelihood decreased"
        resp = np.exp(log_prob - norm)

        nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
        weights = nk / n
        means = (resp.T @ points) / nk[:, None]
        floored = False
        for j in range(k):
            diff = points - means[j]
            covs[j], f = _floor_covariance((resp[:, j : j + 1] * diff).T @ diff / nk[j], floor)
            floored = floored or f

        if prev_ll > -math.inf and ll - prev_ll < tol:
            prev_ll = ll
            break
        prev_ll = ll

    n_params = (k - 1) + k * d + k * d * (d + 1) // 2
    bic = -2.0 * ll + n_params * math.log(n)
    log_prob = np.column_stack(
        [_log_gaussian(points, means[j], covs[j]) + math.log(weights[j]) for j in range(k)]
    )
    resp = np.exp(log_prob - _logsumexp(log_prob, axis=1))
    return MixtureModel(
        k=k,
        weights=weights,
        means=means,
        covariances=covs,
        bic=bic,
        log_likelihood=ll,
        responsibilities=resp,
    )


def fit_gmm_select(emb: Embedding, k_max: int, seed: int) -> tuple:
    """Fit K = 1..k_max and return (best model by BIC, memberships, all BICs).

    Ties go to the smaller K. Each K gets its own deterministic substream.
    """
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    points = emb.points
    if len(points) < 2:
        raise ValueError("need at least 2 points")
    best = None
    bics = {}
    for k in range(1, min(k_max, len(points)) + 1):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(k,)))
        model = fit_gmm(points, k, rng)
        bics[k] = model.bic
        if best is None or model.bic < best.bic - 1e-12:
            best = model
    return best, best.memberships(), bics


# ---------------------------------------------------------------------------
# Trajectory segmentation


@dataclass
class Segment:
    trajectory: int
    start: int
    end: int  # exclusive sample index
    membership: int  # 1..K* for hidden subgoals, K*+1 for the goal run
    subgoal: int = None  # hidden subgoal id (None for the goal run)

    def slice(self, traj) -> np.ndarray:
        return traj.states[self.start : self.end]


@dataclass
class HiddenSubgoal:
    id: int
    state: AgentState
    cell: tuple
    n_observations: int


def hidden_subgoals_from_mixture(
    model: MixtureModel,
    obs: list,
    quantizer: Quantizer,
) -> list:
    """Map mixture means back to state space.

    The mixture is fitted in embedding coordinates, so the mean is pulled
    back as the responsibility-weighted mean of the member observations'
    representative states (heading via weighted circular mean).
    """
    resp = model.responsibilities
    memberships = model.memberships()
    out = []
    for j in range(model.k):
        w = resp[:, j]
        total = float(w.sum())
        if total <= 0:
            w = np.ones(len(obs))
            total = float(len(obs))
        xs = np.array([o.rep_state.x for o in obs])
        ys = np.array([o.rep_state.y for o in obs])
        vs = np.array([o.rep_state.v for o in obs])
        cos_p = np.array([math.cos(o.rep_state.psi) for o in obs])
        sin_p = np.array([math.sin(o.rep_state.psi) for o in obs])
        psi = math.atan2(float(w @ sin_p), float(w @ cos_p))
        state = AgentState(
            float(w @ xs / total),
            float(w @ ys / total),
            max(float(w @ vs / total), 0.0),
            psi,
        )
        out.append(
            HiddenSubgoal(
                id=j + 1,
                state=state,
                cell=quantizer.cell_of(state.as_array()),
                n_observations=int((memberships == j).sum()),
            )
        )
    return out


def segment_trajectories(
    ds: Dataset,
    sds: list,
    hidden: list,
    quantizer: Quantizer,
) -> list:
    """Cut each trajectory at its first entry into each hidden subgoal's
    position cell (in visit order). Speed and heading at passage vary with
    the start point, so like the subgoal feature they do not gate the cut.
    Membership is the terminal subgoal's id; the final goal-reaching segment
    takes the reserved id K*+1 unless a hidden subgoal cell contains the
    goal. Zero-length pieces are suppressed.
    """
    k_star = len(hidden)
    goal_cell = quantizer.cell_of(ds.env.goal.as_array())[:2]
    goal_membership = None
    for h in hidden:
        if h.cell[:2] == goal_cell:
            goal_membership = h.id
    if goal_membership is None:
        goal_membership = k_star + 1

    segments = []
    for ti, (traj, sym) in enumerate(zip(ds.trajectories, sds)):
        n = len(traj.states)
        cells = [quantizer.cell_of(row)[:2] for row in traj.states]
        cuts = []
        for h in hidden:
            entry = next((i for i, c in enumerate(cells) if c == h.cell[:2]), None)
            if entry is not None:
                cuts.append((entry, h.id))
        cuts.sort()
        # drop cuts that would leave a sub-2-sample piece so segments tile
        kept = []
        prev = 0
        for entry, sid in cuts:
            if entry - prev >= 2 and n - entry >= 2:
                kept.append((entry, sid))
                prev = entry
        prev = 0
        for entry, sid in kept:
            segments.append(
                Segment(trajectory=ti, start=prev, end=entry, membership=sid, subgoal=sid)
            )
            prev = entry
        segments.append(
            Segment(
                trajectory=ti,
                start=prev,
                end=n,
                membership=goal_membership,
                subgoal=goal_membership if goal_membership <= k_star else None,
            )
        )
    return segments


def segments_by_membership(segments: list) -> dict:
    out = {}
    for seg in segments:
        out.setdefault(seg.membership, []).append(seg)
    return out
