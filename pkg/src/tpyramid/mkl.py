"""Shallow path: multiple-kernel max-margin learning over fixed node descriptors.

Node kernels are combined either level-wise (``K = sum_m beta_m k_m``) or
cross-wise (``K = sum_{m,m'} beta_m beta_m' k_{m,m'}``). Training alternates an
SVM dual solve per class (beta fixed) with a simplex solve for beta (duals
fixed), i.e. it looks for ``min_beta max_alpha`` of the summed dual objectives.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.spatial.distance import cdist, pdist
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import ConvergenceWarning, NotFittedError

from .pyramid import build_partition, node_count, node_descriptors
from ._validation import check_positive_int, check_sequences

VARIANTS = ("linear_combo", "cross_combo")
KERNELS = ("linear", "gaussian")


def _check_descriptors(desc):
    desc = np.asarray(desc, dtype=np.float64)
    if desc.ndim != 3:
        raise ValueError(f"descriptors must have shape (n_videos, n_nodes, d), got {desc.shape}")
    if not np.all(np.isfinite(desc)):
        raise ValueError("descriptors contain non-finite values")
    return desc


def median_distance(desc):
    """Median pairwise distance between all node descriptor rows."""
    rows = desc.reshape(-1, desc.shape[-1])
    dist = pdist(rows)
    med = float(np.median(dist)) if dist.size else 1.0
    return med if med > 0 else 1.0


def elementary_kernel(A, B, kernel, sigma=None):
    if kernel == "linear":
        return A @ B.T
    if kernel == "gaussian":
        return np.exp(-cdist(A, B, "sqeuclidean") / (2.0 * sigma ** 2))
    raise ValueError(f"kernel must be one of {KERNELS}, got {kernel!r}")


def kernel_blocks(desc_a, desc_b, kernel="linear", variant="linear_combo", sigma=None):
    """Node Grams ``(m, na, nb)``, or node-pair Grams ``(m, m, na, nb)`` for the cross variant."""
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    if desc_a.shape[1:] != desc_b.shape[1:]:
        raise ValueError(
            f"descriptor shapes disagree: {desc_a.shape[1:]} vs {desc_b.shape[1:]}")
    m = desc_a.shape[1]
    if variant == "linear_combo":
        return np.stack([elementary_kernel(desc_a[:, j], desc_b[:, j], kernel, sigma)
                         for j in range(m)])
    out = np.empty((m, m, desc_a.shape[0], desc_b.shape[0]))
    for j in range(m):
        for k in range(m):
            out[j, k] = elementary_kernel(desc_a[:, j], desc_b[:, k], kernel, sigma)
    return out


@dataclass
class GramStack:
    """Per-node (or per node-pair) Gram matrices over one set of videos."""

    grams: np.ndarray
    kernel: str
    variant: str
    sigma: float = None

    @property
    def n_nodes(self):
        return self.grams.shape[0]

    @property
    def n(self):
        return self.grams.shape[-1]


def compute_grams(descriptors, kernel="linear", variant="linear_combo", sigma=None):
    """Elementary-kernel Grams on fixed descriptors of shape (n_videos, n_nodes, d).

    For the gaussian kernel ``sigma`` defaults to the median pairwise
    distance between descriptor rows.
    """
    desc = _check_descriptors(descriptors)
    if kernel == "gaussian" and sigma is None:
        sigma = median_distance(desc)
    return GramStack(kernel_blocks(desc, desc, kernel, variant, sigma), kernel, variant, sigma)


def combine_linear(gs, beta):
    beta = _check_beta(beta, gs.n_nodes)
    if gs.variant != "linear_combo":
        raise ValueError("combine_linear needs per-node Grams")
    return np.einsum("m,mij->ij", beta, gs.grams)


def combine_cross(gs, beta):
    beta = _check_beta(beta, gs.n_nodes)
    if gs.variant != "cross_combo":
        raise ValueError("combine_cross needs node-pair Grams")
    return np.einsum("a,b,abij->ij", beta, beta, gs.grams)


def combine(gs, beta):
    return combine_linear(gs, beta) if gs.variant == "linear_combo" else combine_cross(gs, beta)


def _check_beta(beta, n):
    beta = np.asarray(beta, dtype=np.float64).ravel()
    if beta.shape[0] != n:
        raise ValueError(f"beta has {beta.shape[0]} entries, expected {n}")
    return beta


@dataclass
class SVMSolution:
    alpha: np.ndarray
    b: float
    violation: float
    n_iter: int
    converged: bool
    objective: float


def solve_alpha(K, y, C=10.0, tol=1e-5, max_iter=100_000, jitter=1e-10):
    """Soft-margin SVM dual by SMO with maximal-violating-pair selection.

    Minimizes ``0.5 a^T Q a - 1^T a`` with ``Q = (y y^T) * K``,
    ``0 <= a <= C`` and ``y^T a = 0``. ``jitter * trace(K) / n`` is added to
    the diagonal first. ``objective`` is reported with the maximization sign
    (``1^T a - 0.5 a^T Q a``).
    """
    K = np.asarray(K, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    n = len(y)
    if K.shape != (n, n):
        raise ValueError(f"Gram has shape {K.shape}, expected ({n}, {n})")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be +1 / -1")
    if np.all(y == y[0]):
        raise ValueError("both classes must be present: the equality constraint "
                         "forces alpha = 0 when all labels agree")
    if C <= 0:
        raise ValueError("C must be positive")
    K = K + (jitter * np.trace(K) / n) * np.eye(n)
    alpha = np.zeros(n)
    G = -np.ones(n)
    pos = y > 0
    n_iter = 0
    converged = False
    while True:
        up = np.where(pos, alpha < C, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < C)
        score = -y * G
        i = np.flatnonzero(up)[np.argmax(score[up])]
        j = np.flatnonzero(low)[np.argmin(score[low])]
        gap = score[i] - score[j]
        if gap < tol:
            converged = True
            break
        if n_iter >= max_iter:
            break
        curv = K[i, i] + K[j, j] - 2.0 * K[i, j]
        t = gap / max(curv, 1e-12)
        t = min(t, C - alpha[i] if pos[i] else alpha[i], alpha[j] if pos[j] else C - alpha[j])
        alpha[i] += y[i] * t
        alpha[j] -= y[j] * t
        G += t * y * (K[:, i] - K[:, j])
        n_iter += 1
    score = -y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        b = float(score[free].mean())
    else:
        b = 0.5 * (score[i] + score[j])
    if not converged:
        warnings.warn(f"SMO stopped after {max_iter} iterations with KKT violation {gap:.3g}",
                      ConvergenceWarning)
    objective = float(alpha.sum() - 0.5 * alpha @ ((G + 1.0)))
    return SVMSolution(alpha, b, float(max(gap, 0.0)), n_iter, converged, objective)


def one_vs_rest_labels(y, classes):
    y = np.asarray(y)
    return np.where(y[None, :] == np.asarray(classes)[:, None], 1.0, -1.0)


def dual_objective(gs, beta, alphas, Y):
    """Summed SVM dual values ``sum_c [1^T a_c - 0.5 a_c^T (y_c y_c^T * K_beta) a_c]``."""
    K = combine(gs, beta)
    U = alphas * Y
    return float(alphas.sum() - 0.5 * np.einsum("ci,ij,cj->", U, K, U))


def beta_coefficients(gs, alphas, Y):
    """``a[m] = sum_c u_c^T G_m u_c`` (linear) or ``A[m, m'] = sum_c u_c^T G_mm' u_c`` (cross)."""
    U = alphas * Y
    if gs.variant == "linear_combo":
        return np.einsum("ci,mij,cj->m", U, gs.grams, U)
    return np.einsum("ci,abij,cj->ab", U, gs.grams, U)


def project_simplex(v):
    """Euclidean projection onto the probability simplex (sort-based)."""
    v = np.asarray(v, dtype=np.float64)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, len(v) + 1)
    rho = np.flatnonzero(u - css / ind > 0)[-1]
    return np.maximum(v - css[rho] / (rho + 1), 0.0)


def simplex_lp(c):
    """Vertex of the simplex minimizing ``c @ beta``."""
    beta = np.zeros(len(c))
    beta[int(np.argmin(c))] = 1.0
    return beta


def _entropy(beta):
    b = beta[beta > 0]
    return float(np.sum(b * np.log(b)))


def minimize_concave_quadratic(A, damping=0.0, tol=1e-10, max_iter=10_000):
    """Minimize ``-0.5 b^T A b + damping * sum b ln b`` over the simplex, A PSD.

    Without damping the objective is concave, so its minimum sits on a
    vertex; diminishing-step projected gradient from the barycenter is run and
    compared against every vertex. With damping, exponentiated gradient
    steps are used instead, keeping iterates strictly inside the simplex.
    """
    m = A.shape[0]

    def f(b):
        val = -0.5 * b @ A @ b
        return val + damping * _entropy(b) if damping else val

    beta = np.full(m, 1.0 / m)
    fval = f(beta)
    scale = max(np.abs(A).max(), 1e-12)
    for it in range(max_iter):
        step = 1.0 / (scale * np.sqrt(it + 1.0))
        grad = -A @ beta
        if damping:
            grad = grad + damping * (np.log(beta) + 1.0)
            cand = beta * np.exp(-step * (grad - grad.min()))
            cand /= cand.sum()
        else:
            cand = project_simplex(beta - step * grad)
        fc = f(cand)
        if fc > fval:
            continue
        improvement = fval - fc
        beta, fval = cand, fc
        if improvement < tol:
            break
    if not damping:
        k = int(np.argmax(np.diag(A)))
        if -0.5 * A[k, k] < fval:
            beta = np.zeros(m)
            beta[k] = 1.0
    return beta


def beta_cut(gs, alphas, Y):
    """Objective at fixed duals as a function of beta: ``(constant, coefficients)``.

    ``J(beta) = constant - 0.5 * coefficients @ beta`` for the level-wise
    combination and ``constant - 0.5 * beta @ coefficients @ beta`` for the
    cross-wise one.
    """
    alphas = np.asarray(alphas)
    return float(alphas.sum()), beta_coefficients(gs, alphas, np.asarray(Y))


def cutting_plane_lp(cuts):
    """Minimize ``max_s (const_s - 0.5 * a_s @ beta)`` over the simplex by linear programming."""
    const = np.array([c for c, _ in cuts])
    A = np.stack([a for _, a in cuts])
    m = A.shape[1]
    # variables: beta (m), theta
    res = linprog(
        c=np.r_[np.zeros(m), 1.0],
        A_ub=np.hstack([-0.5 * A, -np.ones((len(cuts), 1))]),
        b_ub=-const,
        A_eq=np.r_[np.ones(m), 0.0][None, :],
        b_eq=[1.0],
        bounds=[(0, None)] * m + [(None, None)],
        method="highs",
    )
    if res.status != 0:
        raise RuntimeError(f"beta linear program failed: {res.message}")
    return project_simplex(res.x[:m]), float(res.x[m])


def solve_beta(gs, alphas, Y, damping=0.0, cuts=None):
    """Simplex weights minimizing the summed dual objective with the duals fixed.

    Level-wise combination: the objective is linear in beta, so this is a
    linear program. ``cuts`` (from :func:`beta_cut` on earlier dual solutions)
    are kept as extra constraints, turning the alternation into a
    cutting-plane scheme that can settle on interior optima; without them the
    answer is the vertex of the largest node coefficient. With entropic
    damping the single-cut problem has the closed form
    ``softmax(a / (2 * damping))``.

    Cross combination: concave quadratic, see
    :func:`minimize_concave_quadratic`.
    """
    if gs.n_nodes == 1:
        return np.ones(1)
    const, coef = beta_cut(gs, alphas, Y)
    if gs.variant == "linear_combo":
        c = -0.5 * coef
        if damping:
            z = -c / damping
            z -= z.max()
            e = np.exp(z)
            return e / e.sum()
        if not cuts:
            return simplex_lp(c)
        return cutting_plane_lp(list(cuts) + [(const, coef)])[0]
    return minimize_concave_quadratic(0.5 * (coef + coef.T), damping)


@dataclass
class KernelModel:
    beta: np.ndarray
    alphas: np.ndarray
    b: np.ndarray
    Y: np.ndarray
    classes: np.ndarray
    descriptors: np.ndarray
    kernel: str
    variant: str
    sigma: float
    C: float
    trace: list = field(default_factory=list)
    converged: bool = False

    def decision_function(self, descriptors):
        desc = _check_descriptors(descriptors)
        blocks = kernel_blocks(desc, self.descriptors, self.kernel, self.variant, self.sigma)
        gs = GramStack(blocks, self.kernel, self.variant, self.sigma)
        K = combine(gs, self.beta)
        return K @ (self.alphas * self.Y).T + self.b

    def predict(self, descriptors):
        return self.classes[np.argmax(self.decision_function(descriptors), axis=1)]

    def to_dict(self):
        sv = np.flatnonzero((self.alphas > 0).any(axis=0))
        remap = {int(i): k for k, i in enumerate(sv)}
        return {
            "kernel": {"kind": self.kernel, "sigma": self.sigma, "variant": self.variant,
                       "C": self.C},
            "beta": self.beta.tolist(),
            "classes": self.classes.tolist(),
            "intercepts": self.b.tolist(),
            "alphas": [[[remap[int(i)], float(a[i]), float(yc[i])] for i in np.flatnonzero(a > 0)]
                       for a, yc in zip(self.alphas, self.Y)],
            "support_descriptors": self.descriptors[sv].tolist(),
            "trace": self.trace,
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, d):
        desc = np.asarray(d["support_descriptors"], dtype=np.float64)
        n = len(desc)
        classes = np.asarray(d["classes"])
        alphas = np.zeros((len(classes), n))
        Y = np.ones((len(classes), n))
        for c, entries in enumerate(d["alphas"]):
            for i, a, yc in entries:
                alphas[c, i] = a
                Y[c, i] = yc
        k = d["kernel"]
        return cls(np.asarray(d["beta"]), alphas, np.asarray(d["intercepts"]), Y, classes,
                   desc, k["kind"], k["variant"], k["sigma"], k["C"], d.get("trace", []),
                   d.get("converged", False))


def _solve_all(gs, beta, Y, C, svm_tol, max_svm_iter):
    K = combine(gs, beta)
    sols = [solve_alpha(K, yc, C, svm_tol, max_svm_iter) for yc in Y]
    return np.stack([s.alpha for s in sols]), np.array([s.b for s in sols])


def em_train(descriptors, y, variant="linear_combo", kernel="linear", C=10.0, max_iters=50,
             tol=1e-6, sigma=None, damping=0.0, svm_tol=1e-5, max_svm_iter=100_000):
    """Alternate per-class SVM duals and simplex weights, starting from uniform beta.

    For the level-wise combination every dual solution is kept as a cut of
    the beta linear program. Training stops once beta and the duals both move
    by less than ``tol`` (max abs change), once the cutting-plane lower bound
    is within ``tol`` (relative) of the objective, or after ``max_iters``
    rounds. Each round appends two trace entries: the objective after the
    beta step (duals fixed) and after the dual step. The returned model is
    the dual step with the smallest objective, i.e. the best exact
    ``max_alpha`` value seen.
    """
    desc = _check_descriptors(descriptors)
    y = np.asarray(y)
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValueError("need at least two classes")
    Y = one_vs_rest_labels(y, classes)
    gs = compute_grams(desc, kernel, variant, sigma)
    m = gs.n_nodes
    beta = np.full(m, 1.0 / m)
    alphas, b = _solve_all(gs, beta, Y, C, svm_tol, max_svm_iter)
    obj = dual_objective(gs, beta, alphas, Y)
    trace = [{"iter": 0, "step": "alpha", "objective": obj, "beta": beta.tolist()}]
    best = (obj, beta, alphas, b)
    use_cuts = variant == "linear_combo" and not damping and m > 1
    cuts = []
    converged = m == 1
    for it in range(1, max_iters + 1):
        if converged:
            break
        lower = None
        if use_cuts:
            cuts.append(beta_cut(gs, alphas, Y))
            new_beta, lower = cutting_plane_lp(cuts)
        else:
            new_beta = solve_beta(gs, alphas, Y, damping)
        obj_beta = dual_objective(gs, new_beta, alphas, Y)
        if damping:
            obj_beta += damping * _entropy(new_beta)
        trace.append({"iter": it, "step": "beta", "objective": obj_beta,
                      "beta": new_beta.tolist()})
        new_alphas, new_b = _solve_all(gs, new_beta, Y, C, svm_tol, max_svm_iter)
        obj = dual_objective(gs, new_beta, new_alphas, Y)
        trace.append({"iter": it, "step": "alpha", "objective": obj, "beta": new_beta.tolist()})
        d_beta = np.abs(new_beta - beta).max()
        d_alpha = np.abs(new_alphas - alphas).max()
        beta, alphas, b = new_beta, new_alphas, new_b
        if obj < best[0]:
            best = (obj, beta, alphas, b)
        if d_beta < tol and d_alpha < tol:
            converged = True
        elif lower is not None and best[0] - lower <= tol * max(1.0, abs(best[0])):
            converged = True
    _, beta, alphas, b = best
    return KernelModel(beta, alphas, b, Y, classes, desc, kernel, variant, gs.sigma, C,
                       trace, converged)


def predict(model, descriptors):
    """Per-class scores ``g_c`` and the argmax labels."""
    scores = model.decision_function(descriptors)
    return scores, model.classes[np.argmax(scores, axis=1)]


def sequence_descriptors(X, depth):
    """Stack node means of variable-length sequences into (n, 2**depth - 1, d)."""
    seqs = check_sequences(X)
    return np.stack([node_descriptors(s, build_partition(len(s), depth)) for s in seqs])


class MultipleKernelPyramidClassifier(ClassifierMixin, BaseEstimator):
    """One-vs-rest max-margin classifier over learned pyramid node kernels.

    Parameters
    ----------
    depth : int, default=3
    variant : {"linear_combo", "cross_combo"}, default="linear_combo"
    kernel : {"linear", "gaussian"}, default="linear"
    sigma : float, default=None
        Gaussian bandwidth; median pairwise descriptor distance when None.
    C : float, default=10.0
        Box bound on the duals.
    max_iter : int, default=50
        Maximum number of alternation rounds.
    tol : float, default=1e-6
    svm_tol : float, default=1e-5
        KKT tolerance of the inner SMO solver.
    damping : float, default=0.0
        Entropic damping of the beta step; 0 disables it.
    input : {"frames", "descriptors"}, default="frames"
        Whether ``X`` holds raw (T, d) sequences or precomputed
        (n_nodes, d) descriptor stacks.
    """

    def __init__(self, depth=3, variant="linear_combo", kernel="linear", sigma=None, C=10.0,
                 max_iter=50, tol=1e-6, svm_tol=1e-5, damping=0.0, input="frames"):
        self.depth = depth
        self.variant = variant
        self.kernel = kernel
        self.sigma = sigma
        self.C = C
        self.max_iter = max_iter
        self.tol = tol
        self.svm_tol = svm_tol
        self.damping = damping
        self.input = input

    def _descriptors(self, X):
        check_positive_int(self.depth, "depth")
        if self.input == "frames":
            return sequence_descriptors(X, self.depth)
        if self.input == "descriptors":
            desc = _check_descriptors(X)
            if desc.shape[1] != node_count(self.depth):
                raise ValueError(f"descriptors have {desc.shape[1]} nodes, depth "
                                 f"{self.depth} needs {node_count(self.depth)}")
            return desc
        raise ValueError(f"input must be 'frames' or 'descriptors', got {self.input!r}")

    def fit(self, X, y):
        desc = self._descriptors(X)
        if len(desc) != len(y):
            raise ValueError(f"X has {len(desc)} samples, y has {len(y)}")
        self.model_ = em_train(desc, y, self.variant, self.kernel, self.C, self.max_iter,
                               self.tol, self.sigma, self.damping, self.svm_tol)
        self.classes_ = self.model_.classes
        self.beta_ = self.model_.beta
        self.dual_coef_ = self.model_.alphas * self.model_.Y
        self.intercept_ = self.model_.b
        self.n_features_in_ = desc.shape[2]
        return self

    def decision_function(self, X):
        if not hasattr(self, "model_"):
            raise NotFittedError("MultipleKernelPyramidClassifier is not fitted yet")
        return self.model_.decision_function(self._descriptors(X))

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]
