"""
S3 graph depth correction - anchor a kNN reconstruction graph of 3-D points to depth hints.

Pipeline:
    build_problem  -> nodes ordered hints, expanded, free
    build_graph    -> k nearest neighbours + sum-to-one reconstruction weights
    correct / correct_with_confidence -> sparse least squares on the free depths
    scatter_solution -> back to a DenseField
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy import sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from s3_core import (
    CameraIntrinsics, DenseField, DomainError, NumericalError, PointCloud3D, RasterFormatError,
    Representation, RepresentationError, SingularSystemError, SparseSignalMap,
)

logger = logging.getLogger(__name__)

DEFAULT_REG = 1e-3
CG_TOL = 1e-10
DENSE_LIMIT = 60
# confidences this close to 1 pin the node instead of scaling its column to ~0
SATURATED = 1.0 - 1e-9
ROLES = ("hint", "exp", "free")


# ========================================
# 1. Graph and problem types
# ========================================

@dataclass(frozen=True, eq=False)
class NeighborGraph:
    """Row i reconstructs node i from ``neighbors[i]`` with ``weights[i]`` (rows sum to 1)."""
    neighbors: np.ndarray
    weights: np.ndarray

    @property
    def node_count(self) -> int:
        return self.neighbors.shape[0]

    @property
    def k(self) -> int:
        return self.neighbors.shape[1]

    def matrix(self) -> sp.csr_matrix:
        n, k = self.neighbors.shape
        rows = np.repeat(np.arange(n), k)
        return sp.csr_matrix((self.weights.ravel(), (rows, self.neighbors.ravel())), shape=(n, n))

    def residual(self, z: np.ndarray) -> np.ndarray:
        """Z - WZ."""
        z = np.asarray(z, dtype=np.float64)
        return z - (self.weights * z[self.neighbors]).sum(axis=1)

    def reordered(self, order: np.ndarray) -> "NeighborGraph":
        """The same graph with node a of the result being node ``order[a]`` of this one."""
        order = np.asarray(order, dtype=np.int64)
        if sorted(order.tolist()) != list(range(self.node_count)):
            raise DomainError("order must be a permutation of the graph nodes")
        inverse = np.empty_like(order)
        inverse[order] = np.arange(len(order))
        return NeighborGraph(inverse[self.neighbors[order]], self.weights[order])


@dataclass(frozen=True, eq=False)
class GdcProblem:
    """Node depths ordered hints (n), expanded (n_e), free (m).

    ``xyz`` holds the camera-frame position of every node in the same order;
    its z column is the input depth vector Z.
    """
    xyz: np.ndarray
    hint_values: np.ndarray
    expanded_values: np.ndarray
    confidences: np.ndarray

    def __post_init__(self):
        xyz = np.array(self.xyz, dtype=np.float64).reshape(-1, 3)
        g = np.array(self.hint_values, dtype=np.float64).reshape(-1)
        ge = np.array(self.expanded_values, dtype=np.float64).reshape(-1)
        c = np.array(self.confidences, dtype=np.float64).reshape(-1)
        if len(ge) != len(c):
            raise DomainError("expanded values and confidences must align")
        if len(g) + len(ge) > len(xyz):
            raise DomainError("more hints and expanded nodes than nodes")
        if c.size and (c.min() < 0.0 or c.max() > 1.0):
            raise DomainError("confidences must lie in [0, 1]")
        if not (np.all(np.isfinite(xyz)) and np.all(np.isfinite(g)) and np.all(np.isfinite(ge))):
            raise DomainError("problem values must be finite")
        for name, arr in (("xyz", xyz), ("hint_values", g), ("expanded_values", ge), ("confidences", c)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def node_count(self) -> int:
        return len(self.xyz)

    @property
    def hint_count(self) -> int:
        return len(self.hint_values)

    @property
    def expanded_count(self) -> int:
        return len(self.expanded_values)

    @property
    def free_count(self) -> int:
        return self.node_count - self.hint_count - self.expanded_count

    @property
    def depth(self) -> np.ndarray:
        return self.xyz[:, 2]

    def roles(self) -> List[str]:
        n, ne = self.hint_count, self.expanded_count
        return ["hint"] * n + ["exp"] * ne + ["free"] * self.free_count

    def with_depth(self, depth: np.ndarray) -> "GdcProblem":
        """Same nodes with a new Z; x and y are rescaled along each node's ray."""
        depth = np.asarray(depth, dtype=np.float64)
        scale = depth / self.depth
        xyz = self.xyz * scale[:, None]
        xyz[:, 2] = depth
        return GdcProblem(xyz, self.hint_values, self.expanded_values, self.confidences)

    def plain_order(self) -> np.ndarray:
        """Node order of ``without_expansion()``: hints, free, then the former expanded nodes."""
        n, ne = self.hint_count, self.expanded_count
        return np.r_[np.arange(n), np.arange(n + ne, self.node_count), np.arange(n, n + ne)]

    def without_expansion(self) -> "GdcProblem":
        """Drop the expanded role: those nodes become free."""
        return GdcProblem(self.xyz[self.plain_order()], self.hint_values, [], [])


# ========================================
# 2. Graph construction
# ========================================

def _nearest(xyz: np.ndarray, k: int) -> np.ndarray:
    """k nearest neighbours of every point, excluding itself; ties go to the lower index."""
    tree = cKDTree(xyz)
    dist, _ = tree.query(xyz, k=k + 1)
    radius = dist[:, -1]
    out = np.empty((len(xyz), k), dtype=np.int64)
    for i, ball in enumerate(tree.query_ball_point(xyz, radius * (1.0 + 1e-12) + 1e-300)):
        cand = np.array([j for j in ball if j != i], dtype=np.int64)
        d = np.linalg.norm(xyz[cand] - xyz[i], axis=1)
        order = np.lexsort((cand, d))
        out[i] = cand[order[:k]]
    return out


def build_graph(points: Union[PointCloud3D, np.ndarray], k: int, reg: float = DEFAULT_REG) -> NeighborGraph:
    """kNN graph with locally-linear reconstruction weights on the depth values.

    Row i solves min (Z_i - sum_j w_j Z_j)^2 + eps_i * |w|^2 subject to sum(w) = 1,
    with eps_i = reg * mean squared 3-D distance to the neighbours.
    """
    xyz = points.xyz if isinstance(points, PointCloud3D) else np.asarray(points, dtype=np.float64)
    n = len(xyz)
    if k < 1 or k >= n:
        raise DomainError(f"need 1 <= k < N, got k={k} with N={n}")
    if reg < 0:
        raise DomainError("regularization must be >= 0")
    neighbors = _nearest(xyz, k)
    z = xyz[:, 2]
    diff = z[neighbors] - z[:, None]
    gram = diff[:, :, None] * diff[:, None, :]
    sq_dist = ((xyz[neighbors] - xyz[:, None, :]) ** 2).sum(axis=2).mean(axis=1)
    eps = np.where(sq_dist > 0.0, reg * sq_dist, reg)
    gram = gram + eps[:, None, None] * np.eye(k)[None]
    if reg == 0.0:
        cond = np.linalg.cond(gram) if k > 1 else np.where(gram[:, 0, 0] == 0.0, np.inf, 1.0)
        bad = ~np.isfinite(cond) | (cond > 1.0 / np.finfo(np.float64).eps)
        if bad.any():
            raise DomainError(f"degenerate neighborhood at node {int(np.argmax(bad))} with zero regularization")
    w = np.linalg.solve(gram, np.ones((n, k, 1)))[:, :, 0]
    w /= w.sum(axis=1, keepdims=True)
    logger.debug("built %d-NN graph over %d nodes", k, n)
    return NeighborGraph(neighbors, w)


# ========================================
# 3. Least-squares solvers
# ========================================

def conjugate_gradient_ls(b: sp.spmatrix, t: np.ndarray, x0: np.ndarray,
                          tol: float = CG_TOL, max_iter: Optional[int] = None) -> Tuple[np.ndarray, int]:
    """Conjugate gradient on the normal equations B^T B x = B^T t.

    Stops when |B^T (t - B x)| <= tol * max(1, |B^T t|); raises after ``max_iter``
    (default 10 * unknowns).
    """
    unknowns = b.shape[1]
    cap = max_iter if max_iter is not None else max(10, 10 * unknowns)
    bt = b.T.tocsr()
    stop = tol * max(1.0, float(np.linalg.norm(bt @ t)))
    x = np.array(x0, dtype=np.float64)
    r = t - b @ x
    s = bt @ r
    p = s.copy()
    gamma = float(s @ s)
    for it in range(cap + 1):
        if np.sqrt(gamma) <= stop:
            return x, it
        if it == cap:
            break
        q = b @ p
        qq = float(q @ q)
        if qq == 0.0:
            raise SingularSystemError("normal equations are singular along the search direction", iteration=it)
        alpha = gamma / qq
        x += alpha * p
        r -= alpha * q
        s = bt @ r
        gamma_next = float(s @ s)
        p = s + (gamma_next / gamma) * p
        gamma = gamma_next
    raise NumericalError(f"conjugate gradient did not converge in {cap} iterations", iteration=cap)


def _solve(b: sp.csr_matrix, t: np.ndarray, x0: np.ndarray, method: str) -> np.ndarray:
    if method == "auto":
        method = "dense" if b.shape[1] <= DENSE_LIMIT else "cg"
    if method == "dense":
        dense = b.toarray()
        x, _, rank, _ = np.linalg.lstsq(dense, t, rcond=None)
        if rank < dense.shape[1]:
            raise SingularSystemError(f"least-squares system has rank {rank} < {dense.shape[1]} unknowns")
        return x
    if method == "cg":
        x, iters = conjugate_gradient_ls(b, t, x0)
        logger.debug("conjugate gradient converged in %d iterations", iters)
        return x
    raise DomainError(f"unknown solver method {method!r}")


# ========================================
# 4. Correction
# ========================================

def objective(graph: NeighborGraph, y: np.ndarray) -> float:
    """|Y - WY|^2."""
    r = graph.residual(y)
    return float(r @ r)


def _unanchored(graph: NeighborGraph, anchored: np.ndarray) -> List[np.ndarray]:
    _, labels = connected_components(graph.matrix(), directed=True, connection="weak")
    hit = np.zeros(labels.max() + 1, bool)
    hit[labels[anchored]] = True
    return [np.nonzero(labels == lab)[0] for lab in np.nonzero(~hit)[0]]


def correct_with_confidence(problem: GdcProblem, graph: NeighborGraph, *, prior_weight: float = 0.0,
                            unanchored: str = "raise", method: str = "auto") -> np.ndarray:
    """Minimize |Y - WY|^2 with Y = C'[G; G_exp; 0] + (I - C')Z'.

    C' is 1 on hints, C on expanded nodes and 0 on free nodes; the returned
    vector is Y, which equals G on hints and Z' on free nodes. ``prior_weight``
    (mu) adds mu * C * (1 - C) * (Z'_e - G_exp)^2 per expanded node. With
    mu = 0 (the default) an expanded node with C < 1 leaves Y_e free, so the
    expanded nodes only act where C = 1.
    """
    n, ne, total = problem.hint_count, problem.expanded_count, problem.node_count
    if graph.node_count != total:
        raise DomainError(f"graph has {graph.node_count} nodes, problem has {total}")
    if n == 0:
        raise DomainError("correction needs at least one hint")
    if unanchored not in ("raise", "keep"):
        raise DomainError(f"unanchored must be 'raise' or 'keep', got {unanchored!r}")
    if prior_weight < 0:
        raise DomainError("prior weight must be >= 0")

    z = problem.depth
    blend = np.zeros(total)
    blend[:n] = 1.0
    blend[n:n + ne] = problem.confidences
    target = np.zeros(total)
    target[:n] = problem.hint_values
    target[n:n + ne] = problem.expanded_values

    anchored = blend >= SATURATED
    if prior_weight > 0.0:
        anchored |= blend > 0.0
    held = np.zeros(total, bool)
    lonely = _unanchored(graph, np.nonzero(anchored)[0])
    if lonely:
        sizes = sorted((len(c) for c in lonely), reverse=True)
        if unanchored == "raise":
            raise SingularSystemError(
                f"{len(lonely)} graph component(s) carry no hint (sizes {sizes[:5]}); "
                "their depths lie in the null space of the reconstruction system")
        held[np.concatenate(lonely)] = True
        logger.info("keeping %d unanchored nodes at their input depth", int(held.sum()))

    variable = (blend < SATURATED) & ~held
    # Y = fixed + scale * Z' on the variable nodes
    fixed = blend * target + np.where(variable, 0.0, (1.0 - blend) * z)
    scale = 1.0 - blend
    idx = np.nonzero(variable)[0]

    a = (sp.identity(total, format="csr") - graph.matrix()).tocsc()
    blocks = [a[:, idx] @ sp.diags(scale[idx])]
    rhs = [-(a @ fixed)]
    if prior_weight > 0.0 and ne:
        exp_nodes = np.arange(n, n + ne)
        exp_nodes = exp_nodes[variable[exp_nodes]]
        root = np.sqrt(prior_weight * blend[exp_nodes] * (1.0 - blend[exp_nodes]))
        col = np.searchsorted(idx, exp_nodes)
        blocks.append(sp.csr_matrix((root, (np.arange(len(exp_nodes)), col)), shape=(len(exp_nodes), len(idx))))
        rhs.append(root * target[exp_nodes])
    system = sp.vstack(blocks).tocsr()
    t = np.concatenate(rhs)

    y = fixed.copy()
    if len(idx):
        solution = _solve(system, t, z[idx], method)
        y[idx] += scale[idx] * solution
    y[:n] = problem.hint_values
    logger.info("corrected %d of %d nodes (objective %.3g)", len(idx), total, objective(graph, y))
    return y


def correct(problem: GdcProblem, graph: NeighborGraph, *, unanchored: str = "raise",
            method: str = "auto") -> np.ndarray:
    """Minimize |Z' - WZ'|^2 with Z'_{1:n} = G."""
    if problem.expanded_count:
        raise DomainError("correct() takes a problem without expanded nodes")
    return correct_with_confidence(problem, graph, unanchored=unanchored, method=method)


def correct_hints_only(problem: GdcProblem, graph: NeighborGraph, *, unanchored: str = "raise",
                       method: str = "auto") -> np.ndarray:
    """Plain correction of ``problem`` with its expanded nodes treated as free, on the same graph.

    The result is in ``problem``'s node order so it pairs node for node with
    ``correct_with_confidence`` on the same problem.
    """
    order = problem.plain_order()
    z = correct(problem.without_expansion(), graph.reordered(order), unanchored=unanchored, method=method)
    out = np.empty_like(z)
    out[order] = z
    return out


# ========================================
# 5. Problem assembly and files
# ========================================

def build_problem(prediction: DenseField, intrinsics: CameraIntrinsics, hints: SparseSignalMap,
                  expanded: Optional[DenseField] = None,
                  confidence: Optional[DenseField] = None) -> Tuple[GdcProblem, PointCloud3D]:
    """Nodes are valid prediction pixels plus hint pixels, ordered hints, expanded, free."""
    if prediction.representation is not Representation.DEPTH or hints.representation is not Representation.DEPTH:
        raise RepresentationError("graph correction works on depth")
    if prediction.dims != hints.dims:
        raise DomainError("prediction and hint dims differ")
    height, width = prediction.dims
    z = prediction.values.copy()
    z[hints.rows, hints.cols] = np.where(prediction.valid[hints.rows, hints.cols],
                                         z[hints.rows, hints.cols], hints.values)
    node = prediction.valid.copy()
    node[hints.rows, hints.cols] = True
    is_hint = np.zeros(prediction.dims, bool)
    is_hint[hints.rows, hints.cols] = True

    is_exp = np.zeros(prediction.dims, bool)
    if expanded is not None:
        if confidence is None:
            raise DomainError("expanded depth needs its confidence")
        if expanded.representation is not Representation.DEPTH:
            raise RepresentationError("expanded guidance must be depth")
        is_exp = expanded.valid & (confidence.values > 0.0) & node & ~is_hint

    er, ec = np.nonzero(is_exp)
    fr, fc = np.nonzero(node & ~is_hint & ~is_exp)
    rows = np.concatenate([hints.rows, er, fr])
    cols = np.concatenate([hints.cols, ec, fc])
    depth = z[rows, cols]
    x = (cols - intrinsics.cu) * depth / intrinsics.focal
    y = (rows - intrinsics.cv) * depth / intrinsics.focal
    cloud = PointCloud3D(np.stack([x, y, depth], axis=1), rows, cols, height, width)
    problem = GdcProblem(
        cloud.xyz, hints.values,
        expanded.values[er, ec] if expanded is not None else [],
        confidence.values[er, ec] if expanded is not None else [],
    )
    logger.debug("problem: %d hints, %d expanded, %d free", problem.hint_count,
                 problem.expanded_count, problem.free_count)
    return problem, cloud


def scatter_solution(cloud: PointCloud3D, values: np.ndarray, like: DenseField) -> DenseField:
    out = like.values.copy()
    valid = like.valid.copy()
    out[cloud.rows, cloud.cols] = values
    valid[cloud.rows, cloud.cols] = True
    return DenseField(out, valid, like.representation)


def write_problem(problem: GdcProblem, path: Union[str, Path]) -> None:
    n, ne = problem.hint_count, problem.expanded_count
    lines = ["idx,x,y,z,role,value,confidence"]
    for i, (role, (x, y, z)) in enumerate(zip(problem.roles(), problem.xyz)):
        if role == "hint":
            value, conf = problem.hint_values[i], 1.0
        elif role == "exp":
            value, conf = problem.expanded_values[i - n], problem.confidences[i - n]
        else:
            value, conf = z, 0.0
        lines.append(f"{i},{x!r},{y!r},{z!r},{role},{float(value)!r},{float(conf)!r}")
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as e:
        raise RasterFormatError("unwritable path", 0, f"{path}: {e}") from e


def read_problem(path: Union[str, Path]) -> GdcProblem:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise RasterFormatError("malformed header", 0, f"cannot read {path}: {e}") from e
    lines = raw.decode("utf-8").splitlines(keepends=True)
    if not lines or lines[0].strip() != "idx,x,y,z,role,value,confidence":
        raise RasterFormatError("malformed header", 0, "expected idx,x,y,z,role,value,confidence")
    offset = len(lines[0].encode("utf-8"))
    xyz, roles, values, confs = [], [], [], []
    for line in lines[1:]:
        record = line.strip()
        if record:
            parts = record.split(",")
            try:
                idx = int(parts[0])
                x, y, z = (float(v) for v in parts[1:4])
                role = parts[4]
                value, conf = float(parts[5]), float(parts[6])
            except (ValueError, IndexError):
                raise RasterFormatError("malformed record", offset, repr(record))
            if idx != len(xyz) or role not in ROLES:
                raise RasterFormatError("malformed record", offset, repr(record))
            if roles and ROLES.index(role) < ROLES.index(roles[-1]):
                raise RasterFormatError("malformed record", offset, "nodes must be ordered hint, exp, free")
            xyz.append((x, y, z))
            roles.append(role)
            values.append(value)
            confs.append(conf)
        offset += len(line.encode("utf-8"))
    roles_arr = np.array(roles)
    values_arr = np.array(values)
    return GdcProblem(np.array(xyz), values_arr[roles_arr == "hint"], values_arr[roles_arr == "exp"],
                      np.array(confs)[roles_arr == "exp"])
