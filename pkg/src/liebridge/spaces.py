"""Group and homogeneous-space definitions.

A :class:`GroupSpec` bundles everything the samplers need from a matrix
Lie group: the algebra basis, structure coefficients, a left-invariant
metric, the exponential/logarithm pair, and a single Stratonovich
increment step.  Homogeneous spaces wrap a top group together with the
projection to the base and the fiber geometry over each base point.

Space names accepted by :func:`make_space`:

* ``"so3"`` — rotation group SO(3)
* ``"gl3"`` — matrices with positive determinant, GL+(3)
* ``"abelian:d"`` — additive group R^d (coordinates, exact sampling)
* ``"s2"`` — the sphere S^2 = SO(3) / SO(2)
* ``"spd3"`` — symmetric positive-definite matrices, GL+(3) / SO(3)
"""

from __future__ import annotations

import numpy as np

from . import lie_core as lc
from .lie_core import MetricParam


class GroupSpec:
    """Common interface for the matrix groups and the additive group.

    Elements carry shape ``(..., n, n)`` (matrix groups) or ``(..., d)``
    (additive group).  Algebra coordinates always have shape ``(..., d)``
    and refer to the fixed matrix basis, not the metric-orthonormal one.
    """

    name = None
    dim = None
    is_matrix = True

    def __init__(self, metric=None):
        self.metric = metric if metric is not None else lc.identity_metric(self.dim)
        if self.metric.d != self.dim:
            raise ValueError(
                f"metric dimension {self.metric.d} does not match group dimension {self.dim}"
            )
        self.sigma = self.metric.sqrt_inv
        self.structure = self._matrix_structure()
        self.v0_coords = self._v0_matrix_coords()

    def with_metric(self, A):
        """A copy of this group carrying the metric matrix ``A``."""
        return type(self)(MetricParam(A))

    # -- subclass hooks -----------------------------------------------
    def _matrix_structure(self):
        raise NotImplementedError

    def _v0_matrix_coords(self):
        """Matrix-basis coordinates of V0 = sum_{i,j} C^j_{ij} V_j.

        The structure coefficients are taken in the metric-orthonormal
        basis b_i = hat(sigma e_i); the resulting drift vector is mapped
        back to matrix coordinates through sigma.
        """
        if self.structure is None:
            return np.zeros(self.dim)
        d = self.dim
        sig_inv = self.metric.sqrt
        Ct = np.zeros((d, d, d))
        for i in range(d):
            for j in range(d):
                br_coords = self._bracket_coords(self.sigma[:, i], self.sigma[:, j])
                Ct[:, i, j] = sig_inv @ br_coords
        v0_b = np.einsum("jij->j", Ct)
        return self.sigma @ v0_b

    def _bracket_coords(self, u, v):
        """Matrix-basis coordinates of [hat(u), hat(v)]."""
        return np.einsum("kij,i,j->k", self.structure.C, u, v)

    def algebra(self, coords):
        """Map coordinates to an algebra element."""
        raise NotImplementedError

    def identity(self, shape=()):
        raise NotImplementedError

    def compose(self, x, y):
        raise NotImplementedError

    def inverse(self, x):
        raise NotImplementedError

    def exp(self, coords):
        raise NotImplementedError

    def log(self, g):
        """Principal-branch logarithm in matrix coordinates; raises off-branch."""
        raise NotImplementedError

    def log_masked(self, g):
        """Like :meth:`log` but returns ``(coords, ok)`` instead of raising."""
        raise NotImplementedError

    def step(self, x, coords):
        """One Stratonovich increment: x * exp(hat(coords)) to second order."""
        raise NotImplementedError

    def project(self, x):
        """Re-project onto the group manifold (identity where exact)."""
        return x

    # -- derived operations -------------------------------------------
    def log_to(self, x, y):
        """Coordinates of log(x^{-1} y)."""
        return self.log(self.compose(self.inverse(x), y))

    def log_to_masked(self, x, y):
        return self.log_masked(self.compose(self.inverse(x), y))

    def distance(self, x, y):
        """Riemannian distance |log(x^{-1} y)|_A."""
        return self.metric.norm(self.log_to(x, y))

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.dim})"


class SO3Group(GroupSpec):
    """Rotation group with the standard so(3) basis."""

    name = "so3"
    dim = 3

    def _matrix_structure(self):
        return lc.so3_structure()

    def algebra(self, coords):
        return lc.hat(coords)

    def identity(self, shape=()):
        return np.broadcast_to(np.eye(3), tuple(shape) + (3, 3)).copy()

    def compose(self, x, y):
        return np.asarray(x) @ np.asarray(y)

    def inverse(self, x):
        return np.swapaxes(np.asarray(x), -1, -2)

    def exp(self, coords):
        return lc.so3_exp(coords)

    def log(self, g):
        return lc.so3_log(g)

    def log_masked(self, g):
        return lc.so3_log_masked(g)

    def step(self, x, coords):
        m = lc.hat(coords)
        eye = np.eye(3)
        return np.asarray(x) @ (eye + m + 0.5 * (m @ m))

    def project(self, x):
        return lc.polar_project(x)


class GLGroup(GroupSpec):
    """GL+(3) with the elementary-matrix basis E_ij, row-major order."""

    name = "gl3"
    dim = 9

    def _matrix_structure(self):
        basis = [self._basis_mat(k) for k in range(9)]
        return lc.structure_from_basis(basis, lambda M: np.asarray(M).reshape(-1))

    @staticmethod
    def _basis_mat(k):
        E = np.zeros((3, 3))
        E[k // 3, k % 3] = 1.0
        return E

    def algebra(self, coords):
        coords = np.asarray(coords, dtype=float)
        return coords.reshape(coords.shape[:-1] + (3, 3))

    def coords_of(self, M):
        M = np.asarray(M, dtype=float)
        return M.reshape(M.shape[:-2] + (9,))

    def identity(self, shape=()):
        return np.broadcast_to(np.eye(3), tuple(shape) + (3, 3)).copy()

    def compose(self, x, y):
        return np.asarray(x) @ np.asarray(y)

    def inverse(self, x):
        return np.linalg.inv(np.asarray(x))

    def exp(self, coords):
        return lc.gl_exp(self.algebra(coords))

    def log(self, g):
        return self.coords_of(lc.gl_log(g))

    def log_masked(self, g):
        L, ok = lc.gl_log_masked(g)
        return self.coords_of(L), ok

    def step(self, x, coords):
        m = self.algebra(coords)
        eye = np.eye(3)
        return np.asarray(x) @ (eye + m + 0.5 * (m @ m))


class AbelianGroup(GroupSpec):
    """Additive group R^d; elements are coordinate vectors."""

    is_matrix = False

    def __init__(self, d, metric=None):
        self._d = int(d)
        if self._d < 1:
            raise ValueError("abelian dimension must be positive")
        self.name = f"abelian:{self._d}"
        super().__init__(metric)

    @property
    def dim(self):
        return self._d

    def with_metric(self, A):
        return AbelianGroup(self._d, MetricParam(A))

    def _matrix_structure(self):
        return None

    def _v0_matrix_coords(self):
        return np.zeros(self._d)

    def algebra(self, coords):
        return np.asarray(coords, dtype=float)

    def identity(self, shape=()):
        return np.zeros(tuple(shape) + (self._d,))

    def compose(self, x, y):
        return np.asarray(x) + np.asarray(y)

    def inverse(self, x):
        return -np.asarray(x)

    def exp(self, coords):
        return np.asarray(coords, dtype=float)

    def log(self, g):
        return np.asarray(g, dtype=float)

    def log_masked(self, g):
        g = np.asarray(g, dtype=float)
        return g, np.ones(g.shape[:-1], dtype=bool)

    def step(self, x, coords):
        return np.asarray(x) + np.asarray(coords)


# ---------------------------------------------------------------------------
# Homogeneous spaces
# ---------------------------------------------------------------------------

class HomogeneousSpec:
    """A base space realized as top group modulo a fiber subgroup."""

    name = None
    base_dim = None
    base_ndim = None  # array rank of one base point (1: vector, 2: matrix)

    def __init__(self, metric=None):
        self.group = self._make_group(metric)

    def _make_group(self, metric):
        raise NotImplementedError

    def project(self, g):
        """Map a top-group element to its base point."""
        raise NotImplementedError

    def nearest_fiber_point(self, y, base_point):
        """Top-group point on the fiber over ``base_point`` closest to ``y``."""
        return self.fiber_handle(base_point).nearest(y)

    def fiber_handle(self, base_point):
        """Precomputed nearest-point solver for the fiber over ``base_point``.

        Samplers that query the same fiber at every step use this to
        avoid refactorizing the base point each time.
        """
        raise NotImplementedError

    def base_distance(self, p, q):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}()"


class S2Space(HomogeneousSpec):
    """The unit sphere as SO(3) / SO(2).

    Base points are unit vectors; the projection sends a rotation to its
    third column, so the fiber over ``v`` is {R_v Rz(s)} with R_v any
    rotation taking e3 to v.
    """

    name = "s2"
    base_dim = 2
    base_ndim = 1

    def _make_group(self, metric):
        return SO3Group(metric)

    def project(self, g):
        return np.asarray(g)[..., :, 2]

    def section(self, v):
        """A rotation R_v with R_v e3 = v (geodesic section away from -e3)."""
        v = np.asarray(v, dtype=float)
        e3 = np.array([0.0, 0.0, 1.0])
        c = v[..., 2]
        axis = np.cross(np.broadcast_to(e3, v.shape), v)
        nrm = np.linalg.norm(axis, axis=-1)
        angle = np.arccos(np.clip(c, -1.0, 1.0))
        # near +-e3 the axis is degenerate; use e1 (angle is 0 or pi there)
        deg = nrm < 1e-12
        unit = np.where(
            deg[..., None],
            np.broadcast_to(np.array([1.0, 0.0, 0.0]), v.shape),
            axis / np.where(deg, 1.0, nrm)[..., None],
        )
        return lc.so3_exp(angle[..., None] * unit)

    def fiber_point(self, v, s):
        """The point R_v Rz(s) on the fiber over ``v``."""
        return self.section(v) @ _rot_z(s)

    def fiber_handle(self, base_point):
        return _S2FiberHandle(self.section(base_point))

    def base_distance(self, p, q):
        dot = np.sum(np.asarray(p) * np.asarray(q), axis=-1)
        return np.arccos(np.clip(dot, -1.0, 1.0))


class _S2FiberHandle:
    """Nearest point on {R_v Rz(s)}: the angle maximizing tr((y^T R_v) Rz(s))."""

    def __init__(self, section):
        self.section = section

    def nearest(self, y):
        M = np.swapaxes(np.asarray(y, dtype=float), -1, -2) @ self.section
        a = M[..., 0, 0] + M[..., 1, 1]
        b = M[..., 0, 1] - M[..., 1, 0]
        return self.section @ _rot_z(np.arctan2(b, a))


def _rot_z(s):
    s = np.asarray(s, dtype=float)
    R = np.zeros(s.shape + (3, 3))
    R[..., 0, 0] = np.cos(s)
    R[..., 0, 1] = -np.sin(s)
    R[..., 1, 0] = np.sin(s)
    R[..., 1, 1] = np.cos(s)
    R[..., 2, 2] = 1.0
    return R


class SPDSpace(HomogeneousSpec):
    """Symmetric positive-definite matrices as GL+(3) / SO(3).

    The projection is g -> g g^T; the fiber over V is V^{1/2} SO(3).
    """

    name = "spd3"
    base_dim = 6
    base_ndim = 2

    def _make_group(self, metric):
        return GLGroup(metric)

    def project(self, g):
        g = np.asarray(g)
        return g @ np.swapaxes(g, -1, -2)

    @staticmethod
    def sqrt(V):
        """Symmetric square root of (batches of) SPD matrices."""
        w, Q = np.linalg.eigh(np.asarray(V, dtype=float))
        if np.any(w <= 0):
            raise ValueError("matrix is not positive definite")
        return (Q * np.sqrt(w)[..., None, :]) @ np.swapaxes(Q, -1, -2)

    @staticmethod
    def inv_sqrt(V):
        w, Q = np.linalg.eigh(np.asarray(V, dtype=float))
        if np.any(w <= 0):
            raise ValueError("matrix is not positive definite")
        return (Q / np.sqrt(w)[..., None, :]) @ np.swapaxes(Q, -1, -2)

    def fiber_point(self, V, R):
        return self.sqrt(V) @ np.asarray(R)

    def fiber_handle(self, base_point):
        return _SPDFiberHandle(self.sqrt(base_point), self.inv_sqrt(base_point))

    def base_distance(self, p, q):
        """Affine-invariant distance |log(p^{-1/2} q p^{-1/2})|_F."""
        pi = self.inv_sqrt(p)
        w = np.linalg.eigvalsh(pi @ np.asarray(q) @ pi)
        return np.linalg.norm(np.log(w), axis=-1)


class _SPDFiberHandle:
    """Nearest point V^{1/2} R with R the polar rotation of V^{-1/2} y."""

    def __init__(self, half, inv_half):
        self.half = half
        self.inv_half = inv_half

    def nearest(self, y):
        return self.half @ lc.polar_project(self.inv_half @ np.asarray(y))


def make_space(name, metric=None):
    """Construct a group or homogeneous space from its registry name."""
    name = str(name).strip().lower()
    if name == "so3":
        return SO3Group(metric)
    if name == "gl3":
        return GLGroup(metric)
    if name.startswith("abelian:"):
        try:
            d = int(name.split(":", 1)[1])
        except ValueError:
            raise ValueError(f"bad abelian dimension in space name {name!r}") from None
        return AbelianGroup(d, metric)
    if name == "s2":
        return S2Space(metric)
    if name == "spd3":
        return SPDSpace(metric)
    raise ValueError(
        f"unknown space {name!r}; expected so3, gl3, abelian:d, s2, or spd3"
    )
