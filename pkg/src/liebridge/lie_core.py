"""Matrix Lie-algebra primitives.

Conventions used throughout the package:

* Group elements are plain numpy arrays.  Matrix groups (SO(3), GL+(3))
  use shape ``(..., n, n)``; the additive test group uses coordinate
  vectors of shape ``(..., d)``.  All operations broadcast over leading
  axes so batches of paths can be processed at once.
* Algebra elements are coordinate vectors of shape ``(..., d)`` in a
  fixed matrix basis (``hat`` maps coordinates to algebra matrices).
* A left-invariant metric is a symmetric positive-definite matrix ``A``
  on the algebra; the driving noise has covariance ``A^{-1}`` per unit
  time in algebra coordinates.
"""

from __future__ import annotations

import numpy as np

SO3_BRANCH_MARGIN = 1e-6


class BranchError(ValueError):
    """A group logarithm was requested outside its principal branch."""


class NumericalError(RuntimeError):
    """An iterative matrix routine failed to converge."""


# ---------------------------------------------------------------------------
# so(3): hat/vee, Rodrigues exponential, principal logarithm
# ---------------------------------------------------------------------------

def hat(a):
    """Map so(3) coordinates (..., 3) to skew-symmetric matrices (..., 3, 3)."""
    a = np.asarray(a, dtype=float)
    if a.shape[-1] != 3:
        raise ValueError(f"hat expects 3 coordinates, got {a.shape[-1]}")
    M = np.zeros(a.shape[:-1] + (3, 3))
    M[..., 0, 1] = -a[..., 2]
    M[..., 0, 2] = a[..., 1]
    M[..., 1, 0] = a[..., 2]
    M[..., 1, 2] = -a[..., 0]
    M[..., 2, 0] = -a[..., 1]
    M[..., 2, 1] = a[..., 0]
    return M


def vee(M):
    """Inverse of :func:`hat`."""
    M = np.asarray(M, dtype=float)
    return np.stack([M[..., 2, 1], M[..., 0, 2], M[..., 1, 0]], axis=-1)


def so3_exp(a):
    """Rodrigues formula, safe at the zero angle.

    R = I + sin(t)/t * A + (1 - cos(t))/t^2 * A^2 with t = |a|, A = hat(a).
    """
    a = np.asarray(a, dtype=float)
    theta = np.linalg.norm(a, axis=-1)
    A = hat(a)
    A2 = A @ A
    # sinc-style coefficients, series for small angles
    small = theta < 1e-6
    t2 = theta * theta
    with np.errstate(invalid="ignore", divide="ignore"):
        c1 = np.where(small, 1.0 - t2 / 6.0, np.sin(theta) / np.where(small, 1.0, theta))
        c2 = np.where(small, 0.5 - t2 / 24.0, (1.0 - np.cos(theta)) / np.where(small, 1.0, t2))
    eye = np.broadcast_to(np.eye(3), A.shape)
    return eye + c1[..., None, None] * A + c2[..., None, None] * A2


def so3_log_masked(R):
    """Principal so(3) logarithm with a validity mask.

    Returns ``(coords, ok)`` where ``ok`` is False for rotations whose
    angle lies within ``SO3_BRANCH_MARGIN`` of the cut locus at pi.
    No orthogonality check; callers own that.
    """
    R = np.asarray(R, dtype=float)
    tr = np.trace(R, axis1=-2, axis2=-1)
    ct = np.clip((tr - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(ct)
    ok = theta < np.pi - SO3_BRANCH_MARGIN
    small = theta < 1e-6
    t2 = theta * theta
    with np.errstate(invalid="ignore", divide="ignore"):
        # theta / (2 sin theta); series 1/2 + t^2/12 + 7 t^4/720 near zero
        coef = np.where(
            small,
            0.5 + t2 / 12.0 + 7.0 * t2 * t2 / 720.0,
            theta / np.where(small, 1.0, 2.0 * np.sin(np.where(ok, theta, 0.0))),
        )
    # zero out off-branch entries so failed paths stay finite downstream
    coef = np.where(ok, coef, 0.0)
    coords = coef[..., None] * vee(R - np.swapaxes(R, -1, -2))
    return coords, ok


def so3_log(R):
    """Principal so(3) logarithm; raises on bad input.

    Raises
    ------
    ValueError
        If ``R`` is not orthogonal with positive determinant.
    BranchError
        If the rotation angle is within ``SO3_BRANCH_MARGIN`` of pi.
    """
    R = np.asarray(R, dtype=float)
    check_rotation(R)
    coords, ok = so3_log_masked(R)
    if not np.all(ok):
        raise BranchError("rotation angle too close to the cut locus at pi")
    return coords


def check_rotation(R, tol=1e-6):
    """Validate orthogonality and positive determinant of (batches of) R."""
    R = np.asarray(R, dtype=float)
    err = np.linalg.norm(R @ np.swapaxes(R, -1, -2) - np.eye(3), axis=(-2, -1))
    if np.any(err > tol):
        raise ValueError(f"matrix not orthogonal (max |R R^T - I| = {err.max():.3e})")
    if np.any(np.linalg.det(R) <= 0):
        raise ValueError("matrix has non-positive determinant")


def polar_project(M):
    """Nearest rotation matrix (special orthogonal polar factor)."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=float))
    R = U @ Vt
    # flip the smallest singular direction if det is negative
    neg = np.linalg.det(R) < 0
    if np.any(neg):
        U = U.copy()
        U[neg, ..., :, -1] *= -1.0
        R = U @ Vt
    return R


# ---------------------------------------------------------------------------
# gl(n): scaling-and-squaring exponential, inverse scaling-and-squaring log
# ---------------------------------------------------------------------------

def gl_exp(A, terms=16):
    """Matrix exponential by scaling and squaring with a Taylor core."""
    A = np.asarray(A, dtype=float)
    norm = np.linalg.norm(A, axis=(-2, -1))
    maxn = float(norm.max()) if norm.size else 0.0
    s = max(0, int(np.ceil(np.log2(max(maxn, 1e-12) / 0.5))))
    X = A / (2.0 ** s)
    n = A.shape[-1]
    E = np.broadcast_to(np.eye(n), A.shape).copy()
    term = np.broadcast_to(np.eye(n), A.shape).copy()
    for k in range(1, terms + 1):
        term = term @ X / k
        E = E + term
    for _ in range(s):
        E = E @ E
    return E


def gl_log_masked(G, max_sqrt=12, series_terms=12):
    """Principal matrix logarithm by inverse scaling and squaring.

    Square roots are taken with the Denman-Beavers iteration until the
    argument is close to the identity, then an atanh series finishes the
    job.  Returns ``(log, ok)``; ``ok`` is False where the iteration did
    not converge (e.g. eigenvalues on the negative real axis).
    """
    G = np.asarray(G, dtype=float)
    n = G.shape[-1]
    eye = np.eye(n)
    X = G.copy()
    ok = np.isfinite(X).all(axis=(-2, -1))
    k = 0
    dist = np.linalg.norm(X - eye, axis=(-2, -1))
    while k < max_sqrt and np.any(dist[ok] > 0.25) if ok.any() else False:
        X = _db_sqrt(X)
        bad = ~np.isfinite(X).all(axis=(-2, -1))
        ok = ok & ~bad
        X = np.where(bad[..., None, None], np.broadcast_to(eye, X.shape), X)
        k += 1
        dist = np.linalg.norm(X - eye, axis=(-2, -1))
    ok = ok & (dist <= 0.5)
    # log X = 2 atanh(Z), Z = (X - I)(X + I)^{-1}
    Z = np.linalg.solve(np.swapaxes(X + eye, -1, -2), np.swapaxes(X - eye, -1, -2))
    Z = np.swapaxes(Z, -1, -2)
    Z2 = Z @ Z
    L = np.zeros_like(Z)
    P = Z.copy()
    for j in range(series_terms):
        L = L + P / (2 * j + 1)
        P = P @ Z2
    L = 2.0 * (2.0 ** k) * L
    ok = ok & np.isfinite(L).all(axis=(-2, -1))
    L = np.where(ok[..., None, None], L, 0.0)
    return L, ok


def _inv_masked(M):
    """Batched inverse with NaN slices where the matrix is singular."""
    M = np.asarray(M, dtype=float)
    n = M.shape[-1]
    with np.errstate(all="ignore"):
        det = np.linalg.det(np.where(np.isfinite(M), M, 0.0))
    bad = ~np.isfinite(M).all(axis=(-2, -1)) | (np.abs(det) < 1e-300)
    safe = np.where(bad[..., None, None], np.broadcast_to(np.eye(n), M.shape), M)
    inv = np.linalg.inv(safe)
    return np.where(bad[..., None, None], np.nan, inv)


def _db_sqrt(M, iters=14, tol=1e-13):
    """Denman-Beavers square-root iteration (batched).

    Slices where an iterate becomes singular are filled with NaN so that
    callers can mask them out.
    """
    X = np.asarray(M, dtype=float).copy()
    n = M.shape[-1]
    Y = np.broadcast_to(np.eye(n), X.shape).copy()
    for _ in range(iters):
        with np.errstate(all="ignore"):
            Xi = _inv_masked(Y)
            Yi = _inv_masked(X)
            Xn = 0.5 * (X + Xi)
            Yn = 0.5 * (Y + Yi)
        if np.all(~np.isfinite(Xn) | (np.abs(Xn - X) < tol)):
            X, Y = Xn, Yn
            break
        X, Y = Xn, Yn
    return X


def gl_log(G, tol=1e-10):
    """Principal matrix logarithm; verifies the round trip.

    Raises
    ------
    NumericalError
        If the iteration fails or exp(log(G)) does not reproduce G
        within ``tol`` (relative Frobenius residual).
    """
    G = np.asarray(G, dtype=float)
    L, ok = gl_log_masked(G)
    if not np.all(ok):
        raise NumericalError("matrix logarithm iteration did not converge")
    resid = np.linalg.norm(gl_exp(L) - G, axis=(-2, -1)) / np.maximum(
        np.linalg.norm(G, axis=(-2, -1)), 1.0
    )
    if np.any(resid > tol):
        raise NumericalError(
            f"matrix logarithm residual {float(np.max(resid)):.3e} exceeds {tol:.1e}"
        )
    return L


# ---------------------------------------------------------------------------
# Metric on the algebra
# ---------------------------------------------------------------------------

class MetricParam:
    """Symmetric positive-definite inner product on the Lie algebra.

    Caches the Cholesky factor of ``A``, the symmetric inverse square
    root (the noise map), and a lower-triangular ``cholesky_inv`` with
    ``cholesky_inv @ cholesky_inv.T == inv(A)``.
    """

    def __init__(self, A):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise ValueError("metric matrix must be square")
        if np.linalg.norm(A - A.T) >= 1e-12 * max(1.0, np.linalg.norm(A)):
            raise ValueError("metric matrix must be symmetric")
        w, V = np.linalg.eigh(A)
        if np.any(w <= 0):
            raise ValueError("metric matrix must be positive definite")
        self.A = A
        self.d = A.shape[0]
        self.eigvals = w
        self.det = float(np.prod(w))
        self.inv = V @ np.diag(1.0 / w) @ V.T
        self.sqrt = V @ np.diag(np.sqrt(w)) @ V.T
        self.sqrt_inv = V @ np.diag(1.0 / np.sqrt(w)) @ V.T
        self.chol = np.linalg.cholesky(A)
        self.cholesky_inv = np.linalg.cholesky(self.inv)

    @property
    def is_identity(self):
        return bool(np.allclose(self.A, np.eye(self.d), atol=1e-14))

    def inner(self, u, v):
        """<u, v>_A via the cached Cholesky factor."""
        lu = np.einsum("ji,...j->...i", self.chol, np.asarray(u, dtype=float))
        lv = np.einsum("ji,...j->...i", self.chol, np.asarray(v, dtype=float))
        return np.einsum("...i,...i->...", lu, lv)

    def norm_sq(self, u):
        return self.inner(u, u)

    def norm(self, u):
        return np.sqrt(self.norm_sq(u))

    def __repr__(self):
        return f"MetricParam(d={self.d})"


def identity_metric(d):
    return MetricParam(np.eye(d))


# ---------------------------------------------------------------------------
# Structure coefficients and the Laplace-Beltrami drift
# ---------------------------------------------------------------------------

class StructureCoefficients:
    """Array C[k, i, j] with [V_i, V_j] = sum_k C[k, i, j] V_k."""

    def __init__(self, C):
        C = np.asarray(C, dtype=float)
        if C.ndim != 3 or len(set(C.shape)) != 1:
            raise ValueError("structure coefficients must be a d x d x d array")
        if np.max(np.abs(C + np.swapaxes(C, 1, 2))) > 1e-10:
            raise ValueError("structure coefficients must be antisymmetric in (i, j)")
        self.C = C
        self.d = C.shape[0]

    def ad(self, a):
        """Matrix of ad_a in the basis: (ad_a)[k, j] = sum_i a_i C[k, i, j]."""
        return np.einsum("...i,kij->...kj", np.asarray(a, dtype=float), self.C)


def structure_from_basis(basis, vee_fn):
    """Compute structure coefficients from bracket tables of a matrix basis."""
    d = len(basis)
    B = np.asarray(basis, dtype=float)
    # coords_fn solves [B_i, B_j] = sum_k C[k,i,j] B_k via the supplied vee
    C = np.zeros((d, d, d))
    for i in range(d):
        for j in range(d):
            br = B[i] @ B[j] - B[j] @ B[i]
            C[:, i, j] = vee_fn(br)
    return StructureCoefficients(C)


def so3_structure():
    """Levi-Civita structure coefficients of the standard so(3) basis."""
    C = np.zeros((3, 3, 3))
    for i in range(3):
        for j in range(3):
            for k in range(3):
                C[k, i, j] = _levi_civita(i, j, k)
    return StructureCoefficients(C)


def _levi_civita(i, j, k):
    if (i, j, k) in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        return 1.0
    if (i, j, k) in ((0, 2, 1), (2, 1, 0), (1, 0, 2)):
        return -1.0
    return 0.0


def v0_drift(structure):
    """Coordinates of V0 = sum_{i,j} C^j_{ij} V_j in the basis of ``structure``."""
    C = structure.C
    # coefficient of V_j is sum_i C[j, i, j]
    return np.einsum("jij->j", C)


# ---------------------------------------------------------------------------
# Jacobian determinant of the group exponential
# ---------------------------------------------------------------------------

def log_dexp_det(a, structure):
    """log of the Jacobian determinant of exp at algebra coordinates ``a``.

    In left-trivialized coordinates d exp_a = phi1(ad_a) with
    phi1(z) = (1 - e^{-z})/z, so the determinant is the product of
    phi1 over the spectrum of ad_a.  Exact for any matrix group; equals
    2(1 - cos t)/t^2 on so(3).
    """
    ad = structure.ad(np.asarray(a, dtype=float))
    lam = np.linalg.eigvals(ad)
    small = np.abs(lam) < 1e-12
    with np.errstate(all="ignore"):
        phi = np.where(small, 1.0, -np.expm1(-lam) / np.where(small, 1.0, lam))
    det = np.real(np.prod(phi, axis=-1))
    if np.any(det <= 0):
        raise BranchError("exponential Jacobian determinant not positive")
    return np.log(det)


def so3_log_dexp_det(theta):
    """Closed form log Theta(theta) = log(2(1 - cos t)/t^2) on so(3)."""
    theta = np.asarray(theta, dtype=float)
    small = np.abs(theta) < 1e-4
    t2 = theta * theta
    with np.errstate(all="ignore"):
        val = np.where(
            small,
            np.log1p(-t2 / 12.0 + t2 * t2 / 360.0),
            np.log(np.where(small, 1.0, 2.0 * (1.0 - np.cos(theta)) / np.where(small, 1.0, t2))),
        )
    return val


def jacobian_det_exp(a, structure=None):
    """Jacobian determinant Theta of the group exponential at ``a``.

    ``structure=None`` selects the flat (abelian) case where Theta == 1.
    The SO(3) fast path uses the closed form; other groups use the
    spectral formula of :func:`log_dexp_det`.
    """
    a = np.asarray(a, dtype=float)
    if structure is None:
        return np.ones(a.shape[:-1])
    if structure.d == 3 and a.shape[-1] == 3 and _is_so3_structure(structure):
        theta = np.linalg.norm(a, axis=-1)
        if np.any(theta >= np.pi):
            raise BranchError("coordinates at or beyond the so(3) cut locus")
        return np.exp(so3_log_dexp_det(theta))
    return np.exp(log_dexp_det(a, structure))


def _is_so3_structure(structure):
    return np.allclose(structure.C, so3_structure().C, atol=1e-12)


def radial_log_dexp_slope(w, structure, metric):
    """d/drho of log Theta along the metric-radial ray through ``w``.

    The ray is a(rho) = rho * w / |w|_A.  Since ad is linear in its
    argument and log Theta(a) = sum_i log phi1(lambda_i(ad_a)), the
    slope at rho = |w|_A is sum_i h(lambda_i(ad_w)) / |w|_A with
    h(z) = z / (e^z - 1) - 1 + z/2 (the sum of z/2 terms vanishes
    because ad is traceless on these groups).
    """
    w = np.asarray(w, dtype=float)
    r = metric.norm(w)
    lam = np.linalg.eigvals(structure.ad(w))
    small = np.abs(lam) < 1e-4
    z = np.where(small, 0.0, lam)
    with np.errstate(all="ignore"):
        h = np.where(
            small,
            lam * lam / 12.0,
            z / np.where(small, 1.0, np.expm1(z)) - 1.0 + z / 2.0,
        )
    trh = np.real(np.sum(h, axis=-1))
    safe = r > 1e-12
    return np.where(safe, trh / np.where(safe, r, 1.0), 0.0)
