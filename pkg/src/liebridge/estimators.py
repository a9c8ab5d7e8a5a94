"""Density estimation and likelihood-based parameter estimation.

Importance-sampling heat-kernel estimates p_T(e, v) = q_T(v) E[phi],
iterative metric MLE on SO(3), diffusion-mean estimation on SPD(3), the
truncated exact S^2 heat kernel used for validation, and the anisotropic
pushforward density grid on S^2.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from . import fiber as fiber_mod
from . import sde
from .lie_core import MetricParam
from .spaces import S2Space, SPDSpace, _rot_z


class DensityEstimate:
    """A Monte Carlo density value with its standard error."""

    def __init__(self, value, mc_std_error, n_bridges):
        self.value = float(value)
        self.mc_std_error = float(mc_std_error)
        self.n_bridges = int(n_bridges)
        if self.value < 0 or self.mc_std_error < 0:
            raise ValueError("density estimate and its error must be nonnegative")

    def __repr__(self):
        return (
            f"DensityEstimate(value={self.value:.6g}, "
            f"mc_std_error={self.mc_std_error:.2g}, n_bridges={self.n_bridges})"
        )


class MLETrace:
    """Iteration history of an iterative MLE run.

    ``iterations`` holds (theta, log_likelihood, gradient_norm) triples;
    the first entry is the starting point, so a K-step run yields K+1
    entries.  theta is a symmetric 3x3 parameter matrix.
    """

    def __init__(self, iterations):
        self.iterations = list(iterations)

    def __len__(self):
        return len(self.iterations)

    @property
    def thetas(self):
        return np.stack([it[0] for it in self.iterations])

    @property
    def log_likelihoods(self):
        return np.array([it[1] for it in self.iterations])

    @property
    def final(self):
        return self.iterations[-1][0]

    def write_csv(self, fileobj):
        """Columns: iteration, upper-triangle theta entries, loglik, gradnorm."""
        names = ["t00", "t01", "t02", "t11", "t12", "t22"]
        fileobj.write("iteration," + ",".join(names) + ",loglik,gradnorm\n")
        for i, (theta, ll, gn) in enumerate(self.iterations):
            vals = _upper_triangle(theta)
            cells = [str(i)] + [f"{v:.12g}" for v in vals]
            cells.append(f"{ll:.12g}" if np.isfinite(ll) else "")
            cells.append(f"{gn:.12g}" if np.isfinite(gn) else "")
            fileobj.write(",".join(cells) + "\n")


def _upper_triangle(theta):
    theta = np.asarray(theta)
    return np.array(
        [theta[0, 0], theta[0, 1], theta[0, 2], theta[1, 1], theta[1, 2], theta[2, 2]]
    )


def _from_upper_triangle(vals):
    t00, t01, t02, t11, t12, t22 = vals
    return np.array([[t00, t01, t02], [t01, t11, t12], [t02, t12, t22]])


def _default_steps(T):
    return max(2, int(round(100 * T)))


# ---------------------------------------------------------------------------
# Importance-sampling heat kernel
# ---------------------------------------------------------------------------

def q_density(v, A, T, spec):
    """Gaussian reference factor sqrt(det A) (2 pi T)^{-d/2} e^{-r^2_A/2T}.

    r is the algebra-coordinate distance |log v|_A from the identity.
    """
    if A is None:
        A = spec.metric
    if T <= 0:
        raise ValueError("T must be positive")
    w = spec.log(v)
    r2 = A.norm_sq(w)
    d = spec.dim
    return np.sqrt(A.det) * (2.0 * np.pi * T) ** (-0.5 * d) * np.exp(-r2 / (2.0 * T))


def heat_kernel_is(v, A, T, n, spec, noise, steps=None):
    """p_T(e, v) estimated as q_density(v) times the mean bridge weight."""
    if A is None:
        A = spec.metric
    elif not np.array_equal(A.A, spec.metric.A):
        spec = spec.with_metric(A.A)
    grid = sde.TimeGrid(T, steps if steps is not None else _default_steps(T))
    path = sde.sample_guided_bridge(spec, v, grid, noise, n_paths=int(n))
    q = q_density(v, spec.metric, T, spec)
    phi = np.exp(path.log_phi)
    value = q * float(np.mean(phi))
    stderr = q * float(np.std(phi)) / np.sqrt(len(phi))
    return DensityEstimate(value, stderr, n)


def log_likelihood(data, A, T, m, spec, noise, steps=None):
    """Sum over observations of log[q_density * mean phi] under metric A.

    Bridges are simulated with the metric ``A``; ``m`` bridges per
    observation share one batched simulation.
    """
    data = np.asarray(data, dtype=float)
    n_obs = data.shape[0]
    work = spec.with_metric(A.A) if not np.array_equal(A.A, spec.metric.A) else spec
    ws, ok = work.log_masked(data)
    if not np.all(ok):
        bad = list(np.flatnonzero(~ok))
        raise ValueError(f"observations outside the log branch: indices {bad}")
    r2 = work.metric.norm_sq(ws)
    logq = (
        0.5 * np.log(work.metric.det)
        - 0.5 * work.dim * np.log(2.0 * np.pi * T)
        - r2 / (2.0 * T)
    )
    grid = sde.TimeGrid(T, steps if steps is not None else _default_steps(T))
    targets = np.repeat(data, int(m), axis=0)
    path = sde.sample_guided_bridge(work, targets, grid, noise, n_paths=n_obs * int(m))
    log_mean_phi = _log_mean_exp(path.log_phi.reshape(n_obs, int(m)), axis=1)
    return float(np.sum(logq + log_mean_phi))


def _log_mean_exp(a, axis):
    amax = np.max(a, axis=axis, keepdims=True)
    out = amax + np.log(np.mean(np.exp(a - amax), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


# ---------------------------------------------------------------------------
# Iterative MLE of the metric (Algorithm of Section 5.1)
# ---------------------------------------------------------------------------

def metric_mle(
    data,
    theta0,
    eta,
    K,
    m,
    spec,
    noise,
    T=1.0,
    steps=None,
    fd_step=1e-3,
    eig_floor=1e-4,
):
    """Gradient ascent on the bridge log-likelihood over SPD metrics.

    The gradient is taken by central finite differences over the 6 free
    entries of the symmetric matrix; all evaluations within one
    iteration reuse the same bridge noise (common random numbers), and
    fresh noise is drawn each iteration.  The step uses the gradient of
    the per-observation, per-parameter likelihood (total gradient scaled
    by 1/(n*6)) so that ``eta`` is dimensionless in the data size.
    Iterates are projected to the SPD cone by flooring eigenvalues at
    ``eig_floor``.
    """
    theta0 = np.asarray(theta0, dtype=float)
    theta = _clamp_spd(theta0, eig_floor)
    scale = 1.0 / (len(data) * 6.0)
    trace = []
    for it in range(int(K)):
        iter_noise = noise.child(it)

        def ll(mat, _n=iter_noise):
            return log_likelihood(
                data, MetricParam(mat), T, m, spec, _n.child(0), steps=steps
            )

        base = ll(theta)
        grad = _fd_gradient(ll, theta, fd_step, eig_floor)
        trace.append((theta.copy(), base, float(np.linalg.norm(grad))))
        if not np.isfinite(base) or not np.all(np.isfinite(grad)):
            break
        theta = _clamp_spd(theta + eta * scale * _from_upper_triangle(grad), eig_floor)
    final_ll = log_likelihood(
        data, MetricParam(theta), T, m, spec, noise.child(int(K)).child(0), steps=steps
    )
    trace.append((theta.copy(), final_ll, np.nan))
    return MLETrace(trace)


def _fd_gradient(f, theta, h, eig_floor):
    vals = _upper_triangle(theta)
    grad = np.empty(6)
    for p in range(6):
        plus = vals.copy()
        plus[p] += h
        minus = vals.copy()
        minus[p] -= h
        fp = f(_clamp_spd(_from_upper_triangle(plus), eig_floor))
        fm = f(_clamp_spd(_from_upper_triangle(minus), eig_floor))
        grad[p] = (fp - fm) / (2.0 * h)
    return grad


def _clamp_spd(mat, eig_floor):
    mat = 0.5 * (mat + mat.T)
    w, V = np.linalg.eigh(mat)
    w = np.maximum(w, eig_floor)
    return (V * w) @ V.T


# ---------------------------------------------------------------------------
# Diffusion mean on SPD(3)
# ---------------------------------------------------------------------------

def diffusion_mean_spd(
    data,
    mu0,
    eta,
    K,
    m,
    noise,
    T=0.25,
    steps=20,
    fd_step=1e-3,
    eig_floor=1e-4,
):
    """Iterative MLE of the diffusion mean of SPD(3) observations.

    The likelihood of each observation V_j is the heat-kernel value at
    the fiber over V_j, estimated with Fermi bridges in GL+(3) started
    from the section point mu^{1/2}; the mean mu is updated by finite-
    difference gradient ascent over its 6 free entries.
    """
    space = SPDSpace()
    data = np.asarray(data, dtype=float)
    mu = _clamp_spd(np.asarray(mu0, dtype=float), eig_floor)
    scale = 1.0 / (len(data) * 6.0)
    trace = []
    for it in range(int(K)):
        iter_noise = noise.child(it)

        def ll(mat, _n=iter_noise):
            return _spd_fiber_log_likelihood(data, mat, T, m, space, _n.child(0), steps)

        base = ll(mu)
        grad = _fd_gradient(ll, mu, fd_step, eig_floor)
        trace.append((mu.copy(), base, float(np.linalg.norm(grad))))
        if not np.isfinite(base) or not np.all(np.isfinite(grad)):
            break
        mu = _clamp_spd(mu + eta * scale * _from_upper_triangle(grad), eig_floor)
    final_ll = _spd_fiber_log_likelihood(
        data, mu, T, m, space, noise.child(int(K)).child(0), steps
    )
    trace.append((mu.copy(), final_ll, np.nan))
    return MLETrace(trace)


def _spd_fiber_log_likelihood(data, mu, T, m, space, noise, steps):
    """sum_j log[(2 pi T)^{-3} e^{-r_j^2/2T} mean_i phi_ij] from mu^{1/2}."""
    spec = space.group
    n_obs = data.shape[0]
    m = int(m)
    x0 = space.sqrt(mu)
    targets = np.repeat(data, m, axis=0)
    grid = sde.TimeGrid(T, int(steps))
    path = fiber_mod.sample_fermi_bridge(
        space, targets, grid, noise, n_paths=n_obs * m, x0=x0
    )
    # distance from x0 to each fiber (same for the m copies of one observation)
    handle = space.fiber_handle(data)
    vbar = handle.nearest(np.broadcast_to(x0, data.shape))
    w, ok = spec.log_masked(np.linalg.solve(np.broadcast_to(x0, data.shape), vbar))
    if not np.all(ok):
        bad = list(np.flatnonzero(~ok))
        raise ValueError(f"observations outside the log branch: indices {bad}")
    r2 = spec.metric.norm_sq(w)
    logq = -3.0 * np.log(2.0 * np.pi * T) - r2 / (2.0 * T)
    log_mean_phi = _log_mean_exp(path.log_phi.reshape(n_obs, m), axis=1)
    return float(np.sum(logq + log_mean_phi))


# ---------------------------------------------------------------------------
# S^2 heat kernels
# ---------------------------------------------------------------------------

def s2_exact_kernel(theta_dist, T, L):
    """Truncated spherical heat kernel sum_{l<=L} (2l+1)/(4 pi) e^{-l(l+1)T/2} P_l.

    Legendre polynomials are evaluated by the three-term recurrence.
    Vectorized over ``theta_dist``.
    """
    x = np.cos(np.asarray(theta_dist, dtype=float))
    p_prev = np.ones_like(x)
    total = (1.0 / (4.0 * np.pi)) * p_prev
    if L >= 1:
        p_cur = x.copy()
        total = total + (3.0 / (4.0 * np.pi)) * np.exp(-T) * p_cur
        for l in range(2, int(L) + 1):
            p_next = ((2 * l - 1) * x * p_cur - (l - 1) * p_prev) / l
            total = total + (
                (2 * l + 1) / (4.0 * np.pi) * np.exp(-l * (l + 1) * T / 2.0) * p_next
            )
            p_prev, p_cur = p_cur, p_next
    return total


def s2_kernel_is(v, T, n, noise, steps=None):
    """Fermi-bridge estimate of the S^2 heat kernel at ``v``.

    Bridges run in SO(3) with the bi-invariant metric toward the fiber
    over ``v``; the weight uses the base radial process rho(Y) =
    arccos <pi(Y), v> with the spherical volume Jacobian sin(rho)/rho,
    and the q-factor uses the base dimension 2.
    """
    space = S2Space()
    v = np.asarray(v, dtype=float)
    grid = sde.TimeGrid(T, steps if steps is not None else _default_steps(T))
    path = fiber_mod.sample_fermi_bridge(space, v, grid, noise, n_paths=int(n))
    base_pts = space.project(path.points)  # (n, k+1, 3)
    rho = np.arccos(np.clip(np.sum(base_pts * v, axis=-1), -1.0, 1.0))
    tau = grid.T - grid.t[: grid.k - 1]
    log_phi = np.sum(
        rho[:, : grid.k - 1] / tau * _s2_radial_da(rho[:, : grid.k - 1]) * grid.dt,
        axis=1,
    )
    rho0 = float(np.arccos(np.clip(v[2], -1.0, 1.0)))
    q = (2.0 * np.pi * T) ** -1.0 * np.exp(-rho0 ** 2 / (2.0 * T))
    phi = np.exp(log_phi)
    return DensityEstimate(q * phi.mean(), q * phi.std() / np.sqrt(len(phi)), n)


def _s2_radial_da(rho):
    """-1/2 d/drho log(sin rho / rho) = -(cot rho - 1/rho)/2, series near 0."""
    small = rho < 1e-4
    safe = np.where(small, 1.0, rho)
    val = np.where(small, rho / 6.0, -0.5 * (1.0 / np.tan(safe) - 1.0 / safe))
    return val


# ---------------------------------------------------------------------------
# Anisotropic pushforward density on S^2
# ---------------------------------------------------------------------------

class DensityGrid:
    """Equal-area S^2 grid (bands in cos(theta) x azimuth) of density values."""

    def __init__(self, T, values, cos_edges, phi_edges):
        self.T = float(T)
        self.values = np.asarray(values, dtype=float)
        self.cos_edges = np.asarray(cos_edges, dtype=float)
        self.phi_edges = np.asarray(phi_edges, dtype=float)

    @property
    def n_cells(self):
        return self.values.size

    def cell_masses(self):
        """Normalized probability mass per (equal-area) cell."""
        vals = np.clip(self.values, 0.0, None)
        total = vals.sum()
        if total <= 0:
            raise ValueError("density grid has no positive mass")
        return vals / total

    def tv_to_uniform(self):
        masses = self.cell_masses()
        return 0.5 * float(np.abs(masses - 1.0 / masses.size).sum())

    def anisotropy_ratio(self, polar_angle=0.5):
        """max/min of the density over azimuth in the band containing the angle."""
        c = np.cos(polar_angle)
        band = int(np.searchsorted(-self.cos_edges[1:-1], -c))
        row = self.values[band]
        if np.min(row) <= 0:
            return np.inf
        return float(np.max(row) / np.min(row))

    def write_csv(self, fileobj):
        fileobj.write("cos_theta_lo,cos_theta_hi,phi_lo,phi_hi,density\n")
        nb, na = self.values.shape
        for i in range(nb):
            for j in range(na):
                fileobj.write(
                    f"{self.cos_edges[i]:.12g},{self.cos_edges[i + 1]:.12g},"
                    f"{self.phi_edges[j]:.12g},{self.phi_edges[j + 1]:.12g},"
                    f"{self.values[i, j]:.12g}\n"
                )


def pushforward_density_grid(
    metric,
    T_list,
    n_samples,
    n_bridges,
    noise,
    n_bands=8,
    n_azimuth=16,
    steps=None,
):
    """S^2 pushforward densities of SO(3) Brownian motion under ``metric``.

    For each T the density at every equal-area cell center is estimated
    by fiber quadrature: the SO(3) density is estimated by guided-bridge
    importance sampling at ``n_samples`` points (cell centers times
    fiber angles, ``n_bridges`` bridges each) and integrated over each
    fiber.  Returns one :class:`DensityGrid` per T.
    """
    space = S2Space(metric)
    spec = space.group
    n_cells = n_bands * n_azimuth
    n_fiber = max(1, int(n_samples) // n_cells)
    cos_edges = np.linspace(1.0, -1.0, n_bands + 1)
    phi_edges = np.linspace(0.0, 2.0 * np.pi, n_azimuth + 1)
    cos_mid = 0.5 * (cos_edges[:-1] + cos_edges[1:])
    phi_mid = 0.5 * (phi_edges[:-1] + phi_edges[1:])

    # cell centers as unit vectors, then fiber points over each center
    theta_mid = np.arccos(cos_mid)
    centers = np.stack(
        [
            np.sin(theta_mid)[:, None] * np.cos(phi_mid)[None, :],
            np.sin(theta_mid)[:, None] * np.sin(phi_mid)[None, :],
            np.broadcast_to(cos_mid[:, None], (n_bands, n_azimuth)),
        ],
        axis=-1,
    ).reshape(n_cells, 3)
    angles = 2.0 * np.pi * (np.arange(n_fiber) + 0.5) / n_fiber
    sections = space.section(centers)  # (n_cells, 3, 3)
    targets = (sections[:, None] @ _rot_z(angles)[None, :]).reshape(-1, 3, 3)
    targets = np.repeat(targets, int(n_bridges), axis=0)

    ws, wok = spec.log_masked(targets)
    if not np.all(wok):
        raise ValueError("a quadrature target sits on the cut locus; perturb the grid")

    fiber_len = 2.0 * np.pi * np.sqrt(spec.metric.A[2, 2])
    grids = []
    for ti, T in enumerate(T_list):
        grid = sde.TimeGrid(T, steps if steps is not None else _default_steps(T))
        path = sde.sample_guided_bridge(
            spec, targets, grid, noise.child(ti), n_paths=targets.shape[0]
        )
        logq_T = (
            0.5 * np.log(spec.metric.det)
            - 1.5 * np.log(2.0 * np.pi * T)
            - spec.metric.norm_sq(ws) / (2.0 * T)
        )
        dens_g = np.exp(logq_T + path.log_phi)  # per-bridge density draws
        dens_g = dens_g.reshape(n_cells, n_fiber, int(n_bridges)).mean(axis=(1, 2))
        values = (fiber_len * dens_g).reshape(n_bands, n_azimuth)
        grids.append(DensityGrid(T, values, cos_edges, phi_edges))
    return grids


# ---------------------------------------------------------------------------
# scikit-learn style wrappers
# ---------------------------------------------------------------------------

class MetricEstimator(BaseEstimator):
    """Estimate a left-invariant metric on a Lie group from endpoint data.

    scikit-learn style wrapper around :func:`metric_mle`: ``fit(X)`` takes
    an array of observed group elements and exposes the fitted symmetric
    parameter matrix as ``metric_``, with the full iteration history in
    ``trace_``.
    """

    def __init__(self, spec=None, eta=0.2, K=50, m=4, T=1.0, steps=None, seed=0):
        self.spec = spec
        self.eta = eta
        self.K = K
        self.m = m
        self.T = T
        self.steps = steps
        self.seed = seed

    def fit(self, X, y=None):
        from .spaces import make_space

        spec = self.spec if self.spec is not None else make_space("so3")
        noise = sde.NoiseStream(self.seed)
        data = np.asarray(X, dtype=float)
        self.trace_ = metric_mle(
            data,
            np.eye(spec.dim),
            self.eta,
            self.K,
            self.m,
            spec,
            noise,
            T=self.T,
            steps=self.steps,
        )
        self.metric_ = self.trace_.final
        return self

    def score(self, X, y=None):
        """Bridge log-likelihood of ``X`` under the fitted metric."""
        from .spaces import make_space

        spec = self.spec if self.spec is not None else make_space("so3")
        noise = sde.NoiseStream(self.seed).child(1)
        return log_likelihood(
            np.asarray(X, dtype=float),
            MetricParam(self.metric_),
            self.T,
            self.m,
            spec,
            noise,
            steps=self.steps,
        )


class DiffusionMean(BaseEstimator):
    """Estimate the diffusion mean of SPD(3)-valued data.

    scikit-learn style wrapper around :func:`diffusion_mean_spd`:
    ``fit(X)`` takes an (n, 3, 3) array of SPD matrices and exposes the
    fitted mean as ``mean_`` and the iteration history as ``trace_``.
    """

    def __init__(self, eta=0.75, K=30, m=3, T=0.25, steps=15, seed=0):
        self.eta = eta
        self.K = K
        self.m = m
        self.T = T
        self.steps = steps
        self.seed = seed

    def fit(self, X, y=None):
        noise = sde.NoiseStream(self.seed)
        data = np.asarray(X, dtype=float)
        self.trace_ = diffusion_mean_spd(
            data,
            np.eye(3),
            self.eta,
            self.K,
            self.m,
            noise,
            T=self.T,
            steps=self.steps,
        )
        self.mean_ = self.trace_.final
        return self
