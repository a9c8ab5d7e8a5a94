"""Stratonovich Euler-Heun integration on groups and guided bridges.

Implements the Brownian SDE dX = -1/2 V0 dt + V_i o dB^i driven by the
left-invariant fields V_i(x) = x hat(sigma e_i), sigma = A^{-1/2}, the
Delyon-Hu guided modification with drift log(Y^{-1} v)/(T - t), and the
path-wise importance weight

    log phi = int_0^{T-dt} r(Y_s) / (T - s) * d/dr log Theta^{-1/2} ds

with Theta the Jacobian determinant of the group exponential (the
radial local-time term is omitted; discrete paths never hit the cut
locus).  All samplers are batched over paths: a single draw of shape
``(k, n_paths, d)`` in fixed order keeps runs bit-reproducible.
"""

from __future__ import annotations

import numpy as np

from . import lie_core as lc


class TimeGrid:
    """Uniform grid t_i = i T / k on [0, T]."""

    def __init__(self, T, k):
        T = float(T)
        k = int(k)
        if T <= 0:
            raise ValueError("final time must be positive")
        if k < 2:
            raise ValueError("need at least two steps")
        self.T = T
        self.k = k
        self.dt = T / k
        self.t = np.linspace(0.0, T, k + 1)

    def __repr__(self):
        return f"TimeGrid(T={self.T}, k={self.k})"


class NoiseStream:
    """Deterministic noise source keyed by a seed and a spawn path.

    Identical construction arguments give bit-identical output.  Child
    streams are keyed explicitly (not by spawn order), so the same
    ``child(i)`` always produces the same stream regardless of when it
    is requested.
    """

    def __init__(self, seed, _spawn_key=()):
        if isinstance(seed, NoiseStream):
            seed = seed.entropy
        self.entropy = seed
        self.spawn_key = tuple(_spawn_key)
        seq = np.random.SeedSequence(entropy=seed, spawn_key=self.spawn_key)
        self.rng = np.random.default_rng(seq)

    def child(self, *indices):
        """An independent stream keyed by this stream and ``indices``."""
        return NoiseStream(self.entropy, self.spawn_key + tuple(int(i) for i in indices))

    def increments(self, grid, n_paths, d):
        """Brownian increments of shape (k, n_paths, d) with variance dt."""
        return self.rng.normal(scale=np.sqrt(grid.dt), size=(grid.k, int(n_paths), d))

    def normal(self, shape, scale=1.0):
        return self.rng.normal(scale=scale, size=shape)

    def uniform(self, shape=()):
        return self.rng.uniform(size=shape)

    def __repr__(self):
        return f"NoiseStream(entropy={self.entropy!r}, spawn_key={self.spawn_key!r})"


class SamplePath:
    """A batch of sampled trajectories on a common grid.

    Attributes
    ----------
    grid : TimeGrid
    points : ndarray
        Shape ``(n_paths, k+1) + element_shape``.
    log_phi : ndarray
        Shape ``(n_paths,)``; zero for unconditioned motion.
    seed : record of the NoiseStream that produced the batch
    n_resampled : int
        Number of trajectories that were re-drawn after leaving the
        principal branch of the group logarithm.
    """

    def __init__(self, grid, points, log_phi, seed, n_resampled=0):
        self.grid = grid
        self.points = points
        self.log_phi = np.asarray(log_phi, dtype=float)
        self.seed = seed
        self.n_resampled = int(n_resampled)

    @property
    def n_paths(self):
        return self.points.shape[0]

    def endpoints(self):
        return self.points[:, -1]

    def __repr__(self):
        return (
            f"SamplePath(n_paths={self.n_paths}, k={self.grid.k}, "
            f"T={self.grid.T}, n_resampled={self.n_resampled})"
        )


def euler_heun_step(x, drift, dB, dt, spec):
    """One Heun (Stratonovich midpoint) update.

    The increment in algebra coordinates is m = sigma dB + (drift -
    v0/2) dt; the two-stage Heun average of the left-invariant fields
    collapses to x (I + m + m^2/2) on matrix groups and to x + m on the
    additive group.
    """
    m = dB @ spec.sigma.T + (np.asarray(drift) - 0.5 * spec.v0_coords) * dt
    return spec.project(spec.step(x, m))


def sample_brownian_motion(spec, grid, noise, n_paths=1, keep_path=True):
    """Brownian motion started at the identity.

    Endpoint covariance in algebra coordinates is A^{-1} T.
    """
    n = int(n_paths)
    dB = noise.increments(grid, n, spec.dim)
    x = spec.identity((n,))
    points = _alloc_points(spec, grid, n) if keep_path else None
    if keep_path:
        points[:, 0] = x
    for i in range(grid.k):
        x = euler_heun_step(x, 0.0, dB[i], grid.dt, spec)
        if keep_path:
            points[:, i + 1] = x
    if not keep_path:
        points = x[:, None]
    return SamplePath(grid, points, np.zeros(n), noise)


def sample_guided_bridge(spec, v, grid, noise, n_paths=1, x0=None, max_rounds=50):
    """Guided bridge from x0 (default identity) to the point ``v``.

    The drift log(Y_t^{-1} v) / (T - t) pulls the path to ``v``; the
    last step pins Y_T = v exactly.  log phi is accumulated along the
    way.  Paths that leave the principal branch of the logarithm are
    redrawn with fresh noise; the total is reported in ``n_resampled``.
    """
    n = int(n_paths)
    if x0 is None:
        x0 = spec.identity()
    vb = _broadcast_el(spec, v, n)
    x0b = _broadcast_el(spec, x0, n)

    points, log_phi, ok = _run_guided(spec, x0b, vb, grid, noise)
    n_resampled = 0
    rounds = 0
    while not np.all(ok):
        rounds += 1
        if rounds > max_rounds:
            raise lc.NumericalError(
                f"{int((~ok).sum())} bridge paths still off-branch after {max_rounds} redraws"
            )
        bad = ~ok
        n_resampled += int(bad.sum())
        pts_b, lp_b, ok_b = _run_guided(
            spec, x0b[bad], vb[bad], grid, noise.child(rounds)
        )
        points[bad] = pts_b
        log_phi[bad] = lp_b
        ok[bad] = ok_b
    return SamplePath(grid, points, log_phi, noise, n_resampled)


def _run_guided(spec, x0, v, grid, noise):
    n = x0.shape[0]
    dB = noise.increments(grid, n, spec.dim)
    dt, T, t = grid.dt, grid.T, grid.t
    x = x0.copy()
    points = _alloc_points(spec, grid, n)
    points[:, 0] = x
    log_phi = np.zeros(n)
    ok = np.ones(n, dtype=bool)
    for i in range(grid.k):
        w, wok = spec.log_to_masked(x, v)
        ok &= wok
        if i <= grid.k - 2:
            log_phi += _phi_increment(spec, w, T - t[i], dt)
        if i == grid.k - 1:
            x = v.copy()
        else:
            drift = w / (T - t[i])
            x = euler_heun_step(x, drift, dB[i], dt, spec)
        points[:, i + 1] = x
    log_phi = np.where(ok, log_phi, 0.0)
    return points, log_phi, ok


def _phi_increment(spec, w, time_left, dt):
    """r/(T-t) * d/dr log Theta^{-1/2} * dt for one left-rectangle node."""
    if spec.structure is None:
        return 0.0
    r = np.sqrt(spec.metric.norm_sq(w))
    dA = -0.5 * lc.radial_log_dexp_slope(w, spec.structure, spec.metric)
    return r / time_left * dA * dt


def estimate_log_phi(path, v, spec):
    """Recompute log phi of stored guided paths from their points.

    Matches the value accumulated by :func:`sample_guided_bridge`
    (left-rectangle rule over [0, T - dt]).
    """
    grid = path.grid
    vb = _broadcast_el(spec, v, path.n_paths)
    log_phi = np.zeros(path.n_paths)
    for i in range(grid.k - 1):
        w, ok = spec.log_to_masked(path.points[:, i], vb)
        if not np.all(ok):
            raise lc.BranchError("stored path leaves the principal branch")
        log_phi += _phi_increment(spec, w, grid.T - grid.t[i], grid.dt)
    return log_phi


# ---------------------------------------------------------------------------
# helpers and CSV export
# ---------------------------------------------------------------------------

def _el_ndim(spec):
    return 2 if spec.is_matrix else 1


def _alloc_points(spec, grid, n):
    if spec.is_matrix:
        return np.empty((n, grid.k + 1, 3, 3))
    return np.empty((n, grid.k + 1, spec.dim))


def _broadcast_el(spec, x, n):
    x = np.asarray(x, dtype=float)
    nd = _el_ndim(spec)
    shape = (n,) + x.shape[-nd:]
    return np.broadcast_to(x, shape).copy()


def write_path_csv(path, index, fileobj):
    """Write trajectory ``index`` of a SamplePath batch as CSV.

    Columns: t, then the element entries (row-major for matrices), then
    log_phi filled only on the final row.
    """
    pts = path.points[index]
    flat = pts.reshape(pts.shape[0], -1)
    ncol = flat.shape[1]
    if ncol == 9:
        names = [f"m{i}{j}" for i in range(3) for j in range(3)]
    else:
        names = [f"x{i}" for i in range(ncol)]
    fileobj.write("t," + ",".join(names) + ",log_phi\n")
    for row in range(flat.shape[0]):
        cells = [f"{path.grid.t[row]:.10g}"]
        cells += [f"{val:.12g}" for val in flat[row]]
        cells.append(f"{path.log_phi[index]:.12g}" if row == flat.shape[0] - 1 else "")
        fileobj.write(",".join(cells) + "\n")
