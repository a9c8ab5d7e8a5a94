"""Conditioning on fibers and point sets in homogeneous spaces.

Three guiding schemes live here:

* Fermi bridges — guide toward the nearest point of a fiber pi^{-1}(v),
  recomputed at every step.
* k-point bridges — Doob h-transform toward a finite weighted point set
  {v_i, c_i}; the drift is the q-weighted average of the single-target
  drifts and the endpoint lands on one of the v_i.
* A pseudo-marginal Metropolis-Hastings sampler over fiber points whose
  target weight q_T(x0, u) * c_u uses Monte Carlo estimates of the
  bridge constants c_u.
"""

from __future__ import annotations

import numpy as np

from . import lie_core as lc
from . import sde
from .sde import SamplePath, _broadcast_el, _alloc_points, _phi_increment
from .spaces import AbelianGroup, HomogeneousSpec


class PointTarget:
    """Conditioning on a single group element."""

    def __init__(self, v):
        self.v = np.asarray(v, dtype=float)


class FiberTarget:
    """Conditioning on the fiber over a base point of a homogeneous space."""

    def __init__(self, space, v):
        if not isinstance(space, HomogeneousSpec):
            raise TypeError("FiberTarget needs a homogeneous space")
        self.space = space
        self.v = np.asarray(v, dtype=float)


class PointSetTarget:
    """Conditioning on a finite point set with log-weights."""

    def __init__(self, points, log_c=None):
        points = np.asarray(points, dtype=float)
        if points.shape[0] == 0:
            raise ValueError("point set must be nonempty")
        if log_c is None:
            log_c = np.zeros(points.shape[0])
        log_c = np.asarray(log_c, dtype=float)
        if log_c.shape != (points.shape[0],):
            raise ValueError("log_c must have one entry per point")
        if not np.all(np.isfinite(log_c)):
            raise ValueError("log_c must be finite")
        self.points = points
        self.log_c = log_c

    def __len__(self):
        return self.points.shape[0]


def lattice_points(v, x0=0.0, spacing=2.0 * np.pi, k=5):
    """The k lattice points v + spacing*Z nearest to x0 (1-D fiber).

    Returns an array of shape (k, 1) ordered by distance to x0; ties
    broken toward the smaller coordinate.
    """
    v = float(np.asarray(v).reshape(()))
    j0 = round((x0 - v) / spacing)
    js = np.arange(j0 - k - 1, j0 + k + 2)
    pts = v + spacing * js
    order = np.lexsort((pts, np.abs(pts - x0)))
    return pts[order[:k]].reshape(k, 1)


def nearest_fiber_point(y, target):
    """Closest point of the target fiber to ``y`` in the top group."""
    return target.space.nearest_fiber_point(y, target.v)


# ---------------------------------------------------------------------------
# Fermi bridge
# ---------------------------------------------------------------------------

def sample_fermi_bridge(space, v, grid, noise, n_paths=1, x0=None, max_rounds=50):
    """Bridge guided toward the fiber over base point ``v``.

    At every step the nearest fiber point vbar is recomputed and the
    single-point guided drift log(Y^{-1} vbar)/(T - t) is applied; the
    final step pins Y_T to the current nearest fiber point.  log_phi
    accumulates the point-target weight toward the moving vbar.
    """
    spec = space.group
    n = int(n_paths)
    if x0 is None:
        x0 = spec.identity()
    x0b = _broadcast_el(spec, x0, n)
    v = np.asarray(v, dtype=float)
    vbase = np.broadcast_to(v, (n,) + v.shape[-space.base_ndim:]).copy()

    points, log_phi, ok = _run_fermi(space, x0b, vbase, grid, noise)
    n_resampled = 0
    rounds = 0
    while not np.all(ok):
        rounds += 1
        if rounds > max_rounds:
            raise lc.NumericalError(
                f"{int((~ok).sum())} fermi paths still off-branch after {max_rounds} redraws"
            )
        bad = ~ok
        n_resampled += int(bad.sum())
        pts_b, lp_b, ok_b = _run_fermi(space, x0b[bad], vbase[bad], grid, noise.child(rounds))
        points[bad] = pts_b
        log_phi[bad] = lp_b
        ok[bad] = ok_b
    return SamplePath(grid, points, log_phi, noise, n_resampled)


def _run_fermi(space, x0, vbase, grid, noise):
    spec = space.group
    n = x0.shape[0]
    handle = space.fiber_handle(vbase)
    dB = noise.increments(grid, n, spec.dim)
    dt, T, t = grid.dt, grid.T, grid.t
    x = x0.copy()
    points = _alloc_points(spec, grid, n)
    points[:, 0] = x
    log_phi = np.zeros(n)
    ok = np.ones(n, dtype=bool)
    for i in range(grid.k):
        vbar = handle.nearest(x)
        w, wok = spec.log_to_masked(x, vbar)
        ok &= wok
        if i <= grid.k - 2:
            log_phi += _phi_increment(spec, w, T - t[i], dt)
        if i == grid.k - 1:
            x = vbar
        else:
            drift = w / (T - t[i])
            x = sde.euler_heun_step(x, drift, dB[i], dt, spec)
        points[:, i + 1] = x
    log_phi = np.where(ok, log_phi, 0.0)
    return points, log_phi, ok


def project_path(path, space):
    """Base-space trajectory pi(Y_t); log_phi carries through unchanged."""
    return space.project(path.points), path.log_phi


# ---------------------------------------------------------------------------
# k-point bridge
# ---------------------------------------------------------------------------

def sample_kpoint_bridge(spec, target, grid, noise, n_paths=1, x0=None, max_rounds=50):
    """Bridge conditioned on a finite point set (Doob h-transform).

    The drift is the normalized c_i q_{T-t}(Y_t, v_i)-weighted average
    of the single-point drifts; weights are formed in log space.  On the
    final step the endpoint is pinned to a v_i drawn from the current
    weights.  With a single target point the path coincides with
    ``sample_guided_bridge`` under the same noise.
    """
    if not isinstance(target, PointSetTarget):
        target = PointSetTarget(target)
    n = int(n_paths)
    if x0 is None:
        x0 = spec.identity()
    x0b = _broadcast_el(spec, x0, n)

    points, log_phi, ok = _run_kpoint(spec, x0b, target, grid, noise)
    n_resampled = 0
    rounds = 0
    while not np.all(ok):
        rounds += 1
        if rounds > max_rounds:
            raise lc.NumericalError(
                f"{int((~ok).sum())} k-point paths still off-branch after {max_rounds} redraws"
            )
        bad = ~ok
        n_resampled += int(bad.sum())
        pts_b, lp_b, ok_b = _run_kpoint(spec, x0b[bad], target, grid, noise.child(rounds))
        points[bad] = pts_b
        log_phi[bad] = lp_b
        ok[bad] = ok_b
    return SamplePath(grid, points, log_phi, noise, n_resampled)


def _run_kpoint(spec, x0, target, grid, noise):
    n = x0.shape[0]
    kpts = len(target)
    dB = noise.increments(grid, n, spec.dim)
    dt, T, t = grid.dt, grid.T, grid.t
    x = x0.copy()
    points = _alloc_points(spec, grid, n)
    points[:, 0] = x
    log_phi = np.zeros(n)
    ok = np.ones(n, dtype=bool)
    el_nd = 2 if spec.is_matrix else 1
    vset = target.points  # (kpts,) + element shape
    for i in range(grid.k):
        # w[j] toward each target point: shape (kpts, n, dim)
        ws = np.empty((kpts, n, spec.dim))
        for j in range(kpts):
            wj, okj = spec.log_to_masked(x, _broadcast_el(spec, vset[j], n))
            ok &= okj
            ws[j] = wj
        tau = T - t[i]
        logw = target.log_c[:, None] - spec.metric.norm_sq(ws) / (2.0 * tau)
        logw = logw - _logsumexp(logw, axis=0)
        wgt = np.exp(logw)  # (kpts, n), columns sum to 1
        if i <= grid.k - 2:
            inc = np.stack(
                [_as_array(_phi_increment(spec, ws[j], tau, dt), n) for j in range(kpts)]
            )
            log_phi += np.sum(wgt * inc, axis=0)
        if i == grid.k - 1:
            pick = _sample_columns(wgt, noise)
            x = vset[pick]
        else:
            drift = np.einsum("jn,jnd->nd", wgt, ws) / tau
            x = sde.euler_heun_step(x, drift, dB[i], dt, spec)
        points[:, i + 1] = x
    log_phi = np.where(ok, log_phi, 0.0)
    return points, log_phi, ok


def _as_array(val, n):
    return np.broadcast_to(np.asarray(val, dtype=float), (n,))


def _logsumexp(a, axis):
    amax = np.max(a, axis=axis, keepdims=True)
    out = amax + np.log(np.sum(np.exp(a - amax), axis=axis, keepdims=True))
    return out


def _sample_columns(wgt, noise):
    """Draw one row index per column of a column-stochastic matrix."""
    cum = np.cumsum(wgt, axis=0)
    u = noise.uniform((wgt.shape[1],))
    return np.sum(u[None, :] > cum, axis=0).clip(0, wgt.shape[0] - 1)


# ---------------------------------------------------------------------------
# Metropolis-Hastings over fiber points
# ---------------------------------------------------------------------------

class MHChain:
    """Chain record: fiber coordinates, log_c estimates, accept flags."""

    def __init__(self, coords, log_c, accepted, points, proposal_scale):
        self.coords = np.asarray(coords)
        self.log_c = np.asarray(log_c, dtype=float)
        self.accepted = np.asarray(accepted, dtype=bool)
        self.points = np.asarray(points, dtype=float)
        self.proposal_scale = float(proposal_scale)

    def __len__(self):
        return len(self.coords)

    @property
    def acceptance_rate(self):
        return float(np.mean(self.accepted[1:])) if len(self.accepted) > 1 else 1.0


class _S2FiberChain:
    """Fiber coordinate chain for S^2: an angle, optionally discretized."""

    def __init__(self, space, v, n_discrete=None):
        self.space = space
        self.v = np.asarray(v, dtype=float)
        self.n_discrete = int(n_discrete) if n_discrete else None

    def initial_coord(self, x0):
        near = self.space.nearest_fiber_point(x0, self.v)
        M = np.swapaxes(self.space.section(self.v), -1, -2) @ near
        s = float(np.arctan2(M[1, 0], M[0, 0]))
        return self._snap(s)

    def propose(self, s, scale, rng):
        return self._snap(s + rng.normal((), scale=scale))

    def point(self, s):
        return self.space.fiber_point(self.v, s)

    def _snap(self, s):
        s = float(np.mod(s, 2.0 * np.pi))
        if self.n_discrete is None:
            return s
        step = 2.0 * np.pi / self.n_discrete
        return float(np.mod(round(s / step), self.n_discrete)) * step


class _LatticeFiberChain:
    """Fiber coordinate chain over a truncated 1-D lattice."""

    def __init__(self, points):
        self.values = np.sort(np.asarray(points, dtype=float).reshape(-1))
        self.spacing = float(np.min(np.diff(self.values))) if len(self.values) > 1 else 1.0

    def initial_coord(self, x0):
        x0 = float(np.asarray(x0).reshape(()))
        return float(self.values[np.argmin(np.abs(self.values - x0))])

    def propose(self, s, scale, rng):
        cand = s + rng.normal((), scale=scale)
        idx = np.argmin(np.abs(self.values - cand))
        snapped = float(self.values[idx])
        # snapping is symmetric on the uniform lattice; proposals whose
        # nearest point lies outside the half-spacing cell are off-support
        if abs(cand - snapped) > 0.5 * self.spacing and len(self.values) > 1:
            return None
        return snapped

    def point(self, s):
        return np.array([s])


def mh_fiber_sampler(
    target,
    k,
    bridges_per_eval,
    grid,
    noise,
    proposal_scale=0.3,
    x0=None,
    n_discrete=None,
    spec=None,
):
    """Pseudo-marginal MH over fiber points (returns the full chain).

    ``target`` is a FiberTarget (S^2 fiber, coordinate = angle) or a
    PointSetTarget (discrete lattice fiber).  Each proposal u gets a
    fresh Monte Carlo estimate log c_u from ``bridges_per_eval`` guided
    bridges; the stored estimate of the current state is reused, and the
    acceptance ratio is q_T(x0, u) c_u / (q_T(x0, s) c_s).
    """
    if isinstance(target, FiberTarget):
        chain_spec = _S2FiberChain(target.space, target.v, n_discrete)
        spec = target.space.group
    elif isinstance(target, PointSetTarget):
        chain_spec = _LatticeFiberChain(target.points)
        if spec is None:
            raise ValueError("PointSetTarget needs an explicit group spec")
    else:
        raise TypeError("target must be a FiberTarget or PointSetTarget")
    if x0 is None:
        x0 = spec.identity()
    x0 = np.asarray(x0, dtype=float)

    rng = noise
    s = chain_spec.initial_coord(x0)
    log_c = _estimate_log_c(spec, x0, chain_spec.point(s), grid, noise.child(0, 0), bridges_per_eval)
    log_w = _log_target_weight(spec, x0, chain_spec.point(s), grid.T) + log_c

    coords = [s]
    log_cs = [log_c]
    accepted = [True]
    points = [chain_spec.point(s)]
    for it in range(1, int(k)):
        u = chain_spec.propose(s, proposal_scale, rng)
        took = False
        if u is not None:
            log_c_u = _estimate_log_c(
                spec, x0, chain_spec.point(u), grid, noise.child(1, it), bridges_per_eval
            )
            log_w_u = _log_target_weight(spec, x0, chain_spec.point(u), grid.T) + log_c_u
            if np.log(rng.uniform(())) < log_w_u - log_w:
                s, log_c, log_w = u, log_c_u, log_w_u
                took = True
        coords.append(s)
        log_cs.append(log_c)
        accepted.append(took)
        points.append(chain_spec.point(s))
    return MHChain(coords, log_cs, accepted, points, proposal_scale)


def _log_target_weight(spec, x0, v, T):
    w = spec.log_to(x0, v)
    r2 = float(spec.metric.norm_sq(w))
    return 0.5 * np.log(spec.metric.det) - 0.5 * spec.dim * np.log(2.0 * np.pi * T) - r2 / (2.0 * T)


def _estimate_log_c(spec, x0, v, grid, noise, n_bridges):
    path = sde.sample_guided_bridge(spec, v, grid, noise, n_paths=int(n_bridges), x0=x0)
    m = np.max(path.log_phi)
    return float(m + np.log(np.mean(np.exp(path.log_phi - m))))


def write_mh_csv(chain, fileobj):
    """CSV export: iteration, fiber coordinate, log_c, accepted flag."""
    fileobj.write("iteration,coord,log_c,accepted\n")
    for i in range(len(chain)):
        fileobj.write(
            f"{i},{float(chain.coords[i]):.12g},{chain.log_c[i]:.12g},{int(chain.accepted[i])}\n"
        )
