"""Fitting gradient-descent steps onto a persistently exciting reference system.

A GD step ``theta^{k+1} = theta^k - eta * grad`` is read as one unit-time
step of the linear flow ``d/dt Gamma = -Phi Phi^T (Gamma - theta*)``, i.e.

    theta^{k+1} - theta* = expm(-Phi Phi^T) (theta^k - theta*).

With ``x = theta^k - theta^{k+1}`` and ``e = theta^k - theta*`` the
construction takes ``v1 = (x - delta e) / ||x - delta e||`` and ``v2`` the
unit part of ``e`` orthogonal to ``v1``. Then ``x`` lies in span(v1, v2) with
coordinates ``(a1, a2) = (v1.x, v2.x)`` and ``e`` with ``(b1, b2)``, and
``a2 = delta * b2``. Any orthonormal completion ``U`` and
``sigma = (a1/b1, a2/b2, c_fill, ...)`` give ``U diag(sigma) U^T e = x``,
which is the step above once ``Phi = U diag(sqrt(-ln(1 - sigma))) U^T``.
Everything hinges on every ``sigma_i`` lying in (0, 1), and that is where
the acuteness condition ``(theta^k - theta^{k+1}) . (theta^{k+1} - theta*) >= 0``
and ``||x|| < ||e||`` come in.

For ``d`` above :data:`REDUCE_ABOVE` the construction runs in the
3-dimensional subspace spanned by ``x``, ``e`` and one fill direction; on the
orthogonal complement ``sigma = c_fill`` is implied.
"""
import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidInput, NotPersistentlyExciting, NotPoEStep
from .numcore import as_symmetric, as_vector, complete_basis, sym_eig, sym_expm

COLINEAR_TOL = 1e-12
REDUCE_ABOVE = 512
MONITOR_COLUMNS = ("epoch", "inner_product", "acute", "constructed", "residual", "min_eig", "mu1")


@dataclass
class StepTriple:
    theta_k: np.ndarray
    theta_k1: np.ndarray
    theta_star: np.ndarray
    converged: bool = False

    def __post_init__(self):
        self.theta_k = as_vector(self.theta_k, "theta_k")
        self.theta_k1 = as_vector(self.theta_k1, "theta_k1")
        self.theta_star = as_vector(self.theta_star, "theta_star")
        if not (len(self.theta_k) == len(self.theta_k1) == len(self.theta_star)):
            raise InvalidInput("step vectors must have equal length")
        if np.array_equal(self.theta_k, self.theta_k1):
            raise InvalidInput("theta_k == theta_k1 is not a step")
        if not self.converged and np.array_equal(self.theta_k1, self.theta_star):
            raise InvalidInput("theta_k1 == theta_star; pass converged=True for a final step")

    @property
    def dim(self):
        return len(self.theta_k)


@dataclass
class ProofConstruction:
    """Artifacts of one step's construction.

    ``U``, ``sigma``, ``lam`` and ``phi`` are expressed in the coordinates of
    ``basis`` (a ``(d, m)`` array with orthonormal columns) when the step was
    reduced, otherwise in the standard basis. ``v1`` is always in ``R^d``.
    """

    v1: np.ndarray
    U: np.ndarray
    sigma: np.ndarray
    phi: np.ndarray
    a1: float
    b1: float
    a2: float
    b2: float
    delta: float
    c_fill: float
    lam: np.ndarray = None
    colinear: bool = False
    basis: np.ndarray = field(default=None, repr=False)
    residual: float = None

    @property
    def reduced(self):
        return self.basis is not None

    @property
    def gram(self):
        return self.phi @ self.phi.T

    @property
    def min_eig(self):
        lo = float(np.min(self.lam))
        # the complement of a reduced construction carries -ln(1 - c_fill)
        return min(lo, -math.log1p(-self.c_fill)) if self.reduced else lo

    @property
    def max_eig(self):
        hi = float(np.max(self.lam))
        return max(hi, -math.log1p(-self.c_fill)) if self.reduced else hi


@dataclass
class PoECertificate:
    mu1: float
    mu2: float
    T0: float
    min_eig: float
    fit_residual: float
    ges_rate: float

    def __post_init__(self):
        if not 0 < self.mu1 <= self.mu2:
            raise InvalidInput("need 0 < mu1 <= mu2")
        if not self.fit_residual >= 0:
            raise InvalidInput("fit_residual must be non-negative")


def check_acuteness(t):
    """Inner product ``(theta^k - theta^{k+1}) . (theta^{k+1} - theta*)`` and whether it is >= 0."""
    inner = float(np.dot(t.theta_k - t.theta_k1, t.theta_k1 - t.theta_star))
    return inner >= 0.0, inner


def construct_phi(t, delta=1e-8, c_fill=0.5, reduce_above=REDUCE_ABOVE):
    """Build ``Phi`` so that ``expm(-Phi Phi^T)`` maps ``theta^k - theta*`` onto ``theta^{k+1} - theta*``.

    Raises :class:`NotPoEStep` when the step is not acute, overshoots
    (``||x|| >= ||e||``), has already converged, or some ``sigma_i`` falls
    outside (0, 1).
    """
    if not 0 < delta < 1e-3:
        raise InvalidInput("delta must lie in (0, 1e-3)")
    if not 0 < c_fill < 1:
        raise InvalidInput("c_fill must lie in (0, 1)")
    if t.converged and np.array_equal(t.theta_k1, t.theta_star):
        raise NotPoEStep("step lands exactly on theta*; no finite Phi reproduces it")
    holds, inner = check_acuteness(t)
    if not holds:
        raise NotPoEStep(f"step is not acute (inner product {inner:.3e})")
    x = t.theta_k - t.theta_k1
    e = t.theta_k - t.theta_star
    nx, ne = np.linalg.norm(x), np.linalg.norm(e)
    if not nx < ne:
        raise NotPoEStep(f"step length {nx:.3e} is not below the distance {ne:.3e} to theta*")

    basis = None
    if t.dim > reduce_above:
        basis = complete_basis([x, e], dim=t.dim, n_columns=3)
        x, e = basis.T @ x, basis.T @ e
    m = len(x)

    w = x - delta * e
    v1 = w / np.linalg.norm(w)
    a1, b1 = float(v1 @ x), float(v1 @ e)
    e_perp = e - b1 * v1
    colinear = np.linalg.norm(e_perp) <= COLINEAR_TOL * ne
    if colinear:
        a2 = b2 = 0.0
        U = complete_basis([v1], dim=m)
        lead = [a1 / b1]
    else:
        v2 = e_perp / np.linalg.norm(e_perp)
        b2 = float(v2 @ e)
        # v2 is orthogonal to x - delta e, so a2 = delta b2 exactly; the dot
        # product v2 . x loses that to rounding once e is nearly parallel to x
        a2 = delta * b2
        U = complete_basis([v1, v2], dim=m)
        lead = [a1 / b1, a2 / b2]
    sigma = np.full(m, float(c_fill))
    sigma[:len(lead)] = lead
    if not (np.all(sigma > 0.0) and np.all(sigma < 1.0)):
        raise NotPoEStep(f"sigma {np.array2string(sigma[:len(lead)])} leaves (0, 1)")
    lam = -np.log1p(-sigma)
    phi = (U * np.sqrt(lam)) @ U.T
    phi = 0.5 * (phi + phi.T)
    v1_full = v1 if basis is None else basis @ v1
    return ProofConstruction(v1=v1_full, U=U, sigma=sigma, phi=phi, a1=a1, b1=b1, a2=a2, b2=b2,
                             delta=float(delta), c_fill=float(c_fill), lam=lam, colinear=bool(colinear),
                             basis=basis)


def transition(pc, z):
    """Apply ``expm(-Phi Phi^T)`` of the construction to the vector ``z``."""
    z = as_vector(z, "z")
    E = sym_expm(-pc.gram)
    if pc.basis is None:
        return E @ z
    zr = pc.basis.T @ z
    inside = pc.basis @ zr
    return pc.basis @ (E @ zr) + (1.0 - pc.c_fill) * (z - inside)


def verify_discrete_fit(t, pc):
    """Relative residual of the reference-system step, ``||pred - actual|| / ||theta^k - theta*||``.

    The matrix exponential is recomputed from ``Phi Phi^T``, so this checks
    the assembled ``Phi`` rather than the ``sigma`` that produced it.
    """
    e = t.theta_k - t.theta_star
    actual = t.theta_k1 - t.theta_star
    r = float(np.linalg.norm(actual - transition(pc, e)) / np.linalg.norm(e))
    pc.residual = r
    return r


def poe_window_bounds(gram, T0=1.0):
    """``(mu1, mu2)`` of the window integral of a constant ``Phi Phi^T`` over length ``T0``."""
    if not T0 > 0:
        raise InvalidInput("T0 must be positive")
    w, _ = sym_eig(as_symmetric(gram, "gram"))
    if not w[0] > 0.0:
        raise NotPersistentlyExciting(f"Phi Phi^T is singular (min eigenvalue {w[0]:.3e})")
    return float(w[0] * T0), float(w[-1] * T0)


@dataclass
class ReferenceTrajectory:
    times: np.ndarray
    states: np.ndarray
    closed_form: np.ndarray
    endpoint_error: float
    decay_rate: float


def simulate_reference(gamma_k, theta_star, phi, steps=100, span=1.0):
    """RK4 integration of ``d/dt Gamma = -Phi Phi^T (Gamma - theta*)`` over ``[0, span]``.

    The endpoint is compared against ``theta* + expm(-span Phi Phi^T)(Gamma(0) - theta*)``.
    ``decay_rate`` is minus the least-squares slope of ``log ||Gamma(t) - theta*||``
    against ``t`` (``inf`` when the start is the equilibrium).
    """
    if steps < 2:
        raise InvalidInput("steps must be >= 2")
    g0 = as_vector(gamma_k, "gamma_k")
    star = as_vector(theta_star, "theta_star")
    phi = np.asarray(phi, dtype=np.float64)
    A = as_symmetric(phi @ phi.T, "Phi Phi^T")
    w, _ = sym_eig(A)
    if not w[0] > 0:
        raise NotPersistentlyExciting("Phi Phi^T must be positive definite")
    h = span / steps
    z = g0 - star
    states = [z.copy()]
    for _ in range(steps):
        k1 = -A @ z
        k2 = -A @ (z + 0.5 * h * k1)
        k3 = -A @ (z + 0.5 * h * k2)
        k4 = -A @ (z + h * k3)
        z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        states.append(z.copy())
    states = np.array(states)
    times = np.linspace(0.0, span, steps + 1)
    closed = star + sym_expm(-span * A) @ (g0 - star)
    err = float(np.linalg.norm(states[-1] + star - closed))
    norms = np.linalg.norm(states, axis=1)
    if norms[0] == 0.0:
        rate = math.inf
    else:
        slope = np.polyfit(times, np.log(norms), 1)[0]
        rate = float(-slope)
    return ReferenceTrajectory(times, states + star, closed, err, rate)


def certify(t, delta=1e-8, c_fill=0.5, T0=1.0, steps=100):
    """Construct, verify and simulate one step; returns a :class:`PoECertificate`."""
    pc = construct_phi(t, delta, c_fill)
    residual = verify_discrete_fit(t, pc)
    mu1, mu2 = pc.min_eig * T0, pc.max_eig * T0
    if pc.basis is None:
        mu1, mu2 = poe_window_bounds(pc.gram, T0)
        sim = simulate_reference(t.theta_k, t.theta_star, pc.phi, steps)
    else:
        sim = simulate_reference(pc.basis.T @ (t.theta_k - t.theta_star), np.zeros(pc.basis.shape[1]),
                                 pc.phi, steps)
    return PoECertificate(mu1=mu1, mu2=mu2, T0=T0, min_eig=pc.min_eig, fit_residual=residual,
                          ges_rate=sim.decay_rate)


@dataclass
class MonitorReport:
    rows: list

    @property
    def acute_fraction(self):
        return float(np.mean([r["acute"] for r in self.rows])) if self.rows else float("nan")

    @property
    def construct_fraction(self):
        return float(np.mean([r["constructed"] for r in self.rows])) if self.rows else float("nan")

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=MONITOR_COLUMNS, extrasaction="ignore")
            w.writeheader()
            for r in self.rows:
                w.writerow(r)


def monitor_run(log, theta_star=None, delta=1e-8, c_fill=0.5):
    """Acuteness and construction outcome for every consecutive snapshot pair.

    ``theta_star`` defaults to the last snapshot's parameters, the usual
    stand-in for the minimizer. Failures are recorded per row, never raised.
    Row ``epoch`` is the epoch of the later snapshot of the pair.
    """
    if len(log) == 0:
        raise InvalidInput("log is empty")
    thetas = log.thetas
    star = thetas[-1] if theta_star is None else as_vector(theta_star, "theta_star")
    rows = []
    for i in range(len(thetas) - 1):
        a, b = thetas[i], thetas[i + 1]
        inner = float(np.dot(a - b, b - star))
        row = {"epoch": int(log.records[i + 1].epoch), "inner_product": inner, "acute": inner >= 0.0,
               "constructed": False, "residual": float("nan"), "min_eig": float("nan"),
               "mu1": float("nan"), "reason": ""}
        try:
            t = StepTriple(a, b, star, converged=np.array_equal(b, star))
            pc = construct_phi(t, delta, c_fill)
            row["residual"] = verify_discrete_fit(t, pc)
            row["min_eig"] = pc.min_eig
            row["mu1"] = pc.min_eig  # unit window
            row["constructed"] = True
        except (InvalidInput, NotPoEStep) as exc:
            row["reason"] = str(exc)
        rows.append(row)
    return MonitorReport(rows)
