"""Dense symmetric linear algebra and seeded random streams.

The eigensolver is a cyclic Jacobi iteration. It is slower than LAPACK but
simple, unconditionally convergent on symmetric input, and accurate to the
last few ulps, which is what the verification code in :mod:`poelr.poeverify`
needs.

Random streams
--------------
Every stochastic routine takes an explicit seed. :func:`make_rng` maps a
``(seed, *stream)`` tuple to an independent ``numpy.random.Generator`` backed
by the Philox-4x64 counter-based bit generator; the stream components become
the ``spawn_key`` of a ``SeedSequence``, so streams that differ in any
component are statistically independent and the same tuple always reproduces
the same sequence bit for bit. String stream components are hashed with CRC32.
"""
import math
import zlib

import numpy as np

from .exceptions import DegenerateInput, InvalidInput

JACOBI_TOL = 1e-12
MAX_SWEEPS = 100


def as_vector(x, name="x"):
    """Return ``x`` as a finite 1-D float64 array."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise InvalidInput(f"{name} must be a non-empty 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidInput(f"{name} contains non-finite entries")
    return v


def as_symmetric(a, name="A"):
    """Validate a finite square matrix and return an exactly symmetric copy."""
    m = np.array(a, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
        raise InvalidInput(f"{name} must be a non-empty square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidInput(f"{name} contains non-finite entries")
    scale = max(1.0, float(np.max(np.abs(m))))
    if np.max(np.abs(m - m.T)) > 1e-10 * scale:
        raise InvalidInput(f"{name} is not symmetric")
    return 0.5 * (m + m.T)


def _off_norm(a):
    # summed directly; subtracting the diagonal from the total cancels badly
    return float(np.linalg.norm(a - np.diag(np.diag(a))))


def sym_eig(a):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, basis)`` with eigenvalues ascending and the
    matching orthonormal eigenvectors as the columns of ``basis``, so that
    ``a == basis @ diag(eigenvalues) @ basis.T`` to rounding.
    """
    a = as_symmetric(a)
    n = a.shape[0]
    v = np.eye(n)
    fro = float(np.linalg.norm(a))
    if fro == 0.0:
        return np.zeros(n), v
    tol = JACOBI_TOL * fro
    for _ in range(MAX_SWEEPS):
        if _off_norm(a) <= tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, tau) / (abs(tau) + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                # A <- J^T A J with J the (p, q) plane rotation
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                cp = a[:, p].copy()
                cq = a[:, q].copy()
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def sym_expm(a):
    """Matrix exponential of a symmetric matrix through its eigendecomposition."""
    w, u = sym_eig(a)
    r = (u * np.exp(w)) @ u.T
    return 0.5 * (r + r.T)


def complete_basis(seed_vectors, dim=None, n_columns=None, tol=1e-12):
    """Orthonormal basis whose leading columns span the kept seed vectors.

    Seeds are orthogonalized in order by modified Gram-Schmidt (two passes).
    A seed whose residual norm is at most ``tol`` times its own norm adds no
    new direction and is dropped. The remaining columns are filled from the
    coordinate axes, taking the axis with the largest residual each time.

    ``n_columns`` limits the width of the result (default: a full square
    basis); it is how the high-dimensional code avoids ``d x d`` storage.
    Returns a ``(dim, n_columns)`` array.
    """
    seeds = [np.asarray(s, dtype=np.float64) for s in seed_vectors]
    if not seeds and dim is None:
        raise InvalidInput("need at least one seed vector or an explicit dim")
    if dim is None:
        dim = seeds[0].size
    for s in seeds:
        if s.shape != (dim,):
            raise InvalidInput(f"seed of shape {s.shape} does not live in R^{dim}")
        if not np.all(np.isfinite(s)):
            raise InvalidInput("seed vector contains non-finite entries")
    if seeds and all(not np.any(s) for s in seeds):
        raise DegenerateInput("all seed vectors are zero")
    width = dim if n_columns is None else int(n_columns)
    if not 1 <= width <= dim:
        raise InvalidInput(f"n_columns must lie in [1, {dim}]")

    cols = []

    def residual(x):
        r = x.copy()
        for _ in range(2):
            for c in cols:
                r -= (c @ r) * c
        return r

    for s in seeds:
        if len(cols) == width:
            break
        norm = np.linalg.norm(s)
        if norm == 0.0:
            continue
        r = residual(s / norm)
        rn = np.linalg.norm(r)
        if rn > tol:
            cols.append(r / rn)

    if len(cols) < width:
        if cols:
            q = np.column_stack(cols)
            # residual norm of axis e_i is sqrt(1 - ||row_i(Q)||^2)
            order = np.argsort(np.sum(q * q, axis=1), kind="stable")
        else:
            order = np.arange(dim)
        for i in order:
            if len(cols) == width:
                break
            e = np.zeros(dim)
            e[i] = 1.0
            r = residual(e)
            rn = np.linalg.norm(r)
            if rn > 1e-6:
                cols.append(r / rn)
    return np.column_stack(cols)


def stream_key(part):
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    part = int(part)
    if part < 0:
        raise InvalidInput("stream components must be non-negative")
    return part


def make_rng(seed, *stream):
    """Independent, reproducible generator for ``(seed, *stream)``."""
    seed = int(seed)
    if seed < 0:
        raise InvalidInput("seed must be a non-negative integer")
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(stream_key(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))
