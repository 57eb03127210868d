"""Hot batched kernels with a numba path and a pure-numpy path.

Both paths take stacks of 4x4 complex matrices shaped ``(n, 4, 4)`` and
return identical results to round-off.  The numba path is used when numba
imports cleanly and ``EPPSIM_DISABLE_NUMBA`` is unset (or ``0``).
"""

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None


def _env_disabled():
    return os.environ.get("EPPSIM_DISABLE_NUMBA", "0").strip().lower() in ("1", "true", "yes", "on")


HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and not _env_disabled()


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise a no-op decorator."""
    if numba is None:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    return numba.njit(*args, **kwargs)


def backend():
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# Lindblad right-hand side and RK4 stepping
# ---------------------------------------------------------------------------

def lindblad_rhs_numpy(rhos, jumps):
    """sum_j L rho L^dag - 1/2 {L^dag L, rho} over a stack of states."""
    jumps_dag = np.conj(np.swapaxes(jumps, -1, -2))
    decay = np.einsum("kij,kjl->il", jumps_dag, jumps)
    out = -0.5 * (decay @ rhos + rhos @ decay)
    for L, Ld in zip(jumps, jumps_dag):
        out += L @ rhos @ Ld
    return out


def rk4_evolve_numpy(rhos, jumps, dt, nsteps):
    r = np.array(rhos, dtype=np.complex128, copy=True)
    h = dt / nsteps
    for _ in range(nsteps):
        k1 = lindblad_rhs_numpy(r, jumps)
        k2 = lindblad_rhs_numpy(r + 0.5 * h * k1, jumps)
        k3 = lindblad_rhs_numpy(r + 0.5 * h * k2, jumps)
        k4 = lindblad_rhs_numpy(r + h * k3, jumps)
        r = r + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return r


@njit(cache=True, nogil=True)
def _rhs_into(r, jumps, jumps_dag, decay, out, tmp):
    d = r.shape[0]
    for i in range(d):
        for j in range(d):
            acc = 0j
            for m in range(d):
                acc += decay[i, m] * r[m, j] + r[i, m] * decay[m, j]
            out[i, j] = -0.5 * acc
    for k in range(jumps.shape[0]):
        for i in range(d):
            for j in range(d):
                acc = 0j
                for m in range(d):
                    acc += jumps[k, i, m] * r[m, j]
                tmp[i, j] = acc
        for i in range(d):
            for j in range(d):
                acc = 0j
                for m in range(d):
                    acc += tmp[i, m] * jumps_dag[k, m, j]
                out[i, j] += acc


@njit(cache=True, nogil=True)
def _rk4_numba(rhos, jumps, jumps_dag, decay, dt, nsteps):
    n, d = rhos.shape[0], rhos.shape[1]
    result = np.empty_like(rhos)
    h = dt / nsteps
    r = np.empty((d, d), dtype=np.complex128)
    stage = np.empty((d, d), dtype=np.complex128)
    k1 = np.empty((d, d), dtype=np.complex128)
    k2 = np.empty((d, d), dtype=np.complex128)
    k3 = np.empty((d, d), dtype=np.complex128)
    k4 = np.empty((d, d), dtype=np.complex128)
    tmp = np.empty((d, d), dtype=np.complex128)
    for b in range(n):
        r[:, :] = rhos[b]
        for _ in range(nsteps):
            _rhs_into(r, jumps, jumps_dag, decay, k1, tmp)
            for i in range(d):
                for j in range(d):
                    stage[i, j] = r[i, j] + 0.5 * h * k1[i, j]
            _rhs_into(stage, jumps, jumps_dag, decay, k2, tmp)
            for i in range(d):
                for j in range(d):
                    stage[i, j] = r[i, j] + 0.5 * h * k2[i, j]
            _rhs_into(stage, jumps, jumps_dag, decay, k3, tmp)
            for i in range(d):
                for j in range(d):
                    stage[i, j] = r[i, j] + h * k3[i, j]
            _rhs_into(stage, jumps, jumps_dag, decay, k4, tmp)
            for i in range(d):
                for j in range(d):
                    r[i, j] += (h / 6.0) * (k1[i, j] + 2.0 * k2[i, j] + 2.0 * k3[i, j] + k4[i, j])
        result[b] = r
    return result


def rk4_evolve_numba(rhos, jumps, dt, nsteps):
    rhos = np.ascontiguousarray(rhos, dtype=np.complex128)
    jumps = np.ascontiguousarray(jumps, dtype=np.complex128)
    jumps_dag = np.ascontiguousarray(np.conj(np.swapaxes(jumps, -1, -2)))
    decay = np.ascontiguousarray(np.einsum("kij,kjl->il", jumps_dag, jumps))
    return _rk4_numba(rhos, jumps, jumps_dag, decay, float(dt), int(nsteps))


# ---------------------------------------------------------------------------
# Bilateral XOR + matching-outcome post-selection + trace over (A', B')
# ---------------------------------------------------------------------------
#
# With joint index 8a + 4b + 2a' + b', keeping outcome (x, x) on the target
# pair after BXOR leaves the source-pair block
#     out[s, t] = r1[s, t] * (r2[s, t] + r2[s ^ 3, t ^ 3])
# (s = 2a + b); i.e. a Hadamard product with r2 + (X(x)X) r2 (X(x)X).

_FLIP = np.array([3, 2, 1, 0])


def bxor_postselect_numpy(r1, r2):
    """Return (success probability, unnormalised kept-pair state) per batch entry."""
    kernel = r2 + r2[:, _FLIP][:, :, _FLIP]
    out = r1 * kernel
    p = np.real(np.einsum("nii->n", out))
    return p, out


@njit(cache=True, nogil=True)
def _bxor_numba(r1, r2):
    n = r1.shape[0]
    out = np.empty_like(r1)
    p = np.empty(n, dtype=np.float64)
    for b in range(n):
        acc = 0.0
        for s in range(4):
            for t in range(4):
                v = r1[b, s, t] * (r2[b, s, t] + r2[b, s ^ 3, t ^ 3])
                out[b, s, t] = v
            acc += out[b, s, s].real
        p[b] = acc
    return p, out


def bxor_postselect_numba(r1, r2):
    return _bxor_numba(np.ascontiguousarray(r1, dtype=np.complex128),
                       np.ascontiguousarray(r2, dtype=np.complex128))


def rk4_evolve(rhos, jumps, dt, nsteps):
    if USE_NUMBA:
        return rk4_evolve_numba(rhos, jumps, dt, nsteps)
    return rk4_evolve_numpy(rhos, jumps, dt, nsteps)


def bxor_postselect(r1, r2):
    if USE_NUMBA:
        return bxor_postselect_numba(r1, r2)
    return bxor_postselect_numpy(r1, r2)
