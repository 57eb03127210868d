"""Dense one- and two-pair density operators.

States are plain ``numpy`` complex arrays: 4x4 for one pair on (A, B) and
16x16 for two pairs on (A, B, A', B').  The computational basis index of
``|a b a' b'>`` is ``8a + 4b + 2a' + b'``, so a pair index is ``2a + b`` and
``np.kron(rho_AB, rho_A'B')`` is the joint state.
"""

from __future__ import annotations

import numpy as np

SQRT2 = np.sqrt(2.0)

I2 = np.eye(2, dtype=np.complex128)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=np.complex128)
# |0> is the memory ground state: sigma_minus |1> = |0>, sigma_minus |0> = 0.
SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=np.complex128)

HERMITIAN_ATOL = 1e-12
TRACE_ATOL = 1e-12
PSD_ATOL = 1e-10
EIG_FLOOR = 1e-14

BELL_KINDS = ("psi-", "psi+", "phi-", "phi+")


class InvalidStateError(ValueError):
    """A matrix failed a density-operator invariant."""


def bell_state(kind):
    """Bell state vector in the (A, B) ordering.

    ``kind`` is one of ``"psi-"``, ``"psi+"``, ``"phi-"``, ``"phi+"``.
    """
    v = np.zeros(4, dtype=np.complex128)
    key = kind.lower().replace("ψ", "psi").replace("φ", "phi").replace("−", "-")
    if key == "psi-":
        v[1], v[2] = 1, -1
    elif key == "psi+":
        v[1], v[2] = 1, 1
    elif key == "phi-":
        v[0], v[3] = 1, -1
    elif key == "phi+":
        v[0], v[3] = 1, 1
    else:
        raise ValueError(f"unknown Bell state {kind!r}; expected one of {BELL_KINDS}")
    return v / SQRT2


SINGLET = bell_state("psi-")
SINGLET_PROJECTOR = np.outer(SINGLET, SINGLET.conj())
TRIPLET_PROJECTOR = np.eye(4, dtype=np.complex128) - SINGLET_PROJECTOR


def projector(vec):
    vec = np.asarray(vec, dtype=np.complex128)
    return np.outer(vec, vec.conj())


def check_density(rho, *, name="rho"):
    """Raise :class:`InvalidStateError` unless ``rho`` is Hermitian, unit trace and PSD."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise InvalidStateError(f"{name} must be a square matrix, got shape {rho.shape}")
    herm = np.max(np.abs(rho - rho.conj().T))
    if herm > HERMITIAN_ATOL:
        raise InvalidStateError(f"{name} is not Hermitian (max deviation {herm:.3e})")
    tr = np.trace(rho)
    if abs(tr - 1.0) > TRACE_ATOL:
        raise InvalidStateError(f"{name} has trace {tr.real:.15g}, expected 1")
    lo = np.linalg.eigvalsh(rho)[0]
    if lo < -PSD_ATOL:
        raise InvalidStateError(f"{name} is not positive semidefinite (min eigenvalue {lo:.3e})")
    return rho


def is_density(rho):
    try:
        check_density(rho)
    except InvalidStateError:
        return False
    return True


def _check_fidelity_param(F):
    if not 0.0 <= F <= 1.0:
        raise ValueError(f"fidelity parameter must lie in [0, 1], got {F}")


def werner_state(F):
    """``F |psi-><psi-| + (1 - F)/3 (I - |psi-><psi-|)``."""
    _check_fidelity_param(F)
    return F * SINGLET_PROJECTOR + (1.0 - F) / 3.0 * TRIPLET_PROJECTOR


def singlet_fidelity(rho):
    """<psi-| rho |psi->; accepts a single 4x4 state or a stack ``(n, 4, 4)``."""
    rho = np.asarray(rho)
    f = np.real(np.einsum("i,...ij,j->...", SINGLET.conj(), rho, SINGLET))
    # round-off can push pure states a few ulp past 1
    return np.clip(f, 0.0, 1.0)


def _psd_sqrt(rho):
    w, v = np.linalg.eigh(rho)
    # eigenvalues at round-off level are zero; their square roots would be ~1e-8 noise
    w = np.where(w > EIG_FLOOR * max(w[-1], 1.0), w, 0.0)
    return (v * np.sqrt(w)) @ v.conj().T


def uhlmann_fidelity(rho, sigma):
    """``(Tr sqrt(sqrt(rho) sigma sqrt(rho)))**2`` via Hermitian eigendecompositions.

    Evaluated as the squared nuclear norm of ``sqrt(rho) sqrt(sigma)``, which
    equals the trace formula and stays symmetric for rank-deficient inputs.
    """
    rho = np.asarray(rho, dtype=np.complex128)
    sigma = np.asarray(sigma, dtype=np.complex128)
    if rho.shape != sigma.shape:
        raise ValueError(f"dimension mismatch: {rho.shape} vs {sigma.shape}")
    sv = np.linalg.svd(_psd_sqrt(rho) @ _psd_sqrt(sigma), compute_uv=False)
    return float(min(1.0, np.sum(sv) ** 2))


def haar_unitary(dim, rng=None, size=None):
    """Haar-distributed U(dim) matrix (or a stack of ``size`` of them).

    QR of a complex Ginibre matrix, with column ``j`` rephased so that the
    triangular factor has a real positive diagonal.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    rng = np.random.default_rng(rng)
    shape = (dim, dim) if size is None else (size, dim, dim)
    z = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / SQRT2
    q, r = np.linalg.qr(z)
    d = np.diagonal(r, axis1=-2, axis2=-1)
    phases = d / np.abs(d)
    return q * phases[..., None, :]


def random_states_with_fidelity(F, n, rng=None):
    """Stack of ``n`` random pair states with singlet fidelity exactly ``F``.

    A uniform-simplex diagonal is rotated by Haar(4); the singlet and
    orthogonal blocks are renormalised separately and recombined with
    weights ``F`` and ``1 - F`` (cross-block terms are dropped).
    """
    _check_fidelity_param(F)
    rng = np.random.default_rng(rng)
    out = np.empty((n, 4, 4), dtype=np.complex128)
    filled = 0
    while filled < n:
        m = n - filled
        w = rng.exponential(size=(m, 4))
        w /= w.sum(axis=1, keepdims=True)
        U = haar_unitary(4, rng, size=m)
        r = np.einsum("nij,nj,nkj->nik", U, w, U.conj())
        par = SINGLET_PROJECTOR @ r @ SINGLET_PROJECTOR
        orth = TRIPLET_PROJECTOR @ r @ TRIPLET_PROJECTOR
        tp = np.real(np.einsum("nii->n", par))
        to = np.real(np.einsum("nii->n", orth))
        ok = (tp > 1e-14) & (to > 1e-14)
        state = F * par[ok] / tp[ok, None, None] + (1.0 - F) * orth[ok] / to[ok, None, None]
        state = 0.5 * (state + np.conj(np.swapaxes(state, -1, -2)))
        k = state.shape[0]
        out[filled:filled + k] = state
        filled += k
    if F == 1.0:
        out[:] = SINGLET_PROJECTOR
    return out


def random_state_with_fidelity(F, rng=None):
    """Single random pair state with ``singlet_fidelity == F``; see :func:`random_states_with_fidelity`."""
    return random_states_with_fidelity(F, 1, rng)[0]


def embed_pair_pair(rho1, rho2):
    """Joint 16x16 state of pair (A, B) in ``rho1`` and pair (A', B') in ``rho2``."""
    return np.kron(rho1, rho2)


def partial_trace_second_pair(rho16):
    """Trace out (A', B') from a 16x16 joint state."""
    return np.einsum("ajbj->ab", np.asarray(rho16).reshape(4, 4, 4, 4))


def conjugate(U, rho):
    """``U rho U^dag``; broadcasts over leading stack dimensions."""
    return U @ rho @ np.conj(np.swapaxes(U, -1, -2))


def hermitize(rho):
    return 0.5 * (rho + np.conj(np.swapaxes(rho, -1, -2)))
