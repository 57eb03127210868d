"""BBPSSW and DEJMPS recurrence rounds on pairs of stored Bell pairs.

Both protocols share the measure-and-exchange core: bilateral CNOT from the
source pair (A, B) onto the target pair (A', B'), Z measurement of the
target pair, success on matching outcomes, and a final ``sigma_y`` on A.
They differ in the local pre-measurement operation:

* BBPSSW twirls each input to Werner form, then applies ``sigma_y`` on A.
* DEJMPS applies a fixed bilateral ``pi/2`` X rotation (see
  :class:`DejmpsVariant`).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .quantum import (
    I2,
    SIGMA_X,
    SIGMA_Y,
    SQRT2,
    conjugate,
    embed_pair_pair,
    haar_unitary,
    hermitize,
    partial_trace_second_pair,
    random_states_with_fidelity,
    singlet_fidelity,
)

MIN_SUCCESS_PROB = 1e-12

U1 = (I2 + 1j * SIGMA_X) / SQRT2
U2 = (I2 - 1j * SIGMA_Y) / SQRT2
U3 = np.array([[1j, 0], [0, 1]], dtype=np.complex128)
U4 = I2.copy()
TWIRL_OPERATORS = np.array([np.kron(u, u) for u in (U1, U2, U3, U4)])
# Inner Kraus set T_j T_j (bilateral Paulis up to phase) and outer set T_1..T_3.
_TWIRL_INNER = np.array([T @ T for T in TWIRL_OPERATORS])
_TWIRL_OUTER = TWIRL_OPERATORS[:3]

Y_ON_A = np.kron(SIGMA_Y, I2)


class DegenerateRoundError(ValueError):
    """Post-selection probability too small for the output state to be defined."""


class TwirlMode(str, enum.Enum):
    DETERMINISTIC = "deterministic"
    HAAR_RANDOM = "haar_random"
    NONE = "none"


class DejmpsVariant(str, enum.Enum):
    """Local rotation applied to both pairs before the bilateral XOR.

    ``AS_WRITTEN`` uses ``u1 (x) u1``; ``CONJUGATE_B`` uses ``u1`` at A and
    ``conj(u1)`` at B.  ``CONJUGATE_B`` is the default: on two copies of
    ``werner_state(0.75)`` it gives the expected gain, while ``AS_WRITTEN``
    maps the kept pair away from the singlet (output fidelity ~0.019).
    """

    AS_WRITTEN = "as_written"
    CONJUGATE_B = "conjugate_b"


class Protocol(str, enum.Enum):
    BBPSSW = "bbpssw"
    DEJMPS = "dejmps"


def dejmps_rotation(variant=DejmpsVariant.CONJUGATE_B):
    variant = DejmpsVariant(variant)
    if variant is DejmpsVariant.AS_WRITTEN:
        return np.kron(U1, U1)
    return np.kron(U1, U1.conj())


@dataclass(frozen=True)
class RoundOutcome:
    success_prob: float
    output: np.ndarray
    input_fidelity: float
    output_fidelity: float


def deterministic_twirl(rho):
    """Kraus twirl onto Werner form; preserves the singlet fidelity.

    ``(1/12) sum_i T_i (sum_j T_j T_j rho (T_j T_j)^dag) T_i^dag`` with
    ``T_j = u_j (x) u_j``.  The inner sum is a bilateral Pauli twirl (Bell
    diagonalisation); the outer three terms average the triplet weights.
    Broadcasts over a leading stack dimension.
    """
    rho = np.asarray(rho, dtype=np.complex128)
    inner = sum(conjugate(K, rho) for K in _TWIRL_INNER)
    return sum(conjugate(T, inner) for T in _TWIRL_OUTER) / 12.0


def haar_twirl(rho, rng=None):
    """``(U (x) U) rho (U (x) U)^dag`` for one Haar(2) draw ``U``."""
    rng = np.random.default_rng(rng)
    U = haar_unitary(2, rng)
    return conjugate(np.kron(U, U), np.asarray(rho, dtype=np.complex128))


def haar_twirl_batch(states, rng):
    """Independent Haar(2) bilateral rotation for every state in the stack."""
    n = states.shape[0]
    U = haar_unitary(2, rng, size=n)
    UU = np.einsum("nij,nkl->nikjl", U, U).reshape(n, 4, 4)
    return conjugate(UU, states)


def _twirl_batch(states, mode, rng):
    mode = TwirlMode(mode)
    if mode is TwirlMode.DETERMINISTIC:
        return deterministic_twirl(states)
    if mode is TwirlMode.HAAR_RANDOM:
        if rng is None:
            raise ValueError("haar_random twirling needs an rng")
        return haar_twirl_batch(states, rng)
    return states


def measure_exchange(source, target):
    """BXOR, Z-measure (A', B'), keep matching outcomes, trace out (A', B').

    Stacks ``(n, 4, 4)`` in; returns the success probabilities and the
    normalised kept pairs *before* the final ``sigma_y`` on A.
    """
    p, kept = _kernels.bxor_postselect(source, target)
    with np.errstate(divide="ignore", invalid="ignore"):
        kept = kept / p[:, None, None]
    return p, kept


def measure_exchange_dense(joint):
    """Reference route on the explicit 16x16 joint state (one entry, no batching)."""
    mx = BXOR @ joint @ BXOR.T
    kept16 = POVM_MATCH[0] @ mx @ POVM_MATCH[0] + POVM_MATCH[1] @ mx @ POVM_MATCH[1]
    p = float(np.real(np.trace(kept16)))
    return p, partial_trace_second_pair(kept16) / p


def _cnot(control, target, nqubits=4):
    dim = 2 ** nqubits
    M = np.zeros((dim, dim))
    for i in range(dim):
        bits = [(i >> (nqubits - 1 - k)) & 1 for k in range(nqubits)]
        if bits[control]:
            bits[target] ^= 1
        j = sum(b << (nqubits - 1 - k) for k, b in enumerate(bits))
        M[j, i] = 1.0
    return M


# Qubit order (A, B, A', B') = (0, 1, 2, 3).
BXOR = _cnot(0, 2) @ _cnot(1, 3)
_Z0 = np.diag([1.0, 0.0])
_Z1 = np.diag([0.0, 1.0])
POVM_MATCH = (
    np.kron(np.eye(4), np.kron(_Z0, _Z0)),
    np.kron(np.eye(4), np.kron(_Z1, _Z1)),
)


def _run_core(pre1, pre2, local):
    """Apply ``local`` to both stacks, measure-and-exchange, undo sigma_y on A."""
    a = conjugate(local, pre1)
    b = conjugate(local, pre2)
    p, kept = measure_exchange(a, b)
    return p, hermitize(conjugate(Y_ON_A, kept))


def _outcome(p, out, rho1, rho2):
    p = float(p)
    if not p >= MIN_SUCCESS_PROB:
        raise DegenerateRoundError(f"success probability {p:.3e} below {MIN_SUCCESS_PROB:g}")
    f_in = 0.5 * (float(singlet_fidelity(rho1)) + float(singlet_fidelity(rho2)))
    return RoundOutcome(success_prob=p, output=out, input_fidelity=f_in,
                        output_fidelity=float(singlet_fidelity(out)))


def bbpssw_round(rho1, rho2, twirl=TwirlMode.DETERMINISTIC, rng=None, *, final_twirl=False):
    """One BBPSSW round on input pairs ``rho1`` (source) and ``rho2`` (target).

    ``input_fidelity`` of the outcome is the mean singlet fidelity of the two
    inputs.
    """
    rho1 = np.asarray(rho1, dtype=np.complex128)
    rho2 = np.asarray(rho2, dtype=np.complex128)
    rng = np.random.default_rng(rng) if TwirlMode(twirl) is TwirlMode.HAAR_RANDOM else rng
    w = _twirl_batch(np.stack([rho1, rho2]), twirl, rng)
    p, out = _run_core(w[:1], w[1:], Y_ON_A)
    if final_twirl:
        out = _twirl_batch(out, twirl, rng)
    return _outcome(p[0], out[0], rho1, rho2)


def dejmps_round(rho1, rho2, variant=DejmpsVariant.CONJUGATE_B):
    """One DEJMPS round; inputs need not be Werner or identical."""
    rho1 = np.asarray(rho1, dtype=np.complex128)
    rho2 = np.asarray(rho2, dtype=np.complex128)
    p, out = _run_core(rho1[None], rho2[None], dejmps_rotation(variant))
    return _outcome(p[0], out[0], rho1, rho2)


def purify_batch(protocol, source, target, *, twirl=TwirlMode.DETERMINISTIC,
                 variant=DejmpsVariant.CONJUGATE_B, rng=None):
    """Vectorised round over stacks; returns ``(success_probs, outputs)``.

    No degeneracy check: callers inspect the probabilities.
    """
    protocol = Protocol(protocol)
    if protocol is Protocol.BBPSSW:
        mode = TwirlMode(twirl)
        if mode is TwirlMode.HAAR_RANDOM:
            rng = np.random.default_rng(rng)
        # Draw twirls for source and target in one call so the stream layout is fixed.
        both = _twirl_batch(np.concatenate([source, target]), mode, rng)
        n = source.shape[0]
        return _run_core(both[:n], both[n:], Y_ON_A)
    return _run_core(source, target, dejmps_rotation(variant))


def analytic_bbpssw(F):
    """Closed-form BBPSSW map for Werner inputs: ``(F', success probability)``."""
    if not 0.0 <= F <= 1.0:
        raise ValueError(f"F must lie in [0, 1], got {F}")
    q = (1.0 - F) / 3.0
    denom = F * F + 2.0 * F * (1.0 - F) / 3.0 + 5.0 * q * q
    return (F * F + q * q) / denom, denom


@dataclass(frozen=True)
class ProtocolDelta:
    """Monte-Carlo mean differences DEJMPS minus BBPSSW, with standard errors."""

    delta_fidelity: float
    delta_success: float
    stderr_fidelity: float
    stderr_success: float
    samples: int

    def __iter__(self):
        yield self.delta_fidelity
        yield self.delta_success


def protocol_delta(F, samples, rng=None, *, twirl=TwirlMode.HAAR_RANDOM,
                   variant=DejmpsVariant.CONJUGATE_B, independent_inputs=False):
    """Mean gain of DEJMPS over BBPSSW on random states of fidelity ``F``.

    Each sample draws one random state and feeds two copies to both
    protocols (``independent_inputs=True`` draws a separate target state).
    Unpacks as ``(delta_fidelity, delta_success)``.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(rng)
    src = random_states_with_fidelity(F, samples, rng)
    tgt = random_states_with_fidelity(F, samples, rng) if independent_inputs else src
    pd, od = purify_batch(Protocol.DEJMPS, src, tgt, variant=variant)
    pb, ob = purify_batch(Protocol.BBPSSW, src, tgt, twirl=twirl, rng=rng)
    dF = singlet_fidelity(od) - singlet_fidelity(ob)
    dp = pd - pb
    root = np.sqrt(samples)
    sf = float(dF.std(ddof=1) / root) if samples > 1 else 0.0
    sp = float(dp.std(ddof=1) / root) if samples > 1 else 0.0
    return ProtocolDelta(float(dF.mean()), float(dp.mean()), sf, sp, samples)
