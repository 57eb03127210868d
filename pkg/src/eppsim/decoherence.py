"""Markovian memory decoherence of stored pairs.

Each memory qubit undergoes amplitude damping (jump operator
``sqrt(1/T1) sigma_minus``) and dephasing (``sqrt(1/T2) sigma_z``).  The
Hamiltonian is proportional to the identity, so the evolution is purely
dissipative.  States are integrated with classical RK4 over ``substeps``
equal steps per interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .quantum import (
    I2,
    PSD_ATOL,
    SIGMA_MINUS,
    SIGMA_Z,
    InvalidStateError,
    hermitize,
    singlet_fidelity,
    werner_state,
)

# Representative memory platforms: (T1, T2) in seconds.
MEMORY_PRESETS = {
    "yb171": (12000.0, 4200.0),
    "er167": (600.0, 1.3),
    "ca40": (1.14, 0.5),
    "nv": (200.0, 0.5),
    "sc-cavity-a": (0.0256, 0.034),
    "sc-cavity-b": (0.0012, 0.00072),
}


class IntegrationError(RuntimeError):
    """The integrated state left the set of density operators."""


@dataclass(frozen=True)
class MemoryParams:
    """Relaxation times in seconds.  ``math.inf`` switches a channel off."""

    T1: float
    T2: float
    label: str = ""

    def __post_init__(self):
        if not (self.T1 > 0 and self.T2 > 0):
            raise ValueError(f"T1 and T2 must be positive, got T1={self.T1}, T2={self.T2}")

    @property
    def gamma1(self):
        return 1.0 / self.T1

    @property
    def gamma2(self):
        return 1.0 / self.T2

    @classmethod
    def preset(cls, name):
        try:
            T1, T2 = MEMORY_PRESETS[name]
        except KeyError:
            raise ValueError(f"unknown memory preset {name!r}; known: {sorted(MEMORY_PRESETS)}") from None
        return cls(T1, T2, label=name)

    def scaled(self, factor):
        """Both times multiplied by ``factor`` (e.g. 1/20 for a degraded memory)."""
        return replace(self, T1=self.T1 * factor, T2=self.T2 * factor,
                       label=f"{self.label}*{factor:g}" if self.label else "")


NOISELESS = MemoryParams(math.inf, math.inf, label="noiseless")


@dataclass(frozen=True)
class IntegratorConfig:
    substeps: int = 1
    validate: bool = True

    def __post_init__(self):
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ValueError(f"substeps must be a positive integer, got {self.substeps}")


def jump_operators(mem):
    """Local jump operators on the pair (A, B), stacked as ``(4, 4, 4)``.

    Swap this function to change the rate convention (e.g. a pure-dephasing
    rate ``1/T2 - 1/(2 T1)``).
    """
    g1, g2 = mem.gamma1, mem.gamma2
    ops = []
    for single, rate in ((SIGMA_MINUS, g1), (SIGMA_Z, g2)):
        ops.append(math.sqrt(rate) * np.kron(single, I2))
        ops.append(math.sqrt(rate) * np.kron(I2, single))
    return np.array(ops)


def lindblad_rhs(rho, mem):
    """d(rho)/dt for a single pair state (or stack of states)."""
    rho = np.asarray(rho, dtype=np.complex128)
    stack = rho[None] if rho.ndim == 2 else rho
    out = _kernels.lindblad_rhs_numpy(stack, jump_operators(mem))
    return out[0] if rho.ndim == 2 else out


def _finish(states, cfg):
    states = hermitize(states)
    tr = np.real(np.einsum("nii->n", states))
    states = states / tr[:, None, None]
    if cfg.validate:
        lo = np.linalg.eigvalsh(states)[:, 0]
        bad = lo < -PSD_ATOL
        if np.any(bad):
            raise IntegrationError(
                f"state lost positivity (min eigenvalue {lo.min():.3e}); "
                "step too large for these rates, increase substeps")
    return states


def evolve_batch(states, dt, mem, cfg=IntegratorConfig()):
    """Evolve a stack ``(n, 4, 4)`` of pair states for ``dt`` seconds."""
    if dt < 0:
        raise ValueError(f"dt must be non-negative, got {dt}")
    states = np.asarray(states, dtype=np.complex128)
    if dt == 0:
        return states.copy()
    if mem.gamma1 == 0 and mem.gamma2 == 0:
        return states.copy()
    raw = _kernels.rk4_evolve(states, jump_operators(mem), dt, cfg.substeps)
    return _finish(raw, cfg)


def evolve(rho, dt, mem, cfg=IntegratorConfig()):
    """Evolve one pair state for ``dt`` seconds under memory decoherence."""
    rho = np.asarray(rho, dtype=np.complex128)
    if rho.shape != (4, 4):
        raise ValueError(f"evolve acts on 4x4 pair states, got shape {rho.shape}")
    return evolve_batch(rho[None], dt, mem, cfg)[0]


def fidelity_decay_curve(mem, latencies, F0=None, *, state=None, cfg=IntegratorConfig()):
    """Singlet fidelity after idling for each latency (seconds).

    Starts from ``werner_state(F0)`` unless an explicit ``state`` is given.
    Returns a list of ``(latency, fidelity)`` pairs.
    """
    if state is None:
        if F0 is None:
            raise ValueError("give F0 or an explicit state")
        state = werner_state(F0)
    out = []
    for t in latencies:
        if t < 0:
            raise ValueError(f"latency must be non-negative, got {t}")
        out.append((t, float(singlet_fidelity(evolve(state, t, mem, cfg)))))
    return out


def convergence_report(mem, dt, nus, rounds=30, protocol="dejmps", F0=0.75):
    """Per-round fidelity deviation of each substep count from the largest one.

    Runs the purify-then-idle round loop once per entry in ``nus`` and
    returns ``{nu: {"deviations": [...], "max_deviation": float,
    "fidelities": [...]}}``.  Positivity checks are disabled here on purpose:
    diverging coarse integrators are exactly what this report is for.
    """
    from .experiments import run_trajectory

    nus = [int(n) for n in nus]
    if not nus:
        raise ValueError("nus must be non-empty")
    runs = {}
    for nu in nus:
        traj = run_trajectory(protocol, F0, dt * 1e3, mem, max_rounds=rounds,
                              cfg=IntegratorConfig(substeps=nu, validate=False))
        runs[nu] = np.array([rec.post_fidelity for rec in traj.records])
    ref = runs[max(nus)]
    report = {}
    for nu in nus:
        dev = np.abs(runs[nu] - ref)
        report[nu] = {
            "deviations": dev.tolist(),
            "max_deviation": float(dev.max(initial=0.0)),
            "fidelities": runs[nu].tolist(),
        }
    return report


__all__ = [
    "MEMORY_PRESETS",
    "NOISELESS",
    "IntegrationError",
    "IntegratorConfig",
    "InvalidStateError",
    "MemoryParams",
    "convergence_report",
    "evolve",
    "evolve_batch",
    "fidelity_decay_curve",
    "jump_operators",
    "lindblad_rhs",
]
