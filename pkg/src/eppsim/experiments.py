"""Purify-then-idle round loops and the quantities derived from them.

Scheduling is symmetric: every round consumes two copies of the current
representative pair, and the surviving pair then idles for one classical
latency ``T_C`` under memory decoherence.  Failed rounds are not simulated;
their cost enters only through the expected pair consumption
``E = prod_i 2 / p_i``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .decoherence import IntegratorConfig, MemoryParams, evolve, evolve_batch
from .network import LinkConfig, pair_rate
from .purification import (
    MIN_SUCCESS_PROB,
    DejmpsVariant,
    Protocol,
    TwirlMode,
    bbpssw_round,
    dejmps_round,
    purify_batch,
)
from .quantum import random_states_with_fidelity, singlet_fidelity, werner_state

DEFAULT_MAX_ROUNDS = 30
DEFAULT_STATES = 1024
PLATEAU_TOL = 1e-6
# threshold comparisons forgive round-off (pure outputs land a few ulp below 1)
THRESHOLD_ATOL = 1e-12
QKD_THRESHOLD = 0.81
DQC_THRESHOLD = 0.98


def default_latencies_ms(num=51):
    return np.linspace(0.0, 50.0, num)


@dataclass(frozen=True)
class RoundRecord:
    round: int
    pre_fidelity: float
    success_prob: float
    post_fidelity: float


@dataclass
class Trajectory:
    protocol: str
    F0: float
    latency_ms: float
    mem: MemoryParams
    records: list = field(default_factory=list)

    @property
    def fidelities(self):
        return np.array([r.post_fidelity for r in self.records])

    @property
    def success_probs(self):
        return np.array([r.success_prob for r in self.records])

    @property
    def max_fidelity(self):
        return float(self.fidelities.max(initial=self.F0))

    @property
    def final_fidelity(self):
        return float(self.records[-1].post_fidelity) if self.records else self.F0


def _round(protocol, state, twirl, variant, rng):
    if Protocol(protocol) is Protocol.BBPSSW:
        return bbpssw_round(state, state, twirl=twirl, rng=rng)
    return dejmps_round(state, state, variant=variant)


def run_trajectory(protocol, F0, latency_ms, mem, max_rounds=DEFAULT_MAX_ROUNDS,
                   cfg=IntegratorConfig(), rng=None, *, twirl=TwirlMode.DETERMINISTIC,
                   variant=DejmpsVariant.CONJUGATE_B, initial_state=None, latency_multiplier=1.0):
    """Success-conditioned round recursion from ``werner_state(F0)``.

    Each round purifies two copies of the current pair, then idles the
    output for ``latency_ms * latency_multiplier`` milliseconds.
    """
    if latency_ms < 0:
        raise ValueError("latency must be non-negative")
    protocol = Protocol(protocol).value
    state = werner_state(F0) if initial_state is None else np.asarray(initial_state, dtype=np.complex128)
    if TwirlMode(twirl) is TwirlMode.HAAR_RANDOM:
        rng = np.random.default_rng(rng)
    dt = latency_ms * latency_multiplier * 1e-3
    traj = Trajectory(protocol, float(singlet_fidelity(state)), latency_ms, mem)
    for i in range(1, max_rounds + 1):
        pre = float(singlet_fidelity(state))
        out = _round(protocol, state, twirl, variant, rng)
        state = evolve(out.output, dt, mem, cfg)
        traj.records.append(RoundRecord(i, pre, out.success_prob, float(singlet_fidelity(state))))
    return traj


@dataclass(frozen=True)
class BatchTrajectory:
    """Round histories for a stack of initial states; arrays are ``(rounds, n)``."""

    initial_fidelity: np.ndarray
    success_probs: np.ndarray
    fidelities: np.ndarray


def simulate_batch(protocol, states, latency_ms, mem, max_rounds=DEFAULT_MAX_ROUNDS,
                   cfg=IntegratorConfig(), rng=None, *, twirl=TwirlMode.DETERMINISTIC,
                   variant=DejmpsVariant.CONJUGATE_B, latency_multiplier=1.0):
    """Vectorised :func:`run_trajectory` over a stack of initial states.

    A round whose success probability falls below the degeneracy floor is
    recorded with probability 0 and the pair is replaced by ``I/4``.
    """
    states = np.array(states, dtype=np.complex128, copy=True)
    n = states.shape[0]
    dt = latency_ms * latency_multiplier * 1e-3
    if TwirlMode(twirl) is TwirlMode.HAAR_RANDOM:
        rng = np.random.default_rng(rng)
    probs = np.empty((max_rounds, n))
    fids = np.empty((max_rounds, n))
    f0 = singlet_fidelity(states)
    for i in range(max_rounds):
        p, out = purify_batch(protocol, states, states, twirl=twirl, variant=variant, rng=rng)
        dead = ~(p >= MIN_SUCCESS_PROB)
        if np.any(dead):
            p = np.where(dead, 0.0, p)
            out[dead] = np.eye(4) / 4
        states = evolve_batch(out, dt, mem, cfg)
        probs[i] = p
        fids[i] = singlet_fidelity(states)
    return BatchTrajectory(f0, probs, fids)


def pair_cost(success_probs):
    """Expected consumed base pairs ``prod 2/p`` for a sequence of rounds."""
    cost = 1.0
    for p in success_probs:
        cost *= math.inf if p <= 0 else 2.0 / p
    return cost


@dataclass(frozen=True)
class EpcResult:
    threshold: float
    rounds: int
    success_probs: tuple
    expected_pairs: float
    attainable: bool


def expected_pair_consumption(protocol, F0, latency_ms, mem, F_th, max_rounds=DEFAULT_MAX_ROUNDS,
                              cfg=IntegratorConfig(), rng=None, *, twirl=TwirlMode.DETERMINISTIC,
                              variant=DejmpsVariant.CONJUGATE_B, initial_state=None,
                              latency_multiplier=1.0):
    """Rounds and expected base pairs needed to reach ``F_th``.

    At least one round is always run.  The recursion stops as unattainable
    (``expected_pairs = inf``) when a round changes the fidelity by less
    than ``1e-6`` below threshold, or after ``max_rounds`` rounds.
    """
    if not 0.0 < F_th <= 1.0:
        raise ValueError("F_th must lie in (0, 1]")
    if latency_ms < 0:
        raise ValueError("latency must be non-negative")
    state = werner_state(F0) if initial_state is None else np.asarray(initial_state, dtype=np.complex128)
    if TwirlMode(twirl) is TwirlMode.HAAR_RANDOM:
        rng = np.random.default_rng(rng)
    dt = latency_ms * latency_multiplier * 1e-3
    prev = float(singlet_fidelity(state))
    probs = []
    for i in range(1, max_rounds + 1):
        out = _round(protocol, state, twirl, variant, rng)
        state = evolve(out.output, dt, mem, cfg)
        probs.append(out.success_prob)
        f = float(singlet_fidelity(state))
        if f >= F_th - THRESHOLD_ATOL:
            return EpcResult(F_th, i, tuple(probs), pair_cost(probs), True)
        if abs(f - prev) < PLATEAU_TOL:
            break
        prev = f
    return EpcResult(F_th, len(probs), tuple(probs), math.inf, False)


def epc_from_batch(batch, F_th):
    """Per-state ``(expected_pairs, rounds)`` from a :class:`BatchTrajectory`.

    Same stopping rules as :func:`expected_pair_consumption`; unattainable
    entries have ``expected_pairs = inf``.
    """
    R, n = batch.fidelities.shape
    E = np.ones(n)
    rounds = np.zeros(n, dtype=int)
    active = np.ones(n, dtype=bool)
    reached = np.zeros(n, dtype=bool)
    prev = batch.initial_fidelity.copy()
    with np.errstate(divide="ignore"):
        factors = np.where(batch.success_probs > 0, 2.0 / batch.success_probs, np.inf)
    for i in range(R):
        f = batch.fidelities[i]
        E = np.where(active, E * factors[i], E)
        rounds = np.where(active, i + 1, rounds)
        hit = active & (f >= F_th - THRESHOLD_ATOL)
        reached |= hit
        stall = active & ~hit & (np.abs(f - prev) < PLATEAU_TOL)
        active &= ~(hit | stall)
        prev = f
    E[~reached] = np.inf
    return E, rounds


def _initial_states(F0, n_states, seed_seq):
    if n_states <= 0:
        return werner_state(F0)[None]
    return random_states_with_fidelity(F0, n_states, np.random.default_rng(seed_seq))


def _spawn(seed, n):
    root = np.random.SeedSequence(seed)
    kids = root.spawn(n + 1)
    return kids[0], kids[1:]


def _parallel_map(fn, items, workers):
    if workers is None or workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass
class FidelityGrid:
    """Mean final fidelity indexed by ``[latency, budget]``."""

    protocol: str
    F0: float
    mem: MemoryParams
    latencies_ms: np.ndarray
    budgets: np.ndarray
    fidelity: np.ndarray
    n_states: int


def fidelity_vs_budget_grid(protocol, F0, mem, latencies_ms, budgets, *,
                            max_rounds=DEFAULT_MAX_ROUNDS, n_states=DEFAULT_STATES, seed=0,
                            cfg=IntegratorConfig(), twirl=TwirlMode.DETERMINISTIC,
                            variant=DejmpsVariant.CONJUGATE_B, latency_multiplier=1.0, workers=1):
    """Fidelity reachable within an expected pair budget, per latency.

    For each initial state, the budget buys the rounds whose cumulative
    expected cost stays within it; the cell holds the fidelity after the
    last such round (``F0`` when the budget is below the first round's
    cost), averaged over ``n_states`` random initial states
    (``n_states=0`` uses the Werner state).
    """
    latencies_ms = np.asarray(latencies_ms, dtype=float)
    budgets = np.asarray(budgets, dtype=float)
    if latencies_ms.size == 0 or budgets.size == 0:
        raise ValueError("latency and budget grids must be non-empty")
    init_seed, lat_seeds = _spawn(seed, latencies_ms.size)
    states = _initial_states(F0, n_states, init_seed)

    def cell_row(k):
        b = simulate_batch(protocol, states, latencies_ms[k], mem, max_rounds, cfg,
                           np.random.default_rng(lat_seeds[k]), twirl=twirl, variant=variant,
                           latency_multiplier=latency_multiplier)
        with np.errstate(divide="ignore"):
            factors = np.where(b.success_probs > 0, 2.0 / b.success_probs, np.inf)
        cost = np.vstack([np.ones(states.shape[0]), np.cumprod(factors, axis=0)])
        fid = np.vstack([np.full(states.shape[0], float(F0)), b.fidelities])
        # cost is increasing along rounds, so the affordable rounds form a prefix
        affordable = (cost[None, :, :] <= budgets[:, None, None]).sum(axis=1) - 1
        affordable = np.maximum(affordable, 0)
        picked = np.take_along_axis(fid, affordable, axis=0)
        return picked.mean(axis=1)

    rows = _parallel_map(cell_row, range(latencies_ms.size), workers)
    return FidelityGrid(Protocol(protocol).value, F0, mem, latencies_ms, budgets,
                        np.array(rows), max(n_states, 0))


def iso_contour(grid, level):
    """Level-``level`` polylines of a :class:`FidelityGrid` (marching squares).

    Returns a list of ``(k, 2)`` arrays of ``(budget, latency_ms)`` points,
    interpolated linearly between grid nodes; empty when the level is not
    crossed.
    """
    from skimage.measure import find_contours

    values = np.asarray(grid.fidelity, dtype=float)
    if values.ndim != 2 or min(values.shape) < 2:
        return []
    lo, hi = np.nanmin(values), np.nanmax(values)
    if not lo < level < hi:
        return []
    rows = np.arange(values.shape[0])
    cols = np.arange(values.shape[1])
    lines = []
    for c in find_contours(values, level):
        lat = np.interp(c[:, 0], rows, grid.latencies_ms)
        bud = np.interp(c[:, 1], cols, grid.budgets)
        lines.append(np.column_stack([bud, lat]))
    return lines


@dataclass
class RateCurve:
    """Distillable rate ``R_pair / E`` versus latency.

    ``expected_pairs`` is the effective (harmonic-mean) consumption over
    the sampled initial states, so ``rates == pair_rate / expected_pairs``;
    ``attainable`` is False exactly where no state reaches the threshold.
    """

    protocol: str
    threshold: float
    mem: MemoryParams
    link: LinkConfig
    F0: float
    latencies_ms: np.ndarray
    rates: np.ndarray
    expected_pairs: np.ndarray
    attainable: np.ndarray
    attainable_fraction: np.ndarray
    n_states: int

    @property
    def points(self):
        return list(zip(self.latencies_ms.tolist(), self.rates.tolist()))


def distillable_rate_sweep(protocol, F_th, mem, latencies_ms, link=LinkConfig(), *, F0=0.75,
                           n_states=DEFAULT_STATES, seed=0, max_rounds=DEFAULT_MAX_ROUNDS,
                           cfg=IntegratorConfig(), twirl=TwirlMode.DETERMINISTIC,
                           variant=DejmpsVariant.CONJUGATE_B, latency_multiplier=1.0, workers=1):
    """Steady-state rate of above-threshold pairs at each latency.

    Rates are averaged over ``n_states`` random initial states of fidelity
    ``F0`` (``n_states=0`` uses the Werner state).  States that never reach
    ``F_th`` contribute rate 0.
    """
    latencies_ms = np.asarray(latencies_ms, dtype=float)
    base = pair_rate(link)
    init_seed, lat_seeds = _spawn(seed, latencies_ms.size)
    states = _initial_states(F0, n_states, init_seed)

    def per_latency(k):
        b = simulate_batch(protocol, states, latencies_ms[k], mem, max_rounds, cfg,
                           np.random.default_rng(lat_seeds[k]), twirl=twirl, variant=variant,
                           latency_multiplier=latency_multiplier)
        E, _ = epc_from_batch(b, F_th)
        return np.mean(1.0 / E), np.mean(np.isfinite(E))

    res = _parallel_map(per_latency, range(latencies_ms.size), workers)
    inv = np.array([r[0] for r in res])
    frac = np.array([r[1] for r in res])
    with np.errstate(divide="ignore"):
        eff = np.where(inv > 0, 1.0 / inv, np.inf)
    return RateCurve(Protocol(protocol).value, F_th, mem, link, F0, latencies_ms,
                     base * inv, eff, inv > 0, frac, max(n_states, 0))
