"""Noisy gradient-tracking engine over a weighted digraph pair.

One iteration, for every agent i simultaneously:

  1. perturb:    xb_i = x_i + zeta_i,   yb_i = y_i + eta_i
                 (coordinatewise Laplace noise, scales from the schedule)
  2. broadcast / receive the perturbed values along the two graphs
  3. state:      x_i <- (1 - a * sum_j R_ij) x_i + a * sum_j R_ij xb_j - c * y_i
  4. sample:     m distinct dataset indices, uniformly without replacement
  5. gradient:   g_i <- mean of the sampled per-sample gradients at the new x_i
  6. tracking:   y_i <- (1 - b * sum_j C_ji) y_i + b * sum_j C_ij yb_j
                        + g_i(new) - g_i(old)

Stacked over agents, steps 3 and 6 read

  x+ = ((I - a L1) ⊗ I_d) x + a (R ⊗ I_d) zeta - c y
  y+ = ((I - b L2) ⊗ I_d) y + b (C ⊗ I_d) eta + g+ - g

which is the form the equivalence tests check against.  With all noise off,
1ᵀ y_k = 1ᵀ g_k holds exactly for every k by telescoping from y_0 = g_0.

Randomness is counter-based: every Laplace block and every index draw comes
from a fresh Philox stream keyed by (seed, agent, iteration, role), so the
trajectory is independent of evaluation order and identical across reruns.
"""

from __future__ import annotations

import math
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .graphs import GraphPair, SpectralConstants, spectral_constants
from .objectives import Objective
from .schemes import Rates, SchemeParams, rates_at

__all__ = [
    "EngineState",
    "IterationRecord",
    "Trajectory",
    "EnsembleResult",
    "ConfigError",
    "DivergenceError",
    "keyed_generator",
    "laplace_sample",
    "laplace_vector",
    "sample_indices",
    "perturb",
    "initialize",
    "step",
    "run",
    "run_ensemble",
    "compact_step",
]

ROLE_X0 = 0
ROLE_ZETA = 1
ROLE_ETA = 2
ROLE_SAMPLES = 3

DIVERGENCE_LIMIT = 1e12

_KEY_AGENT_BITS = 16
_KEY_ROLE_BITS = 8
_KEY_ITER_BITS = 40


class ConfigError(ValueError):
    """Run configuration rejected before execution."""


class DivergenceError(RuntimeError):
    """A state entry left the admissible range; parameters are unstable."""


_local = threading.local()


def _template() -> np.random.Generator:
    gen = getattr(_local, "gen", None)
    if gen is None:
        gen = np.random.Generator(np.random.Philox(key=np.zeros(2, dtype=np.uint64)))
        _local.gen = gen
    return gen


def keyed_generator(seed: int, agent: int, k: int, role: int) -> np.random.Generator:
    """Philox stream uniquely keyed by (seed, agent, iteration, role).

    A thread-local generator is re-keyed in place (fresh counter, empty
    buffer), so repeated calls avoid re-seeding costs while staying
    independent of call order.
    """
    if not (0 <= agent < 2**_KEY_AGENT_BITS):
        raise ConfigError(f"agent id {agent} outside key range")
    if not (0 <= k < 2**_KEY_ITER_BITS):
        raise ConfigError(f"iteration index {k} outside key range")
    if not (0 <= role < 2**_KEY_ROLE_BITS):
        raise ConfigError(f"role {role} outside key range")
    word = (agent << (_KEY_ROLE_BITS + _KEY_ITER_BITS)) | (role << _KEY_ITER_BITS) | k
    gen = _template()
    gen.bit_generator.state = {
        "bit_generator": "Philox",
        "state": {
            "counter": np.zeros(4, dtype=np.uint64),
            "key": np.array([seed % 2**64, word], dtype=np.uint64),
        },
        "buffer": np.zeros(4, dtype=np.uint64),
        "buffer_pos": 4,
        "has_uint32": 0,
        "uinteger": 0,
    }
    return gen


def laplace_sample(scale: float, rng: np.random.Generator) -> float:
    """Single draw with density exp(-|t|/scale) / (2 scale); mean 0, variance 2 scale^2."""
    if scale <= 0:
        raise ValueError("Laplace scale must be positive")
    return float(rng.laplace(0.0, scale))


def laplace_vector(seed: int, agent: int, k: int, role: int, d: int, scale: float) -> np.ndarray:
    """Keyed d-dimensional Laplace block; scale 0 is the exact no-noise baseline."""
    if scale < 0:
        raise ValueError("Laplace scale must be nonnegative")
    if scale == 0.0:
        return np.zeros(d)
    return keyed_generator(seed, agent, k, role).laplace(0.0, scale, size=d)


def sample_indices(seed: int, agent: int, k: int, D: int, m: int) -> np.ndarray:
    """m distinct indices in [0, D), uniform without replacement, keyed per (agent, k).

    A single C-level Fisher-Yates shuffle is drawn and truncated; the prefix
    of a uniform permutation is a uniform ordered m-subset.
    """
    if not (1 <= m <= D):
        raise ConfigError(f"need 1 <= m <= D, got m={m}, D={D}")
    gen = keyed_generator(seed, agent, k, ROLE_SAMPLES)
    return gen.permutation(D)[:m]


@dataclass(frozen=True)
class EngineState:
    k: int
    x: np.ndarray  # (n, d)
    y: np.ndarray  # (n, d)
    g_prev: np.ndarray  # (n, d)
    seed: int


def perturb(state: EngineState, rates: Rates, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Perturbed broadcast pair (xb, yb) for iteration k.

    Noise is drawn for every agent whenever its scale is nonzero, whether or
    not anyone listens, so streams stay aligned across topologies.
    """
    n, d = state.x.shape
    xb = state.x.copy()
    yb = state.y.copy()
    for i in range(n):
        sz = rates.sigma_zeta(i, k)
        se = rates.sigma_eta(i, k)
        if sz > 0.0:
            xb[i] += laplace_vector(state.seed, i, k, ROLE_ZETA, d, sz)
        if se > 0.0:
            yb[i] += laplace_vector(state.seed, i, k, ROLE_ETA, d, se)
    return xb, yb


def _sampled_mean_gradient(obj: Objective, agent: int, x: np.ndarray, idx: np.ndarray) -> np.ndarray:
    return obj.grad_batch(x, obj.datasets[agent].samples[idx]).mean(axis=0)


def _guard(name: str, arr: np.ndarray, k: int) -> None:
    worst = float(np.abs(arr).max())
    if not math.isfinite(worst) or worst > DIVERGENCE_LIMIT:
        raise DivergenceError(
            f"{name} reached magnitude {worst:.3e} at iteration {k}; "
            "step sizes are unstable for this problem"
        )


def initialize(
    gp: GraphPair,
    rates: Rates,
    obj: Objective,
    seed: int,
    x0: np.ndarray | None = None,
) -> EngineState:
    """Draw x_0 if absent, sample the first gradient batches, and set y_0 = g_0."""
    n, d = gp.n, obj.dim
    m = rates.m_int
    if x0 is None:
        x0 = np.stack(
            [keyed_generator(seed, i, 0, ROLE_X0).uniform(-1.0, 1.0, size=d) for i in range(n)]
        )
    else:
        x0 = np.asarray(x0, dtype=float)
        if x0.shape != (n, d):
            raise ConfigError(f"x0 must have shape {(n, d)}, got {x0.shape}")
    g0 = np.stack(
        [
            _sampled_mean_gradient(obj, i, x0[i], sample_indices(seed, i, 0, obj.datasets[i].size, m))
            for i in range(n)
        ]
    )
    return EngineState(k=0, x=x0, y=g0.copy(), g_prev=g0, seed=seed)


def step(state: EngineState, gp: GraphPair, rates: Rates, obj: Objective) -> EngineState:
    """Advance one iteration: perturb, mix, resample, track."""
    k = state.k
    a, b, c = rates.alpha, rates.beta, rates.gamma
    m = rates.m_int
    xb, yb = perturb(state, rates, k)
    row = gp.row_sums_R
    col = gp.col_sums_C

    x_next = (1.0 - a * row)[:, None] * state.x + a * (gp.R @ xb) - c * state.y
    _guard("state", x_next, k + 1)

    g_next = np.empty_like(state.g_prev)
    for i in range(gp.n):
        idx = sample_indices(state.seed, i, k + 1, obj.datasets[i].size, m)
        g_next[i] = _sampled_mean_gradient(obj, i, x_next[i], idx)

    y_next = (1.0 - b * col)[:, None] * state.y + b * (gp.C @ yb) + g_next - state.g_prev
    _guard("tracking", y_next, k + 1)
    return EngineState(k=k + 1, x=x_next, y=y_next, g_prev=g_next, seed=state.seed)


def compact_step(
    state: EngineState,
    gp: GraphPair,
    rates: Rates,
    obj: Objective,
) -> EngineState:
    """Same update written with the stacked mixing matrices (cross-check path).

    Uses the identical noise and sampling streams as :func:`step`, so the two
    must agree entrywise up to floating-point roundoff.
    """
    k = state.k
    a, b, c = rates.alpha, rates.beta, rates.gamma
    m = rates.m_int
    n, d = state.x.shape
    zeta = np.zeros((n, d))
    eta = np.zeros((n, d))
    for i in range(n):
        sz = rates.sigma_zeta(i, k)
        se = rates.sigma_eta(i, k)
        if sz > 0.0:
            zeta[i] = laplace_vector(state.seed, i, k, ROLE_ZETA, d, sz)
        if se > 0.0:
            eta[i] = laplace_vector(state.seed, i, k, ROLE_ETA, d, se)
    eye = np.eye(n)
    x_next = (eye - a * gp.L1) @ state.x + a * (gp.R @ zeta) - c * state.y
    g_next = np.empty_like(state.g_prev)
    for i in range(n):
        idx = sample_indices(state.seed, i, k + 1, obj.datasets[i].size, m)
        g_next[i] = _sampled_mean_gradient(obj, i, x_next[i], idx)
    y_next = (eye - b * gp.L2) @ state.y + b * (gp.C @ eta) + g_next - state.g_prev
    return EngineState(k=k + 1, x=x_next, y=y_next, g_prev=g_next, seed=state.seed)


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IterationRecord:
    k: int
    consensus_x: float
    consensus_y: float
    grad_norm_sq: np.ndarray  # (n,)
    gap: float
    samples_cum: int


@dataclass(frozen=True)
class Trajectory:
    """Post-step records for k = 1..K+1 plus the initial-state record.

    ``gap`` is measured at the v1-weighted network average, the same point the
    drift analysis tracks.
    """

    K: int
    ks: np.ndarray  # (K+1,) = 1..K+1
    consensus_x: np.ndarray
    consensus_y: np.ndarray
    grad_norm_sq: np.ndarray  # (K+1, n)
    gap: np.ndarray
    samples_cum: np.ndarray  # (K+1,) per-agent cumulative draw count
    initial: IterationRecord
    final_x: np.ndarray  # (n, d)
    seed: int

    @property
    def final_grad_norm_sq(self) -> np.ndarray:
        return self.grad_norm_sq[-1]

    def v_series(self) -> np.ndarray:
        """(K+2, 3) array of (consensus_x, consensus_y, gap) for k = 0..K+1."""
        head = np.array([[self.initial.consensus_x, self.initial.consensus_y, self.initial.gap]])
        body = np.column_stack([self.consensus_x, self.consensus_y, self.gap])
        return np.vstack([head, body])


def _metrics(
    x: np.ndarray,
    y: np.ndarray,
    sc: SpectralConstants,
    obj: Objective,
    f_star: float,
    avg_weights: np.ndarray,
) -> tuple[float, float, np.ndarray, float]:
    cx = float(np.linalg.norm(sc.W1 @ x) ** 2)
    cy = float(np.linalg.norm(sc.W2 @ y) ** 2)
    grads = (obj.global_gradient_rows(x) ** 2).sum(axis=1)
    x_bar = (avg_weights @ x) / sc.n
    gap = obj.global_value(x_bar) - f_star
    return cx, cy, grads, gap


def run(
    gp: GraphPair,
    scheme: SchemeParams,
    obj: Objective,
    K: int,
    seed: int,
    x0: np.ndarray | None = None,
    sc: SpectralConstants | None = None,
    noise_off: bool = False,
    gap_weighting: str = "weighted",
) -> Trajectory:
    """Execute K+1 update cycles from the initialization and record metrics.

    ``noise_off`` zeroes every perturbation while keeping all other streams
    (initial states, index draws) identical; this is the baseline mode.
    ``gap_weighting`` selects the network average behind the recorded gap:
    "weighted" (the v1-weighted mean the drift analysis tracks, default) or
    "uniform".
    """
    if K < 0:
        raise ConfigError("K must be nonnegative")
    if gap_weighting not in ("weighted", "uniform"):
        raise ConfigError("gap_weighting must be 'weighted' or 'uniform'")
    rates = rates_at(scheme, K)
    if noise_off:
        rates = replace(rates, noise_off=True)
    if not math.isfinite(rates.m) or rates.m_int > obj.min_dataset_size():
        raise ConfigError(
            f"sampling count m={rates.m} exceeds the smallest dataset "
            f"({obj.min_dataset_size()} samples); choose a smaller growth parameter"
        )
    if sc is None:
        sc = spectral_constants(gp)
    f_star = obj.F_star if obj.F_star is not None else 0.0
    m = rates.m_int
    avg_w = sc.v1 if gap_weighting == "weighted" else np.ones(gp.n)

    state = initialize(gp, rates, obj, seed, x0)
    cx, cy, grads, gap = _metrics(state.x, state.y, sc, obj, f_star, avg_w)
    initial = IterationRecord(0, cx, cy, grads, gap, m)

    n_rec = K + 1
    consensus_x = np.empty(n_rec)
    consensus_y = np.empty(n_rec)
    grad_norm_sq = np.empty((n_rec, gp.n))
    gap_arr = np.empty(n_rec)
    samples = np.empty(n_rec, dtype=np.int64)
    for k in range(K + 1):
        state = step(state, gp, rates, obj)
        cx, cy, grads, gap = _metrics(state.x, state.y, sc, obj, f_star, avg_w)
        consensus_x[k] = cx
        consensus_y[k] = cy
        grad_norm_sq[k] = grads
        gap_arr[k] = gap
        samples[k] = m * (k + 2)  # initialization batch plus k+1 step batches
    return Trajectory(
        K=K,
        ks=np.arange(1, K + 2),
        consensus_x=consensus_x,
        consensus_y=consensus_y,
        grad_norm_sq=grad_norm_sq,
        gap=gap_arr,
        samples_cum=samples,
        initial=initial,
        final_x=state.x,
        seed=seed,
    )


@dataclass(frozen=True)
class EnsembleResult:
    """Pointwise mean/variance of trajectory series across seeds."""

    K: int
    n_runs: int
    seeds: tuple[int, ...]
    mean_consensus_x: np.ndarray
    mean_consensus_y: np.ndarray
    mean_gap: np.ndarray
    mean_grad_norm_sq: np.ndarray  # (K+1, n)
    var_grad_norm_sq: np.ndarray
    mean_v: np.ndarray  # (K+2, 3) including the initial state
    se_v: np.ndarray
    mean_final_grad: np.ndarray  # (n,)
    se_final_grad: np.ndarray
    samples_cum: np.ndarray

    @property
    def mean_max_grad(self) -> np.ndarray:
        """Max over agents of the ensemble-mean gradient norm, per iteration."""
        return self.mean_grad_norm_sq.max(axis=1)


def _run_for_seed(args) -> Trajectory:
    gp, scheme, obj, K, seed, x0, sc, noise_off, gap_weighting = args
    return run(
        gp, scheme, obj, K, seed,
        x0=x0, sc=sc, noise_off=noise_off, gap_weighting=gap_weighting,
    )


def run_ensemble(
    gp: GraphPair,
    scheme: SchemeParams,
    obj: Objective,
    K: int,
    seeds,
    x0: np.ndarray | None = None,
    sc: SpectralConstants | None = None,
    workers: int | None = None,
    noise_off: bool = False,
    gap_weighting: str = "weighted",
) -> EnsembleResult:
    """Independent runs over a seed list, merged in seed order.

    ``workers`` defaults to the DPGT_WORKERS environment variable (serial when
    unset); results do not depend on the worker count.
    """
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ConfigError("need at least one seed")
    if sc is None:
        sc = spectral_constants(gp)
    if workers is None:
        workers = int(os.environ.get("DPGT_WORKERS", "1"))
    jobs = [(gp, scheme, obj, K, s, x0, sc, noise_off, gap_weighting) for s in seeds]
    if workers > 1 and len(seeds) > 1:
        # Threads, not processes: objectives carry closures, and every run is
        # pure with keyed RNG streams, so the merge is order-independent.
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trajectories = list(pool.map(_run_for_seed, jobs))
    else:
        trajectories = [_run_for_seed(j) for j in jobs]

    R = len(trajectories)
    grad = np.stack([t.grad_norm_sq for t in trajectories])  # (R, K+1, n)
    vs = np.stack([t.v_series() for t in trajectories])  # (R, K+2, 3)
    finals = np.stack([t.final_grad_norm_sq for t in trajectories])  # (R, n)
    ddof = 1 if R > 1 else 0
    se_scale = math.sqrt(R)
    return EnsembleResult(
        K=K,
        n_runs=R,
        seeds=tuple(seeds),
        mean_consensus_x=np.mean([t.consensus_x for t in trajectories], axis=0),
        mean_consensus_y=np.mean([t.consensus_y for t in trajectories], axis=0),
        mean_gap=np.mean([t.gap for t in trajectories], axis=0),
        mean_grad_norm_sq=grad.mean(axis=0),
        var_grad_norm_sq=grad.var(axis=0, ddof=ddof),
        mean_v=vs.mean(axis=0),
        se_v=vs.std(axis=0, ddof=ddof) / se_scale,
        mean_final_grad=finals.mean(axis=0),
        se_final_grad=finals.std(axis=0, ddof=ddof) / se_scale,
        samples_cum=trajectories[0].samples_cum,
    )
