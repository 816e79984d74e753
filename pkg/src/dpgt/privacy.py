"""Worst-case sensitivity accounting and the cumulative privacy budget.

The published object at iteration k is the perturbed pair (xb_{i,k}, yb_{i,k}).
Two dataset collections are *adjacent* for agent i when they differ in exactly
one sample and the per-sample gradients differ by at most a constant C in the
l1 norm at every point.  Conditioned on identical published values at all
earlier iterations, swapping the differing sample can shift the pre-noise pair
at iteration k by at most (dx[k], dy[k]) in the l1 norm, where with
q_y = |1 - b * col_sum_i| and q_x = |1 - a * row_sum_i|:

  dy[0] = C / m,   dy[k] = q_y * dy[k-1] + 2C / m
  dx[0] = 0,       dx[k] = q_x * dx[k-1] + c * dy[k-1]

(the rolling form of the explicit geometric sums; the 1/m factor is the
subsampling gain from averaging m of the D samples).  The cumulative budget
after a horizon-K run is then the Laplace-mechanism composition

  eps_i = sum_k ( dx[k] / sigma_zeta(i, k) + dy[k] / sigma_eta(i, k) ).

Budgets here are always computed from these closed-form bounds.  The coupled
two-run simulator and the small-instance likelihood-ratio test below exist
only to check that realized differences never exceed the bounds and that the
observed output-distribution ratio respects exp(eps).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import (
    ROLE_X0,
    keyed_generator,
    laplace_vector,
    ROLE_ZETA,
    ROLE_ETA,
    sample_indices,
)
from .graphs import GraphPair
from .objectives import Dataset, Objective
from .schemes import SchemeParams, ValidationReport, check_budget_finiteness, rates_at

__all__ = [
    "AdjacencyError",
    "SensitivityTrace",
    "BudgetReport",
    "CoupledRunResult",
    "MicroDPReport",
    "adjacency_constant",
    "differing_index",
    "sensitivity_trace",
    "epsilon",
    "coupled_pair_run",
    "micro_dp_check",
]


class AdjacencyError(ValueError):
    """Dataset pair is not adjacent (must differ in exactly one sample)."""


def differing_index(ds: Dataset, ds_alt: Dataset) -> int:
    """Index of the single differing sample; raises when there is not exactly one."""
    if ds.samples.shape != ds_alt.samples.shape:
        raise AdjacencyError("adjacent datasets must have identical shape")
    diff = np.nonzero((ds.samples != ds_alt.samples).any(axis=1))[0]
    if diff.size == 0:
        raise AdjacencyError("datasets are identical; no differing sample")
    if diff.size > 1:
        raise AdjacencyError(f"datasets differ in {diff.size} samples, need exactly one")
    return int(diff[0])


def adjacency_constant(
    obj: Objective,
    ds: Dataset,
    ds_alt: Dataset,
    mode: str = "bound",
    xs: np.ndarray | None = None,
) -> float:
    """Gradient-difference constant C for one adjacent dataset pair.

    mode="bound" returns (2^tau + 1) * sqrt(d) * L2 * max ||xi||^tau over both
    datasets, which dominates the swap-induced l1 gradient change at every x.
    mode="empirical" instead takes the maximum of
    ||g(x, xi) - g(x, xi')||_1 over the supplied grid of points x.
    """
    l0 = differing_index(ds, ds_alt)
    if mode == "bound":
        norms = np.linalg.norm(np.vstack([ds.samples, ds_alt.samples]), axis=1)
        return float(
            (2.0**obj.tau + 1.0)
            * math.sqrt(obj.dim)
            * obj.L2_holder
            * norms.max() ** obj.tau
        )
    if mode == "empirical":
        if xs is None:
            raise ValueError("empirical mode needs a grid of points xs")
        xi, xi_alt = ds.samples[l0], ds_alt.samples[l0]
        worst = 0.0
        for x in np.atleast_2d(xs):
            worst = max(
                worst,
                float(np.abs(obj.grad(x, xi) - obj.grad(x, xi_alt)).sum()),
            )
        return worst
    raise ValueError(f"unknown mode {mode!r}")


@dataclass(frozen=True)
class SensitivityTrace:
    """Per-agent l1 shift bounds dx[k], dy[k] for k = 0..K at one horizon."""

    K: int
    C: float
    m: float
    dx: np.ndarray  # (n, K+1)
    dy: np.ndarray  # (n, K+1)
    gp: GraphPair


def sensitivity_trace(gp: GraphPair, scheme: SchemeParams, C: float, K: int) -> SensitivityTrace:
    """Rolling O(K) evaluation of the sensitivity recursions."""
    if C <= 0:
        raise ValueError("adjacency constant C must be positive")
    rates = rates_at(scheme, K)
    n = gp.n
    inv_m = 0.0 if not math.isfinite(rates.m) else 1.0 / rates.m
    q_x = np.abs(1.0 - rates.alpha * gp.row_sums_R)
    q_y = np.abs(1.0 - rates.beta * gp.col_sums_C)
    dx = np.zeros((n, K + 1))
    dy = np.zeros((n, K + 1))
    dy[:, 0] = C * inv_m
    for k in range(1, K + 1):
        dy[:, k] = q_y * dy[:, k - 1] + 2.0 * C * inv_m
        dx[:, k] = q_x * dx[:, k - 1] + rates.gamma * dy[:, k - 1]
    return SensitivityTrace(K=K, C=C, m=rates.m, dx=dx, dy=dy, gp=gp)


@dataclass(frozen=True)
class BudgetReport:
    K: int
    eps: np.ndarray  # (n,)
    increments: np.ndarray  # (n, K+1)
    finiteness: ValidationReport
    tail_order: str

    @property
    def eps_max(self) -> float:
        return float(self.eps.max())


def epsilon(trace: SensitivityTrace, scheme: SchemeParams, K: int) -> BudgetReport:
    """Cumulative budget eps_i from a sensitivity trace over the same horizon.

    A zero noise scale facing a nonzero sensitivity yields an infinite budget
    entry (reported, not raised).  Budgets are exactly linear in 1/scale.
    """
    if trace.K != K:
        raise ValueError(f"trace horizon {trace.K} does not match K={K}")
    rates = rates_at(scheme, K)
    n = trace.dx.shape[0]
    inc = np.zeros((n, K + 1))
    for i in range(n):
        for k in range(K + 1):
            total = 0.0
            for sens, scale in (
                (trace.dx[i, k], rates.sigma_zeta(i, k)),
                (trace.dy[i, k], rates.sigma_eta(i, k)),
            ):
                if sens == 0.0:
                    continue
                total += sens / scale if scale > 0.0 else math.inf
            inc[i, k] = total
    finiteness = check_budget_finiteness(scheme, trace.gp)
    return BudgetReport(
        K=K,
        eps=inc.sum(axis=1),
        increments=inc,
        finiteness=finiteness,
        tail_order=str(finiteness.derived.get("tail_order", "")),
    )


# ---------------------------------------------------------------------------
# Coupled adjacent-dataset runs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoupledRunResult:
    K: int
    dx_measured: np.ndarray  # (n, K+1) realized l1 state differences
    dy_measured: np.ndarray
    differing: dict  # agent -> differing sample index


def _mean_grad(obj: Objective, samples: np.ndarray, x: np.ndarray, idx: np.ndarray) -> np.ndarray:
    return obj.grad_batch(x, samples[idx]).mean(axis=0)


def coupled_pair_run(
    gp: GraphPair,
    scheme: SchemeParams,
    obj: Objective,
    datasets: list[Dataset],
    datasets_alt: list[Dataset],
    K: int,
    seed: int,
    x0: np.ndarray | None = None,
    forbid: dict | None = None,
) -> CoupledRunResult:
    """Two runs with pinned broadcasts, differing only through the datasets.

    Both runs consume the first run's perturbed values and the same sample
    index draws, realizing the conditioning under which the sensitivity
    recursion is stated.  ``forbid`` optionally remaps a sample index per
    agent so the differing sample is never drawn (diagnostic use).
    """
    n, d = gp.n, obj.dim
    differing = {}
    for i in range(n):
        try:
            differing[i] = differing_index(datasets[i], datasets_alt[i])
        except AdjacencyError as exc:
            if "identical" in str(exc):
                continue
            raise
    if not differing:
        pass  # identical collections are allowed; all measured differences are 0
    forbid = forbid or {}

    rates = rates_at(scheme, K)
    m = rates.m_int
    row = gp.row_sums_R
    col = gp.col_sums_C
    a, b, c = rates.alpha, rates.beta, rates.gamma

    if x0 is None:
        x0 = np.stack(
            [keyed_generator(seed, i, 0, ROLE_X0).uniform(-1.0, 1.0, size=d) for i in range(n)]
        )
    sizes = [datasets[i].size for i in range(n)]

    def draw(i: int, k: int) -> np.ndarray:
        idx = sample_indices(seed, i, k, sizes[i], m)
        if i in forbid and forbid[i] in idx:
            pool = np.setdiff1d(np.arange(sizes[i]), idx, assume_unique=False)
            if pool.size == 0:
                raise ValueError("cannot exclude an index from a full-batch draw")
            idx = idx.copy()
            idx[idx == forbid[i]] = pool[0]
        return idx

    x_a = x0.copy()
    x_b = x0.copy()
    g_a = np.empty((n, d))
    g_b = np.empty((n, d))
    for i in range(n):
        idx = draw(i, 0)
        g_a[i] = _mean_grad(obj, datasets[i].samples, x_a[i], idx)
        g_b[i] = _mean_grad(obj, datasets_alt[i].samples, x_b[i], idx)
    y_a = g_a.copy()
    y_b = g_b.copy()

    dx_meas = np.zeros((n, K + 1))
    dy_meas = np.zeros((n, K + 1))
    dx_meas[:, 0] = np.abs(x_a - x_b).sum(axis=1)
    dy_meas[:, 0] = np.abs(y_a - y_b).sum(axis=1)

    for k in range(K):
        xb = x_a.copy()
        yb = y_a.copy()
        for i in range(n):
            sz = rates.sigma_zeta(i, k)
            se = rates.sigma_eta(i, k)
            if sz > 0.0:
                xb[i] += laplace_vector(seed, i, k, ROLE_ZETA, d, sz)
            if se > 0.0:
                yb[i] += laplace_vector(seed, i, k, ROLE_ETA, d, se)
        # Both sides receive the same broadcast block xb / yb.
        x_a_next = (1.0 - a * row)[:, None] * x_a + a * (gp.R @ xb) - c * y_a
        x_b_next = (1.0 - a * row)[:, None] * x_b + a * (gp.R @ xb) - c * y_b
        g_a_next = np.empty((n, d))
        g_b_next = np.empty((n, d))
        for i in range(n):
            idx = draw(i, k + 1)
            g_a_next[i] = _mean_grad(obj, datasets[i].samples, x_a_next[i], idx)
            g_b_next[i] = _mean_grad(obj, datasets_alt[i].samples, x_b_next[i], idx)
        y_a = (1.0 - b * col)[:, None] * y_a + b * (gp.C @ yb) + g_a_next - g_a
        y_b = (1.0 - b * col)[:, None] * y_b + b * (gp.C @ yb) + g_b_next - g_b
        x_a, x_b = x_a_next, x_b_next
        g_a, g_b = g_a_next, g_b_next
        dx_meas[:, k + 1] = np.abs(x_a - x_b).sum(axis=1)
        dy_meas[:, k + 1] = np.abs(y_a - y_b).sum(axis=1)

    return CoupledRunResult(K=K, dx_measured=dx_meas, dy_measured=dy_meas, differing=differing)


# ---------------------------------------------------------------------------
# Small-instance likelihood-ratio check
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MicroDPReport:
    eps: float
    worst_ratio: float
    worst_allowance: float
    boxes_tested: int
    passed: bool


def _affine_grad_d1(obj: Objective):
    """Vectorized scalar mean-gradient as g(x, mean xi) for the built-in kinds.

    Both built-in losses have gradients affine in the sample, so the averaged
    sampled gradient depends on the draw only through the sample mean.
    """
    if obj.kind == "quadratic":
        A = obj.meta["A"]
        dvec = obj.meta["dvec"]
        q = float((A.T @ A)[0, 0])
        c0 = float((A.T @ dvec)[0])
        n = obj.n_agents

        def g(x, xibar):
            coupling = np.where(x == 0.0, 0.0, np.sign(x) / (1.0 + np.abs(x)) ** 2)
            return (q * x - c0) / n + xibar * coupling

        return g
    if obj.kind == "trig":

        def g(x, xibar):
            return 2.0 * x + (3.0 + xibar) * np.sin(2.0 * x) - 2.0 * xibar * np.sin(x)

        return g
    raise ValueError(f"no vectorized scalar gradient for kind {obj.kind!r}")


def _subset_means(rng: np.random.Generator, values: np.ndarray, m: int, trials: int) -> np.ndarray:
    """Mean of a uniform m-subset of ``values`` per trial (without replacement)."""
    D = values.shape[0]
    if m >= D:
        return np.full(trials, values.mean())
    keys = rng.random((trials, D))
    idx = np.argpartition(keys, m - 1, axis=1)[:, :m]
    return values[idx].mean(axis=1)


def micro_dp_check(
    scheme: SchemeParams,
    gp: GraphPair,
    obj: Objective,
    datasets: list[Dataset],
    datasets_alt: list[Dataset],
    K: int,
    trials: int = 10**6,
    seed: int = 20240,
    n_boxes: int = 120,
    min_hits: int = 500,
) -> MicroDPReport:
    """Monte-Carlo output-distribution ratio test on a tiny instance.

    Guards: K <= 2, scalar states, at most two agents.  The mechanism is run
    ``trials`` times per dataset collection; over a family of axis-aligned
    boxes on the differing agent's published sequence, the empirical ratio
    P(out in box | datasets) / P(out in box | datasets_alt) must not exceed
    exp(eps) beyond three binomial standard errors (both directions checked).
    """
    if K > 2:
        raise ValueError("likelihood-ratio check is limited to K <= 2")
    if obj.dim != 1:
        raise ValueError("likelihood-ratio check needs scalar states")
    if gp.n > 2:
        raise ValueError("likelihood-ratio check is limited to n <= 2")
    if trials < 10**4:
        raise ValueError("need at least 1e4 trials for stable counts")

    agent = None
    for i in range(gp.n):
        try:
            differing_index(datasets[i], datasets_alt[i])
            agent = i
            break
        except AdjacencyError:
            continue
    if agent is None:
        raise AdjacencyError("no differing sample in any agent's dataset")

    C = adjacency_constant(obj, datasets[agent], datasets_alt[agent])
    budget = epsilon(sensitivity_trace(gp, scheme, C, K), scheme, K)
    eps = float(budget.eps[agent])

    rates = rates_at(scheme, K)
    m = rates.m_int
    n = gp.n
    grad = _affine_grad_d1(obj)
    x0 = np.array(
        [float(keyed_generator(seed, i, 0, ROLE_X0).uniform(-1.0, 1.0)) for i in range(n)]
    )
    row = gp.row_sums_R
    col = gp.col_sums_C
    a, b, c = rates.alpha, rates.beta, rates.gamma

    def simulate(side: int, sample_sets: list[Dataset]) -> np.ndarray:
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(side,)))
        values = [sample_sets[i].samples[:, 0] for i in range(n)]
        x = np.tile(x0, (trials, 1))
        g = np.empty((trials, n))
        for i in range(n):
            g[:, i] = grad(x[:, i], _subset_means(rng, values[i], m, trials))
        y = g.copy()
        obs = np.empty((trials, 2 * (K + 1)))
        for k in range(K + 1):
            zeta = np.empty((trials, n))
            eta = np.empty((trials, n))
            for i in range(n):
                zeta[:, i] = rng.laplace(0.0, rates.sigma_zeta(i, k), size=trials)
                eta[:, i] = rng.laplace(0.0, rates.sigma_eta(i, k), size=trials)
            xb = x + zeta
            yb = y + eta
            obs[:, 2 * k] = xb[:, agent]
            obs[:, 2 * k + 1] = yb[:, agent]
            if k == K:
                break
            x_next = (1.0 - a * row)[None, :] * x + a * (xb @ gp.R.T) - c * y
            g_next = np.empty((trials, n))
            for i in range(n):
                g_next[:, i] = grad(x_next[:, i], _subset_means(rng, values[i], m, trials))
            y = (1.0 - b * col)[None, :] * y + b * (yb @ gp.C.T) + g_next - g
            x, g = x_next, g_next
        return obs

    obs_a = simulate(0, datasets)
    obs_b = simulate(1, datasets_alt)

    # Axis-aligned boxes from pooled quantiles over a few random coordinates.
    box_rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(99,)))
    pooled = np.vstack([obs_a[: trials // 10], obs_b[: trials // 10]])
    n_coord = obs_a.shape[1]
    worst_ratio = 0.0
    worst_allowance = math.inf
    passed = True
    tested = 0
    e_eps = math.exp(eps)
    for _ in range(n_boxes):
        n_active = int(box_rng.integers(1, min(3, n_coord) + 1))
        coords = box_rng.choice(n_coord, size=n_active, replace=False)
        mask_a = np.ones(trials, dtype=bool)
        mask_b = np.ones(trials, dtype=bool)
        for cidx in coords:
            qs = np.sort(box_rng.uniform(0.0, 1.0, size=2))
            lo, hi = np.quantile(pooled[:, cidx], qs)
            if box_rng.random() < 0.3:
                lo = -math.inf
            if box_rng.random() < 0.3:
                hi = math.inf
            mask_a &= (obs_a[:, cidx] >= lo) & (obs_a[:, cidx] <= hi)
            mask_b &= (obs_b[:, cidx] >= lo) & (obs_b[:, cidx] <= hi)
        hits_a = int(mask_a.sum())
        hits_b = int(mask_b.sum())
        if min(hits_a, hits_b) < min_hits:
            continue
        tested += 1
        p_a = hits_a / trials
        p_b = hits_b / trials
        rel_se = math.sqrt((1.0 - p_a) / hits_a + (1.0 - p_b) / hits_b)
        allowance = e_eps * (1.0 + 3.0 * rel_se)
        for ratio in (p_a / p_b, p_b / p_a):
            if ratio > worst_ratio:
                worst_ratio = ratio
                worst_allowance = allowance
            if ratio > allowance:
                passed = False
    return MicroDPReport(
        eps=eps,
        worst_ratio=worst_ratio,
        worst_allowance=worst_allowance,
        boxes_tested=tested,
        passed=passed,
    )
