"""Acceptance suite: one test per criterion, one PASS/FAIL line each.

Heavy simulations (10^6 slots) are shared between criteria through
module-scoped fixtures; run with ``pytest -s tests/test_acceptance.py`` to
see the per-criterion lines.
"""

from dataclasses import replace
import itertools

import numpy as np
import pytest

from caesim import cmdp
from caesim.dpp import expected_cae
from caesim.dynamics import Channel, step, sub_kernel
from caesim.harness import PolicySpec, presets, run, source_s1, source_s2, source_s3
from caesim.sources import MarkovSource

from test_cmdp import cesaro_average, exact_policy_average, kernel_cae_expectation

PS_GRID = (0.2, 0.4, 0.6, 0.8, 1.0)
HORIZON = 1_000_000
SEED = 1


def report(name: str, ok: bool, detail: str = "") -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}"
    if detail:
        line += f": {detail}"
    print(line)
    assert ok, line


def simulate(policy_spec, ps, cost_budget=0.4, sources=None, horizon=HORIZON, v=100.0):
    base = presets()["s1"]
    if sources is not None:
        base = replace(base, sources=tuple(sources))
    cfg = replace(
        base,
        channel=Channel(ps),
        cost_budget=cost_budget,
        penalty_weight=v,
        horizon=horizon,
        seed=SEED,
        policy=policy_spec,
    )
    return run(cfg)


@pytest.fixture(scope="module")
def dpp_grid():
    """DPP on the 4-state source, V=100, C_max=0.4, T=10^6, shared by two criteria."""
    return {ps: simulate(PolicySpec("dpp"), ps) for ps in PS_GRID}


def one_slot_mc(src, i, j, sampled, ps, n, seed):
    """Vectorised independent one-slot sampler (same documented semantics)."""
    rng = np.random.default_rng(seed)
    ok = (rng.random(n) < ps) if sampled else np.zeros(n, dtype=bool)
    u = rng.random(n)
    cum = np.cumsum(src.transition[i])
    cum[-1] = 1.0
    nxt = np.searchsorted(cum, u, side="right")
    est = np.where(ok, i, j)
    caes = src.weight * src.cae[nxt, est]
    return float(caes.mean()), float(caes.std(ddof=1) / np.sqrt(n))


def test_expected_cae_oracle_equivalence():
    """Closed-form one-slot expected CAE == kernel brute force == Monte Carlo."""
    s1 = source_s1()
    worst = 0.0
    for ps in (0.4, 0.6, 1.0):
        channel = Channel(ps)
        for i in range(4):
            for j in range(4):
                for action in (0, 1):
                    got = expected_cae(((i, j),), action, [s1], channel)
                    want = kernel_cae_expectation(s1, i, j, action == 1, channel)
                    worst = max(worst, abs(got - want))
    spot_idle = expected_cae(((0, 2),), 0, [s1], Channel(0.6))
    spot_sample = expected_cae(((0, 2),), 1, [s1], Channel(0.6))

    # vectorised Monte Carlo for every combination
    mc_ok = True
    n = 1_000_000
    seed = 1000
    for ps in (0.4, 0.6, 1.0):
        channel = Channel(ps)
        for i, j, action in itertools.product(range(4), range(4), (0, 1)):
            seed += 1
            mean, se = one_slot_mc(s1, i, j, action == 1, ps, n, seed)
            exact = expected_cae(((i, j),), action, [s1], channel)
            if abs(mean - exact) > 3 * se + 1e-12:
                mc_ok = False

    # the two spot combinations also through the real stepper
    rng = np.random.default_rng(77)
    for (i, j), action, exact in [((0, 2), 0, 48.0), ((0, 2), 1, 20.4)]:
        total = sq = 0.0
        for _ in range(n):
            c = step(((i, j),), action, [s1], Channel(0.6), rng).cae
            total += c
            sq += c * c
        mean = total / n
        se = np.sqrt(max(sq / n - mean * mean, 0.0) / n)
        if abs(mean - exact) > 3 * se:
            mc_ok = False

    ok = worst <= 1e-12 and spot_idle == 48.0 and abs(spot_sample - 20.4) <= 1e-12 and mc_ok
    report(
        "Expected-CAE oracle equivalence",
        ok,
        f"max |closed-form - kernel| = {worst:.2e}, spots ({spot_idle}, {spot_sample}), MC 3-se ok={mc_ok}",
    )


def test_kernel_normalization():
    """Every sub-kernel and product-MDP row sums to 1 within 1e-10."""
    worst_sub = 0.0
    worst_row = 0.0
    scenarios = [
        ([source_s1()], 0.6, 0.4),
        ([source_s2()], 0.6, 0.4),
        ([source_s3()], 0.6, 0.4),
        ([source_s1()], 0.4, 0.4),
        ([source_s1(), source_s2(), source_s3()], 0.6, 0.8),
    ]
    for sources, ps, budget in scenarios:
        channel = Channel(ps)
        for src in sources:
            for i in range(src.num_states):
                for j in range(src.num_states):
                    for sampled in (False, True):
                        total = sum(p for _, p in sub_kernel(src, (i, j), sampled, channel))
                        worst_sub = max(worst_sub, abs(total - 1.0))
        mdp = cmdp.build_product_mdp(sources, channel, budget)
        for kernel in mdp.kernels:
            sums = np.asarray(kernel.sum(axis=1)).ravel()
            worst_row = max(worst_row, float(np.max(np.abs(sums - 1.0))))
    ok = worst_sub <= 1e-10 and worst_row <= 1e-10
    report(
        "Kernel normalization",
        ok,
        f"max sub-kernel deviation {worst_sub:.2e}, max product-row deviation {worst_row:.2e}",
    )


def test_constraint_satisfaction(dpp_grid):
    """DPP transmission frequency <= C_max + 0.005 and Z_T/T <= 1e-2 on the grid."""
    details = []
    ok = True
    for ps in PS_GRID:
        res = dpp_grid[ps]
        rate = res.final_backlog / res.horizon
        details.append(f"ps={ps}: tx={res.avg_cost:.4f}, Z_T/T={rate:.2e}")
        if res.avg_cost > 0.4 + 0.005 or rate > 1e-2:
            ok = False
    report("Constraint satisfaction (tx frequency vs p_s)", ok, "; ".join(details))


def test_policy_ordering(dpp_grid):
    """cost-free <= solved CMDP <= DPP (3 combined se) < source-agnostic."""
    s1 = source_s1()
    ok = True
    details = []
    near_freebie = None
    for ps in PS_GRID:
        dpp_res = dpp_grid[ps]
        agn_res = simulate(PolicySpec("source-agnostic"), ps)
        cf_res = simulate(PolicySpec("cost-free"), ps)
        mdp = cmdp.build_product_mdp([s1], Channel(ps), 0.4)
        solved = cmdp.bisection_solve(mdp)
        table0, _ = cmdp.relative_value_iteration(mdp, 0.0)

        # simulate the solved policy with the shared seed
        import os
        import tempfile

        with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as fh:
            path = fh.name
        cmdp.save_policy(solved, mdp, path)
        try:
            cmdp_res = simulate(PolicySpec("solved-cmdp", policy_file=path), ps)
        finally:
            os.unlink(path)

        e1 = 3 * np.hypot(cf_res.se_cae, cmdp_res.se_cae)
        e2 = 3 * np.hypot(cmdp_res.se_cae, dpp_res.se_cae)
        point_ok = (
            cf_res.avg_cae <= cmdp_res.avg_cae + e1
            and cmdp_res.avg_cae <= dpp_res.avg_cae + e2
            and dpp_res.avg_cae < agn_res.avg_cae
        )
        details.append(
            f"ps={ps}: cf={cf_res.avg_cae:.3f} cmdp={cmdp_res.avg_cae:.3f} "
            f"dpp={dpp_res.avg_cae:.3f} agn={agn_res.avg_cae:.3f}"
        )
        ok = ok and point_ok
        if ps == 1.0:
            cf_exact, _ = cmdp.evaluate_policy(mdp, table0)
            near_freebie = (
                solved.avg_cae <= 1.10 * cf_exact and solved.avg_cost <= 0.4 + 1e-9
            )
    ok = ok and bool(near_freebie)
    report(
        "Policy ordering (average CAE vs p_s)",
        ok,
        "; ".join(details) + f"; ps=1.0 within-10%-of-cost-free={near_freebie}",
    )


def test_exact_solver_oracle():
    """RVI gain equals exhaustive 16-policy enumeration on the 2-state source."""
    s2 = source_s2()
    channel = Channel(0.6)
    mdp = cmdp.build_product_mdp([s2], channel, 0.4)
    ok = True
    details = []
    for lam in (0.0, 0.5, 2.0):
        _, gain = cmdp.relative_value_iteration(mdp, lam)
        best = min(
            exact_policy_average(s2, channel, table, lam)
            for table in itertools.product((0, 1), repeat=4)
        )
        details.append(f"lambda={lam}: rvi={gain:.9f} enum={best:.9f}")
        if abs(gain - best) > 1e-6:
            ok = False
    report("Exact-solver oracle (enumeration)", ok, "; ".join(details))


def test_mixture_budget_interpolation():
    """Mixture cost interpolates to the budget exactly; selection estimator agrees."""
    s1 = source_s1()
    mixtures = 0
    ok = True
    details = []
    for budget in (0.05, 0.1, 0.2):
        mdp = cmdp.build_product_mdp([s1], Channel(0.6), budget)
        policy = cmdp.bisection_solve(mdp)
        if policy.kind != "mixture":
            continue
        mixtures += 1
        _, cost1 = cmdp.evaluate_policy(mdp, policy.tables[0])
        _, cost2 = cmdp.evaluate_policy(mdp, policy.tables[1])
        interp = policy.beta * cost1 + (1 - policy.beta) * cost2
        if abs(interp - budget) > 1e-9:
            ok = False

        episodes = 10_000
        rng = np.random.default_rng(123)
        # probe a state where the two tables disagree to identify the selection
        probe = int(np.nonzero(policy.tables[0] != policy.tables[1])[0][0])
        picks = sum(
            cmdp.mixture_act(policy, rng)(probe) == int(policy.tables[0][probe])
            for _ in range(episodes)
        )
        # estimator: empirical table frequency against each table's exact cost
        freq = picks / episodes
        est = freq * cost1 + (1 - freq) * cost2
        se = abs(cost1 - cost2) * np.sqrt(policy.beta * (1 - policy.beta) / episodes)
        if abs(est - budget) > 3 * se:
            ok = False
        details.append(
            f"C_max={budget}: beta={policy.beta:.4f} interp={interp:.10f} est={est:.4f}(3se={3*se:.4f})"
        )
    ok = ok and mixtures >= 1
    report("Mixture budget interpolation", ok, f"{mixtures} mixtures; " + "; ".join(details))


def test_baseline_calibration():
    """Source-agnostic measured frequency 0.4 +- 0.0015 at T=10^6."""
    res = simulate(PolicySpec("source-agnostic"), 0.6)
    ok = abs(res.avg_cost - 0.4) <= 0.0015
    report("Baseline calibration", ok, f"measured frequency {res.avg_cost:.5f}")


def test_multi_source_regime():
    """DPP beats the baseline for 1..3 sources; CAE grows with the source count."""
    all_sources = [source_s1(), source_s2(), source_s3()]
    dpp = {}
    agn = {}
    for k in (1, 2, 3):
        dpp[k] = simulate(PolicySpec("dpp"), 0.6, cost_budget=0.8, sources=all_sources[:k])
        agn[k] = simulate(
            PolicySpec("source-agnostic"), 0.6, cost_budget=0.8, sources=all_sources[:k]
        )
    ok = True
    for k in (1, 2, 3):
        if not dpp[k].avg_cae < agn[k].avg_cae:
            ok = False
    for res in (dpp, agn):
        for k in (1, 2):
            slackness = 3 * np.hypot(res[k].se_cae, res[k + 1].se_cae)
            if res[k + 1].avg_cae < res[k].avg_cae - slackness:
                ok = False
    detail = "; ".join(
        f"M={k}: dpp={dpp[k].avg_cae:.3f} agn={agn[k].avg_cae:.3f}" for k in (1, 2, 3)
    )
    report("Multi-source regime", ok, detail)
