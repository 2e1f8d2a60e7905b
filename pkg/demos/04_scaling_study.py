"""Fuzzer versus agent as programs grow.

A one-shot random fuzzer must guess a whole leaking program at once, so its
programs-to-leak count grows steeply with program size. The agent builds
programs step by step against shaped rewards and barely notices the size.
Writes the comparison as scaling.csv next to this script.
"""

import statistics
from dataclasses import replace
from pathlib import Path

from leaklab.harness import (
    ExperimentConfig,
    expected_fuzz_count,
    fixture_trainer_config,
    fuzz_campaign,
    loglog_slope,
    planted_fixture,
    rl_first_leak_study,
    rows_to_csv,
    scaling_action_config,
)

_, env_cfg = planted_fixture()
env_cfg = replace(env_cfg, action_config=scaling_action_config(), step_budget=300)
cfg = ExperimentConfig(
    env=env_cfg,
    trainer=fixture_trainer_config(),
    seed=0,
    program_sizes=(4, 8, 16),  # add 32 for the full picture; it takes a while
    trials_per_size=3,
    fuzz_budget=20_000,
    rl_step_budget=10_000,
)

print("fuzzer: random programs until the detector reports a violation")
stats, fuzz_rows = fuzz_campaign(cfg)
for s in stats:
    print(
        f"  n={s.program_size:2d}: programs-to-leak median={s.median:g} "
        f"(trials {s.counts}); reported closed form a^(n-1)/(n-l+1) = "
        f"{expected_fuzz_count(s.action_space_size, s.program_size, s.reference_leak_len):.3g}"
    )

print("\nagent: env steps until the first discovered leak")
rl_rows, _ = rl_first_leak_study(cfg)
medians = []
for m in cfg.program_sizes:
    vals = [r.wall_steps for r in rl_rows if r.n == m]
    medians.append(statistics.median(vals))
    print(f"  m={m:2d}: steps-to-first-leak median={medians[-1]:g} (trials {vals})")

print(f"\nagent log-log slope over the grid: {loglog_slope(cfg.program_sizes, medians):.2f}"
      " (<= 1 means at-most-linear growth)")

out = Path(__file__).parent / "scaling.csv"
out.write_text(rows_to_csv(fuzz_rows + rl_rows))
print(f"wrote {out}")
