"""Train the PPO agent to assemble leaking programs.

Uses the fixture environment (6-action menu, programs up to 12 instructions)
and prints the learning curve. A uniform random searcher runs the same
budget for comparison.
"""

from leaklab import LeakEnv, random_search, render_program, train
from leaklab.harness import fixture_trainer_config, planted_fixture

_, env_cfg = planted_fixture()
print(f"env: {env_cfg.num_inputs} inputs, programs up to {env_cfg.max_len} instructions")

budget = 3_000
cfg = fixture_trainer_config(seed=0, total_steps=budget)
log = train(LeakEnv(env_cfg), cfg)

print(f"\nPPO: {log.total_steps} steps, {len(log.leaks)} leaks found")
print("iteration  steps  mean_ep_reward  leaks")
for rec in log.iterations[:: max(1, len(log.iterations) // 12)]:
    reward = "-" if rec.mean_episode_reward is None else f"{rec.mean_episode_reward:+.1f}"
    print(f"  {rec.iteration:4d} {rec.steps:7d} {reward:>12s} {rec.leaks_found:6d}")

if log.leaks:
    first = log.leaks[0]
    print(f"\nfirst leaking program (found at step {first.step}):")
    print(render_program(first.report.program))
    print(f"diverging cache sets: {first.report.diverging_sets}")

baseline = random_search(LeakEnv(env_cfg), budget=budget, seed=0, horizon=64)
print(f"\nuniform baseline over the same budget: {len(baseline.leaks)} leaks, "
      f"first at step {baseline.first_leak_step}")
print(f"agent's first leak at step {log.first_leak_step}")
