"""Command-line front end.

Subcommands: train, fuzz, scaling, detect <program.asm>, simulate
<program.asm>. Exit codes: 0 success, 1 usage or config error, 2 leak found
(detect), 3 internal fault.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import traceback
from pathlib import Path

from .agent import TrainerConfig, train
from .arch import ContractMode, ContractSpec, NON_TERMINATING, generate_inputs, load_input
from .detect import ViolationReport, detect_violation
from .env import EnvConfig, LeakEnv, RewardSpec
from .errors import ConfigError, ParseError
from .harness import (
    ExperimentConfig,
    fixture_action_config,
    fuzz_campaign,
    rows_to_csv,
    scaling_action_config,
    scaling_study,
)
from .isa import ActionSpaceConfig, DEFAULT_ACTION_CONFIG, parse_program
from .uarch import SpecConfig, htrace_hex, hw_run, reset_state

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_LEAK = 2
EXIT_FAULT = 3


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _contract_from_json(value) -> ContractSpec:
    if value is None:
        return ContractSpec()
    if isinstance(value, str):
        if value == ContractMode.CT_SEQ.value:
            return ContractSpec(ContractMode.CT_SEQ)
        if value == ContractMode.CT_COND.value:
            return ContractSpec(ContractMode.CT_COND)
        raise ConfigError(f"unknown contract {value!r}")
    if isinstance(value, dict):
        mode = value.get("mode", ContractMode.CT_SEQ.value)
        if mode == ContractMode.CT_COND.value:
            return ContractSpec(ContractMode.CT_COND, int(value.get("spec_depth", 8)))
        if mode == ContractMode.CT_SEQ.value:
            return ContractSpec(ContractMode.CT_SEQ)
        raise ConfigError(f"unknown contract mode {mode!r}")
    raise ConfigError("contract must be a string or an object")


def _actions_from_json(value) -> ActionSpaceConfig:
    if value is None or value == "default":
        return DEFAULT_ACTION_CONFIG
    if value == "fixture":
        return fixture_action_config()
    if value == "scaling":
        return scaling_action_config()
    if isinstance(value, list):
        instrs = []
        for i, text in enumerate(value):
            try:
                p = parse_program(text)
            except ParseError as exc:
                raise ConfigError(f"actions[{i}]: {exc}") from None
            if len(p) != 1:
                raise ConfigError(f"actions[{i}] must be exactly one instruction")
            instrs.append(p[0])
        return ActionSpaceConfig(explicit_actions=tuple(instrs))
    raise ConfigError("actions must be 'default', 'fixture', 'scaling', or a list")


def _check_keys(section: dict, allowed: set, where: str):
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")


def _env_from_json(section: dict) -> EnvConfig:
    allowed = {
        "max_len", "num_inputs", "input_seed", "contract", "window", "nesting",
        "rewards", "actions", "step_budget", "boosts_per_input", "max_episode_steps",
    }
    _check_keys(section, allowed, "env")
    reward = RewardSpec(**section.get("rewards", {})) if "rewards" in section else RewardSpec()
    spec = SpecConfig(
        window=int(section.get("window", 8)), nesting=int(section.get("nesting", 1))
    )
    kwargs = {}
    for key in ("max_len", "num_inputs", "input_seed", "step_budget", "boosts_per_input"):
        if key in section:
            kwargs[key] = int(section[key])
    if "max_episode_steps" in section and section["max_episode_steps"] is not None:
        kwargs["max_episode_steps"] = int(section["max_episode_steps"])
    return EnvConfig(
        contract=_contract_from_json(section.get("contract")),
        spec_config=spec,
        reward=reward,
        action_config=_actions_from_json(section.get("actions")),
        **kwargs,
    )


def _trainer_from_json(section: dict) -> TrainerConfig:
    fields = {f.name for f in dataclasses.fields(TrainerConfig)}
    _check_keys(section, fields, "trainer")
    return TrainerConfig(**section)


def load_experiment_config(path: str | None, seed: int | None, out: str | None) -> ExperimentConfig:
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
    allowed = {
        "env", "trainer", "seed", "program_sizes", "trials_per_size",
        "fuzz_budget", "rl_step_budget", "out_dir",
    }
    _check_keys(data, allowed, "config")
    cfg = ExperimentConfig(
        env=_env_from_json(data.get("env", {})),
        trainer=_trainer_from_json(data.get("trainer", {})),
        seed=int(data.get("seed", 0)),
        program_sizes=tuple(int(n) for n in data.get("program_sizes", (4, 8, 16, 32))),
        trials_per_size=int(data.get("trials_per_size", 5)),
        fuzz_budget=int(data.get("fuzz_budget", 20_000)),
        rl_step_budget=int(data.get("rl_step_budget", 200_000)),
        out_dir=str(data.get("out_dir", "out")),
    )
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed, env=dataclasses.replace(cfg.env, input_seed=seed))
    if out is not None:
        cfg = dataclasses.replace(cfg, out_dir=out)
    return cfg


def _build_parser() -> _ArgumentParser:
    parser = _ArgumentParser(prog="leaklab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--seed", type=int, help="override the experiment seed")
        p.add_argument("--out", help="output directory")

    common(sub.add_parser("train", help="train the agent"))
    common(sub.add_parser("fuzz", help="run the random-fuzzer campaign"))
    common(sub.add_parser("scaling", help="fuzzer vs agent over the size grid"))

    p_detect = sub.add_parser("detect", help="one-shot leak detection on a program")
    p_detect.add_argument("program", help="assembly file")
    common(p_detect)

    p_sim = sub.add_parser("simulate", help="dump per-input traces for a program")
    p_sim.add_argument("program", help="assembly file")
    p_sim.add_argument(
        "--input-file",
        action="append",
        default=[],
        help="binary input file (24 bytes registers + 4096 bytes memory); repeatable",
    )
    common(p_sim)
    return parser


def _read_program(path: str):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read program: {exc}") from None
    return parse_program(text)


def _cmd_train(cfg: ExperimentConfig) -> int:
    env = LeakEnv(cfg.env)
    log = train(env, cfg.trainer)
    out = Path(cfg.out_dir)
    log.save(out)
    print(f"steps={log.total_steps} iterations={len(log.iterations)} leaks={len(log.leaks)}")
    if log.first_leak_step is not None:
        print(f"first leak at step {log.first_leak_step}")
    print(f"wrote {out / 'training.jsonl'}")
    return EXIT_OK


def _cmd_fuzz(cfg: ExperimentConfig) -> int:
    stats, rows = fuzz_campaign(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "fuzz.csv"
    path.write_text(rows_to_csv(rows))
    for s in stats:
        print(
            f"n={s.program_size} median={s.median:g} mean={s.mean:g} "
            f"formula={s.expected_formula:g} censored={sum(t.censored for t in s.trials)}"
        )
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_scaling(cfg: ExperimentConfig) -> int:
    rows = scaling_study(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "scaling.csv"
    path.write_text(rows_to_csv(rows))
    print(f"wrote {path} ({len(rows)} rows)")
    return EXIT_OK


def _cmd_detect(cfg: ExperimentConfig, program_path: str) -> int:
    program = _read_program(program_path)
    env_cfg = cfg.env
    inputs = generate_inputs(env_cfg.input_seed, env_cfg.num_inputs)
    result = detect_violation(
        program,
        inputs,
        env_cfg.contract,
        env_cfg.spec_config,
        boosts_per_input=env_cfg.boosts_per_input,
        seed=cfg.seed,
        budget=env_cfg.step_budget,
    )
    if isinstance(result, ViolationReport):
        print(result.to_json())
        return EXIT_LEAK
    if result is None:
        print("no violation")
    else:
        print("rejected: non-terminating on some input")
    return EXIT_OK


def _cmd_simulate(cfg: ExperimentConfig, program_path: str, input_files: list[str]) -> int:
    program = _read_program(program_path)
    env_cfg = cfg.env
    if input_files:
        inputs = []
        for f in input_files:
            try:
                inputs.append(load_input(Path(f).read_bytes()))
            except (OSError, ValueError) as exc:
                raise ConfigError(f"bad input file {f}: {exc}") from None
    else:
        inputs = generate_inputs(env_cfg.input_seed, env_cfg.num_inputs)
    for i, inp in enumerate(inputs):
        hw = hw_run(program, inp, env_cfg.spec_config, env_cfg.step_budget, reset_state())
        if hw is NON_TERMINATING:
            print(json.dumps({"input": i, "seed": inp.seed, "non_terminating": True}))
            continue
        print(
            json.dumps(
                {
                    "input": i,
                    "seed": inp.seed,
                    "htrace": htrace_hex(hw.htrace),
                    "br_misses": hw.counters.br_misses,
                    "tran_uops": hw.counters.tran_uops,
                    "regs": {
                        "R0": hw.final_state.regs[0],
                        "R1": hw.final_state.regs[1],
                        "R2": hw.final_state.regs[2],
                    },
                }
            )
        )
    return EXIT_OK


def run_cli(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = load_experiment_config(args.config, args.seed, args.out)
        if args.command == "train":
            return _cmd_train(cfg)
        if args.command == "fuzz":
            return _cmd_fuzz(cfg)
        if args.command == "scaling":
            return _cmd_scaling(cfg)
        if args.command == "detect":
            return _cmd_detect(cfg, args.program)
        if args.command == "simulate":
            return _cmd_simulate(cfg, args.program, args.input_file)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception:  # internal fault: anything unexpected
        traceback.print_exc()
        return EXIT_FAULT


def main() -> int:
    return run_cli()


if __name__ == "__main__":
    sys.exit(main())
