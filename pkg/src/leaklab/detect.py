"""Relational leak detection.

A speculative leak is witnessed by two inputs with equal contract traces but
unequal hardware traces. Random inputs rarely share a contract trace once a
program reads memory, so each input is "boosted": a sibling is derived with
the same registers, fresh random memory, and the bytes the program actually
loads copied over from the original, iterated until the sibling provably
produces the same contract trace. Hardware-trace divergence inside such a
class is a violation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .arch import (
    DEFAULT_STEP_BUDGET,
    NON_TERMINATING,
    ContractSpec,
    Input,
    SANDBOX_SIZE,
    Xorshift64Star,
    contract_trace,
    stream_seed,
)
from .errors import ConfigError
from .isa import Program, parse_program, render_program
from .uarch import (
    REJECTED,
    InputObservation,
    SpecConfig,
    htrace_hex,
    hw_run,
    observe,
    reset_state,
)

__all__ = [
    "BOOST_ROUNDS",
    "InputClass",
    "ViolationReport",
    "boost_input",
    "contract_classes",
    "detect_violation",
    "speculation_filter",
]

BOOST_ROUNDS = 10


@dataclass(frozen=True)
class InputClass:
    """Inputs sharing one (verified) contract trace."""

    members: tuple[Input, ...]
    ctrace: tuple


@dataclass(frozen=True)
class ViolationReport:
    """Witness for a contract violation: equal contract traces, unequal
    hardware traces. Everything needed to re-check the claim is kept."""

    program: Program
    contract: ContractSpec
    spec_config: SpecConfig
    witness: tuple[Input, Input]
    htraces: tuple[int, int]
    diverging_sets: tuple[int, ...]

    def revalidate(self, budget: int = DEFAULT_STEP_BUDGET) -> bool:
        """Re-simulate both witnesses from scratch and confirm the claim."""
        a, b = self.witness
        ct_a = contract_trace(self.program, a, self.contract, budget)
        ct_b = contract_trace(self.program, b, self.contract, budget)
        if ct_a is NON_TERMINATING or ct_b is NON_TERMINATING or ct_a != ct_b:
            return False
        hw_a = hw_run(self.program, a, self.spec_config, budget, reset_state())
        hw_b = hw_run(self.program, b, self.spec_config, budget, reset_state())
        if hw_a is NON_TERMINATING or hw_b is NON_TERMINATING:
            return False
        if (hw_a.htrace, hw_b.htrace) != self.htraces:
            return False
        diff = hw_a.htrace ^ hw_b.htrace
        return diff != 0 and tuple(s for s in range(64) if diff >> s & 1) == self.diverging_sets

    def to_json(self) -> str:
        def enc(inp: Input) -> dict:
            return {
                "seed": inp.seed,
                "r0": inp.r0,
                "r1": inp.r1,
                "r2": inp.r2,
                "mem_hex": inp.mem.hex(),
            }

        a, b = self.witness
        return json.dumps(
            {
                "program": render_program(self.program),
                "contract": self.contract.name,
                "window": self.spec_config.window,
                "input_seeds": [a.seed, b.seed],
                "inputs": [enc(a), enc(b)],
                "htraces": [htrace_hex(self.htraces[0]), htrace_hex(self.htraces[1])],
                "diverging_sets": list(self.diverging_sets),
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "ViolationReport":
        from .arch import ContractMode

        d = json.loads(text)
        name = d["contract"]
        if name.startswith(ContractMode.CT_COND.value):
            contract = ContractSpec(ContractMode.CT_COND, int(name.split(":")[1]))
        else:
            contract = ContractSpec(ContractMode.CT_SEQ)
        witness = tuple(
            Input(r0=i["r0"], r1=i["r1"], r2=i["r2"], mem=bytes.fromhex(i["mem_hex"]), seed=i["seed"])
            for i in d["inputs"]
        )
        return cls(
            program=parse_program(d["program"]),
            contract=contract,
            spec_config=SpecConfig(window=d["window"]),
            witness=witness,  # type: ignore[arg-type]
            htraces=tuple(int(h, 16) for h in d["htraces"]),  # type: ignore[arg-type]
            diverging_sets=tuple(d["diverging_sets"]),
        )


def boost_input(
    p: Program,
    base: Input,
    contract: ContractSpec,
    rng: Xorshift64Star,
    budget: int = DEFAULT_STEP_BUDGET,
) -> Input | None:
    """Derive a contract-equivalent sibling of `base` for `p`.

    The sibling keeps the base's registers and gets fresh random memory; each
    round copies the base's bytes at every address the sibling's own trace
    loads, until the sibling's contract trace equals the base's (verified by
    re-simulation). Returns None if that fixpoint is not reached within
    BOOST_ROUNDS rounds.
    """
    base_trace = contract_trace(p, base, contract, budget)
    if base_trace is NON_TERMINATING:
        raise ValueError("boost_input requires a terminating base input")
    mem = bytearray(rng.next_bytes(SANDBOX_SIZE))
    sibling = Input(r0=base.r0, r1=base.r1, r2=base.r2, mem=bytes(mem), seed=rng.seed)
    for _ in range(BOOST_ROUNDS):
        tr = contract_trace(p, sibling, contract, budget)
        # A non-terminating sibling yields no trace to guide the copy; pull
        # it toward the base's path using the base's own load set instead.
        guide = base_trace if tr is NON_TERMINATING else tr
        changed = False
        for obs in guide:
            if obs[0] == "L":
                addr = obs[1]
                cell = base.mem[addr : addr + 8]
                if mem[addr : addr + 8] != cell:
                    mem[addr : addr + 8] = cell
                    changed = True
        if not changed and tr == base_trace:
            return sibling
        sibling = Input(r0=base.r0, r1=base.r1, r2=base.r2, mem=bytes(mem), seed=rng.seed)
    return None


def _filter_tier(observations: list[InputObservation]) -> str:
    if all(o.br_misses == 0 and o.tran_uops == 0 for o in observations):
        return "none"
    if any(o.htrace != o.committed_htrace for o in observations):
        return "observable"
    return "misspec"


def speculation_filter(
    p: Program,
    inputs: list[Input],
    cfg: SpecConfig = SpecConfig(),
    budget: int = DEFAULT_STEP_BUDGET,
) -> str:
    """Classify `p` as "none" (no misspeculation at all), "misspec", or
    "observable" (some transient access changed the probe vector relative to
    a speculation-free run). `p` must terminate on every input."""
    results = []
    for inp in inputs:
        hw = hw_run(p, inp, cfg, budget, reset_state())
        if hw is NON_TERMINATING:
            raise ValueError("speculation_filter requires terminating programs")
        results.append(
            InputObservation(
                htrace=hw.htrace,
                ctrace=(),
                br_misses=hw.counters.br_misses,
                tran_uops=hw.counters.tran_uops,
                committed_htrace=hw.committed_htrace,
            )
        )
    return _filter_tier(results)


def contract_classes(
    p: Program,
    inputs: list[Input],
    contract: ContractSpec = ContractSpec(),
    budget: int = DEFAULT_STEP_BUDGET,
):
    """Group inputs into contract-equivalence classes (first-occurrence
    order), or REJECTED if any input is non-terminating."""
    buckets: dict[tuple, list[Input]] = {}
    for inp in inputs:
        tr = contract_trace(p, inp, contract, budget)
        if tr is NON_TERMINATING:
            return REJECTED
        buckets.setdefault(tr, []).append(inp)
    return [InputClass(members=tuple(v), ctrace=k) for k, v in buckets.items()]


def detect_violation(
    p: Program,
    inputs: list[Input],
    contract: ContractSpec = ContractSpec(),
    cfg: SpecConfig = SpecConfig(),
    boosts_per_input: int = 2,
    seed: int = 0,
    budget: int = DEFAULT_STEP_BUDGET,
    exhaustive: bool = False,
    observations: list[InputObservation] | None = None,
):
    """Search for a contract violation of `p` over `inputs`.

    Builds contract-equivalence classes from the given inputs plus up to
    `boosts_per_input` boosted siblings each, and reports the first pair
    within a class whose hardware traces differ. Members are ordered by
    (input index, sibling index) so the witness is deterministic.

    Returns a ViolationReport, None, or REJECTED if `p` exhausts a simulator
    budget on any base input.

    The default mode gates on observability: a program with no observable
    transient cache footprint cannot produce in-class divergence (committed
    accesses are fixed by the contract trace), so boosting is skipped and
    None returned. `exhaustive=True` disables that gate and always runs the
    full class construction; it exists as a test oracle.
    """
    if not inputs:
        raise ConfigError("detect_violation needs at least one input")
    if boosts_per_input < 1:
        raise ConfigError("boosts_per_input must be >= 1")
    if observations is None:
        observations = observe(p, inputs, contract, cfg, budget)
        if observations is REJECTED:
            return REJECTED

    if not exhaustive and _filter_tier(observations) != "observable":
        return None

    # members[ctrace] = [(key, input, htrace)] with key = (input idx, sib idx);
    # classes keyed by ctrace in first-occurrence order
    classes: dict[tuple, list] = {}
    for i, (inp, o) in enumerate(zip(inputs, observations)):
        classes.setdefault(o.ctrace, []).append(((i, 0), inp, o.htrace))

    def report_from(ma, mb):
        (_, a, ha), (_, b, hb) = ma, mb
        diff = ha ^ hb
        return ViolationReport(
            program=p,
            contract=contract,
            spec_config=cfg,
            witness=(a, b),
            htraces=(ha, hb),
            diverging_sets=tuple(s for s in range(64) if diff >> s & 1),
        )

    # pass 1: divergence among the base inputs themselves
    for members in classes.values():
        for i in range(len(members)):
            for j in range(i + 1, len(members)):
                if members[i][2] != members[j][2]:
                    return report_from(members[i], members[j])

    # pass 2: boosted siblings, in (input index, sibling index) order
    for i, (base, base_obs) in enumerate(zip(inputs, observations)):
        members = classes[base_obs.ctrace]
        for j in range(1, boosts_per_input + 1):
            rng = Xorshift64Star(stream_seed(seed, (i << 8) | j))
            sibling = boost_input(p, base, contract, rng, budget)
            if sibling is None:
                continue
            hw = hw_run(p, sibling, cfg, budget, reset_state())
            if hw is NON_TERMINATING:
                continue  # cannot happen for a verified sibling, but stay safe
            entry = ((i, j), sibling, hw.htrace)
            for key, other, h_other in members:
                if h_other != hw.htrace:
                    if key < entry[0]:
                        return report_from((key, other, h_other), entry)
                    return report_from(entry, (key, other, h_other))
            members.append(entry)
    return None
