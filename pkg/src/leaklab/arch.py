"""Architectural (contract-level) simulator.

Executes programs sequentially over a 4096-byte sandbox and produces contract
traces: the observation sequence an idealized in-order machine exposes. Under
the CT_COND contract the not-taken direction of each conditional branch is
additionally explored for a bounded number of instructions.

Semantics (64-bit, documented subset):
  SBB dst, src   dst <- dst - src - CF (wrapping); CF = borrow out;
                 SF = sign bit of result; ZF = (result == 0)
  IMUL dst, src  dst <- low 64 bits of the signed product; CF = 1 iff the
                 full product does not fit in 64 bits; SF/ZF from result
  JNS d          taken iff SF == 0
  JMP d          always taken
Memory operands address ``(index register mod 4096) & ~7`` and move 8 bytes
little-endian. A memory destination is a read-modify-write and observes both
the load and the store. Taken branches set pc to clamp(pc + d, 0, n); the
emitted PC observation records the raw (unclamped) target so that a program's
trace is insensitive to instructions appended after it.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .errors import ConfigError
from .isa import Instruction, Mem, Opcode, Program, Register

__all__ = [
    "SANDBOX_SIZE",
    "MASK64",
    "DEFAULT_STEP_BUDGET",
    "NON_TERMINATING",
    "NonTerminating",
    "ContractMode",
    "ContractSpec",
    "Input",
    "ArchState",
    "Xorshift64Star",
    "mix64",
    "stream_seed",
    "arch_step",
    "contract_trace",
    "generate_inputs",
    "input_from_seed",
    "dump_input",
    "load_input",
]

SANDBOX_SIZE = 4096
MASK64 = (1 << 64) - 1
DEFAULT_STEP_BUDGET = 10_000

# Contract observation tags. A trace is a tuple of
# ("L", addr) | ("S", addr) | ("P", raw_target, taken_bit) tuples.
OBS_LOAD = "L"
OBS_STORE = "S"
OBS_PC = "P"

CTrace = tuple  # tuple of observation tuples


class NonTerminating:
    """Distinguished result: the step budget ran out before the program halted."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "NonTerminating"


NON_TERMINATING = NonTerminating()


class ContractMode(Enum):
    CT_SEQ = "ct-seq"
    CT_COND = "ct-cond"


@dataclass(frozen=True)
class ContractSpec:
    """Which observations the contract exposes. CT_SEQ sees the sequential
    path only; CT_COND also sees up to `spec_depth` instructions down the
    not-taken direction of each conditional branch (no nesting)."""

    mode: ContractMode = ContractMode.CT_SEQ
    spec_depth: int = 8

    def __post_init__(self):
        if self.mode is ContractMode.CT_COND and self.spec_depth < 1:
            raise ConfigError("CT_COND requires spec_depth >= 1")

    @property
    def name(self) -> str:
        if self.mode is ContractMode.CT_SEQ:
            return self.mode.value
        return f"{self.mode.value}:{self.spec_depth}"


@dataclass(frozen=True)
class Input:
    """Initial register and sandbox-memory contents, plus the generator seed
    the input was expanded from (0 for hand-built inputs)."""

    r0: int
    r1: int
    r2: int
    mem: bytes
    seed: int = 0

    def __post_init__(self):
        if len(self.mem) != SANDBOX_SIZE:
            raise ValueError(f"input memory must be {SANDBOX_SIZE} bytes")


# Reset flag state: SF set, CF/ZF clear. With SF set, a conditional branch
# whose flags were never written falls through, which agrees with the
# predictor's weakly-not-taken reset; misspeculation therefore requires the
# program to actually clear SF.
RESET_SF = 1
RESET_CF = 0
RESET_ZF = 0


class ArchState:
    """Mutable architectural state. BASE is pinned to 0; addresses are
    sandbox offsets."""

    __slots__ = ("regs", "sf", "cf", "zf", "pc", "mem")

    def __init__(self, regs, sf, cf, zf, pc, mem):
        self.regs = regs  # [r0, r1, r2, base]
        self.sf = sf
        self.cf = cf
        self.zf = zf
        self.pc = pc
        self.mem = mem  # bytearray(SANDBOX_SIZE)

    @classmethod
    def from_input(cls, inp: Input) -> "ArchState":
        return cls(
            regs=[inp.r0 & MASK64, inp.r1 & MASK64, inp.r2 & MASK64, 0],
            sf=RESET_SF,
            cf=RESET_CF,
            zf=RESET_ZF,
            pc=0,
            mem=bytearray(inp.mem),
        )

    def copy(self) -> "ArchState":
        return ArchState(self.regs[:], self.sf, self.cf, self.zf, self.pc, bytearray(self.mem))

    def __eq__(self, other) -> bool:
        if not isinstance(other, ArchState):
            return NotImplemented
        return (
            self.regs == other.regs
            and self.sf == other.sf
            and self.cf == other.cf
            and self.zf == other.zf
            and self.pc == other.pc
            and self.mem == other.mem
        )

    def __repr__(self) -> str:
        return (
            f"ArchState(pc={self.pc}, regs={[hex(r) for r in self.regs]}, "
            f"sf={self.sf}, cf={self.cf}, zf={self.zf})"
        )


def _signed(x: int) -> int:
    return x - (1 << 64) if x >= (1 << 63) else x


def _effective_address(state: ArchState, index: Register) -> int:
    return (state.regs[index] % SANDBOX_SIZE) & ~7


def step_instruction(state, instr, n, undo_log=None):
    """Execute one instruction in place and return its observations.

    `n` is the program length used for branch-target clamping. When
    `undo_log` is given, memory writes append (addr, old bytes) so a caller
    can roll the store back.
    """
    op = instr.opcode
    obs = ()
    if op is Opcode.JNS or op is Opcode.JMP:
        taken = 1 if (op is Opcode.JMP or state.sf == 0) else 0
        raw_target = state.pc + instr.disp
        obs = ((OBS_PC, raw_target, taken),)
        if taken:
            state.pc = min(max(raw_target, 0), n)
        else:
            state.pc += 1
        return obs

    # ALU: resolve operands
    mem = state.mem
    src = instr.src
    if isinstance(src, Mem):
        addr = _effective_address(state, src.index)
        s = int.from_bytes(mem[addr : addr + 8], "little")
        obs = ((OBS_LOAD, addr),)
    else:
        s = state.regs[src]

    dst = instr.dst
    if isinstance(dst, Mem):
        addr = _effective_address(state, dst.index)
        d = int.from_bytes(mem[addr : addr + 8], "little")
        obs = ((OBS_LOAD, addr),)
    else:
        d = state.regs[dst]

    if op is Opcode.SBB:
        borrow = s + state.cf
        res = (d - borrow) & MASK64
        cf = 1 if borrow > d else 0
    else:  # IMUL
        prod = _signed(d) * _signed(s)
        res = prod & MASK64
        cf = 0 if -(1 << 63) <= prod < (1 << 63) else 1

    state.cf = cf
    state.sf = res >> 63
    state.zf = 1 if res == 0 else 0

    if isinstance(dst, Mem):
        if undo_log is not None:
            undo_log.append((addr, bytes(mem[addr : addr + 8])))
        mem[addr : addr + 8] = res.to_bytes(8, "little")
        obs = obs + ((OBS_STORE, addr),)
    else:
        state.regs[dst] = res

    state.pc += 1
    return obs


def arch_step(state: ArchState, instr: Instruction, program_length: int):
    """Pure single-step: returns (new state, observations, branch outcome).

    The branch outcome is None for non-branches, else the taken bit.
    """
    new = state.copy()
    obs = step_instruction(new, instr, program_length)
    outcome = obs[0][2] if instr.is_branch else None
    return new, obs, outcome


def contract_trace(
    p: Program,
    inp: Input,
    contract: ContractSpec = ContractSpec(),
    step_budget: int = DEFAULT_STEP_BUDGET,
):
    """Contract trace of `p` on `inp`, or NON_TERMINATING if the budget runs
    out before the program falls off the end."""
    if step_budget < 1:
        raise ConfigError("step_budget must be >= 1")
    n = len(p)
    state = ArchState.from_input(inp)
    trace: list = []
    explore = contract.mode is ContractMode.CT_COND
    steps = 0
    while state.pc < n:
        if steps >= step_budget:
            return NON_TERMINATING
        instr = p[state.pc]
        branch_pc = state.pc
        obs = step_instruction(state, instr, n)
        trace.extend(obs)
        if explore and instr.is_conditional:
            taken = obs[0][2]
            other = branch_pc + 1 if taken else min(max(branch_pc + instr.disp, 0), n)
            _explore_other_path(p, state, other, contract.spec_depth, n, trace)
        steps += 1
    return tuple(trace)


def _explore_other_path(p, state, start_pc, depth, n, trace):
    """Run up to `depth` instructions down the unexecuted branch direction,
    appending their observations, then restore the architectural state."""
    saved = (state.regs[:], state.sf, state.cf, state.zf, state.pc)
    undo: list = []
    state.pc = start_pc
    for _ in range(depth):
        if state.pc >= n:
            break
        trace.extend(step_instruction(state, p[state.pc], n, undo))
    for addr, old in reversed(undo):
        state.mem[addr : addr + 8] = old
    state.regs, state.sf, state.cf, state.zf, state.pc = saved


# --- deterministic input generation ---------------------------------------

_GOLDEN = 0x9E3779B97F4A7C15


def mix64(x: int) -> int:
    """splitmix64 finalizer: the documented bit mixer behind input expansion."""
    x &= MASK64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & MASK64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & MASK64
    x ^= x >> 31
    return x


def stream_seed(master: int, index: int) -> int:
    """Per-stream seed derivation: mix64(master XOR mix64((index+1)*GOLDEN))."""
    return mix64((master & MASK64) ^ mix64(((index + 1) * _GOLDEN) & MASK64))


class Xorshift64Star:
    """xorshift64* generator: x ^= x>>12; x ^= x<<25; x ^= x>>27;
    output = x * 0x2545F4914F6CDD1D. State is seeded through mix64 so any
    64-bit seed (including 0) is usable."""

    __slots__ = ("seed", "state")

    def __init__(self, seed: int):
        self.seed = seed & MASK64
        state = mix64(self.seed)
        self.state = state if state != 0 else _GOLDEN

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & MASK64
        x ^= x >> 27
        self.state = x
        return (x * 0x2545F4914F6CDD1D) & MASK64

    def next_bytes(self, count: int) -> bytes:
        if count % 8:
            raise ValueError("count must be a multiple of 8")
        out = bytearray()
        for _ in range(count // 8):
            out += self.next_u64().to_bytes(8, "little")
        return bytes(out)


def input_from_seed(seed: int) -> Input:
    """Expand one Input from its own stream seed: three register words, then
    4096 memory bytes as 512 little-endian 64-bit words."""
    rng = Xorshift64Star(seed)
    r0, r1, r2 = rng.next_u64(), rng.next_u64(), rng.next_u64()
    return Input(r0=r0, r1=r1, r2=r2, mem=rng.next_bytes(SANDBOX_SIZE), seed=seed)


def generate_inputs(seed: int, count: int) -> list[Input]:
    """Expand `count` inputs deterministically from `seed`. The relational
    detector needs pairs, so count must be at least 2."""
    if count < 2:
        raise ConfigError("input count must be >= 2 (the detector compares pairs)")
    return [input_from_seed(stream_seed(seed, i)) for i in range(count)]


def dump_input(inp: Input) -> bytes:
    """Binary form: 3 x 8 bytes little-endian registers, then 4096 memory bytes."""
    head = b"".join(r.to_bytes(8, "little") for r in (inp.r0, inp.r1, inp.r2))
    return head + inp.mem


def load_input(blob: bytes) -> Input:
    if len(blob) != 24 + SANDBOX_SIZE:
        raise ValueError(f"input file must be {24 + SANDBOX_SIZE} bytes, got {len(blob)}")
    r0, r1, r2 = (int.from_bytes(blob[i : i + 8], "little") for i in (0, 8, 16))
    return Input(r0=r0, r1=r1, r2=r2, mem=blob[24:], seed=0)
