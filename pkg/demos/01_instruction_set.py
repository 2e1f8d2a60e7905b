"""Tour of the toy instruction set and the architectural simulator.

Builds the default 40-action menu, parses and renders a small program, and
walks it step by step on a concrete input to show the contract trace.
"""

from leaklab import build_action_space, parse_program, render_program
from leaklab.arch import ArchState, ContractSpec, Input, contract_trace, step_instruction

# The default action space: every instruction an agent or fuzzer can pick.
space = build_action_space()
print(f"default action space: {space.size} instructions")
for i in (0, 9, 18, 27, 36, 39):
    print(f"  action {i:2d}: {space[i]}")

# Assembly text round-trips through the parser.
text = """
; subtract, branch, then a load the branch usually skips
SBB R0, R0
JNS +2
SBB R1, [BASE+R2]
"""
program = parse_program(text)
print("\nparsed program:")
print(render_program(program))

# Execute it on one concrete input. Registers start from the input, flags
# from the documented reset state (SF set), memory is the 4096-byte sandbox.
inp = Input(r0=7, r1=100, r2=130, mem=bytes(4096))
state = ArchState.from_input(inp)
print("\nexecution trace:")
while state.pc < len(program):
    pc = state.pc
    instr = program[pc]
    obs = step_instruction(state, instr, len(program))
    print(f"  [{pc}] {str(instr):24s} obs={list(obs)} sf={state.sf} -> pc={state.pc}")

# The same path, summarized as a contract trace: what an idealized in-order
# machine exposes. The taken branch's raw target (3) falls off the end, so
# the load at index 2 never runs architecturally.
print("\ncontract trace (CT-SEQ):", contract_trace(program, inp))

# A contract that also exposes bounded not-taken-path exploration sees the
# load address the sequential contract hides.
from leaklab.arch import ContractMode

cond = ContractSpec(ContractMode.CT_COND, spec_depth=8)
print("contract trace (CT-COND):", contract_trace(program, inp, cond))
