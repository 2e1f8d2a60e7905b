import random

import pytest

from leaklab.arch import (
    ContractMode,
    ContractSpec,
    NON_TERMINATING,
    Xorshift64Star,
    contract_trace,
    generate_inputs,
    input_from_seed,
)
from leaklab.detect import (
    ViolationReport,
    boost_input,
    contract_classes,
    detect_violation,
    speculation_filter,
)
from leaklab.isa import Program, build_action_space, parse_program
from leaklab.uarch import REJECTED, SpecConfig

from conftest import make_input

CT_SEQ = ContractSpec(ContractMode.CT_SEQ)
PLANTED = parse_program("SBB R0, R0\nJNS +2\nSBB R1, [BASE+R2]")


def test_boost_empty_program():
    base = make_input(r0=1, r1=2, r2=3)
    sib = boost_input(Program(), base, CT_SEQ, Xorshift64Star(1))
    assert sib is not None
    assert (sib.r0, sib.r1, sib.r2) == (1, 2, 3)
    assert sib.mem != base.mem  # nothing constrained the fresh memory


def test_boost_single_load():
    p = parse_program("SBB R0, [BASE+R1]")
    base = make_input(r1=256, mem_byte=5)
    sib = boost_input(p, base, CT_SEQ, Xorshift64Star(2))
    assert sib is not None
    assert sib.mem[256:264] == base.mem[256:264]  # the loaded cell is copied
    assert sib.mem != base.mem
    assert contract_trace(p, sib, CT_SEQ) == contract_trace(p, base, CT_SEQ)


def test_boost_chained_loads_converges():
    # load value flows into the next load's address: needs > 1 round
    p = parse_program("SBB R1, [BASE+R2]\nSBB R0, [BASE+R1]\nSBB R2, [BASE+R0]")
    rng = random.Random(0)
    for trial in range(20):
        base = input_from_seed(rng.randrange(1 << 32))
        sib = boost_input(p, base, CT_SEQ, Xorshift64Star(trial))
        if sib is None:
            continue
        assert contract_trace(p, sib, CT_SEQ) == contract_trace(p, base, CT_SEQ)


def test_boost_verifies_under_ct_cond():
    contract = ContractSpec(ContractMode.CT_COND, spec_depth=8)
    base = make_input(r2=130)
    sib = boost_input(PLANTED, base, contract, Xorshift64Star(3))
    assert sib is not None
    assert contract_trace(PLANTED, sib, contract) == contract_trace(PLANTED, base, contract)


def test_boost_requires_terminating_base():
    with pytest.raises(ValueError):
        boost_input(parse_program("JMP -2"), make_input(), CT_SEQ, Xorshift64Star(0))


def test_detect_empty_program(inputs20):
    assert detect_violation(Program(), inputs20) is None


def test_detect_planted_fixture(inputs20):
    report = detect_violation(PLANTED, inputs20)
    assert isinstance(report, ViolationReport)
    assert report.diverging_sets
    assert report.htraces[0] != report.htraces[1]
    assert report.revalidate()


def test_detect_planted_no_speculation(inputs20):
    assert detect_violation(PLANTED, inputs20, cfg=SpecConfig(window=0)) is None


def test_detect_planted_covered_by_ct_cond(inputs20):
    contract = ContractSpec(ContractMode.CT_COND, spec_depth=8)
    assert detect_violation(PLANTED, inputs20, contract=contract) is None


def test_detect_rejects_nonterminating(inputs20):
    assert detect_violation(parse_program("JMP -2"), inputs20) is REJECTED


def test_detect_deterministic_witness(inputs20):
    a = detect_violation(PLANTED, inputs20, seed=7)
    b = detect_violation(PLANTED, inputs20, seed=7)
    assert a.witness == b.witness
    assert a.htraces == b.htraces


def test_exhaustive_agrees_with_short_circuit(inputs20):
    fast = detect_violation(PLANTED, inputs20, seed=1)
    full = detect_violation(PLANTED, inputs20, seed=1, exhaustive=True)
    assert fast is not None and full is not None
    assert fast.witness == full.witness


def test_filter_examples(inputs20):
    assert speculation_filter(Program(), inputs20[:4]) == "none"
    # taken branch mispredicted from reset, but nothing issues transiently
    assert speculation_filter(parse_program("SBB R0, R0\nJNS +2"), inputs20[:4]) == "misspec"
    assert speculation_filter(PLANTED, inputs20[:4]) == "observable"


def test_filter_monotone_with_detection(inputs20):
    rng = random.Random(21)
    space = build_action_space()
    inputs = inputs20[:6]
    for _ in range(150):
        p = Program(tuple(space[rng.randrange(space.size)] for _ in range(rng.randrange(1, 8))))
        r = detect_violation(p, inputs, budget=300, seed=5)
        if isinstance(r, ViolationReport):
            assert speculation_filter(p, inputs, budget=300) == "observable"
            assert r.revalidate(budget=300)


def test_no_false_positives_with_speculation_off(inputs20):
    rng = random.Random(33)
    space = build_action_space()
    cfg = SpecConfig(window=0)
    inputs = inputs20[:5]
    for _ in range(150):
        p = Program(tuple(space[rng.randrange(space.size)] for _ in range(rng.randrange(1, 8))))
        r = detect_violation(p, inputs, cfg=cfg, budget=300, seed=5, exhaustive=True)
        assert r is None or r is REJECTED


def test_contract_classes(inputs20):
    # the planted program gives every input the same trace: one class
    classes = contract_classes(PLANTED, inputs20)
    assert len(classes) == 1
    assert len(classes[0].members) == 20
    # a committed load splits inputs by address; verify the class invariant
    p = parse_program("SBB R0, [BASE+R1]")
    classes = contract_classes(p, inputs20)
    assert len(classes) > 1
    for cls in classes:
        for member in cls.members:
            assert contract_trace(p, member, CT_SEQ) == cls.ctrace
    assert contract_classes(parse_program("JMP -2"), inputs20) is REJECTED


def test_report_json_round_trip(inputs20):
    report = detect_violation(PLANTED, inputs20)
    text = report.to_json()
    back = ViolationReport.from_json(text)
    assert back.program == report.program
    assert back.witness == report.witness
    assert back.htraces == report.htraces
    assert back.diverging_sets == report.diverging_sets
    assert back.revalidate()


def test_boost_success_rate_sane():
    # quick version of the acceptance criterion: most random terminating
    # programs can be boosted, and every sibling is verified
    rng = random.Random(99)
    space = build_action_space()
    attempts = 0
    succeeded = 0
    while attempts < 100:
        p = Program(tuple(space[rng.randrange(space.size)] for _ in range(rng.randrange(1, 10))))
        base = input_from_seed(rng.randrange(1 << 32))
        if contract_trace(p, base, CT_SEQ, 300) is NON_TERMINATING:
            continue
        attempts += 1
        sib = boost_input(p, base, CT_SEQ, Xorshift64Star(attempts), budget=300)
        if sib is not None:
            succeeded += 1
            assert contract_trace(p, sib, CT_SEQ, 300) == contract_trace(p, base, CT_SEQ, 300)
    assert succeeded >= 90
