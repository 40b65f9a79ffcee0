import math

import pytest

from pufsim.costs import (
    AXES,
    METHODS,
    CostInputs,
    comm_round,
    cost_report,
    format_ratio,
    improvement_ratios,
    method_costs,
    recovery_costs,
)

REFERENCE = CostInputs(P=1.1225e7, B=4, F=0.15e9, N=5000, E=1, C=10, C_u=1, R=200, R_ret=200)
PB = 1.1225e7 * 4


def test_comm_round_hand_values():
    assert comm_round(10, 4, 3) == 240
    assert comm_round(10, 4, 0) == 0
    assert comm_round(10, 4, 6) == 2 * comm_round(10, 4, 3)


def test_recovery_costs_hand_values():
    small = CostInputs(P=10, B=4, C=4, C_u=1, F=1, N=1)
    assert small.C_r == 3
    assert recovery_costs(small, 2)[0] == 480
    assert recovery_costs(small, 0) == (0, 0)


def test_recovery_comp_table_value():
    assert recovery_costs(REFERENCE, 200)[1] == pytest.approx(1.35e15, rel=1e-9)


@pytest.mark.parametrize(
    "method,axis,expected",
    [
        ("retrain", "comm", 1.62e11),
        ("retrain", "comp", 1.35e15),
        ("retrain", "storage", 4.49e7),
        ("federaser", "storage", 8.98e10),
        ("pga", "storage", 4.94e8),
        ("mode", "storage", 8.98e7),
        ("not", "storage", 4.49e7),
    ],
)
def test_table_cells(method, axis, expected):
    assert method_costs(method, REFERENCE).axis(axis) == pytest.approx(expected, rel=0.01)


def test_puf_special_unlearning_round_comm():
    assert method_costs("puf_special", REFERENCE).comm == pytest.approx(2 * PB)
    assert method_costs("puf_special", REFERENCE).comm == pytest.approx(8.98e7, rel=0.01)


def test_negligible_entries_are_flagged_zero():
    fedau = method_costs("fedau", REFERENCE)
    assert fedau.comp == 0 and "comp" in fedau.negligible
    nt = method_costs("not", REFERENCE)
    assert nt.comm == nt.comp == 0 and nt.negligible == {"comm", "comp"}


@pytest.mark.parametrize("method", METHODS)
@pytest.mark.parametrize("name", ["P", "F", "N"])
def test_costs_scale_linearly(method, name):
    base = method_costs(method, REFERENCE)
    doubled = method_costs(method, CostInputs(**{**REFERENCE.to_dict(), name: 2 * getattr(REFERENCE, name)}))
    for a in AXES:
        ratio = doubled.axis(a) / base.axis(a) if base.axis(a) else None
        # P scales comm and storage, F and N scale computation only
        if ratio is not None:
            expect = 2.0 if (name == "P" and a != "comp") or (name != "P" and a == "comp") else 1.0
            if method == "fedau" and a == "comm":
                expect = 1.0  # classifier-head upload does not depend on P
            assert ratio == pytest.approx(expect)


def test_ratios():
    r = method_costs("retrain", REFERENCE)
    assert improvement_ratios(r, r) == dict.fromkeys(AXES, 1.0)
    mode = method_costs("mode", REFERENCE)
    assert improvement_ratios(mode, r)["storage"] == pytest.approx(0.5)
    assert improvement_ratios(method_costs("not", REFERENCE), r)["comm"] == math.inf


def test_format_ratio():
    assert format_ratio(2.0) == "2.0×"
    assert format_ratio(0.5) == "0.5×"
    assert format_ratio(0.0909) == "0.0909×"
    assert format_ratio(math.inf) == "—"
    assert format_ratio(3.0, negligible=True) == "—"


def test_report_totals_add_recovery():
    rep = cost_report(REFERENCE, recovery_rounds={"puf_special": 10})
    m = rep.methods["puf_special"]
    assert m.total.comm == pytest.approx(2 * PB + 2 * PB * 9 * 10)
    assert rep.methods["retrain"].recovery_rounds == 0
    assert rep.methods["retrain"].ratios == dict.fromkeys(AXES, 1.0)
    assert rep.to_dict()["methods"]["not"]["ratio_vs_retrain"]["comm"] is None


def test_input_validation():
    with pytest.raises(ValueError):
        CostInputs(P=1, C=3, C_u=1, C_r=1, F=1, N=1)
    with pytest.raises(ValueError):
        CostInputs(P=-1, C=3, C_u=1, F=1, N=1)
    with pytest.raises(KeyError):
        method_costs("fedx", REFERENCE)
