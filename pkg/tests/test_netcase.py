"""Case schema: round trips, strict parsing, structural validation."""

import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcropf.netcase import (
    Bus,
    CaseFormatError,
    CaseValidationError,
    CostSpec,
    Line,
    NetworkCase,
    builtin_case,
    case_from_dict,
    case_to_dict,
    load_case,
    save_case,
    validate_case,
)

from conftest import make_twobus


def test_twobus_shapes(twobus):
    assert twobus.n_lines == 1
    assert twobus.n_sources == 1
    assert twobus.n_loads == 1
    assert twobus.n_states == 3
    np.testing.assert_array_equal(twobus.p_nom(), [25e3])
    np.testing.assert_array_equal(twobus.p_max(), [50e3])


def test_builtin_cases_build_and_validate():
    for name in ("ieee9", "ieee14", "ieee30", "ieee39", "ieee69", "ieee118"):
        case = builtin_case(name)
        validate_case(case)
        assert case.name == name
        assert case.n_sources >= 1 and case.n_loads >= 1


def test_builtin_ieee14_shape():
    case = builtin_case("ieee14")
    assert (case.n_lines, case.n_sources, case.n_loads) == (20, 5, 9)
    assert case.n_states == 34


def test_unknown_builtin_rejected():
    with pytest.raises(KeyError):
        builtin_case("ieee999")


def test_round_trip_dict(twobus, ieee14):
    for case in (twobus, ieee14):
        assert case_from_dict(case_to_dict(case)) == case


def test_round_trip_file(tmp_path, ieee9):
    path = tmp_path / "ieee9.json"
    save_case(ieee9, str(path))
    assert load_case(str(path)) == ieee9
    # The file is plain JSON, loadable without the package.
    with open(path) as fh:
        doc = json.load(fh)
    assert set(doc) >= {"buses", "lines", "sources", "loads"}


def test_unknown_top_level_key_rejected(twobus):
    doc = case_to_dict(twobus)
    doc["frequency"] = 50.0
    with pytest.raises(CaseFormatError, match="unknown keys"):
        case_from_dict(doc)


def test_unknown_nested_key_rejected(twobus):
    doc = case_to_dict(twobus)
    doc["lines"][0]["x_ohm"] = 0.1
    with pytest.raises(CaseFormatError, match="lines\\[0\\]"):
        case_from_dict(doc)


def test_missing_key_rejected(twobus):
    doc = case_to_dict(twobus)
    del doc["loads"][0]["p_max_w"]
    with pytest.raises(CaseFormatError, match="missing keys"):
        case_from_dict(doc)


def test_non_numeric_field_rejected(twobus):
    doc = case_to_dict(twobus)
    doc["loads"][0]["p_nom_w"] = "25000"
    with pytest.raises(CaseFormatError, match="must be a number"):
        case_from_dict(doc)


def _replace_load(case, **kw):
    return dataclasses.replace(case, loads=(dataclasses.replace(case.loads[0], **kw),))


def test_validation_power_interval():
    case = _replace_load(make_twobus(), p_min_w=30e3, p_nom_w=25e3)
    with pytest.raises(CaseValidationError, match="power interval"):
        validate_case(case)


def test_validation_negative_resistance():
    case = _replace_load(make_twobus(), r_ohm=-5.0)
    with pytest.raises(CaseValidationError, match="must be > 0"):
        validate_case(case)


def test_validation_duplicate_bus():
    base = make_twobus()
    case = dataclasses.replace(base, buses=base.buses + (Bus("b1", "load"),))
    with pytest.raises(CaseValidationError, match="duplicate bus ids"):
        validate_case(case)


def test_validation_unknown_endpoint():
    base = make_twobus()
    bad = dataclasses.replace(base.lines[0], to_bus="nowhere")
    case = dataclasses.replace(base, lines=(bad,))
    with pytest.raises(CaseValidationError, match="unknown endpoint"):
        validate_case(case)


def test_validation_source_on_load_bus():
    base = make_twobus()
    bad = dataclasses.replace(base.sources[0], bus="b2")
    case = dataclasses.replace(base, sources=(bad,))
    with pytest.raises(CaseValidationError):
        validate_case(case)


def test_validation_disconnected():
    base = make_twobus()
    case = dataclasses.replace(base, buses=base.buses + (Bus("b3", "load"),))
    with pytest.raises(CaseValidationError):
        validate_case(case)


def test_validation_quadratic_cost_shape():
    base = make_twobus()
    case = dataclasses.replace(base, cost=CostSpec(kind="quadratic", q_diag=(1.0, 2.0)))
    with pytest.raises(CaseValidationError, match="one q_diag entry per source"):
        validate_case(case)
    case = dataclasses.replace(base, cost=CostSpec(kind="quadratic", q_diag=(-1.0,)))
    with pytest.raises(CaseValidationError, match="positive semidefinite"):
        validate_case(case)


def test_vector_accessors_follow_element_order(ieee14):
    assert ieee14.p_nom().shape == (ieee14.n_loads,)
    assert ieee14.vref_max().shape == (ieee14.n_sources,)
    np.testing.assert_array_equal(ieee14.p_nom(), [l.p_nom_w for l in ieee14.loads])
    assert np.all(ieee14.p_min() <= ieee14.p_nom())
    assert np.all(ieee14.p_nom() <= ieee14.p_max())


positive = st.floats(min_value=1e-6, max_value=1e6, allow_nan=False,
                     allow_infinity=False)


@settings(max_examples=100, deadline=None)
@given(r_line=positive, l_line=positive, r_load=positive, c_load=positive,
       p=st.floats(min_value=0, max_value=1e8, allow_nan=False))
def test_round_trip_preserves_arbitrary_parameters(r_line, l_line, r_load,
                                                   c_load, p):
    """Serialization is lossless for any representable parameter values."""
    base = make_twobus()
    lines = (dataclasses.replace(base.lines[0], r_ohm=r_line, l_henry=l_line),)
    loads = (dataclasses.replace(base.loads[0], r_ohm=r_load, c_farad=c_load,
                                 p_nom_w=p, p_min_w=p, p_max_w=p),)
    case = dataclasses.replace(base, lines=lines, loads=loads)
    assert case_from_dict(case_to_dict(case)) == case


def test_case_is_immutable(twobus):
    with pytest.raises(dataclasses.FrozenInstanceError):
        twobus.name = "other"
    with pytest.raises(dataclasses.FrozenInstanceError):
        twobus.loads[0].p_nom_w = 0.0
