"""Shared fixtures: a hand-sized two-bus case and the bundled test systems."""

import numpy as np
import pytest

from dcropf.netcase import (
    BUILTIN_LINE_L,
    BUILTIN_LINE_R,
    BUILTIN_LOAD_C,
    BUILTIN_LOAD_R,
    BUILTIN_SOURCE_C,
    BUILTIN_SOURCE_R,
    BUILTIN_V_MAX,
    BUILTIN_V_MIN,
    Bus,
    Line,
    Load,
    NetworkCase,
    Source,
    builtin_case,
    validate_case,
)
from dcropf.powerflow import grid_equations
from dcropf.statespace import assemble


def make_twobus(p_nom_w: float = 25e3, p_min_w: float = 0.0,
                p_max_w: float = 50e3) -> NetworkCase:
    """One source feeding one load over one line, default parameters.

    The reduced network is scalar: series conductance 1/(R_s + R_t) = 10 S,
    shunt 0.2 S, so the open-circuit voltage is vref * 10 / 10.2 and every
    power-flow quantity has a closed form the tests check against.
    """
    case = NetworkCase(
        name="twobus",
        buses=(Bus("b1", "source"), Bus("b2", "load")),
        lines=(Line("t1", "b1", "b2", r_ohm=BUILTIN_LINE_R,
                    l_henry=BUILTIN_LINE_L),),
        sources=(Source(bus="b1", r_ohm=BUILTIN_SOURCE_R,
                        c_farad=BUILTIN_SOURCE_C,
                        vref_min=BUILTIN_V_MIN, vref_max=BUILTIN_V_MAX),),
        loads=(Load(bus="b2", r_ohm=BUILTIN_LOAD_R, c_farad=BUILTIN_LOAD_C,
                    p_nom_w=p_nom_w, p_min_w=p_min_w, p_max_w=p_max_w,
                    v_min=BUILTIN_V_MIN, v_max=BUILTIN_V_MAX),),
    )
    validate_case(case)
    return case


@pytest.fixture(scope="session")
def twobus():
    return make_twobus()


@pytest.fixture(scope="session")
def twobus_ge(twobus):
    return grid_equations(twobus)


@pytest.fixture(scope="session")
def twobus_model(twobus):
    return assemble(twobus)


@pytest.fixture(scope="session")
def ieee9():
    return builtin_case("ieee9")


@pytest.fixture(scope="session")
def ieee9_ge(ieee9):
    return grid_equations(ieee9)


@pytest.fixture(scope="session")
def ieee9_model(ieee9):
    return assemble(ieee9)


@pytest.fixture(scope="session")
def ieee14():
    return builtin_case("ieee14")


@pytest.fixture(scope="session")
def ieee14_ge(ieee14):
    return grid_equations(ieee14)


@pytest.fixture(scope="session")
def ieee14_model(ieee14):
    return assemble(ieee14)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
