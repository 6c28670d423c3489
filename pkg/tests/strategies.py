"""Hypothesis strategies for small random models."""

from hypothesis import strategies as st

from ntbip.model import make_model

rate = st.floats(min_value=0.1, max_value=3.0, allow_nan=False).map(lambda x: round(x, 3))


@st.composite
def one_type(draw, resurrection="same_as_immigration"):
    """n = 1 with deaths, binary/ternary splits and 1-2 immigrants."""
    branch = {(0,): draw(rate), (2,): draw(rate)}
    if draw(st.booleans()):
        branch[(3,)] = draw(rate)
    imm = {(1,): draw(rate)}
    if draw(st.booleans()):
        imm[(2,)] = draw(rate)
    return make_model(1, imm, [branch], resurrection)


@st.composite
def subcritical_one_type(draw):
    death = draw(st.floats(min_value=1.0, max_value=3.0).map(lambda x: round(x, 3)))
    birth = draw(st.floats(min_value=0.05, max_value=0.9).map(lambda x: round(x * death, 3)))
    imm = draw(rate)
    return make_model(1, {(1,): imm}, [{(0,): death, (2,): birth}])


@st.composite
def two_type(draw, resurrection="same_as_immigration"):
    """n = 2, positively regular through mixed offspring (1, 1)."""
    b0 = {(0, 0): draw(rate), (1, 1): draw(rate)}
    b1 = {(0, 0): draw(rate), (1, 1): draw(rate)}
    if draw(st.booleans()):
        b0[(0, 2)] = draw(rate)
    if draw(st.booleans()):
        b1[(2, 0)] = draw(rate)
    imm = {(1, 0): draw(rate), (0, 1): draw(rate)}
    return make_model(2, imm, [b0, b1], resurrection)


any_model = st.one_of(one_type(), two_type())
