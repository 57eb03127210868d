"""Hypothesis strategies shared by the property suites."""

import numpy as np
from hypothesis import strategies as st

from eppsim.quantum import random_state_with_fidelity

fidelities = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)
above_threshold = st.floats(min_value=0.51, max_value=0.99)
seeds = st.integers(min_value=0, max_value=2**32 - 1)


@st.composite
def random_states(draw, fid=fidelities):
    F = draw(fid)
    seed = draw(seeds)
    return random_state_with_fidelity(F, np.random.default_rng(seed))
