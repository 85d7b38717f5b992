import os

import numpy as np
import pytest

from slanted_stixels import _backend
from slanted_stixels.energy import ColumnMeasurements, ColumnPrefix
from slanted_stixels.model import ModelConfig, PlanePrior, default_taxonomy

SAMPLE_DIR = os.path.join(os.path.dirname(__file__), "..", "src", "slanted_stixels", "data", "sample")

BACKENDS = _backend.available()


@pytest.fixture
def taxonomy():
    return default_taxonomy()


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


def random_column(rng, h, invalid=0.2, d_hi=40.0, K=6, structured=False):
    """Random column; ``structured`` draws piecewise planes instead of iid disparities."""
    if structured:
        d = np.empty(h)
        v = 0
        while v < h:
            n = min(int(rng.integers(1, max(2, h // 2) + 1)), h - v)
            a, b = rng.uniform(5, d_hi), rng.uniform(-1, 1) * rng.integers(0, 2)
            d[v:v + n] = a + b * np.arange(n)
            v += n
        d = np.clip(d + rng.normal(0, 0.5, h), 0, None)
    else:
        d = rng.uniform(0, d_hi, h)
    d[rng.random(h) < invalid] = -1.0
    scores = rng.dirichlet(np.full(K, 0.5), h)
    conf = rng.uniform(0.3, 1.0, h)
    return ColumnMeasurements.from_scores(d, scores, conf)


def random_config(rng):
    """Randomised but valid model constants, including clamped priors."""
    def sig(lo, hi):
        return 0.0 if rng.random() < 0.25 else float(rng.uniform(lo, hi))

    return ModelConfig(
        p_out=float(rng.uniform(0.02, 0.5)),
        sigma_noise=tuple(float(x) for x in rng.uniform(0.4, 2.0, 3)),
        d_max=float(rng.uniform(45, 128)),
        w_l=float(rng.uniform(0, 2)),
        plane_priors=(
            PlanePrior(float(rng.uniform(0, 40)), sig(1, 50), float(rng.uniform(-1, 1)), sig(0.1, 2)),
            PlanePrior(float(rng.uniform(0, 40)), sig(1, 50), 0.0, sig(0.05, 1)),
            PlanePrior(),
        ),
        complexity_cost=float(rng.uniform(0, 6)),
        first_costs=tuple(float(x) for x in rng.uniform(0, 5, 3)),
        transition_costs=tuple(tuple(float(x) for x in row) for row in rng.uniform(0, 5, (3, 3))),
        w_grav=float(rng.choice([0.0, rng.uniform(0, 1)])),
        w_ord=float(rng.choice([0.0, rng.uniform(0, 1)])),
        invalid_cost=float(rng.choice([0.0, rng.uniform(0, 2)])),
    )


def prepared(col, config, taxonomy):
    col = col.masked_for(config)
    return col, ColumnPrefix.build(col, config, taxonomy)
