import os
import sys

import numpy as np
import pytest
import structlog

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from fgo.states import dimension, local, retract  # noqa: E402

structlog.configure(
    processors=[structlog.processors.JSONRenderer(sort_keys=True)],
    logger_factory=structlog.PrintLoggerFactory(),
    cache_logger_on_first_use=False,
)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def numeric_jacobian(residual_fn, values, key, eps=1e-6):
    """Central differences of ``residual_fn(values)`` through ``retract`` on ``key``."""
    base = values[key]
    n = dimension(key)
    columns = []
    for i in range(n):
        delta = np.zeros(n)
        delta[i] = eps
        plus = dict(values)
        plus[key] = retract(key, base, delta)
        minus = dict(values)
        minus[key] = retract(key, base, -delta)
        columns.append((residual_fn(plus) - residual_fn(minus)) / (2.0 * eps))
    return np.stack(columns, axis=1)


def assert_jacobians_match(factor, values, eps=1e-6, eps_by_key=None, rtol=1e-4):
    """Compares every analytic block of ``factor`` against central differences."""
    eps_by_key = eps_by_key or {}
    _, blocks = factor.linearize(values)
    assert len(blocks) == len(factor.keys)

    def residual_fn(vals):
        return factor.linearize(vals)[0]

    for key, analytic in zip(factor.keys, blocks):
        numeric = numeric_jacobian(residual_fn, values, key, eps_by_key.get(key[0], eps))
        scale = max(1.0, float(np.max(np.abs(numeric))))
        err = float(np.max(np.abs(analytic - numeric)))
        assert err <= rtol * scale, f"jacobian mismatch on {key}: {err:.3e} (scale {scale:.3e})"


def tangent_distance(key, a, b) -> float:
    return float(np.linalg.norm(local(key, a, b)))


@pytest.fixture
def check_jacobians():
    return assert_jacobians_match
