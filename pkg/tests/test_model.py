"""Spec-object validation and small model helpers."""

import numpy as np
import pytest

from mfgexec.model import (GameSpec, SubPopulationSpec, TimeGrid,
                           ValidationError, coupling_matrices,
                           empirical_proportions, validate)

from cases import benchmark_game, benchmark_market, benchmark_population


def test_benchmark_specs_validate():
    validate(benchmark_population())
    validate(benchmark_market())
    validate(benchmark_game())
    validate(TimeGrid.uniform(1.0, 1000))


def test_zero_temporary_impact_rejected():
    bad = SubPopulationSpec(a=0.0, phi=0.0, psi=1.0, p=1.0, m0=0.0, s0=0.0)
    with pytest.raises(ValidationError, match="temporary impact must be positive"):
        validate(bad)


def test_proportions_must_sum_to_one():
    pop = benchmark_population()
    skew = pop.subpops[0].__class__(**{**pop.subpops[0].__dict__, "p": 0.5})
    bad = pop.__class__(subpops=(skew, pop.subpops[1]), lam=pop.lam)
    with pytest.raises(ValidationError, match="sum to 1"):
        validate(bad)


def test_generator_rows_must_sum_to_zero():
    mkt = benchmark_market()
    bad = mkt.__class__(**{**mkt.__dict__,
                           "generator": np.array([[-1.0, 0.5], [1.0, -1.0]])})
    with pytest.raises(ValidationError, match="rows must sum to 0"):
        validate(bad)


def test_grid_must_be_uniform_from_zero():
    with pytest.raises(ValidationError, match="first time point"):
        validate(TimeGrid(t=np.array([0.1, 0.5, 1.0])))
    with pytest.raises(ValidationError, match="uniform"):
        validate(TimeGrid(t=np.array([0.0, 0.3, 1.0])))


def test_empirical_proportions_match_benchmark_weights():
    frac = empirical_proportions((20, 10))
    assert np.allclose(frac, [2.0 / 3.0, 1.0 / 3.0], rtol=0, atol=1e-15)
    assert abs(frac.sum() - 1.0) <= 1e-15


def test_agent_counts_checked():
    game = benchmark_game()
    bad = GameSpec(population=game.population, market=game.market,
                   n_agents_per_subpop=(20, 0))
    with pytest.raises(ValidationError, match="agent counts"):
        validate(bad)


def test_coupling_matrices_shapes_and_rows():
    cm = coupling_matrices(benchmark_population())
    assert cm.inv_two_a.shape == (2, 2)
    assert np.allclose(np.diag(cm.inv_two_a), [5000.0, 5000.0])
    # identical rows: the permanent impact couples through the aggregate only
    assert np.allclose(cm.lam_rows[0], cm.lam_rows[1])
    assert np.allclose(cm.lam_rows[0], [1e-3 * 2 / 3, 1e-3 / 3])


def test_subpop_of_agent_is_class_major():
    game = benchmark_game((3, 2))
    assert game.subpop_of_agent().tolist() == [0, 0, 0, 1, 1]
