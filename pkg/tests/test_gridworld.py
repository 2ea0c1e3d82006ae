"""Corridor benchmark world, dataset generation, sweeps, and landscapes."""

import math

import numpy as np
import pytest

from temperfilt import (
    GridworldSpec,
    TemperingParams,
    TuneConfig,
    build_gridworld,
    cost_landscape,
    export_tempered_model,
    generate_dataset,
    identify,
    IdentConfig,
    nll_score,
    read_json,
    sweep_experiment,
    temper_distribution,
    validate_model,
)

from conftest import random_hmm

HOME = 19  # internal index of the absorbing cell in the default world


def test_default_world_is_a_valid_model():
    m = build_gridworld(GridworldSpec())
    assert m.n_states == 39 and m.n_outputs == 39
    assert validate_model(m)


def test_home_cell_is_absorbing():
    m = build_gridworld(GridworldSpec())
    expected = np.zeros(39)
    expected[HOME] = 1.0
    assert np.array_equal(m.trans[HOME], expected)


def test_far_side_walks_down_deterministically():
    m = build_gridworld(GridworldSpec())
    for i in range(HOME + 1, 39):
        expected = np.zeros(39)
        expected[i - 1] = 1.0
        assert np.array_equal(m.trans[i], expected)


def test_near_side_moves_fold_at_the_boundaries():
    m = build_gridworld(GridworldSpec())
    # One step below home: the +1, +2, +3 moves all land on home.
    row = np.zeros(39)
    row[17], row[18], row[19] = 0.1, 0.15, 0.75
    assert np.allclose(m.trans[18], row, atol=1e-15)
    # At the low wall the -1 move folds back onto the cell itself.
    row = np.zeros(39)
    row[0], row[1], row[2], row[3] = 0.25, 0.5, 0.15, 0.1
    assert np.allclose(m.trans[0], row, atol=1e-15)


def test_start_distribution_sits_on_both_ends():
    m = build_gridworld(GridworldSpec())
    expected = np.zeros(39)
    expected[0] = expected[38] = 0.5
    assert np.array_equal(m.p0, expected)


def test_emission_rows_are_binned_gaussians():
    m = build_gridworld(GridworldSpec())
    assert np.max(np.abs(m.emit.sum(axis=1) - 1.0)) <= 1e-12
    # Interior rows peak over their own cell; near a wall the open-ended
    # outer bin swallows the tail and dominates instead.
    interior = np.arange(10, 29)
    assert np.array_equal(np.argmax(m.emit[interior], axis=1), interior)
    assert np.argmax(m.emit[1]) == 0
    assert np.argmax(m.emit[37]) == 38
    # The corridor is symmetric around its middle cell.
    assert np.allclose(m.emit, m.emit[::-1, ::-1], atol=1e-15)


def test_generate_dataset_is_deterministic_and_in_range():
    spec = GridworldSpec()
    a = generate_dataset(spec, 6, seed=3)
    b = generate_dataset(spec, 6, seed=3)
    c = generate_dataset(spec, 6, seed=4)
    assert np.array_equal(a.states_matrix(), b.states_matrix())
    assert np.array_equal(a.observations_matrix(), b.observations_matrix())
    assert not np.array_equal(a.states_matrix(), c.states_matrix())
    assert a.horizon == 40 and len(a) == 6
    assert a.states_matrix().min() >= 0 and a.states_matrix().max() < 39
    assert a.observations_matrix().max() < 39


def test_far_start_descends_then_parks_at_home():
    data = generate_dataset(GridworldSpec(), 10, seed=0)
    states = data.states_matrix()
    far = states[states[:, 0] == 38]
    assert len(far) > 0
    for row in far:
        assert np.array_equal(row[: 39 - HOME], np.arange(38, HOME - 1, -1))
        assert np.all(row[39 - HOME:] == HOME)


def _tiny_spec():
    return GridworldSpec(n_x=9, x_home=5, horizon=8)


def _tiny_tune():
    return TuneConfig(n_folds=2, max_iters=3, seed=0)


def test_sweep_is_reproducible_and_sorted():
    kwargs = dict(spec=_tiny_spec(), tune_cfg=_tiny_tune(), n_jobs=1)
    result = sweep_experiment([8], [1, 0], **kwargs)
    again = sweep_experiment([8], [0, 1], **kwargs)
    assert [(r.n, r.seed) for r in result.rows] == [(8, 0), (8, 1)]
    for a, b in zip(result.rows, again.rows):
        assert a == b
    for row in result.rows:
        assert row.error == ""
        assert math.isfinite(row.nll_untempered)
        assert math.isfinite(row.nll_tempered)


def test_sweep_ablation_pins_the_named_exponent():
    result = sweep_experiment([8], [0], spec=_tiny_spec(),
                              ablation_mode="fix_B", tune_cfg=_tiny_tune(),
                              n_jobs=1)
    row = result.rows[0]
    assert row.ablation_mode == "fix_B"
    assert row.lambda_star.lambda_B == 1.0
    with pytest.raises(ValueError, match="ablation_mode"):
        sweep_experiment([8], [0], spec=_tiny_spec(), ablation_mode="fix_Q")


def test_sweep_turns_cell_failures_into_error_rows():
    result = sweep_experiment([2, 8], [0], spec=_tiny_spec(),
                              tune_cfg=_tiny_tune(), n_jobs=1)
    by_n = {r.n: r for r in result.rows}
    assert by_n[2].error != "" and by_n[2].lambda_star is None
    assert by_n[8].error == ""


def test_landscape_contains_the_untempered_score_at_unit_exponents():
    spec = _tiny_spec()
    data = generate_dataset(spec, 10, seed=5)
    model = identify(data, IdentConfig(n_states=9, n_outputs=9))
    grid = {"P": np.array([0.5, 1.0, 2.0]), "B": np.array([0.5, 1.0, 2.0])}
    result = cost_landscape(data, model, grid, fixed={"L": 1.0})
    assert result.axes == ("P", "B")
    assert result.nll.shape == (3, 3)
    assert np.all(np.isfinite(result.nll))
    untempered = nll_score(model, TemperingParams.neutral(), data).mean_nll
    assert result.nll[1, 1] == untempered
    assert result.fixed == ("L", 1.0)


def test_landscape_validates_the_axis_split():
    spec = _tiny_spec()
    data = generate_dataset(spec, 4, seed=6)
    model = identify(data, IdentConfig(n_states=9, n_outputs=9))
    with pytest.raises(ValueError, match="grid must name two"):
        cost_landscape(data, model, {"P": [1.0]}, fixed={"L": 1.0})
    with pytest.raises(ValueError, match="grid must name two"):
        cost_landscape(data, model, {"P": [1.0], "L": [1.0]},
                       fixed={"L": 1.0})


def test_export_at_unit_exponents_reproduces_the_tables():
    m = build_gridworld(_tiny_spec())
    payload = export_tempered_model(m, TemperingParams.neutral())
    assert payload["lambda"] == {"L": 1.0, "P": 1.0, "B": 1.0}
    assert payload["display_normalized"] is True
    assert np.allclose(payload["raw_weights"]["trans"], m.trans, atol=1e-15)
    assert np.allclose(payload["display"]["trans"], m.trans, atol=1e-15)
    assert np.allclose(payload["display"]["p0"], m.p0, atol=1e-15)


def test_export_display_sharpens_every_uncertain_row():
    rng = np.random.default_rng(60)
    m = random_hmm(rng, 4, 3)
    lam = TemperingParams(1.0, 2.0, 1.0)
    payload = export_tempered_model(m, lam)

    def entropy(row):
        row = np.asarray(row)
        pos = row[row > 0]
        return -np.sum(pos * np.log(pos))

    for raw, shown in zip(m.trans, payload["display"]["trans"]):
        assert np.allclose(shown, temper_distribution(raw, 2.0), atol=1e-12)
        assert entropy(shown) < entropy(raw)
    for raw, shown in zip(m.emit, payload["display"]["emit"]):
        assert entropy(shown) < entropy(raw)


def test_export_keeps_degenerate_rows_fixed():
    m = build_gridworld(_tiny_spec())
    payload = export_tempered_model(m, TemperingParams(1.0, 2.0, 1.0))
    home = 4  # internal home index of the tiny world
    row = np.array(payload["display"]["trans"][home])
    expected = np.zeros(9)
    expected[home] = 1.0
    assert np.array_equal(row, expected)


def test_export_writes_json_with_extras(tmp_path):
    m = build_gridworld(_tiny_spec())
    path = tmp_path / "export.json"
    payload = export_tempered_model(
        m, TemperingParams.neutral(), path=path, extra={"note": "tiny"}
    )
    on_disk = read_json(path)
    assert on_disk["note"] == "tiny"
    assert on_disk["lambda"] == payload["lambda"]
    assert on_disk["display"]["trans"] == payload["display"]["trans"]
