import pytest
from hypothesis import given, settings, strategies as st

from mgts.config import ConfigError, RunConfig, loads, override, schema


def test_defaults_round_trip():
    rc = RunConfig()
    assert loads(rc.to_text()) == rc


def test_every_key_is_echoed():
    text = RunConfig().to_text()
    keys = {ln.split(" = ")[0] for ln in text.splitlines() if not ln.startswith("#")}
    assert keys == set(schema())


def test_partial_file_keeps_defaults():
    rc = loads("train.epochs = 3  # short run\n\nmodel.gamma = 1.1\n")
    assert rc.train.epochs == 3 and rc.model.gamma == 1.1
    assert rc.data == RunConfig().data


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("model.colour = red", "model.colour"),
        ("seed 3", "key = value"),
        ("train.epochs = three", "train.epochs"),
        ("data.disjoint_identities = yes", "true or false"),
        ("detector.tp_score = 0.5", "2 comma-separated"),
        ("seed = 1\nseed = 2", "duplicate"),
        ("model.variant = single_X", "unknown variant"),
        ("detector.miss_rate = 2", "miss_rate"),
        ("data.gallery_sizes = 40,20", "ascending"),
        ("eval.gallery_sizes = 15", "not in data.gallery_sizes"),
        ("train.box_source = proposals", "box_source"),
        ("eval.gammas = 0.9", "gamma"),
    ],
)
def test_errors_name_the_problem(text, fragment):
    with pytest.raises(ConfigError, match=fragment):
        loads(text)


def test_train_seed_follows_run_seed():
    assert "train.seed" not in schema()
    assert loads("seed = 9").train_config().seed == 9


def test_override():
    rc = override(RunConfig(), seed=5, model__variant="single_F", data__scene__clutter=2)
    assert (rc.seed, rc.model.variant, rc.data.scene.clutter) == (5, "single_F", 2)
    with pytest.raises(ConfigError):
        override(RunConfig(), model__nope=1)


@settings(max_examples=40)
@given(
    st.floats(0.0, 1.0),
    st.floats(1e-3, 1.0),
    st.integers(0, 50),
    st.lists(st.floats(1.0, 3.0), min_size=1, max_size=6),
)
def test_float_values_round_trip_exactly(eta, tau, epochs, gammas):
    rc = override(RunConfig(), oim__eta=eta, oim__tau=tau, train__epochs=epochs, eval__gammas=tuple(gammas))
    assert loads(rc.to_text()) == rc
