import pytest

from fairlong.config import ConfigError, ExperimentConfig, default_config_text, load_config, parse_config


def test_empty_document_gives_defaults():
    cfg = parse_config("")
    assert cfg == ExperimentConfig()
    assert cfg.train_config().lambda_long == 128.4
    assert cfg.dataset.n == 10000 and cfg.dataset.d == 6


def test_default_text_round_trips():
    assert parse_config(default_config_text()).to_dict() == ExperimentConfig().to_dict()


def test_values_are_typed_and_seed_override_wins():
    cfg = parse_config(
        "[experiment]\nseed = 3\n[model]\nclassifier_hidden = 8, 16\n"
        "[training]\nlambda_long = 2.5\nsplit_ratios = 0.6, 0.2, 0.2\n[sinkhorn]\nrelative_reg = false\n"
    )
    assert cfg.seed == 3 and cfg.model.classifier_hidden == (8, 16)
    tc = cfg.train_config()
    assert tc.lambda_long == 2.5 and tc.split_ratios == (0.6, 0.2, 0.2)
    assert cfg.sinkhorn.relative_reg is False
    assert parse_config("[experiment]\nseed = 3\n", seed_override=9).seed == 9


@pytest.mark.parametrize(
    "text, where",
    [
        ("[bogus]\nx = 1\n", "[bogus]"),
        ("[dataset]\nsize = 5\n", "[dataset] size"),
        ("[dataset]\nn = many\n", "[dataset] n"),
        ("[dataset]\nn = 1\n", "[dataset] n"),
        ("[dataset]\nepsilon = -0.1\n", "[dataset] epsilon"),
        ("[model]\nclassifier_hidden = 8\n", "[model] classifier_hidden"),
        ("[training]\nsplit_ratios = 1, 0, 0\n", "[training]"),
        ("[training]\nlearning_rate = 0\n", "[training]"),
        ("[evaluation]\nreference = oracle\n", "[evaluation] reference"),
        ("[evaluation]\nsetting2_start = 0\n", "[evaluation]"),
        ("[experiment]\nseed = -1\n", "[experiment] seed"),
        ("not an ini file", "malformed"),
    ],
)
def test_invalid_documents_name_the_field(text, where):
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert where in str(err.value)


def test_fingerprint_tracks_resolved_values():
    a = parse_config("")
    assert a.fingerprint() == parse_config("[training]\nlambda_long = 128.4\n").fingerprint()
    assert a.fingerprint() != parse_config("[training]\nlambda_long = 1\n").fingerprint()
    assert a.fingerprint() != a.with_seed(1).fingerprint()


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.ini")
