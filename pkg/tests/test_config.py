import pytest

from pathcast.config import LR_GRID, TrainConfig, load_config, parse_overrides, read_kv_file


def test_defaults():
    c = TrainConfig()
    assert (c.alpha, c.c, c.lambda1, c.lambda2, c.n_layers, c.dim, c.batch_size, c.lr) == (0.1, 3.0, 1.0, 1e-3, 4, 64, 256, 1e-3)
    assert c.lr_grid == LR_GRID == (1e-4, 3e-4, 1e-3, 3e-3, 1e-2)


@pytest.mark.parametrize(
    "change",
    [{"lr": 0}, {"dim": -1}, {"alpha": 1.0}, {"aggregation": "max"}, {"cig_mode": "gainrec"}, {"threshold_seconds": 0.0}],
)
def test_invalid_values(change):
    with pytest.raises(ValueError):
        TrainConfig(**change).validate()


def test_file_then_overrides(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# comment\nlr = 3e-4\ndim=16\nuse_content = false\nlr_grid = 1e-3, 1e-2\n\n")
    c = load_config(p, dim=8, seed=None)
    assert (c.lr, c.dim, c.use_content, c.lr_grid, c.seed) == (3e-4, 8, False, (1e-3, 1e-2), 0)


def test_bad_files(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("just words\n")
    with pytest.raises(ValueError, match="bad.cfg:1"):
        read_kv_file(p)
    with pytest.raises(ValueError):
        parse_overrides({"learning_rate": "1"})
    with pytest.raises(ValueError):
        parse_overrides({"use_content": "maybe"})


def test_round_trip():
    c = TrainConfig(dim=8, threshold_seconds=12.5, aggregation="concat")
    assert TrainConfig.from_dict(c.to_dict()) == c
    assert c.replace(seed=4).seed == 4
