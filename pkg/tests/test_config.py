import pytest

from sstnet.config import RunConfig, parse_text
from sstnet.errors import ConfigError
from sstnet.sst import SstConfig

SAMPLE = """
# desk run
preset = desk
bands = 4          # four-band cubes
sigma = 10, 70
noise_kind = gaussian_noniid
seed = 9
lr = 2e-3
scales = 1.0, 0.5
strides = 32, 16
band_triplet = 0, 1, 3
tile = 32
overlap = 8
"""


def test_parse_strips_comments_and_dashes():
    assert parse_text("max-steps = 5 # note\n\n") == {"max_steps": "5"}


def test_parse_reports_line_number():
    with pytest.raises(ConfigError, match="line 2"):
        parse_text("a = 1\nnonsense\n")


def test_routing(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(SAMPLE)
    run = RunConfig.load(path, mode="train")
    assert run.sst == SstConfig.desk(bands=4)
    assert run.noise.kind == "gaussian_noniid" and run.noise.sigma == (10.0, 70.0)
    assert run.noise.seed == run.train.seed == 9
    assert run.train.lr == 2e-3 and run.train.scales == (1.0, 0.5) and run.train.strides == (32, 16)
    assert run.band_triplet == (0, 1, 3) and (run.tile, run.overlap) == (32, 8)


def test_flags_win(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(SAMPLE)
    run = RunConfig.load(path, {"bands": 6, "lr": None}, mode="train")
    assert run.sst.bands == 6 and run.train.lr == 2e-3


def test_text_round_trip(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(SAMPLE)
    run = RunConfig.load(path, mode="train")
    again = tmp_path / "again.cfg"
    again.write_text(run.to_text())
    back = RunConfig.load(again, {"seed": 9}, mode="train")
    assert back == run


@pytest.mark.parametrize(
    "kv",
    [
        {"colour": "red"},
        {"preset": "huge"},
        {"channels": "many"},
        {"band_triplet": "1, 2"},
        {"tile": 16, "overlap": 16},
        {"heads": 5},
    ],
)
def test_bad_configs(kv):
    with pytest.raises(ConfigError):
        RunConfig.from_mapping(kv)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "none.cfg")
