"""Experiment-config file format: parsing, validation, echo roundtrip."""

import pytest

from feadapter.config import (config_echo, experiment_from_echo, experiment_from_values,
                              load_experiment_config, parse_config_text)
from feadapter.errors import ConfigError

VALID = """
# desk-scale run
model.frames = 4
model.height = 16
model.width = 16
model.patch = 8
model.hidden = 32
model.depth = 2
model.heads = 4
model.classes = 2
adapter.variant = d2_conv3d
adapter.r = 6
adapter.blocks = all
adapter.position = before_mhsa
train.lr = 1e-3
train.epochs = 2
train.batch = 4
train.seed = 9
train.freeze = adapter
data.clips_per_class = 2
out.dir = runs/x
"""


class TestParsing:
    def test_valid_text(self):
        exp = experiment_from_values(parse_config_text(VALID))
        assert exp.model.hidden == 32
        assert exp.model.adapter.variant == "d2_conv3d"
        assert exp.train.lr == pytest.approx(1e-3)
        assert exp.out_dir == "runs/x"

    def test_unknown_key_rejected_by_name(self):
        with pytest.raises(ConfigError, match="model.hiden"):
            parse_config_text("model.hiden = 32")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config_text("model.hidden = 32\nmodel.hidden = 64")

    def test_bad_value_names_key(self):
        with pytest.raises(ConfigError, match="model.depth"):
            parse_config_text("model.depth = twelve")

    def test_missing_equals_rejected(self):
        with pytest.raises(ConfigError, match="key = value"):
            parse_config_text("model.depth 4")

    def test_comments_and_blanks_ignored(self):
        vals = parse_config_text("\n# note\nmodel.depth = 3  # inline\n\n")
        assert vals == {"model.depth": 3}

    @pytest.mark.parametrize("text,blocks", [
        ("all", None),
        ("1,3", (1, 3)),
        ("1-3", (1, 2, 3)),
        ("1-2,4", (1, 2, 4)),
    ])
    def test_block_forms(self, text, blocks):
        exp = experiment_from_values(parse_config_text(
            f"model.depth = 4\nadapter.variant = vanilla\nadapter.r = 6\n"
            f"adapter.blocks = {text}\ntrain.freeze = adapter"))
        assert exp.model.adapter.blocks == blocks

    def test_auto_bottleneck_width_for_reference_geometry(self):
        exp = experiment_from_values(parse_config_text(
            "model.frames = 16\nmodel.height = 224\nmodel.width = 224\nmodel.patch = 16\n"
            "model.hidden = 768\nmodel.depth = 12\nmodel.heads = 12\nmodel.classes = 7\n"
            "adapter.variant = d2_conv3d\nadapter.r = auto\ntrain.freeze = adapter"))
        assert exp.model.adapter.r == 350

    def test_missing_file_names_path(self):
        with pytest.raises(ConfigError, match="no/such/file.cfg"):
            load_experiment_config("no/such/file.cfg")


class TestCrossValidation:
    def test_adapter_freeze_requires_variant(self):
        with pytest.raises(ConfigError, match="adapter"):
            experiment_from_values(parse_config_text("train.freeze = adapter"))

    def test_temporal_aggregation_forbids_adapters(self):
        with pytest.raises(ConfigError, match="temporal_aggregation"):
            experiment_from_values(parse_config_text(
                "adapter.variant = vanilla\nadapter.r = 6\ntrain.freeze = temporal_aggregation"))

    def test_bottleneck_must_stay_below_hidden(self):
        with pytest.raises(ConfigError, match="hidden"):
            experiment_from_values(parse_config_text(
                "model.hidden = 32\nadapter.variant = vanilla\nadapter.r = 32\n"
                "train.freeze = adapter"))

    def test_blocks_outside_depth_rejected(self):
        with pytest.raises(ConfigError):
            experiment_from_values(parse_config_text(
                "model.depth = 2\nadapter.variant = vanilla\nadapter.r = 4\n"
                "adapter.blocks = 3\ntrain.freeze = adapter"))

    def test_indivisible_patch_rejected(self):
        with pytest.raises(ConfigError):
            experiment_from_values(parse_config_text("model.height = 20\nmodel.patch = 8"))


class TestEcho:
    def test_echo_roundtrip_reproduces_config(self):
        exp = experiment_from_values(parse_config_text(VALID))
        again = experiment_from_echo(config_echo(exp))
        assert again.model == exp.model
        assert again.train == exp.train
        assert again.clips_per_class == exp.clips_per_class
