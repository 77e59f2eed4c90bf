import pytest

from sparsekit.config import (StageConfig, default_config, load_config,
                              parse_config_text)
from sparsekit.model import ConfigError
from sparsekit.schedule import lr_rewound


def test_defaults_per_stage():
    tp = default_config("teacher-prep")
    assert tp.pruning is None
    assert tp.steps == 100 and tp.batch_size == 16
    assert tp.distill.lambda_pt == 0.5 and tp.distill.temperature == 2.0

    sp = default_config("student-prune")
    assert sp.pruning is not None
    assert (sp.pruning.start_step, sp.pruning.policy_end_step,
            sp.pruning.end_step, sp.pruning.interval) == (0, 50, 80, 1)
    assert sp.pruning.final_sparsity == 0.9

    tr = default_config("transfer")
    assert tr.model.head_kind == "classify"
    assert tr.distill.lambda_pt == 0.0 and tr.distill.lambda_kd == 1.0

    qat = default_config("qat")
    assert qat.lr == pytest.approx(1e-4)


def test_unknown_stage():
    with pytest.raises(ConfigError):
        default_config("mystery")


def test_stage_pruning_contract():
    with pytest.raises(ConfigError, match="requires a pruning"):
        default_config("student-prune", pruning=None)
    sp = default_config("student-prune")
    with pytest.raises(ConfigError, match="no pruning"):
        default_config("teacher-prep", pruning=sp.pruning)


def test_lr_schedule_wiring():
    sp = default_config("student-prune")
    sched = sp.lr_schedule()
    assert sched.rewind is not None
    assert sched.rewind.start_step == 0
    assert sched.rewind.end_step == 80
    # with rewinding off the sawtooth disappears
    plain = default_config("student-prune", lrr_enabled=False).lr_schedule()
    assert plain.rewind is None
    assert lr_rewound(plain, 30) == pytest.approx(plain.base_lr * (100 - 30) / (100 - 1))


def test_digest_sensitive_to_fields():
    a = default_config("teacher-prep", seed=1)
    b = default_config("teacher-prep", seed=1)
    c = default_config("teacher-prep", seed=2)
    assert a.digest() == b.digest()
    assert a.digest() != c.digest()
    assert len(a.digest()) == 32


CONFIG_TEXT = """
# training run
[run]
stage = student-prune
steps = 60
seed = 11
kd = true
lrr = false

[model]
hidden = 16
heads = 2
ffn_dim = 32

[optimizer]
lr = 0.02
weight_decay = 0.0

[pruning]
final_sparsity = 0.8
policy_end_step = 30
end_step = 50

[data]
num_sequences = 50
"""


def test_parse_full_file():
    cfg = parse_config_text(CONFIG_TEXT)
    assert cfg.stage == "student-prune"
    assert cfg.steps == 60 and cfg.seed == 11
    assert cfg.model.hidden == 16 and cfg.model.ffn_dim == 32
    assert cfg.lr == 0.02 and cfg.weight_decay == 0.0
    assert cfg.pruning.final_sparsity == 0.8
    assert cfg.pruning.start_step == 0  # default retained
    assert cfg.data.num_sequences == 50
    assert cfg.kd_enabled and not cfg.lrr_enabled


def test_parse_comments_and_blanks():
    cfg = parse_config_text("[run]\nstage = teacher-prep  # inline note\n\n")
    assert cfg.stage == "teacher-prep"


def test_unknown_section_rejected():
    with pytest.raises(ConfigError, match="line 1.*unknown section"):
        parse_config_text("[banana]\nx = 1\n")


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="line 2.*unknown key"):
        parse_config_text("[run]\nstge = teacher-prep\n")


def test_key_outside_section_rejected():
    with pytest.raises(ConfigError, match="line 1"):
        parse_config_text("stage = teacher-prep\n")


def test_bad_value_type():
    with pytest.raises(ConfigError, match="line 2.*steps"):
        parse_config_text("[run]\nsteps = many\nstage = teacher-prep\n")


def test_bad_boolean():
    with pytest.raises(ConfigError, match="boolean"):
        parse_config_text("[run]\nstage = teacher-prep\nkd = maybe\n")


def test_missing_stage():
    with pytest.raises(ConfigError, match="stage"):
        parse_config_text("[run]\nsteps = 10\n")


def test_load_config_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text(CONFIG_TEXT)
    assert load_config(p).stage == "student-prune"
