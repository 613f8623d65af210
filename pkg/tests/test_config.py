import pytest

from ergodic_rl.config import (
    PROFILES,
    ConfigError,
    dump_config,
    load,
    parse_config,
    parse_config_text,
    profile_config,
)
from ergodic_rl.environments import RewardMode
from ergodic_rl.experiments import ExperimentKind

KINDS = list(ExperimentKind)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("profile", PROFILES)
def test_bundled_profiles_load_and_round_trip(kind, profile):
    cfg = profile_config(kind, profile)
    assert cfg.sweep.kind is kind
    again = parse_config_text(dump_config(cfg), "dump")
    assert again.sweep == cfg.sweep and again.diagnose == cfg.diagnose


def test_paper_profiles_use_full_scale():
    toy = profile_config("toy_dqn", "paper").sweep
    assert toy.m_values == (1, 2, 5, 10, 20) and toy.episodes == 10_000 and toy.n_agents == 40
    assert len(toy.p_grid) == 21
    assert toy.dqn_hp.learning_rate == 0.8 and toy.dqn_hp.gamma == 0.9 and toy.dqn_hp.batch_size == 2
    pf = profile_config("portfolio_ac", "paper").sweep
    assert pf.episodes == 100_000 and pf.ac_hp.lr_actor == 1e-3 and pf.ac_hp.hidden_actor == 32


def test_desk_profiles_are_smaller():
    for kind in KINDS:
        desk, paper = profile_config(kind, "desk").sweep, profile_config(kind, "paper").sweep
        assert desk.episodes * desk.n_agents * len(desk.m_values) < paper.episodes * paper.n_agents * len(paper.m_values)


def test_minimal_file_uses_defaults(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("[experiment]\nkind = toy_dqn\n")
    cfg = parse_config(path)
    assert cfg.sweep.n_agents == 10 and cfg.sweep.toy.r_safe == 1.2 and cfg.diagnose.T == 1000


def test_grid_forms():
    a = parse_config_text("[experiment]\nkind = toy_dqn\np_grid = 0:1:5\n")
    b = parse_config_text("[experiment]\nkind = toy_dqn\np_grid = 0, 0.25, 0.5, 0.75, 1\n")
    assert a.sweep.p_grid == b.sweep.p_grid == (0.0, 0.25, 0.5, 0.75, 1.0)


def test_values_and_inline_comments():
    text = """
[experiment]
kind = portfolio_ac   # trailing comment
episodes = 1e4
m_values = 1 2 5
[toy]
reward_mode = factor
[ac]
normalize_returns = yes
critic_loss = smooth_l1
[dqn]
epsilon_floor = 0.1
buffer_capacity = none
"""
    cfg = parse_config_text(text)
    s = cfg.sweep
    assert s.kind is ExperimentKind.PORTFOLIO_AC and s.episodes == 10_000 and s.m_values == (1, 2, 5)
    assert s.toy.reward_mode is RewardMode.FACTOR
    assert s.ac_hp.normalize_returns and s.ac_hp.critic_loss == "smooth_l1"
    assert s.dqn_hp.epsilon.floor == 0.1 and s.dqn_hp.buffer_capacity is None


@pytest.mark.parametrize(
    "text,fragment",
    [
        ("[experiment]\nkind = toy_dqn\n[toy]\nr3 = 1\n", "unknown key 'toy.r3'"),
        ("[experiment]\nkind = toy_dqn\n[bandit]\nx = 1\n", "unknown section [bandit]"),
        ("[experiment]\nkind = toy_dqn\n[toy]\np = 1.5\n", "toy.p"),
        ("[experiment]\nkind = toy_dqn\n[toy]\nr1 = abc\n", "malformed value for 'toy.r1'"),
        ("[experiment]\nkind = toy_dqn\nn_agents = 0\n", "experiment.n_agents"),
        ("[experiment]\nkind = toy_dqn\n[dqn]\nepsilon_floor = 2\n", "epsilon"),
        ("[experiment]\nkind = toy_dqn\n[ac]\ncritic_loss = huber\n", "ac.critic_loss"),
        ("[experiment]\nkind = toy_dqn\n[diagnose]\nT = 0\n", "diagnose.T"),
        ("[toy]\nr1 = 0.5\n", "experiment.kind"),
        ("no section header\n", "<config>"),
    ],
)
def test_errors_name_the_offending_key(text, fragment):
    with pytest.raises(ConfigError) as exc:
        parse_config_text(text)
    assert fragment in str(exc.value)


def test_keys_are_case_sensitive():
    with pytest.raises(ConfigError):
        parse_config_text("[experiment]\nkind = toy_dqn\n[toy]\nm = 3\n")


def test_missing_file():
    with pytest.raises(ConfigError):
        parse_config("/nonexistent/x.cfg")


def test_user_file_layers_over_profile(tmp_path):
    path = tmp_path / "u.cfg"
    path.write_text("[experiment]\nepisodes = 50\n")
    cfg = load("toy_dqn", "desk", path)
    desk = profile_config("toy_dqn", "desk")
    assert cfg.sweep.episodes == 50
    assert cfg.sweep.m_values == desk.sweep.m_values
    assert cfg.sweep.dqn_hp.log_wealth_from_M == 10


def test_kind_mismatch_rejected(tmp_path):
    path = tmp_path / "u.cfg"
    path.write_text("[experiment]\nkind = portfolio_ac\n")
    with pytest.raises(ConfigError):
        load("toy_dqn", "desk", path)


def test_unknown_profile():
    with pytest.raises(ConfigError):
        profile_config("toy_dqn", "huge")
