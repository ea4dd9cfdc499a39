import pytest

from metasaea.agent import ControlMode
from metasaea.config import RunConfig, load_config, paper_scale, parse_config_text, to_flat, training_tasks
from metasaea.problems import ConfigError


def test_grammar_sections_and_lists():
    cfg = parse_config_text("""
        # comment line
        tasks = zdt1:d=5:m=2, dtlz2:d=6:m=3   # trailing comment
        rounds = 7
        surrogate.backend = gp
        agent.lr = 0.002
        budget.fe_max = 50
        evolve.pop_size = 30
        infill.theta_div = 4.5
        seeds = 1, 2, 3
    """)
    assert cfg.tasks == ["zdt1:d=5:m=2", "dtlz2:d=6:m=3"]
    assert cfg.rounds == 7 and cfg.seeds == [1, 2, 3]
    assert cfg.surrogate.backend == "gp" and cfg.agent.lr == 0.002
    assert cfg.budget.fe_max == 50 and cfg.evolve.pop_size == 30 and cfg.infill.theta_div == 4.5


@pytest.mark.parametrize("text,token", [
    ("colour = red", "colour"),
    ("agent.colour = 1", "agent.colour"),
    ("optim.lr = 1", "optim"),
    ("rounds = many", "rounds"),
    ("rounds 4", "line 1"),
    ("tasks = zdt7:d=3", "zdt7"),
    ("control = bandit", "bandit"),
])
def test_errors_name_the_offender(text, token):
    with pytest.raises((ConfigError, ValueError), match=token):
        parse_config_text(text)


def test_section_objects_not_assignable():
    with pytest.raises(ConfigError):
        parse_config_text("budget = 3")


def test_round_trip_through_flat_keys(tmp_path):
    cfg = RunConfig()
    cfg.agent.gamma = 0.9
    cfg.tasks = ["dtlz4:d=7:m=3"]
    text = "\n".join(f"{k} = {', '.join(map(str, v)) if isinstance(v, list) else v}"
                     for k, v in to_flat(cfg).items())
    (tmp_path / "c.cfg").write_text(text)
    back = load_config(tmp_path / "c.cfg")
    assert to_flat(back) == to_flat(cfg)


def test_paper_scale_manifest():
    cfg = paper_scale()
    assert len(cfg.tasks) == 24 and not any(t.startswith("zdt2") for t in cfg.tasks)
    assert (cfg.budget.n_init, cfg.budget.fe_max, cfg.evolve.pop_size) == (80, 120, 50)
    assert cfg.test_dim == 30 and sorted({t.split(":")[1] for t in cfg.tasks}) == ["d=15", "d=20", "d=25"]


def test_desk_defaults():
    cfg = RunConfig()
    assert cfg.rounds == 40 and cfg.tasks == ["zdt1:d=8:m=2", "dtlz2:d=8:m=3"]
    assert (cfg.budget.n_init, cfg.budget.fe_max) == (20, 40) and len(cfg.seeds) == 10


def test_training_tasks_default_objectives():
    assert training_tasks(["zdt3", "dtlz5"], [4]) == ["zdt3:d=4:m=2", "dtlz5:d=4:m=3"]


def test_control_modes():
    assert {m.value for m in ControlMode} == {"dual", "infill_only", "ea_only", "random", "fixed"}


def test_test_task():
    cfg = RunConfig()
    assert cfg.test_task() == "zdt2:d=12:m=2"
    cfg.test_family = "dtlz3"
    assert cfg.test_task() == "dtlz3:d=12:m=3"
    assert "zdt2:d=15:m=2" not in paper_scale().tasks


def test_agent_schedule_scales_with_run():
    desk, paper = RunConfig().agent, paper_scale().agent
    assert (desk.target_sync, desk.updates_per_round) == (20, 4)
    assert (paper.target_sync, paper.updates_per_round) == (200, 8)
    assert desk.lr == paper.lr == 1e-4
