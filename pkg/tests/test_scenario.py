"""Scenario configuration: validation, derived structure, serialization."""

import pytest

from ddfusion import ScenarioConfig, StructuralError, paper_scenario

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib


def small(**kw):
    base = dict(
        n_robots=2,
        n_targets=2,
        edges=((1, 2),),
        tasks={1: (1,), 2: (1, 2)},
    )
    base.update(kw)
    return ScenarioConfig(**base)


# -- validation --------------------------------------------------------


def test_valid_config_constructs():
    cfg = small()
    assert cfg.n_robots == 2


def test_tasks_must_cover_all_robots():
    with pytest.raises(StructuralError, match="tasks must cover robots"):
        small(tasks={1: (1, 2)})


def test_robot_with_no_targets_rejected():
    with pytest.raises(StructuralError, match="tracks no targets"):
        small(tasks={1: (), 2: (1, 2)})


def test_unknown_target_rejected():
    with pytest.raises(StructuralError, match="unknown target 7"):
        small(tasks={1: (7,), 2: (1, 2)})


def test_untracked_target_rejected():
    with pytest.raises(StructuralError, match=r"targets \[2\] are tracked by no robot"):
        small(tasks={1: (1,), 2: (1,)})


def test_cycle_rejected_with_acyclic_message():
    with pytest.raises(StructuralError, match="undirected and a-cyclic"):
        ScenarioConfig(
            n_robots=3, n_targets=1,
            edges=((1, 2), (2, 3), (1, 3)),
            tasks={1: (1,), 2: (1,), 3: (1,)},
        )


def test_disconnected_topology_rejected():
    with pytest.raises(StructuralError, match="connected"):
        ScenarioConfig(
            n_robots=3, n_targets=1,
            edges=((1, 2),),
            tasks={1: (1,), 2: (1,), 3: (1,)},
        )


def test_edge_to_unknown_robot_rejected():
    with pytest.raises(StructuralError, match="unknown robot"):
        small(edges=((1, 5),))


def test_unknown_exchange_mode_rejected():
    with pytest.raises(StructuralError, match="exchange_mode"):
        small(exchange_mode="broadcast")


@pytest.mark.parametrize("name", [
    "dt_seconds", "process_noise_intensity", "r_target_m2",
    "r_landmark_m2", "sigma_position_m", "sigma_velocity_mps",
])
def test_nonpositive_noise_rejected(name):
    with pytest.raises(StructuralError, match=name):
        small(**{name: 0.0})


def test_bad_counts_rejected():
    with pytest.raises(StructuralError):
        small(horizon_steps=0)
    with pytest.raises(StructuralError):
        small(mc_runs=0)


# -- derived structure -------------------------------------------------


def test_paper_scenario_dimensions():
    cfg = paper_scenario()
    dims = [cfg.robot_dim(r) for r in (1, 2, 3, 4)]
    assert dims == [10, 10, 14, 10]
    assert cfg.global_dim() == 28
    assert cfg.max_common_dim() == 8


def test_paper_scenario_chain_neighbors():
    cfg = paper_scenario()
    assert cfg.neighbors(1) == [2]
    assert cfg.neighbors(2) == [1, 3]
    assert cfg.neighbors(3) == [2, 4]
    assert cfg.neighbors(4) == [3]


def test_common_subjects_are_shared_targets_only():
    cfg = paper_scenario()
    assert cfg.common_subjects(1, 2) == frozenset({"t2"})
    assert cfg.common_subjects(3, 4) == frozenset({"t4", "t5"})
    # biases are never common
    assert all(not s.startswith("b")
               for a, b in cfg.edges for s in cfg.common_subjects(a, b))


def test_robot_subjects_flags_bias_as_static():
    cfg = paper_scenario()
    subs = cfg.robot_subjects(1)
    assert subs["t1"] == (4, True)
    assert subs["b1"] == (2, False)
    assert set(subs) == {"t1", "t2", "b1"}


def test_without_bias_dims_shrink():
    cfg = small(with_bias=False)
    assert cfg.robot_dim(1) == 4
    assert cfg.global_dim() == 8


def test_replace_returns_validated_copy():
    cfg = paper_scenario()
    other = cfg.replace(seed=99)
    assert other.seed == 99
    assert other.edges == cfg.edges
    with pytest.raises(StructuralError):
        cfg.replace(r_target_m2=-1.0)


# -- serialization -----------------------------------------------------


def test_round_trip_is_exact():
    cfg = paper_scenario(seed=7, r_target_m2=1.0 / 3.0)
    again = ScenarioConfig.loads(cfg.dumps())
    assert again == cfg
    assert again.dumps() == cfg.dumps()


def test_content_hash_tracks_content():
    a = paper_scenario()
    b = paper_scenario(seed=1)
    assert a.content_hash() == paper_scenario().content_hash()
    assert a.content_hash() != b.content_hash()
    assert len(a.content_hash()) == 16


def test_missing_section_diagnosed():
    text = paper_scenario().dumps()
    d = tomllib.loads(text)
    del d["noise"]
    with pytest.raises(StructuralError, match="missing section 'noise'"):
        ScenarioConfig.from_dict(d)


def test_missing_field_diagnosed():
    d = tomllib.loads(paper_scenario().dumps())
    del d["priors"]["sigma_bias_m"]
    with pytest.raises(StructuralError, match="priors.sigma_bias_m"):
        ScenarioConfig.from_dict(d)


def test_load_from_file(tmp_path):
    cfg = paper_scenario(mc_runs=3)
    path = tmp_path / "scn.toml"
    path.write_text(cfg.dumps())
    assert ScenarioConfig.load(path) == cfg


def test_shipped_config_parses():
    import pathlib
    path = pathlib.Path(__file__).resolve().parents[1] / "configs" \
        / "four_robots_five_targets.toml"
    cfg = ScenarioConfig.load(path)
    assert cfg.n_robots == 4
    assert [cfg.robot_dim(r) for r in (1, 2, 3, 4)] == [10, 10, 14, 10]
