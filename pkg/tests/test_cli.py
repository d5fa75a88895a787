import json
import xml.etree.ElementTree as ET
from pathlib import Path

import pytest

import homsurf.cli as cli
from homsurf.cli import RunConfig, config_from_dict, main, parse_config
from homsurf.errors import ConfigError, SolverError

ROOT = Path(__file__).resolve().parents[1]
STAR_TOML = ROOT / "configs" / "star_two_eps.toml"

SMALL = """
seed = 7
[scenario]
name = "local_bumps"
[sweep]
eps_list = [0.125]
k_eigs = 2
osc_refine = 1
[sweep.loads]
f = 1.0
[output]
directory = "{out}"
"""


MIN = {"scenario": {"name": "star_graph"}, "sweep": {"eps_list": [0.5]}}


def write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


# ----------------------------------------------------------------------------
# parsing
# ----------------------------------------------------------------------------

def test_defaults_and_echo():
    cfg = config_from_dict({"scenario": {"name": "sphere_latitude"}, "sweep": {"eps_list": [0.5]}})
    assert cfg.seed == 0x5EED
    assert cfg.scenario.inner_cutoff == pytest.approx(0.05 * 3.141592653589793)
    assert cfg.sweep.k_eigs == 5 and cfg.sweep.osc_refine == 2
    echo = cfg.echo()
    assert echo["scenario"]["name"] == "sphere_latitude"
    assert config_from_dict(echo).digest() == cfg.digest()


@pytest.mark.parametrize("name", ["star_graph", "local_bumps", "laminate_strip", "sphere_longitude"])
def test_echo_round_trips(name):
    cfg = config_from_dict({"scenario": {"name": name}, "sweep": {"eps_list": [0.5, 0.25], "loads": {"F": [1, 0]}}})
    assert config_from_dict(cfg.echo()) == cfg


def test_star_config_file():
    cfg = parse_config(STAR_TOML)
    assert cfg.scenario.name == "star_graph" and cfg.sweep.eps_list == (0.25, 0.125)
    assert cfg.scenario.inner_cutoff == pytest.approx(0.05)
    sc = cfg.sweep_config()
    assert sc.loads == {"f": 1.0} and sc.seed == 24301


def test_digest_ignores_output_and_jobs():
    a = config_from_dict({**MIN, "output": {"directory": "x"}})
    b = config_from_dict({**MIN, "output": {"directory": "y", "svg": False}})
    c = config_from_dict({**MIN, "seed": 1})
    assert a.digest() == b.digest() != c.digest()


@pytest.mark.parametrize("data, match", [
    ({"scenario": {"name": "torus"}, "sweep": {"eps_list": [0.5]}}, "star_graph"),
    ({"scenario": {"name": "star_graph"}}, "eps_list"),
    ({"scenario": {"name": "star_graph"}, "sweep": {"eps_list": [0.1, 0.2]}}, "decreasing"),
    ({**MIN, "scenario": {"name": "star_graph", "colour": 1}}, "colour"),
    ({**MIN, "extra": 1}, "extra"),
    ({"sweep": {"eps_list": [0.5]}}, "scenario"),
    ({**MIN, "sweep": {"eps_list": [0.5], "k_eigs": "five"}}, "k_eigs"),
])
def test_config_errors(data, match):
    with pytest.raises(ConfigError, match=match):
        config_from_dict(data)


def test_parse_error_reports_line(tmp_path):
    p = write(tmp_path, '[scenario]\nname = "star_graph"\n[sweep]\neps_list = [0.25,\nk_eigs = = 3\n')
    with pytest.raises(ConfigError, match="line 5"):
        parse_config(p)


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(ConfigError):
        cli.check_output_dir(blocker / "sub")


# ----------------------------------------------------------------------------
# runs
# ----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def star_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("star")
    code = main(["run", str(STAR_TOML), "--out", str(out)])
    return code, out


@pytest.mark.slow
def test_star_run_artifacts(star_run):
    code, out = star_run
    assert code == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["manifest.json", "star_graph_convergence.csv", "star_graph_convergence.svg",
                     "star_graph_eps00.obj", "star_graph_eps01.obj", "star_graph_limit.obj"]
    man = json.loads((out / "manifest.json").read_text())
    files = [man["artifacts"]["csv"], man["artifacts"]["svg"], *man["artifacts"]["obj"]]
    assert all(Path(f).stat().st_size > 0 for f in files)
    assert set(man["timings"]) >= {"setup", "sweep", "csv", "svg", "obj"}
    assert man["config"]["scenario"]["name"] == "star_graph" and len(man["config_hash"]) == 64


@pytest.mark.slow
def test_star_run_csv_and_svg(star_run):
    _, out = star_run
    lines = (out / "star_graph_convergence.csv").read_text().splitlines()
    assert len(lines) == 1 + 2 * 5
    root = ET.parse(out / "star_graph_convergence.svg").getroot()
    assert root.tag.endswith("svg")
    for obj in out.glob("*.obj"):
        text = obj.read_text()
        assert text.count("\no ") + text.startswith("o ") == 1
        assert "nan" not in text


def test_small_run_without_obj(tmp_path, capsys):
    out = tmp_path / "o"
    cfg = write(tmp_path, SMALL.format(out=out))
    assert main(["run", str(cfg), "--no-obj", "--no-svg"]) == 0
    printed = capsys.readouterr().out.split()
    assert sorted(Path(p).name for p in printed) == ["local_bumps_convergence.csv", "manifest.json"]
    man = json.loads((out / "manifest.json").read_text())
    assert "obj" not in man["artifacts"] and "svg" not in man["artifacts"]


def test_strip_run_writes_no_obj(tmp_path):
    out = tmp_path / "strip"
    cfg = write(tmp_path, f'[scenario]\nname = "laminate_strip"\n[sweep]\neps_list = [0.25]\nk_eigs = 1\n'
                          f'[output]\ndirectory = "{out}"\n')
    assert main(["run", str(cfg)]) == 0
    assert not list(out.glob("*.obj"))


def test_config_error_exit_code(tmp_path, capsys):
    cfg = write(tmp_path, '[scenario]\nname = "torus"\n')
    assert main(["run", str(cfg)]) == 2
    assert "torus" in capsys.readouterr().err


def test_numerical_failure_cleans_up(tmp_path, monkeypatch, capsys):
    out = tmp_path / "fail"
    cfg = write(tmp_path, SMALL.format(out=out))

    def boom(*a, **k):
        raise SolverError("forced")

    monkeypatch.setattr(cli, "write_svg", boom)
    assert main(["run", str(cfg)]) == 3
    err = capsys.readouterr().err
    assert "stage svg" in err and "forced" in err
    assert not out.exists()


def test_list_scenarios(capsys):
    assert main(["list-scenarios"]) == 0
    names = [line.split()[0] for line in capsys.readouterr().out.splitlines()]
    assert names[:5] == ["star_graph", "sphere_longitude", "sphere_latitude", "radial_graph", "local_bumps"]
    assert "laminate_strip" in names


def test_validate(tmp_path, capsys):
    cfg = write(tmp_path, SMALL.format(out=tmp_path / "v"))
    assert main(["validate", str(cfg)]) == 0
    assert capsys.readouterr().out.startswith("ok: local_bumps")
    assert not (tmp_path / "v").exists()
    huge = write(tmp_path, '[scenario]\nname = "star_graph"\n[sweep]\neps_list = [0.001]\n', "huge.toml")
    assert main(["validate", str(huge)]) == 2


def test_runconfig_is_a_dataclass():
    cfg = config_from_dict(MIN)
    assert isinstance(cfg, RunConfig)
    assert cfg.sweep_config().eps_list == cfg.sweep.eps_list
