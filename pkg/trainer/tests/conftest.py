import json
import subprocess
import sys

import pytest

ENV_COMMAND = f"{sys.executable} -m caesim.cli env-server"


def export_preset(name: str, path) -> None:
    subprocess.run(
        [sys.executable, "-m", "caesim.cli", "export-preset", "--preset", name, "--out", str(path)],
        check=True,
        capture_output=True,
    )


@pytest.fixture(scope="session")
def scenario_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("scenarios")


@pytest.fixture(scope="session")
def s1_scenario(scenario_dir):
    path = scenario_dir / "s1.json"
    export_preset("s1", path)
    return path


@pytest.fixture(scope="session")
def s2_scenario(scenario_dir):
    path = scenario_dir / "s2.json"
    export_preset("s2", path)
    return path


@pytest.fixture(scope="session")
def fig4_scenario(scenario_dir):
    path = scenario_dir / "fig4.json"
    export_preset("fig4", path)
    return path


@pytest.fixture(scope="session")
def fig5_scenario(scenario_dir):
    path = scenario_dir / "fig5.json"
    export_preset("fig5", path)
    return path


@pytest.fixture(scope="session")
def zero_cae_scenario(scenario_dir, s2_scenario):
    data = json.loads(s2_scenario.read_text())
    data["sources"][0]["cae"] = [[0, 0], [0, 0]]
    path = scenario_dir / "zero_cae.json"
    path.write_text(json.dumps(data))
    return path
