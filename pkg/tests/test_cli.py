import json

import pytest

from edisco.cli import main
from edisco.errors import ProbePermissionError
from edisco.simharness import ScenarioSpec, generate_scenario
from edisco.topology import AggregationTree

from conftest import REFERENCE_ZONE, make_path


@pytest.fixture
def bundle_dir(tmp_path):
    bundle = generate_scenario(ScenarioSpec(clients=12, seed=7, services=3))
    bundle.write(tmp_path)
    return tmp_path, bundle


# -- exit code contract --------------------------------------------------------


def test_no_subcommand_is_usage_error(capsys):
    assert main([]) == 2


def test_unknown_flag_is_usage_error(capsys):
    assert main(["tree", "--bogus"]) == 2


def test_missing_required_flag_is_usage_error(capsys):
    assert main(["tree", "--root", "240.0.0.1"]) == 2


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert main(["tree", "--help"]) == 0


def test_missing_fixture_file_is_operational_error(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    code = main(["tree", "--traces", str(missing), "--root", "240.0.0.1"])
    assert code == 1
    assert str(missing) in capsys.readouterr().err


# -- tree / export-dot -----------------------------------------------------------


def test_tree_emits_valid_document(bundle_dir, capsys):
    directory, bundle = bundle_dir
    code = main(
        [
            "tree",
            "--traces",
            str(directory / "traces.json"),
            "--root",
            bundle.root_address,
        ]
    )
    assert code == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["format"] == "edisco-tree/1"
    tree = AggregationTree.from_document(doc)
    assert len(tree.client_paths) == len(bundle.clients)


def test_tree_out_writes_file(bundle_dir, tmp_path, capsys):
    directory, bundle = bundle_dir
    out = tmp_path / "tree.json"
    code = main(
        [
            "tree",
            "--traces",
            str(directory / "traces.json"),
            "--root",
            bundle.root_address,
            "--out",
            str(out),
        ]
    )
    assert code == 0
    captured = capsys.readouterr()
    assert captured.out == ""  # data went to the file, not stdout
    assert str(out) in captured.err
    assert json.loads(out.read_text())["format"] == "edisco-tree/1"


def test_export_dot_from_tree_document(bundle_dir, tmp_path, capsys):
    directory, bundle = bundle_dir
    tree_file = tmp_path / "tree.json"
    main(
        [
            "tree",
            "--traces",
            str(directory / "traces.json"),
            "--root",
            bundle.root_address,
            "--out",
            str(tree_file),
        ]
    )
    capsys.readouterr()
    assert main(["export-dot", "--tree", str(tree_file)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("digraph")
    assert "->" in out


def test_export_dot_needs_a_source(capsys):
    assert main(["export-dot"]) == 1
    assert "--tree" in capsys.readouterr().err


# -- discover ---------------------------------------------------------------------


def test_discover_json_lists_servers(tmp_path, capsys):
    zone = tmp_path / "zone.txt"
    zone.write_text(REFERENCE_ZONE)
    code = main(
        ["discover", "--domain", "domainA.com", "--zone", str(zone), "--json"]
    )
    assert code == 0
    servers = json.loads(capsys.readouterr().out)
    assert len(servers) == 4  # two transports, two servers each
    assert {s["address"] for s in servers} == {"192.168.121.30", "192.168.121.31"}


def test_discover_transport_filter(tmp_path, capsys):
    zone = tmp_path / "zone.txt"
    zone.write_text(REFERENCE_ZONE)
    code = main(
        [
            "discover",
            "--domain",
            "domainA.com",
            "--zone",
            str(zone),
            "--transport",
            "tcp",
            "--json",
        ]
    )
    assert code == 0
    servers = json.loads(capsys.readouterr().out)
    assert len(servers) == 2
    assert all(s["protocol"] == "tcp" for s in servers)


def test_discover_human_table(tmp_path, capsys):
    zone = tmp_path / "zone.txt"
    zone.write_text(REFERENCE_ZONE)
    assert main(["discover", "--domain", "domainA.com", "--zone", str(zone)]) == 0
    out = capsys.readouterr().out
    assert "PRIO" in out.splitlines()[0]
    assert "192.168.121.30" in out


def test_discover_absent_domain_is_not_an_error(tmp_path, capsys):
    zone = tmp_path / "zone.txt"
    zone.write_text(REFERENCE_ZONE)
    code = main(
        ["discover", "--domain", "other.org", "--zone", str(zone), "--json"]
    )
    assert code == 0
    captured = capsys.readouterr()
    assert json.loads(captured.out) == []
    assert "no edge servers" in captured.err


# -- plan ---------------------------------------------------------------------------


def test_plan_matches_expected_golden(bundle_dir, capsys):
    directory, bundle = bundle_dir
    code = main(
        [
            "plan",
            "--traces",
            str(directory / "traces.json"),
            "--root",
            bundle.root_address,
            "--zone",
            str(directory / "zone.txt"),
            "--whois",
            str(directory / "whois.json"),
            "--services",
            str(directory / "services.json"),
            "--capacity",
            str(directory / "capacity.json"),
        ]
    )
    assert code == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc == bundle.expected["plan"]


# -- serve-redirect -------------------------------------------------------------------


class DummyServer:
    server_address = ("127.0.0.1", 12345)

    def serve_forever(self):
        raise KeyboardInterrupt

    def server_close(self):
        pass


def test_serve_redirect_starts_and_stops(bundle_dir, tmp_path, capsys, monkeypatch):
    directory, bundle = bundle_dir
    plan_file = tmp_path / "plan.json"
    plan_file.write_text(json.dumps(bundle.expected["plan"]))
    monkeypatch.setattr("edisco.cli.make_http_server", lambda *a, **k: DummyServer())
    code = main(
        ["serve-redirect", "--plan", str(plan_file), "--listen", "127.0.0.1:0"]
    )
    assert code == 0
    assert "serving" in capsys.readouterr().err


def test_serve_redirect_bad_listen_is_usage_error(capsys):
    assert main(["serve-redirect", "--plan", "x.json", "--listen", "nope"]) == 2


# -- run ---------------------------------------------------------------------------------


def test_run_once_emits_record(bundle_dir, tmp_path, capsys):
    directory, bundle = bundle_dir
    journal = tmp_path / "journal.jsonl"
    code = main(
        [
            "run",
            "--config",
            str(directory / "config.json"),
            "--once",
            "--journal",
            str(journal),
        ]
    )
    assert code == 0
    record = json.loads(capsys.readouterr().out)
    assert record["format"] == "edisco-round/1"
    assert record["tree_digest"] == bundle.expected["tree_digest"]
    assert record["plan"] == bundle.expected["plan"]
    assert len(journal.read_text().splitlines()) == 1


def test_run_once_is_deterministic(bundle_dir, capsys):
    directory, bundle = bundle_dir
    digests = []
    for _ in range(2):
        assert main(["run", "--config", str(directory / "config.json"), "--once"]) == 0
        digests.append(json.loads(capsys.readouterr().out)["tree_digest"])
    assert digests[0] == digests[1]


def test_run_uses_env_config(bundle_dir, capsys, monkeypatch):
    directory, _ = bundle_dir
    monkeypatch.setenv("EDISCO_CONFIG", str(directory / "config.json"))
    assert main(["run", "--once"]) == 0
    assert json.loads(capsys.readouterr().out)["round_id"] == 1


def test_run_without_config_anywhere(capsys, monkeypatch):
    monkeypatch.delenv("EDISCO_CONFIG", raising=False)
    assert main(["run", "--once"]) == 2
    assert "EDISCO_CONFIG" in capsys.readouterr().err


def test_run_loop_rejects_short_period(bundle_dir, capsys):
    directory, _ = bundle_dir
    config = json.loads((directory / "config.json").read_text())
    config["period_s"] = 30
    (directory / "short.json").write_text(json.dumps(config))
    assert main(["run", "--config", str(directory / "short.json")]) == 1
    assert "minimum" in capsys.readouterr().err


# -- gen ---------------------------------------------------------------------------------


def test_gen_writes_bundle(tmp_path, capsys):
    out = tmp_path / "scenario"
    code = main(
        ["gen", "--clients", "10", "--seed", "3", "--out", str(out), "--json"]
    )
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["clients"] == 10
    assert "config.json" in summary["files"]
    assert "expected.json" in summary["files"]
    assert (out / "zone.txt").exists()


def test_gen_no_expected(tmp_path, capsys):
    out = tmp_path / "scenario"
    code = main(
        ["gen", "--clients", "5", "--out", str(out), "--no-expected", "--json"]
    )
    assert code == 0
    assert "expected.json" not in json.loads(capsys.readouterr().out)["files"]


def test_gen_invalid_spec_is_operational_error(tmp_path, capsys):
    code = main(["gen", "--clients", "0", "--out", str(tmp_path / "x")])
    assert code == 1
    assert "clients" in capsys.readouterr().err


def test_gen_then_run_round_trip(tmp_path, capsys):
    out = tmp_path / "scenario"
    assert main(["gen", "--clients", "8", "--seed", "1", "--out", str(out)]) == 0
    capsys.readouterr()
    assert main(["run", "--config", str(out / "config.json"), "--once"]) == 0
    record = json.loads(capsys.readouterr().out)
    expected = json.loads((out / "expected.json").read_text())
    assert record["tree_digest"] == expected["tree_digest"]
    assert record["plan"] == expected["plan"]


# -- probe (prober faked; live probing needs raw sockets) ---------------------------------


def test_probe_human_output(capsys, monkeypatch):
    path = make_path("172.16.0.9", "10.0.0.1", None)

    class FakeProber:
        def __init__(self, config):
            pass

        def probe(self, client):
            return path

    monkeypatch.setattr("edisco.cli.TracerouteProber", FakeProber)
    assert main(["probe", "172.16.0.9"]) == 0
    out = capsys.readouterr().out
    assert "# 172.16.0.9" in out
    assert "10.0.0.1" in out
    assert "  *" in out  # the silent hop


def test_probe_json_output(capsys, monkeypatch):
    path = make_path("172.16.0.9", "10.0.0.1")

    class FakeProber:
        def __init__(self, config):
            pass

        def probe(self, client):
            return path

    monkeypatch.setattr("edisco.cli.TracerouteProber", FakeProber)
    assert main(["probe", "172.16.0.9", "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc[0]["client"] == "172.16.0.9"


def test_probe_permission_error_is_operational(capsys, monkeypatch):
    class DeniedProber:
        def __init__(self, config):
            pass

        def probe(self, client):
            raise ProbePermissionError("raw ICMP socket refused")

    monkeypatch.setattr("edisco.cli.TracerouteProber", DeniedProber)
    assert main(["probe", "172.16.0.9"]) == 1
    assert "refused" in capsys.readouterr().err
