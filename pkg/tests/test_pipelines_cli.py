"""Report pipelines and the command line wrapper around them."""

import json
import os

import pytest

from qcatalyst import ValidationError, max_entangled, tensor_states
from qcatalyst.cli import main
from qcatalyst.pipelines import (
    pipeline_lemma1,
    pipeline_obs1,
    pipeline_obs3,
    pipeline_schmidt,
    pipeline_theorem,
    qutrit_pair_states,
)


def quantity(report, name):
    for q in report.quantities:
        if q.name == name:
            return q
    raise AssertionError(f"no quantity named {name}")


class TestPipelineVerdicts:
    def test_lemma1_default_inputs(self):
        report = pipeline_lemma1(n=2)
        assert report.verdict == "verified"
        assert quantity(report, "output-distance").value < 1e-12
        assert quantity(report, "catalyst-restoration-distance").value < 1e-12

    def test_lemma1_explicit_flag_mode(self):
        report = pipeline_lemma1(n=2, mode="explicit-flags")
        assert report.verdict == "verified"
        assert quantity(report, "mode").value == "explicit-flags"

    def test_lemma1_refuses_entangled_sigma(self):
        rho, _ = qutrit_pair_states()
        report = pipeline_lemma1(rho, rho, n=2)
        assert report.verdict == "refused"
        assert report.reason

    def test_theorem_smallest_case(self):
        report = pipeline_theorem(1)
        assert report.verdict == "verified"
        assert quantity(report, "target-sn-oracle").value == (4, 4)
        assert quantity(report, "impossible-with-message-dim").value == (1, True)
        assert quantity(report, "converse-message-dimension").value == 2

    def test_obs1_entangled_and_product(self):
        report = pipeline_obs1(2)
        assert report.verdict == "verified"
        assert quantity(report, "message-dimension").value == 2
        product = pipeline_obs1(2, product_rho=True)
        assert product.verdict == "verified"
        assert quantity(product, "message-dimension").value == 1

    def test_obs3(self):
        report = pipeline_obs3(seeds=2)
        assert report.verdict == "verified"
        assert quantity(report, "message-dimension").value == 1
        assert quantity(report, "entropy-gap").value == pytest.approx(1.0, abs=1e-9)

    def test_schmidt_pure_and_mixed(self):
        pure = pipeline_schmidt(max_entangled(3, ("A", "B")))
        assert pure.verdict == "verified"
        assert quantity(pure, "schmidt-rank").value == 3

        rho, sigma = qutrit_pair_states()
        from qcatalyst import EnsembleBranch, QuantumState

        mixed = QuantumState.from_branches(
            rho.layout,
            (
                EnsembleBranch(0.5, rho.branches[0].factors),
                EnsembleBranch(0.5, sigma.branches[0].factors),
            ),
        )
        rep = pipeline_schmidt(mixed)
        assert rep.verdict == "verified"
        assert quantity(rep, "sn-lower").value == 2
        assert quantity(rep, "sn-upper").value == 2


class TestCorruption:
    # a perturbation far above tolerance must flip every pipeline
    @pytest.mark.parametrize(
        "build",
        [
            lambda: pipeline_lemma1(n=2, corruption=1e-3),
            lambda: pipeline_theorem(1, corruption=1e-3),
            lambda: pipeline_obs1(2, corruption=1e-3),
            lambda: pipeline_obs3(seeds=2, corruption=1e-3),
        ],
        ids=["lemma1", "theorem", "obs1", "obs3"],
    )
    def test_corruption_falsifies(self, build):
        report = build()
        assert report.verdict == "falsified"
        assert any(not q.ok for q in report.quantities)
        assert report.corruption == 1e-3


class TestReportDocument:
    def test_json_render_is_deterministic(self):
        report = pipeline_lemma1(n=1)
        a = json.dumps(report.to_json(), indent=2, sort_keys=True)
        b = json.dumps(report.to_json(), indent=2, sort_keys=True)
        assert a == b

    def test_repeat_runs_differ_only_in_timestamp(self):
        doc1 = pipeline_lemma1(n=1).to_json()
        doc2 = pipeline_lemma1(n=1).to_json()
        doc1.pop("timestamp")
        doc2.pop("timestamp")
        assert doc1 == doc2

    def test_text_format_marks_failures(self):
        good = pipeline_lemma1(n=1).to_text()
        assert "verdict: verified" in good
        assert "FAIL" not in good
        bad = pipeline_lemma1(n=1, corruption=1e-3).to_text()
        assert "verdict: falsified" in bad
        assert "FAIL" in bad

    def test_versions_recorded(self):
        report = pipeline_lemma1(n=1)
        assert set(report.versions) == {"qcatalyst", "numpy", "python"}


def write_state(path, state):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(state.to_json(), fh)


class TestCli:
    def test_verified_run_exits_zero(self, capsys):
        code = main(["lemma1", "--n", "1"])
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["verdict"] == "verified"

    def test_text_format(self, capsys):
        code = main(["lemma1", "--n", "1", "--format", "text"])
        assert code == 0
        out = capsys.readouterr().out
        assert out.startswith("pipeline: catalytic-mixing")
        assert out.rstrip().endswith("verdict: verified")

    def test_out_written_atomically(self, tmp_path):
        target = tmp_path / "report.json"
        code = main(["lemma1", "--n", "1", "--out", str(target)])
        assert code == 0
        doc = json.loads(target.read_text())
        assert doc["pipeline"] == "catalytic-mixing"
        assert os.listdir(tmp_path) == ["report.json"]  # no tmp file left

    def test_hidden_corruption_flag_exits_two(self, capsys):
        code = main(["lemma1", "--n", "1", "--corrupt-epsilon", "1e-3"])
        assert code == 2
        doc = json.loads(capsys.readouterr().out)
        assert doc["verdict"] == "falsified"

    def test_missing_subcommand_is_usage_error(self):
        with pytest.raises(SystemExit) as err:
            main([])
        assert err.value.code == 1

    def test_theorem_requires_n(self):
        with pytest.raises(SystemExit) as err:
            main(["theorem"])
        assert err.value.code == 1

    def test_lemma1_rejects_single_state_file(self, tmp_path):
        rho, _ = qutrit_pair_states()
        path = tmp_path / "rho.json"
        write_state(path, rho)
        with pytest.raises(SystemExit) as err:
            main(["lemma1", "--rho", str(path)])
        assert err.value.code == 1

    def test_lemma1_with_state_files(self, tmp_path, capsys):
        rho, sigma = qutrit_pair_states()
        rho_path = tmp_path / "rho.json"
        sigma_path = tmp_path / "sigma.json"
        write_state(rho_path, rho)
        write_state(sigma_path, sigma)
        code = main(
            ["lemma1", "--rho", str(rho_path), "--sigma", str(sigma_path), "--n", "2"]
        )
        assert code == 0
        assert json.loads(capsys.readouterr().out)["verdict"] == "verified"

    def test_missing_file_exits_one(self, tmp_path):
        code = main(["schmidt", "--input", str(tmp_path / "nope.json")])
        assert code == 1

    def test_unparseable_file_exits_one(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("this is not json")
        code = main(["schmidt", "--input", str(path)])
        assert code == 1

    def test_invalid_state_refused_exits_two(self, tmp_path, capsys):
        # parses as JSON but fails state validation (trace 2)
        st = max_entangled(2, ("A", "B")).as_dense_state()
        doc = st.to_json()
        doc["dense"] = [[2 * v for v in row] for row in doc["dense"]]
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(doc))
        code = main(["schmidt", "--input", str(path)])
        assert code == 2
        assert "refused" in capsys.readouterr().err

    def test_schmidt_on_saved_state(self, tmp_path, capsys):
        path = tmp_path / "state.json"
        write_state(path, max_entangled(3, ("A", "B")))
        code = main(["schmidt", "--input", str(path)])
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        ranks = {q["name"]: q["value"] for q in doc["quantities"]}
        assert ranks["schmidt-rank"] == 3

    def test_schmidt_cut_override(self, tmp_path, capsys):
        # three registers: referee side chosen by the --cut flag
        from qcatalyst import ALICE, BOB, REFEREE, QuantumState, Register, RegisterLayout

        pair = max_entangled(2, ("A", "R"), (ALICE, REFEREE))
        lone = QuantumState.pure(
            RegisterLayout((Register("B", 2, BOB),)), [1.0, 0.0]
        )
        state = tensor_states(pair, lone)
        path = tmp_path / "tri.json"
        write_state(path, state)
        code = main(
            ["schmidt", "--input", str(path), "--cut", '{"R": "left"}']
        )
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        ranks = {q["name"]: q["value"] for q in doc["quantities"]}
        assert ranks["schmidt-rank"] == 1
        code2 = main(
            ["schmidt", "--input", str(path), "--cut", '{"R": "right"}']
        )
        assert code2 == 0
        doc2 = json.loads(capsys.readouterr().out)
        ranks2 = {q["name"]: q["value"] for q in doc2["quantities"]}
        assert ranks2["schmidt-rank"] == 2

    def test_obs1_and_obs3_subcommands(self, capsys):
        assert main(["obs1", "--n", "2"]) == 0
        capsys.readouterr()
        assert main(["obs3", "--seeds", "1"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["verdict"] == "verified"
