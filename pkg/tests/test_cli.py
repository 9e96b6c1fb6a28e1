"""End-to-end command-line pipeline: simulate, reconstruct, evaluate."""

from fractions import Fraction

import numpy as np
import pytest

from multilook.cli import main
from multilook.io import (
    load_bundle,
    parse_config,
    read_point_cloud,
    read_trace,
    read_volume,
    save_bundle,
)

CFG_TEXT = (
    "[sim]\n"
    "nx = 8\nny = 8\nnt = 4\nq = 1\nlooks = 2\nnoise_var = 0.001\nseed = 1\n"
    "diameter_fraction = 0.8\nphantom = cube\nphantom_size = 3.0\n"
    "[prior]\nkind = gaussian\nstrength = 0.5\n"
    "[engine]\nmax_iters = 3\n"
)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One simulate -> reconstruct -> evaluate chain shared by the checks."""
    root = tmp_path_factory.mktemp("pipeline")
    cfg = root / "run.cfg"
    cfg.write_text(CFG_TEXT)
    data = root / "data"
    recon = root / "recon"
    scores = root / "scores"
    codes = (
        main(["simulate", "--config", str(cfg), "--out", str(data)]),
        main(
            [
                "reconstruct",
                "--config",
                str(cfg),
                "--data",
                str(data),
                "--out",
                str(recon),
            ]
        ),
        main(
            [
                "evaluate",
                "--config",
                str(cfg),
                "--data",
                str(data),
                "--recon",
                str(recon / "recon.vol"),
                "--out",
                str(scores),
            ]
        ),
    )
    return {"cfg": cfg, "data": data, "recon": recon, "scores": scores, "codes": codes}


class TestPipeline:
    def test_all_stages_succeed(self, pipeline):
        assert pipeline["codes"] == (0, 0, 0)

    def test_simulate_writes_bundle(self, pipeline):
        data = pipeline["data"]
        for name in ("look_000.vol", "look_001.vol", "mask.vol", "truth.vol",
                     "manifest.cfg", "config.cfg"):
            assert (data / name).is_file()
        bundle = load_bundle(data)
        assert bundle.dims.shape == (8, 8, 4)
        assert len(bundle.ys) == 2
        assert bundle.truth is not None

    def test_reconstruct_writes_volume_and_trace(self, pipeline):
        recon = pipeline["recon"]
        volume, q = read_volume(recon / "recon.vol", expect="real")
        assert volume.shape == (8, 8, 4)
        assert q == Fraction(1)
        assert np.isfinite(volume).all()
        rows = read_trace(recon / "trace.tsv")
        assert [row.iteration for row in rows] == [1, 2, 3]
        assert (recon / "config.cfg").is_file()

    def test_evaluate_writes_report_and_cloud(self, pipeline):
        scores = pipeline["scores"]
        report = (scores / "metrics.txt").read_text()
        fields = dict(line.split(" = ") for line in report.strip().splitlines())
        assert set(fields) >= {
            "psnr_db", "psnr_beta", "euclid_m", "fp_rate", "nrmse",
            "points_retained", "points_removed", "threshold", "cutoff_m",
        }
        assert np.isfinite(float(fields["psnr_db"]))
        assert float(fields["threshold"]) == pytest.approx(0.001 / load_bundle(pipeline["data"]).mask.alpha)
        read_point_cloud(scores / "cloud.txt")

    def test_resolved_config_round_trips(self, pipeline):
        text = (pipeline["data"] / "config.cfg").read_text()
        cfg = parse_config(text)
        assert cfg["sim"]["looks"] == 2
        assert cfg["engine"]["max_iters"] == 3
        assert cfg["prior"]["kind"] == "gaussian"


def run_simulate(tmp_path, name, extra=()):
    cfg = tmp_path / "run.cfg"
    if not cfg.exists():
        cfg.write_text(CFG_TEXT)
    out = tmp_path / name
    code = main(["simulate", "--config", str(cfg), "--out", str(out), *extra])
    return code, out


class TestSimulateOptions:
    def test_deterministic_bundles(self, tmp_path):
        code_a, a = run_simulate(tmp_path, "a")
        code_b, b = run_simulate(tmp_path, "b")
        assert code_a == code_b == 0
        for name in ("look_000.vol", "look_001.vol", "mask.vol", "truth.vol",
                     "manifest.cfg", "config.cfg"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_seed_override_changes_data(self, tmp_path):
        _, a = run_simulate(tmp_path, "a")
        _, b = run_simulate(tmp_path, "b", ("--seed", "2"))
        assert (a / "look_000.vol").read_bytes() != (b / "look_000.vol").read_bytes()
        assert load_bundle(b).sim.seed == 2

    def test_looks_override(self, tmp_path):
        _, out = run_simulate(tmp_path, "a", ("--looks", "3"))
        bundle = load_bundle(out)
        assert len(bundle.ys) == 3
        assert parse_config((out / "config.cfg").read_text())["sim"]["looks"] == 3

    def test_pad_factor_override(self, tmp_path):
        _, out = run_simulate(tmp_path, "a", ("--q", "3/2"))
        bundle = load_bundle(out)
        assert bundle.dims.q == Fraction(3, 2)
        assert bundle.dims.shape == (12, 12, 6)
        _, q = read_volume(out / "look_000.vol")
        assert q == Fraction(3, 2)

    def test_bad_pad_factor_is_runtime_error(self, tmp_path, capsys):
        code, _ = run_simulate(tmp_path, "a", ("--q", "1.25"))
        assert code == 2
        assert "--q" in capsys.readouterr().err


class TestReconstructOptions:
    @pytest.fixture()
    def data(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(CFG_TEXT)
        out = tmp_path / "data"
        assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
        return out

    def test_deterministic_volume(self, tmp_path, data):
        outs = []
        for name in ("ra", "rb"):
            out = tmp_path / name
            code = main(
                ["reconstruct", "--config", str(tmp_path / "run.cfg"),
                 "--data", str(data), "--out", str(out)]
            )
            assert code == 0
            outs.append(out)
        assert (outs[0] / "recon.vol").read_bytes() == (outs[1] / "recon.vol").read_bytes()

    def test_iteration_override(self, tmp_path, data):
        out = tmp_path / "r"
        code = main(
            ["reconstruct", "--data", str(data), "--out", str(out), "--iters", "2"]
        )
        assert code == 0
        assert len(read_trace(out / "trace.tsv")) == 2
        assert parse_config((out / "config.cfg").read_text())["engine"]["max_iters"] == 2

    def test_prior_and_sigma2_overrides_resolved(self, tmp_path, data):
        out = tmp_path / "r"
        code = main(
            ["reconstruct", "--data", str(data), "--out", str(out),
             "--iters", "2", "--prior", "identity", "--sigma2", "0.3"]
        )
        assert code == 0
        cfg = parse_config((out / "config.cfg").read_text())
        assert cfg["prior"]["kind"] == "identity"
        assert cfg["em"]["sigma2"] == 0.3

    def test_no_aperture_ablation(self, tmp_path, data, capsys):
        out = tmp_path / "r"
        code = main(
            ["reconstruct", "--data", str(data), "--out", str(out),
             "--iters", "2", "--no-aperture"]
        )
        assert code == 0
        assert "aperture model disabled" in capsys.readouterr().err
        volume, _ = read_volume(out / "recon.vol", expect="real")
        assert np.isfinite(volume).all()

    def test_missing_bundle_is_runtime_error(self, tmp_path, capsys):
        code = main(
            ["reconstruct", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "r")]
        )
        assert code == 2
        assert "error:" in capsys.readouterr().err


class TestEvaluateErrors:
    def test_truthless_bundle(self, tmp_path, capsys):
        from multilook.forward import ForwardOperator
        from multilook.simulate import SimParams, simulate_looks
        from multilook.volume import Dims, make_aperture

        dims = Dims(4, 4, 2)
        sim = SimParams(dims=dims, looks=1, noise_var=1e-3, seed=0)
        mask = make_aperture(dims, 0.8)
        r = np.ones(dims.shape)
        ys = simulate_looks(r, sim, ForwardOperator(mask, sim.noise_var))
        save_bundle(tmp_path / "data", sim, ys, mask)

        from multilook.io import write_volume

        write_volume(tmp_path / "recon.vol", r)
        code = main(
            ["evaluate", "--data", str(tmp_path / "data"),
             "--recon", str(tmp_path / "recon.vol"), "--out", str(tmp_path / "e")]
        )
        assert code == 2
        assert "no ground truth" in capsys.readouterr().err

    def test_shape_mismatch(self, pipeline, tmp_path, capsys):
        from multilook.io import write_volume

        write_volume(tmp_path / "recon.vol", np.ones((2, 2, 2)))
        code = main(
            ["evaluate", "--data", str(pipeline["data"]),
             "--recon", str(tmp_path / "recon.vol"), "--out", str(tmp_path / "e")]
        )
        assert code == 2
        assert "does not match bundle" in capsys.readouterr().err

    def test_missing_recon_file(self, pipeline, tmp_path, capsys):
        code = main(
            ["evaluate", "--data", str(pipeline["data"]),
             "--recon", str(tmp_path / "ghost.vol"), "--out", str(tmp_path / "e")]
        )
        assert code == 2
        assert "missing file" in capsys.readouterr().err


class TestValidateTheory:
    def test_small_run_reports_monotone_energy(self, tmp_path):
        out = tmp_path / "t"
        code = main(
            ["validate-theory", "--out", str(out),
             "--problems", "2", "--iters", "400", "--seed", "3"]
        )
        assert code == 0
        text = (out / "theory.txt").read_text()
        assert "problem 00:" in text and "problem 01:" in text
        assert "all_energy_monotone = true" in text
        assert "worst_kkt_distance" in text

    def test_rejects_zero_problems(self, tmp_path, capsys):
        code = main(
            ["validate-theory", "--out", str(tmp_path / "t"), "--problems", "0"]
        )
        assert code == 2
        assert "--problems" in capsys.readouterr().err


class TestConfigDump:
    def test_defaults_to_stdout(self, capsys):
        assert main(["config-dump"]) == 0
        text = capsys.readouterr().out
        cfg = parse_config(text)
        assert cfg["engine"]["rho"] == 0.5
        assert cfg["sim"]["q"] == Fraction(2)

    def test_reflects_config_file(self, tmp_path, capsys):
        path = tmp_path / "run.cfg"
        path.write_text("[engine]\nrho = 0.25\n")
        assert main(["config-dump", "--config", str(path)]) == 0
        assert parse_config(capsys.readouterr().out)["engine"]["rho"] == 0.25

    def test_optional_out_directory(self, tmp_path, capsys):
        assert main(["config-dump", "--out", str(tmp_path / "d")]) == 0
        disk = (tmp_path / "d" / "config.cfg").read_text()
        assert disk == capsys.readouterr().out

    def test_corrupt_config_file(self, tmp_path, capsys):
        path = tmp_path / "run.cfg"
        path.write_text("[engine]\nrho = nope\n")
        assert main(["config-dump", "--config", str(path)]) == 2
        assert "configuration" in capsys.readouterr().err


class TestUsageErrors:
    @pytest.mark.parametrize(
        "argv",
        [
            [],
            ["frobnicate"],
            ["simulate"],
            ["reconstruct", "--out", "x"],
            ["evaluate", "--data", "x", "--out", "y"],
        ],
    )
    def test_usage_problems_exit_one(self, argv, capsys):
        assert main(argv) == 1
        capsys.readouterr()
