import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from conftest import SMALL
from msgen import pipeline
from msgen.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from msgen.chem import parse_smiles
from msgen.cli import EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED, EXIT_OK, main
from msgen.config import config_from_mapping, format_config, load_config, parse_config
from msgen.errors import ConfigError, DataError, NonFiniteUpdate
from msgen.optim import AdamState
from msgen.specenc import synthetic_spectrum, write_spectra

CORPUS = {
    "eth": "CCO", "prop": "CCCO", "phen": "Oc1ccccc1", "leu": "CC(C)CC(N)C(=O)O",
    "ace": "CC(=O)O", "pyr": "c1ccncc1", "but": "CCCCO", "gly": "NCC(=O)O",
}
WIDTH = 64
TINY = {
    "diffusion.T": 5, "fingerprint.width": WIDTH,
    "denoiser.layers": 1, "denoiser.hidden_node": 8, "denoiser.hidden_edge": 8, "denoiser.hidden_global": 8,
    "denoiser.heads": 2, "denoiser.time_dim": 4, "denoiser.cond_dim": WIDTH,
    "encoder.hidden": 8, "encoder.layers": 1, "encoder.heads": 2, "encoder.mz_dim": 4,
    "encoder.out_dim": WIDTH, "encoder.fp_width": WIDTH,
    "train.steps": 6, "train.batch": 4, "train.checkpoint_every": 3, "train.lr": 3e-3, "sample.count": 6,
}


def write_config(path: Path, **values) -> Path:
    vals = {"seed": 7, **TINY, **values}
    path.write_text("".join(f"{k} = {v}\n" for k, v in vals.items()))
    return path


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """Runs every stage once through the CLI on a tiny configuration."""
    d = tmp_path_factory.mktemp("pipe")
    (d / "corpus.tsv").write_text("".join(f"{k}\t{v}\n" for k, v in CORPUS.items()))
    (d / "exclude.tsv").write_text("x\tOCC\n")  # ethanol, spelled differently
    rng = np.random.default_rng(0)
    spectra = [synthetic_spectrum(parse_smiles(s), k, rng, s) for k, s in list(CORPUS.items())[:4]]
    write_spectra(d / "spectra.txt", spectra)
    cfg = write_config(d / "build.cfg", **{"paths.corpus": "corpus.tsv", "paths.exclusion": "exclude.tsv"})
    assert main(["build-dataset", "--config", str(cfg), "--out", str(d / "data")]) == EXIT_OK
    cfg = write_config(d / "dec.cfg", **{"paths.dataset": "data/dataset.tsv"})
    assert main(["pretrain-decoder", "--config", str(cfg), "--out", str(d / "dec")]) == EXIT_OK
    cfg = write_config(d / "enc.cfg", **{"paths.spectra": "spectra.txt"})
    assert main(["pretrain-encoder", "--config", str(cfg), "--out", str(d / "enc")]) == EXIT_OK
    cfg = write_config(d / "ft.cfg", **{"paths.spectra": "spectra.txt", "paths.decoder": "dec/decoder.ckpt",
                                        "paths.encoder": "enc/encoder.ckpt"})
    assert main(["finetune", "--config", str(cfg), "--out", str(d / "ft")]) == EXIT_OK
    cfg = write_config(d / "sample.cfg", **{"paths.spectra": "spectra.txt", "paths.model": "ft/model.ckpt",
                                            "paths.truth": "spectra.txt"})
    assert main(["sample", "--config", str(cfg), "--out", str(d / "s1")]) == EXIT_OK
    return d


def manifest(path: Path) -> dict:
    return json.loads(path.read_text())


# ---- dataset

def test_exclusion_by_isomorphism(work):
    rows = pipeline.read_dataset(work / "data" / "dataset.tsv")
    assert [mid for mid, _, _ in rows] == [k for k in CORPUS if k != "eth"]
    assert all(fp.width == WIDTH for _, _, fp in rows)
    m = manifest(work / "data" / "build-dataset.manifest.json")
    assert m["metrics"] == {"kept": 7, "excluded": 1}
    assert set(m["inputs"]) == {str(work / "corpus.tsv"), str(work / "exclude.tsv")}


def test_empty_after_exclusion(tmp_path):
    (tmp_path / "c.tsv").write_text("a\tCCO\n")
    cfg = write_config(tmp_path / "b.cfg", **{"paths.corpus": "c.tsv", "paths.exclusion": "c.tsv"})
    assert main(["build-dataset", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_DATA


# ---- training

def test_decoder_outputs(work):
    ck = load_checkpoint(work / "dec" / "decoder.ckpt")
    assert ck.kind == "decoder" and ck.step == 6 and ck.optimizer is not None and ck.optimizer.step == 6
    lines = (work / "dec" / "decoder_loss.tsv").read_text().splitlines()
    assert lines[0] == "step\tloss" and len(lines) == 7
    assert ck.config["diffusion"]["T"] == 5


def test_resume_reproduces_uninterrupted_run(work, tmp_path, monkeypatch):
    cfg = write_config(tmp_path / "a.cfg", **{"paths.dataset": str(work / "data" / "dataset.tsv")})
    calls = {"n": 0}
    real = pipeline.loss_and_grad

    def interrupted(*a, **k):
        calls["n"] += 1
        if calls["n"] == 4:
            raise KeyboardInterrupt
        return real(*a, **k)

    monkeypatch.setattr(pipeline, "loss_and_grad", interrupted)
    with pytest.raises(KeyboardInterrupt):
        main(["pretrain-decoder", "--config", str(cfg), "--out", str(tmp_path / "cut")])
    monkeypatch.setattr(pipeline, "loss_and_grad", real)
    assert load_checkpoint(tmp_path / "cut" / "decoder.ckpt").step == 3
    cfg = write_config(tmp_path / "r.cfg", **{"paths.dataset": str(work / "data" / "dataset.tsv"),
                                             "paths.resume": str(tmp_path / "cut" / "decoder.ckpt")})
    assert main(["pretrain-decoder", "--config", str(cfg), "--out", str(tmp_path / "resumed")]) == EXIT_OK
    assert (tmp_path / "resumed" / "decoder.ckpt").read_bytes() == (work / "dec" / "decoder.ckpt").read_bytes()


def test_divergence_saves_last_good_state(work, tmp_path, monkeypatch):
    cfg = write_config(tmp_path / "a.cfg", **{"paths.dataset": str(work / "data" / "dataset.tsv")})
    calls = {"n": 0}
    real = pipeline.adamw_step

    def diverge(*a, **k):
        calls["n"] += 1
        if calls["n"] == 2:
            raise NonFiniteUpdate("forced")
        return real(*a, **k)

    monkeypatch.setattr(pipeline, "adamw_step", diverge)
    assert main(["pretrain-decoder", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_DIVERGED
    assert load_checkpoint(tmp_path / "decoder.ckpt").step == 1


def test_encoder_and_finetune_outputs(work):
    enc = load_checkpoint(work / "enc" / "encoder.ckpt")
    assert enc.kind == "encoder" and enc.params["encoder"].size > 0
    ft = load_checkpoint(work / "ft" / "model.ckpt")
    assert ft.kind == "joint" and set(ft.params) == {"encoder", "decoder"}
    m = manifest(work / "ft" / "finetune.manifest.json")
    assert m["metrics"]["encoder_grad_norm_step1"] > 0


def test_finetune_dimension_mismatch(work, tmp_path):
    cfg = write_config(tmp_path / "ft.cfg", **{"paths.spectra": str(work / "spectra.txt"),
                                              "paths.decoder": str(work / "dec" / "decoder.ckpt"),
                                              "encoder.out_dim": 16})
    assert main(["finetune", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_CONFIG


# ---- sampling and evaluation

def test_split_count():
    assert pipeline.split_count(100, 5) == [20] * 5
    assert pipeline.split_count(7, 3) == [3, 2, 2]
    with pytest.raises(ValueError):
        pipeline.split_count(10, 0)


def test_sample_file_layout(work):
    lines = (work / "s1" / "samples.tsv").read_text().splitlines()
    assert lines[0] == pipeline.SAMPLES_HEADER.rstrip("\n")
    rows = [l.split("\t") for l in lines[1:]]
    assert len(rows) == 4 * 6
    assert {r[0] for r in rows} == {"eth", "prop", "phen", "leu"}
    assert all(r[3] in ("0", "1") for r in rows)


def test_sample_byte_identical(work):
    cfg = work / "sample.cfg"
    assert main(["sample", "--config", str(cfg), "--out", str(work / "s2")]) == EXIT_OK
    assert main(["sample", "--config", str(cfg), "--out", str(work / "s3"), "--workers", "2"]) == EXIT_OK
    ref = (work / "s1" / "samples.tsv").read_bytes()
    assert (work / "s2" / "samples.tsv").read_bytes() == ref
    assert (work / "s3" / "samples.tsv").read_bytes() == ref


def test_sample_seed_changes_output(work):
    assert main(["sample", "--config", str(work / "sample.cfg"), "--seed", "8", "--out", str(work / "s4")]) == EXIT_OK
    assert (work / "s4" / "samples.tsv").read_bytes() != (work / "s1" / "samples.tsv").read_bytes()


def test_formula_candidates_split(work, tmp_path):
    (tmp_path / "f.tsv").write_text("eth\tC2H6O,C3H8O\n")
    cfg = write_config(tmp_path / "s.cfg", **{"paths.spectra": str(work / "spectra.txt"),
                                             "paths.model": str(work / "ft" / "model.ckpt"),
                                             "paths.formulae": str(tmp_path / "f.tsv"), "sample.count": 5})
    assert main(["sample", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_OK
    rows = [l.split("\t") for l in (tmp_path / "samples.tsv").read_text().splitlines()[1:] if l.startswith("eth\t")]
    assert [r[1] for r in rows] == ["C2H6O"] * 3 + ["C3H8O"] * 2


def test_evaluate(work):
    code = main(["evaluate", "--config", str(work / "sample.cfg"), "--out", str(work / "ev"),
                 str(work / "s1" / "samples.tsv")])
    assert code == EXIT_OK
    summary = dict(l.split("\t") for l in (work / "ev" / "summary.tsv").read_text().splitlines())
    assert float(summary["Spectra"]) == 4 and float(summary["Ranked valid"]) == 1
    assert len((work / "ev" / "metrics.tsv").read_text().splitlines()) == 5


def test_evaluate_refuses_mismatched_manifest(work, tmp_path):
    other = write_config(tmp_path / "o.cfg", **{"paths.truth": str(work / "spectra.txt"), "diffusion.T": 6})
    assert main(["evaluate", "--config", str(other), "--out", str(tmp_path), str(work / "s1" / "samples.tsv")]) == EXIT_DATA
    lone = tmp_path / "lone"
    lone.mkdir()
    shutil.copy(work / "s1" / "samples.tsv", lone / "samples.tsv")
    cfg = write_config(tmp_path / "c.cfg", **{"paths.truth": str(work / "spectra.txt")})
    assert main(["evaluate", "--config", str(cfg), "--out", str(tmp_path), str(lone / "samples.tsv")]) == EXIT_DATA
    tampered = tmp_path / "t"
    shutil.copytree(work / "s1", tampered)
    with open(tampered / "samples.tsv", "a") as fh:
        fh.write("eth\tC2H6O\tCCO\t1\t0\n")
    assert main(["evaluate", "--config", str(cfg), "--out", str(tmp_path), str(tampered / "samples.tsv")]) == EXIT_DATA


def test_evaluate_missing_truth(work, tmp_path):
    (tmp_path / "truth.tsv").write_text("eth\tCCO\n")
    cfg = write_config(tmp_path / "c.cfg", **{"paths.truth": str(tmp_path / "truth.tsv")})
    assert main(["evaluate", "--config", str(cfg), "--out", str(tmp_path), str(work / "s1" / "samples.tsv")]) == EXIT_DATA


def test_manifest_contents(work):
    m = manifest(work / "s1" / "sample.manifest.json")
    assert m["command"] == "sample" and m["seed"] == 7
    assert m["config_hash"] == load_config(work / "sample.cfg").hash()
    assert m["outputs"]["samples.tsv"] == pipeline.content_hash(work / "s1" / "samples.tsv")
    assert m["wall_clock_s"] >= 0


# ---- config

def test_config_rules(tmp_path):
    with pytest.raises(ConfigError, match="unknown"):
        parse_config("seed = 1\nbogus = 3\n")
    with pytest.raises(ConfigError, match="seed"):
        parse_config("diffusion.T = 3\n")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config("seed = 1\nseed = 2\n")
    with pytest.raises(ConfigError, match="does not exist"):
        parse_config("seed = 1\npaths.corpus = /nonexistent/file\n")
    with pytest.raises(ConfigError):
        parse_config("seed = 1\ndiffusion.prior = uniform\n")
    with pytest.raises(ConfigError):
        parse_config("seed = 1\ndenoiser.heads = 3\n")
    cfg = parse_config("seed = 3  # comment\n\ndiffusion.prior = empty\ndenoiser.edge_skip = false\n")
    assert cfg.seed == 3 and cfg["diffusion.prior"] == "empty" and cfg.denoiser().edge_skip is False
    assert cfg["diffusion.T"] == 500 and cfg["sample.count"] == 100


def test_config_hash_ignores_seed_and_paths(tmp_path):
    (tmp_path / "x").write_text("")
    a = parse_config("seed = 1\n")
    b = parse_config(f"seed = 2\npaths.corpus = {tmp_path / 'x'}\n")
    assert a.hash() == b.hash() == a.with_seed(9).hash()
    assert parse_config("seed = 1\ndiffusion.T = 10\n").hash() != a.hash()
    again = parse_config(format_config(b))
    assert again.values == b.values
    assert config_from_mapping({"seed": 4, "train.freeze_encoder": True})["train.freeze_encoder"] is True


def test_cli_config_errors(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("seed = 1\nnot_a_key = 2\n")
    assert main(["sample", "--config", str(bad)]) == EXIT_CONFIG
    assert main(["sample", "--config", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG
    ok = write_config(tmp_path / "ok.cfg")
    assert main(["sample", "--config", str(ok), "--out", str(tmp_path)]) == EXIT_CONFIG  # paths.model unset
    assert main(["sample", "--config", str(ok), "--workers", "0"]) == EXIT_CONFIG


def test_cli_data_error(tmp_path):
    (tmp_path / "c.tsv").write_text("a\tC1CC\n")
    cfg = write_config(tmp_path / "b.cfg", **{"paths.corpus": "c.tsv"})
    assert main(["build-dataset", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_DATA


# ---- checkpoint

def test_checkpoint_roundtrip_and_corruption(tmp_path):
    p = {"a": np.array([0.1, -2.5, 3.0]), "b": np.arange(4.0)}
    opt = AdamState(np.array([1.0] * 7), np.array([2.0] * 7), 5)
    save_checkpoint(tmp_path / "c", Checkpoint("decoder", {"k": 1}, p, 9, opt, {"note": "x"}))
    ck = load_checkpoint(tmp_path / "c")
    assert ck.kind == "decoder" and ck.step == 9 and ck.config == {"k": 1} and ck.extra == {"note": "x"}
    assert np.array_equal(ck.params["a"], np.float32(p["a"]).astype(np.float64))
    assert np.array_equal(ck.params["b"], p["b"]) and ck.optimizer.step == 5
    raw = (tmp_path / "c").read_bytes()
    assert raw[:4] == b"DFMS"
    for name, data in [("magic", b"XXXX" + raw[4:]), ("trunc", raw[:-3]), ("extra", raw + b"\0"),
                       ("version", raw[:4] + (2).to_bytes(4, "little") + raw[8:])]:
        (tmp_path / name).write_bytes(data)
        with pytest.raises(DataError):
            load_checkpoint(tmp_path / name)


# ---- stateless subcommands

def test_fingerprint_command(tmp_path, capsys):
    (tmp_path / "m.tsv").write_text(f"eth\t{SMALL['ethanol']}\nbz\tc1ccccc1\n")
    assert main(["fingerprint", str(tmp_path / "m.tsv"), "--width", "8"]) == EXIT_OK
    out = capsys.readouterr().out.splitlines()
    assert [l.split("\t")[0] for l in out] == ["eth", "bz"] and len(out[0].split("\t")[1]) == 2
    assert main(["fingerprint", str(tmp_path / "m.tsv"), "--width", "1000"]) == EXIT_CONFIG


def test_mces_command(tmp_path):
    (tmp_path / "a.tsv").write_text("leu\tCC(C)CC(N)C(=O)O\n")
    (tmp_path / "b.tsv").write_text("ile\tCCC(C)C(N)C(=O)O\nleu2\tOC(=O)C(N)CC(C)C\n")
    assert main(["mces", str(tmp_path / "a.tsv"), str(tmp_path / "b.tsv"), "--out", str(tmp_path / "o.tsv")]) == 0
    rows = [l.split("\t") for l in (tmp_path / "o.tsv").read_text().splitlines()]
    assert rows == [["leu", "ile", "2", "1"], ["leu", "leu2", "0", "1"]]
