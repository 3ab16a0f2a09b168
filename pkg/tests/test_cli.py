import json

import pytest
import yaml

from s2dm.cli import main
from s2dm.config import RunConfig
from s2dm.evaluation import read_reports

TINY = {
    "n_pairs": 60, "n_heldout": 20, "n_mrc": 30, "n_sts": 5, "enc_dim": 16, "latent_dim": 16,
    "hidden": 16, "probe_rank": 4, "steps_stage1": 15, "epochs_stage2": 1, "batch_stage1": 8,
    "batch_stage2": 8, "probe_steps": 5, "probe_fit_pairs": 30, "fixed_kappa": 300.0,
    "lr_stage1": 3e-3, "lr_stage2": 1e-3,
}


def write_config(tmp_path, **extra):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump({**TINY, "out_dir": str(tmp_path / "out"), **extra}))
    return path


def run(cfg, *args):
    return main([args[0], "--config", str(cfg), *args[1:]])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = write_config(tmp)
    codes = [run(cfg, cmd) for cmd in ("gen-data", "train-stage1", "train-stage2", "eval")]
    return tmp, cfg, codes


def test_pipeline_exit_codes(pipeline):
    _, _, codes = pipeline
    assert codes == [0, 0, 0, 0]


def test_gen_data_files_and_regeneration(pipeline, tmp_path):
    tmp, _, _ = pipeline
    data = tmp / "out" / "data"
    names = sorted(p.name for p in data.iterdir())
    assert names == sorted(["heldout.align", "heldout.l1.conllu", "heldout.l2.conllu",
                            "mrc.l1.jsonl", "mrc.l2.jsonl", "sts.jsonl", "train.align",
                            "train.l1.conllu", "train.l2.conllu", "vocab.txt"])
    assert (data / "train.l1.conllu").read_text().count("# sent_id") == 60
    assert len((data / "mrc.l2.jsonl").read_text().splitlines()) == 30
    other = write_config(tmp_path)
    assert run(other, "gen-data") == 0
    for p in data.iterdir():
        assert (tmp_path / "out" / "data" / p.name).read_bytes() == p.read_bytes()


def test_stage1_outputs(pipeline):
    tmp, _, _ = pipeline
    rows = [json.loads(x) for x in (tmp / "out" / "stage1" / "loss.jsonl").read_text().splitlines()]
    assert len(rows) == 15
    first = rows[0]
    assert first["total"] == pytest.approx(sum(first[k] for k in
                                               ("rl", "kl", "crl", "sdl", "wpl", "pos", "stl")))
    assert set(first) == {"step", "total", "rl", "kl", "crl", "sdl", "wpl", "pos", "stl"}


def test_stage2_touches_no_target_language(pipeline):
    tmp, _, _ = pipeline
    from s2dm.nn import load_checkpoint
    for kind in ("s2dm", "baseline"):
        _, meta = load_checkpoint(tmp / "out" / "stage2" / f"{kind}.json")
        assert meta["l2_accesses"] == 0


def test_eval_report_families(pipeline):
    tmp, _, _ = pipeline
    ev = tmp / "out" / "eval"
    reports = read_reports(ev / "reports.jsonl")
    families = {r.metric for r in reports}
    assert families == {"em", "f1", "constituent_consistency", "sts", "retrieval",
                        "probe_depth", "probe_distance"}
    ids = {}
    for kind in ("s2dm", "baseline"):
        rows = [json.loads(x) for x in (ev / f"predictions.{kind}.l2.jsonl").read_text().splitlines()]
        ids[kind] = [r["example_id"] for r in rows]
    assert ids["s2dm"] == ids["baseline"] and len(ids["s2dm"]) == 30
    header = (ev / "pca.csv").read_text().splitlines()[0]
    assert header == "label,lang,pc1,pc2"


def test_export_pca_z(pipeline):
    tmp, cfg, _ = pipeline
    assert main(["export-pca", "--config", str(cfg), "--vector", "z"]) == 0
    assert len((tmp / "out" / "eval" / "pca.z.csv").read_text().splitlines()) == 41


def test_rerun_is_deterministic(pipeline, tmp_path):
    tmp, _, _ = pipeline
    cfg = write_config(tmp_path)
    for cmd in ("gen-data", "train-stage1"):
        assert run(cfg, cmd) == 0
    a = (tmp / "out" / "stage1" / "loss.jsonl").read_text()
    b = (tmp_path / "out" / "stage1" / "loss.jsonl").read_text()
    assert a == b


def test_exit_codes(tmp_path):
    cfg = write_config(tmp_path)
    assert run(cfg, "train-stage2") == 1                         # no stage-1 artifacts
    assert run(cfg, "gen-data", "--set", "lr_stage1=-1") == 2
    assert run(cfg, "gen-data", "--set", "no_such_key=3") == 2
    bad = write_config(tmp_path, siamese=False, losses=["rl", "sdl"])
    assert run(bad, "ablate") == 2


def test_nan_loss_exit_code(tmp_path):
    cfg = write_config(tmp_path, lr_stage1=1e12, steps_stage1=40, fixed_kappa=None)
    assert run(cfg, "gen-data") == 0
    assert run(cfg, "train-stage1") == 3


def test_seed_env_and_flag(tmp_path, monkeypatch):
    cfg = write_config(tmp_path)
    monkeypatch.setenv("S2DM_SEED", "11")
    assert run(cfg, "gen-data") == 0
    assert RunConfig.load(tmp_path / "out" / "config.yaml").seed == 11
    assert run(cfg, "gen-data", "--seed", "12") == 0
    assert RunConfig.load(tmp_path / "out" / "config.yaml").seed == 12
    monkeypatch.setenv("S2DM_SEED", "eleven")
    assert run(cfg, "gen-data") == 2


def test_config_roundtrip(tmp_path):
    cfg = RunConfig(seed=4, losses=["rl", "kl", "wpl"], fixed_kappa=300.0)
    cfg.dump(tmp_path / "c.yaml")
    assert RunConfig.load(tmp_path / "c.yaml") == cfg


def test_ablate_grid(tmp_path):
    cfg = write_config(tmp_path, steps_stage1=3, losses=["rl", "kl", "wpl", "stl"])
    assert run(cfg, "ablate") == 0
    reports = read_reports(tmp_path / "out" / "ablate" / "reports.jsonl")
    cells = {r.cohort["cell"] for r in reports}
    # full, one cell per removable loss, and the single-network cell
    assert cells == {"full", "-rl", "-kl", "-wpl", "-stl", "single"}
