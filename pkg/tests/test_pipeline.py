import dataclasses
import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from blastsda import model as M
from blastsda.checkpoint import load_checkpoint, weights_digest
from blastsda.cli import main
from blastsda.pipeline import (
    ConfigError,
    DataError,
    RunConfig,
    TrainingDiverged,
    apply_blast_mode,
    load_config_file,
    load_scenes,
    load_split,
    make_split,
    run_evaluate,
    run_finetune,
    run_generate,
    run_predict,
    run_pretrain,
    train_loop,
)
from blastsda.rasters import read_pgm, read_ppm

TINY = dict(height=32, width=32, channels=(4, 8, 16, 32), state_dim=4,
            meters_per_pixel=60.0)


def tiny_cfg(**kw):
    merged = {**TINY, **kw}
    return dataclasses.replace(RunConfig(), **merged)


def tree_digest(root: Path) -> str:
    h = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.is_file():
            h.update(str(path.relative_to(root)).encode())
            h.update(path.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One tiny end-to-end run shared by the read-only tests below."""
    root = tmp_path_factory.mktemp("pipeline")
    blast_dir = root / "blast_data"
    pre_dir = root / "pretrain_data"
    run_generate(tiny_cfg(n_scenes=6, seed=5, profile="blast",
                          data_dir=str(blast_dir), out_dir=str(blast_dir)))
    run_generate(tiny_cfg(n_scenes=6, seed=6, profile="multihazard",
                          data_dir=str(pre_dir), out_dir=str(pre_dir)))
    pre_out = root / "pretrain"
    ckpt_pre = run_pretrain(tiny_cfg(n_scenes=6, seed=5, steps=4, data_dir=str(pre_dir),
                                     out_dir=str(pre_out)))
    ft_out = root / "finetune"
    ckpt_ft = run_finetune(tiny_cfg(n_scenes=6, seed=5, steps=4, data_dir=str(blast_dir),
                                    out_dir=str(ft_out), checkpoint_in=str(ckpt_pre)))
    return dict(root=root, blast_dir=blast_dir, pre_dir=pre_dir,
                ckpt_pre=ckpt_pre, ckpt_ft=ckpt_ft)


# ---------------------------------------------------------------------------
# split manifest

def test_split_of_50_is_30_10_10():
    ids = [f"scene_{i:04d}" for i in range(50)]
    split = make_split(ids)
    assert (len(split.train), len(split.val), len(split.test)) == (30, 10, 10)


def test_split_of_5_is_3_1_1():
    split = make_split([f"s{i}" for i in range(5)])
    assert (len(split.train), len(split.val), len(split.test)) == (3, 1, 1)


def test_split_parts_are_disjoint():
    split = make_split([f"s{i}" for i in range(23)])
    parts = [set(split.train), set(split.val), set(split.test)]
    assert not (parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2])
    assert len(parts[0] | parts[1] | parts[2]) == 23


# ---------------------------------------------------------------------------
# generation

def test_generate_layout_and_determinism(tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    for out in (out_a, out_b):
        run_generate(tiny_cfg(n_scenes=4, seed=3, data_dir=str(out), out_dir=str(out)))
    scene_dir = out_a / "scenes" / "scene_0000"
    for name in ("pre.ppm", "post.ppm", "mask.pgm", "damage.pgm", "blast.bfr"):
        assert (scene_dir / name).is_file()
    assert (out_a / "split.json").is_file()
    assert tree_digest(out_a) == tree_digest(out_b)


# ---------------------------------------------------------------------------
# config handling

def test_config_file_parsing_and_overrides(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text(
        "# comment line\n"
        "steps=17\n"
        "learning_rate=0.002\n"
        "channels=4,8,16,32\n"
        "blast_mode=distance_only\n"
    )
    cfg = load_config_file(cfg_file, {"steps": 23})
    assert cfg.steps == 23                      # flag wins over file
    assert cfg.learning_rate == 0.002
    assert cfg.channels == (4, 8, 16, 32)
    assert cfg.blast_mode == "distance_only"


def test_config_rejects_unknown_key(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("warp_speed=9\n")
    with pytest.raises(ConfigError):
        load_config_file(cfg_file)


def test_config_rejects_unparseable_value(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("steps=many\n")
    with pytest.raises(ConfigError):
        load_config_file(cfg_file)


def test_config_rejects_bad_blast_mode():
    with pytest.raises(ConfigError):
        RunConfig(blast_mode="sideways")


def test_cli_reads_config_file_with_flag_overrides(tmp_path):
    cfg_file = tmp_path / "gen.cfg"
    cfg_file.write_text("height=32\nwidth=32\nn_scenes=3\nseed=8\n")
    out = tmp_path / "data"
    assert main(["generate", "--out", str(out), "--config", str(cfg_file),
                 "--n-scenes", "2"]) == 0
    assert len(list((out / "scenes").iterdir())) == 2   # flag beat the file


def test_env_seed_wins(tmp_path, monkeypatch):
    monkeypatch.setenv("BM_SEED", "99")
    out = tmp_path / "d1"
    assert main(["generate", "--out", str(out), "--seed", "3", "--n-scenes", "2",
                 "--height", "32", "--width", "32"]) == 0
    out_ref = tmp_path / "d2"
    monkeypatch.delenv("BM_SEED")
    assert main(["generate", "--out", str(out_ref), "--seed", "99", "--n-scenes", "2",
                 "--height", "32", "--width", "32"]) == 0
    assert tree_digest(out) == tree_digest(out_ref)


# ---------------------------------------------------------------------------
# CLI exit codes

def test_cli_exit_code_config_error(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("nonsense_key=1\n")
    code = main(["pretrain", "--out", str(tmp_path / "o"), "--config", str(bad)])
    assert code == 2


def test_cli_exit_code_data_error(tmp_path):
    code = main(["pretrain", "--out", str(tmp_path / "o"),
                 "--data", str(tmp_path / "missing")])
    assert code == 3


def test_cli_exit_code_missing_checkpoint(tmp_path, workspace):
    code = main(["evaluate", "--out", str(tmp_path / "o"),
                 "--data", str(workspace["blast_dir"]),
                 "--ckpt", str(tmp_path / "nope.ckpt"),
                 "--height", "32", "--width", "32"])
    assert code == 3


# ---------------------------------------------------------------------------
# blast modes

def test_apply_blast_mode_semantics():
    blast = np.random.default_rng(0).random((4, 4, 3))
    none = apply_blast_mode(blast, "none")
    assert not none.any()
    dist = apply_blast_mode(blast, "distance_only")
    assert not dist[..., :2].any()
    np.testing.assert_array_equal(dist[..., 2], blast[..., 2])
    full = apply_blast_mode(blast, "full")
    np.testing.assert_array_equal(full, blast)
    with pytest.raises(ConfigError):
        apply_blast_mode(blast, "half")


# ---------------------------------------------------------------------------
# training stages

def test_pretrain_produces_checkpoint_and_finite_curve(workspace):
    ckpt = workspace["ckpt_pre"]
    assert ckpt.is_file()
    curve = (ckpt.parent / "pretrain_loss.csv").read_text().splitlines()
    assert curve[0] == "step,loss"
    losses = [float(line.split(",")[1]) for line in curve[1:]]
    assert len(losses) == 4 and all(np.isfinite(losses))


def test_pretrain_head_is_broad_taxonomy(workspace):
    weights = load_checkpoint(workspace["ckpt_pre"])
    assert weights.config.damage_classes == M.PRETRAIN_CLASSES


def test_finetune_zero_steps_changes_only_the_head(workspace, tmp_path):
    cfg = tiny_cfg(n_scenes=6, seed=5, steps=0, data_dir=str(workspace["blast_dir"]),
                   out_dir=str(tmp_path), checkpoint_in=str(workspace["ckpt_pre"]))
    ckpt = run_finetune(cfg)
    before = load_checkpoint(workspace["ckpt_pre"])
    after = load_checkpoint(ckpt)
    assert after.config.damage_classes == M.FINETUNE_CLASSES
    assert (weights_digest(before, exclude_prefixes=("damage_head",))
            == weights_digest(after, exclude_prefixes=("damage_head",)))


def test_finetune_requires_checkpoint(workspace, tmp_path):
    cfg = tiny_cfg(data_dir=str(workspace["blast_dir"]), out_dir=str(tmp_path),
                   checkpoint_in=str(tmp_path / "missing.ckpt"))
    with pytest.raises(DataError):
        run_finetune(cfg)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_training_divergence_aborts_with_diagnostic(workspace):
    scenes = load_scenes(workspace["blast_dir"],
                         load_split(workspace["blast_dir"]).train)
    weights = M.init_weights(tiny_cfg().model_config(4), seed=0)
    with pytest.raises(TrainingDiverged):
        train_loop(weights, scenes, steps=30, batch_size=2, lr=1e18, seed=0,
                   blast_mode="full")


def test_finetune_blast_mode_changes_the_outcome(workspace, tmp_path):
    # the fusion input is live: identical runs apart from blast_mode diverge
    digests = {}
    for mode in ("none", "full"):
        cfg = tiny_cfg(n_scenes=6, seed=5, steps=10, blast_mode=mode,
                       data_dir=str(workspace["blast_dir"]),
                       out_dir=str(tmp_path / mode),
                       checkpoint_in=str(workspace["ckpt_pre"]))
        digests[mode] = weights_digest(load_checkpoint(run_finetune(cfg)))
    assert digests["none"] != digests["full"]


# ---------------------------------------------------------------------------
# evaluation and prediction

def test_evaluate_schema_and_byte_determinism(workspace, tmp_path):
    reports = []
    for name in ("e1", "e2"):
        out = tmp_path / name
        cfg = tiny_cfg(data_dir=str(workspace["blast_dir"]), out_dir=str(out),
                       checkpoint_in=str(workspace["ckpt_ft"]))
        run_evaluate(cfg)
        reports.append((out / "metrics.json").read_bytes())
        payload = json.loads(reports[-1])
        assert sorted(payload) == ["f1_clf", "f1_damaged", "f1_destroyed",
                                   "f1_intact", "f1_loc", "f1_overall"]
        preds = list(out.glob("pred_*.pgm"))
        assert preds and all(read_pgm(p).shape == (32, 32) for p in preds)
    assert reports[0] == reports[1]


def test_evaluate_does_not_touch_the_checkpoint(workspace, tmp_path):
    before = workspace["ckpt_ft"].read_bytes()
    cfg = tiny_cfg(data_dir=str(workspace["blast_dir"]), out_dir=str(tmp_path),
                   checkpoint_in=str(workspace["ckpt_ft"]))
    run_evaluate(cfg)
    assert workspace["ckpt_ft"].read_bytes() == before


def test_evaluate_with_oracle_predictions_scores_100(workspace):
    from blastsda.metrics import evaluate_dataset
    scenes = load_scenes(workspace["blast_dir"], load_split(workspace["blast_dir"]).test)
    report = evaluate_dataset(lambda s: s.damage, scenes)
    assert report.f1_overall == pytest.approx(100.0)


def test_predict_outputs_and_palette(workspace, tmp_path):
    scene_dir = workspace["blast_dir"] / "scenes" / "scene_0005"
    out = tmp_path / "pred"
    cfg = tiny_cfg(out_dir=str(out), checkpoint_in=str(workspace["ckpt_ft"]),
                   blast_mode="full")
    paths = run_predict(cfg, scene_dir / "pre.ppm", scene_dir / "post.ppm",
                        scene_dir / "blast.bfr")
    mask = read_pgm(paths["mask"])
    damage = read_pgm(paths["damage"])
    overlay = read_ppm(paths["overlay"])
    assert mask.shape == (32, 32) and damage.shape == (32, 32)
    assert overlay.shape == (32, 32, 3)
    palette = {0: (0, 0, 0), 1: (0, 255, 0), 2: (255, 255, 0), 3: (255, 0, 0)}
    for cls, color in palette.items():
        cells = damage == cls
        if cells.any():
            assert np.all(overlay[cells] == color)
    # bijectivity: distinct classes map to distinct colors
    assert len({color for color in palette.values()}) == 4


def test_predict_zero_blast_equals_blast_mode_none(workspace, tmp_path):
    from blastsda.rasters import write_bfr
    scene_dir = workspace["blast_dir"] / "scenes" / "scene_0004"
    zero_blast = tmp_path / "zero.bfr"
    write_bfr(zero_blast, np.zeros((32, 32, 3), dtype=np.float32))
    out_full = tmp_path / "full"
    out_none = tmp_path / "none"
    cfg_full = tiny_cfg(out_dir=str(out_full), checkpoint_in=str(workspace["ckpt_ft"]),
                        blast_mode="full")
    cfg_none = tiny_cfg(out_dir=str(out_none), checkpoint_in=str(workspace["ckpt_ft"]),
                        blast_mode="none")
    run_predict(cfg_full, scene_dir / "pre.ppm", scene_dir / "post.ppm", zero_blast)
    run_predict(cfg_none, scene_dir / "pre.ppm", scene_dir / "post.ppm",
                scene_dir / "blast.bfr")
    assert (out_full / "damage.pgm").read_bytes() == (out_none / "damage.pgm").read_bytes()


def test_predict_size_mismatch_names_expected_dims(workspace, tmp_path):
    from blastsda.rasters import write_ppm
    wrong = tmp_path / "wrong.ppm"
    write_ppm(wrong, np.zeros((16, 16, 3), dtype=np.uint8))
    scene_dir = workspace["blast_dir"] / "scenes" / "scene_0004"
    cfg = tiny_cfg(out_dir=str(tmp_path / "o"), checkpoint_in=str(workspace["ckpt_ft"]))
    with pytest.raises(DataError, match="32x32"):
        run_predict(cfg, wrong, scene_dir / "post.ppm", scene_dir / "blast.bfr")
