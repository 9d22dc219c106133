import json
import math

import numpy as np
import pytest

from slidepair.dataset import read_manifest
from slidepair.errors import MissingFile, SchemaError
from slidepair.imaging import RasterImage
from slidepair.io import write_png
from slidepair.pipeline import config_from_json, register_pair, run_pipeline, validate_config
from slidepair.synth import SynthConfig, generate_pair, write_pair

SMALL = dict(canvas=512, n_glomeruli=10, blob_sigma_range=(4.0, 6.0), noise_sigma=0.03)
TUNED = {
    "detect": {"scales": [3, 4, 5, 6, 7, 8], "max_dim": 512},
    "match": {"max_dist": 60},
    "ransac": {"inlier_tol": 6},
    "tiling": {"patch": 128, "stride": 128},
    "glomerulus_crop": 64,
}


@pytest.fixture(scope="module")
def slides(tmp_path_factory):
    root = tmp_path_factory.mktemp("slides")
    truths = {}
    for gid, stain, seed, rot in [("G1", "PAS", 1, 20.0), ("G2", "MASSON", 2, -35.0)]:
        truths[gid] = write_pair(SynthConfig(seed=seed, rotation=rot, translation=(9, -14), shear=0.02,
                                             target_stain=stain, **SMALL), root / gid)
    write_png(RasterImage(np.ones((512, 512, 3))), root / "blank.png")
    return root, truths


def config(root, out="out", **extra):
    doc = {
        "groups": [
            {"group_id": "G2", "patient_id": "P1", "he_path": "G2/source.png",
             "special_paths": {"MASSON": "G2/target.png"}},
            {"group_id": "G1", "patient_id": "P1", "he_path": "G1/source.png",
             "special_paths": {"PAS": "G1/target.png"}},
        ],
        "output_dir": out, **TUNED, **extra,
    }
    path = root / f"{out}.json"
    path.write_text(json.dumps(doc))
    return path


class TestConfig:
    def test_defaults_materialized(self, tmp_path):
        cfg = config_from_json({"groups": []}, tmp_path)
        assert cfg.tiling.patch == 512 and cfg.prealign.coarse_step == 4.0
        assert cfg.ransac.inlier_tol == 20 and cfg.thresholds.fsim_min == 0.90
        assert cfg.to_json()["match"]["max_dist"] == 300

    def test_missing_he_path(self, tmp_path):
        with pytest.raises(SchemaError) as e:
            config_from_json({"groups": [{"group_id": "a", "special_paths": {"PAS": "x"}}]}, tmp_path)
        assert e.value.field == "groups[0].he_path"

    def test_duplicate_group(self, tmp_path):
        g = {"group_id": "a", "he_path": "x", "special_paths": {"PAS": "y"}}
        with pytest.raises(SchemaError) as e:
            config_from_json({"groups": [g, dict(g)]}, tmp_path, check_files=False)
        assert e.value.field == "groups[*].group_id"

    def test_unknown_section_key(self, tmp_path):
        with pytest.raises(SchemaError) as e:
            config_from_json({"tiling": {"patchsize": 3}}, tmp_path)
        assert e.value.field == "tiling.patchsize"

    def test_invalid_section_value(self, tmp_path):
        with pytest.raises(SchemaError):
            config_from_json({"prealign": {"fine_step": 10}}, tmp_path)

    def test_needs_special(self, tmp_path):
        with pytest.raises(SchemaError):
            config_from_json({"groups": [{"group_id": "a", "he_path": "x"}]}, tmp_path, check_files=False)

    def test_distinct_paths(self, tmp_path):
        g = {"group_id": "a", "he_path": "x", "special_paths": {"PAS": "x"}}
        with pytest.raises(SchemaError):
            config_from_json({"groups": [g]}, tmp_path, check_files=False)

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingFile):
            validate_config(tmp_path / "nope.json")
        g = {"group_id": "a", "he_path": "x.png", "special_paths": {"PAS": "y.png"}}
        (tmp_path / "c.json").write_text(json.dumps({"groups": [g]}))
        with pytest.raises(MissingFile) as e:
            validate_config(tmp_path / "c.json")
        assert "x.png" in str(e.value)


@pytest.fixture(scope="module")
def run(slides):
    root, truths = slides
    cfg = validate_config(config(root))
    return cfg, run_pipeline(cfg), truths


class TestRun:
    def test_recovers_transforms(self, run):
        _, report, truths = run
        assert report.exit_status == 0
        for p in report.pairings:
            truth = truths[p.group_id]
            t = np.array(p.transform).reshape(2, 3)
            src = np.array(truth.glomerulus_centers_source)
            mapped = src @ t[:, :2].T + t[:, 2]
            err = np.max(np.linalg.norm(mapped - np.array(truth.glomerulus_centers_target), axis=1))
            assert err <= 2.0, (p.group_id, err)

    def test_tiles_accepted(self, run):
        _, report, _ = run
        for p in report.pairings:
            assert p.tiles_total > 0 and p.tiles_accepted == p.tiles_total

    def test_report_matches_manifest(self, run):
        cfg, report, _ = run
        m = read_manifest(report.manifest_path)
        assert [g.group_id for g in m.groups] == ["G1", "G2"]
        s = m.summary()
        assert s["accepted_patch_count"] == sum(p.tiles_accepted for p in report.pairings)
        assert s["rejected_patch_count"] == sum(p.tiles_rejected for p in report.pairings)
        assert s["glomerulus_pair_count"] == sum(p.keypoint_pairs for p in report.pairings)
        assert s["wsi_count"] == 4 and s["patient_count"] == 1

    def test_outputs_written(self, run):
        cfg, report, _ = run
        from pathlib import Path
        out = Path(cfg.output_dir)
        m = read_manifest(report.manifest_path)
        for r in m.patch_records:
            assert (out / r.source_path).exists() and (out / r.target_path).exists()
            assert r.target_path.endswith(f"{r.group_id}_{r.stains[1]}_{r.origin[0]}_{r.origin[1]}.png")
        assert (out / "pairs_glom" / "index.json").exists()

    def test_deterministic(self, slides, run):
        root, _ = slides
        _, report, _ = run
        again = run_pipeline(validate_config(config(root, out="out_again")))
        a = open(report.manifest_path, "rb").read()
        b = open(again.manifest_path, "rb").read()
        assert a == b

    def test_threads_same_manifest(self, slides, run):
        root, _ = slides
        _, report, _ = run
        threaded = run_pipeline(validate_config(config(root, out="out_threads")), workers=3)
        assert open(report.manifest_path, "rb").read() == open(threaded.manifest_path, "rb").read()


def test_blank_special_is_isolated(slides):
    root, _ = slides
    doc = json.loads(config(root, out="out_blank").read_text())
    doc["groups"].append({"group_id": "G3", "he_path": "G1/source.png", "special_paths": {"PASM": "blank.png"}})
    path = root / "blank_cfg.json"
    path.write_text(json.dumps(doc))
    report = run_pipeline(validate_config(path))
    by = {p.group_id: p for p in report.pairings}
    assert by["G3"].error.startswith("DegenerateMask")
    assert by["G1"].error is None and by["G2"].error is None
    assert report.exit_status == 2
    m = read_manifest(report.manifest_path)
    assert m.group("G3").pairings[0].flags == ["DegenerateMask"]


def test_empty_groups(tmp_path):
    report = run_pipeline(config_from_json({"groups": [], "output_dir": str(tmp_path / "o")}))
    assert report.exit_status == 0 and report.pairings == []
    m = read_manifest(report.manifest_path)
    assert m.groups == [] and m.summary()["wsi_count"] == 0


def test_fallback_when_no_keypoints(slides):
    root, _ = slides
    path = config(root, out="out_fallback", detect={"scales": [3, 4], "threshold": 5.0, "max_dim": 512})
    report = run_pipeline(validate_config(path))
    for p in report.pairings:
        assert p.flags == ["affine_fallback: TooFewPoints"] and p.keypoint_pairs == 0
    assert report.exit_status == 2
    m = read_manifest(report.manifest_path)
    assert all(g.pairings[0].affine is None and g.pairings[0].prealign is not None for g in m.groups)


def test_skip_registration_is_a_warning(slides):
    root, _ = slides
    report = run_pipeline(validate_config(config(root, out="out_skip", skip_registration=True)))
    for p in report.pairings:
        assert p.warnings == ["registration_skipped"] and p.transform == [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]
        assert p.tiles_accepted < p.tiles_total
    assert report.exit_status == 0


def test_register_pair_in_memory():
    src, tgt, truth = generate_pair(SynthConfig(seed=9, rotation=-12, translation=(5, 5), **SMALL))
    cfg = config_from_json(dict(TUNED), ".")
    reg = register_pair(src, tgt, cfg)
    assert reg.fit is not None and not reg.flags
    err = max(math.dist(reg.transform.apply(s), t)
              for s, t in zip(truth.glomerulus_centers_source, truth.glomerulus_centers_target))
    assert err <= 2.0
