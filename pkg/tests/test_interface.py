import base64
import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from smearscope.boxes import BoundingBox
from smearscope.cli import infer_document, main
from smearscope.dataset import SynthConfig, generate_smear
from smearscope.imaging import decode_image, encode_png, read_image, write_png
from smearscope.pipeline import (AnalysisResult, CellResult, analyze_image, draw_boxes,
                                 render_overlay)
from smearscope.preprocess import PreprocessConfig
from smearscope.segmentation import SegmentationConfig
from smearscope.stages import StageLabel

SEG, PRE = SegmentationConfig(), PreprocessConfig()


def smear(seed, **kw):
    base = dict(width=400, height=300, cells_per_image=(20, 24), seed=seed,
                class_mix=(0.6, 0.1, 0.1, 0.1, 0.1))
    return generate_smear(SynthConfig(**{**base, **kw}))


@pytest.fixture(scope="module")
def client(trained_tsc):
    from smearscope.service import create_app
    return TestClient(create_app(trained_tsc[0]))


def strip_timings(doc):
    return {k: v for k, v in doc.items() if k not in ("timings", "overlay_png_base64")}


# -- analyze_image ---------------------------------------------------------

def test_blank_image_has_no_cells(trained_tsc):
    res = analyze_image(np.full((120, 160, 3), 240, np.uint8), SEG, trained_tsc[0])
    assert res.total_cells == 0 and res.infected_cells == 0


def test_infected_count_on_ring_smear(trained_tsc):
    img, anns = generate_smear(SynthConfig(width=640, height=480, cells_per_image=(50, 50),
                                           class_mix=(0.8, 0.2, 0, 0, 0), seed=0))
    assert sum(a.label is StageLabel.RING for a in anns) == 10
    res = analyze_image(img, SEG, trained_tsc[0])
    assert abs(res.infected_cells - 10) <= 2
    assert res.infected_cells <= res.total_cells


def test_boxes_reported_in_input_coordinates(trained_tsc):
    img, _ = smear(1)
    framed = np.zeros((340, 440, 3), np.uint8)  # dark border to be trimmed
    framed[20:320, 20:420] = img
    res = analyze_image(framed, SEG, trained_tsc[0])
    plain = analyze_image(img, SEG, trained_tsc[0])
    assert res.crop_rect.x > 0 and res.crop_rect.y > 0
    assert res.total_cells == plain.total_cells
    shifted = sorted((c.box.x - 20, c.box.y - 20) for c in res.cells)
    here = sorted((c.box.x, c.box.y) for c in plain.cells)
    assert shifted == here


def test_result_document_shape(trained_tsc):
    doc = analyze_image(smear(2)[0], SEG, trained_tsc[0], image_id="x").to_dict()
    assert {"image_id", "total_cells", "infected_cells", "cells", "pipeline_config_hash",
            "timings"} <= doc.keys()
    for c in doc["cells"]:
        assert abs(sum(c["stage1_probs"]) - 1) < 1e-9
        assert (c["stage2_probs"] is None) == (c["stage1_probs"][0] >= c["stage1_probs"][1])


# -- overlay ---------------------------------------------------------------

def test_overlay_without_cells_is_identical():
    img = np.random.default_rng(0).integers(0, 256, (30, 40, 3), dtype=np.uint8)
    res = AnalysisResult("", [], "", BoundingBox(0, 0, 40, 30))
    np.testing.assert_array_equal(render_overlay(img, res), img)


def test_overlay_touches_only_box_borders():
    img = np.full((40, 50, 3), 128, np.uint8)
    box = BoundingBox(10, 5, 20, 15)
    res = AnalysisResult("", [CellResult(box, StageLabel.RING, [0.1, 0.9], [0, 1, 0, 0, 0])],
                         "", BoundingBox(0, 0, 50, 40))
    out = render_overlay(img, res)
    changed = (out != img).any(axis=2)
    ring = np.zeros_like(changed)
    ring[5:20, 10:30] = True
    ring[7:18, 12:28] = False  # 2 px border
    np.testing.assert_array_equal(changed, ring)
    assert tuple(out[5, 10]) == (255, 160, 0)
    assert not (draw_boxes(img, [BoundingBox(60, 60, 5, 5)], [(0, 0, 0)]) != img).any()


# -- service ---------------------------------------------------------------

def test_health(client, trained_tsc):
    from smearscope.classification import model_hash
    r = client.get("/health")
    assert r.status_code == 200
    assert r.json() == {"status": "ok", "model_hash": model_hash(trained_tsc[0])}


def test_analyze_matches_cli(client, trained_tsc, tmp_path):
    data = encode_png(smear(3)[0])
    r = client.post("/analyze", content=data, headers={"content-type": "image/png"})
    assert r.status_code == 200
    (tmp_path / "in.png").write_bytes(data)
    assert main(["infer", "--model", str(trained_tsc[1]), "--in", str(tmp_path / "in.png"),
                 "--out-json", str(tmp_path / "out.json")]) == 0
    cli_doc = json.loads((tmp_path / "out.json").read_text())
    assert strip_timings(r.json()) == strip_timings(cli_doc)


def test_analyze_rejects_garbage(client):
    r = client.post("/analyze", content=b"GIF89a not really")
    assert r.status_code == 400 and r.json() == {"error": "decode_failed"}


def test_analyze_overlay(client):
    img = smear(4)[0]
    r = client.post("/analyze?overlay=1", content=encode_png(img))
    doc = r.json()
    overlay = decode_image(base64.b64decode(doc["overlay_png_base64"]))
    assert overlay.shape == img.shape
    assert (overlay != img).any() == (doc["total_cells"] > 0)


def test_analyze_processing_error(client):
    r = client.post("/analyze", content=encode_png(np.zeros((64, 64, 3), np.uint8)))
    assert r.status_code == 422 and r.json()["error"] == "processing_failed"


# -- CLI -------------------------------------------------------------------

def test_cli_usage_errors(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("SMEARSCOPE_MODEL", raising=False)
    with pytest.raises(SystemExit) as err:
        main(["frobnicate"])
    assert err.value.code == 1
    write_png(tmp_path / "a.png", smear(5)[0])
    assert main(["infer", "--in", str(tmp_path / "a.png"), "--out-json",
                 str(tmp_path / "o.json")]) == 1
    assert main(["segment", "--in", str(tmp_path / "a.png"), "--out-json",
                 str(tmp_path / "o.json"), "--marker-fraction", "2"]) == 1


def test_cli_processing_errors(tmp_path, trained_tsc):
    assert main(["infer", "--model", str(trained_tsc[1]), "--in", str(tmp_path / "missing.png"),
                 "--out-json", str(tmp_path / "o.json")]) == 2
    (tmp_path / "bad.json").write_text("{}")
    assert main(["train", "--manifest", str(tmp_path / "bad.json"), "--out",
                 str(tmp_path / "m.json")]) == 2


def test_cli_model_from_environment(tmp_path, trained_tsc, monkeypatch):
    monkeypatch.setenv("SMEARSCOPE_MODEL", str(trained_tsc[1]))
    img = smear(6)[0]
    write_png(tmp_path / "a.png", img)
    assert main(["infer", "--in", str(tmp_path / "a.png"), "--out-json",
                 str(tmp_path / "o.json"), "--out-overlay", str(tmp_path / "o.png")]) == 0
    doc = json.loads((tmp_path / "o.json").read_text())
    assert doc == infer_document((tmp_path / "a.png").read_bytes(), trained_tsc[0], SEG, PRE) \
        | {"timings": doc["timings"]}
    assert read_image(tmp_path / "o.png").shape == img.shape


def test_cli_synth_train_evaluate(tmp_path):
    cfg = tmp_path / "synth.json"
    cfg.write_text(json.dumps(SynthConfig(width=300, height=220, cells_per_image=(14, 16),
                                          class_mix=(0.6, 0.1, 0.1, 0.1, 0.1)).to_dict()))
    corpus = tmp_path / "corpus"
    assert main(["synth", "--config", str(cfg), "--n", "5", "--out", str(corpus),
                 "--seed", "21"]) == 0
    manifest = corpus / "manifest.json"
    assert main(["train", "--manifest", str(manifest), "--arch", "ssc",
                 "--out", str(tmp_path / "ssc.json"), "--epochs", "50"]) == 0
    assert main(["evaluate", "localization", "--manifest", str(manifest),
                 "--out", str(tmp_path / "loc.json")]) == 0
    loc = json.loads((tmp_path / "loc.json").read_text())
    assert loc["overall"]["f1"] >= 0.9
    assert main(["segment", "--in", str(corpus / "smear_0000.png"), "--out-json",
                 str(tmp_path / "seg.json"), "--out-overlay", str(tmp_path / "seg.png")]) == 0
    assert main(["preprocess", "--in", str(corpus / "smear_0000.png"),
                 "--out", str(tmp_path / "pre.png")]) == 0
    assert json.loads((tmp_path / "pre.json").read_text())["original_size"] == [300, 220]
