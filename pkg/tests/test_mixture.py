import json
from collections import Counter

import pytest

from solo.errors import ConfigurationError, IngestionError
from solo.mixture import (
    DatasetEntry,
    MixtureSpec,
    Modality,
    TokenAccount,
    account_examples,
    account_tokens,
    draw_dataset,
    load_mixture_spec,
    plan_schedule,
    stage_curriculum,
)
from synthetic import CAPTIONS_COUNTS, WEB_COUNTS, counted_corpora, write_image, write_manifest


@pytest.fixture
def corpora(tmp_path):
    return counted_corpora(tmp_path)


def test_single_image_counts(tmp_path):
    write_image(tmp_path / "x.png", 640, 480)
    m = write_manifest(tmp_path / "m.jsonl", [{"dataset": "d", "image_path": "x.png", "text": "",
                                                "kind": "pretrain-captioned"}])
    acc = account_tokens([DatasetEntry("d", m)])
    assert acc.vision_tokens == 336 and acc.text_tokens == 0
    assert acc.datasets["d"].special_tokens == 17


def test_hand_counts(corpora):
    cap, web = corpora
    acc = account_tokens([cap, web])
    c, w = acc.datasets["captions"], acc.datasets["web"]
    assert vars(c) == CAPTIONS_COUNTS
    assert vars(w) == WEB_COUNTS
    assert acc.text_tokens == 27 and acc.vision_tokens == 354
    assert acc.text_percent == pytest.approx(100 * 27 / 381)
    assert acc.text_percent + acc.vision_percent == pytest.approx(100.0, abs=0.01)


def test_additivity(corpora):
    cap, web = corpora
    whole = account_tokens([cap, web])
    parts = account_tokens([cap]) + account_tokens([web])
    assert whole == parts
    assert vars(whole.total) == vars(parts.total)


def test_empty_account():
    acc = account_tokens([])
    assert acc.text_tokens == acc.vision_tokens == 0
    assert acc.text_percent == acc.vision_percent == 0.0
    assert account_examples([]) == TokenAccount()


def test_missing_manifest_names_dataset(tmp_path):
    with pytest.raises(IngestionError) as info:
        account_tokens([DatasetEntry("ghost", str(tmp_path / "none.jsonl"))])
    assert info.value.dataset == "ghost"
    assert "ghost" in str(info.value)


def test_reference_proportions():
    def split(stage):
        refs = [e.reference for e in stage_curriculum(stage).entries]
        text = sum(r.text_tokens for r in refs)
        vision = sum(r.vision_tokens for r in refs)
        return 100 * text / (text + vision), 100 * vision / (text + vision), text, vision

    t1, v1, text1, vision1 = split(1)
    assert round(t1, 2) == 67.32 and round(v1, 2) == 32.68
    assert (text1, vision1) == (4_553_623_160, 2_210_457_535)
    t2, v2, text2, vision2 = split(2)
    assert (text2, vision2) == (6_814_674_150, 8_031_924_763)
    assert round(t2, 2) == 45.90 and round(v2, 2) == 54.10
    t3, v3, text3, vision3 = split(3)
    assert round(t3, 2) == 62.28 and round(v3, 2) == 37.72
    assert (text3, vision3) == (797_032_867, 482_631_327)
    instances = [sum(e.reference.instances for e in stage_curriculum(s).entries) for s in (1, 2, 3)]
    assert instances == [195_122, 445_565, 38_324]


def test_stage_templates():
    s1 = stage_curriculum(1)
    image_roles = [e for e in s1.entries if e.modality is Modality.IMAGE_TEXT]
    assert len(image_roles) == 1 and image_roles[0].role == "label-prediction"
    assert [e.role for e in s1.entries if e.modality is Modality.TEXT_ONLY] == ["text-blend"]
    s2 = stage_curriculum(2)
    assert {"caption", "markup", "supervised", "text-blend"} <= {e.role for e in s2.entries}
    s3 = stage_curriculum(3)
    blend = [e for e in s3.entries if e.role == "text-blend"]
    assert len(blend) == 1
    w = s3.effective_weights()
    share = w[blend[0].name] / sum(w.values())
    assert 0 < share < 0.5
    blend2 = [e for e in s2.entries if e.role == "text-blend"][0]
    assert blend[0].weight < blend2.weight / 5
    with pytest.raises(ConfigurationError):
        stage_curriculum(4)


def test_single_dataset_schedule():
    spec = MixtureSpec(1, [DatasetEntry("only")], seed=3)
    draws = plan_schedule(spec, 100)
    assert {d.dataset for d in draws} == {"only"}
    assert [d.index for d in draws] == list(range(100))


def test_balanced_schedule_within_binomial_bound():
    spec = MixtureSpec(1, [DatasetEntry("A"), DatasetEntry("B")], seed=12345)
    counts = Counter(d.dataset for d in plan_schedule(spec, 10_000))
    assert 4800 <= counts["A"] <= 5200


def test_text_blend_multiplier():
    spec = MixtureSpec(1, [DatasetEntry("text", modality="text-only", weight=1),
                           DatasetEntry("vision", modality="image-text", weight=2)],
                       text_blend_multiplier=2.0, seed=9)
    assert spec.effective_weights() == {"text": 2.0, "vision": 2.0}
    share = Counter(d.dataset for d in plan_schedule(spec, 10_000))["text"] / 10_000
    assert abs(share - 0.5) <= 4 * 0.005


@pytest.mark.parametrize("m", [0.5, 1.0, 3.0])
def test_multiplier_law(m):
    entries = [DatasetEntry("t1", modality="text-only", weight=1.5),
               DatasetEntry("t2", modality="text-only", weight=0.25),
               DatasetEntry("v", modality="image-text", weight=4.0)]
    base = MixtureSpec(2, entries, text_blend_multiplier=m).effective_weights()
    doubled = MixtureSpec(2, entries, text_blend_multiplier=2 * m).effective_weights()
    assert doubled["t1"] == 2 * base["t1"] and doubled["t2"] == 2 * base["t2"]
    assert doubled["v"] == base["v"]


def test_schedule_is_deterministic_and_resumable():
    spec = MixtureSpec(2, [DatasetEntry("a", weight=1), DatasetEntry("b", weight=3),
                           DatasetEntry("c", modality="text-only", weight=2)], seed=77)
    full = plan_schedule(spec, 300, {"a": 7, "b": 11, "c": 5})
    assert full == plan_schedule(spec, 300, {"a": 7, "b": 11, "c": 5})
    assert plan_schedule(spec, 100, {"a": 7, "b": 11, "c": 5}, start=200) == full[200:]
    assert all(d.index < {"a": 7, "b": 11, "c": 5}[d.dataset] for d in full)
    assert [draw_dataset(spec, s) for s in range(300)] == [d.dataset for d in full]
    other = plan_schedule(MixtureSpec(2, spec.entries, seed=78), 300)
    assert [d.dataset for d in other] != [d.dataset for d in full]


def test_zero_weights_rejected():
    spec = MixtureSpec(1, [DatasetEntry("a", weight=0)])
    with pytest.raises(ConfigurationError):
        plan_schedule(spec, 10)
    with pytest.raises(ConfigurationError):
        DatasetEntry("neg", weight=-1)


def test_load_mixture_spec(tmp_path, corpora):
    cap, web = corpora
    path = tmp_path / "spec.json"
    path.write_text(json.dumps({
        "stage": 2, "seed": 5, "text_blend_multiplier": 3,
        "entries": [{"name": "captions", "path": "captions.jsonl", "modality": "image-text", "weight": 1},
                    {"name": "web", "path": "web.jsonl", "modality": "text-only", "weight": 0.5}],
    }))
    spec = load_mixture_spec(path)
    assert spec.stage == 2 and spec.seed == 5
    assert spec.effective_weights() == {"captions": 1.0, "web": 1.5}
    assert account_tokens(spec.entries) == account_tokens([cap, web])
    with pytest.raises(ConfigurationError):
        path.write_text("{}")
        load_mixture_spec(path)
