"""Smoke test for the langneuron extension module.

Build and run from the repository root:

    cargo build --release -p langneuron-py
    cp target/release/liblangneuron.so python/langneuron.so
    python3 python/smoke_test.py
"""

import json
import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import langneuron as ln


def check_scoring():
    assert ln.score_neuron([0.0, 0.0, 0.0]) == math.inf
    one_hot = ln.score_neuron([1.0, 0.0, 0.0], lambda_=0.04)
    assert abs(one_hot + 0.04) < 1e-12
    uniform = ln.score_neuron([0.5] * 4, lambda_=0.0)
    assert abs(uniform - math.log(4)) < 1e-12
    try:
        ln.score_neuron([1.5])
    except ValueError:
        pass
    else:
        raise AssertionError("out-of-range probability accepted")


def planted_snapshot():
    # 2 layers x 4 neurons x 3 languages: neuron (0, k) fires only for language k.
    probs = []
    for layer in range(2):
        for j in range(4):
            for k in range(3):
                if layer == 0 and j < 3:
                    probs.append(0.9 if k == j else 0.01)
                elif layer == 1 and j == 0:
                    probs.append(0.9 if k < 2 else 0.02)
                else:
                    probs.append(0.3)
    return ln.Snapshot(probs, 2, 4, [100, 100, 100], languages=["en", "de", "fr"])


def check_snapshot_and_classification(tmp):
    snap = planted_snapshot()
    path = os.path.join(tmp, "s.naps")
    snap.write(path)
    back = ln.Snapshot.read(path)
    assert back == ln.Snapshot.from_bytes(snap.to_bytes())
    assert back.languages == ["en", "de", "fr"]
    merged = ln.merge_snapshots([snap, snap])
    assert merged.token_counts == [200, 200, 200]

    c = ln.classify(snap, pct=0.5)
    totals = c.totals()
    assert totals["specific"] == 3 and totals["related"] == 1, totals
    assert sorted(c.neurons_with_label("specific")) == [(0, 0), (0, 1), (0, 2)]
    assert ln.shared_count_histogram(c)[0] == 3
    assert [row["specific"] for row in ln.per_language_counts(c)] == [1, 1, 1]
    assert ln.layer_histogram(c)[0]["specific"] == 3

    cpath = os.path.join(tmp, "c.json")
    c.save(cpath)
    assert ln.Classification.load(cpath) == c
    assert ln.Classification.from_json(c.to_json()) == c
    d = ln.diff(c, c)
    assert all(v == 0 for v in d["totals"].values())
    neurons = c.language_neurons()
    assert ln.overlap_ratio(neurons, neurons) == 1.0


def check_dpo_and_heatmap():
    assert abs(ln.dpo_loss([(0.0, 0.0, 0.0, 0.0)]) - math.log(2)) < 1e-12
    svg = ln.heatmap_svg([[1.5, 1.0], [1.0, 1.4]], ["en", "de"], ["en", "de"])
    assert svg.count('class="cell"') == 4


def check_toy_pipeline(tmp):
    corpus_cfg = {
        "n_langs": 3,
        "n_templates": 6,
        "n_train_per_lang": 40,
        "n_eval_per_lang": 8,
        "template_len_range": [4, 6],
        "model_vocab": 200,
    }
    corpus = ln.Corpus(seed=3, config_json=json.dumps(corpus_cfg))
    assert corpus.n_langs == 3
    assert len(corpus.sentences("train")) == 120
    model_cfg = {"vocab": 200, "d_model": 16, "n_layers": 4, "ffn_width": 32, "max_seq": 16}
    model = ln.ToyLM(seed=3, config_json=json.dumps(model_cfg))
    before = model.perplexity(corpus, "probe")
    log = model.train(corpus, steps=200, batch_size=8)
    assert log, "no training log"
    after = model.perplexity(corpus, "probe")
    assert all(after[k] < before[k] for k in before), (before, after)

    path = os.path.join(tmp, "m.tlm")
    model.save(path)
    reloaded = ln.ToyLM.load(path)
    # Checkpoints store f32 weights.
    for k, v in reloaded.perplexity(corpus, "probe").items():
        assert abs(v - after[k]) <= 1e-4 * after[k], (k, v, after[k])

    snap = model.collect(corpus)
    assert snap.n_layers == 4 and snap.n_neurons == 32
    c = ln.classify(snap, pct=0.2)
    result = model.ablate(c, corpus)
    assert len(result["matrix"]["ratio"]) == 3
    masked = model.perplexity(corpus, "probe", mask=[(0, j) for j in range(32)])
    assert set(masked) == set(after)

    aligned, losses = model.align(corpus, pairs_per_language=4, steps=5)
    assert len(losses) == 5 and aligned.n_layers == 4


def main():
    with tempfile.TemporaryDirectory() as tmp:
        check_scoring()
        check_snapshot_and_classification(tmp)
        check_dpo_and_heatmap()
        check_toy_pipeline(tmp)
    print("langneuron", ln.__version__, "smoke test ok")


if __name__ == "__main__":
    main()
