//! End-to-end acceptance run. Prints one PASS/FAIL line per check.
//!
//! The process exits 0 even when a check fails so that `cargo test` reports
//! the remaining suites; set `LN_ACCEPT_STRICT=1` to turn failures into a
//! non-zero exit status.

use std::collections::BTreeSet;
use std::time::Instant;

use langneuron_core::ablation::{dominance_metrics, ppl_matrix, DominanceMetrics, MaskScope, PplMatrix};
use langneuron_core::analysis::{diff, layer_histogram, per_language_counts, shared_count_histogram, DiffReport};
use langneuron_core::corpus::{draw_probe, generate_corpus, Corpus, CorpusConfig, Sentence};
use langneuron_core::identify::{classify, score_neuron, IdentifyConfig, Label, NeuronClassification};
use langneuron_core::rng::SplitMix64;
use langneuron_core::snapshot::{default_languages, merge_snapshots, ActivationSnapshot, NeuronId};
use langneuron_core::toylm::{
    build_preference_pairs, collect_probs, dpo_finetune, dpo_loss, perplexity, train, DpoConfig, DpoTerms,
    ToyLM, ToyLMConfig, TrainConfig,
};

struct Outcome {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn main() {
    let mut out = Vec::new();
    let mut record = |id, name, (pass, detail): (bool, String)| {
        println!("[{id:>2}] {}: {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        out.push(Outcome { id, name, pass, detail });
    };

    record(1, "scoring identities", scoring_identities());
    record(2, "planted-class recovery", planted_recovery());
    record(6, "gradient check", gradient_check());
    record(7, "dpo loss", dpo_identities());
    record(8, "perplexity identities", perplexity_identities());
    record(10, "aggregates vs recount", aggregates_vs_recount());

    let run = ToyRun::new();
    let (c3, c4, c5) = run.ablation_checks();
    record(3, "diagonal dominance", c3);
    record(4, "language mask beats specific-only", c4);
    record(5, "off-diagonal impact small", c5);
    record(9, "format round-trips", round_trips(&run));
    record(11, "alignment diff plumbing", run.alignment_check());

    out.sort_by_key(|o| o.id);
    let failed: Vec<&Outcome> = out.iter().filter(|o| !o.pass).collect();
    println!("\nacceptance summary: {}/{} passed", out.len() - failed.len(), out.len());
    for o in &failed {
        println!("  failed [{}] {}: {}", o.id, o.name, o.detail);
    }
    if !failed.is_empty() && std::env::var("LN_ACCEPT_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed().as_secs_f64())
}

fn scoring_identities() -> (bool, String) {
    let ((one_hot, uniform, dead), secs) = timed(|| {
        let mut p = vec![0.0; 10];
        p[3] = 1.0;
        let one_hot = score_neuron(&p, 0.04).unwrap();
        let uniform = score_neuron(&[0.5; 10], 0.04).unwrap();
        let dead = score_neuron(&[0.0; 10], 0.04).unwrap();
        (one_hot, uniform, dead)
    });
    let expected_uniform = 10f64.ln() - 0.02;
    let pass = one_hot == -0.04 && (uniform - expected_uniform).abs() <= 1e-12 && dead == f64::INFINITY && secs < 1.0;
    (
        pass,
        format!("one-hot {one_hot}, uniform err {:.1e}, dead {dead}, {secs:.3}s", (uniform - expected_uniform).abs()),
    )
}

/// Planted snapshot: 8 layers x 256 neurons x 10 languages.
fn planted_snapshot(seed: u64) -> (ActivationSnapshot, Vec<Label>) {
    let (n_layers, m, l) = (8usize, 256usize, 10usize);
    let n = n_layers * m;
    let mut rng = SplitMix64::keyed(seed, "planted", &[]);
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut truth = vec![Label::Unselected; n];
    for &i in &order[0..40] {
        truth[i] = Label::Specific;
    }
    for &i in &order[40..80] {
        truth[i] = Label::Related;
    }
    for &i in &order[80..120] {
        truth[i] = Label::Agnostic;
    }
    let mut probs = Vec::with_capacity(n * l);
    for label in &truth {
        let active: BTreeSet<usize> = match label {
            Label::Specific => [rng.below(l)].into(),
            Label::Related => {
                let k = 2 + rng.below(4);
                let mut langs: Vec<usize> = (0..l).collect();
                rng.shuffle(&mut langs);
                langs[..k].iter().copied().collect()
            }
            Label::Agnostic => (0..l).collect(),
            Label::Unselected => BTreeSet::new(),
        };
        for k in 0..l {
            let p = match label {
                Label::Unselected => rng.uniform(0.25, 0.45),
                _ if active.contains(&k) => rng.uniform(0.7, 0.95),
                _ => rng.uniform(0.0, 0.15),
            };
            probs.push(p);
        }
    }
    let snap = ActivationSnapshot::new("planted", "planted", default_languages(l), n_layers, m, probs, vec![1000; l])
        .unwrap();
    (snap, truth)
}

fn planted_recovery() -> (bool, String) {
    let ((c, truth), secs) = timed(|| {
        let (snap, truth) = planted_snapshot(7);
        (classify(&snap, &IdentifyConfig::default()).unwrap(), truth)
    });
    let mut pass = secs < 5.0;
    let mut parts = Vec::new();
    for label in [Label::Specific, Label::Related, Label::Agnostic] {
        let predicted = c.neurons.iter().filter(|r| r.label == label).count();
        let planted = truth.iter().filter(|&&t| t == label).count();
        let hit = c.neurons.iter().zip(&truth).filter(|(r, &t)| r.label == label && t == label).count();
        let precision = if predicted == 0 { 0.0 } else { hit as f64 / predicted as f64 };
        let recall = hit as f64 / planted as f64;
        pass &= precision >= 0.95 && recall >= 0.95;
        parts.push(format!("{} p={precision:.3} r={recall:.3}", label.as_str()));
    }
    (pass, format!("{}, {secs:.2}s", parts.join(", ")))
}

fn gradient_check() -> (bool, String) {
    use langneuron_core::toylm::lm_loss;
    let mut model = ToyLM::new(ToyLMConfig {
        vocab: 32,
        d_model: 16,
        n_layers: 2,
        ffn_width: 24,
        max_seq: 16,
        seed: 5,
    })
    .unwrap();
    // Unit-scale embeddings keep gradients well above finite-difference roundoff.
    model.weights.embed *= 10.0;
    model.weights.unembed *= 100.0;
    let mut rng = SplitMix64::keyed(5, "grad-seqs", &[]);
    let seqs: Vec<Vec<u32>> = (0..4)
        .map(|_| (0..6 + rng.below(6)).map(|_| rng.below(32) as u32).collect())
        .collect();
    let refs: Vec<&[u32]> = seqs.iter().map(Vec::as_slice).collect();
    let (_, grads) = lm_loss(&model, &refs).unwrap();
    let sizes: Vec<usize> = grads.tensors().iter().map(|t| t.len()).collect();
    let eps = 1e-4;
    let (mut worst, mut checked, mut zero) = (0.0f64, 0usize, 0usize);
    while checked < 100 {
        let ti = rng.below(sizes.len());
        let pi = rng.below(sizes[ti]);
        let analytic = grads.tensors()[ti].as_slice().unwrap()[pi];
        let mut loss_at = |delta: f64| {
            model.weights.tensors_mut()[ti].as_slice_mut().unwrap()[pi] += delta;
            let loss = lm_loss(&model, &refs).unwrap().0;
            model.weights.tensors_mut()[ti].as_slice_mut().unwrap()[pi] -= delta;
            loss
        };
        let numeric = (loss_at(eps) - loss_at(-eps)) / (2.0 * eps);
        let scale = analytic.abs().max(numeric.abs());
        if scale < 1e-9 {
            zero += 1;
            continue;
        }
        worst = worst.max((analytic - numeric).abs() / scale);
        checked += 1;
    }
    (
        worst <= 1e-4,
        format!("{checked} params, worst relative error {worst:.2e} ({zero} entries below 1e-9 skipped)"),
    )
}

fn dpo_identities() -> (bool, String) {
    let eq = DpoTerms {
        policy_chosen: -3.0,
        policy_rejected: -3.0,
        ref_chosen: -3.0,
        ref_rejected: -3.0,
    };
    let ln2 = dpo_loss(&[eq; 4], 0.1).unwrap();
    let t = DpoTerms {
        policy_chosen: 3f64.ln(),
        policy_rejected: 0.0,
        ref_chosen: 0.0,
        ref_rejected: 0.0,
    };
    let l43 = dpo_loss(&[t], 1.0).unwrap();
    let sweep: Vec<f64> = (0..10)
        .map(|i| {
            let t = DpoTerms {
                policy_chosen: -2.0 + 0.5 * i as f64,
                policy_rejected: -1.0,
                ref_chosen: -1.5,
                ref_rejected: -1.0,
            };
            dpo_loss(&[t], 0.5).unwrap()
        })
        .collect();
    let monotone = sweep.windows(2).all(|w| w[1] < w[0]);
    let (e1, e2) = ((ln2 - 2f64.ln()).abs(), (l43 - (4.0f64 / 3.0).ln()).abs());
    (
        e1 <= 1e-12 && e2 <= 1e-12 && monotone,
        format!("ln2 err {e1:.1e}, ln(4/3) err {e2:.1e}, monotone {monotone}"),
    )
}

fn perplexity_identities() -> (bool, String) {
    let cfg = ToyLMConfig {
        vocab: 4,
        d_model: 4,
        n_layers: 1,
        ffn_width: 2,
        max_seq: 8,
        seed: 0,
    };
    let sentence = |language, tokens: Vec<u32>| Sentence {
        language,
        template_id: 0,
        tokens,
    };
    let uniform = ToyLM::zeros(cfg.clone()).unwrap();
    let mixed = vec![sentence(0, vec![0, 1, 2, 3, 2]), sentence(1, vec![1, 3, 3, 0])];
    let ppl = perplexity(&uniform, &mixed, None).unwrap();
    let uniform_err = ppl.values().map(|v| (v - 4.0).abs()).fold(0.0, f64::max);

    let mut certain = ToyLM::zeros(cfg).unwrap();
    for k in 0..4 {
        certain.weights.embed[[k, k]] = 1.0;
        certain.weights.unembed[[k, k]] = 1000.0;
    }
    let constant: Vec<Sentence> = (0..4).map(|k| sentence(k, vec![k as u32; 6])).collect();
    let ppl = perplexity(&certain, &constant, None).unwrap();
    let exact = ppl.len() == 4 && ppl.values().all(|&v| v == 1.0);
    (
        uniform_err <= 1e-9 && exact,
        format!("uniform max err {uniform_err:.1e}, certain model exactly 1: {exact}"),
    )
}

fn random_snapshot(rng: &mut SplitMix64) -> ActivationSnapshot {
    let n_layers = 2 + rng.below(5);
    let m = 8 + rng.below(40);
    let l = 2 + rng.below(7);
    let mut probs = Vec::with_capacity(n_layers * m * l);
    for _ in 0..n_layers * m {
        // Mix of peaked, broad and dead rows so every label shows up.
        let kind = rng.below(4);
        for _ in 0..l {
            probs.push(match kind {
                0 => if rng.bernoulli(0.3) { rng.uniform(0.6, 1.0) } else { rng.uniform(0.0, 0.2) },
                1 => rng.uniform(0.55, 1.0),
                2 => 0.0,
                _ => rng.next_f64(),
            });
        }
    }
    ActivationSnapshot::new("rand", "rand", default_languages(l), n_layers, m, probs, vec![10; l]).unwrap()
}

fn derived_label(selected: bool, n: usize, l: usize) -> Label {
    if n == l {
        Label::Agnostic
    } else if selected && n == 1 {
        Label::Specific
    } else if selected && n > 1 {
        Label::Related
    } else {
        Label::Unselected
    }
}

/// Recounts every aggregate from the raw per-neuron array.
fn recount(c: &NeuronClassification, snap: &ActivationSnapshot) -> (Vec<[usize; 4]>, Vec<usize>, Vec<[usize; 2]>) {
    let l = snap.n_langs();
    let mut layers = vec![[0usize; 4]; c.n_layers];
    let mut shared = vec![0usize; l];
    let mut per_lang = vec![[0usize; 2]; l];
    for r in &c.neurons {
        let p = snap.neuron_probs(NeuronId::new(r.layer, r.index));
        let active: Vec<usize> = (0..l).filter(|&k| p[k] > c.config.tau).collect();
        let label = derived_label(r.selected, active.len(), l);
        let slot = match label {
            Label::Specific => 0,
            Label::Related => 1,
            Label::Agnostic => 2,
            Label::Unselected => 3,
        };
        layers[r.layer][slot] += 1;
        if label != Label::Unselected && !active.is_empty() {
            shared[active.len() - 1] += 1;
        }
        if slot < 2 {
            for &k in &active {
                per_lang[k][slot] += 1;
            }
        }
    }
    (layers, shared, per_lang)
}

fn aggregates_vs_recount() -> (bool, String) {
    let mut rng = SplitMix64::keyed(2024, "aggregate-oracle", &[]);
    let mut mismatches = 0;
    let mut labels_seen = BTreeSet::new();
    for _ in 0..20 {
        let snap = random_snapshot(&mut rng);
        let cfg = IdentifyConfig {
            percentile: rng.uniform(0.05, 0.5),
            ..IdentifyConfig::default()
        };
        let c = classify(&snap, &cfg).unwrap();
        let (layers, shared, per_lang) = recount(&c, &snap);
        let hist = layer_histogram(&c);
        let hist_rows: Vec<[usize; 4]> = hist
            .layers
            .iter()
            .map(|t| [t.specific, t.related, t.agnostic, t.unselected])
            .collect();
        let lang_rows: Vec<[usize; 2]> = per_language_counts(&c).iter().map(|x| [x.specific, x.related]).collect();
        mismatches += usize::from(hist_rows != layers);
        mismatches += usize::from(shared_count_histogram(&c) != shared);
        mismatches += usize::from(lang_rows != per_lang);
        labels_seen.extend(c.neurons.iter().map(|r| r.label.as_str()));

        // Diff against a perturbed classification of the same shape.
        let other_cfg = IdentifyConfig {
            percentile: rng.uniform(0.05, 0.5),
            ..cfg
        };
        let other = classify(&snap, &other_cfg).unwrap();
        let (ol, os, op) = recount(&other, &snap);
        let d = diff(&c, &other).unwrap();
        mismatches += usize::from(!diff_matches(&d, (&layers, &shared, &per_lang), (&ol, &os, &op)));
    }
    (
        mismatches == 0 && labels_seen.len() == 4,
        format!("20 classifications, {mismatches} mismatches, labels seen {labels_seen:?}"),
    )
}

type Counts<'a> = (&'a Vec<[usize; 4]>, &'a Vec<usize>, &'a Vec<[usize; 2]>);

fn diff_matches(d: &DiffReport, base: Counts, aligned: Counts) -> bool {
    let sub = |a: usize, b: usize| a as i64 - b as i64;
    let layers_ok = d.layers.len() == base.0.len()
        && d.layers.iter().zip(base.0.iter().zip(aligned.0)).all(|(x, (b, a))| {
            [x.specific, x.related, x.agnostic, x.unselected] == [0, 1, 2, 3].map(|i| sub(a[i], b[i]))
        });
    let totals: [i64; 4] = [0, 1, 2, 3].map(|i| {
        base.0.iter().zip(aligned.0).map(|(b, a)| sub(a[i], b[i])).sum()
    });
    let totals_ok = [d.totals.specific, d.totals.related, d.totals.agnostic, d.totals.unselected] == totals;
    let shared_ok = d.shared == base.1.iter().zip(aligned.1).map(|(&b, &a)| sub(a, b)).collect::<Vec<_>>();
    let lang_ok = d
        .per_language
        .iter()
        .zip(base.2.iter().zip(aligned.2))
        .all(|(x, (b, a))| x.specific == sub(a[0], b[0]) && x.related == sub(a[1], b[1]));
    layers_ok && totals_ok && shared_ok && lang_ok
}

/// One trained 4-language model shared by the pipeline checks.
struct ToyRun {
    corpus: Corpus,
    probe: Vec<Sentence>,
    model: ToyLM,
    snapshot: ActivationSnapshot,
    classification: NeuronClassification,
}

fn per_lang(ppl: std::collections::BTreeMap<usize, f64>) -> Vec<f64> {
    ppl.into_values().collect()
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

impl ToyRun {
    fn new() -> Self {
        let corpus_cfg = CorpusConfig::ablation_preset(42);
        let corpus = generate_corpus(&corpus_cfg).unwrap();
        let probe = draw_probe(&corpus_cfg, corpus_cfg.n_eval_per_lang).unwrap();
        let mut model = ToyLM::new(ToyLMConfig {
            seed: 42,
            ..ToyLMConfig::default()
        })
        .unwrap();
        let untrained_eval = per_lang(perplexity(&model, &corpus.eval, None).unwrap());
        let (report, secs) = timed(|| {
            train(
                &mut model,
                &corpus.train,
                &TrainConfig {
                    steps: 3000,
                    seed: 42,
                    ..TrainConfig::default()
                },
            )
            .unwrap()
        });
        let eval = per_lang(perplexity(&model, &corpus.eval, None).unwrap());
        let probe_ppl = per_lang(perplexity(&model, &probe, None).unwrap());
        println!(
            "info: trained 3000 steps in {secs:.0}s, final loss {:?}; untrained eval ppl {}; \
             eval ppl {}; probe ppl {}",
            report.final_loss,
            fmt(&untrained_eval),
            fmt(&eval),
            fmt(&probe_ppl),
        );
        let below_half = eval.iter().zip(&untrained_eval).all(|(e, u)| *e < 0.5 * u);
        println!("info: held-out-template eval ppl below half of untrained: {below_half}");
        let snapshot = collect_probs(&model, &corpus.train, 4).unwrap();
        let classification = classify(&snapshot, &IdentifyConfig::default()).unwrap();
        println!(
            "info: labels {:?}, selected with zero active languages {}",
            classification.totals, classification.diagnostics.selected_with_zero_active
        );
        Self {
            corpus,
            probe,
            model,
            snapshot,
            classification,
        }
    }

    fn matrix(&self, sentences: &[Sentence], scope: MaskScope) -> (PplMatrix, DominanceMetrics) {
        let m = ppl_matrix(&self.model, &self.classification, sentences, scope).unwrap();
        let d = dominance_metrics(&m.ratio).unwrap();
        (m, d)
    }

    fn ablation_checks(&self) -> ((bool, String), (bool, String), (bool, String)) {
        for scope in [MaskScope::SpecificOnly, MaskScope::LanguageNeurons] {
            let (m, d) = self.matrix(&self.corpus.eval, scope);
            println!(
                "info: held-out-template split, scope {}: sizes {:?}, diag hits {}, mean diag {:.4}, mean offdiag {:.4}",
                scope.as_str(),
                m.mask_sizes,
                d.diag_argmax_hits,
                d.mean_diag_ratio,
                d.mean_offdiag_ratio
            );
        }
        let (lang_m, lang) = self.matrix(&self.probe, MaskScope::LanguageNeurons);
        let (_, spec) = self.matrix(&self.probe, MaskScope::SpecificOnly);
        for row in lang_m.ratio.iter() {
            let cells: Vec<String> = row.iter().map(|x| format!("{x:.4}")).collect();
            println!("info: language-mask ratio row [{}]", cells.join(", "));
        }
        let c3 = (
            lang.diag_argmax_hits >= 3 && lang.mean_diag_ratio >= 1.2,
            format!(
                "hits {}/4 (need >= 3), mean diag ratio {:.4} (need >= 1.2), mask sizes {:?}",
                lang.diag_argmax_hits, lang.mean_diag_ratio, lang_m.mask_sizes
            ),
        );
        let c4 = (
            lang.mean_diag_ratio >= spec.mean_diag_ratio,
            format!(
                "mean diag language {:.4} vs specific-only {:.4}",
                lang.mean_diag_ratio, spec.mean_diag_ratio
            ),
        );
        let c5 = (
            lang.mean_offdiag_ratio <= 1.10,
            format!("mean offdiag ratio {:.4} (need <= 1.10)", lang.mean_offdiag_ratio),
        );
        (c3, c4, c5)
    }

    fn alignment_check(&self) -> (bool, String) {
        let pairs = build_preference_pairs(&self.model, &self.corpus, 64, 42).unwrap();
        let (aligned, report) = dpo_finetune(
            &self.model,
            &pairs.pairs,
            &DpoConfig {
                seed: 42,
                ..DpoConfig::default()
            },
        )
        .unwrap();
        let ma = report.moving_average(50);
        if let (Some(first), Some(last)) = (ma.first(), ma.last()) {
            println!("info: dpo loss moving average (window 50) {first:.4} -> {last:.4}");
        }
        let base_ppl = per_lang(perplexity(&self.model, &self.probe, None).unwrap());
        let aligned_ppl = per_lang(perplexity(&aligned, &self.probe, None).unwrap());
        let base_eval = per_lang(perplexity(&self.model, &self.corpus.eval, None).unwrap());
        let aligned_eval = per_lang(perplexity(&aligned, &self.corpus.eval, None).unwrap());
        println!(
            "info: dpo on {} pairs, loss {:.4} -> {:.4}; held-out-template eval ppl base {} aligned {}",
            pairs.pairs.len(),
            report.losses.first().copied().unwrap_or(f64::NAN),
            report.losses.last().copied().unwrap_or(f64::NAN),
            fmt(&base_eval),
            fmt(&aligned_eval),
        );
        let snap = collect_probs(&aligned, &self.corpus.train, 4).unwrap();
        let aligned_c = classify(&snap, &IdentifyConfig::default()).unwrap();
        let d = diff(&self.classification, &aligned_c).unwrap();
        let back = diff(&aligned_c, &self.classification).unwrap();
        let antisymmetric = back == d.negated();
        let t = &d.totals;
        let layer_sum = |f: fn(&langneuron_core::analysis::LabelDelta) -> i64| d.layers.iter().map(f).sum::<i64>();
        let bookkeeping = t.specific + t.related + t.agnostic + t.unselected == 0
            && layer_sum(|x| x.specific) == t.specific
            && layer_sum(|x| x.related) == t.related
            && layer_sum(|x| x.agnostic) == t.agnostic
            && layer_sum(|x| x.unselected) == t.unselected
            && d.per_language.iter().map(|x| x.specific).sum::<i64>() == t.specific
            && d.shared[0] == t.specific
            && d.shared[1..d.shared.len() - 1].iter().sum::<i64>() == t.related
            && d.shared[d.shared.len() - 1] == t.agnostic;
        let within = aligned_ppl.iter().zip(&base_ppl).all(|(a, b)| *a <= 1.3 * b);
        println!(
            "info: specific {:+}, related {:+} after alignment (expected direction: specific down, related up)",
            t.specific, t.related
        );
        (
            antisymmetric && bookkeeping && within && !report.losses.is_empty(),
            format!(
                "antisymmetric {antisymmetric}, bookkeeping {bookkeeping}, probe ppl base {} aligned {}",
                fmt(&base_ppl),
                fmt(&aligned_ppl)
            ),
        )
    }
}

fn round_trips(run: &ToyRun) -> (bool, String) {
    let snap = &run.snapshot;
    let bytes = snap.to_naps_bytes().unwrap();
    let back = ActivationSnapshot::from_naps_bytes(&bytes).unwrap();
    let naps_equal = back == snap.quantized();
    let rewrite_identical = back.to_naps_bytes().unwrap() == bytes;

    let json = run.classification.to_json().unwrap();
    let json_equal = NeuronClassification::from_json(&json).unwrap() == run.classification;

    let half = run.corpus.train.len() / 2;
    let a = collect_probs(&run.model, &run.corpus.train[..half], 4).unwrap();
    let b = collect_probs(&run.model, &run.corpus.train[half..], 4).unwrap();
    let merged = merge_snapshots(&[a, b]).unwrap();
    let worst = merged
        .probs()
        .iter()
        .zip(snap.probs())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let counts_equal = merged.token_counts() == snap.token_counts();
    (
        naps_equal && rewrite_identical && json_equal && worst <= 1e-6 && counts_equal,
        format!(
            "naps equal {naps_equal}, rewrite identical {rewrite_identical}, json equal {json_equal}, \
             merge max diff {worst:.1e}"
        ),
    )
}
