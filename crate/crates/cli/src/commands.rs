use std::collections::BTreeSet;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use langneuron_core::ablation::{ppl_matrix, MaskScope, PplMatrix};
use langneuron_core::analysis::{
    diff, layer_histogram, overlap_ratio, per_language_counts, shared_count_histogram, stage_segmentation, Fiducial,
};
use langneuron_core::corpus::{draw_probe, generate_corpus, read_jsonl, write_jsonl, write_split_jsonl, CorpusConfig, Sentence};
use langneuron_core::heatmap::render_heatmap;
use langneuron_core::identify::{classify, IdentifyConfig, Label, NeuronClassification};
use langneuron_core::snapshot::{read_snapshot, write_snapshot, NeuronId};
use langneuron_core::toylm::{
    build_preference_pairs, collect_probs, dpo_finetune, load_checkpoint, save_checkpoint, train, DpoConfig, ToyLM,
    ToyLMConfig, TrainConfig,
};

use crate::error::{CliError, Context};
use crate::manifest::Manifest;
use crate::{
    AblateArgs, AlignArgs, ClassificationArg, CollectArgs, Command, Common, CorpusAction, DiffArgs, HeatmapArgs,
    IdentifyArgs, OverlapArgs, Preset, ReportKind, TrainArgs,
};

const DEFAULT_SEED: u64 = 42;
const DEFAULT_PAIRS: usize = 64;

/// Optional sections of the `--config` document. Each subcommand reads the
/// sections it needs; command-line flags take precedence.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: Option<CorpusConfig>,
    pub model: Option<ToyLMConfig>,
    pub train: Option<TrainConfig>,
    pub dpo: Option<DpoConfig>,
    pub pairs_per_language: Option<usize>,
    pub identify: Option<IdentifyConfig>,
    pub scope: Option<String>,
}

struct Ctx<'a> {
    common: &'a Common,
    run: RunConfig,
}

impl Ctx<'_> {
    fn seed(&self) -> u64 {
        self.common.seed.unwrap_or(DEFAULT_SEED)
    }

    fn out(&self, name: &str) -> PathBuf {
        self.common.out.join(name)
    }

    fn finish(&self, mut manifest: Manifest, inputs: &[&Path], outputs: &[PathBuf]) -> Result<(), CliError> {
        for p in inputs {
            manifest.input(p)?;
        }
        for p in outputs {
            manifest.output(p)?;
            println!("wrote {}", p.display());
        }
        let path = manifest.write(&self.common.out)?;
        log::info!("manifest {}", path.display());
        Ok(())
    }
}

pub fn dispatch(common: &Common, command: &Command) -> Result<(), CliError> {
    let run = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    fs::create_dir_all(&common.out).map_err(|e| CliError::io(&common.out, e))?;
    let ctx = Ctx { common, run };
    match command {
        Command::Corpus {
            action: CorpusAction::Gen { preset },
        } => cmd_corpus(&ctx, *preset),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Align(a) => cmd_align(&ctx, a),
        Command::Collect(a) => cmd_collect(&ctx, a),
        Command::Identify(a) => cmd_identify(&ctx, a),
        Command::Ablate(a) => cmd_ablate(&ctx, a),
        Command::Report { kind } => cmd_report(&ctx, kind),
        Command::Diff(a) => cmd_diff(&ctx, a),
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("config types serialize")
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(v).map_err(|e| CliError::Internal(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

fn read_split(path: &Path, split: &str) -> Result<Vec<Sentence>, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut splits = read_jsonl(BufReader::new(file)).context(|| path.display().to_string())?;
    splits.remove(split).ok_or_else(|| {
        CliError::Usage(format!(
            "{}: no sentences in split {split:?} (available: {})",
            path.display(),
            splits.keys().cloned().collect::<Vec<_>>().join(", ")
        ))
    })
}

fn load_model(path: &Path) -> Result<ToyLM, CliError> {
    load_checkpoint(path).context(|| path.display().to_string())
}

fn load_classification(path: &Path) -> Result<NeuronClassification, CliError> {
    NeuronClassification::load(path).context(|| path.display().to_string())
}

fn cmd_corpus(ctx: &Ctx, preset: Preset) -> Result<(), CliError> {
    let mut cfg = ctx.run.corpus.clone().unwrap_or_else(|| match preset {
        Preset::Default => CorpusConfig::default(),
        Preset::Ablation => CorpusConfig::ablation_preset(DEFAULT_SEED),
    });
    if let Some(seed) = ctx.common.seed {
        cfg.seed = seed;
    }
    let corpus = generate_corpus(&cfg).context(|| "corpus config".into())?;
    let probe = draw_probe(&cfg, cfg.n_eval_per_lang).context(|| "corpus config".into())?;
    let corpus_path = ctx.out("corpus.jsonl");
    let mut buf = Vec::new();
    write_jsonl(&corpus, &mut buf).context(|| corpus_path.display().to_string())?;
    write_split_jsonl("probe", &probe, &mut buf).context(|| corpus_path.display().to_string())?;
    fs::write(&corpus_path, buf).map_err(|e| CliError::io(&corpus_path, e))?;
    let cfg_path = ctx.out("corpus.config.json");
    write_json(&cfg_path, &cfg)?;
    ctx.finish(Manifest::new("corpus gen", cfg.seed, to_value(&cfg)), &[], &[corpus_path, cfg_path])
}

fn cmd_train(ctx: &Ctx, a: &TrainArgs) -> Result<(), CliError> {
    let sentences = read_split(&a.corpus, "train")?;
    let mut model_cfg = ctx.run.model.clone().unwrap_or_default();
    let mut train_cfg = ctx.run.train.clone().unwrap_or_default();
    let seed = ctx.seed();
    if ctx.common.seed.is_some() || ctx.run.model.is_none() {
        model_cfg.seed = seed;
    }
    if ctx.common.seed.is_some() || ctx.run.train.is_none() {
        train_cfg.seed = seed;
    }
    if let Some(steps) = a.steps {
        train_cfg.steps = steps;
    }
    let mut model = ToyLM::new(model_cfg.clone()).context(|| "model config".into())?;
    let report = train(&mut model, &sentences, &train_cfg).context(|| "training".into())?;
    if let Some(loss) = report.final_loss {
        log::info!("final training loss {loss:.4}");
    }
    let model_path = ctx.out("model.tlm");
    save_checkpoint(&model, &model_path).context(|| model_path.display().to_string())?;
    let log_path = ctx.out("train_log.json");
    write_json(&log_path, &report)?;
    let config = json!({ "model": model_cfg, "train": train_cfg });
    ctx.finish(Manifest::new("train", seed, config), &[&a.corpus], &[model_path, log_path])
}

fn cmd_align(ctx: &Ctx, a: &AlignArgs) -> Result<(), CliError> {
    let model = load_model(&a.model)?;
    let text = fs::read_to_string(&a.corpus_config).map_err(|e| CliError::io(&a.corpus_config, e))?;
    let corpus_cfg: CorpusConfig =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", a.corpus_config.display())))?;
    let corpus = generate_corpus(&corpus_cfg).context(|| a.corpus_config.display().to_string())?;
    let seed = ctx.seed();
    let mut dpo_cfg = ctx.run.dpo.clone().unwrap_or_default();
    if ctx.common.seed.is_some() || ctx.run.dpo.is_none() {
        dpo_cfg.seed = seed;
    }
    if let Some(steps) = a.steps {
        dpo_cfg.steps = steps;
    }
    if let Some(beta) = a.beta {
        dpo_cfg.beta = beta;
    }
    let n_pairs = a.pairs.or(ctx.run.pairs_per_language).unwrap_or(DEFAULT_PAIRS);
    let pairs = build_preference_pairs(&model, &corpus, n_pairs, seed).context(|| "preference pairs".into())?;
    let (aligned, report) = dpo_finetune(&model, &pairs.pairs, &dpo_cfg).context(|| "dpo".into())?;
    let model_path = ctx.out("aligned.tlm");
    save_checkpoint(&aligned, &model_path).context(|| model_path.display().to_string())?;
    let log_path = ctx.out("align_log.json");
    write_json(
        &log_path,
        &json!({
            "pairs_requested_per_language": n_pairs,
            "pairs_achieved": pairs.achieved,
            "losses": report.losses,
        }),
    )?;
    let config = json!({ "dpo": dpo_cfg, "pairs_per_language": n_pairs });
    ctx.finish(
        Manifest::new("align", seed, config),
        &[&a.model, &a.corpus_config],
        &[model_path, log_path],
    )
}

fn cmd_collect(ctx: &Ctx, a: &CollectArgs) -> Result<(), CliError> {
    let model = load_model(&a.model)?;
    let sentences = read_split(&a.corpus, &a.split)?;
    let n_langs = sentences.iter().map(|s| s.language + 1).max().unwrap_or(0);
    let snap = collect_probs(&model, &sentences, n_langs).context(|| "collect".into())?;
    let path = ctx.out(&a.name);
    write_snapshot(&snap, &path).context(|| path.display().to_string())?;
    let config = json!({ "split": a.split, "n_langs": n_langs });
    ctx.finish(Manifest::new("collect", ctx.seed(), config), &[&a.model, &a.corpus], &[path])
}

fn cmd_identify(ctx: &Ctx, a: &IdentifyArgs) -> Result<(), CliError> {
    let snap = read_snapshot(&a.snapshot).context(|| a.snapshot.display().to_string())?;
    let mut cfg = ctx.run.identify.unwrap_or_default();
    if let Some(v) = a.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = a.tau {
        cfg.tau = v;
    }
    if let Some(v) = a.pct {
        cfg.percentile = v;
    }
    let c = classify(&snap, &cfg).context(|| "identify".into())?;
    let path = ctx.out(&a.name);
    c.save(&path).context(|| path.display().to_string())?;
    log::info!("labels {:?}", c.totals);
    ctx.finish(Manifest::new("identify", ctx.seed(), to_value(&cfg)), &[&a.snapshot], &[path])
}

fn cmd_ablate(ctx: &Ctx, a: &AblateArgs) -> Result<(), CliError> {
    let scope_name = a.scope.clone().or_else(|| ctx.run.scope.clone()).unwrap_or_else(|| "language".into());
    let scope: MaskScope = scope_name.parse().map_err(|e: langneuron_core::Error| CliError::Usage(e.to_string()))?;
    let model = load_model(&a.model)?;
    let c = load_classification(&a.classification)?;
    let sentences = read_split(&a.corpus, &a.split)?;
    let m = ppl_matrix(&model, &c, &sentences, scope).context(|| "ablate".into())?;
    let metrics = m.dominance().context(|| "dominance".into())?;
    let csv_path = ctx.out("ppl.csv");
    write_text(&csv_path, &m.to_csv())?;
    let json_path = ctx.out("ppl.json");
    write_json(&json_path, &json!({ "matrix": m, "dominance": metrics }))?;
    println!(
        "scope {}: diag hits {}/{}, mean diag ratio {:.4}, mean off-diag ratio {:.4}",
        scope.as_str(),
        metrics.diag_argmax_hits,
        m.languages.len(),
        metrics.mean_diag_ratio,
        metrics.mean_offdiag_ratio
    );
    let config = json!({ "scope": scope.as_str(), "split": a.split });
    ctx.finish(
        Manifest::new("ablate", ctx.seed(), config),
        &[&a.model, &a.classification, &a.corpus],
        &[csv_path, json_path],
    )
}

fn cmd_report(ctx: &Ctx, kind: &ReportKind) -> Result<(), CliError> {
    match kind {
        ReportKind::Layers(a) => report_simple(ctx, a, "layers", |c| Ok(layer_histogram(c).to_csv())),
        ReportKind::Shared(a) => report_simple(ctx, a, "shared", |c| {
            let mut out = String::from("n_languages,count\n");
            for (i, n) in shared_count_histogram(c).iter().enumerate() {
                out.push_str(&format!("{},{n}\n", i + 1));
            }
            Ok(out)
        }),
        ReportKind::Counts(a) => report_simple(ctx, a, "counts", |c| {
            let mut out = String::from("language,specific,related\n");
            for (lang, n) in c.languages.iter().zip(per_language_counts(c)) {
                out.push_str(&format!("{},{},{}\n", lang.code, n.specific, n.related));
            }
            Ok(out)
        }),
        ReportKind::Stages(a) => report_simple(ctx, a, "stages", |c| {
            Ok(stage_segmentation(&layer_histogram(c)).context(|| "stages".into())?.to_csv())
        }),
        ReportKind::Overlap(a) => report_overlap(ctx, a),
        ReportKind::Heatmap(a) => report_heatmap(ctx, a),
    }
}

fn report_simple(
    ctx: &Ctx,
    a: &ClassificationArg,
    name: &str,
    render: impl FnOnce(&NeuronClassification) -> Result<String, CliError>,
) -> Result<(), CliError> {
    let c = load_classification(&a.classification)?;
    let path = ctx.out(&format!("{name}.csv"));
    write_text(&path, &render(&c)?)?;
    ctx.finish(
        Manifest::new(&format!("report {name}"), ctx.seed(), json!({})),
        &[&a.classification],
        &[path],
    )
}

fn language_set(c: &NeuronClassification, lang: usize) -> BTreeSet<NeuronId> {
    c.neurons
        .iter()
        .filter(|r| matches!(r.label, Label::Specific | Label::Related) && r.is_active_for(lang))
        .map(|r| r.id())
        .collect()
}

fn report_overlap(ctx: &Ctx, a: &OverlapArgs) -> Result<(), CliError> {
    let fiducial = match a.fiducial.as_str() {
        "a" => Fiducial::A,
        "b" => Fiducial::B,
        other => return Err(CliError::Usage(format!("--fiducial must be a or b, got {other:?}"))),
    };
    let (ca, cb) = (load_classification(&a.a)?, load_classification(&a.b)?);
    if ca.languages != cb.languages || ca.n_layers != cb.n_layers || ca.n_neurons_per_layer != cb.n_neurons_per_layer {
        return Err(CliError::core(
            "overlap",
            langneuron_core::Error::Comparability("classifications differ in shape or languages".into()),
        ));
    }
    let overall = overlap_ratio(&ca.language_neurons(), &cb.language_neurons(), fiducial).context(|| "overlap".into())?;
    // Per-language ratios are undefined (null) when the fiducial set is empty.
    let per_language: Vec<Value> = ca
        .languages
        .iter()
        .map(|lang| {
            let r = overlap_ratio(&language_set(&ca, lang.index), &language_set(&cb, lang.index), fiducial).ok();
            json!({ "language": lang.code, "ratio": r })
        })
        .collect();
    let path = ctx.out("overlap.json");
    write_json(
        &path,
        &json!({ "fiducial": a.fiducial, "overall": overall, "per_language": per_language }),
    )?;
    ctx.finish(
        Manifest::new("report overlap", ctx.seed(), json!({ "fiducial": a.fiducial })),
        &[&a.a, &a.b],
        &[path],
    )
}

fn report_heatmap(ctx: &Ctx, a: &HeatmapArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&a.ppl).map_err(|e| CliError::io(&a.ppl, e))?;
    let (cols, rows) = PplMatrix::from_csv(&text).context(|| a.ppl.display().to_string())?;
    let row_labels: Vec<String> = text
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').next().unwrap_or_default().to_string())
        .collect();
    let svg = render_heatmap(&a.title, &row_labels, &cols, &rows).context(|| "heatmap".into())?;
    let path = ctx.out("heatmap.svg");
    write_text(&path, &svg)?;
    ctx.finish(
        Manifest::new("report heatmap", ctx.seed(), json!({ "title": a.title })),
        &[&a.ppl],
        &[path],
    )
}

fn cmd_diff(ctx: &Ctx, a: &DiffArgs) -> Result<(), CliError> {
    let (base, aligned) = (load_classification(&a.base)?, load_classification(&a.aligned)?);
    let d = diff(&base, &aligned).context(|| "diff".into())?;
    let json_path = ctx.out("diff.json");
    write_json(&json_path, &d)?;
    let csv_path = ctx.out("diff_layers.csv");
    write_text(&csv_path, &d.layers_csv())?;
    ctx.finish(
        Manifest::new("diff", ctx.seed(), json!({})),
        &[&a.base, &a.aligned],
        &[json_path, csv_path],
    )
}
