use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use dhan_core::data::{
    ingest, prepare, read_samples, split_train_test, stats, subsample, synth_generate, write_metadata_jsonl,
    write_reviews_jsonl, write_samples, DatasetStats, PrepareOptions,
};
use dhan_core::fsutil::write_atomic;
use dhan_core::tensor::{load_snapshot, save_snapshot, Tape};
use dhan_core::train::{
    aggregate, aggregate_csv, curve_csv, evaluate, export_attention, metrics_csv, repeat_runs, train, RunMetrics,
};
use dhan_core::{Model, ParamStore, Sample, SampleSet, Variant, VocabSizes, Vocabulary};

use crate::config::RunConfig;

pub const TRAIN_FILE: &str = "train.tsv";
pub const TEST_FILE: &str = "test.tsv";
pub const VOCAB_FILE: &str = "vocab.tsv";
pub const STATS_FILE: &str = "stats.csv";
pub const REVIEWS_FILE: &str = "reviews.jsonl";
pub const METADATA_FILE: &str = "metadata.jsonl";
pub const METRICS_FILE: &str = "metrics.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const EVAL_FILE: &str = "eval_metrics.csv";
pub const ATTENTION_FILE: &str = "attention.jsonl";

/// Sidecar written next to a parameter snapshot so it can be reloaded
/// without the original config.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub model: Model,
    pub attr_keys: Vec<String>,
    pub dataset: String,
    pub seed: u64,
}

pub fn snapshot_path(dir: &Path, variant: Variant) -> PathBuf {
    dir.join(format!("{variant}.params"))
}

pub fn manifest_path(dir: &Path, variant: Variant) -> PathBuf {
    dir.join(format!("{variant}.model.json"))
}

pub fn curve_path(dir: &Path, variant: Variant, run: Option<usize>) -> PathBuf {
    match run {
        Some(r) => dir.join("curves").join(format!("{variant}_run{r}.csv")),
        None => dir.join(format!("{variant}.curve.csv")),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    write_atomic(path, contents.as_ref()).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn read_set(path: &Path) -> Result<SampleSet> {
    read_samples(open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn read_vocab(path: &Path) -> Result<Vocabulary> {
    Vocabulary::read_tsv(open(path)?).with_context(|| format!("reading {}", path.display()))
}

struct Prepared {
    train: SampleSet,
    test: SampleSet,
    vocab: Vocabulary,
}

fn load_prepared(cfg: &RunConfig) -> Result<Prepared> {
    let dir = cfg.prepared_dir();
    let p = Prepared {
        train: read_set(&dir.join(TRAIN_FILE))?,
        test: read_set(&dir.join(TEST_FILE))?,
        vocab: read_vocab(&dir.join(VOCAB_FILE))?,
    };
    if p.train.attr_keys != p.test.attr_keys {
        bail!("{TRAIN_FILE} and {TEST_FILE} carry different attribute columns");
    }
    for key in cfg.hierarchy_spec().attribute_keys() {
        if p.train.key_index(&key).is_none() {
            bail!("hierarchy uses attribute `{key}` but the prepared samples lack it; rerun prepare");
        }
    }
    Ok(p)
}

fn build_model(cfg: &RunConfig, variant: Variant, vocab: &Vocabulary, attr_keys: &[String]) -> Result<Model> {
    let sizes = VocabSizes::from_vocab(vocab, attr_keys);
    Ok(Model::new(cfg.model_config(variant), sizes)?)
}

pub fn synth(cfg: &RunConfig, seed: u64) -> Result<()> {
    let (events, metas) = synth_generate(&cfg.synth_config(seed))?;
    let dir = &cfg.output.dir;
    write(&dir.join(REVIEWS_FILE), write_reviews_jsonl(&events))?;
    write(&dir.join(METADATA_FILE), write_metadata_jsonl(&metas))?;
    Ok(())
}

/// Ingests raw files (defaulting to a synthetic corpus in the output
/// directory), generates labeled samples and splits them by user.
pub fn prepare_cmd(cfg: &RunConfig, seed: u64) -> Result<DatasetStats> {
    let dir = &cfg.output.dir;
    let d = &cfg.dataset;
    let reviews = d.reviews.clone().unwrap_or_else(|| dir.join(REVIEWS_FILE));
    let metadata = d.metadata.clone().unwrap_or_else(|| dir.join(METADATA_FILE));
    let (events, metas) = ingest(&reviews, &metadata)?;
    let events = if d.subsample < 1.0 {
        subsample(events, d.subsample, d.subsample_mode, seed)?
    } else {
        events
    };
    let opts = PrepareOptions {
        mode: d.mode,
        sampling: cfg.sampling(),
        min_category_items: d.min_category_items,
        attr_keys: cfg.hierarchy_spec().attribute_keys(),
    };
    let (catalog, set) = prepare(events, metas, &opts, seed)?;
    let (train_set, test_set) = split_train_test(&set, d.test_fraction, seed)?;
    let st = stats(&set);
    write(&dir.join(TRAIN_FILE), write_samples(&train_set))?;
    write(&dir.join(TEST_FILE), write_samples(&test_set))?;
    write(&dir.join(VOCAB_FILE), catalog.vocab.to_tsv()?)?;
    write(
        &dir.join(STATS_FILE),
        format!("{}\n{}\n", DatasetStats::CSV_HEADER, st.csv_row(&d.name)),
    )?;
    Ok(st)
}

pub fn train_cmd(cfg: &RunConfig, seed: u64) -> Result<()> {
    let data = load_prepared(cfg)?;
    let variant = cfg.model.variant;
    let model = build_model(cfg, variant, &data.vocab, &data.train.attr_keys)?;
    let out = train(&model, &data.train, Some(&data.test), &cfg.train, seed)?;
    let dir = &cfg.output.dir;
    let manifest = Manifest {
        model,
        attr_keys: data.train.attr_keys.clone(),
        dataset: cfg.dataset.name.clone(),
        seed,
    };
    save_snapshot(&snapshot_path(dir, variant), &out.params)?;
    eprintln!("wrote {}", snapshot_path(dir, variant).display());
    write(
        &manifest_path(dir, variant),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    write(&curve_path(dir, variant, None), curve_csv(&out.curve))?;
    eprintln!(
        "{variant}: {} steps, training loss {:.6} -> {:.6}",
        out.steps, out.initial_loss, out.final_loss
    );
    Ok(())
}

fn load_trained(cfg: &RunConfig) -> Result<(Manifest, ParamStore<f32>)> {
    let dir = &cfg.output.dir;
    let variant = cfg.model.variant;
    let mpath = manifest_path(dir, variant);
    let text = std::fs::read_to_string(&mpath).with_context(|| format!("reading {}", mpath.display()))?;
    let manifest: Manifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", mpath.display()))?;
    manifest.model.validate()?;
    let params = load_snapshot(&snapshot_path(dir, variant))?;
    Ok((manifest, params))
}

pub fn eval_cmd(cfg: &RunConfig) -> Result<RunMetrics> {
    let (manifest, params) = load_trained(cfg)?;
    let test = read_set(&cfg.prepared_dir().join(TEST_FILE))?;
    let ev = evaluate(&manifest.model, &params, &test, cfg.train.batch_size)?;
    let auc = ev.auc.context("test set holds a single class; AUC is undefined")?;
    let row = RunMetrics {
        model: manifest.model.config.variant.to_string(),
        dataset: manifest.dataset,
        run: 0,
        seed: manifest.seed,
        final_auc: auc,
        final_loss: ev.loss,
    };
    write(&cfg.output.dir.join(EVAL_FILE), metrics_csv(std::slice::from_ref(&row)))?;
    Ok(row)
}

/// Trains every variant `runs` times with seeds `seed..seed + runs` and
/// writes per-run metrics, curves and the aggregate table.
pub fn compare_cmd(cfg: &RunConfig, seed: u64, variants: &[Variant], runs: usize, baseline: Variant) -> Result<()> {
    if runs == 0 {
        bail!("--runs must be at least 1");
    }
    if !variants.contains(&baseline) {
        bail!("baseline `{baseline}` is not among the compared variants");
    }
    let data = load_prepared(cfg)?;
    let dir = &cfg.output.dir;
    let mut rows = Vec::new();
    for &variant in variants {
        let model = build_model(cfg, variant, &data.vocab, &data.train.attr_keys)?;
        let results = repeat_runs(runs, seed, |i, s| -> Result<_> {
            let out = train(&model, &data.train, Some(&data.test), &cfg.train, s)?;
            let ev = evaluate(&model, &out.params, &data.test, cfg.train.batch_size)?;
            let auc = ev.auc.context("test set holds a single class; AUC is undefined")?;
            eprintln!("{variant} run {i} (seed {s}): auc {auc:.6}");
            Ok((
                RunMetrics {
                    model: variant.to_string(),
                    dataset: cfg.dataset.name.clone(),
                    run: i,
                    seed: s,
                    final_auc: auc,
                    final_loss: ev.loss,
                },
                out.curve,
            ))
        })?;
        for (row, curve) in results {
            write(&curve_path(dir, variant, Some(row.run)), curve_csv(&curve))?;
            rows.push(row);
        }
    }
    let agg = aggregate(&rows, baseline.name())?;
    write(&dir.join(METRICS_FILE), metrics_csv(&rows))?;
    write(&dir.join(AGGREGATE_FILE), aggregate_csv(&agg))?;
    for a in &agg {
        eprintln!(
            "{}: auc {:.4} ± {:.4}, relaimpr vs {baseline} {:+.2}%",
            a.model, a.auc_mean, a.auc_std, a.relaimpr_vs_base
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct AttentionLine<'a> {
    sample: usize,
    #[serde(flatten)]
    record: &'a dhan_core::train::AttentionRecord,
}

/// Exports attention for the first `limit` test samples (positives only
/// with `positives`), one JSON record per line.
pub fn attention_cmd(cfg: &RunConfig, limit: Option<usize>, positives: bool) -> Result<usize> {
    let (manifest, params) = load_trained(cfg)?;
    let model = &manifest.model;
    if !model.config.variant.is_hierarchical() {
        bail!(
            "attention export needs a hierarchical variant, not `{}`",
            model.config.variant
        );
    }
    let dir = cfg.prepared_dir();
    let test = read_set(&dir.join(TEST_FILE))?;
    let vocab = read_vocab(&dir.join(VOCAB_FILE))?;
    let chosen: Vec<(usize, &Sample)> = test
        .samples
        .iter()
        .enumerate()
        .filter(|(_, s)| !positives || s.label == 1)
        .take(limit.unwrap_or(usize::MAX))
        .collect();
    let mut out = String::new();
    for chunk in chosen.chunks(cfg.train.batch_size) {
        let samples: Vec<&Sample> = chunk.iter().map(|&(_, s)| s).collect();
        let batch = model.batch(&samples, &test.attr_keys)?;
        let mut tape = Tape::<f32>::new();
        let bound = params.bind(&mut tape);
        let fwd = model.forward(&mut tape, &bound, &batch)?;
        for (&(idx, s), trace) in chunk.iter().zip(fwd.traces(&tape, &batch)) {
            for record in export_attention(s, &trace, &vocab) {
                out.push_str(&serde_json::to_string(&AttentionLine {
                    sample: idx,
                    record: &record,
                })?);
                out.push('\n');
            }
        }
    }
    write(&cfg.output.dir.join(ATTENTION_FILE), out)?;
    Ok(chosen.len())
}
