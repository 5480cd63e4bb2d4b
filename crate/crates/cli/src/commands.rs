//! The six commands: gen-data, train, attack, baseline, transfer, eval.

use crate::dataio::{self, MANIFEST_NAME};
use crate::report::{
    caption_failure_table, keyword_failure_table, write_scores_csv, SummaryRow, TransferCell,
};
use advcap::attack::{
    binary_search_c, count_keywords, cw_classifier, head_accuracy, ifgsm_classifier, train_head,
    AttackConfig, AttackMode, AttackResult, AttackTarget, CwParams, HeadTrainConfig, IfgsmParams,
    KeywordSet,
};
use advcap::captioner::{
    checkpoint, infer_greedy, train, Caption, CaptionerModel, Dims, TrainConfig, Variant,
    Vocabulary,
};
use advcap::metrics::{tokenize, transfer_stats, MetricReport};
use advcap::synth::{self, Split};
use advcap::{rng, Image};
use anyhow::{anyhow, bail, Context, Result};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::path::{Path, PathBuf};

/// Marker error for gate violations so main can map it to exit code 3.
#[derive(Debug)]
pub struct GateRefused(pub String);

impl std::fmt::Display for GateRefused {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for GateRefused {}

fn write_json_pretty(path: &Path, value: &Value) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

// ---- gen-data --------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenDataParams {
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
}

impl Default for GenDataParams {
    fn default() -> Self {
        GenDataParams {
            seed: 42,
            n_train: 2000,
            n_val: 200,
        }
    }
}

pub fn cmd_gen_data(params: &GenDataParams, out: &Path) -> Result<()> {
    let mut manifest = synth::generate(params.seed, params.n_train, params.n_val)?;
    let images_dir = out.join("images");
    std::fs::create_dir_all(&images_dir)
        .with_context(|| format!("creating {}", images_dir.display()))?;
    for entry in &mut manifest.entries {
        let rel = format!("images/img_{:05}.ppm", entry.id);
        let img = synth::render(&entry.scene)?;
        synth::write_ppm(&out.join(&rel), &img)?;
        entry.image_path = Some(rel);
    }
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(out.join(MANIFEST_NAME), text)?;
    eprintln!(
        "wrote {} train + {} val entries to {}",
        params.n_train,
        params.n_val,
        out.display()
    );
    Ok(())
}

// ---- train -----------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainParams {
    pub variant: String,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub early_stop_accuracy: Option<f64>,
}

impl Default for TrainParams {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainParams {
            variant: "plain".into(),
            epochs: t.epochs,
            lr: t.lr,
            seed: 7,
            early_stop_accuracy: t.early_stop_accuracy,
        }
    }
}

pub fn parse_variant(s: &str) -> Result<Variant> {
    match s {
        "plain" => Ok(Variant::Plain),
        "attention" => Ok(Variant::Attention),
        other => bail!("unknown variant {other:?} (plain|attention)"),
    }
}

pub fn cmd_train(params: &TrainParams, data: &Path, out: &Path) -> Result<()> {
    let variant = parse_variant(&params.variant)?;
    let manifest = dataio::load_manifest(data)?;
    let vocab = dataio::template_vocab();
    let train_set = dataio::load_split(&manifest, Split::Train, &vocab)?;
    let val_set = dataio::load_split(&manifest, Split::Val, &vocab)?;
    let cfg = TrainConfig {
        epochs: params.epochs,
        lr: params.lr,
        seed: params.seed,
        early_stop_accuracy: params.early_stop_accuracy,
        ..TrainConfig::default()
    };
    let (model, log) = train(variant, vocab, Dims::default(), &train_set, &val_set, &cfg)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    checkpoint::save(&model, log.final_val_accuracy, out)?;
    let log_path = out.with_extension("log.json");
    std::fs::write(&log_path, serde_json::to_string_pretty(&log)?)?;
    eprintln!(
        "val accuracy {:.3}, gate {}; checkpoint at {}",
        log.final_val_accuracy,
        if log.gate_passed { "PASSED" } else { "NOT PASSED" },
        out.display()
    );
    Ok(())
}

// ---- attack ----------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttackParams {
    pub mode: AttackMode,
    /// `from-other-images`, `self`, or a path to a JSON target file.
    pub targets: String,
    pub n: usize,
    pub c0: f64,
    pub eps: f64,
    pub iters: usize,
    pub binary_steps: usize,
    /// Keyword count M for keyword modes.
    pub keywords: usize,
    pub seed: u64,
    pub allow_ungated: bool,
    pub jobs: usize,
    pub record_trace: bool,
}

impl Default for AttackParams {
    fn default() -> Self {
        AttackParams {
            mode: AttackMode::CaptionLogits,
            targets: "from-other-images".into(),
            n: 50,
            c0: 1.0,
            eps: 1.0,
            iters: 1000,
            binary_steps: 5,
            keywords: 1,
            seed: 11,
            allow_ungated: false,
            jobs: 1,
            record_trace: false,
        }
    }
}

impl AttackParams {
    pub fn to_config(&self) -> AttackConfig {
        AttackConfig {
            mode: self.mode,
            c: self.c0,
            epsilon: self.eps,
            max_iters: self.iters,
            binary_steps: self.binary_steps,
            record_trace: self.record_trace,
            ..AttackConfig::default()
        }
    }
}

/// Loads a checkpoint, enforcing the attack-ready gate.
pub fn load_gated_model(path: &Path, allow_ungated: bool) -> Result<CaptionerModel> {
    let (model, meta) = checkpoint::load(path)?;
    if !meta.gated && !allow_ungated {
        return Err(anyhow!(GateRefused(format!(
            "checkpoint {} is not attack-ready (val accuracy {:.3} < 0.90); \
             retrain or pass --allow-ungated for debugging",
            path.display(),
            meta.val_accuracy
        ))));
    }
    Ok(model)
}

/// Content words of a caption with template stopwords removed.
pub fn keyword_candidates(model: &CaptionerModel, caption: &Caption) -> Vec<u32> {
    let stop = synth::stopwords();
    caption
        .content_ids()
        .iter()
        .copied()
        .filter(|&id| {
            model
                .vocab
                .word_of(id)
                .map_or(false, |w| !stop.contains(&w))
        })
        .collect()
}

/// One attack task: image, target, and bookkeeping for reports.
pub struct AttackTask {
    pub image_id: usize,
    pub image: Image,
    pub target: AttackTarget,
    pub target_text: String,
}

/// Draws attack images and targets per the experimental protocol:
/// images from the validation split, targets from the greedy captions
/// of *other* validation images (keywords filtered to content words).
pub fn build_tasks(
    model: &CaptionerModel,
    manifest: &synth::DatasetManifest,
    params: &AttackParams,
) -> Result<Vec<AttackTask>> {
    let val: Vec<&synth::ManifestEntry> = manifest.split(Split::Val).collect();
    if val.is_empty() {
        bail!("validation split is empty");
    }
    let mut order: Vec<usize> = (0..val.len()).collect();
    let mut rng = rng::stream(params.seed, "attack-images");
    order.shuffle(&mut rng);
    let chosen: Vec<usize> = order.into_iter().take(params.n).collect();
    if chosen.len() < params.n {
        bail!(
            "requested {} attack images but the validation split has {}",
            params.n,
            val.len()
        );
    }

    enum TargetSpec {
        FromOthers,
        SelfTarget,
        File(Vec<String>),
    }
    let spec = match params.targets.as_str() {
        "from-other-images" => TargetSpec::FromOthers,
        "self" => TargetSpec::SelfTarget,
        path => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading target file {path}"))?;
            let targets: Vec<String> = serde_json::from_str(&text)?;
            if targets.len() < params.n {
                bail!("target file has {} entries, need {}", targets.len(), params.n);
            }
            TargetSpec::File(targets)
        }
    };

    let max_len = model.dims.max_len;
    let mut tasks = Vec::with_capacity(chosen.len());
    for (slot, &vi) in chosen.iter().enumerate() {
        let entry = val[vi];
        let image = synth::render(&entry.scene)?;
        let mut task_rng = rng::substream(params.seed, "attack-target", slot as u64);

        let (target, target_text) = match &spec {
            TargetSpec::SelfTarget => {
                let own = infer_greedy(model, &image, max_len)?;
                let text = model.vocab.decode_text(&own);
                if params.mode.is_keyword() {
                    let cands = keyword_candidates(model, &own);
                    if cands.len() < params.keywords {
                        bail!("own caption of image {} has too few content words", entry.id);
                    }
                    let ids: Vec<u32> = cands
                        .choose_multiple(&mut task_rng, params.keywords)
                        .copied()
                        .collect();
                    let kw = KeywordSet::new(ids, &model.vocab)?;
                    let text = kw
                        .ids()
                        .iter()
                        .filter_map(|&id| model.vocab.word_of(id))
                        .collect::<Vec<_>>()
                        .join(" ");
                    (AttackTarget::Keywords(kw), text)
                } else {
                    (AttackTarget::Caption(own), text)
                }
            }
            TargetSpec::FromOthers => {
                // Donor: another validation image whose greedy caption
                // supplies the target (resample until usable).
                let mut donor_caption = None;
                for _ in 0..64 {
                    let di = task_rng.gen_range(0..val.len());
                    if val[di].id == entry.id {
                        continue;
                    }
                    let donor_img = synth::render(&val[di].scene)?;
                    let cap = infer_greedy(model, &donor_img, max_len)?;
                    if !params.mode.is_keyword() {
                        if cap.is_terminated() && cap.len() >= 3 {
                            donor_caption = Some(cap);
                            break;
                        }
                    } else if keyword_candidates(model, &cap).len() >= params.keywords {
                        donor_caption = Some(cap);
                        break;
                    }
                }
                let cap = donor_caption
                    .ok_or_else(|| anyhow!("no usable donor caption found for {}", entry.id))?;
                if params.mode.is_keyword() {
                    let cands = keyword_candidates(model, &cap);
                    let ids: Vec<u32> = cands
                        .choose_multiple(&mut task_rng, params.keywords)
                        .copied()
                        .collect();
                    let kw = KeywordSet::new(ids, &model.vocab)?;
                    let text = kw
                        .ids()
                        .iter()
                        .filter_map(|&id| model.vocab.word_of(id))
                        .collect::<Vec<_>>()
                        .join(" ");
                    (AttackTarget::Keywords(kw), text)
                } else {
                    let text = model.vocab.decode_text(&cap);
                    (AttackTarget::Caption(cap), text)
                }
            }
            TargetSpec::File(list) => {
                let text = &list[slot];
                if params.mode.is_keyword() {
                    let words: Vec<&str> = text.split_whitespace().collect();
                    let kw = KeywordSet::from_words(&words, &model.vocab)?;
                    (AttackTarget::Keywords(kw), text.clone())
                } else {
                    (AttackTarget::Caption(model.vocab.encode(text)?), text.clone())
                }
            }
        };
        tasks.push(AttackTask {
            image_id: entry.id,
            image,
            target,
            target_text,
        });
    }
    Ok(tasks)
}

/// Runs the attack batch, optionally over a worker pool; results come
/// back sorted by image id.
pub fn run_batch(
    model: &CaptionerModel,
    tasks: &[AttackTask],
    config: &AttackConfig,
    jobs: usize,
) -> Result<Vec<(usize, AttackResult)>> {
    let run_one = |task: &AttackTask| -> Result<(usize, AttackResult)> {
        let result = binary_search_c(model, &task.image, &task.target, config)?;
        Ok((task.image_id, result))
    };
    let mut results: Vec<(usize, AttackResult)> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .context("building worker pool")?;
        pool.install(|| tasks.par_iter().map(run_one).collect::<Result<Vec<_>>>())?
    } else {
        tasks.iter().map(run_one).collect::<Result<Vec<_>>>()?
    };
    results.sort_by_key(|(id, _)| *id);
    Ok(results)
}

fn run_record_json(task: &AttackTask, result: &AttackResult, model: &CaptionerModel, config: &AttackConfig) -> Value {
    json!({
        "image_id": task.image_id,
        "config": config,
        "target": task.target_text,
        "target_is_keywords": matches!(task.target, AttackTarget::Keywords(_)),
        "success": result.success,
        "l2": result.l2,
        "c_used": result.c_used,
        "iterations_used": result.iterations_used,
        "final_caption": model.vocab.decode_text(&result.caption),
        "runs": result.runs,
        "original_image": crate::dataio::image_to_json(&task.image),
        "adversarial_image": crate::dataio::image_to_json(&result.adversarial_image),
    })
}

pub fn cmd_attack(params: &AttackParams, model_path: &Path, data: &Path, out: &Path) -> Result<()> {
    let model = load_gated_model(model_path, params.allow_ungated)?;
    let manifest = dataio::load_manifest(data)?;
    let tasks = build_tasks(&model, &manifest, params)?;
    let config = params.to_config();
    let results = run_batch(&model, &tasks, &config, params.jobs)?;

    std::fs::create_dir_all(out)?;
    let mut csv_rows: Vec<(String, String, f64)> = Vec::new();
    for (id, result) in &results {
        let task = tasks.iter().find(|t| t.image_id == *id).unwrap();
        let record = run_record_json(task, result, &model, &config);
        write_json_pretty(&out.join(format!("run_{id:05}.json")), &record)?;
        synth::write_ppm(
            &out.join(format!("adv_{id:05}.ppm")),
            &result.adversarial_image,
        )?;
        csv_rows.push((id.to_string(), "success".into(), f64::from(result.success as u8)));
        csv_rows.push((id.to_string(), "l2".into(), result.l2));
    }

    // Failure statistics in the per-c table layout.
    let summary = SummaryRow::from_results(&format!("{:?}", params.mode), &results
        .iter()
        .map(|(_, r)| r.clone())
        .collect::<Vec<_>>());
    let mut aggregate = json!({
        "summary": summary,
        "params": params,
    });
    if params.mode.is_keyword() {
        let failed: Vec<(&AttackResult, &KeywordSet)> = results
            .iter()
            .filter(|(_, r)| !r.success)
            .map(|(id, r)| {
                let task = tasks.iter().find(|t| t.image_id == *id).unwrap();
                match &task.target {
                    AttackTarget::Keywords(k) => (r, k),
                    AttackTarget::Caption(_) => unreachable!(),
                }
            })
            .collect();
        let table = keyword_failure_table(&model, &failed)?;
        aggregate["keyword_failures"] = serde_json::to_value(&table)?;
        for (id, r) in &results {
            if !r.success {
                let task = tasks.iter().find(|t| t.image_id == *id).unwrap();
                if let AttackTarget::Keywords(k) = &task.target {
                    let m = count_keywords(&r.caption, k);
                    csv_rows.push((id.to_string(), "m_prime".into(), m as f64));
                }
            }
        }
    } else {
        let failed: Vec<(&AttackResult, &Caption)> = results
            .iter()
            .filter(|(_, r)| !r.success)
            .map(|(id, r)| {
                let task = tasks.iter().find(|t| t.image_id == *id).unwrap();
                match &task.target {
                    AttackTarget::Caption(c) => (r, c),
                    AttackTarget::Keywords(_) => unreachable!(),
                }
            })
            .collect();
        let table = caption_failure_table(&model, &failed)?;
        for row in &table {
            for (name, value) in row.scores.named() {
                csv_rows.push((format!("c={}", row.c), name.into(), value));
            }
        }
        aggregate["caption_failures"] = serde_json::to_value(&table)?;
    }
    write_json_pretty(&out.join("aggregate.json"), &aggregate)?;
    write_scores_csv(out.join("aggregate.csv"), &csv_rows)?;
    eprintln!(
        "{}/{} attacks succeeded; reports in {}",
        summary.successes,
        summary.n,
        out.display()
    );
    Ok(())
}

// ---- baseline --------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BaselineParams {
    /// `ifgsm` or `cw`.
    pub attack: String,
    pub eps_inf: f64,
    pub kappa: f64,
    pub big_c: f64,
    pub n: usize,
    pub seed: u64,
    pub allow_ungated: bool,
    /// Also run the 1-keyword captioner attack on the same images for
    /// the comparison row.
    pub with_keyword_comparison: bool,
}

impl Default for BaselineParams {
    fn default() -> Self {
        BaselineParams {
            attack: "ifgsm".into(),
            eps_inf: 0.3,
            kappa: 10.0,
            big_c: 100.0,
            n: 20,
            seed: 13,
            allow_ungated: false,
            with_keyword_comparison: true,
        }
    }
}

pub struct BaselineOutcome {
    pub classifier_success_rate: f64,
    pub caption_keyword_rate: f64,
    pub keyword_attack_rate: Option<f64>,
    pub head_accuracy: f64,
    pub mean_l2: f64,
    pub details: Value,
}

pub fn run_baseline(
    model: &CaptionerModel,
    manifest: &synth::DatasetManifest,
    params: &BaselineParams,
) -> Result<BaselineOutcome> {
    let train_labeled = dataio::load_split_labeled(manifest, Split::Train)?;
    let val_labeled = dataio::load_split_labeled(manifest, Split::Val)?;
    let head = train_head(
        model,
        &train_labeled,
        synth::Color::ALL.len(),
        &HeadTrainConfig {
            seed: params.seed,
            ..HeadTrainConfig::default()
        },
    )?;
    let head_acc = head_accuracy(model, &head, &val_labeled)?;

    let mut order: Vec<usize> = (0..val_labeled.len()).collect();
    let mut rng = rng::stream(params.seed, "baseline-images");
    order.shuffle(&mut rng);
    let chosen: Vec<usize> = order.into_iter().take(params.n).collect();
    if chosen.len() < params.n {
        bail!("validation split too small for n = {}", params.n);
    }

    let max_len = model.dims.max_len;
    let mut classifier_hits = 0usize;
    let mut caption_hits = 0usize;
    let mut keyword_hits = 0usize;
    let mut l2s = Vec::new();
    let mut per_image = Vec::new();

    for (slot, &vi) in chosen.iter().enumerate() {
        let (image, _) = &val_labeled[vi];
        let mut task_rng = rng::substream(params.seed, "baseline-target", slot as u64);
        let current = head.predict(model, image)?;
        // Random target class different from the current prediction.
        let mut target_class = task_rng.gen_range(0..head.n_classes);
        while target_class == current {
            target_class = task_rng.gen_range(0..head.n_classes);
        }
        let class_word = synth::Color::ALL[target_class].word();

        let result = match params.attack.as_str() {
            "ifgsm" => ifgsm_classifier(
                model,
                &head,
                image,
                target_class,
                &IfgsmParams {
                    eps_inf: params.eps_inf,
                    ..IfgsmParams::default()
                },
            )?,
            "cw" => cw_classifier(
                model,
                &head,
                image,
                target_class,
                &CwParams {
                    kappa: params.kappa,
                    c: params.big_c,
                    ..CwParams::default()
                },
            )?,
            other => bail!("unknown baseline attack {other:?} (ifgsm|cw)"),
        };
        let classifier_ok =
            result.success && head.predict(model, &result.adversarial_image)? == target_class;
        let caption = infer_greedy(model, &result.adversarial_image, max_len)?;
        let kw = KeywordSet::from_words(&[class_word], &model.vocab)?;
        let caption_ok = count_keywords(&caption, &kw) == 1;
        classifier_hits += classifier_ok as usize;
        caption_hits += caption_ok as usize;
        l2s.push(result.l2);

        // Comparison: the captioner-level 1-keyword attack on the same
        // image with the same target word.
        let mut keyword_ok = None;
        if params.with_keyword_comparison {
            let cfg = AttackConfig {
                mode: AttackMode::KeywordLogits,
                ..AttackConfig::default()
            };
            let res = binary_search_c(model, image, &AttackTarget::Keywords(kw.clone()), &cfg)?;
            keyword_hits += res.success as usize;
            keyword_ok = Some(res.success);
        }
        per_image.push(json!({
            "val_index": vi,
            "target_class": target_class,
            "target_word": class_word,
            "classifier_success": classifier_ok,
            "caption_contains_word": caption_ok,
            "keyword_attack_success": keyword_ok,
            "l2": result.l2,
            "caption": model.vocab.decode_text(&caption),
        }));
    }

    let n = chosen.len() as f64;
    Ok(BaselineOutcome {
        classifier_success_rate: classifier_hits as f64 / n,
        caption_keyword_rate: caption_hits as f64 / n,
        keyword_attack_rate: params
            .with_keyword_comparison
            .then_some(keyword_hits as f64 / n),
        head_accuracy: head_acc,
        mean_l2: l2s.iter().sum::<f64>() / n,
        details: Value::Array(per_image),
    })
}

pub fn cmd_baseline(
    params: &BaselineParams,
    model_path: &Path,
    data: &Path,
    out: &Path,
) -> Result<()> {
    let model = load_gated_model(model_path, params.allow_ungated)?;
    let manifest = dataio::load_manifest(data)?;
    let outcome = run_baseline(&model, &manifest, params)?;
    let doc = json!({
        "params": params,
        "head_accuracy": outcome.head_accuracy,
        "classifier_success_rate": outcome.classifier_success_rate,
        "caption_keyword_rate": outcome.caption_keyword_rate,
        "keyword_attack_rate": outcome.keyword_attack_rate,
        "mean_l2": outcome.mean_l2,
        "per_image": outcome.details,
    });
    write_json_pretty(out, &doc)?;
    eprintln!(
        "classifier success {:.3}, caption-level {:.3}, keyword-attack {:?}",
        outcome.classifier_success_rate, outcome.caption_keyword_rate, outcome.keyword_attack_rate
    );
    Ok(())
}

// ---- transfer --------------------------------------------------------

pub fn cmd_transfer(model_a: &Path, model_b: &Path, adv_dir: &Path, out: &Path) -> Result<()> {
    let (a, meta_a) = checkpoint::load(model_a)?;
    let (b, meta_b) = checkpoint::load(model_b)?;
    if !meta_a.gated || !meta_b.gated {
        return Err(anyhow!(GateRefused(
            "both transfer models must be attack-ready".into()
        )));
    }
    let mut records = Vec::new();
    let entries = std::fs::read_dir(adv_dir)
        .with_context(|| format!("reading {}", adv_dir.display()))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map_or(false, |n| n.starts_with("run_") && n.ends_with(".json"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no run_*.json records in {}", adv_dir.display());
    }
    for p in paths {
        let v: Value = serde_json::from_str(&std::fs::read_to_string(&p)?)?;
        records.push(v);
    }

    // Cells keyed by (c0, epsilon) from each record's config echo.
    let mut cells: std::collections::BTreeMap<(u64, u64), Vec<&Value>> = Default::default();
    for r in &records {
        if r["success"].as_bool() != Some(true) {
            continue;
        }
        if r["target_is_keywords"].as_bool() == Some(true) {
            continue; // transfer analysis uses caption-mode records
        }
        let c = r["config"]["c"].as_f64().context("config.c")?;
        let eps = r["config"]["epsilon"].as_f64().context("config.epsilon")?;
        cells.entry((c.to_bits(), eps.to_bits())).or_default().push(r);
    }
    if cells.is_empty() {
        bail!("no successful caption-mode records to transfer");
    }

    let mut grid = Vec::new();
    for ((cb, eb), recs) in &cells {
        let c = f64::from_bits(*cb);
        let epsilon = f64::from_bits(*eb);
        let mut originals = Vec::new();
        let mut adversarials = Vec::new();
        let mut targets = Vec::new();
        let mut l2s = Vec::new();
        for r in recs {
            originals.push(crate::dataio::image_from_json(&r["original_image"])?);
            adversarials.push(crate::dataio::image_from_json(&r["adversarial_image"])?);
            targets.push(a.vocab.encode(r["target"].as_str().context("target")?)?);
            l2s.push(r["l2"].as_f64().context("l2")?);
        }
        let stats = transfer_stats(&a, &b, &originals, &adversarials, &targets)?;
        grid.push(TransferCell {
            c,
            epsilon,
            n: recs.len(),
            mean_l2: l2s.iter().sum::<f64>() / l2s.len() as f64,
            stats,
        });
    }
    grid.sort_by(|x, y| x.c.partial_cmp(&y.c).unwrap().then(x.epsilon.partial_cmp(&y.epsilon).unwrap()));

    let doc = json!({
        "model_a": model_a.display().to_string(),
        "model_b": model_b.display().to_string(),
        "grid": grid,
    });
    write_json_pretty(out, &doc)?;
    eprintln!("transfer grid with {} cells written to {}", cells.len(), out.display());
    Ok(())
}

// ---- eval ------------------------------------------------------------

pub fn cmd_eval(pred: &Path, refs: &Path, out: &Path) -> Result<()> {
    let pred_lines: Vec<String> = std::fs::read_to_string(pred)
        .with_context(|| format!("reading {}", pred.display()))?
        .lines()
        .map(String::from)
        .collect();
    let ref_lines: Vec<String> = std::fs::read_to_string(refs)
        .with_context(|| format!("reading {}", refs.display()))?
        .lines()
        .map(String::from)
        .collect();
    if pred_lines.len() != ref_lines.len() {
        bail!(
            "line count mismatch: {} predictions vs {} references",
            pred_lines.len(),
            ref_lines.len()
        );
    }
    if pred_lines.is_empty() {
        bail!("empty input files");
    }
    let mut reports = Vec::with_capacity(pred_lines.len());
    let mut csv_rows = Vec::new();
    for (i, (p, r)) in pred_lines.iter().zip(&ref_lines).enumerate() {
        let rep = MetricReport::compute(&tokenize(p), &[tokenize(r)]);
        for (name, value) in rep.named() {
            csv_rows.push((i.to_string(), name.to_string(), value));
        }
        reports.push(rep);
    }
    let mean = MetricReport::mean(&reports);
    let doc = json!({
        "n": reports.len(),
        "aggregation": "sentence-averaged",
        "mean": mean,
        "per_line": reports,
    });
    write_json_pretty(out, &doc)?;
    write_scores_csv(out.with_extension("csv"), &csv_rows)?;
    Ok(())
}

/// Reusable vocabulary alias for binaries and tests.
pub fn template_vocab() -> Vocabulary {
    dataio::template_vocab()
}
