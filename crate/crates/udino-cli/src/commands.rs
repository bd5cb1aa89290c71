use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use udino::cluster::{
    extract_embeddings, fine_tune, iterate, pseudo_labels, train_supervised, AamHead, Assignment,
    IterationRecord,
};
use udino::corpus::{gen_synthetic_corpus, logmel, read_corpus, read_wav_pcm16, write_corpus, Corpus,
    SynthConfig, Utterance};
use udino::dino::{
    load_any_encoder, read_checkpoint, save_dino, save_encoder, train, write_checkpoint, Branch,
    DinoModel,
};
use udino::nn::{Encoder, Tensor};
use udino::rng;
use udino::scoring::{
    eer, min_dcf, preprocess, probe_train, read_embeddings, read_label_map, read_trials,
    score_trials, weighted_f1, write_embeddings, write_embeddings_tsv, write_trials, DcfParams,
    EmbeddingSet, PldaModel, PreprocessStats, Scorer, Trial, TrialLabel,
};
use udino::{Error, Result};

use crate::config::RunConfig;
use crate::Command;

// Trial-sampling stream tag, distinct from the library's tags.
const TAG_TRIALS: u64 = 9001;

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::SynthData { config, out_dir } => synth_data(config.config.as_deref(), &out_dir),
        Command::Featurize {
            config,
            wav_dir,
            out_dir,
        } => featurize(config.config.as_deref(), &wav_dir, &out_dir),
        Command::TrainDino {
            config,
            corpus,
            out,
            metrics,
            checkpoint_every,
        } => train_dino(
            config.config.as_deref(),
            &corpus,
            &out,
            metrics.as_deref(),
            checkpoint_every,
        ),
        Command::Extract {
            ckpt,
            corpus,
            out,
            branch,
            tsv,
        } => extract(&ckpt, &corpus, &out, &branch, tsv),
        Command::EvalTrials {
            config,
            emb,
            trials,
            scorer,
            out,
        } => eval_trials(config.config.as_deref(), &emb, &trials, &scorer, out.as_deref()),
        Command::Cluster {
            config,
            ckpt,
            corpus,
            out,
            branch,
        } => cluster_cmd(config.config.as_deref(), &ckpt, &corpus, &out, &branch),
        Command::TrainSupervised {
            config,
            corpus,
            labels,
            init,
            out,
        } => train_supervised_cmd(
            config.config.as_deref(),
            &corpus,
            &labels,
            init.as_deref(),
            &out,
        ),
        Command::TrainPlda {
            config,
            emb,
            labels,
            out,
        } => train_plda(config.config.as_deref(), &emb, &labels, &out),
        Command::Probe {
            config,
            train_emb,
            train_labels,
            test_emb,
            test_labels,
            out,
        } => probe_cmd(
            config.config.as_deref(),
            &train_emb,
            &train_labels,
            &test_emb,
            &test_labels,
            out.as_deref(),
        ),
        Command::Pipeline { config, out_dir } => pipeline(config.config.as_deref(), &out_dir),
    }
}

fn parse_branch(s: &str) -> Result<Branch> {
    match s {
        "teacher" => Ok(Branch::Teacher),
        "student" => Ok(Branch::Student),
        other => Err(Error::Config(format!(
            "branch must be `teacher` or `student`, got `{other}`"
        ))),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format(format!("json serialization: {e}")))?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize)]
struct MetricsJson {
    eer_pct: f64,
    min_dcf: f64,
    n_target: usize,
    n_nontarget: usize,
}

fn synth_data(config: Option<&Path>, out_dir: &Path) -> Result<()> {
    let cfg = RunConfig::load_or_default(config)?;
    let corpus = gen_synthetic_corpus(&cfg.data.synth, cfg.seed)?;
    write_corpus(out_dir, &corpus)?;
    cfg.write_resolved(&out_dir.join("config.resolved.json"))?;
    println!(
        "wrote {} utterances ({} speakers) to {}",
        corpus.len(),
        cfg.data.synth.n_speakers,
        out_dir.display()
    );
    Ok(())
}

fn featurize(config: Option<&Path>, wav_dir: &Path, out_dir: &Path) -> Result<()> {
    let cfg = RunConfig::load_or_default(config)?;
    let mut wavs: Vec<PathBuf> = fs::read_dir(wav_dir)
        .map_err(|e| Error::io(wav_dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "wav"))
        .collect();
    wavs.sort();
    if wavs.is_empty() {
        return Err(Error::Data(format!(
            "no .wav files found in {}",
            wav_dir.display()
        )));
    }
    let mut utterances = Vec::with_capacity(wavs.len());
    for path in &wavs {
        let (samples, sr) = read_wav_pcm16(path)?;
        let frames = logmel(&samples, sr, &cfg.data.logmel)?;
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Data(format!("bad file name {}", path.display())))?
            .to_string();
        utterances.push(Utterance {
            id,
            speaker_id: None,
            frames,
        });
    }
    let corpus = Corpus::new(utterances, format!("{{\"source\":\"{}\"}}", wav_dir.display()))?;
    write_corpus(out_dir, &corpus)?;
    cfg.write_resolved(&out_dir.join("config.resolved.json"))?;
    println!("featurized {} files into {}", corpus.len(), out_dir.display());
    Ok(())
}

fn train_dino(
    config: Option<&Path>,
    corpus_dir: &Path,
    out: &Path,
    metrics: Option<&Path>,
    checkpoint_every: Option<usize>,
) -> Result<()> {
    let cfg = RunConfig::load_or_default(config)?;
    let corpus = read_corpus(corpus_dir)?.without_speaker_ids();
    let mut model = DinoModel::init(&cfg.encoder, &cfg.dino, cfg.seed)?;

    let metrics_path = metrics
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.with_extension("metrics.jsonl"));
    let metrics_file = fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let mut metrics_writer = std::io::BufWriter::new(metrics_file);

    let seed = cfg.seed;
    let log = train(&mut model, &corpus, seed, |m, step| {
        let line = serde_json::to_string(step)
            .map_err(|e| Error::Format(format!("metric serialization: {e}")))?;
        writeln!(metrics_writer, "{line}").map_err(|e| Error::io(&metrics_path, e))?;
        if let Some(every) = checkpoint_every {
            if every > 0 && (step.step + 1) % every == 0 {
                let interim = out.with_extension(format!("step{}.ckpt", step.step + 1));
                save_dino(&interim, m, (step.step + 1) as u64, seed)?;
            }
        }
        Ok(())
    })?;
    metrics_writer
        .flush()
        .map_err(|e| Error::io(&metrics_path, e))?;

    save_dino(out, &model, log.len() as u64, cfg.seed)?;
    cfg.write_resolved(&out.with_extension("config.json"))?;
    println!(
        "trained {} steps; checkpoint {}, metrics {}",
        log.len(),
        out.display(),
        metrics_path.display()
    );
    Ok(())
}

fn extract(ckpt: &Path, corpus_dir: &Path, out: &Path, branch: &str, tsv: bool) -> Result<()> {
    let branch = parse_branch(branch)?;
    let encoder = load_any_encoder(ckpt, branch)?;
    let corpus = read_corpus(corpus_dir)?;
    let embs = extract_embeddings(&encoder, &corpus)?;
    write_embeddings(out, &embs)?;
    if tsv {
        let mut tsv_path = out.as_os_str().to_owned();
        tsv_path.push(".tsv");
        write_embeddings_tsv(&PathBuf::from(tsv_path), &embs)?;
    }
    println!("wrote {} embeddings (dim {}) to {}", embs.len(), embs.dim(), out.display());
    Ok(())
}

fn save_plda(path: &Path, model: &PldaModel, stats: &PreprocessStats) -> Result<()> {
    let d = model.dim;
    let to32 = |v: &[f64]| -> Vec<f32> { v.iter().map(|&x| x as f32).collect() };
    let mu = Tensor::new(vec![d], to32(&model.mu))?;
    let between = Tensor::new(vec![d, d], to32(&model.between))?;
    let within = Tensor::new(vec![d, d], to32(&model.within))?;
    let mean = Tensor::new(vec![d], stats.mean.clone())?;
    let tensors: Vec<(String, &Tensor<f32>)> = vec![
        ("plda.mu".into(), &mu),
        ("plda.between".into(), &between),
        ("plda.within".into(), &within),
        ("preprocess.mean".into(), &mean),
    ];
    write_checkpoint(path, "plda", 0, serde_json::json!({ "dim": d }), &tensors)
}

fn load_plda(path: &Path) -> Result<(PldaModel, PreprocessStats)> {
    let (meta, tensors) = read_checkpoint(path)?;
    if meta.kind != "plda" {
        return Err(Error::Format(format!(
            "{}: expected a plda checkpoint, found kind `{}`",
            path.display(),
            meta.kind
        )));
    }
    let get = |name: &str| -> Result<&Tensor<f32>> {
        tensors
            .get(name)
            .ok_or_else(|| Error::Format(format!("{}: missing tensor {name}", path.display())))
    };
    let to64 = |t: &Tensor<f32>| -> Vec<f64> { t.data().iter().map(|&v| v as f64).collect() };
    let mu = to64(get("plda.mu")?);
    let d = mu.len();
    Ok((
        PldaModel {
            dim: d,
            mu,
            between: to64(get("plda.between")?),
            within: to64(get("plda.within")?),
        },
        PreprocessStats {
            mean: get("preprocess.mean")?.data().to_vec(),
        },
    ))
}

fn eval_trials(
    config: Option<&Path>,
    emb: &Path,
    trials_path: &Path,
    scorer: &str,
    out: Option<&Path>,
) -> Result<()> {
    let cfg = RunConfig::load_or_default(config)?;
    let embs = read_embeddings(emb)?;
    let trials = read_trials(trials_path)?;
    let scores = if scorer == "cosine" {
        score_trials(&embs, &trials, &Scorer::Cosine)?
    } else if let Some(model_path) = scorer.strip_prefix("plda:") {
        let (model, stats) = load_plda(Path::new(model_path))?;
        let embs = preprocess(&embs, &stats)?;
        score_trials(&embs, &trials, &Scorer::Plda(&model))?
    } else {
        return Err(Error::Config(format!(
            "scorer must be `cosine` or `plda:<model>`, got `{scorer}`"
        )));
    };
    let params = DcfParams {
        p_target: cfg.eval.p_target,
        c_miss: cfg.eval.c_miss,
        c_fa: cfg.eval.c_fa,
    };
    let metrics = MetricsJson {
        eer_pct: eer(&scores)?,
        min_dcf: min_dcf(&scores, &params)?,
        n_target: scores.n_target(),
        n_nontarget: scores.n_nontarget(),
    };
    let json = serde_json::to_string(&metrics)
        .map_err(|e| Error::Format(format!("metrics serialization: {e}")))?;
    println!("{json}");
    if let Some(path) = out {
        write_json(path, &metrics)?;
        cfg.write_resolved(&path.with_extension("config.json"))?;
    }
    Ok(())
}

fn cluster_cmd(
    config: Option<&Path>,
    ckpt: &Path,
    corpus_dir: &Path,
    out: &Path,
    branch: &str,
) -> Result<()> {
    let cfg = RunConfig::load_or_default(config)?;
    let encoder = load_any_encoder(ckpt, parse_branch(branch)?)?;
    let corpus = read_corpus(corpus_dir)?;
    let labels = pseudo_labels(&corpus, &encoder, &cfg.cluster.pseudo, cfg.seed)?;
    labels.write_tsv(out)?;
    cfg.write_resolved(&out.with_extension("config.json"))?;
    println!(
        "wrote {} pseudo labels over {} clusters to {}",
        labels.len(),
        labels.k,
        out.display()
    );
    Ok(())
}

fn train_supervised_cmd(
    config: Option<&Path>,
    corpus_dir: &Path,
    labels_path: &Path,
    init: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let cfg = RunConfig::load_or_default(config)?;
    let corpus = read_corpus(corpus_dir)?;
    let labels = Assignment::read_tsv(labels_path)?;
    let init_encoder = match init {
        Some(path) => load_any_encoder(path, Branch::Teacher)?,
        None => Encoder::init(
            &cfg.encoder,
            &mut rng::derive(cfg.seed, &[rng::TAG_MODEL_INIT]),
        )?,
    };
    let (encoder, _head, losses) =
        train_supervised(&init_encoder, &corpus, &labels, &cfg.supervised.train, cfg.seed)?;
    save_encoder(out, &encoder, losses.len() as u64, cfg.seed)?;
    cfg.write_resolved(&out.with_extension("config.json"))?;
    let last = losses.last().copied().unwrap_or(f64::NAN);
    println!(
        "supervised training: {} steps, final loss {last:.4}; checkpoint {}",
        losses.len(),
        out.display()
    );
    Ok(())
}

fn labeled_embeddings(emb: &Path, labels_path: &Path) -> Result<EmbeddingSet> {
    let embs = read_embeddings(emb)?;
    let map: BTreeMap<String, String> = read_label_map(labels_path)?.into_iter().collect();
    let labels = embs
        .ids()
        .iter()
        .map(|id| {
            map.get(id)
                .cloned()
                .ok_or_else(|| Error::MissingId(id.clone()))
        })
        .collect::<Result<Vec<String>>>()?;
    embs.with_labels(labels)
}

fn train_plda(config: Option<&Path>, emb: &Path, labels: &Path, out: &Path) -> Result<()> {
    let cfg = RunConfig::load_or_default(config)?;
    let embs = labeled_embeddings(emb, labels)?;
    let stats = PreprocessStats::fit(&embs)?;
    let embs = preprocess(&embs, &stats)?;
    let (model, ll) = udino::scoring::plda_train(&embs, cfg.plda.iters, cfg.plda.reg)?;
    save_plda(out, &model, &stats)?;
    cfg.write_resolved(&out.with_extension("config.json"))?;
    println!(
        "plda: {} EM iterations, log-likelihood {:.3} -> {:.3}; model {}",
        cfg.plda.iters,
        ll.first().unwrap_or(&f64::NAN),
        ll.last().unwrap_or(&f64::NAN),
        out.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct ProbeJson {
    weighted_f1_pct: f64,
    n_classes: usize,
    n_train: usize,
    n_test: usize,
}

fn probe_cmd(
    config: Option<&Path>,
    train_emb: &Path,
    train_labels: &Path,
    test_emb: &Path,
    test_labels: &Path,
    out: Option<&Path>,
) -> Result<()> {
    let cfg = RunConfig::load_or_default(config)?;
    let train_set = labeled_embeddings(train_emb, train_labels)?;
    let test_set = labeled_embeddings(test_emb, test_labels)?;
    let model = probe_train(&train_set, &cfg.probe)?;
    let preds = model.predict(&test_set)?;
    let truth: Vec<String> = test_set.labels().expect("labeled above").to_vec();
    let metrics = ProbeJson {
        weighted_f1_pct: weighted_f1(&preds, &truth)?,
        n_classes: model.classes.len(),
        n_train: train_set.len(),
        n_test: test_set.len(),
    };
    let json = serde_json::to_string(&metrics)
        .map_err(|e| Error::Format(format!("probe serialization: {e}")))?;
    println!("{json}");
    if let Some(path) = out {
        write_json(path, &metrics)?;
        cfg.write_resolved(&path.with_extension("config.json"))?;
    }
    Ok(())
}

/// Split a corpus into the first `n_train` speakers and the rest.
pub fn split_by_speaker(corpus: &Corpus, n_train_speakers: usize) -> Result<(Corpus, Corpus)> {
    let mut speakers: Vec<String> = Vec::new();
    for u in &corpus.utterances {
        let spk = u
            .speaker_id
            .clone()
            .ok_or_else(|| Error::Data(format!("utterance {} has no speaker label", u.id)))?;
        if !speakers.contains(&spk) {
            speakers.push(spk);
        }
    }
    if n_train_speakers == 0 || n_train_speakers >= speakers.len() {
        return Err(Error::Config(format!(
            "cannot split {} speakers into {} train + held-out",
            speakers.len(),
            n_train_speakers
        )));
    }
    let train_set: std::collections::HashSet<&String> =
        speakers[..n_train_speakers].iter().collect();
    let (mut train, mut eval) = (Vec::new(), Vec::new());
    for u in &corpus.utterances {
        if train_set.contains(u.speaker_id.as_ref().expect("checked above")) {
            train.push(u.clone());
        } else {
            eval.push(u.clone());
        }
    }
    Ok((
        Corpus::new(train, corpus.meta.clone())?,
        Corpus::new(eval, corpus.meta.clone())?,
    ))
}

/// All within-speaker pairs as targets plus a seeded sample of cross-speaker
/// pairs (`ratio` nontargets per target).
pub fn build_trials(eval_corpus: &Corpus, ratio: f64, seed: u64) -> Result<Vec<Trial>> {
    use rand::seq::SliceRandom;
    let n = eval_corpus.len();
    let mut targets = Vec::new();
    let mut nontargets = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (&eval_corpus.utterances[i], &eval_corpus.utterances[j]);
            let same = match (&a.speaker_id, &b.speaker_id) {
                (Some(x), Some(y)) => x == y,
                _ => {
                    return Err(Error::Data(
                        "trial construction requires speaker labels on the eval split".into(),
                    ))
                }
            };
            let trial = Trial {
                enroll_id: a.id.clone(),
                test_id: b.id.clone(),
                label: if same {
                    TrialLabel::Target
                } else {
                    TrialLabel::Nontarget
                },
            };
            if same {
                targets.push(trial);
            } else {
                nontargets.push(trial);
            }
        }
    }
    if targets.is_empty() || nontargets.is_empty() {
        return Err(Error::Data(
            "eval split must contain both same- and cross-speaker pairs".into(),
        ));
    }
    let want = ((targets.len() as f64 * ratio).round() as usize).clamp(1, nontargets.len());
    nontargets.shuffle(&mut rng::derive(seed, &[TAG_TRIALS]));
    nontargets.truncate(want);
    targets.extend(nontargets);
    Ok(targets)
}

#[derive(Debug, Serialize)]
struct PipelineRow {
    stage: String,
    iteration: usize,
    eer_pct: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_pseudo_clusters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    nmi_vs_truth: Option<f64>,
}

impl PipelineRow {
    fn from_record(stage: &str, r: &IterationRecord) -> Self {
        PipelineRow {
            stage: stage.to_string(),
            iteration: r.iteration,
            eer_pct: r.eer_pct,
            n_pseudo_clusters: Some(r.n_pseudo_clusters),
            nmi_vs_truth: r.nmi_vs_truth,
        }
    }
}

fn pipeline(config: Option<&Path>, out_dir: &Path) -> Result<()> {
    let cfg = RunConfig::load_or_default(config)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    cfg.write_resolved(&out_dir.join("config.resolved.json"))?;

    // Synthesize train + held-out speakers in one deterministic draw.
    let full_cfg = SynthConfig {
        n_speakers: cfg.data.synth.n_speakers + cfg.data.held_out_speakers,
        ..cfg.data.synth
    };
    let full = gen_synthetic_corpus(&full_cfg, cfg.seed)?;
    let (train_corpus, eval_corpus) = split_by_speaker(&full, cfg.data.synth.n_speakers)?;
    let trials = build_trials(&eval_corpus, cfg.eval.nontargets_per_target, cfg.seed)?;
    write_trials(&out_dir.join("trials.txt"), &trials)?;

    // Stage 1: self-distillation pre-training (labels stripped).
    let unlabeled = train_corpus.without_speaker_ids();
    let mut model = DinoModel::init(&cfg.encoder, &cfg.dino, cfg.seed)?;
    let metrics_path = out_dir.join("dino.metrics.jsonl");
    let metrics_file = fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let mut metrics_writer = std::io::BufWriter::new(metrics_file);
    train(&mut model, &unlabeled, cfg.seed, |_, step| {
        let line = serde_json::to_string(step)
            .map_err(|e| Error::Format(format!("metric serialization: {e}")))?;
        writeln!(metrics_writer, "{line}").map_err(|e| Error::io(&metrics_path, e))?;
        Ok(())
    })?;
    metrics_writer
        .flush()
        .map_err(|e| Error::io(&metrics_path, e))?;
    save_dino(&out_dir.join("dino.ckpt"), &model, cfg.dino.steps as u64, cfg.seed)?;

    let mut rows = Vec::new();
    let dino_eer = udino::cluster::evaluate_encoder(
        &model.teacher_enc,
        &train_corpus,
        &eval_corpus,
        &trials,
    )?;
    rows.push(PipelineRow {
        stage: "dino".into(),
        iteration: 0,
        eer_pct: dino_eer,
        n_pseudo_clusters: None,
        nmi_vs_truth: None,
    });

    // Stage 2: iterative clustering + supervised retraining.
    let mut final_encoder = model.teacher_enc.clone();
    if cfg.cluster.n_iterations > 0 {
        let iterate_cfg = cfg.cluster.iterate_config(&cfg.supervised.train);
        let (encoder, history) = iterate(
            &train_corpus,
            &model.teacher_enc,
            &eval_corpus,
            &trials,
            &iterate_cfg,
            cfg.seed,
        )?;
        for r in &history {
            rows.push(PipelineRow::from_record(&format!("iter{}", r.iteration), r));
        }
        final_encoder = encoder;

        // Stage 3: large-margin fine-tuning of the post-pooling layers on
        // labels from the final iteration's model.
        if let Some(ft) = &cfg.supervised.finetune {
            if ft.epochs > 0 {
                let labels = pseudo_labels(&train_corpus, &final_encoder, &cfg.cluster.pseudo, cfg.seed)?;
                labels.write_tsv(&out_dir.join("labels.tsv"))?;
                let head = AamHead::init(
                    labels.k.max(2),
                    final_encoder.embed_dim(),
                    ft.margin,
                    ft.scale,
                    &mut rng::derive(cfg.seed, &[rng::TAG_MODEL_INIT, 7]),
                )?;
                let (tuned, _head, _) =
                    fine_tune(&final_encoder, &head, &train_corpus, &labels, ft, cfg.seed)?;
                let ft_eer = udino::cluster::evaluate_encoder(
                    &tuned,
                    &train_corpus,
                    &eval_corpus,
                    &trials,
                )?;
                rows.push(PipelineRow {
                    stage: "finetune".into(),
                    iteration: rows.len(),
                    eer_pct: ft_eer,
                    n_pseudo_clusters: Some(labels.k),
                    nmi_vs_truth: None,
                });
                final_encoder = tuned;
            }
        }
    }

    save_encoder(
        &out_dir.join("final.ckpt"),
        &final_encoder,
        rows.len() as u64,
        cfg.seed,
    )?;
    let history_path = out_dir.join("history.jsonl");
    let mut history_text = String::new();
    for row in &rows {
        history_text.push_str(
            &serde_json::to_string(row)
                .map_err(|e| Error::Format(format!("history serialization: {e}")))?,
        );
        history_text.push('\n');
    }
    fs::write(&history_path, &history_text).map_err(|e| Error::io(&history_path, e))?;

    let summary = serde_json::json!({
        "stages": rows.len(),
        "final_eer_pct": rows.last().map(|r| r.eer_pct),
        "history": history_path.display().to_string(),
    });
    println!("{summary}");
    Ok(())
}
