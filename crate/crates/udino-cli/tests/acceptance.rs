//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line
//! (run with `--nocapture` to see them). Everything is seeded, so outcomes
//! are bit-stable across runs and thread counts.

use std::sync::OnceLock;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;

use udino::cluster::{
    aam_loss, evaluate_encoder, extract_embeddings, iterate, AamHead, IterateConfig,
    IterationRecord, PseudoLabelConfig, SupervisedConfig,
};
use udino::corpus::{
    gen_synthetic_corpus, AugmentPolicy, Corpus, CropConfig, CropSet, NoiseKind, SynthConfig,
};
use udino::dino::{
    dino_loss, student_param_refs, train, train_step, DinoConfig, DinoModel, HeadConfig,
    ProjectionHead,
};
use udino::nn::{
    grad_check, l2_normalize, l2_normalize_backward, linear_backward, linear_forward, stats_pool,
    stats_pool_backward, weight_norm_linear, weight_norm_linear_backward, Activation, ConvSpec,
    Encoder, EncoderConfig, SgdConfig, SgdState, Tensor,
};
use udino::rng;
use udino::nn::softmax;
use udino::scoring::{
    cosine_score, eer, min_dcf, plda_train, preprocess, probe_train, score_trials, weighted_f1,
    DcfParams, EmbeddingSet, PreprocessStats, ProbeConfig, ScoreSet, Scorer, Trial, TrialLabel,
};

// ---------------------------------------------------------------------------
// The pinned acceptance configuration (20 speakers x 20 utterances train
// corpus; 10 disjoint held-out speakers for trials).
// ---------------------------------------------------------------------------

const SEEDS: [u64; 3] = [1, 2, 3];
const TRIAL_SAMPLE_TAG: u64 = 9001;

fn synth_config(n_speakers: usize) -> SynthConfig {
    SynthConfig {
        n_speakers,
        utts_per_speaker: 20,
        frames_per_utt: 300,
        feature_dim: 16,
        speaker_scale: 1.0,
        channel_scale: 0.1,
        frame_noise_scale: 3.5,
    }
}

fn encoder_config() -> EncoderConfig {
    EncoderConfig {
        feature_dim: 16,
        conv: vec![
            ConvSpec {
                out_channels: 24,
                kernel: 3,
                dilation: 1,
            },
            ConvSpec {
                out_channels: 24,
                kernel: 3,
                dilation: 2,
            },
        ],
        activation: Activation::Relu,
        embed_dim: 24,
    }
}

fn augment_policy() -> AugmentPolicy {
    AugmentPolicy {
        noise_enabled: true,
        snr_db_range: [0.0, 15.0],
        noise_kind: NoiseKind::White,
        gain_enabled: true,
        gain_db_range: [-6.0, 6.0],
        time_mask_enabled: true,
        time_mask_max_frames: 10,
        noise_bank: Vec::new(),
    }
}

fn dino_config(steps: usize) -> DinoConfig {
    DinoConfig {
        tau_student: 0.15,
        tau_teacher: 0.06,
        ema_lambda: 0.996,
        center_momentum: 0.9,
        crop: CropConfig {
            n_short: 4,
            n_long: 2,
            len_short_frames: 80,
            len_long_frames: 160,
        },
        head: HeadConfig {
            hidden: 48,
            bottleneck: 24,
            k: 128,
        },
        steps,
        batch_size: 8,
        optimizer: SgdConfig {
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-5,
        },
        warmup_frac: 0.1,
        augment: augment_policy(),
    }
}

fn supervised_config() -> SupervisedConfig {
    SupervisedConfig {
        epochs: 8,
        optimizer: SgdConfig {
            lr: 0.02,
            momentum: 0.9,
            weight_decay: 1e-4,
        },
        margin: 0.3,
        scale: 30.0,
        segment_len: 240,
        warmup_frac: 0.1,
        augment: augment_policy(),
    }
}

fn make_corpora(seed: u64) -> (Corpus, Corpus) {
    let train = gen_synthetic_corpus(&synth_config(20), seed).expect("train corpus");
    let eval = gen_synthetic_corpus(&synth_config(10), seed.wrapping_add(1)).expect("eval corpus");
    (train, eval)
}

/// All within-speaker pairs as targets plus an equal-size seeded sample of
/// cross-speaker pairs (~1900 of each for the 10x20 eval corpus).
fn build_trials(eval: &Corpus, seed: u64) -> Vec<Trial> {
    let n = eval.len();
    let mut targets = Vec::new();
    let mut nontargets = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (&eval.utterances[i], &eval.utterances[j]);
            let same = a.speaker_id == b.speaker_id;
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
    let want = targets.len();
    nontargets.shuffle(&mut rng::derive(seed, &[TRIAL_SAMPLE_TAG]));
    nontargets.truncate(want);
    targets.extend(nontargets);
    targets
}

struct SeedRun {
    seed: u64,
    train_corpus: Corpus,
    eval_corpus: Corpus,
    trials: Vec<Trial>,
    model: DinoModel<f32>,
    random_eer: f64,
    dino_eer: f64,
}

static RUNS: OnceLock<Vec<SeedRun>> = OnceLock::new();

/// Train the three seeded models once; criteria 5 and 6 share them.
fn runs() -> &'static [SeedRun] {
    RUNS.get_or_init(|| {
        SEEDS
            .iter()
            .map(|&seed| {
                let (train_corpus, eval_corpus) = make_corpora(seed);
                let trials = build_trials(&eval_corpus, seed);
                let cfg = dino_config(2000);
                let mut model =
                    DinoModel::init(&encoder_config(), &cfg, seed).expect("model init");
                let random_eer =
                    evaluate_encoder(&model.teacher_enc, &train_corpus, &eval_corpus, &trials)
                        .expect("random-init eval");
                let unlabeled = train_corpus.without_speaker_ids();
                train(&mut model, &unlabeled, seed, |_, _| Ok(())).expect("dino training");
                let dino_eer =
                    evaluate_encoder(&model.teacher_enc, &train_corpus, &eval_corpus, &trials)
                        .expect("dino eval");
                SeedRun {
                    seed,
                    train_corpus,
                    eval_corpus,
                    trials,
                    model,
                    random_eer,
                    dino_eer,
                }
            })
            .collect()
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[values.len() / 2]
}

fn random_cropset(cfg: &DinoConfig, feat: usize, seed: u64) -> CropSet<f32> {
    let mut r = rng::derive(seed, &[rng::TAG_CROP, 42]);
    CropSet {
        longs: (0..cfg.crop.n_long)
            .map(|_| Tensor::randn(&[cfg.crop.len_long_frames, feat], 1.0, &mut r))
            .collect(),
        shorts: (0..cfg.crop.n_short)
            .map(|_| Tensor::randn(&[cfg.crop.len_short_frames, feat], 1.0, &mut r))
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness
// ---------------------------------------------------------------------------

#[test]
fn a01_gradient_correctness() {
    let t0 = Instant::now();
    let mut worst_op = 0.0f64;

    // stats_pool: scalar objective <w, pool(X)>.
    {
        let mut r = rng::derive(101, &[1]);
        let x = Tensor::<f64>::randn(&[7, 5], 1.0, &mut r);
        let w: Vec<f64> = (0..10).map(|i| 0.3 * (i as f64) - 1.2).collect();
        let pooled = stats_pool(&x);
        let gx = stats_pool_backward(&x, &pooled, &w);
        let f = |p: &[f64]| {
            let xt = Tensor::new(vec![7, 5], p.to_vec()).unwrap();
            stats_pool(&xt)
                .data()
                .iter()
                .zip(&w)
                .map(|(&a, &b)| a * b)
                .sum()
        };
        let err = grad_check(f, x.data(), gx.data(), 1e-4, 1000, 1).unwrap();
        worst_op = worst_op.max(err);
    }

    // l2_normalize: f(v) = <a, v/|v|>.
    {
        let v = vec![0.8f64, -0.4, 1.3, 0.2];
        let a = vec![0.5f64, 1.0, -0.7, 0.3];
        let (unit, norm) = l2_normalize(&v).unwrap();
        let gv = l2_normalize_backward(&unit, norm, &a);
        let f = |p: &[f64]| {
            let (u, _) = l2_normalize(p).unwrap();
            u.iter().zip(&a).map(|(&x, &y)| x * y).sum()
        };
        let err = grad_check(f, &v, &gv, 1e-4, 100, 2).unwrap();
        worst_op = worst_op.max(err);
    }

    // weight_norm_linear: weighted logit sum wrt rows and input.
    {
        let mut r = rng::derive(103, &[1]);
        let w = Tensor::<f64>::randn(&[6, 4], 1.0, &mut r);
        let v: Vec<f64> = (0..4).map(|_| rng::normal(&mut r)).collect();
        let (unit, _) = l2_normalize(&v).unwrap();
        let coeffs: Vec<f64> = (0..6).map(|i| (i as f64) * 0.4 - 1.0).collect();
        let (gv, gw) = weight_norm_linear_backward(&w, &unit, &coeffs);
        let mut params = unit.clone();
        params.extend_from_slice(w.data());
        let mut analytic = gv.clone();
        analytic.extend_from_slice(gw.data());
        let f = |p: &[f64]| {
            let (u, wf) = p.split_at(4);
            let wt = Tensor::new(vec![6, 4], wf.to_vec()).unwrap();
            weight_norm_linear(&wt, u)
                .unwrap()
                .iter()
                .zip(&coeffs)
                .map(|(&l, &c)| l * c)
                .sum()
        };
        let err = grad_check(f, &params, &analytic, 1e-5, 100, 3).unwrap();
        worst_op = worst_op.max(err);
    }

    // linear layer.
    {
        let mut r = rng::derive(104, &[1]);
        let w = Tensor::<f64>::randn(&[5, 3], 1.0, &mut r);
        let b = Tensor::<f64>::randn(&[5], 1.0, &mut r);
        let x: Vec<f64> = (0..3).map(|_| rng::normal(&mut r)).collect();
        let coeffs: Vec<f64> = (0..5).map(|i| 0.25 * i as f64 - 0.6).collect();
        let (gx, gw, gb) = linear_backward(&w, &x, &coeffs);
        let mut params = x.clone();
        params.extend_from_slice(w.data());
        params.extend_from_slice(b.data());
        let mut analytic = gx;
        analytic.extend_from_slice(gw.data());
        analytic.extend_from_slice(&gb);
        let f = |p: &[f64]| {
            let (xp, rest) = p.split_at(3);
            let (wp, bp) = rest.split_at(15);
            let wt = Tensor::new(vec![5, 3], wp.to_vec()).unwrap();
            let bt = Tensor::new(vec![5], bp.to_vec()).unwrap();
            linear_forward(&wt, &bt, xp)
                .iter()
                .zip(&coeffs)
                .map(|(&y, &c)| y * c)
                .sum()
        };
        let err = grad_check(f, &params, &analytic, 1e-4, 200, 4).unwrap();
        worst_op = worst_op.max(err);
    }

    // Full encoder (conv stack + relu + pooling + affine), both activations.
    for activation in [Activation::Relu, Activation::Gelu] {
        let cfg = EncoderConfig {
            feature_dim: 4,
            conv: vec![
                ConvSpec {
                    out_channels: 5,
                    kernel: 3,
                    dilation: 1,
                },
                ConvSpec {
                    out_channels: 4,
                    kernel: 3,
                    dilation: 2,
                },
            ],
            activation,
            embed_dim: 6,
        };
        let mut r = rng::derive(105, &[activation as u64]);
        let enc32 = Encoder::<f32>::init(&cfg, &mut r).unwrap();
        let enc: Encoder<f64> = enc32.cast();
        let frames = Tensor::<f64>::randn(&[12, 4], 1.0, &mut r);
        let coeffs: Vec<f64> = (0..6).map(|i| 0.3 * i as f64 - 0.8).collect();
        let (emb, cache) = enc.forward(&frames).unwrap();
        let _ = emb;
        let mut grads = enc.zeros_like();
        enc.backward(&cache, &coeffs, &mut grads);
        let mut params = Vec::new();
        for (_, p) in enc.params() {
            params.extend_from_slice(p.data());
        }
        let mut analytic = Vec::new();
        for (_, g) in grads.params() {
            analytic.extend_from_slice(g.data());
        }
        let f = |p: &[f64]| {
            let mut e = enc.clone();
            let mut off = 0;
            for (_, t) in e.params_mut() {
                let n = t.numel();
                t.data_mut().copy_from_slice(&p[off..off + n]);
                off += n;
            }
            let (emb, _) = e.forward(&frames).unwrap();
            emb.iter().zip(&coeffs).map(|(&a, &b)| a * b).sum()
        };
        let err = grad_check(f, &params, &analytic, 1e-4, 250, 5).unwrap();
        worst_op = worst_op.max(err);
    }

    // Projection head.
    {
        let hcfg = HeadConfig {
            hidden: 8,
            bottleneck: 6,
            k: 7,
        };
        let mut r = rng::derive(106, &[1]);
        let head = ProjectionHead::<f64>::init(5, &hcfg, &mut r);
        let emb: Vec<f64> = (0..5).map(|_| rng::normal(&mut r)).collect();
        let coeffs: Vec<f64> = (0..7).map(|i| 0.5 - 0.2 * i as f64).collect();
        let (_, cache) = head.forward(&emb).unwrap();
        let mut grads = head.zeros_like();
        head.backward(&cache, &coeffs, &mut grads);
        let mut params = Vec::new();
        for (_, p) in head.params() {
            params.extend_from_slice(p.data());
        }
        let mut analytic = Vec::new();
        for (_, g) in grads.params() {
            analytic.extend_from_slice(g.data());
        }
        let f = |p: &[f64]| {
            let mut h = head.clone();
            let mut off = 0;
            for (_, t) in h.params_mut() {
                let n = t.numel();
                t.data_mut().copy_from_slice(&p[off..off + n]);
                off += n;
            }
            let (logits, _) = h.forward(&emb).unwrap();
            logits.iter().zip(&coeffs).map(|(&a, &b)| a * b).sum()
        };
        let err = grad_check(f, &params, &analytic, 1e-4, 250, 6).unwrap();
        worst_op = worst_op.max(err);
    }

    assert!(worst_op <= 1e-4, "per-op FD error {worst_op}");

    // AAM loss wrt embedding and class weights.
    let aam_err;
    {
        let mut r = rng::derive(107, &[1]);
        let head = AamHead::<f64>::init(5, 6, 0.3, 8.0, &mut r).unwrap();
        let e: Vec<f64> = (0..6).map(|_| rng::normal(&mut r)).collect();
        let out = aam_loss(&e, &head, 2).unwrap();
        let mut params = e.clone();
        params.extend_from_slice(head.weight.data());
        let mut analytic = out.grad_embedding.clone();
        analytic.extend_from_slice(out.grad_weight.data());
        let f = |p: &[f64]| {
            let (ep, wp) = p.split_at(6);
            let mut h = head.clone();
            h.weight.data_mut().copy_from_slice(wp);
            aam_loss(ep, &h, 2).unwrap().value
        };
        aam_err = grad_check(f, &params, &analytic, 1e-5, 100, 7).unwrap();
        assert!(aam_err <= 1e-4, "aam FD error {aam_err}");
    }

    // Full train-step loss (Eq.-1 composite) wrt every student parameter.
    let step_err = {
        let mut cfg = dino_config(0);
        cfg.augment = AugmentPolicy::disabled();
        cfg.crop = CropConfig {
            n_short: 4,
            n_long: 2,
            len_short_frames: 6,
            len_long_frames: 12,
        };
        cfg.head = HeadConfig {
            hidden: 8,
            bottleneck: 6,
            k: 10,
        };
        let enc_cfg = EncoderConfig {
            feature_dim: 3,
            conv: vec![ConvSpec {
                out_channels: 4,
                kernel: 3,
                dilation: 1,
            }],
            activation: Activation::Gelu,
            embed_dim: 5,
        };
        let model = DinoModel::init(&enc_cfg, &cfg, 9).unwrap();
        let model64: DinoModel<f64> = model.cast();
        let batch: Vec<CropSet<f64>> = vec![
            random_cropset(&cfg, 3, 21).cast(),
            random_cropset(&cfg, 3, 22).cast(),
        ];
        let result = udino::dino::batch_loss_for_check(&model64, &batch).unwrap();
        let mut analytic = Vec::new();
        for (_, g) in result.1.params() {
            analytic.extend(g.data().iter().copied());
        }
        for (_, g) in result.2.params() {
            analytic.extend(g.data().iter().copied());
        }
        let mut flat = Vec::new();
        for (_, p) in model64.student_enc.params() {
            flat.extend_from_slice(p.data());
        }
        for (_, p) in model64.student_head.params() {
            flat.extend_from_slice(p.data());
        }
        let loss_fn = |params: &[f64]| -> f64 {
            let mut m = model64.clone();
            let mut offset = 0usize;
            for (_, p) in m.student_enc.params_mut() {
                let n = p.numel();
                p.data_mut().copy_from_slice(&params[offset..offset + n]);
                offset += n;
            }
            for (_, p) in m.student_head.params_mut() {
                let n = p.numel();
                p.data_mut().copy_from_slice(&params[offset..offset + n]);
                offset += n;
            }
            udino::dino::batch_loss_for_check(&m, &batch).unwrap().0
        };
        grad_check(loss_fn, &flat, &analytic, 1e-4, 250, 8).unwrap()
    };
    assert!(step_err <= 1e-3, "train-step FD error {step_err}");

    let elapsed = t0.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "gradient checks took {elapsed:.1}s");
    println!(
        "ACCEPTANCE 01 gradient_correctness: PASS (per-op max {worst_op:.2e}, aam {aam_err:.2e}, train-step {step_err:.2e}, {elapsed:.1}s)"
    );
}

// ---------------------------------------------------------------------------
// 2. Loss structure (term counting)
// ---------------------------------------------------------------------------

#[test]
fn a02_loss_term_count() {
    let k = 8;
    let uniform = vec![1.0f64 / k as f64; k];
    let log_uniform: Vec<f64> = uniform.iter().map(|p| p.ln()).collect();
    let teacher = vec![uniform.clone(), uniform.clone()];
    let six = dino_loss(&teacher, &vec![log_uniform.clone(); 6]).unwrap();
    let five = dino_loss(&teacher, &vec![log_uniform; 5]).unwrap();
    assert_eq!(six.n_terms, 10, "2 long + 4 short must give 10 terms");
    assert_eq!(five.n_terms, 8, "removing one short crop must give 8 terms");
    println!("ACCEPTANCE 02 loss_term_count: PASS (10 terms at 2+4, 8 at 2+3)");
}

// ---------------------------------------------------------------------------
// 3. EMA / stop-gradient
// ---------------------------------------------------------------------------

#[test]
fn a03_ema_stop_gradient() {
    let enc_cfg = EncoderConfig {
        feature_dim: 4,
        conv: vec![ConvSpec {
            out_channels: 5,
            kernel: 3,
            dilation: 1,
        }],
        activation: Activation::Relu,
        embed_dim: 6,
    };
    let mut cfg = dino_config(0);
    cfg.augment = AugmentPolicy::disabled();
    cfg.crop = CropConfig {
        n_short: 4,
        n_long: 2,
        len_short_frames: 8,
        len_long_frames: 16,
    };
    cfg.head = HeadConfig {
        hidden: 8,
        bottleneck: 6,
        k: 12,
    };
    let batch = vec![random_cropset(&cfg, 4, 31), random_cropset(&cfg, 4, 32)];

    // lambda = 1: teacher parameters bit-identical after a step.
    cfg.ema_lambda = 1.0;
    let mut model = DinoModel::init(&enc_cfg, &cfg, 5).unwrap();
    let teacher_before: Vec<Tensor<f32>> = model
        .teacher_enc
        .params()
        .into_iter()
        .map(|(_, t)| t.clone())
        .chain(model.teacher_head.params().into_iter().map(|(_, t)| t.clone()))
        .collect();
    let mut state = SgdState::new(&student_param_refs(&model));
    train_step(&mut model, &batch, &mut state, 0.05).unwrap();
    let teacher_after: Vec<Tensor<f32>> = model
        .teacher_enc
        .params()
        .into_iter()
        .map(|(_, t)| t.clone())
        .chain(model.teacher_head.params().into_iter().map(|(_, t)| t.clone()))
        .collect();
    assert_eq!(teacher_before, teacher_after, "teacher must be untouched at lambda=1");

    // lambda = 0: teacher equals the post-step student exactly.
    cfg.ema_lambda = 0.0;
    let mut model = DinoModel::init(&enc_cfg, &cfg, 6).unwrap();
    let mut state = SgdState::new(&student_param_refs(&model));
    train_step(&mut model, &batch, &mut state, 0.05).unwrap();
    for ((_, t), (_, s)) in model
        .teacher_enc
        .params()
        .into_iter()
        .zip(model.student_enc.params())
    {
        assert_eq!(t, s, "teacher must equal student at lambda=0");
    }
    for ((_, t), (_, s)) in model
        .teacher_head
        .params()
        .into_iter()
        .zip(model.student_head.params())
    {
        assert_eq!(t, s);
    }
    println!("ACCEPTANCE 03 ema_stop_gradient: PASS (lambda=1 bit-identical, lambda=0 copies student)");
}

// ---------------------------------------------------------------------------
// 4. Anti-collapse A/B
// ---------------------------------------------------------------------------

#[test]
fn a04_anti_collapse_ab() {
    let t0 = Instant::now();
    // The mechanism pair is run at a softer student temperature than the
    // 2000-step training recipe: at 500 steps the ablation's drift toward
    // uniformity needs tau_s large enough for its near-uniform equilibrium
    // to clear the band edge; the two arms differ only in centering and
    // teacher temperature.
    let tau_s = 0.45;
    let k = 128usize;
    let ln_k = (k as f64).ln();
    let band = (0.05 * ln_k, 0.95 * ln_k);
    for &seed in &SEEDS {
        let (train_corpus, _) = make_corpora(seed);
        let unlabeled = train_corpus.without_speaker_ids();
        let mut entropies = Vec::new();
        for (ablated, m_c, tau_t) in [(false, 0.9, 0.06), (true, 1.0, tau_s)] {
            let mut cfg = dino_config(500);
            cfg.tau_student = tau_s;
            cfg.tau_teacher = tau_t;
            cfg.center_momentum = m_c;
            let mut model = DinoModel::init(&encoder_config(), &cfg, seed).unwrap();
            let log = train(&mut model, &unlabeled, seed, |_, _| Ok(())).unwrap();
            let tail: f64 =
                log.iter().rev().take(50).map(|m| m.teacher_entropy).sum::<f64>() / 50.0;
            entropies.push((ablated, tail));
        }
        let (_, normal_h) = entropies[0];
        let (_, ablated_h) = entropies[1];
        assert!(
            normal_h > band.0 && normal_h < band.1,
            "seed {seed}: centering+sharpening entropy {normal_h:.3} outside ({:.3}, {:.3})",
            band.0,
            band.1
        );
        assert!(
            ablated_h <= band.0 || ablated_h >= band.1,
            "seed {seed}: ablated entropy {ablated_h:.3} failed to exit ({:.3}, {:.3})",
            band.0,
            band.1
        );
        println!(
            "ACCEPTANCE 04 anti_collapse seed {seed}: PASS (normal {normal_h:.3} in band, ablated {ablated_h:.3} out)"
        );
    }
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(elapsed < 300.0, "anti-collapse A/B took {elapsed:.1}s");
    println!("ACCEPTANCE 04 anti_collapse_ab: PASS ({elapsed:.1}s)");
}

// ---------------------------------------------------------------------------
// 5. End-to-end SSL gain
// ---------------------------------------------------------------------------

#[test]
fn a05a_ssl_gain_trained_arm() {
    let mut dino: Vec<f64> = runs().iter().map(|r| r.dino_eer).collect();
    let med = median(&mut dino);
    println!(
        "ACCEPTANCE 05a ssl_gain trained arm: dino EER median {med:.2}% (per seed: {:?})",
        runs().iter().map(|r| (r.seed, r.dino_eer)).collect::<Vec<_>>()
    );
    assert!(
        med <= 15.0,
        "trained-encoder EER median {med:.2}% exceeds 15%"
    );
    println!("ACCEPTANCE 05a ssl_gain_trained_arm: PASS");
}

#[test]
fn a05b_ssl_gain_random_baseline() {
    let mut random: Vec<f64> = runs().iter().map(|r| r.random_eer).collect();
    let med = median(&mut random);
    println!(
        "ACCEPTANCE 05b ssl_gain random baseline: random-init EER median {med:.2}% (per seed: {:?})",
        runs()
            .iter()
            .map(|r| (r.seed, r.random_eer))
            .collect::<Vec<_>>()
    );
    // Known-red criterion: on this synthetic family a randomly initialized
    // conv encoder with mean+std pooling already yields informative pooled
    // features (utterance means are linearly separable by construction), so
    // its EER sits far below 35% at every operating point that the trained
    // model can also satisfy. Crippling the baseline (pathological init or
    // an eval protocol chosen against it) would game the comparison, so the
    // bound is asserted as specified and fails honestly.
    assert!(
        med >= 35.0,
        "random-init EER median {med:.2}% is below the required 35% floor; \
         see the trained-arm test (a05a) for the passing half of this criterion"
    );
    println!("ACCEPTANCE 05b ssl_gain_random_baseline: PASS");
}

// ---------------------------------------------------------------------------
// 6. Iterative-clustering trend
// ---------------------------------------------------------------------------

#[test]
fn a06_iterative_clustering_trend() {
    let t0 = Instant::now();
    let iterate_cfg = IterateConfig {
        pseudo: PseudoLabelConfig {
            kmeans_k: 100,
            kmeans_iters: 50,
            ahc_clusters: 22,
        },
        supervised: supervised_config(),
        n_iterations: 2,
        warm_start: true,
        early_stop_eer_delta: None,
    };
    let mut histories: Vec<Vec<IterationRecord>> = Vec::new();
    for run in runs() {
        let (_, history) = iterate(
            &run.train_corpus,
            &run.model.teacher_enc,
            &run.eval_corpus,
            &run.trials,
            &iterate_cfg,
            run.seed,
        )
        .unwrap();
        assert_eq!(history.len(), 2);
        println!(
            "ACCEPTANCE 06 seed {}: dino {:.2}% -> iter1 {:.2}% (nmi {:.3}) -> iter2 {:.2}% (nmi {:.3})",
            run.seed,
            run.dino_eer,
            history[0].eer_pct,
            history[0].nmi_vs_truth.unwrap_or(f64::NAN),
            history[1].eer_pct,
            history[1].nmi_vs_truth.unwrap_or(f64::NAN),
        );
        histories.push(history);
    }
    // Sanity ordering: supervised training on the hidden TRUE labels from
    // the same starting encoder must do at least as well as the
    // self-labeled first iteration.
    {
        let first = &runs()[0];
        let mut speakers: Vec<String> = first
            .train_corpus
            .utterances
            .iter()
            .map(|u| u.speaker_id.clone().expect("synthetic truth"))
            .collect();
        let mut uniq = speakers.clone();
        uniq.sort();
        uniq.dedup();
        let clusters: Vec<usize> = speakers
            .drain(..)
            .map(|l| uniq.iter().position(|u| u == &l).unwrap())
            .collect();
        let truth = udino::cluster::Assignment::new(first.train_corpus.ids(), clusters).unwrap();
        let (oracle_enc, _, _) = udino::cluster::train_supervised(
            &first.model.teacher_enc,
            &first.train_corpus,
            &truth,
            &supervised_config(),
            rng::mix(first.seed, &[1]),
        )
        .unwrap();
        let oracle_eer = evaluate_encoder(
            &oracle_enc,
            &first.train_corpus,
            &first.eval_corpus,
            &first.trials,
        )
        .unwrap();
        let self_eer = histories[0][0].eer_pct;
        assert!(
            oracle_eer <= self_eer,
            "truth-labeled training ({oracle_eer:.2}%) must not trail self-labeled ({self_eer:.2}%)"
        );
        println!(
            "ACCEPTANCE 06 oracle-label ordering: PASS (truth {oracle_eer:.2}% <= self {self_eer:.2}%)"
        );
    }

    let mut dino: Vec<f64> = runs().iter().map(|r| r.dino_eer).collect();
    let mut iter1: Vec<f64> = histories.iter().map(|h| h[0].eer_pct).collect();
    let mut iter2: Vec<f64> = histories.iter().map(|h| h[1].eer_pct).collect();
    let mut nmi2: Vec<f64> = histories
        .iter()
        .map(|h| h[1].nmi_vs_truth.expect("synthetic truth available"))
        .collect();
    let (dino_med, iter1_med, iter2_med, nmi_med) = (
        median(&mut dino),
        median(&mut iter1),
        median(&mut iter2),
        median(&mut nmi2),
    );
    assert!(
        iter1_med < dino_med,
        "median EER(iter1) {iter1_med:.2}% must fall below the DINO init {dino_med:.2}%"
    );
    assert!(
        iter2_med <= iter1_med + 0.5,
        "median EER(iter2) {iter2_med:.2}% must not regress past iter1 {iter1_med:.2}% + 0.5"
    );
    assert!(
        nmi_med >= 0.8,
        "median pseudo-label NMI {nmi_med:.3} at iteration 2 must reach 0.8"
    );
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(elapsed < 1200.0, "iterative clustering took {elapsed:.1}s");
    println!(
        "ACCEPTANCE 06 iterative_clustering_trend: PASS (medians: dino {dino_med:.2}% -> iter1 {iter1_med:.2}% -> iter2 {iter2_med:.2}%, nmi {nmi_med:.3}, {elapsed:.0}s)"
    );
}

// ---------------------------------------------------------------------------
// 7. Metric oracles (EER / minDCF vs brute force)
// ---------------------------------------------------------------------------

mod oracle {
    use udino::scoring::ScoreSet;

    /// Operating points by naive per-threshold counting: for each distinct
    /// score t (ascending) plus a reject-all sentinel, count
    /// far = P(nontarget >= t), frr = P(target < t) with full passes.
    pub fn operating_points(scores: &ScoreSet) -> Vec<(f64, f64)> {
        let mut distinct: Vec<f64> = scores.scores.clone();
        distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
        distinct.dedup();
        let n_tg = scores.labels.iter().filter(|&&l| l).count() as f64;
        let n_nt = scores.labels.len() as f64 - n_tg;
        let mut ops = Vec::new();
        for &t in &distinct {
            let mut nt_ge = 0usize;
            let mut tg_lt = 0usize;
            for (&s, &l) in scores.scores.iter().zip(&scores.labels) {
                if l {
                    if s < t {
                        tg_lt += 1;
                    }
                } else if s >= t {
                    nt_ge += 1;
                }
            }
            ops.push((nt_ge as f64 / n_nt, tg_lt as f64 / n_tg));
        }
        ops.push((0.0, 1.0));
        ops
    }

    /// Crossing-point EER with the same interpolation convention as the
    /// implementation, computed from brute-force operating points.
    pub fn eer_brute(scores: &ScoreSet) -> f64 {
        let ops = operating_points(scores);
        let mut prev = ops[0];
        for &op in ops.iter() {
            let d = op.0 - op.1;
            if d <= 0.0 {
                if d == 0.0 {
                    return op.0 * 100.0;
                }
                let d_prev = prev.0 - prev.1;
                if d_prev <= 0.0 {
                    return op.0.max(op.1).min(prev.0.max(prev.1)) * 100.0;
                }
                let lambda = d_prev / (d_prev - d);
                return (prev.0 + lambda * (op.0 - prev.0)) * 100.0;
            }
            prev = op;
        }
        let last = ops[ops.len() - 1];
        last.0.max(last.1) * 100.0
    }

    pub fn min_dcf_brute(scores: &ScoreSet, p_target: f64, c_miss: f64, c_fa: f64) -> f64 {
        let norm = (p_target * c_miss).min((1.0 - p_target) * c_fa);
        operating_points(scores)
            .into_iter()
            .map(|(far, frr)| (p_target * c_miss * frr + (1.0 - p_target) * c_fa * far) / norm)
            .fold(f64::INFINITY, f64::min)
    }
}

#[test]
fn a07_metric_oracles() {
    let mut r = rng::derive(7001, &[1]);
    let params = DcfParams::default();
    let mut checked = 0usize;
    while checked < 1000 {
        let n = r.gen_range(2..60);
        let quantize: bool = r.gen();
        let mut scores = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let mut s = rng::normal(&mut r);
            if quantize {
                s = (s * 10.0).round() / 10.0; // force ties and duplicates
            }
            scores.push(s);
            labels.push(r.gen::<bool>());
        }
        if !labels.contains(&true) || !labels.contains(&false) {
            continue;
        }
        let set = ScoreSet::new(scores.clone(), labels.clone()).unwrap();
        let (e_impl, e_oracle) = (eer(&set).unwrap(), oracle::eer_brute(&set));
        assert_eq!(e_impl, e_oracle, "EER mismatch on set {checked}");
        let (d_impl, d_oracle) = (
            min_dcf(&set, &params).unwrap(),
            oracle::min_dcf_brute(&set, params.p_target, params.c_miss, params.c_fa),
        );
        assert_eq!(d_impl, d_oracle, "minDCF mismatch on set {checked}");

        // Invariance under strictly increasing transforms, exactly.
        let exp = ScoreSet::new(scores.iter().map(|v| v.exp()).collect(), labels.clone()).unwrap();
        let affine =
            ScoreSet::new(scores.iter().map(|v| 3.0 * v + 1.25).collect(), labels).unwrap();
        assert_eq!(e_impl, eer(&exp).unwrap());
        assert_eq!(e_impl, eer(&affine).unwrap());
        assert_eq!(d_impl, min_dcf(&exp, &params).unwrap());
        assert_eq!(d_impl, min_dcf(&affine, &params).unwrap());
        checked += 1;
    }
    println!("ACCEPTANCE 07 metric_oracles: PASS (1000 sets, exact match + transform invariance)");
}

// ---------------------------------------------------------------------------
// 8. PLDA
// ---------------------------------------------------------------------------

fn sample_two_cov(
    n_spk: usize,
    per_spk: usize,
    d: usize,
    b_diag: &[f64],
    w_diag: &[f64],
    seed: u64,
) -> EmbeddingSet {
    let mut r = rng::derive(seed, &[8001]);
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for s in 0..n_spk {
        let y: Vec<f64> = (0..d)
            .map(|j| rng::normal(&mut r) * b_diag[j].sqrt())
            .collect();
        for u in 0..per_spk {
            ids.push(format!("s{s}_u{u}"));
            labels.push(format!("spk{s}"));
            for j in 0..d {
                data.push((y[j] + rng::normal(&mut r) * w_diag[j].sqrt()) as f32);
            }
        }
    }
    EmbeddingSet::new(ids, d, data)
        .unwrap()
        .with_labels(labels)
        .unwrap()
}

#[test]
fn a08_plda() {
    // EM log-likelihood non-decreasing over 20 iterations on 5 datasets.
    for seed in 0..5u64 {
        let d = 6;
        let embs = sample_two_cov(25, 6, d, &vec![1.2; d], &vec![0.6; d], 100 + seed);
        let (_, ll) = plda_train(&embs, 20, 1e-6).unwrap();
        assert_eq!(ll.len(), 21);
        for w in ll.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-8,
                "seed {seed}: log-likelihood decreased {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    // Scoring symmetry, exactly.
    let d = 5;
    let embs = sample_two_cov(12, 5, d, &vec![1.0; d], &vec![0.5; d], 200);
    let (model, _) = plda_train(&embs, 10, 1e-6).unwrap();
    let scorer = model.scorer().unwrap();
    let mut r = rng::derive(201, &[1]);
    for _ in 0..100 {
        let a: Vec<f32> = (0..d).map(|_| rng::normal_f32(&mut r)).collect();
        let b: Vec<f32> = (0..d).map(|_| rng::normal_f32(&mut r)).collect();
        assert_eq!(scorer.score(&a, &b), scorer.score(&b, &a));
    }

    // Back-end gain on a known two-covariance model with anisotropic
    // within-speaker noise: PLDA whitens it, cosine cannot.
    let d = 8;
    let b_diag = vec![1.0; d];
    let w_diag: Vec<f64> = (0..d).map(|i| if i < 3 { 4.0 } else { 0.2 }).collect();
    let train_set = sample_two_cov(60, 8, d, &b_diag, &w_diag, 300);
    let test_set = sample_two_cov(20, 6, d, &b_diag, &w_diag, 301);
    let stats = PreprocessStats::fit(&train_set).unwrap();
    let train_p = preprocess(&train_set, &stats).unwrap();
    let test_p = preprocess(&test_set, &stats).unwrap();
    let (model, _) = plda_train(&train_p, 15, 1e-6).unwrap();
    let mut trials = Vec::new();
    let labels = test_p.labels().unwrap().to_vec();
    let ids = test_p.ids().to_vec();
    let mut r = rng::derive(302, &[1]);
    for i in 0..ids.len() {
        for j in (i + 1)..ids.len() {
            let same = labels[i] == labels[j];
            if same || r.gen::<f32>() < 0.12 {
                trials.push(Trial {
                    enroll_id: ids[i].clone(),
                    test_id: ids[j].clone(),
                    label: if same {
                        TrialLabel::Target
                    } else {
                        TrialLabel::Nontarget
                    },
                });
            }
        }
    }
    let cos_eer = eer(&score_trials(&test_p, &trials, &Scorer::Cosine).unwrap()).unwrap();
    let plda_eer = eer(&score_trials(&test_p, &trials, &Scorer::Plda(&model)).unwrap()).unwrap();
    assert!(
        plda_eer <= cos_eer,
        "PLDA EER {plda_eer:.2}% must not exceed cosine EER {cos_eer:.2}%"
    );
    println!(
        "ACCEPTANCE 08 plda: PASS (monotone EM, exact symmetry, back-end gain {cos_eer:.2}% -> {plda_eer:.2}%)"
    );
}

// ---------------------------------------------------------------------------
// 9. AAM reduction and margin monotonicity
// ---------------------------------------------------------------------------

#[test]
fn a09_aam_reduction_and_monotonicity() {
    let mut r = rng::derive(901, &[1]);
    let head0 = AamHead::<f64>::init(6, 5, 0.0, 1.0, &mut r).unwrap();
    for label in 0..6 {
        let e: Vec<f64> = (0..5).map(|_| rng::normal(&mut r)).collect();
        let out = aam_loss(&e, &head0, label).unwrap();
        // Plain softmax cross-entropy over raw cosines.
        let enorm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        let cosines: Vec<f64> = (0..6)
            .map(|j| {
                let row = head0.weight.row(j);
                let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                row.iter().zip(&e).map(|(&w, &x)| w * x).sum::<f64>() / (n * enorm)
            })
            .collect();
        let p = softmax(&cosines);
        let expected = -p[label].ln();
        assert!(
            (out.value - expected).abs() <= 1e-6,
            "m=0,s=1 reduction off by {:.2e}",
            (out.value - expected).abs()
        );
    }

    // Strictly increasing in the margin on fixed non-degenerate inputs.
    let e: Vec<f64> = (0..5).map(|_| rng::normal(&mut r)).collect();
    let mut prev = f64::NEG_INFINITY;
    for step in 0..10 {
        let m = 0.05 + 0.13 * step as f64;
        if m >= std::f64::consts::FRAC_PI_2 {
            break;
        }
        let head = AamHead::<f64> {
            margin: m,
            ..AamHead::<f64>::init(6, 5, 0.0, 10.0, &mut rng::derive(902, &[1])).unwrap()
        };
        let out = aam_loss(&e, &head, 3).unwrap();
        assert!(
            out.value > prev,
            "loss must strictly increase with margin (m={m})"
        );
        prev = out.value;
    }
    println!("ACCEPTANCE 09 aam_reduction_and_monotonicity: PASS");
}

// ---------------------------------------------------------------------------
// 10. Probe / weighted F1
// ---------------------------------------------------------------------------

#[test]
fn a10_probe_weighted_f1() {
    let s = |v: &[&str]| -> Vec<String> { v.iter().map(|x| x.to_string()).collect() };
    let f1 = weighted_f1(&s(&["A", "B", "B", "B"]), &s(&["A", "A", "B", "B"])).unwrap();
    let expected = (0.5 * (2.0 / 3.0) + 0.5 * 0.8) * 100.0;
    assert!((f1 - expected).abs() < 1e-9, "worked example 1: {f1}");
    let f1 = weighted_f1(&s(&["A", "A", "A", "A"]), &s(&["A", "A", "B", "B"])).unwrap();
    assert!((f1 - 100.0 / 3.0).abs() < 1e-9, "worked example 2: {f1}");

    // Probe on 4 linearly separable clusters reaches weighted F1 >= 90.
    let mut r = rng::derive(1001, &[1]);
    let centers = [
        [3.0f32, 0.0, 0.0],
        [-3.0, 0.0, 0.0],
        [0.0, 3.0, 0.5],
        [0.0, -3.0, -0.5],
    ];
    let make = |tag: &str, n_per: usize, r: &mut rng::ChaCha8Rng| {
        let mut ids = Vec::new();
        let mut labels = Vec::new();
        let mut data = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for i in 0..n_per {
                ids.push(format!("{tag}_{c}_{i}"));
                labels.push(format!("class{c}"));
                for &v in center {
                    data.push(v + 0.3 * rng::normal_f32(r));
                }
            }
        }
        EmbeddingSet::new(ids, 3, data)
            .unwrap()
            .with_labels(labels)
            .unwrap()
    };
    let train_set = make("tr", 30, &mut r);
    let test_set = make("te", 15, &mut r);
    let model = probe_train(&train_set, &ProbeConfig::default()).unwrap();
    let preds = model.predict(&test_set).unwrap();
    let truth = test_set.labels().unwrap().to_vec();
    let f1 = weighted_f1(&preds, &truth).unwrap();
    assert!(f1 >= 90.0, "4-class probe weighted F1 {f1:.2} < 90");
    println!("ACCEPTANCE 10 probe_weighted_f1: PASS (examples exact, 4-class probe {f1:.2})");
}

// ---------------------------------------------------------------------------
// 11. Reproducibility through the CLI
// ---------------------------------------------------------------------------

#[test]
fn a11_cli_reproducibility() {
    let base = std::env::temp_dir().join(format!("udino-accept11-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&base);
    std::fs::create_dir_all(&base).unwrap();
    let cfg = serde_json::json!({
        "seed": 20,
        "data": {
            "synth": {
                "n_speakers": 5, "utts_per_speaker": 4, "frames_per_utt": 60,
                "feature_dim": 6, "speaker_scale": 1.0, "channel_scale": 0.1,
                "frame_noise_scale": 0.5
            },
            "held_out_speakers": 2
        },
        "encoder": {
            "feature_dim": 6,
            "conv": [{"out_channels": 8, "kernel": 3, "dilation": 1}],
            "embed_dim": 8
        },
        "dino": {
            "steps": 12, "batch_size": 3,
            "optimizer": {"lr": 0.05, "momentum": 0.9, "weight_decay": 0.00001},
            "tau_student": 0.15, "tau_teacher": 0.06,
            "crop": {"n_short": 4, "n_long": 2, "len_short_frames": 16, "len_long_frames": 32},
            "head": {"hidden": 12, "bottleneck": 8, "k": 16}
        },
        "supervised": {
            "train": {
                "epochs": 1,
                "optimizer": {"lr": 0.02, "momentum": 0.9, "weight_decay": 0.0001},
                "segment_len": 24
            },
            "finetune": null
        },
        "cluster": {
            "pseudo": {"kmeans_k": 8, "kmeans_iters": 10, "ahc_clusters": 5},
            "n_iterations": 1,
            "early_stop_eer_delta": null
        }
    });
    let cfg_path = base.join("config.json");
    std::fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();

    let run_pipeline = |out: &str| {
        let code = udino_cli::run_from_args([
            "udino",
            "pipeline",
            "--config",
            cfg_path.to_str().unwrap(),
            "--out-dir",
            base.join(out).to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "pipeline exited {code}");
    };
    run_pipeline("r1");
    run_pipeline("r2");

    let mut compared = 0;
    for name in [
        "history.jsonl",
        "dino.ckpt",
        "final.ckpt",
        "trials.txt",
        "dino.metrics.jsonl",
        "config.resolved.json",
    ] {
        let a = std::fs::read(base.join("r1").join(name)).unwrap();
        let b = std::fs::read(base.join("r2").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical pipeline runs");
        compared += 1;
    }

    // Embedding extraction and metric JSON are byte-stable too.
    let corpus_dir = base.join("corpus");
    let code = udino_cli::run_from_args([
        "udino",
        "synth-data",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out-dir",
        corpus_dir.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    for tag in ["e1", "e2"] {
        let code = udino_cli::run_from_args([
            "udino",
            "extract",
            "--ckpt",
            base.join("r1").join("dino.ckpt").to_str().unwrap(),
            "--corpus",
            corpus_dir.to_str().unwrap(),
            "--out",
            base.join(format!("{tag}.emb")).to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
    }
    let a = std::fs::read(base.join("e1.emb")).unwrap();
    let b = std::fs::read(base.join("e2.emb")).unwrap();
    assert_eq!(a, b, "embedding files differ between identical runs");
    compared += 1;

    let _ = std::fs::remove_dir_all(&base);
    println!("ACCEPTANCE 11 cli_reproducibility: PASS ({compared} artifacts byte-identical)");
}

// ---------------------------------------------------------------------------
// Map-reduce determinism guard: parallel and sequential execution agree.
// ---------------------------------------------------------------------------

#[test]
fn a12_parallel_matches_sequential_reduction() {
    // Not a numbered criterion; guards the execution model the suite relies
    // on: ordered maps + fixed-order reductions are bit-identical however
    // many workers run.
    let run = runs();
    let first = &run[0];
    let embs_a = extract_embeddings(&first.model.teacher_enc, &first.eval_corpus).unwrap();
    let embs_b = extract_embeddings(&first.model.teacher_enc, &first.eval_corpus).unwrap();
    assert_eq!(embs_a, embs_b);
    let s_a = score_trials(&embs_a, &first.trials, &Scorer::Cosine).unwrap();
    let s_b = score_trials(&embs_b, &first.trials, &Scorer::Cosine).unwrap();
    assert_eq!(s_a, s_b);
    // Cosine agrees with a plain sequential evaluation of the same pairs.
    for (i, t) in first.trials.iter().take(50).enumerate() {
        let a = embs_a.vector_by_id(&t.enroll_id).unwrap();
        let b = embs_a.vector_by_id(&t.test_id).unwrap();
        assert_eq!(s_a.scores[i], cosine_score(a, b).unwrap());
    }
    println!("ACCEPTANCE 12 parallel_matches_sequential: PASS");
}
