//! One JSON run configuration for every command. Unknown keys are rejected;
//! every run writes the fully-resolved document (defaults filled in) next to
//! its outputs so results are reproducible from that file plus the seed.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use udino::cluster::{FineTuneConfig, IterateConfig, PseudoLabelConfig, SupervisedConfig};
use udino::corpus::{AugmentPolicy, CropConfig, LogMelConfig, SynthConfig};
use udino::dino::{DinoConfig, HeadConfig};
use udino::nn::{Activation, ConvSpec, EncoderConfig, SgdConfig};
use udino::scoring::ProbeConfig;
use udino::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default = "default_synth")]
    pub synth: SynthConfig,
    /// Extra speakers synthesized on top of `synth.n_speakers` and held out
    /// for evaluation trials (the pipeline trains on the first
    /// `synth.n_speakers` and evaluates on these).
    #[serde(default = "default_held_out")]
    pub held_out_speakers: usize,
    #[serde(default)]
    pub logmel: LogMelConfig,
}

fn default_synth() -> SynthConfig {
    SynthConfig {
        n_speakers: 20,
        utts_per_speaker: 20,
        frames_per_utt: 300,
        feature_dim: 16,
        speaker_scale: 1.0,
        channel_scale: 0.1,
        frame_noise_scale: 3.5,
    }
}

fn default_held_out() -> usize {
    10
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            synth: default_synth(),
            held_out_speakers: default_held_out(),
            logmel: LogMelConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupervisedSection {
    #[serde(default = "default_supervised_train")]
    pub train: SupervisedConfig,
    #[serde(default = "default_finetune")]
    pub finetune: Option<FineTuneConfig>,
}

fn default_supervised_train() -> SupervisedConfig {
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
        augment: default_augment(),
    }
}

fn default_finetune() -> Option<FineTuneConfig> {
    Some(FineTuneConfig {
        epochs: 1,
        optimizer: SgdConfig {
            lr: 0.005,
            momentum: 0.9,
            weight_decay: 1e-5,
        },
        margin: 0.5,
        scale: 30.0,
        segment_len: 280,
        augment: default_augment(),
    })
}

impl Default for SupervisedSection {
    fn default() -> Self {
        SupervisedSection {
            train: default_supervised_train(),
            finetune: default_finetune(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSection {
    #[serde(default = "default_pseudo")]
    pub pseudo: PseudoLabelConfig,
    #[serde(default = "default_n_iterations")]
    pub n_iterations: usize,
    #[serde(default = "default_warm_start")]
    pub warm_start: bool,
    #[serde(default)]
    pub early_stop_eer_delta: Option<f64>,
}

fn default_pseudo() -> PseudoLabelConfig {
    PseudoLabelConfig {
        kmeans_k: 100,
        kmeans_iters: 50,
        ahc_clusters: 22,
    }
}

fn default_n_iterations() -> usize {
    3
}

fn default_warm_start() -> bool {
    true
}

impl Default for ClusterSection {
    fn default() -> Self {
        ClusterSection {
            pseudo: default_pseudo(),
            n_iterations: default_n_iterations(),
            warm_start: default_warm_start(),
            early_stop_eer_delta: Some(0.1),
        }
    }
}

impl ClusterSection {
    pub fn iterate_config(&self, supervised: &SupervisedConfig) -> IterateConfig {
        IterateConfig {
            pseudo: self.pseudo,
            supervised: supervised.clone(),
            n_iterations: self.n_iterations,
            warm_start: self.warm_start,
            early_stop_eer_delta: self.early_stop_eer_delta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "default_p_target")]
    pub p_target: f64,
    #[serde(default = "default_cost")]
    pub c_miss: f64,
    #[serde(default = "default_cost")]
    pub c_fa: f64,
    /// Nontarget trials sampled per target trial when building synthetic
    /// trial lists.
    #[serde(default = "default_nontarget_ratio")]
    pub nontargets_per_target: f64,
}

fn default_p_target() -> f64 {
    0.01
}
fn default_cost() -> f64 {
    1.0
}
fn default_nontarget_ratio() -> f64 {
    1.0
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            p_target: default_p_target(),
            c_miss: default_cost(),
            c_fa: default_cost(),
            nontargets_per_target: default_nontarget_ratio(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PldaSection {
    #[serde(default = "default_plda_iters")]
    pub iters: usize,
    #[serde(default = "default_plda_reg")]
    pub reg: f64,
}

fn default_plda_iters() -> usize {
    20
}
fn default_plda_reg() -> f64 {
    1e-6
}

impl Default for PldaSection {
    fn default() -> Self {
        PldaSection {
            iters: default_plda_iters(),
            reg: default_plda_reg(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default = "default_encoder")]
    pub encoder: EncoderConfig,
    #[serde(default = "default_dino")]
    pub dino: DinoConfig,
    #[serde(default)]
    pub supervised: SupervisedSection,
    #[serde(default)]
    pub cluster: ClusterSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub plda: PldaSection,
    #[serde(default)]
    pub probe: ProbeConfig,
}

fn default_seed() -> u64 {
    42
}

fn default_encoder() -> EncoderConfig {
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

fn default_augment() -> AugmentPolicy {
    AugmentPolicy {
        noise_enabled: true,
        snr_db_range: [0.0, 15.0],
        gain_enabled: true,
        gain_db_range: [-6.0, 6.0],
        time_mask_enabled: true,
        time_mask_max_frames: 10,
        ..AugmentPolicy::disabled()
    }
}

fn default_dino() -> DinoConfig {
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
        steps: 2000,
        batch_size: 8,
        optimizer: SgdConfig {
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-5,
        },
        warmup_frac: 0.1,
        augment: default_augment(),
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: default_seed(),
            data: DataSection::default(),
            encoder: default_encoder(),
            dino: default_dino(),
            supervised: SupervisedSection::default(),
            cluster: ClusterSection::default(),
            eval: EvalSection::default(),
            plda: PldaSection::default(),
            probe: ProbeConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => {
                let cfg = RunConfig::default();
                cfg.validate()?;
                Ok(cfg)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.data.synth.validate()?;
        self.encoder.validate()?;
        self.dino.validate()?;
        self.data_encoder_consistent()?;
        if self.data.held_out_speakers == 0 {
            return Err(Error::Config(
                "data.held_out_speakers must be >= 1 (the pipeline adds them on top of the training speakers)"
                    .into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.eval.p_target) {
            return Err(Error::Config("eval.p_target must be in [0, 1]".into()));
        }
        Ok(())
    }

    fn data_encoder_consistent(&self) -> Result<()> {
        if self.encoder.feature_dim != self.data.synth.feature_dim {
            return Err(Error::Config(format!(
                "encoder.feature_dim ({}) must match data.synth.feature_dim ({})",
                self.encoder.feature_dim, self.data.synth.feature_dim
            )));
        }
        Ok(())
    }

    /// Write the fully-resolved config next to a run's outputs.
    pub fn write_resolved(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("config serialization: {e}")))?;
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }
}
