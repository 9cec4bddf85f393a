//! Run configuration: one TOML document with dotted namespaces covering the
//! model shape, the optimization schedule, every loss weight and toggle, the
//! inference gate, and optional input paths. Unknown keys are rejected so a
//! typo cannot silently fall back to a default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::inference::{GateConfig, QueryRadiusMode};
use crate::losses::{AnchorMode, KernelKind, LossConfig};

fn d_default() -> usize {
    64
}
fn hidden_default() -> usize {
    64
}
fn depth_default() -> usize {
    2
}
fn kappa_max_default() -> f64 {
    100.0
}
fn epochs_default() -> usize {
    50
}
fn batch_default() -> usize {
    64
}
fn accum_default() -> usize {
    3
}
fn n_neg_default() -> usize {
    50
}
fn lr_default() -> f64 {
    1e-3
}
fn seed_default() -> u64 {
    42
}
fn test_frac_default() -> f64 {
    0.2
}
fn welsch_default() -> f64 {
    0.4
}
fn geom_margin_default() -> f64 {
    0.5
}
fn prob_margin_default() -> f64 {
    0.3
}
fn lambda_geo_default() -> f64 {
    0.7
}
fn lambda_prob_default() -> f64 {
    0.3
}
fn lambda_svgd_default() -> f64 {
    0.1
}
fn kappa_align_default() -> f64 {
    1.0
}
fn kappa_repel_default() -> f64 {
    2.0
}
fn kernel_default() -> String {
    "vmf".into()
}
fn on_default() -> bool {
    true
}
fn gamma_default() -> f64 {
    1.0
}
fn top_k_default() -> usize {
    10
}
fn radius_mode_default() -> String {
    "per_candidate_leaf".into()
}

/// Encoder and vMF-head shape.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "d_default")]
    pub d: usize,
    /// Upstream feature width; defaults to `d` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_plm: Option<usize>,
    #[serde(default = "hidden_default")]
    pub hidden: usize,
    #[serde(default = "depth_default")]
    pub depth: usize,
    #[serde(default = "kappa_max_default")]
    pub kappa_max: f64,
    #[serde(default)]
    pub identity_mu: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant_kappa: Option<f64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        toml::from_str("").expect("empty model section")
    }
}

/// Optimization schedule and data split.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    #[serde(default = "epochs_default")]
    pub epochs: usize,
    #[serde(default = "batch_default")]
    pub batch_size: usize,
    /// Micro-batches averaged into one optimizer step.
    #[serde(default = "accum_default")]
    pub grad_accum: usize,
    #[serde(default = "n_neg_default")]
    pub n_neg: usize,
    /// Learning rate for sphere-constrained rows (Riemannian Adam).
    #[serde(default = "lr_default")]
    pub lr_spherical: f64,
    /// Learning rate for the adapter and concentration head (Adam).
    #[serde(default = "lr_default")]
    pub lr_euclidean: f64,
    #[serde(default = "seed_default")]
    pub seed: u64,
    #[serde(default = "test_frac_default")]
    pub test_frac: f64,
    #[serde(default)]
    pub drop_edge_frac: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        toml::from_str("").expect("empty training section")
    }
}

/// Loss weights, margins, kernels, and ablation toggles.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    #[serde(default = "welsch_default")]
    pub welsch_scale: f64,
    #[serde(default = "geom_margin_default")]
    pub geom_margin: f64,
    #[serde(default = "prob_margin_default")]
    pub prob_margin: f64,
    #[serde(default = "lambda_geo_default")]
    pub lambda_geo: f64,
    #[serde(default = "lambda_prob_default")]
    pub lambda_prob: f64,
    #[serde(default = "lambda_svgd_default")]
    pub lambda_svgd: f64,
    #[serde(default = "kappa_align_default")]
    pub kappa_align: f64,
    #[serde(default = "kappa_repel_default")]
    pub kappa_repel: f64,
    /// "vmf" | "rbf" | "imq".
    #[serde(default = "kernel_default")]
    pub kernel: String,
    #[serde(default = "on_default")]
    pub svgd: bool,
    #[serde(default = "on_default")]
    pub vmf: bool,
    #[serde(default = "on_default")]
    pub geom: bool,
    #[serde(default = "on_default")]
    pub structural_score: bool,
    #[serde(default = "on_default")]
    pub alignment: bool,
    /// "learned" | "self" anchor source for the alignment drift.
    #[serde(default = "anchor_default")]
    pub anchor: String,
}

fn anchor_default() -> String {
    "learned".into()
}

impl Default for LossSection {
    fn default() -> Self {
        toml::from_str("").expect("empty loss section")
    }
}

/// Inference gate settings.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GateSection {
    #[serde(default = "gamma_default")]
    pub gamma: f64,
    #[serde(default = "on_default")]
    pub enabled: bool,
    /// "per_candidate_leaf" | "global_leaf_mean".
    #[serde(default = "radius_mode_default")]
    pub query_radius_mode: String,
    #[serde(default = "top_k_default")]
    pub top_k: usize,
}

impl Default for GateSection {
    fn default() -> Self {
        toml::from_str("").expect("empty gate section")
    }
}

/// Optional input file locations; command-line paths take precedence.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queries: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
}

/// The whole run configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub gate: GateSection,
    #[serde(default)]
    pub paths: PathsSection,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s)
            .map_err(|e| CoreError::BadConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.d < 2 {
            return Err(CoreError::BadConfig("model.d must be at least 2".into()));
        }
        if self.model.hidden == 0 {
            return Err(CoreError::BadConfig("model.hidden must be positive".into()));
        }
        if self.training.batch_size == 0 || self.training.grad_accum == 0 {
            return Err(CoreError::BadConfig(
                "training.batch_size and training.grad_accum must be positive".into(),
            ));
        }
        if self.training.n_neg == 0 {
            return Err(CoreError::BadConfig("training.n_neg must be positive".into()));
        }
        if self.training.lr_spherical <= 0.0 || self.training.lr_euclidean <= 0.0 {
            return Err(CoreError::BadConfig("learning rates must be positive".into()));
        }
        if self.gate.gamma < 0.0 {
            return Err(CoreError::BadConfig("gate.gamma must be nonnegative".into()));
        }
        if self.gate.top_k == 0 {
            return Err(CoreError::BadConfig("gate.top_k must be positive".into()));
        }
        self.kernel_kind()?;
        self.anchor_mode()?;
        self.query_radius_mode()?;
        Ok(())
    }

    pub fn d_plm(&self) -> usize {
        self.model.d_plm.unwrap_or(self.model.d)
    }

    pub fn kernel_kind(&self) -> Result<KernelKind> {
        match self.loss.kernel.as_str() {
            "vmf" => Ok(KernelKind::Vmf),
            "rbf" => Ok(KernelKind::Rbf),
            "imq" => Ok(KernelKind::Imq),
            other => Err(CoreError::BadConfig(format!(
                "loss.kernel must be vmf|rbf|imq, got {other}"
            ))),
        }
    }

    pub fn anchor_mode(&self) -> Result<AnchorMode> {
        match self.loss.anchor.as_str() {
            "learned" => Ok(AnchorMode::Learned),
            "self" => Ok(AnchorMode::SelfTargeting),
            other => Err(CoreError::BadConfig(format!(
                "loss.anchor must be learned|self, got {other}"
            ))),
        }
    }

    pub fn query_radius_mode(&self) -> Result<QueryRadiusMode> {
        match self.gate.query_radius_mode.as_str() {
            "per_candidate_leaf" => Ok(QueryRadiusMode::PerCandidateLeaf),
            "global_leaf_mean" => Ok(QueryRadiusMode::GlobalLeafMean),
            other => Err(CoreError::BadConfig(format!(
                "gate.query_radius_mode must be per_candidate_leaf|global_leaf_mean, got {other}"
            ))),
        }
    }

    /// The loss configuration this run resolves to.
    pub fn loss_config(&self) -> Result<LossConfig> {
        Ok(LossConfig {
            welsch_scale: self.loss.welsch_scale,
            geom_margin: self.loss.geom_margin,
            prob_margin: self.loss.prob_margin,
            lambda_geo: self.loss.lambda_geo,
            lambda_prob: self.loss.lambda_prob,
            lambda_svgd: self.loss.lambda_svgd,
            kappa_align: self.loss.kappa_align,
            kappa_repel: self.loss.kappa_repel,
            kernel_kind: self.kernel_kind()?,
            svgd_enabled: self.loss.svgd,
            prob_enabled: self.loss.vmf,
            geom_enabled: self.loss.geom,
            structural_score_enabled: self.loss.structural_score,
            alignment_enabled: self.loss.alignment,
            anchor_mode: self.anchor_mode()?,
            bessel: Default::default(),
        })
    }

    /// The gate configuration this run resolves to.
    pub fn gate_config(&self) -> Result<GateConfig> {
        Ok(GateConfig {
            gamma: self.gate.gamma,
            gate_enabled: self.gate.enabled,
            query_radius_mode: self.query_radius_mode()?,
        })
    }

    /// Canonical TOML rendering of the fully-resolved configuration,
    /// embedded in checkpoints and reports for provenance.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
