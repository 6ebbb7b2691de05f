//! Client-side prompt learning strategies.

mod losses;
mod ot;
mod params;
mod payload;
mod sgd;
mod trainer;

use serde::{Deserialize, Serialize};

pub use losses::{project_prograd, trajectory_average};
pub use ot::{plot_class_score, sinkhorn, sinkhorn_unbalanced, OtScore};
pub use params::{meta_net_parameter_count, metanet_forward, MetaNet, MetaNetCache, PromptParams};
pub use payload::{CommunicablePayload, Tensor};
pub use sgd::{cosine_lr, sgd_momentum_step, SgdConfig, SgdState};
pub use trainer::{
    fedotp_local_update, local_train_promptfl, loss_kgcoop, loss_proda, loss_src, ClientState, LocalOutcome, LocalTrainer, PromptShape,
    Scorer,
};

use crate::error::{config, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    PromptFl,
    FedOtp,
    CoCoOp,
    Plot,
    ProDa,
    ProGrad,
    Src,
    KgCoOp,
    /// Hand-crafted prompt, no training.
    ZsClip,
}

impl Method {
    pub const TRAINED: [Method; 8] =
        [Method::PromptFl, Method::FedOtp, Method::CoCoOp, Method::Plot, Method::ProDa, Method::ProGrad, Method::Src, Method::KgCoOp];

    pub fn name(self) -> &'static str {
        match self {
            Method::PromptFl => "promptfl",
            Method::FedOtp => "fedotp",
            Method::CoCoOp => "cocoop",
            Method::Plot => "plot",
            Method::ProDa => "proda",
            Method::ProGrad => "prograd",
            Method::Src => "src",
            Method::KgCoOp => "kgcoop",
            Method::ZsClip => "zsclip",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::TRAINED
            .into_iter()
            .chain([Method::ZsClip])
            .find(|m| m.name() == name)
            .map_or_else(|| config(format!("unknown method `{name}`")), Ok)
    }

    /// Prompt sets held per configured prompt (two for the
    /// global/local and distribution-ensemble methods).
    pub fn set_factor(self) -> usize {
        match self {
            Method::FedOtp | Method::ProDa => 2,
            _ => 1,
        }
    }

    pub fn needs_local_features(self) -> bool {
        matches!(self, Method::Plot | Method::FedOtp)
    }

    pub fn is_trained(self) -> bool {
        self != Method::ZsClip
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Which parameters leave the client.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShareMode {
    /// Everything trainable is communicated.
    Global,
    /// Client-specific halves stay on the client.
    Personalized,
}

/// Algorithm-specific weights. Unused fields are ignored by other methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgoHyper {
    pub lambda_kg: f64,
    pub lambda_pg: f64,
    pub mu_text: f64,
    pub mu_logit: f64,
    pub lambda_orth: f64,
    pub ot_epsilon: f64,
    pub ot_iters: usize,
    pub ot_relax: f64,
    pub meta_hidden: usize,
    pub trajectory_window: usize,
    /// Width of the trajectory weights in epochs; `inf` weighs equally.
    pub trajectory_sigma: f64,
    /// Hand-crafted templates averaged into the reference features.
    pub src_templates: usize,
}

impl Default for AlgoHyper {
    fn default() -> Self {
        Self {
            lambda_kg: 1.0,
            lambda_pg: 1.0,
            mu_text: 1.0,
            mu_logit: 1.0,
            lambda_orth: 1.0,
            ot_epsilon: 0.1,
            ot_iters: 100,
            ot_relax: 0.5,
            meta_hidden: 64,
            trajectory_window: 3,
            trajectory_sigma: 1.0,
            src_templates: 3,
        }
    }
}

impl AlgoHyper {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("lambda_kg", self.lambda_kg),
            ("lambda_pg", self.lambda_pg),
            ("mu_text", self.mu_text),
            ("mu_logit", self.mu_logit),
            ("lambda_orth", self.lambda_orth),
        ];
        for (name, v) in weights {
            if !(v >= 0.0) || !v.is_finite() {
                return config(format!("{name} must be a finite non-negative weight, got {v}"));
            }
        }
        if !(self.ot_epsilon > 0.0) {
            return config(format!("ot_epsilon must be positive, got {}", self.ot_epsilon));
        }
        if !(0.0..=1.0).contains(&self.ot_relax) {
            return config(format!("ot_relax must lie in [0, 1], got {}", self.ot_relax));
        }
        if self.trajectory_window == 0 {
            return config("trajectory_window must be at least 1");
        }
        if !(self.trajectory_sigma > 0.0) {
            return config("trajectory_sigma must be positive");
        }
        if self.meta_hidden == 0 || self.src_templates == 0 {
            return config("meta_hidden and src_templates must be at least 1");
        }
        Ok(())
    }
}
