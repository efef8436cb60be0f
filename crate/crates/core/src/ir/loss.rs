use std::fmt;

use serde::{Deserialize, Serialize};

/// Loss functions evaluated in the loss stage of a training step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    MeanSquaredError,
    MeanAbsolutePercentageError,
    BinaryCrossentropy,
    CategoricalCrossentropy,
    CategoricalHinge,
}

/// Clipping epsilon shared by the cross-entropy and percentage losses.
pub const LOSS_EPSILON: f64 = 1e-7;

impl LossKind {
    pub const ALL: &'static [LossKind] = &[
        LossKind::MeanSquaredError,
        LossKind::MeanAbsolutePercentageError,
        LossKind::BinaryCrossentropy,
        LossKind::CategoricalCrossentropy,
        LossKind::CategoricalHinge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::MeanSquaredError => "mean_squared_error",
            LossKind::MeanAbsolutePercentageError => "mean_absolute_percentage_error",
            LossKind::BinaryCrossentropy => "binary_crossentropy",
            LossKind::CategoricalCrossentropy => "categorical_crossentropy",
            LossKind::CategoricalHinge => "categorical_hinge",
        }
    }

    pub fn from_name(s: &str) -> Option<LossKind> {
        LossKind::ALL.iter().copied().find(|l| l.name() == s)
    }

    /// Losses that expect probabilities; models ending in them get a softmax head.
    pub fn wants_probabilities(self) -> bool {
        matches!(self, LossKind::BinaryCrossentropy | LossKind::CategoricalCrossentropy)
    }

    /// Losses whose labels are one-hot along the last axis.
    pub fn one_hot_labels(self) -> bool {
        matches!(self, LossKind::CategoricalCrossentropy | LossKind::CategoricalHinge)
    }

    /// Constant factor the loss applies to its mean.
    pub fn output_scale(self) -> f64 {
        match self {
            LossKind::MeanAbsolutePercentageError => 100.0,
            _ => 1.0,
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LossKind::from_name(s).ok_or_else(|| format!("unknown loss `{s}`"))
    }
}
