//! Backend identities, flavors and injectable faults.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ir::{LayerKind, LossKind};

/// Accumulation strategy of an honest backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flavor {
    /// Sequential loops, bias added first.
    Naive,
    /// Four-lane blocked accumulation, bias added last, transposed
    /// backward products.
    Reordered,
}

impl Flavor {
    pub fn name(self) -> &'static str {
        match self {
            Flavor::Naive => "naive",
            Flavor::Reordered => "reordered",
        }
    }
}

/// Deliberate defects a mutant backend can carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Fault {
    /// ReLU backward passes the gradient where the input is exactly zero.
    ReluEqZero,
    /// Full-extent `same` AveragePooling2D windows start half a pool early.
    PoolingLocation,
    /// Binary cross-entropy adds epsilon inside its logarithms after clipping.
    BceEpsilonClip,
    /// MaxPooling1D backward routes the gradient to every tied maximum.
    MaxpoolTieGradient,
    /// Categorical hinge gradient is not shared among tied maxima.
    HingeNoDivide,
    /// Global max pooling skips NaN and yields -inf for all-NaN windows.
    GlobalmaxpoolNeginfOnNan,
    /// Aborts the process halfway through the forward pass.
    DebugAbort,
    /// Sleeps for thirty seconds halfway through the forward pass.
    DebugSleep,
    /// No change at all.
    None,
}

impl Fault {
    pub const ALL: &'static [Fault] = &[
        Fault::ReluEqZero,
        Fault::PoolingLocation,
        Fault::BceEpsilonClip,
        Fault::MaxpoolTieGradient,
        Fault::HingeNoDivide,
        Fault::GlobalmaxpoolNeginfOnNan,
        Fault::DebugAbort,
        Fault::DebugSleep,
        Fault::None,
    ];

    /// The six faults modelled on real backend defects.
    pub const SEEDED: &'static [Fault] = &[
        Fault::ReluEqZero,
        Fault::PoolingLocation,
        Fault::BceEpsilonClip,
        Fault::MaxpoolTieGradient,
        Fault::HingeNoDivide,
        Fault::GlobalmaxpoolNeginfOnNan,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Fault::ReluEqZero => "relu-eq-zero",
            Fault::PoolingLocation => "pooling-location",
            Fault::BceEpsilonClip => "bce-epsilon-clip",
            Fault::MaxpoolTieGradient => "maxpool-tie-gradient",
            Fault::HingeNoDivide => "hinge-no-divide",
            Fault::GlobalmaxpoolNeginfOnNan => "globalmaxpool-neginf-on-nan",
            Fault::DebugAbort => "debug-abort",
            Fault::DebugSleep => "debug-sleep",
            Fault::None => "none",
        }
    }

    pub fn from_id(id: &str) -> Option<Fault> {
        Fault::ALL.iter().copied().find(|f| f.id() == id)
    }

    /// Layer kinds whose kernels the fault touches.
    pub fn layer_kinds(self) -> &'static [LayerKind] {
        match self {
            Fault::ReluEqZero => &[LayerKind::ReLU],
            Fault::PoolingLocation => &[LayerKind::AveragePooling2D],
            Fault::MaxpoolTieGradient => &[LayerKind::MaxPooling1D],
            Fault::GlobalmaxpoolNeginfOnNan => &[LayerKind::GlobalMaxPooling1D, LayerKind::GlobalMaxPooling2D],
            _ => &[],
        }
    }

    pub fn loss_kind(self) -> Option<LossKind> {
        match self {
            Fault::BceEpsilonClip => Some(LossKind::BinaryCrossentropy),
            Fault::HingeNoDivide => Some(LossKind::CategoricalHinge),
            _ => None,
        }
    }
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("unknown backend `{0}`")]
    UnknownBase(String),
    #[error("unknown fault id `{0}`")]
    UnknownFault(String),
    #[error("backend `{0}` already carries a fault")]
    NotHonest(String),
}

/// An execution backend: an accumulation flavor plus at most one fault.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Backend {
    pub flavor: Flavor,
    pub fault: Option<Fault>,
}

impl Backend {
    pub const NAIVE: Backend = Backend { flavor: Flavor::Naive, fault: None };
    pub const REORDERED: Backend = Backend { flavor: Flavor::Reordered, fault: None };

    pub fn id(&self) -> String {
        match self.fault {
            None => self.flavor.name().to_string(),
            Some(f) => format!("{}+{}", self.flavor.name(), f.id()),
        }
    }

    pub fn is_honest(&self) -> bool {
        self.fault.is_none()
    }

    pub fn has(&self, fault: Fault) -> bool {
        self.fault == Some(fault)
    }

    /// Kinds this backend declines to execute.
    pub fn unsupported_kinds(&self) -> Vec<LayerKind> {
        LayerKind::ALL.iter().copied().filter(|k| k.is_stochastic()).collect()
    }

    pub fn supports(&self, kind: LayerKind) -> bool {
        !kind.is_stochastic()
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

impl FromStr for Backend {
    type Err = BackendError;

    /// Parses `naive`, `reordered` or `<base>+<fault>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (base, fault) = match s.split_once('+') {
            Some((b, f)) => (b, Some(f)),
            None => (s, None),
        };
        let flavor = match base {
            "naive" => Flavor::Naive,
            "reordered" => Flavor::Reordered,
            other => return Err(BackendError::UnknownBase(other.to_string())),
        };
        let honest = Backend { flavor, fault: None };
        match fault {
            None => Ok(honest),
            Some(f) => register_mutant_backend(honest, f),
        }
    }
}

/// Derives a mutant from an honest base backend.
pub fn register_mutant_backend(base: Backend, fault: &str) -> Result<Backend, BackendError> {
    if !base.is_honest() {
        return Err(BackendError::NotHonest(base.id()));
    }
    let fault = Fault::from_id(fault).ok_or_else(|| BackendError::UnknownFault(fault.to_string()))?;
    Ok(Backend { flavor: base.flavor, fault: Some(fault) })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub id: String,
    pub honest: bool,
    pub flavor: Flavor,
    pub fault: Option<String>,
    pub supported_kinds: Vec<LayerKind>,
    pub unsupported_kinds: Vec<LayerKind>,
    pub losses: Vec<LossKind>,
}

impl BackendDescriptor {
    pub fn of(b: &Backend) -> Self {
        Self {
            id: b.id(),
            honest: b.is_honest(),
            flavor: b.flavor,
            fault: b.fault.map(|f| f.id().to_string()),
            supported_kinds: LayerKind::ALL.iter().copied().filter(|&k| b.supports(k)).collect(),
            unsupported_kinds: b.unsupported_kinds(),
            losses: LossKind::ALL.to_vec(),
        }
    }
}

/// Honest backends followed by `extra` (typically registered mutants).
pub fn list_backends(extra: &[Backend]) -> Vec<BackendDescriptor> {
    [Backend::NAIVE, Backend::REORDERED].iter().chain(extra).map(BackendDescriptor::of).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip() {
        for f in Fault::ALL {
            for base in [Backend::NAIVE, Backend::REORDERED] {
                let b = register_mutant_backend(base, f.id()).unwrap();
                assert_eq!(b.id().parse::<Backend>().unwrap(), b);
            }
        }
        assert_eq!("naive".parse::<Backend>().unwrap(), Backend::NAIVE);
    }

    #[test]
    fn unknown_fault_and_base() {
        assert_eq!(register_mutant_backend(Backend::NAIVE, "bogus"), Err(BackendError::UnknownFault("bogus".into())));
        assert!("tpu".parse::<Backend>().is_err());
        let m = register_mutant_backend(Backend::NAIVE, "none").unwrap();
        assert!(register_mutant_backend(m, "relu-eq-zero").is_err());
    }

    #[test]
    fn listing() {
        let ids: Vec<String> = list_backends(&[]).into_iter().map(|d| d.id).collect();
        assert_eq!(ids, vec!["naive", "reordered"]);
        let m = register_mutant_backend(Backend::NAIVE, "relu-eq-zero").unwrap();
        let all = list_backends(&[m]);
        assert_eq!(all.len(), 3);
        assert!(all[0].supported_kinds.contains(&LayerKind::Conv2D));
        assert!(all[0].unsupported_kinds.contains(&LayerKind::Dropout));
    }
}
