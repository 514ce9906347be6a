//! Neighborhood aggregation functions.
//!
//! Every kind reduces the multiset of neighbor rows of a target node to one
//! row. Baselines: mean, max, sum, median, trimmed mean, soft median and
//! activation clipping. Robust kinds: distribution-based trimming against
//! calibrated per-dimension intervals, dynamic weighting by distance to a
//! learnable center, cosine edge pruning, and a learnable combination of the
//! three.
//!
//! When no neighbor survives (empty neighborhood, everything trimmed, all
//! weights zero) the target's own row is returned.

mod kernels;
mod neighborhoods;
mod ops;
mod stats;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use kernels::{
    activation_clip, cosine_similarity, distribution, distribution_values, dynamic_weight, max,
    mean, median, node_weights, soft_median, sum, trimmed_mean, Kernel, KernelOutput,
};
pub use neighborhoods::Neighborhoods;
pub use ops::{aggregate_on_tape, LayerAggState};
pub use stats::{ClipTable, DimStats, StatsAccumulator, StatsTable};

pub const DEFAULT_A: f32 = 3.0;
pub const DEFAULT_B: f32 = 3.0;
pub const DEFAULT_ALPHA: f32 = 0.0;
pub const DEFAULT_BETA: f32 = 0.1;
pub const DEFAULT_TEMPERATURE: f32 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Aggregator {
    Mean,
    Max,
    Sum,
    Median,
    TrimmedMean { beta: f32 },
    SoftMedian { temperature: f32 },
    ActivationClip,
    Distribution { a: f32, b: f32 },
    DynamicWeight,
    Cosine { alpha: f32 },
    Combined { a: f32, b: f32, alpha: f32 },
}

/// Whether calibrated trimming is active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Training: dropout on, calibrated kinds behave as plain mean.
    Train,
    /// Clean evaluation before calibration: dropout off, no calibrated
    /// trimming.
    Plain,
    /// Inference with every aggregator fully active.
    Infer,
}

impl Mode {
    pub fn calibrated(self) -> bool {
        self == Mode::Infer
    }
}

/// Discarded vs. aggregated value slots.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrimCounts {
    pub discarded: u64,
    pub total: u64,
}

impl TrimCounts {
    pub fn add(&mut self, other: TrimCounts) {
        self.discarded += other.discarded;
        self.total += other.total;
    }

    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.discarded as f64 / self.total as f64
        }
    }
}

impl Aggregator {
    pub fn distribution() -> Self {
        Aggregator::Distribution {
            a: DEFAULT_A,
            b: DEFAULT_B,
        }
    }

    pub fn cosine() -> Self {
        Aggregator::Cosine {
            alpha: DEFAULT_ALPHA,
        }
    }

    pub fn trimmed_mean() -> Self {
        Aggregator::TrimmedMean { beta: DEFAULT_BETA }
    }

    pub fn soft_median() -> Self {
        Aggregator::SoftMedian {
            temperature: DEFAULT_TEMPERATURE,
        }
    }

    pub fn combined() -> Self {
        Aggregator::Combined {
            a: DEFAULT_A,
            b: DEFAULT_B,
            alpha: DEFAULT_ALPHA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match *self {
            Aggregator::TrimmedMean { beta } if !(0.0..0.5).contains(&beta) => {
                bad(format!("trimmed mean needs 0 <= beta < 0.5, got {beta}"))
            }
            Aggregator::SoftMedian { temperature } if !(temperature > 0.0) => {
                bad(format!("soft median needs T > 0, got {temperature}"))
            }
            Aggregator::Distribution { a, b } | Aggregator::Combined { a, b, .. }
                if !(a > 0.0 && b > 0.0) =>
            {
                bad(format!("distribution needs a > 0 and b > 0, got a={a} b={b}"))
            }
            Aggregator::Cosine { alpha } | Aggregator::Combined { alpha, .. }
                if !(-1.0..=1.0).contains(&alpha) =>
            {
                bad(format!("cosine threshold must lie in [-1, 1], got {alpha}"))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Aggregator::Mean => "mean",
            Aggregator::Max => "max",
            Aggregator::Sum => "sum",
            Aggregator::Median => "median",
            Aggregator::TrimmedMean { .. } => "trimmed",
            Aggregator::SoftMedian { .. } => "softmedian",
            Aggregator::ActivationClip => "clip",
            Aggregator::Distribution { .. } => "distribution",
            Aggregator::DynamicWeight => "dynamic",
            Aggregator::Cosine { .. } => "cosine",
            Aggregator::Combined { .. } => "combined",
        }
    }

    /// Kinds whose state comes from a calibration pass.
    pub fn needs_stats(&self) -> bool {
        matches!(
            self,
            Aggregator::Distribution { .. } | Aggregator::Combined { .. }
        )
    }

    pub fn uses_center(&self) -> bool {
        matches!(self, Aggregator::DynamicWeight | Aggregator::Combined { .. })
    }

    pub fn cosine_threshold(&self) -> Option<f32> {
        match *self {
            Aggregator::Cosine { alpha } | Aggregator::Combined { alpha, .. } => Some(alpha),
            _ => None,
        }
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Aggregator::TrimmedMean { beta } => write!(f, "trimmed:{beta}"),
            Aggregator::SoftMedian { temperature } => write!(f, "softmedian:{temperature}"),
            Aggregator::Distribution { a, b } => write!(f, "distribution:{a}:{b}"),
            Aggregator::Cosine { alpha } => write!(f, "cosine:{alpha}"),
            Aggregator::Combined { a, b, alpha } => write!(f, "combined:{a}:{b}:{alpha}"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for Aggregator {
    type Err = Error;

    /// `name[:param[:param...]]`, e.g. `trimmed:0.2`, `distribution:3:3`,
    /// `cosine:0.1`, `combined:3:3:0`.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().split(':');
        let name = parts.next().unwrap_or_default().to_ascii_lowercase();
        let params: Vec<f32> = parts
            .map(|p| {
                p.parse::<f32>()
                    .map_err(|_| Error::Config(format!("bad aggregator parameter {p:?} in {s:?}")))
            })
            .collect::<Result<_>>()?;
        let arity = |max: usize| -> Result<()> {
            if params.len() > max {
                Err(Error::Config(format!(
                    "aggregator {name} takes at most {max} parameters"
                )))
            } else {
                Ok(())
            }
        };
        let p = |i: usize, default: f32| params.get(i).copied().unwrap_or(default);
        let agg = match name.as_str() {
            "mean" => {
                arity(0)?;
                Aggregator::Mean
            }
            "max" => {
                arity(0)?;
                Aggregator::Max
            }
            "sum" | "add" => {
                arity(0)?;
                Aggregator::Sum
            }
            "median" => {
                arity(0)?;
                Aggregator::Median
            }
            "trimmed" | "trimmed_mean" => {
                arity(1)?;
                Aggregator::TrimmedMean {
                    beta: p(0, DEFAULT_BETA),
                }
            }
            "softmedian" | "soft_median" => {
                arity(1)?;
                Aggregator::SoftMedian {
                    temperature: p(0, DEFAULT_TEMPERATURE),
                }
            }
            "clip" | "activation_clip" => {
                arity(0)?;
                Aggregator::ActivationClip
            }
            "distribution" | "dist" => {
                arity(2)?;
                let a = p(0, DEFAULT_A);
                Aggregator::Distribution { a, b: p(1, a) }
            }
            "dynamic" | "dynamic_weight" => {
                arity(0)?;
                Aggregator::DynamicWeight
            }
            "cosine" | "cos" => {
                arity(1)?;
                Aggregator::Cosine {
                    alpha: p(0, DEFAULT_ALPHA),
                }
            }
            "combined" | "combo" => {
                arity(3)?;
                let a = p(0, DEFAULT_A);
                Aggregator::Combined {
                    a,
                    b: p(1, a),
                    alpha: p(2, DEFAULT_ALPHA),
                }
            }
            other => return Err(Error::Config(format!("unknown aggregator {other:?}"))),
        };
        agg.validate()?;
        Ok(agg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display_roundtrip() {
        for s in [
            "mean",
            "max",
            "sum",
            "median",
            "trimmed:0.2",
            "softmedian:0.5",
            "clip",
            "distribution:2:4",
            "dynamic",
            "cosine:0.3",
            "combined:3:3:0",
        ] {
            let a: Aggregator = s.parse().unwrap();
            assert_eq!(a.to_string(), s);
            assert_eq!(a.to_string().parse::<Aggregator>().unwrap(), a);
        }
    }

    #[test]
    fn defaults() {
        assert_eq!("distribution".parse::<Aggregator>().unwrap(), Aggregator::distribution());
        assert_eq!("trimmed".parse::<Aggregator>().unwrap(), Aggregator::TrimmedMean { beta: 0.1 });
        assert_eq!("cosine".parse::<Aggregator>().unwrap(), Aggregator::Cosine { alpha: 0.0 });
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        for s in ["trimmed:0.5", "softmedian:0", "distribution:0:1", "cosine:1.5", "mode", "mean:1"] {
            assert!(matches!(s.parse::<Aggregator>(), Err(Error::Config(_))), "{s}");
        }
    }
}
