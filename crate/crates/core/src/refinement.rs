//! Label refinement: soft fine-grained targets that tie each member of a
//! superclass to its base anchor.
//!
//! Anchor instances get classic label smoothing spread over all members;
//! novel members get a two-point distribution putting `1 - epsilon` on
//! themselves and `epsilon` on the anchor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads;

/// Smoothing weight for refined labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementConfig {
    pub epsilon: f64,
    /// When set, the refined cross-entropy replaces the hard fine-grained
    /// loss instead of supplementing it.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub replace_hard_loss: bool,
}

impl RefinementConfig {
    pub fn new(epsilon: f64) -> Result<Self> {
        let cfg = RefinementConfig {
            epsilon,
            replace_hard_loss: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!(
                "epsilon must be in [0, 1) (got {})",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// A refined target distribution over one superclass's members.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedLabel {
    pub superclass: usize,
    pub distribution: Vec<f64>,
}

impl RefinedLabel {
    pub fn new(superclass: usize, distribution: Vec<f64>) -> Result<Self> {
        let sum: f64 = distribution.iter().sum();
        if (sum - 1.0).abs() > 1e-12 || distribution.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Contract(format!(
                "refined label must be a distribution (sum {sum})"
            )));
        }
        Ok(RefinedLabel {
            superclass,
            distribution,
        })
    }
}

/// Refined target for an instance of the anchor class: `1 - epsilon` at the
/// anchor (position 0), `epsilon / (n_fine - 1)` everywhere else. A singleton
/// superclass has nothing to link, so it keeps the hard label.
pub fn refine_anchor_label(n_fine: usize, epsilon: f64) -> Result<Vec<f64>> {
    if n_fine == 0 {
        return Err(Error::Contract("superclass has no members".into()));
    }
    RefinementConfig::new(epsilon)?;
    if n_fine == 1 {
        return Ok(vec![1.0]);
    }
    let spread = epsilon / (n_fine - 1) as f64;
    let mut dist = vec![spread; n_fine];
    dist[0] = 1.0 - epsilon;
    Ok(dist)
}

/// Refined target for an instance of a non-anchor member at position `z`:
/// `1 - epsilon` at `z`, `epsilon` at the anchor position `d`, 0 elsewhere.
pub fn refine_member_label(z: usize, d: usize, n_fine: usize, epsilon: f64) -> Result<Vec<f64>> {
    RefinementConfig::new(epsilon)?;
    if z >= n_fine || d >= n_fine {
        return Err(Error::Contract(format!(
            "positions z={z}, d={d} must lie below n_fine={n_fine}"
        )));
    }
    if z == d {
        return Err(Error::Contract(
            "member refinement requires z != d; anchor instances use the smoothing form".into(),
        ));
    }
    let mut dist = vec![0.0; n_fine];
    dist[z] = 1.0 - epsilon;
    dist[d] = epsilon;
    Ok(dist)
}

/// Soft-target cross-entropy of a fine-grained prediction against a refined
/// label.
pub fn refined_ce_loss(probs: &[f64], refined: &[f64]) -> Result<f64> {
    if probs.len() != refined.len() {
        return Err(Error::Shape(format!(
            "prediction has {} entries, refined label has {}",
            probs.len(),
            refined.len()
        )));
    }
    heads::ce_loss(probs, refined)
}
