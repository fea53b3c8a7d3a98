//! Cross-nesting structure: allocation matrix and scale parameters.

use crate::choiceset::ChoiceSet;
use crate::error::{Error, Result};

/// The top-level scale, fixed by the normalization from the top.
pub const TOP_SCALE: f64 = 1.0;

/// Initial value and fixed flag for one nest scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleSpec {
    pub initial: f64,
    pub fixed: bool,
}

impl ScaleSpec {
    pub fn free(initial: f64) -> Self {
        ScaleSpec {
            initial,
            fixed: false,
        }
    }

    pub fn fixed(value: f64) -> Self {
        ScaleSpec {
            initial: value,
            fixed: true,
        }
    }
}

impl Default for ScaleSpec {
    /// Free, starting at 1.5: inside the admissible region, away from the
    /// boundary where the model collapses to multinomial logit.
    fn default() -> Self {
        ScaleSpec::free(1.5)
    }
}

/// Choice set plus the cross-nesting machinery: the allocation matrix
/// (equal shares within each combination) and one scale parameter per nest,
/// all at least the top scale of 1.
#[derive(Debug, Clone, PartialEq)]
pub struct CnlStructure {
    choice_set: ChoiceSet,
    /// `alpha[alt][nest]`; each row sums to one.
    alpha: Vec<Vec<f64>>,
    /// `ln alpha` where positive, `-inf` elsewhere.
    log_alpha: Vec<Vec<f64>>,
    /// For each nest, the alternatives with positive allocation.
    members: Vec<Vec<usize>>,
    mu: Vec<f64>,
    mu_fixed: Vec<bool>,
}

impl CnlStructure {
    /// Builds the structure with explicit per-nest scale settings.
    pub fn new(choice_set: ChoiceSet, scales: Vec<ScaleSpec>) -> Result<Self> {
        let m = choice_set.universe().len();
        if scales.len() != m {
            return Err(Error::domain(format!(
                "expected {m} scale settings (one per nest), got {}",
                scales.len()
            )));
        }
        for (nest, scale) in choice_set.universe().nests().iter().zip(&scales) {
            if !scale.initial.is_finite() || scale.initial < TOP_SCALE {
                return Err(Error::domain(format!(
                    "scale for nest {} must be at least the top scale {TOP_SCALE}, got {}",
                    nest.code(),
                    scale.initial
                )));
            }
        }
        let universe = choice_set.universe().clone();
        let alpha: Vec<Vec<f64>> = choice_set
            .combinations()
            .iter()
            .map(|c| c.allocation_weights(&universe))
            .collect();
        let log_alpha: Vec<Vec<f64>> = alpha
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&a| if a > 0.0 { a.ln() } else { f64::NEG_INFINITY })
                    .collect()
            })
            .collect();
        let members: Vec<Vec<usize>> = (0..m)
            .map(|nest| {
                alpha
                    .iter()
                    .enumerate()
                    .filter(|(_, row)| row[nest] > 0.0)
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect();
        Ok(CnlStructure {
            choice_set,
            alpha,
            log_alpha,
            members,
            mu: scales.iter().map(|s| s.initial).collect(),
            mu_fixed: scales.iter().map(|s| s.fixed).collect(),
        })
    }

    /// All scales free at the default initial value.
    pub fn with_default_scales(choice_set: ChoiceSet) -> Result<Self> {
        let m = choice_set.universe().len();
        CnlStructure::new(choice_set, vec![ScaleSpec::default(); m])
    }

    /// All scales fixed to 1: the multinomial logit special case.
    pub fn multinomial(choice_set: ChoiceSet) -> Result<Self> {
        let m = choice_set.universe().len();
        CnlStructure::new(choice_set, vec![ScaleSpec::fixed(TOP_SCALE); m])
    }

    pub fn choice_set(&self) -> &ChoiceSet {
        &self.choice_set
    }

    /// Number of alternatives.
    pub fn alternatives(&self) -> usize {
        self.choice_set.len()
    }

    /// Number of nests.
    pub fn nests(&self) -> usize {
        self.mu.len()
    }

    pub fn alpha(&self) -> &[Vec<f64>] {
        &self.alpha
    }

    pub(crate) fn log_alpha(&self) -> &[Vec<f64>] {
        &self.log_alpha
    }

    /// Alternatives with positive allocation in the given nest.
    pub fn nest_members(&self, nest: usize) -> &[usize] {
        &self.members[nest]
    }

    /// Current nest scales.
    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn mu_fixed(&self) -> &[bool] {
        &self.mu_fixed
    }

    /// Nest indices whose scales are estimated, in nest order.
    pub fn free_scales(&self) -> impl Iterator<Item = usize> + '_ {
        self.mu_fixed
            .iter()
            .enumerate()
            .filter(|(_, &fixed)| !fixed)
            .map(|(m, _)| m)
    }

    pub fn free_scale_count(&self) -> usize {
        self.mu_fixed.iter().filter(|&&fixed| !fixed).count()
    }

    /// Replaces the stored scale values (used to freeze estimates back into
    /// the structure).
    pub fn set_mu(&mut self, mu: &[f64]) -> Result<()> {
        if mu.len() != self.mu.len() {
            return Err(Error::domain(format!(
                "expected {} scale values, got {}",
                self.mu.len(),
                mu.len()
            )));
        }
        for &value in mu {
            if !value.is_finite() || value < TOP_SCALE {
                return Err(Error::domain(format!(
                    "scale {value} is below the top scale {TOP_SCALE}"
                )));
            }
        }
        self.mu.copy_from_slice(mu);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::choiceset::{enumerate_combinations, NestUniverse};
    use std::collections::BTreeSet;

    #[test]
    fn structure_derives_equal_share_allocation() {
        let u = NestUniverse::canonical();
        let cs = enumerate_combinations(&u, &BTreeSet::new()).unwrap();
        let s = CnlStructure::with_default_scales(cs).unwrap();
        assert_eq!(s.alternatives(), 31);
        assert_eq!(s.nests(), 5);
        for row in s.alpha() {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(row.iter().any(|&a| a > 0.0));
        }
        // Every nest contains its singleton plus all supersets: 2^4 = 16.
        for m in 0..5 {
            assert_eq!(s.nest_members(m).len(), 16);
        }
    }

    #[test]
    fn scales_below_top_are_rejected() {
        let u = NestUniverse::canonical();
        let cs = enumerate_combinations(&u, &BTreeSet::new()).unwrap();
        let err = CnlStructure::new(
            cs,
            vec![
                ScaleSpec::free(0.9),
                ScaleSpec::default(),
                ScaleSpec::default(),
                ScaleSpec::default(),
                ScaleSpec::default(),
            ],
        );
        assert!(err.is_err());
    }
}
