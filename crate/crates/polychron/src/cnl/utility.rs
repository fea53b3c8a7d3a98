//! Systematic-utility specification: terms, predicates and the covariate
//! registry.

use std::collections::BTreeSet;

use crate::choiceset::{Combination, NestUniverse};
use crate::error::{Error, Result};

/// Decidable predicate over a combination's membership, deciding which
/// alternatives a covariate effect applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum AltPredicate {
    /// True when the combination includes the nest with this code.
    Contains(char),
}

impl AltPredicate {
    pub fn matches(&self, universe: &NestUniverse, combination: Combination) -> bool {
        match *self {
            AltPredicate::Contains(code) => universe
                .position(code)
                .is_some_and(|pos| combination.contains(pos)),
        }
    }

    pub(crate) fn validate(&self, universe: &NestUniverse) -> Result<()> {
        match *self {
            AltPredicate::Contains(code) => {
                if universe.position(code).is_none() {
                    return Err(Error::domain(format!(
                        "predicate refers to unknown nest code {code:?}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// What a utility term multiplies its parameter with.
#[derive(Debug, Clone, PartialEq)]
pub enum TermKind {
    /// Alternative-specific constant for one combination.
    Asc { alt: Combination },
    /// Covariate effect on the alternatives matched by the predicate.
    CovariateBeta {
        covariate: String,
        predicate: AltPredicate,
    },
    /// Covariate interacted with the number of nests in the alternative.
    CovariateTimesNestCount { covariate: String },
}

/// One term of the systematic utility; `fixed` pins the parameter instead of
/// estimating it.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityTerm {
    name: String,
    kind: TermKind,
    fixed: Option<f64>,
}

impl UtilityTerm {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> &TermKind {
        &self.kind
    }

    pub fn fixed(&self) -> Option<f64> {
        self.fixed
    }

    pub fn is_free(&self) -> bool {
        self.fixed.is_none()
    }

    pub fn covariate(&self) -> Option<&str> {
        match &self.kind {
            TermKind::Asc { .. } => None,
            TermKind::CovariateBeta { covariate, .. }
            | TermKind::CovariateTimesNestCount { covariate } => Some(covariate),
        }
    }
}

/// Ordered list of utility terms plus the registry of covariate names they
/// reference. Term names are unique; free-parameter order follows term order.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilitySpec {
    terms: Vec<UtilityTerm>,
    covariates: Vec<String>,
}

impl UtilitySpec {
    pub fn builder() -> UtilitySpecBuilder {
        UtilitySpecBuilder {
            terms: Vec::new(),
            covariates: Vec::new(),
        }
    }

    pub fn terms(&self) -> &[UtilityTerm] {
        &self.terms
    }

    /// Covariate names the terms reference, in first-use order.
    pub fn covariates(&self) -> &[String] {
        &self.covariates
    }

    pub fn free_term_count(&self) -> usize {
        self.terms.iter().filter(|t| t.is_free()).count()
    }

    /// The combination whose constant is fixed to zero, if exactly one such
    /// term exists: the reference alternative of the constants.
    pub fn reference_alternative(&self) -> Option<Combination> {
        let mut zero_fixed = self.terms.iter().filter_map(|t| match (&t.kind, t.fixed) {
            (TermKind::Asc { alt }, Some(v)) if v == 0.0 => Some(*alt),
            _ => None,
        });
        match (zero_fixed.next(), zero_fixed.next()) {
            (Some(alt), None) => Some(alt),
            _ => None,
        }
    }

    pub(crate) fn validate(&self, universe: &NestUniverse) -> Result<()> {
        for term in &self.terms {
            match &term.kind {
                TermKind::Asc { alt } => {
                    if (alt.bits() as u32) >> universe.len() != 0 {
                        return Err(Error::domain(format!(
                            "constant {:?} refers to a combination outside the universe",
                            term.name
                        )));
                    }
                }
                TermKind::CovariateBeta { predicate, .. } => predicate.validate(universe)?,
                TermKind::CovariateTimesNestCount { .. } => {}
            }
        }
        Ok(())
    }
}

/// Builds a [`UtilitySpec`] incrementally; covariates referenced by terms are
/// registered automatically.
pub struct UtilitySpecBuilder {
    terms: Vec<UtilityTerm>,
    covariates: Vec<String>,
}

impl UtilitySpecBuilder {
    /// Registers a covariate name without attaching a term to it.
    pub fn covariate(mut self, name: impl Into<String>) -> Self {
        let name = name.into();
        if !self.covariates.contains(&name) {
            self.covariates.push(name);
        }
        self
    }

    fn push(mut self, name: String, kind: TermKind, fixed: Option<f64>) -> Self {
        if let Some(covariate) = match &kind {
            TermKind::CovariateBeta { covariate, .. }
            | TermKind::CovariateTimesNestCount { covariate } => Some(covariate.clone()),
            TermKind::Asc { .. } => None,
        } {
            if !self.covariates.contains(&covariate) {
                self.covariates.push(covariate);
            }
        }
        self.terms.push(UtilityTerm { name, kind, fixed });
        self
    }

    /// Free alternative-specific constant.
    pub fn asc(self, name: impl Into<String>, alt: Combination) -> Self {
        self.push(name.into(), TermKind::Asc { alt }, None)
    }

    /// Constant pinned to a value (use 0.0 for the reference alternative).
    pub fn asc_fixed(self, name: impl Into<String>, alt: Combination, value: f64) -> Self {
        self.push(name.into(), TermKind::Asc { alt }, Some(value))
    }

    /// Free covariate effect on alternatives containing the given nest.
    pub fn beta_contains(
        self,
        name: impl Into<String>,
        covariate: impl Into<String>,
        code: char,
    ) -> Self {
        self.push(
            name.into(),
            TermKind::CovariateBeta {
                covariate: covariate.into(),
                predicate: AltPredicate::Contains(code),
            },
            None,
        )
    }

    /// Pinned covariate effect on alternatives containing the given nest.
    pub fn beta_contains_fixed(
        self,
        name: impl Into<String>,
        covariate: impl Into<String>,
        code: char,
        value: f64,
    ) -> Self {
        self.push(
            name.into(),
            TermKind::CovariateBeta {
                covariate: covariate.into(),
                predicate: AltPredicate::Contains(code),
            },
            Some(value),
        )
    }

    /// Free covariate effect proportional to the alternative's nest count.
    pub fn beta_nest_count(
        self,
        name: impl Into<String>,
        covariate: impl Into<String>,
    ) -> Self {
        self.push(
            name.into(),
            TermKind::CovariateTimesNestCount {
                covariate: covariate.into(),
            },
            None,
        )
    }

    /// Pinned covariate effect proportional to the alternative's nest count.
    pub fn beta_nest_count_fixed(
        self,
        name: impl Into<String>,
        covariate: impl Into<String>,
        value: f64,
    ) -> Self {
        self.push(
            name.into(),
            TermKind::CovariateTimesNestCount {
                covariate: covariate.into(),
            },
            Some(value),
        )
    }

    pub fn build(self) -> Result<UtilitySpec> {
        let mut seen = BTreeSet::new();
        for term in &self.terms {
            if !seen.insert(term.name.clone()) {
                return Err(Error::domain(format!(
                    "duplicate parameter name {:?}",
                    term.name
                )));
            }
        }
        Ok(UtilitySpec {
            terms: self.terms,
            covariates: self.covariates,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_registers_covariates_and_rejects_duplicates() {
        let u = NestUniverse::canonical();
        let w = u.parse_label("W").unwrap();
        let spec = UtilitySpec::builder()
            .asc_fixed("asc_P", u.parse_label("P").unwrap(), 0.0)
            .asc("asc_W", w)
            .beta_contains("b_laptop", "laptop", 'W')
            .beta_nest_count("b_dur", "dur_1h")
            .build()
            .unwrap();
        assert_eq!(spec.covariates(), &["laptop".to_string(), "dur_1h".to_string()]);
        assert_eq!(spec.free_term_count(), 3);
        assert_eq!(spec.reference_alternative(), Some(u.parse_label("P").unwrap()));
        spec.validate(&u).unwrap();

        let dup = UtilitySpec::builder()
            .asc("a", w)
            .beta_contains("a", "laptop", 'W')
            .build();
        assert!(dup.is_err());
    }

    #[test]
    fn predicate_matches_membership() {
        let u = NestUniverse::canonical();
        let lw = u.parse_label("L+W").unwrap();
        assert!(AltPredicate::Contains('W').matches(&u, lw));
        assert!(!AltPredicate::Contains('P').matches(&u, lw));
        assert!(AltPredicate::Contains('X').validate(&u).is_err());
    }
}
