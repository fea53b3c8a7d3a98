//! The cross-nested logit engine: utility specification, nesting structure,
//! probabilities, log-likelihood and analytic gradients.

pub mod data;
pub mod likelihood;
pub mod probability;
pub mod structure;
pub mod utility;

pub use data::{Dataset, Observation};
pub use likelihood::{
    gradient, log_likelihood, log_likelihood_with_gradient, Evaluator, LogLikelihood,
};
pub use probability::cnl_probabilities;
pub use structure::{CnlStructure, ScaleSpec, TOP_SCALE};
pub use utility::{AltPredicate, TermKind, UtilitySpec, UtilitySpecBuilder, UtilityTerm};

use std::collections::{BTreeMap, HashMap};

use crate::choiceset::Combination;
use crate::error::{Error, Result};

/// What a free parameter controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum ParamKind {
    /// Coefficient of the utility term at this index of the specification.
    Term(usize),
    /// Scale of the nest at this universe position.
    Scale(usize),
}

/// Deterministic name/index mapping for the free parameters: utility terms in
/// specification order, then free nest scales in nest order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterLayout {
    names: Vec<String>,
    kinds: Vec<ParamKind>,
    by_name: HashMap<String, usize>,
}

impl ParameterLayout {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn kinds(&self) -> &[ParamKind] {
        &self.kinds
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }
}

/// Dense vector of free-parameter values, laid out per [`ParameterLayout`].
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Self {
        ParameterVector(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<f64>> for ParameterVector {
    fn from(values: Vec<f64>) -> Self {
        ParameterVector(values)
    }
}

/// A complete cross-nested logit model: nesting structure plus utility
/// specification plus the derived parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct CnlModel {
    structure: CnlStructure,
    spec: UtilitySpec,
    layout: ParameterLayout,
}

impl CnlModel {
    pub fn new(structure: CnlStructure, spec: UtilitySpec) -> Result<Self> {
        let universe = structure.choice_set().universe();
        spec.validate(universe)?;
        for term in spec.terms() {
            if let TermKind::Asc { alt } = term.kind() {
                if structure.choice_set().index_of(*alt).is_none() {
                    return Err(Error::domain(format!(
                        "constant {:?} refers to combination {}, which is not in the choice set",
                        term.name(),
                        universe.label(*alt)
                    )));
                }
            }
        }

        let mut names = Vec::new();
        let mut kinds = Vec::new();
        for (t, term) in spec.terms().iter().enumerate() {
            if term.is_free() {
                names.push(term.name().to_string());
                kinds.push(ParamKind::Term(t));
            }
        }
        for nest in structure.free_scales() {
            let name = format!("mu_{}", universe.nest(nest).code());
            if names.contains(&name) {
                return Err(Error::domain(format!(
                    "parameter name {name:?} collides with the scale parameter of nest {}",
                    universe.nest(nest).code()
                )));
            }
            names.push(name);
            kinds.push(ParamKind::Scale(nest));
        }
        let by_name = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Ok(CnlModel {
            structure,
            spec,
            layout: ParameterLayout {
                names,
                kinds,
                by_name,
            },
        })
    }

    pub fn structure(&self) -> &CnlStructure {
        &self.structure
    }

    pub fn spec(&self) -> &UtilitySpec {
        &self.spec
    }

    pub fn layout(&self) -> &ParameterLayout {
        &self.layout
    }

    pub fn free_parameter_count(&self) -> usize {
        self.layout.len()
    }

    /// Default starting point: zero for constants and covariate effects, the
    /// structure's initial values for scales.
    pub fn initial_parameters(&self) -> ParameterVector {
        let values = self
            .layout
            .kinds
            .iter()
            .map(|kind| match kind {
                ParamKind::Term(_) => 0.0,
                ParamKind::Scale(nest) => self.structure.mu()[*nest],
            })
            .collect();
        ParameterVector(values)
    }

    /// Builds a parameter vector from `(name, value)` pairs; every free
    /// parameter must be covered exactly once.
    pub fn parameters_from_named(&self, named: &[(&str, f64)]) -> Result<ParameterVector> {
        let mut values = vec![f64::NAN; self.layout.len()];
        for (name, value) in named {
            let index = self
                .layout
                .index(name)
                .ok_or_else(|| Error::domain(format!("unknown parameter {name:?}")))?;
            if !values[index].is_nan() {
                return Err(Error::domain(format!("parameter {name:?} given twice")));
            }
            values[index] = *value;
        }
        if let Some(missing) = values.iter().position(|v| v.is_nan()) {
            return Err(Error::domain(format!(
                "parameter {:?} has no value",
                self.layout.names[missing]
            )));
        }
        Ok(ParameterVector(values))
    }

    /// Assembles the per-nest scale vector from fixed values and `theta`.
    pub fn scale_values(&self, theta: &ParameterVector) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        let mut mu = self.structure.mu().to_vec();
        for (p, kind) in self.layout.kinds.iter().enumerate() {
            if let ParamKind::Scale(nest) = kind {
                mu[*nest] = theta.values()[p];
            }
        }
        Ok(mu)
    }

    /// Coefficient of each utility term under `theta` (fixed or estimated).
    pub(crate) fn term_coefficients(&self, theta: &ParameterVector) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        let mut coeffs: Vec<f64> = self
            .spec
            .terms()
            .iter()
            .map(|t| t.fixed().unwrap_or(f64::NAN))
            .collect();
        for (p, kind) in self.layout.kinds.iter().enumerate() {
            if let ParamKind::Term(t) = kind {
                coeffs[*t] = theta.values()[p];
            }
        }
        Ok(coeffs)
    }

    fn check_theta(&self, theta: &ParameterVector) -> Result<()> {
        if theta.len() != self.layout.len() {
            return Err(Error::domain(format!(
                "expected {} parameter values, got {}",
                self.layout.len(),
                theta.len()
            )));
        }
        if let Some(bad) = theta.values().iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "parameter {:?} is not finite",
                self.layout.names[bad]
            )));
        }
        Ok(())
    }

    /// How much one term contributes to the utility of `alt` per unit of its
    /// coefficient times covariate (the design value).
    pub(crate) fn term_applicability(&self, term: &UtilityTerm, alt: Combination) -> f64 {
        let universe = self.structure.choice_set().universe();
        match term.kind() {
            TermKind::Asc { alt: target } => {
                if *target == alt {
                    1.0
                } else {
                    0.0
                }
            }
            TermKind::CovariateBeta { predicate, .. } => {
                if predicate.matches(universe, alt) {
                    1.0
                } else {
                    0.0
                }
            }
            TermKind::CovariateTimesNestCount { .. } => alt.size() as f64,
        }
    }

    /// Systematic utility of one alternative for one observation.
    pub fn systematic_utility(
        &self,
        theta: &ParameterVector,
        obs: &Observation,
        alt: Combination,
    ) -> Result<f64> {
        if self.structure.choice_set().index_of(alt).is_none() {
            return Err(Error::domain(format!(
                "combination {} is not in the choice set",
                self.structure.choice_set().universe().label(alt)
            )));
        }
        let coeffs = self.term_coefficients(theta)?;
        let mut v = 0.0;
        for (term, &coeff) in self.spec.terms().iter().zip(&coeffs) {
            let applicability = self.term_applicability(term, alt);
            if applicability == 0.0 {
                continue;
            }
            let design = match term.covariate() {
                None => 1.0,
                Some(name) => obs.covariate(name).ok_or_else(|| {
                    Error::data(format!(
                        "observation {:?} is missing covariate {name:?}",
                        obs.id
                    ))
                })?,
            };
            v += coeff * design * applicability;
        }
        if !v.is_finite() {
            return Err(Error::numeric(format!(
                "systematic utility of {} for observation {:?} is not finite",
                self.structure.choice_set().universe().label(alt),
                obs.id
            )));
        }
        Ok(v)
    }

    /// Systematic utilities of every alternative given covariate values
    /// (no observation required; used by the synthetic generator).
    pub fn utilities_for_covariates(
        &self,
        theta: &ParameterVector,
        covariates: &BTreeMap<String, f64>,
    ) -> Result<Vec<f64>> {
        let coeffs = self.term_coefficients(theta)?;
        let mut v = vec![0.0; self.structure.alternatives()];
        for (term, &coeff) in self.spec.terms().iter().zip(&coeffs) {
            let design = match term.covariate() {
                None => 1.0,
                Some(name) => covariates.get(name).copied().ok_or_else(|| {
                    Error::data(format!("missing covariate {name:?}"))
                })?,
            };
            let scale = coeff * design;
            if scale == 0.0 {
                continue;
            }
            for (i, &alt) in self.structure.choice_set().combinations().iter().enumerate() {
                v[i] += scale * self.term_applicability(term, alt);
            }
        }
        for (i, value) in v.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::numeric(format!(
                    "systematic utility of alternative {i} is not finite"
                )));
            }
        }
        Ok(v)
    }

    /// Choice probabilities for one observation under `theta`.
    pub fn probabilities(
        &self,
        theta: &ParameterVector,
        obs: &Observation,
    ) -> Result<Vec<f64>> {
        let v = self.utilities_for_covariates(theta, &obs.covariates)?;
        let mu = self.scale_values(theta)?;
        let mut ws =
            probability::Workspace::new(self.structure.alternatives(), self.structure.nests());
        if let Some(mask) = &obs.availability {
            if mask.len() != self.structure.alternatives() {
                return Err(Error::data(format!(
                    "observation {:?} has an availability mask of length {}, expected {}",
                    obs.id,
                    mask.len(),
                    self.structure.alternatives()
                )));
            }
            if !mask.iter().any(|&a| a) {
                return Err(Error::domain(format!(
                    "observation {:?} has no available alternative",
                    obs.id
                )));
            }
        }
        probability::evaluate_into(
            &self.structure,
            &mu,
            &v,
            obs.availability.as_deref(),
            &mut ws,
        )?;
        Ok(ws.probs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::choiceset::{enumerate_combinations, NestUniverse};
    use std::collections::BTreeSet;

    fn model() -> CnlModel {
        let u = NestUniverse::canonical();
        let cs = enumerate_combinations(&u, &BTreeSet::new()).unwrap();
        let spec = UtilitySpec::builder()
            .asc_fixed("asc_P", u.parse_label("P").unwrap(), 0.0)
            .asc("asc_L", u.parse_label("L").unwrap())
            .beta_contains("b_laptop", "laptop", 'W')
            .beta_nest_count("b_dur", "dur_1h")
            .build()
            .unwrap();
        CnlModel::new(CnlStructure::with_default_scales(cs).unwrap(), spec).unwrap()
    }

    #[test]
    fn layout_orders_terms_then_scales() {
        let m = model();
        assert_eq!(
            m.layout().names(),
            &["asc_L", "b_laptop", "b_dur", "mu_P", "mu_L", "mu_I", "mu_W", "mu_O"]
        );
        assert_eq!(m.free_parameter_count(), 8);
        let theta = m.initial_parameters();
        assert_eq!(theta.values()[..3], [0.0, 0.0, 0.0]);
        assert_eq!(theta.values()[3..], [1.5; 5]);
    }

    #[test]
    fn systematic_utility_matches_hand_evaluation() {
        let m = model();
        let u = NestUniverse::canonical();
        let theta = m
            .parameters_from_named(&[
                ("asc_L", 0.7),
                ("b_laptop", 1.2),
                ("b_dur", 0.2),
                ("mu_P", 1.5),
                ("mu_L", 1.5),
                ("mu_I", 1.5),
                ("mu_W", 1.5),
                ("mu_O", 1.5),
            ])
            .unwrap();
        let obs = Observation::new("1", u.parse_label("P").unwrap())
            .with_covariate("laptop", 1.0)
            .with_covariate("dur_1h", 1.0);

        // Single constant applies only to its own alternative.
        let l = u.parse_label("L").unwrap();
        let v = m.systematic_utility(&theta, &obs, l).unwrap();
        // asc_L + b_dur * 1 * |{L}| = 0.7 + 0.2
        assert!((v - 0.9).abs() < 1e-12);

        // Laptop effect applies only where the predicate holds.
        let lw = u.parse_label("L+W").unwrap();
        let v = m.systematic_utility(&theta, &obs, lw).unwrap();
        // asc terms absent, laptop 1.2, dur 0.2 * 2 nests
        assert!((v - 1.6).abs() < 1e-12);

        // Reference constant contributes exactly zero.
        let p = u.parse_label("P").unwrap();
        let v = m.systematic_utility(&theta, &obs, p).unwrap();
        assert!((v - 0.2).abs() < 1e-12);
    }

    #[test]
    fn missing_covariate_is_a_data_error() {
        let m = model();
        let u = NestUniverse::canonical();
        let obs = Observation::new("42", u.parse_label("P").unwrap());
        let theta = m.initial_parameters();
        let err = m
            .systematic_utility(&theta, &obs, u.parse_label("L+W").unwrap())
            .unwrap_err();
        assert_eq!(err.category(), "data");
        assert!(err.to_string().contains("42"));
    }

    #[test]
    fn named_parameters_must_cover_layout() {
        let m = model();
        assert!(m.parameters_from_named(&[("asc_L", 1.0)]).is_err());
        assert!(m
            .parameters_from_named(&[("nonexistent", 1.0)])
            .is_err());
    }
}
