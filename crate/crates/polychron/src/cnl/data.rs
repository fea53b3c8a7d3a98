//! Observations and datasets.

use std::collections::{BTreeMap, BTreeSet};

use crate::choiceset::{ChoiceSet, Combination};
use crate::error::{Error, Result};

/// One respondent: the chosen combination, covariate values and an optional
/// availability mask over the choice set (`None` means everything available).
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub id: String,
    pub chosen: Combination,
    pub covariates: BTreeMap<String, f64>,
    pub availability: Option<Vec<bool>>,
}

impl Observation {
    pub fn new(id: impl Into<String>, chosen: Combination) -> Self {
        Observation {
            id: id.into(),
            chosen,
            covariates: BTreeMap::new(),
            availability: None,
        }
    }

    pub fn with_covariate(mut self, name: impl Into<String>, value: f64) -> Self {
        self.covariates.insert(name.into(), value);
        self
    }

    pub fn with_availability(mut self, availability: Vec<bool>) -> Self {
        self.availability = Some(availability);
        self
    }

    pub fn covariate(&self, name: &str) -> Option<f64> {
        self.covariates.get(name).copied()
    }

    /// Whether the alternative at `index` is available to this respondent.
    pub fn is_available(&self, index: usize) -> bool {
        match &self.availability {
            None => true,
            Some(mask) => mask.get(index).copied().unwrap_or(false),
        }
    }

    /// Number of available alternatives out of `total`.
    pub fn available_count(&self, total: usize) -> usize {
        match &self.availability {
            None => total,
            Some(mask) => mask.iter().filter(|&&a| a).count(),
        }
    }

    /// True when every covariate in `names` is present.
    pub fn has_covariates<'a>(&self, names: impl IntoIterator<Item = &'a str>) -> bool {
        names.into_iter().all(|n| self.covariates.contains_key(n))
    }
}

/// An ordered, nonempty collection of observations with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    observations: Vec<Observation>,
    provenance: String,
}

impl Dataset {
    pub fn new(observations: Vec<Observation>, provenance: impl Into<String>) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::domain("dataset must contain at least one observation"));
        }
        let mut seen = BTreeSet::new();
        for obs in &observations {
            if !seen.insert(obs.id.as_str()) {
                return Err(Error::data(format!("duplicate observation id {:?}", obs.id)));
            }
        }
        Ok(Dataset {
            observations,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn iter(&self) -> impl Iterator<Item = &Observation> {
        self.observations.iter()
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// Checks every observation against a choice set: the chosen combination
    /// must be in the set and available, and any availability mask must match
    /// the set's size.
    pub fn validate_against(&self, choice_set: &ChoiceSet) -> Result<()> {
        for obs in &self.observations {
            let index = choice_set.index_of(obs.chosen).ok_or_else(|| {
                Error::data(format!(
                    "observation {:?} chose {}, which is not in the choice set",
                    obs.id,
                    choice_set.universe().label(obs.chosen)
                ))
            })?;
            if let Some(mask) = &obs.availability {
                if mask.len() != choice_set.len() {
                    return Err(Error::data(format!(
                        "observation {:?} has an availability mask of length {}, expected {}",
                        obs.id,
                        mask.len(),
                        choice_set.len()
                    )));
                }
            }
            if !obs.is_available(index) {
                return Err(Error::data(format!(
                    "observation {:?} chose {} but marks it unavailable",
                    obs.id,
                    choice_set.universe().label(obs.chosen)
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::choiceset::{enumerate_combinations, NestUniverse};

    #[test]
    fn dataset_rejects_duplicates_and_bad_choices() {
        let u = NestUniverse::canonical();
        let cs = enumerate_combinations(&u, &BTreeSet::new()).unwrap();
        let p = u.parse_label("P").unwrap();

        let dup = Dataset::new(
            vec![Observation::new("1", p), Observation::new("1", p)],
            "test",
        );
        assert!(dup.is_err());

        let mut mask = vec![true; 31];
        mask[0] = false; // P is index 0
        let ds = Dataset::new(
            vec![Observation::new("1", p).with_availability(mask)],
            "test",
        )
        .unwrap();
        let err = ds.validate_against(&cs).unwrap_err();
        assert!(err.to_string().contains("unavailable"));

        assert!(Dataset::new(vec![], "test").is_err());
    }
}
