//! Holdout validation: sample splitting, predicted-vs-observed frequencies,
//! the chi-square goodness-of-fit test and parameter-group summaries.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::cnl::{CnlModel, Dataset, Evaluator, ParameterVector};
use crate::error::{Error, Result};
use crate::estimation::EstimationResult;

/// Aggregate goodness-of-fit comparison over a set of cells.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ValidationReport {
    /// Observed choice counts per combination (canonical order).
    pub observed: Vec<u64>,
    /// Model-expected counts per combination.
    pub expected: Vec<f64>,
    /// The cell indices the statistic was computed over.
    pub cells: Vec<usize>,
    pub statistic: f64,
    pub degrees_of_freedom: usize,
    pub critical_95: f64,
    pub critical_99: f64,
    pub reject_95: bool,
    pub reject_99: bool,
    /// Cells with expected count below 5, where the asymptotic
    /// approximation is doubtful. Merging is left to the caller because it
    /// changes the degrees of freedom.
    pub low_expected_cells: Vec<usize>,
}

/// A [`ValidationReport`] plus how many holdout observations were usable
/// (observations missing covariates the model needs are skipped, not
/// imputed).
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct HoldoutValidation {
    pub report: ValidationReport,
    pub usable_observations: usize,
    pub skipped_observations: usize,
}

/// Median and quartiles of one parameter group.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct GroupSummary {
    pub group: String,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

/// Uniform draw from `0..bound` by rejection, stable across platforms.
fn bounded(rng: &mut ChaCha8Rng, bound: u64) -> u64 {
    let threshold = u64::MAX - u64::MAX % bound;
    loop {
        let v = rng.next_u64();
        if v < threshold {
            return v % bound;
        }
    }
}

/// Splits a dataset into an estimation part and a validation part.
///
/// `fraction` is the validation share; the validation size is `N * fraction`
/// rounded to the nearest integer. The partition is exhaustive, disjoint,
/// deterministic in `seed`, and preserves the original within-part order.
pub fn split_dataset(
    dataset: &Dataset,
    fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&fraction) || fraction == 0.0 {
        return Err(Error::domain(format!(
            "holdout fraction must be strictly between 0 and 1, got {fraction}"
        )));
    }
    let n = dataset.len();
    let validation_size = (n as f64 * fraction).round() as usize;
    if validation_size == 0 || validation_size == n {
        return Err(Error::domain(format!(
            "fraction {fraction} would leave an empty part for {n} observations"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = bounded(&mut rng, (i + 1) as u64) as usize;
        indices.swap(i, j);
    }
    let mut in_validation = vec![false; n];
    for &i in indices.iter().take(validation_size) {
        in_validation[i] = true;
    }
    let mut estimation = Vec::with_capacity(n - validation_size);
    let mut validation = Vec::with_capacity(validation_size);
    for (i, obs) in dataset.iter().enumerate() {
        if in_validation[i] {
            validation.push(obs.clone());
        } else {
            estimation.push(obs.clone());
        }
    }
    Ok((
        Dataset::new(
            estimation,
            format!("{} (estimation split)", dataset.provenance()),
        )?,
        Dataset::new(
            validation,
            format!("{} (validation split)", dataset.provenance()),
        )?,
    ))
}

/// Expected choice counts per combination: `E_i = sum_n P_n(i)`.
pub fn predicted_frequencies(
    model: &CnlModel,
    theta: &ParameterVector,
    dataset: &Dataset,
) -> Result<Vec<f64>> {
    Evaluator::new(model, dataset)?.accumulate_probabilities(theta)
}

/// Observed choice counts per combination in canonical order. Availability
/// masks do not affect counting.
pub fn observed_frequencies(
    dataset: &Dataset,
    choice_set: &crate::choiceset::ChoiceSet,
) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; choice_set.len()];
    for obs in dataset.iter() {
        let index = choice_set.index_of(obs.chosen).ok_or_else(|| {
            Error::data(format!(
                "observation {:?} chose a combination outside the choice set",
                obs.id
            ))
        })?;
        counts[index] += 1;
    }
    Ok(counts)
}

/// Chi-square critical value at the given upper-tail level.
fn chi_square_critical(df: usize, level: f64) -> Result<f64> {
    let dist = ChiSquared::new(df as f64)
        .map_err(|e| Error::domain(format!("invalid degrees of freedom {df}: {e}")))?;
    Ok(dist.inverse_cdf(level))
}

/// Pearson chi-square test of observed vs expected counts over `cells`.
///
/// `chi2 = sum_cells (O_i - E_i)^2 / E_i` with `df = |cells| - 1`. Cells with
/// zero expected count are a domain error (merge or drop them first); cells
/// with expected count below 5 are flagged, not merged.
pub fn chi_square_test(
    observed: &[u64],
    expected: &[f64],
    cells: &[usize],
) -> Result<ValidationReport> {
    if observed.len() != expected.len() {
        return Err(Error::domain(format!(
            "observed and expected lengths differ: {} vs {}",
            observed.len(),
            expected.len()
        )));
    }
    if cells.len() < 2 {
        return Err(Error::domain(
            "the test needs at least two cells in range",
        ));
    }
    let mut statistic = 0.0;
    let mut low_expected_cells = Vec::new();
    for &i in cells {
        let e = *expected.get(i).ok_or_else(|| {
            Error::domain(format!("cell index {i} is out of range"))
        })?;
        let o = observed[i] as f64;
        if e <= 0.0 {
            return Err(Error::domain(format!(
                "expected count of cell {i} is {e}; merge or drop empty cells before testing"
            )));
        }
        if e < 5.0 {
            low_expected_cells.push(i);
        }
        statistic += (o - e) * (o - e) / e;
    }
    let degrees_of_freedom = cells.len() - 1;
    let critical_95 = chi_square_critical(degrees_of_freedom, 0.95)?;
    let critical_99 = chi_square_critical(degrees_of_freedom, 0.99)?;
    Ok(ValidationReport {
        observed: observed.to_vec(),
        expected: expected.to_vec(),
        cells: cells.to_vec(),
        statistic,
        degrees_of_freedom,
        critical_95,
        critical_99,
        reject_95: statistic > critical_95,
        reject_99: statistic > critical_99,
        low_expected_cells,
    })
}

/// Runs the full holdout comparison: keeps the observations that carry every
/// covariate the model references (mirroring surveys where not everyone
/// answers everything), tallies observed and expected frequencies over them,
/// and applies the chi-square test on `cells` (all cells when `None`).
pub fn validate_holdout(
    model: &CnlModel,
    theta: &ParameterVector,
    dataset: &Dataset,
    cells: Option<&[usize]>,
) -> Result<HoldoutValidation> {
    let needed: Vec<&str> = model.spec().covariates().iter().map(|s| s.as_str()).collect();
    let usable: Vec<_> = dataset
        .iter()
        .filter(|obs| obs.has_covariates(needed.iter().copied()))
        .cloned()
        .collect();
    let skipped_observations = dataset.len() - usable.len();
    let usable_observations = usable.len();
    if usable.is_empty() {
        return Err(Error::data(
            "no observation carries all covariates the model references",
        ));
    }
    let usable = Dataset::new(usable, dataset.provenance().to_string())?;
    let choice_set = model.structure().choice_set();
    let observed = observed_frequencies(&usable, choice_set)?;
    let expected = predicted_frequencies(model, theta, &usable)?;
    let all_cells: Vec<usize> = (0..choice_set.len()).collect();
    let report = chi_square_test(&observed, &expected, cells.unwrap_or(&all_cells))?;
    Ok(HoldoutValidation {
        report,
        usable_observations,
        skipped_observations,
    })
}

/// Quantile by linear interpolation of order statistics (the convention
/// where `q(p)` interpolates between the floor and ceiling of `(n-1) p`).
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Median and interquartile range of point estimates per named group, in the
/// given group order.
pub fn param_group_summary(
    result: &EstimationResult,
    groups: &[(String, Vec<String>)],
) -> Result<Vec<GroupSummary>> {
    groups
        .iter()
        .map(|(group, names)| {
            if names.is_empty() {
                return Err(Error::domain(format!("group {group:?} is empty")));
            }
            let mut values = names
                .iter()
                .map(|name| {
                    result
                        .parameter(name)
                        .map(|p| p.estimate)
                        .ok_or_else(|| {
                            Error::domain(format!(
                                "group {group:?} names unknown parameter {name:?}"
                            ))
                        })
                })
                .collect::<Result<Vec<f64>>>()?;
            values.sort_by(|a, b| a.partial_cmp(b).expect("finite estimates"));
            Ok(GroupSummary {
                group: group.clone(),
                median: quantile(&values, 0.5),
                q1: quantile(&values, 0.25),
                q3: quantile(&values, 0.75),
            })
        })
        .collect()
}
