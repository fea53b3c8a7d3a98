//! Log-likelihood and analytic gradients over a dataset.
//!
//! Evaluation is chunked: observations are processed in fixed-size blocks,
//! blocks may run on any number of threads, and the per-observation results
//! are always combined in the same order with a pairwise reduction. The
//! log-likelihood is therefore bit-identical across runs and thread counts.

use rayon::prelude::*;

use crate::cnl::data::Dataset;
use crate::cnl::probability::{chosen_log_probability, evaluate_into, Workspace};
use crate::cnl::{CnlModel, ParamKind, ParameterVector};
use crate::error::{Error, Result};

/// Fixed block size of the deterministic reduction.
const CHUNK: usize = 512;

/// A log-likelihood value plus diagnostics for observations whose chosen
/// probability underflowed to zero (in which case `value` is `-inf`).
#[derive(Debug, Clone, PartialEq)]
pub struct LogLikelihood {
    pub value: f64,
    pub underflow_ids: Vec<String>,
}

/// Deterministic pairwise summation.
pub(crate) fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n => {
            let mid = n / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}

fn pairwise_vector_sum(mut vectors: Vec<Vec<f64>>) -> Vec<f64> {
    if vectors.is_empty() {
        return Vec::new();
    }
    while vectors.len() > 1 {
        let mut next = Vec::with_capacity(vectors.len().div_ceil(2));
        let mut iter = vectors.into_iter();
        while let Some(mut a) = iter.next() {
            if let Some(b) = iter.next() {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += y;
                }
            }
            next.push(a);
        }
        vectors = next;
    }
    vectors.pop().unwrap()
}

struct ChunkOut {
    log_probs: Vec<f64>,
    underflow: Vec<String>,
    gradient: Option<Vec<f64>>,
}

/// A model/dataset pair compiled for repeated likelihood evaluation: design
/// values and term applicabilities are laid out densely once, so estimation
/// iterations only pay for the probability math.
pub struct Evaluator<'a> {
    model: &'a CnlModel,
    dataset: &'a Dataset,
    /// `x[n * T + t]`: covariate value of term `t` for observation `n`
    /// (1 for constants).
    x: Vec<f64>,
    /// `a[t * J + i]`: how term `t` loads on alternative `i`.
    applicability: Vec<f64>,
    chosen: Vec<usize>,
}

impl<'a> Evaluator<'a> {
    pub fn new(model: &'a CnlModel, dataset: &'a Dataset) -> Result<Self> {
        let choice_set = model.structure().choice_set();
        dataset.validate_against(choice_set)?;
        let terms = model.spec().terms();
        let j = model.structure().alternatives();
        let t_count = terms.len();

        let mut applicability = vec![0.0; t_count * j];
        for (t, term) in terms.iter().enumerate() {
            for (i, &alt) in choice_set.combinations().iter().enumerate() {
                applicability[t * j + i] = model.term_applicability(term, alt);
            }
        }

        let mut x = vec![0.0; dataset.len() * t_count];
        let mut chosen = Vec::with_capacity(dataset.len());
        for (n, obs) in dataset.iter().enumerate() {
            for (t, term) in terms.iter().enumerate() {
                x[n * t_count + t] = match term.covariate() {
                    None => 1.0,
                    Some(name) => obs.covariate(name).ok_or_else(|| {
                        Error::data(format!(
                            "observation {:?} is missing covariate {name:?}",
                            obs.id
                        ))
                    })?,
                };
            }
            chosen.push(
                choice_set
                    .index_of(obs.chosen)
                    .expect("validated against choice set"),
            );
        }
        Ok(Evaluator {
            model,
            dataset,
            x,
            applicability,
            chosen,
        })
    }

    pub fn dataset(&self) -> &Dataset {
        self.dataset
    }

    fn chunk(
        &self,
        range: std::ops::Range<usize>,
        coeffs: &[f64],
        mu: &[f64],
        want_gradient: bool,
    ) -> Result<ChunkOut> {
        let structure = self.model.structure();
        let j = structure.alternatives();
        let m = structure.nests();
        let t_count = self.model.spec().terms().len();
        let p_count = self.model.free_parameter_count();

        let mut ws = Workspace::new(j, m);
        let mut v = vec![0.0; j];
        let mut dv = vec![0.0; j];
        let mut r = vec![0.0; m];
        let mut log_probs = Vec::with_capacity(range.len());
        let mut underflow = Vec::new();
        let mut gradient = if want_gradient {
            Some(vec![0.0; p_count])
        } else {
            None
        };

        for n in range {
            let obs = &self.dataset.observations()[n];
            let availability = obs.availability.as_deref();
            let x_row = &self.x[n * t_count..(n + 1) * t_count];

            v.fill(0.0);
            for (t, &xv) in x_row.iter().enumerate() {
                let scale = coeffs[t] * xv;
                if scale != 0.0 {
                    let a_row = &self.applicability[t * j..(t + 1) * j];
                    for (vi, &ai) in v.iter_mut().zip(a_row) {
                        *vi += scale * ai;
                    }
                }
            }
            for (i, &vi) in v.iter().enumerate() {
                let avail = availability.map_or(true, |mask| mask[i]);
                if avail && !vi.is_finite() {
                    return Err(Error::numeric(format!(
                        "systematic utility of alternative {i} for observation {:?} \
                         is not finite",
                        obs.id
                    )));
                }
            }

            evaluate_into(structure, mu, &v, availability, &mut ws)?;
            let chosen = self.chosen[n];
            let lnp = chosen_log_probability(structure, &ws, chosen);
            log_probs.push(lnp);
            if lnp == f64::NEG_INFINITY {
                underflow.push(obs.id.clone());
                continue;
            }

            let Some(grad) = gradient.as_mut() else {
                continue;
            };

            // Posterior nest shares of the chosen alternative.
            for nest in 0..m {
                let t_c = ws.t[nest * j + chosen];
                r[nest] = if t_c > f64::NEG_INFINITY && ws.log_w[nest] > f64::NEG_INFINITY {
                    (ws.log_w[nest] + t_c - ws.log_s[nest] - lnp).exp()
                } else {
                    0.0
                };
            }

            // d lnP(chosen) / d V_i = sum_m R_m [(1-mu_m) q_im + mu_m 1{i=chosen}] - P(i).
            dv.fill(0.0);
            let mut r_mu = 0.0;
            for nest in 0..m {
                if ws.log_w[nest] == f64::NEG_INFINITY {
                    continue;
                }
                r_mu += r[nest] * mu[nest];
                let coeff = r[nest] * (1.0 - mu[nest]);
                if coeff != 0.0 {
                    let t_row = &ws.t[nest * j..(nest + 1) * j];
                    for &i in structure.nest_members(nest) {
                        if t_row[i] > f64::NEG_INFINITY {
                            dv[i] += coeff * (t_row[i] - ws.log_s[nest]).exp();
                        }
                    }
                }
            }
            dv[chosen] += r_mu;
            for (dvi, &p) in dv.iter_mut().zip(&ws.probs) {
                *dvi -= p;
            }

            for (p, kind) in self.model.layout().kinds().iter().enumerate() {
                match *kind {
                    ParamKind::Term(t) => {
                        let a_row = &self.applicability[t * j..(t + 1) * j];
                        let mut fold = 0.0;
                        for (&ai, &dvi) in a_row.iter().zip(&dv) {
                            fold += ai * dvi;
                        }
                        grad[p] += x_row[t] * fold;
                    }
                    ParamKind::Scale(nest) => {
                        let log_s = ws.log_s[nest];
                        if log_s == f64::NEG_INFINITY {
                            continue;
                        }
                        let scale = mu[nest];
                        let t_row = &ws.t[nest * j..(nest + 1) * j];
                        // E_m = sum_i q_im t_im / mu_m.
                        let mut e = 0.0;
                        for &i in structure.nest_members(nest) {
                            if t_row[i] > f64::NEG_INFINITY {
                                e += (t_row[i] - log_s).exp() * (t_row[i] / scale);
                            }
                        }
                        let w = ws.log_w[nest].exp();
                        let denom_part = w * (e / scale - log_s / (scale * scale));
                        let numer_part = if r[nest] > 0.0 {
                            r[nest]
                                * (-log_s / (scale * scale)
                                    + (1.0 / scale - 1.0) * e
                                    + t_row[chosen] / scale)
                        } else {
                            0.0
                        };
                        grad[p] += numer_part - denom_part;
                    }
                }
            }
        }
        Ok(ChunkOut {
            log_probs,
            underflow,
            gradient,
        })
    }

    fn evaluate(
        &self,
        theta: &ParameterVector,
        want_gradient: bool,
    ) -> Result<(LogLikelihood, Option<Vec<f64>>)> {
        let coeffs = self.model.term_coefficients(theta)?;
        let mu = self.model.scale_values(theta)?;
        let n = self.dataset.len();
        let ranges: Vec<std::ops::Range<usize>> = (0..n)
            .step_by(CHUNK)
            .map(|start| start..(start + CHUNK).min(n))
            .collect();
        let outputs: Vec<ChunkOut> = ranges
            .into_par_iter()
            .map(|range| self.chunk(range, &coeffs, &mu, want_gradient))
            .collect::<Result<_>>()?;

        let mut log_probs = Vec::with_capacity(n);
        let mut underflow_ids = Vec::new();
        let mut gradients = Vec::new();
        for out in outputs {
            log_probs.extend_from_slice(&out.log_probs);
            underflow_ids.extend(out.underflow);
            if let Some(g) = out.gradient {
                gradients.push(g);
            }
        }
        let value = pairwise_sum(&log_probs);
        let gradient = want_gradient.then(|| pairwise_vector_sum(gradients));
        Ok((
            LogLikelihood {
                value,
                underflow_ids,
            },
            gradient,
        ))
    }

    /// The dataset log-likelihood at `theta`.
    pub fn log_likelihood(&self, theta: &ParameterVector) -> Result<LogLikelihood> {
        Ok(self.evaluate(theta, false)?.0)
    }

    /// Log-likelihood and its gradient with respect to the free parameters.
    pub fn log_likelihood_with_gradient(
        &self,
        theta: &ParameterVector,
    ) -> Result<(LogLikelihood, Vec<f64>)> {
        let (ll, gradient) = self.evaluate(theta, true)?;
        Ok((ll, gradient.expect("gradient requested")))
    }

    /// Sum of choice probabilities over observations, per alternative:
    /// the expected frequencies `E_i = sum_n P_n(i)`.
    pub fn accumulate_probabilities(&self, theta: &ParameterVector) -> Result<Vec<f64>> {
        let coeffs = self.model.term_coefficients(theta)?;
        let mu = self.model.scale_values(theta)?;
        let structure = self.model.structure();
        let j = structure.alternatives();
        let t_count = self.model.spec().terms().len();
        let n = self.dataset.len();
        let ranges: Vec<std::ops::Range<usize>> = (0..n)
            .step_by(CHUNK)
            .map(|start| start..(start + CHUNK).min(n))
            .collect();
        let chunks: Vec<Vec<f64>> = ranges
            .into_par_iter()
            .map(|range| -> Result<Vec<f64>> {
                let mut ws = Workspace::new(j, structure.nests());
                let mut v = vec![0.0; j];
                let mut acc = vec![0.0; j];
                for n in range {
                    let obs = &self.dataset.observations()[n];
                    let x_row = &self.x[n * t_count..(n + 1) * t_count];
                    v.fill(0.0);
                    for (t, &xv) in x_row.iter().enumerate() {
                        let scale = coeffs[t] * xv;
                        if scale != 0.0 {
                            let a_row = &self.applicability[t * j..(t + 1) * j];
                            for (vi, &ai) in v.iter_mut().zip(a_row) {
                                *vi += scale * ai;
                            }
                        }
                    }
                    evaluate_into(structure, &mu, &v, obs.availability.as_deref(), &mut ws)?;
                    for (a, &p) in acc.iter_mut().zip(&ws.probs) {
                        *a += p;
                    }
                }
                Ok(acc)
            })
            .collect::<Result<_>>()?;
        Ok(pairwise_vector_sum(chunks))
    }
}

/// Log-likelihood of `dataset` under `model` at `theta`.
///
/// Returns `-inf` (with the offending observation ids) if any chosen
/// probability underflows to zero; callers must not clamp.
pub fn log_likelihood(
    model: &CnlModel,
    theta: &ParameterVector,
    dataset: &Dataset,
) -> Result<LogLikelihood> {
    Evaluator::new(model, dataset)?.log_likelihood(theta)
}

/// Analytic gradient of the log-likelihood with respect to the free
/// parameters (empty when everything is fixed).
pub fn gradient(
    model: &CnlModel,
    theta: &ParameterVector,
    dataset: &Dataset,
) -> Result<Vec<f64>> {
    Ok(Evaluator::new(model, dataset)?
        .log_likelihood_with_gradient(theta)?
        .1)
}

/// Log-likelihood and gradient in one pass.
pub fn log_likelihood_with_gradient(
    model: &CnlModel,
    theta: &ParameterVector,
    dataset: &Dataset,
) -> Result<(LogLikelihood, Vec<f64>)> {
    Evaluator::new(model, dataset)?.log_likelihood_with_gradient(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::choiceset::{enumerate_combinations, Nest, NestUniverse};
    use crate::cnl::data::Observation;
    use crate::cnl::structure::{CnlStructure, ScaleSpec};
    use crate::cnl::utility::UtilitySpec;
    use std::collections::BTreeSet;

    /// Two alternatives in two singleton nests (multinomial logit).
    fn binary_universe() -> (NestUniverse, CnlStructure) {
        let u = NestUniverse::new(vec![Nest::new('A', "first"), Nest::new('B', "second")])
            .unwrap();
        let mut exclusions = BTreeSet::new();
        exclusions.insert(u.parse_label("A+B").unwrap());
        let cs = enumerate_combinations(&u, &exclusions).unwrap();
        (u.clone(), CnlStructure::multinomial(cs).unwrap())
    }

    fn cross_nested_instance() -> (NestUniverse, CnlModel) {
        let u = NestUniverse::new(vec![Nest::new('A', "first"), Nest::new('B', "second")])
            .unwrap();
        let cs = enumerate_combinations(&u, &BTreeSet::new()).unwrap();
        let structure =
            CnlStructure::new(cs, vec![ScaleSpec::fixed(2.0), ScaleSpec::fixed(2.0)]).unwrap();
        let spec = UtilitySpec::builder().build().unwrap();
        (u.clone(), CnlModel::new(structure, spec).unwrap())
    }

    #[test]
    fn equal_utilities_give_n_log_half() {
        let (u, structure) = binary_universe();
        let spec = UtilitySpec::builder().build().unwrap();
        let model = CnlModel::new(structure, spec).unwrap();
        let a = u.parse_label("A").unwrap();
        let obs: Vec<Observation> = (0..4).map(|i| Observation::new(format!("{i}"), a)).collect();
        let dataset = Dataset::new(obs, "test").unwrap();
        let theta = model.initial_parameters();
        let ll = log_likelihood(&model, &theta, &dataset).unwrap();
        assert!((ll.value - 4.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!((ll.value + 2.7726).abs() < 1e-4);
        assert!(ll.underflow_ids.is_empty());
    }

    #[test]
    fn uniform_31_alternative_model() {
        let u = NestUniverse::canonical();
        let cs = enumerate_combinations(&u, &BTreeSet::new()).unwrap();
        let structure = CnlStructure::multinomial(cs).unwrap();
        let model = CnlModel::new(structure, UtilitySpec::builder().build().unwrap()).unwrap();
        let p = u.parse_label("P").unwrap();
        let dataset = Dataset::new(
            (0..100).map(|i| Observation::new(format!("{i}"), p)).collect(),
            "test",
        )
        .unwrap();
        let ll = log_likelihood(&model, &model.initial_parameters(), &dataset).unwrap();
        assert!((ll.value - (-100.0 * 31.0f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn composes_with_the_probability_oracle() {
        // The (0.4, 0.4, 0.2) instance: choosing the cross-nested alternative
        // contributes ln 0.2.
        let (u, model) = cross_nested_instance();
        let ab = u.parse_label("A+B").unwrap();
        let dataset = Dataset::new(vec![Observation::new("1", ab)], "test").unwrap();
        let ll = log_likelihood(&model, &model.initial_parameters(), &dataset).unwrap();
        assert!((ll.value - 0.2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn mnl_score_is_choice_minus_probability() {
        let (u, structure) = binary_universe();
        let a = u.parse_label("A").unwrap();
        let spec = UtilitySpec::builder().asc("asc_A", a).build().unwrap();
        let model = CnlModel::new(structure, spec).unwrap();
        let dataset = Dataset::new(vec![Observation::new("1", a)], "test").unwrap();
        let theta = ParameterVector::new(vec![0.0]);
        let g = gradient(&model, &theta, &dataset).unwrap();
        assert_eq!(g.len(), 1);
        assert!((g[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn fixed_only_specification_has_empty_gradient() {
        let (u, model) = cross_nested_instance();
        let ab = u.parse_label("A+B").unwrap();
        let dataset = Dataset::new(vec![Observation::new("1", ab)], "test").unwrap();
        let g = gradient(&model, &model.initial_parameters(), &dataset).unwrap();
        assert!(g.is_empty());
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let u = NestUniverse::canonical();
        let cs = enumerate_combinations(&u, &BTreeSet::new()).unwrap();
        let structure = CnlStructure::with_default_scales(cs.clone()).unwrap();
        let spec = UtilitySpec::builder()
            .asc_fixed("asc_P", u.parse_label("P").unwrap(), 0.0)
            .asc("asc_L", u.parse_label("L").unwrap())
            .asc("asc_LW", u.parse_label("L+W").unwrap())
            .beta_contains("b_laptop", "laptop", 'W')
            .beta_nest_count("b_dur", "dur_1h")
            .build()
            .unwrap();
        let model = CnlModel::new(structure, spec).unwrap();

        // Deterministic synthetic observations with availability masks.
        let mut state = 12345u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let combos = cs.combinations().to_vec();
        let mut observations = Vec::new();
        for i in 0..40 {
            let chosen_index = (next() * 31.0) as usize % 31;
            let mut mask = vec![true; 31];
            for (k, slot) in mask.iter_mut().enumerate() {
                if k != chosen_index && next() < 0.2 {
                    *slot = false;
                }
            }
            observations.push(
                Observation::new(format!("{i}"), combos[chosen_index])
                    .with_covariate("laptop", if next() < 0.5 { 1.0 } else { 0.0 })
                    .with_covariate("dur_1h", if next() < 0.5 { 1.0 } else { 0.0 })
                    .with_availability(mask),
            );
        }
        let dataset = Dataset::new(observations, "test").unwrap();
        let theta = model
            .parameters_from_named(&[
                ("asc_L", 0.3),
                ("asc_LW", -0.4),
                ("b_laptop", 0.8),
                ("b_dur", 0.15),
                ("mu_P", 1.6),
                ("mu_L", 2.1),
                ("mu_I", 1.2),
                ("mu_W", 1.05),
                ("mu_O", 1.4),
            ])
            .unwrap();

        let evaluator = Evaluator::new(&model, &dataset).unwrap();
        let (_, analytic) = evaluator.log_likelihood_with_gradient(&theta).unwrap();
        for p in 0..theta.len() {
            let h = 1e-5 * theta.values()[p].abs().max(1.0);
            let mut plus = theta.clone();
            plus.values_mut()[p] += h;
            let mut minus = theta.clone();
            minus.values_mut()[p] -= h;
            let fd = (evaluator.log_likelihood(&plus).unwrap().value
                - evaluator.log_likelihood(&minus).unwrap().value)
                / (2.0 * h);
            let denom = fd.abs().max(analytic[p].abs()).max(1e-8);
            assert!(
                ((analytic[p] - fd) / denom).abs() < 1e-6,
                "parameter {}: analytic {} vs fd {}",
                model.layout().names()[p],
                analytic[p],
                fd
            );
        }
    }

    #[test]
    fn underflowing_choice_reports_diagnostics() {
        let (u, model) = cross_nested_instance();
        let spec = UtilitySpec::builder()
            .asc("asc_AB", u.parse_label("A+B").unwrap())
            .build()
            .unwrap();
        let model = CnlModel::new(model.structure().clone(), spec).unwrap();
        let ab = u.parse_label("A+B").unwrap();
        let dataset = Dataset::new(
            vec![Observation::new("only", ab)],
            "test",
        )
        .unwrap();
        // A constant of -1e308 pushes the scaled utility to -inf.
        let theta = ParameterVector::new(vec![-1e308]);
        let ll = log_likelihood(&model, &theta, &dataset).unwrap();
        assert_eq!(ll.value, f64::NEG_INFINITY);
        assert_eq!(ll.underflow_ids, vec!["only".to_string()]);
    }

    #[test]
    fn bit_identical_across_thread_counts() {
        let u = NestUniverse::canonical();
        let cs = enumerate_combinations(&u, &BTreeSet::new()).unwrap();
        let structure = CnlStructure::with_default_scales(cs.clone()).unwrap();
        let spec = UtilitySpec::builder()
            .asc("asc_L", u.parse_label("L").unwrap())
            .build()
            .unwrap();
        let model = CnlModel::new(structure, spec).unwrap();
        let combos = cs.combinations().to_vec();
        let dataset = Dataset::new(
            (0..2000)
                .map(|i| Observation::new(format!("{i}"), combos[i % 31]))
                .collect(),
            "test",
        )
        .unwrap();
        let theta = model
            .parameters_from_named(&[
                ("asc_L", 0.25),
                ("mu_P", 1.4),
                ("mu_L", 1.9),
                ("mu_I", 1.1),
                ("mu_W", 1.3),
                ("mu_O", 1.6),
            ])
            .unwrap();

        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                let e = Evaluator::new(&model, &dataset).unwrap();
                let (ll, g) = e.log_likelihood_with_gradient(&theta).unwrap();
                (ll.value.to_bits(), g.iter().map(|x| x.to_bits()).collect::<Vec<_>>())
            })
        };
        assert_eq!(run(1), run(4));
    }
}
