//! Cross-nested logit choice probabilities.
//!
//! With allocation weights `alpha[i][m]`, nest scales `mu_m` and the top
//! scale fixed to 1, the probability of alternative `i` is
//!
//! ```text
//! P(i) = sum_m P(m) P(i|m)
//! P(i|m) = (alpha[i][m] e^{V_i})^{mu_m} / S_m
//! P(m)  ~  S_m^{1/mu_m},  S_m = sum_j (alpha[j][m] e^{V_j})^{mu_m}
//! ```
//!
//! Everything is evaluated in log space with max-shifted log-sum-exp, so
//! systematic utilities as large as a few hundred in magnitude neither
//! overflow nor destroy normalization.

use crate::cnl::structure::{CnlStructure, TOP_SCALE};
use crate::error::{Error, Result};

/// Reusable buffers for one probability evaluation.
#[derive(Debug, Clone)]
pub(crate) struct Workspace {
    /// `t[m * J + i] = mu_m (ln alpha[i][m] + v[i])`; `-inf` when the
    /// alternative is unavailable or outside the nest.
    pub t: Vec<f64>,
    /// `ln S_m` per nest; `-inf` for nests with no available member.
    pub log_s: Vec<f64>,
    /// `ln P(m)` per nest.
    pub log_w: Vec<f64>,
    /// `P(i)` per alternative; exactly 0 for unavailable ones.
    pub probs: Vec<f64>,
}

impl Workspace {
    pub fn new(alternatives: usize, nests: usize) -> Self {
        Workspace {
            t: vec![f64::NEG_INFINITY; alternatives * nests],
            log_s: vec![f64::NEG_INFINITY; nests],
            log_w: vec![f64::NEG_INFINITY; nests],
            probs: vec![0.0; alternatives],
        }
    }
}

#[inline]
fn available(availability: Option<&[bool]>, i: usize) -> bool {
    availability.map_or(true, |mask| mask[i])
}

/// Fills the workspace for utilities `v` under the given scales and
/// availability. `mu` must have one entry per nest, each at least the top
/// scale.
pub(crate) fn evaluate_into(
    structure: &CnlStructure,
    mu: &[f64],
    v: &[f64],
    availability: Option<&[bool]>,
    ws: &mut Workspace,
) -> Result<()> {
    let j = structure.alternatives();
    let m = structure.nests();
    debug_assert_eq!(mu.len(), m);
    debug_assert_eq!(v.len(), j);

    for &scale in mu {
        if !(scale >= TOP_SCALE) {
            return Err(Error::domain(format!(
                "nest scale {scale} is below the top scale {TOP_SCALE}"
            )));
        }
    }

    ws.t.fill(f64::NEG_INFINITY);
    ws.probs[..j].fill(0.0);

    let log_alpha = structure.log_alpha();
    // Per-nest log sums: L_m = ln sum_i exp(t_im), max-shifted.
    for nest in 0..m {
        let t_row = &mut ws.t[nest * j..(nest + 1) * j];
        let mut max = f64::NEG_INFINITY;
        for &i in structure.nest_members(nest) {
            if available(availability, i) {
                let t = mu[nest] * (log_alpha[i][nest] + v[i]);
                t_row[i] = t;
                if t > max {
                    max = t;
                }
            }
        }
        ws.log_s[nest] = if max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            let mut sum = 0.0;
            for &i in structure.nest_members(nest) {
                let t = t_row[i];
                if t > f64::NEG_INFINITY {
                    sum += (t - max).exp();
                }
            }
            max + sum.ln()
        };
    }

    // ln D = ln sum_m exp(L_m / mu_m), max-shifted over nonempty nests.
    let mut max = f64::NEG_INFINITY;
    for nest in 0..m {
        if ws.log_s[nest] > f64::NEG_INFINITY {
            max = max.max(ws.log_s[nest] / mu[nest]);
        }
    }
    if max == f64::NEG_INFINITY {
        return Err(Error::domain(
            "no available alternative with positive allocation in any nest",
        ));
    }
    let mut denom = 0.0;
    for nest in 0..m {
        if ws.log_s[nest] > f64::NEG_INFINITY {
            denom += (ws.log_s[nest] / mu[nest] - max).exp();
        }
    }
    let log_d = max + denom.ln();

    // Nest weights and alternative probabilities.
    for nest in 0..m {
        ws.log_w[nest] = if ws.log_s[nest] > f64::NEG_INFINITY {
            ws.log_s[nest] / mu[nest] - log_d
        } else {
            f64::NEG_INFINITY
        };
    }
    for nest in 0..m {
        if ws.log_w[nest] == f64::NEG_INFINITY {
            continue;
        }
        let weight = ws.log_w[nest].exp();
        let t_row = &ws.t[nest * j..(nest + 1) * j];
        for &i in structure.nest_members(nest) {
            if t_row[i] > f64::NEG_INFINITY {
                ws.probs[i] += weight * (t_row[i] - ws.log_s[nest]).exp();
            }
        }
    }
    Ok(())
}

/// `ln P(chosen)` from a filled workspace, computed fully in log space so
/// small probabilities stay accurate far below the linear-space underflow
/// threshold.
pub(crate) fn chosen_log_probability(
    structure: &CnlStructure,
    ws: &Workspace,
    chosen: usize,
) -> f64 {
    let j = structure.alternatives();
    let mut max = f64::NEG_INFINITY;
    for nest in 0..structure.nests() {
        let t = ws.t[nest * j + chosen];
        if t > f64::NEG_INFINITY && ws.log_w[nest] > f64::NEG_INFINITY {
            max = max.max(ws.log_w[nest] + t - ws.log_s[nest]);
        }
    }
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut sum = 0.0;
    for nest in 0..structure.nests() {
        let t = ws.t[nest * j + chosen];
        if t > f64::NEG_INFINITY && ws.log_w[nest] > f64::NEG_INFINITY {
            sum += (ws.log_w[nest] + t - ws.log_s[nest] - max).exp();
        }
    }
    max + sum.ln()
}

/// Choice probabilities for systematic utilities `v` under the structure's
/// stored scales. Unavailable alternatives receive exactly zero; the rest
/// sum to one within 1e-12.
pub fn cnl_probabilities(
    structure: &CnlStructure,
    v: &[f64],
    availability: Option<&[bool]>,
) -> Result<Vec<f64>> {
    let j = structure.alternatives();
    if v.len() != j {
        return Err(Error::domain(format!(
            "expected {j} utilities, got {}",
            v.len()
        )));
    }
    if let Some(mask) = availability {
        if mask.len() != j {
            return Err(Error::domain(format!(
                "expected availability mask of length {j}, got {}",
                mask.len()
            )));
        }
        if !mask.iter().any(|&a| a) {
            return Err(Error::domain("all alternatives are unavailable"));
        }
    }
    for i in 0..j {
        if available(availability, i) && !v[i].is_finite() {
            return Err(Error::numeric(format!(
                "utility of available alternative {i} is not finite ({})",
                v[i]
            )));
        }
    }
    let mut ws = Workspace::new(j, structure.nests());
    evaluate_into(structure, structure.mu(), v, availability, &mut ws)?;
    Ok(ws.probs)
}
