use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::Mlp;
use crate::error::Result;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Relative errors are measured against `max(|analytic|, |numeric|, REL_FLOOR)`.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Compare an analytic gradient against central differences.
///
/// `loss` maps a model to `(value, gradient)`. Up to `max_coords` parameter
/// coordinates are drawn at random; `None` checks all of them.
pub fn grad_check<F>(model: &Mlp, loss: F, max_coords: Option<usize>, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&Mlp) -> Result<(f64, Vec<f64>)>,
{
    let (_, analytic) = loss(model)?;
    let n = model.num_params();
    let coords: Vec<usize> = match max_coords {
        Some(k) if k < n => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = sample(&mut rng, n, k).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..n).collect(),
    };
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: coords.first().copied().unwrap_or(0),
        analytic: 0.0,
        numeric: 0.0,
        checked: coords.len(),
    };
    for &i in &coords {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + FD_STEP;
        let (plus, _) = loss(&probe)?;
        probe.params_mut()[i] = orig - FD_STEP;
        let (minus, _) = loss(&probe)?;
        probe.params_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        if rel > report.max_rel_error {
            report = GradCheckReport {
                max_rel_error: rel,
                worst_index: i,
                analytic: a,
                numeric,
                checked: coords.len(),
            };
        }
    }
    Ok(report)
}
