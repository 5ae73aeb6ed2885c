//! Central finite-difference verification of [`loss_and_grads`].

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backward::{batch_losses, loss_and_grads, Example, Gradients, TaskSpec};
use super::{ModelError, ModelParams, ParamGroup};

/// Absolute scale below which differences count as absolute, not relative.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCheck {
    pub group: ParamGroup,
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub task: TaskSpec,
    pub eps: f64,
    pub max_rel_error: f64,
    pub groups: Vec<GroupCheck>,
}

impl GradCheckReport {
    pub fn group(&self, g: ParamGroup) -> Option<&GroupCheck> {
        self.groups.iter().find(|c| c.group == g)
    }
}

/// `|a − n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compare analytic gradients against `(L(θ+ε) − L(θ−ε)) / 2ε` on up to
/// `per_group` random coordinates of every parameter group (all of them when
/// the group is smaller). For the multi-task loss both per-task gradients are
/// checked against their own loss at every sampled coordinate.
pub fn check_gradients(
    params: &ModelParams,
    batch: &[Example],
    task: TaskSpec,
    eps: f64,
    per_group: usize,
    seed: u64,
) -> Result<GradCheckReport, ModelError> {
    if !(eps > 0.0) {
        return Err(ModelError::Config(format!("eps must be > 0, got {eps}")));
    }
    let analytic: Vec<Vec<f64>> = match loss_and_grads(params, batch, task, None)? {
        Gradients::Multitask { grad_id, grad_type, .. } => vec![grad_id, grad_type],
        Gradients::Single { grad, .. } => vec![grad],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = params.clone();
    let mut groups = Vec::new();
    let mut overall: f64 = 0.0;
    for g in ParamGroup::ALL {
        let range = params.layout.group(g);
        let n = range.len();
        let picks: Vec<usize> = if per_group >= n {
            (0..n).collect()
        } else {
            sample(&mut rng, n, per_group).into_vec()
        };
        let mut check = GroupCheck {
            group: g,
            coordinates: picks.len(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
        };
        for off in picks {
            let i = range.start + off;
            let orig = probe.data[i];
            probe.data[i] = orig + eps;
            let plus = batch_losses(&probe, batch, task)?;
            probe.data[i] = orig - eps;
            let minus = batch_losses(&probe, batch, task)?;
            probe.data[i] = orig;
            for (t, grad) in analytic.iter().enumerate() {
                let numeric = (plus[t] - minus[t]) / (2.0 * eps);
                check.max_rel_error = check.max_rel_error.max(relative_error(grad[i], numeric));
                check.max_abs_error = check.max_abs_error.max((grad[i] - numeric).abs());
            }
        }
        overall = overall.max(check.max_rel_error);
        groups.push(check);
    }
    Ok(GradCheckReport {
        task,
        eps,
        max_rel_error: overall,
        groups,
    })
}
