use crate::error::{Error, Result};
use crate::model::ModelGraph;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per model parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(graph: &ModelGraph) -> Self {
        Self::zeros(graph.parameters().iter().map(|(_, t)| t.numel()))
    }

    /// Zero moments for parameters of the given sizes.
    pub fn zeros(sizes: impl IntoIterator<Item = usize>) -> Self {
        let m: Vec<Vec<f32>> = sizes.into_iter().map(|n| vec![0.0; n]).collect();
        AdamState {
            step: 0,
            v: m.clone(),
            m,
        }
    }
}

/// Accumulated gradients of every parameter, zeros where none flowed.
pub fn collect_grads(graph: &ModelGraph) -> Vec<Vec<f32>> {
    graph
        .parameters()
        .iter()
        .map(|(_, t)| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect()
}

/// Global L2 norm over all gradients.
pub fn global_norm(grads: &[Vec<f32>]) -> f64 {
    grads
        .iter()
        .flatten()
        .map(|&g| (g as f64) * (g as f64))
        .sum::<f64>()
        .sqrt()
}

/// Scales all gradients so their global norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f32>], max_norm: f32) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm as f64 {
        let factor = max_norm as f64 / norm;
        grads.iter_mut().flatten().for_each(|g| *g = (*g as f64 * factor) as f32);
    }
    norm
}

/// One bias-corrected Adam update over raw parameter buffers, returning the
/// new values. `names` only label diagnostics.
pub fn adam_update(
    names: &[&str],
    params: &[&[f32]],
    grads: &[Vec<f32>],
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<Vec<Vec<f32>>> {
    let k = params.len();
    if names.len() != k || grads.len() != k || state.m.len() != k || state.v.len() != k {
        return Err(Error::Contract(format!(
            "{} names, {} parameters, {} gradients and {} moment buffers",
            names.len(),
            k,
            grads.len(),
            state.m.len()
        )));
    }
    for i in 0..k {
        let n = params[i].len();
        if grads[i].len() != n || state.m[i].len() != n || state.v[i].len() != n {
            return Err(Error::shape(format!("gradient or moments of {} do not have {n} values", names[i])));
        }
        if let Some(j) = grads[i].iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of parameter {} at index {j} is {}",
                names[i], grads[i][j]
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (config.beta1 as f64, config.beta2 as f64);
    let bias1 = 1.0 - b1.powi(t);
    let bias2 = 1.0 - b2.powi(t);
    let (lr, eps) = (config.learning_rate as f64, config.eps as f64);
    let updated = (0..k)
        .map(|i| {
            let (m, v) = (&mut state.m[i], &mut state.v[i]);
            params[i]
                .iter()
                .zip(&grads[i])
                .enumerate()
                .map(|(j, (&w, &g))| {
                    let g = g as f64;
                    let mj = b1 * m[j] as f64 + (1.0 - b1) * g;
                    let vj = b2 * v[j] as f64 + (1.0 - b2) * g * g;
                    m[j] = mj as f32;
                    v[j] = vj as f32;
                    let update = lr * (mj / bias1) / ((vj / bias2).sqrt() + eps);
                    (w as f64 - update) as f32
                })
                .collect()
        })
        .collect();
    Ok(updated)
}

/// [`adam_update`] applied to a model. Each parameter is replaced by a fresh
/// leaf, so gradients start from zero on the next step.
pub fn adam_step(
    graph: &mut ModelGraph,
    grads: &[Vec<f32>],
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<()> {
    let params = graph.parameters();
    let names: Vec<&str> = params.iter().map(|(n, _)| n.as_str()).collect();
    let values: Vec<&[f32]> = params.iter().map(|(_, t)| t.data()).collect();
    let updated = adam_update(&names, &values, grads, state, config)?;
    for (i, values) in updated.into_iter().enumerate() {
        graph.set_param_at(i, values)?;
    }
    Ok(())
}
