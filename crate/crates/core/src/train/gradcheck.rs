//! Central finite-difference check of the end-to-end gradient on a small
//! random scene.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TrainError;
use crate::data::{Detection, HUMAN_CLASS};
use crate::features::{BoundingBox, EmbeddingTable, ImageMeta};
use crate::graphnet::{build_graph, forward_graph, ModelConfig, ModelParams, SceneGraph, Variant};
use crate::numerics::Tensor;

pub const GRADCHECK_TOLERANCE: f64 = 1e-5;
pub const FD_STEP: f64 = 1e-6;
/// Denominator floor of the relative error, so entries whose true gradient
/// is essentially zero are judged by absolute error instead.
pub const DENOM_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Widths {
    /// `d = 4`, word width 4, hidden and readout widths 8, 3 actions.
    Toy,
    /// 1024-wide hidden layers and 300-d embeddings; only a sample of
    /// entries per tensor is checked.
    Paper,
}

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub widths: Widths,
    pub variant: Variant,
    /// Entries checked per tensor; `None` checks all of them.
    pub max_entries_per_tensor: Option<usize>,
    /// Perturbs one analytic gradient entry, as a negative control.
    pub corrupt: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            widths: Widths::Toy,
            variant: Variant::Full,
            max_entries_per_tensor: None,
            corrupt: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    /// Tensor name and flat index of the worst entry.
    pub worst: (String, usize),
    pub checked: usize,
    pub parameter_count: usize,
    pub loss: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRADCHECK_TOLERANCE
    }
}

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(DENOM_FLOOR)
}

struct Problem {
    graph: SceneGraph,
    labels: Tensor,
    rows: Vec<usize>,
}

fn three_node_problem(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Problem, TrainError> {
    let classes = [HUMAN_CLASS, "a", "b"];
    let table = EmbeddingTable::new(
        cfg.word_dim,
        classes
            .iter()
            .map(|c| (c.to_string(), (0..cfg.word_dim).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect(),
    )
    .map_err(crate::graphnet::GraphError::from)?;
    let dets: Vec<Detection> = classes
        .iter()
        .map(|c| {
            let x = rng.random_range(0.0..50.0);
            let y = rng.random_range(0.0..50.0);
            Detection {
                bbox: BoundingBox::new(x, y, x + rng.random_range(10.0..50.0), y + rng.random_range(10.0..50.0)),
                class: c.to_string(),
                score: rng.random_range(0.85..1.0),
                feature: (0..cfg.visual_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            }
        })
        .collect();
    let img = ImageMeta::new(100.0, 100.0).map_err(crate::graphnet::GraphError::from)?;
    let graph = build_graph("gradcheck", &dets, &img, &table)?;
    let n_pairs = 2;
    let labels = (0..n_pairs * cfg.n_actions)
        .map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
        .collect();
    Ok(Problem {
        graph,
        labels: Tensor::matrix(n_pairs, cfg.n_actions, labels)?,
        rows: (0..n_pairs).collect(),
    })
}

fn loss_at(params: &ModelParams, p: &Problem) -> Result<f64, TrainError> {
    let mut pass = forward_graph(params, &p.graph, None)?;
    let norm = p.labels.len() as f64;
    let l = pass.loss(&p.rows, p.labels.clone(), norm)?;
    Ok(pass.loss_value(l))
}

/// Compares the tape gradient of the mean BCE with central differences
/// (`h = 1e-6`) entry by entry and reports the worst relative error.
pub fn gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let cfg = match opts.widths {
        Widths::Toy => ModelConfig {
            hidden: 8,
            readout_hidden: 8,
            ..ModelConfig::toy(opts.variant, 4, 4, 3)
        },
        Widths::Paper => ModelConfig::full_scale(opts.variant, 1024, 300, 3),
    };
    let problem = three_node_problem(&cfg, &mut rng)?;
    let mut params = ModelParams::init(&cfg, &mut rng);
    // Glorot init leaves biases at zero, where ReLU kinks sit exactly on
    // the evaluation point; nudge them off.
    for (name, t) in params.names().to_vec().iter().zip(params.tensors_mut()) {
        if name.ends_with(".bias") {
            for v in t.values_mut() {
                *v = rng.random_range(-0.1..0.1);
            }
        }
    }

    let (loss, mut grads) = {
        let mut pass = forward_graph(&params, &problem.graph, None)?;
        let l = pass.loss(&problem.rows, problem.labels.clone(), problem.labels.len() as f64)?;
        (pass.loss_value(l), pass.backward(l)?.params)
    };
    if opts.corrupt {
        let g = &mut grads[0].values_mut()[0];
        *g += 1e-3 * (1.0 + g.abs());
    }

    let mut worst = (0.0, (String::new(), 0));
    let mut checked = 0;
    for (t, grad) in grads.iter().enumerate() {
        let len = grad.len();
        let entries: Vec<usize> = match opts.max_entries_per_tensor {
            Some(k) if k < len => {
                let mut e = sample(&mut rng, len, k).into_vec();
                e.sort_unstable();
                e
            }
            _ => (0..len).collect(),
        };
        for k in entries {
            let orig = params.tensors()[t].values()[k];
            params.tensors_mut()[t].values_mut()[k] = orig + FD_STEP;
            let up = loss_at(&params, &problem)?;
            params.tensors_mut()[t].values_mut()[k] = orig - FD_STEP;
            let down = loss_at(&params, &problem)?;
            params.tensors_mut()[t].values_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let err = relative_error(grad.values()[k], numeric);
            if err > worst.0 || !err.is_finite() {
                worst = (err, (params.names()[t].clone(), k));
            }
            checked += 1;
        }
    }
    Ok(GradcheckReport {
        max_rel_error: worst.0,
        worst: worst.1,
        checked,
        parameter_count: params.parameter_count(),
        loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_gradients_match_finite_differences() {
        for v in Variant::ALL {
            let r = gradcheck(&GradcheckOptions {
                seed: 1,
                variant: v,
                ..GradcheckOptions::default()
            })
            .unwrap();
            assert_eq!(r.checked, r.parameter_count);
            assert!(r.passed(), "{v}: {r:?}");
        }
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let r = gradcheck(&GradcheckOptions {
            corrupt: true,
            ..GradcheckOptions::default()
        })
        .unwrap();
        assert!(!r.passed());
    }
}
