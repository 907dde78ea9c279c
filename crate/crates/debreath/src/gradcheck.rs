//! Central finite-difference verification of reverse-mode gradients.
//!
//! The check perturbs one leaf coordinate at a time, re-runs the forward
//! pass (dropout masks stay fixed, see [`Graph::recompute`]), and compares
//! the difference quotient against the gradient `backward` produced. Run it
//! with `f64` graphs; the step size and tolerances assume double precision.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, NodeId};

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Relative-error floor: coordinates whose gradients are smaller than this
/// are compared at this absolute scale instead.
const DENOM_FLOOR: f64 = 1e-4;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub coords_checked: usize,
}

/// Compare analytic gradients of `loss` w.r.t. each leaf in `leaves`
/// against central finite differences.
///
/// `max_coords_per_leaf` caps how many coordinates are probed per leaf
/// (sampled deterministically from `sample_seed`); `None` checks each one.
pub fn check_gradients(
    graph: &mut Graph<f64>,
    loss: NodeId,
    leaves: &[NodeId],
    step: f64,
    max_coords_per_leaf: Option<usize>,
    sample_seed: u64,
) -> Result<GradCheckReport> {
    graph.backward(loss)?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|&id| {
            graph
                .grad(id)
                .expect("leaf must require grad for checking")
                .to_vec()
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let mut max_rel_err = 0.0f64;
    let mut coords_checked = 0;

    for (leaf_idx, &leaf) in leaves.iter().enumerate() {
        let base = graph.value(leaf).data().to_vec();
        let mut coords: Vec<usize> = (0..base.len()).collect();
        if let Some(cap) = max_coords_per_leaf {
            coords.shuffle(&mut rng);
            coords.truncate(cap);
        }
        for &ci in &coords {
            let mut bumped = base.clone();
            bumped[ci] = base[ci] + step;
            graph.set_leaf(leaf, &bumped)?;
            graph.recompute();
            let up = graph.value(loss).item();

            bumped[ci] = base[ci] - step;
            graph.set_leaf(leaf, &bumped)?;
            graph.recompute();
            let down = graph.value(loss).item();

            let fd = (up - down) / (2.0 * step);
            let ad = analytic[leaf_idx][ci];
            let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(DENOM_FLOOR);
            if rel > max_rel_err {
                max_rel_err = rel;
            }
            coords_checked += 1;
        }
        graph.set_leaf(leaf, &base)?;
        graph.recompute();
    }

    Ok(GradCheckReport {
        max_rel_err,
        coords_checked,
    })
}
