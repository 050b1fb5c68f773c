//! Central finite-difference check of the fused loss gradient.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math;
use crate::params::{ModelParams, ParamId};
use crate::tape::Tape;

use super::model::{build_loss, LossContext, StepInputs};

pub const FD_STEP: f64 = 1e-5;

/// Relative error of one tensor: `||analytic - numeric|| / max(||analytic||, ||numeric||, tiny)`
/// over the checked coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub rel_error: f64,
}

fn loss_at(params: &ModelParams, ctx: &LossContext, inputs: &StepInputs) -> Result<f64> {
    let mut tape = Tape::new(params);
    let batch = build_loss(&mut tape, ctx, inputs).ok_or(Error::Empty("loss terms"))?;
    Ok(tape.scalar(batch.total))
}

/// Compare analytic and central-difference gradients on up to
/// `per_tensor` coordinates of every tensor, preferring coordinates with a
/// nonzero analytic gradient.
pub fn check_gradients(
    params: &ModelParams,
    ctx: &LossContext,
    inputs: &StepInputs,
    per_tensor: usize,
    seed: u64,
) -> Result<Vec<TensorCheck>> {
    let mut grads = params.zeros_like();
    {
        let mut tape = Tape::new(params);
        let batch = build_loss(&mut tape, ctx, inputs).ok_or(Error::Empty("loss terms"))?;
        tape.backward(batch.total, &mut grads);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.clone();
    let mut out = Vec::new();
    for id in params.ids() {
        let g = &grads.get(id).expect("grad layout").data;
        let nonzero: Vec<usize> = (0..g.len()).filter(|&i| g[i] != 0.0).collect();
        let pool: Vec<usize> = if nonzero.is_empty() { (0..g.len()).collect() } else { nonzero };
        let take = per_tensor.min(pool.len());
        let coords: Vec<usize> = index::sample(&mut rng, pool.len(), take).into_iter().map(|k| pool[k]).collect();
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for &c in &coords {
            let orig = params.get(id).expect("listed id").data[c];
            set(&mut work, id, c, orig + FD_STEP);
            let up = loss_at(&work, ctx, inputs)?;
            set(&mut work, id, c, orig - FD_STEP);
            let down = loss_at(&work, ctx, inputs)?;
            set(&mut work, id, c, orig);
            let numeric = (up - down) / (2.0 * FD_STEP);
            diff += (g[c] - numeric) * (g[c] - numeric);
            na += g[c] * g[c];
            nn += numeric * numeric;
        }
        let scale = math::sqrt(na).max(math::sqrt(nn)).max(1e-10);
        out.push(TensorCheck { name: String::from(id.name()), checked: coords.len(), rel_error: math::sqrt(diff) / scale });
    }
    Ok(out)
}

fn set(params: &mut ModelParams, id: ParamId, i: usize, v: f64) {
    params.get_mut(id).expect("listed id").data[i] = v;
}
