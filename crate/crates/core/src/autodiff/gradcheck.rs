use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Tape, Var};

/// Coordinates probed per parameter tensor (all of them when smaller).
const COORDS_PER_PARAM: usize = 32;

/// Compares reverse-mode gradients of `program` with central differences.
///
/// Returns the maximum over probed coordinates of
/// `|ad - fd| / max(1e-8, |ad| + |fd|)`. `program` must be deterministic.
pub fn fd_check<F>(program: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    fd_check_with(program, params, eps, COORDS_PER_PARAM, 0)
}

pub fn fd_check_with<F>(
    program: F,
    params: &[Tensor],
    eps: f64,
    coords_per_param: usize,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = program(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols()))
        })
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|p| t.constant(p.clone())).collect();
        let l = program(&mut t, &vs)?;
        t.scalar(l)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work: Vec<Tensor> = params.to_vec();
    let mut worst = 0.0f64;
    for (pi, p) in params.iter().enumerate() {
        let coords: Vec<usize> = if p.len() <= coords_per_param {
            (0..p.len()).collect()
        } else {
            sample(&mut rng, p.len(), coords_per_param).into_vec()
        };
        for c in coords {
            let orig = p.data()[c];
            work[pi].data_mut()[c] = orig + eps;
            let up = eval(&work)?;
            work[pi].data_mut()[c] = orig - eps;
            let down = eval(&work)?;
            work[pi].data_mut()[c] = orig;
            let fd = (up - down) / (2.0 * eps);
            let ad = analytic[pi].data()[c];
            if !fd.is_finite() || !ad.is_finite() {
                return Err(Error::Domain(format!(
                    "non-finite gradient at parameter {pi} coordinate {c}"
                )));
            }
            let err = (ad - fd).abs() / (ad.abs() + fd.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
