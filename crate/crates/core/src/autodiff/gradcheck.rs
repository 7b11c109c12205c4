use rand::seq::index::sample;
use rand::Rng;

use super::{Graph, Tensor, Var};
use crate::Result;

/// Outcome of comparing tape gradients against central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub coordinates_checked: usize,
    /// `(parameter, flat index, analytic, numeric)` at the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Relative-error denominator floor.
pub const REL_FLOOR: f64 = 1e-6;

/// Compares `backward` against central differences with step `step`.
///
/// `loss_fn` builds a scalar loss on a fresh graph from leaf vars of
/// `params` (in order). When a parameter has more than `max_coords`
/// entries a random subset of that size is checked.
pub fn finite_difference_check<F, R>(
    params: &[Tensor<f64>],
    loss_fn: F,
    step: f64,
    max_coords: usize,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    R: Rng,
{
    let eval = |ps: &[Tensor<f64>], with_grad: bool| -> Result<(f64, Vec<Tensor<f64>>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.leaf(p.clone(), with_grad)).collect();
        let loss = loss_fn(&mut g, &vars)?;
        let value = g.value(loss).item();
        if !with_grad {
            return Ok((value, Vec::new()));
        }
        g.backward(loss)?;
        let grads = vars
            .iter()
            .zip(ps)
            .map(|(v, p)| g.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        Ok((value, grads))
    };

    let (_, analytic) = eval(params, true)?;
    let mut work = params.to_vec();
    let mut worst: f64 = 0.0;
    let mut worst_at = None;
    let mut checked = 0;
    for (pi, param) in params.iter().enumerate() {
        let coords: Vec<usize> = if param.numel() > max_coords {
            sample(rng, param.numel(), max_coords).into_vec()
        } else {
            (0..param.numel()).collect()
        };
        for c in coords {
            let orig = work[pi].data()[c];
            let (hi, lo) = (orig + step, orig - step);
            work[pi].data_mut()[c] = hi;
            let (plus, _) = eval(&work, false)?;
            work[pi].data_mut()[c] = lo;
            let (minus, _) = eval(&work, false)?;
            work[pi].data_mut()[c] = orig;
            // Divide by the realised (representable) step, not the nominal one.
            let numeric = (plus - minus) / (hi - lo);
            let a = analytic[pi].data()[c];
            let denom = a.abs().max(numeric.abs()).max(REL_FLOOR);
            let rel = (a - numeric).abs() / denom;
            if worst_at.is_none() || rel > worst {
                worst = rel;
                worst_at = Some((pi, c, a, numeric));
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_relative_error: worst,
        coordinates_checked: checked,
        worst: worst_at,
    })
}
