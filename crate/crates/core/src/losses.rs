//! Training objectives: the deep clustering affinity loss, the
//! magnitude-spectrum mask inference loss, and their convex combination.

use crate::autodiff::{Graph, Real, Tensor, Var};
use crate::masking::{ideal_binary_assignment, magnitude_weights, BinWeights, IdealAssignment};
use crate::{Error, Result};

/// Weight of the deep clustering term when fine-tuning the whole network.
pub const DEFAULT_ALPHA: f64 = 0.01;

/// A differentiable scalar together with its detached value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub node: Var,
    pub value: f64,
}

impl LossValue {
    fn from_node<T: Real>(g: &Graph<T>, node: Var) -> Self {
        Self {
            node,
            value: g.value(node).item().to_f64().unwrap_or(f64::NAN),
        }
    }
}

/// Per-batch targets derived from mixture and source magnitudes.
#[derive(Debug, Clone)]
pub struct MixtureBatchTargets<T> {
    pub batch: usize,
    pub bins_per_example: usize,
    pub n_sources: usize,
    /// `|X|`, `[B * bins]`.
    pub mix_mag: Tensor<T>,
    /// `|S_c|`, `[B * bins, N]`.
    pub source_mags: Tensor<T>,
    pub assignments: Vec<IdealAssignment>,
    pub weights: Vec<BinWeights>,
}

impl<T: Real> MixtureBatchTargets<T> {
    /// `mix_mags[b]` is example `b`'s mixture magnitude matrix and
    /// `source_mags[b][c]` its source `c` magnitudes, all in the same layout.
    pub fn new(mix_mags: &[Vec<f64>], source_mags: &[Vec<Vec<f64>>]) -> Result<Self> {
        let batch = mix_mags.len();
        if batch == 0 || source_mags.len() != batch {
            return Err(Error::invalid("targets need one source list per mixture"));
        }
        let bins = mix_mags[0].len();
        let n_sources = source_mags[0].len();
        let mut mix = Vec::with_capacity(batch * bins);
        let mut src = Vec::with_capacity(batch * bins * n_sources);
        let mut assignments = Vec::with_capacity(batch);
        let mut weights = Vec::with_capacity(batch);
        for (m, s) in mix_mags.iter().zip(source_mags) {
            if m.len() != bins || s.len() != n_sources || s.iter().any(|c| c.len() != bins) {
                return Err(Error::invalid("inconsistent target shapes within batch"));
            }
            mix.extend(m.iter().map(|&v| T::from_f64_lossy(v)));
            for i in 0..bins {
                src.extend(s.iter().map(|c| T::from_f64_lossy(c[i])));
            }
            assignments.push(ideal_binary_assignment(s)?);
            weights.push(magnitude_weights(m));
        }
        Ok(Self {
            batch,
            bins_per_example: bins,
            n_sources,
            mix_mag: Tensor::new(vec![batch * bins], mix)?,
            source_mags: Tensor::new(vec![batch * bins, n_sources], src)?,
            assignments,
            weights,
        })
    }
}

/// `‖W^½(VVᵀ − YYᵀ)W^½‖²_F / (Σw)²` for one example, evaluated through the
/// `D×D`, `D×N` and `N×N` Gram matrices instead of the bin-by-bin affinity.
pub fn deep_clustering_loss<T: Real>(
    g: &mut Graph<T>,
    v: Var,
    y: &IdealAssignment,
    w: &BinWeights,
) -> Result<LossValue> {
    let shape = g.shape(v).to_vec();
    if shape.len() != 2 || shape[0] != y.n_bins() || w.weights().len() != y.n_bins() {
        return Err(Error::invalid(format!(
            "deep clustering: embeddings {shape:?}, {} assignments, {} weights",
            y.n_bins(),
            w.weights().len()
        )));
    }
    let n = y.n_bins();
    let k = y.n_sources();
    let sqrt_w: Vec<f64> = w.weights().iter().map(|x| x.sqrt()).collect();

    let mut class_mass = vec![0.0; k];
    let mut yt = vec![0.0; n * k];
    for (i, &l) in y.labels().iter().enumerate() {
        class_mass[l] += w.weights()[i];
        yt[i * k + l] = sqrt_w[i];
    }
    let yy: f64 = class_mass.iter().map(|m| m * m).sum();
    let total = w.total();
    let norm = if total > 0.0 { 1.0 / (total * total) } else { 1.0 };

    let sw = g.constant(Tensor::from_f64(vec![n], &sqrt_w)?);
    let vt = g.scale_rows(v, sw)?;
    let vt_t = g.transpose(vt)?;
    let vv = g.matmul(vt_t, vt)?;
    let yt = g.constant(Tensor::from_f64(vec![n, k], &yt)?);
    let vy = g.matmul(vt_t, yt)?;
    let a = g.frobenius_sq(vv);
    let b = g.frobenius_sq(vy);
    let b2 = g.scale(b, T::from_f64_lossy(-2.0));
    let ab = g.add(a, b2)?;
    let c = g.constant(Tensor::scalar(T::from_f64_lossy(yy)));
    let sum = g.add(ab, c)?;
    let node = g.scale(sum, T::from_f64_lossy(norm));
    Ok(LossValue::from_node(g, node))
}

/// Mean of [`deep_clustering_loss`] over the examples of a batch whose
/// embedding rows are stacked example after example.
pub fn batch_deep_clustering_loss<T: Real>(
    g: &mut Graph<T>,
    v: Var,
    targets: &MixtureBatchTargets<T>,
) -> Result<LossValue> {
    let rows = targets.bins_per_example;
    if g.shape(v).first() != Some(&(targets.batch * rows)) {
        return Err(Error::invalid(format!(
            "embeddings {:?} do not cover {} examples of {rows} bins",
            g.shape(v),
            targets.batch
        )));
    }
    let mut total: Option<Var> = None;
    for b in 0..targets.batch {
        let vb = if targets.batch == 1 {
            v
        } else {
            g.slice(v, 0, b * rows, (b + 1) * rows)?
        };
        let l = deep_clustering_loss(g, vb, &targets.assignments[b], &targets.weights[b])?;
        total = Some(match total {
            Some(t) => g.add(t, l.node)?,
            None => l.node,
        });
    }
    let node = g.scale(
        total.expect("nonempty batch"),
        T::from_f64_lossy(1.0 / targets.batch as f64),
    );
    Ok(LossValue::from_node(g, node))
}

/// `(1 / (bins·N)) Σ_c ‖M_c ∘ |X| − |S_c|‖₁`.
///
/// `masks` is `[bins, N]`, `mix_mag` `[bins]`, `target_mags` `[bins, N]`.
pub fn mask_inference_loss<T: Real>(
    g: &mut Graph<T>,
    masks: Var,
    mix_mag: &Tensor<T>,
    target_mags: &Tensor<T>,
) -> Result<LossValue> {
    let shape = g.shape(masks).to_vec();
    if shape.len() != 2 || target_mags.shape() != shape.as_slice() || mix_mag.shape() != [shape[0]] {
        return Err(Error::invalid(format!(
            "mask inference: masks {shape:?}, mixture {:?}, targets {:?}",
            mix_mag.shape(),
            target_mags.shape()
        )));
    }
    let count = (shape[0] * shape[1]).max(1);
    let x = g.constant(mix_mag.clone());
    let s = g.constant(target_mags.clone());
    let est = g.scale_rows(masks, x)?;
    let diff = g.sub(est, s)?;
    let abs = g.abs(diff);
    let sum = g.sum(abs);
    let node = g.scale(sum, T::one() / T::from_usize(count).expect("count"));
    Ok(LossValue::from_node(g, node))
}

pub fn batch_mask_inference_loss<T: Real>(
    g: &mut Graph<T>,
    masks: Var,
    targets: &MixtureBatchTargets<T>,
) -> Result<LossValue> {
    mask_inference_loss(g, masks, &targets.mix_mag, &targets.source_mags)
}

/// `α·dc + (1 − α)·mi`.
pub fn combined_loss<T: Real>(g: &mut Graph<T>, dc: LossValue, mi: LossValue, alpha: f64) -> Result<LossValue> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    let a = g.scale(dc.node, T::from_f64_lossy(alpha));
    let b = g.scale(mi.node, T::from_f64_lossy(1.0 - alpha));
    let node = g.add(a, b)?;
    Ok(LossValue::from_node(g, node))
}
