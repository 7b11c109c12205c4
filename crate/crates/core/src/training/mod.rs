//! Optimisation: Adam, AutoClip, plateau halving of the learning rate, and
//! the pretraining and fine-tuning loops.

mod optim;
mod run;

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use optim::{
    clip_global_norm, global_norm, percentile, Adam, AutoClip, LrSchedule, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON,
};
pub use run::{finetune, pretrain, run_name, Init, RunOutcome};

use crate::autodiff::{Graph, Tensor};
use crate::datapipe::{draw_example, MixSpec, StemCorpus, TrainingExample};
use crate::losses::{
    batch_deep_clustering_loss, batch_mask_inference_loss, combined_loss, LossValue, MixtureBatchTargets,
};
use crate::network::{ChimeraModel, ForwardVars, Heads, LogMagBatch};
use crate::signal::{stft, StftConfig};
use crate::{Error, Result};

pub const LOSS_CSV_HEADER: &str = "iteration,stage,loss_dc,loss_mi,loss_total,lr,grad_norm,clip_threshold";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Finetune,
    Baseline,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
            Stage::Baseline => "baseline",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    DeepClustering,
    MaskInference,
    /// `α·L_DC + (1 − α)·L_MI`.
    Combined {
        alpha: f64,
    },
}

impl Objective {
    fn heads(self) -> Heads {
        match self {
            Objective::DeepClustering => Heads::EMBEDDING,
            Objective::MaskInference => Heads::MASK,
            Objective::Combined { .. } => Heads::BOTH,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunBudget {
    pub stage: Stage,
    pub iterations: usize,
    pub batch_size: usize,
    pub chunk_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub budget: RunBudget,
    pub objective: Objective,
    pub learning_rate: f64,
    pub clip_percentile: f64,
    pub mix: MixSpec,
    pub data_seed: u64,
    pub val_seed: u64,
    pub val_examples: usize,
    pub checkpoint_every: usize,
    /// Where `loss.csv` and checkpoints go; nothing is written when `None`.
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub stage: Stage,
    pub loss_dc: Option<f64>,
    pub loss_mi: Option<f64>,
    pub loss_total: f64,
    pub lr: f64,
    pub grad_norm: f64,
    /// `NaN` when the step was skipped.
    pub clip_threshold: f64,
    pub clipped_norm: f64,
    pub skipped: bool,
}

impl IterationRecord {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        format!(
            "{},{},{},{},{},{},{},{}",
            self.iteration,
            self.stage,
            opt(self.loss_dc),
            opt(self.loss_mi),
            self.loss_total,
            self.lr,
            self.grad_norm,
            self.clip_threshold
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainingReport {
    pub records: Vec<IterationRecord>,
    /// `(iteration, windowed validation loss)` at each window boundary.
    pub validation: Vec<(usize, f64)>,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainingReport {
    pub fn mean_loss(&self, range: std::ops::Range<usize>) -> f64 {
        let xs = &self.records[range];
        xs.iter().map(|r| r.loss_total).sum::<f64>() / xs.len() as f64
    }
}

/// Derives an independent seed for a named purpose (`"init"`, `"eval"`, ...).
pub fn substream(seed: u64, name: &str) -> u64 {
    let key = name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(key);
    rng.next_u64()
}

/// The RNG for example number `index` of the stream seeded by `seed`.
pub fn example_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws examples `first..first + count`, each from its own RNG stream, so
/// the result does not depend on how the work is scheduled.
pub fn draw_examples(
    corpus: &StemCorpus,
    spec: &MixSpec,
    seed: u64,
    first: u64,
    count: usize,
) -> Result<Vec<TrainingExample>> {
    crate::par::map(count, |i| {
        draw_example(corpus, spec, &mut example_rng(seed, first + i as u64))
    })
}

/// Network input and loss targets for a batch of equally long examples.
#[derive(Debug, Clone)]
pub struct Batch {
    pub input: LogMagBatch<f32>,
    pub targets: MixtureBatchTargets<f32>,
}

pub fn featurize(examples: &[TrainingExample], config: &StftConfig) -> Result<Batch> {
    if examples.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let spectra = crate::par::map(examples.len(), |i| {
        let ex = &examples[i];
        let mix = stft(&ex.mixture, config)?;
        let sources = ex
            .sources
            .iter()
            .map(|s| stft(s, config).map(|x| x.magnitudes()))
            .collect::<Result<Vec<_>>>()?;
        Ok((mix.n_time(), mix.magnitudes(), sources))
    })?;
    let n_time = spectra[0].0;
    if spectra.iter().any(|s| s.0 != n_time) {
        return Err(Error::invalid("examples in a batch differ in length"));
    }
    let (mix, src): (Vec<_>, Vec<_>) = spectra.into_iter().map(|(_, m, s)| (m, s)).unzip();
    Ok(Batch {
        input: LogMagBatch::from_magnitudes(&mix, n_time, config.n_freq())?,
        targets: MixtureBatchTargets::new(&mix, &src)?,
    })
}

struct Losses {
    dc: Option<LossValue>,
    mi: Option<LossValue>,
    total: LossValue,
}

fn build_loss(
    model: &ChimeraModel<f32>,
    g: &mut Graph<f32>,
    batch: &Batch,
    objective: Objective,
) -> Result<(ForwardVars, Losses)> {
    let vars = model.forward_graph(g, &batch.input, objective.heads())?;
    let dc = match vars.embeddings {
        Some(v) => Some(batch_deep_clustering_loss(g, v, &batch.targets)?),
        None => None,
    };
    let mi = match vars.masks {
        Some(m) => Some(batch_mask_inference_loss(g, m, &batch.targets)?),
        None => None,
    };
    let total = match (objective, dc, mi) {
        (Objective::Combined { alpha }, Some(dc), Some(mi)) => combined_loss(g, dc, mi, alpha)?,
        (_, Some(dc), None) => dc,
        (_, None, Some(mi)) => mi,
        _ => unreachable!("heads follow the objective"),
    };
    Ok((vars, Losses { dc, mi, total }))
}

/// Loss of `model` on `batch` without building gradients.
pub fn evaluate_loss(model: &ChimeraModel<f32>, batch: &Batch, objective: Objective) -> Result<f64> {
    let mut g = Graph::new();
    let (_, losses) = build_loss(model, &mut g, batch, objective)?;
    Ok(losses.total.value)
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Runs `cfg.budget.iterations` steps of: draw batch, forward, loss,
/// backward, AutoClip, Adam. Frozen parameters never change.
pub fn train(
    model: &mut ChimeraModel<f32>,
    corpus: &StemCorpus,
    val_corpus: Option<&StemCorpus>,
    cfg: &TrainConfig,
) -> Result<TrainingReport> {
    let budget = cfg.budget;
    if budget.iterations == 0 || budget.batch_size == 0 {
        return Err(Error::invalid("iterations and batch size must be positive"));
    }
    if corpus.n_sources() != model.config().n_sources {
        return Err(Error::invalid(format!(
            "corpus has {} sources, model has {}",
            corpus.n_sources(),
            model.config().n_sources
        )));
    }
    let stft_config = StftConfig::reference();
    let mut spec = cfg.mix.clone();
    spec.chunk_seconds = budget.chunk_seconds;

    let mut adam = Adam::new(model.params(), cfg.learning_rate)?;
    let mut autoclip = AutoClip::new(cfg.clip_percentile)?;
    let mut schedule = LrSchedule::reference();

    let val_batches = match val_corpus {
        Some(vc) => {
            let examples = draw_examples(vc, &spec, cfg.val_seed, 0, cfg.val_examples.max(1))?;
            examples
                .chunks(budget.batch_size)
                .map(|c| featurize(c, &stft_config))
                .collect::<Result<Vec<_>>>()?
        }
        None => Vec::new(),
    };

    let mut csv = None;
    if let Some(dir) = &cfg.output_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("loss.csv");
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "{LOSS_CSV_HEADER}").map_err(|e| Error::io(&path, e))?;
        csv = Some((path, w));
    }

    let mut report = TrainingReport::default();
    for it in 1..=budget.iterations {
        let first = ((it - 1) * budget.batch_size) as u64;
        let examples = draw_examples(corpus, &spec, cfg.data_seed, first, budget.batch_size)?;
        let batch = featurize(&examples, &stft_config)?;

        let mut g = Graph::new();
        let (vars, losses) = build_loss(model, &mut g, &batch, cfg.objective)?;
        if !losses.total.value.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: it,
                stage: budget.stage.to_string(),
            });
        }
        g.backward(losses.total.node)?;
        let mut grads: Vec<Option<Tensor<f32>>> =
            vars.params.iter().map(|v| v.and_then(|v| g.grad(v).cloned())).collect();
        drop(g);

        let grad_norm = global_norm(&grads);
        let mut record = IterationRecord {
            iteration: it,
            stage: budget.stage,
            loss_dc: losses.dc.map(|l| l.value),
            loss_mi: losses.mi.map(|l| l.value),
            loss_total: losses.total.value,
            lr: adam.learning_rate(),
            grad_norm,
            clip_threshold: f64::NAN,
            clipped_norm: f64::NAN,
            skipped: true,
        };
        if grad_norm.is_finite() {
            let threshold = autoclip.observe(grad_norm)?;
            record.clip_threshold = threshold;
            record.clipped_norm = clip_global_norm(&mut grads, threshold);
            record.skipped = !adam.step(model.params_mut(), &grads)?;
        }
        if record.skipped {
            log::warn!("{} iteration {it}: non-finite gradient, step skipped", budget.stage);
        }
        if let Some((path, w)) = csv.as_mut() {
            writeln!(w, "{}", record.csv_row()).map_err(|e| Error::io(&*path, e))?;
        }
        report.records.push(record);

        if schedule.is_boundary(it) {
            let windowed = if val_batches.is_empty() {
                report.mean_loss(it - schedule.window..it)
            } else {
                let mut total = 0.0;
                let mut count = 0;
                for b in &val_batches {
                    total += evaluate_loss(model, b, cfg.objective)? * b.input.batch() as f64;
                    count += b.input.batch();
                }
                total / count as f64
            };
            report.validation.push((it, windowed));
            let lr = schedule.step(it, windowed, adam.learning_rate());
            if lr != adam.learning_rate() {
                log::info!("{} iteration {it}: learning rate halved to {lr}", budget.stage);
                adam.set_learning_rate(lr);
            }
            if let Some((path, w)) = csv.as_mut() {
                w.flush().map_err(|e| Error::io(&*path, e))?;
            }
        }
        if let Some(dir) = &cfg.output_dir {
            if cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 && it != budget.iterations {
                let path = dir.join(format!("ckpt_{it:06}.ckpt"));
                model.save(&path)?;
                report.checkpoints.push(path);
            }
        }
    }
    if let Some((path, mut w)) = csv {
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    if let Some(dir) = &cfg.output_dir {
        let path = dir.join("final.ckpt");
        model.save(&path)?;
        report.checkpoints.push(path);
    }
    Ok(report)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    write_file(path, |w| w.write_all(text.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::{synthesize_corpus, MixMode, Recipe, SynthParams};
    use crate::network::{ChimeraConfig, Regime};

    fn corpus(seed: u64) -> StemCorpus {
        synthesize_corpus(
            Recipe::HarmonicVsNoise,
            &SynthParams {
                songs: 3,
                seconds: 2.0,
                sample_rate: 16_000,
            },
            seed,
        )
        .unwrap()
    }

    fn tiny_model() -> ChimeraModel<f32> {
        ChimeraModel::init(
            ChimeraConfig {
                n_freq: 257,
                hidden_size: 8,
                n_layers: 1,
                embedding_dim: 4,
                n_sources: 2,
            },
            3,
        )
        .unwrap()
    }

    fn config(objective: Objective, iterations: usize, dir: Option<PathBuf>) -> TrainConfig {
        TrainConfig {
            budget: RunBudget {
                stage: Stage::Pretrain,
                iterations,
                batch_size: 2,
                chunk_seconds: 0.25,
            },
            objective,
            learning_rate: 1e-3,
            clip_percentile: 10.0,
            mix: MixSpec::new(MixMode::Coherent, 0.25, vec![]).unwrap(),
            data_seed: 1,
            val_seed: 2,
            val_examples: 2,
            checkpoint_every: 500,
            output_dir: dir,
        }
    }

    #[test]
    fn substreams_differ_and_repeat() {
        assert_eq!(substream(1, "init"), substream(1, "init"));
        assert_ne!(substream(1, "init"), substream(1, "eval"));
        assert_ne!(substream(1, "init"), substream(2, "init"));
    }

    #[test]
    fn featurize_layout() {
        let c = corpus(0);
        let spec = MixSpec::new(MixMode::Coherent, 0.25, vec![]).unwrap();
        let ex = draw_examples(&c, &spec, 0, 0, 3).unwrap();
        let b = featurize(&ex, &StftConfig::reference()).unwrap();
        let t = StftConfig::reference().frame_count(4000);
        assert_eq!(b.input.tensor().shape(), &[3, t, 257]);
        assert_eq!(b.targets.mix_mag.shape(), &[3 * t * 257]);
        assert_eq!(b.targets.source_mags.shape(), &[3 * t * 257, 2]);
        let mag = stft(&ex[1].mixture, &StftConfig::reference()).unwrap().magnitudes();
        let k = 5 * 257 + 40;
        assert_eq!(b.targets.mix_mag.data()[t * 257 + k], mag[k] as f32);
    }

    #[test]
    fn pretraining_leaves_mask_head_untouched_and_is_deterministic() {
        let c = corpus(0);
        let init = tiny_model();
        let mut a = init.clone();
        let ra = train(
            &mut a,
            &c,
            Some(&corpus(9)),
            &config(Objective::DeepClustering, 6, None),
        )
        .unwrap();
        for name in ["mask.weight", "mask.bias"] {
            assert_eq!(a.param(name), init.param(name));
        }
        assert_ne!(a.param("embedding.weight"), init.param("embedding.weight"));
        let mut b = init.clone();
        let rb = train(
            &mut b,
            &c,
            Some(&corpus(9)),
            &config(Objective::DeepClustering, 6, None),
        )
        .unwrap();
        assert_eq!(ra.records, rb.records);
        assert_eq!(a, b);
        for r in &ra.records {
            assert!(r.loss_mi.is_none() && r.loss_dc.is_some());
            assert!(r.clipped_norm <= r.clip_threshold + 1e-6);
        }
    }

    #[test]
    fn mask_only_freezes_backbone_and_embedding() {
        let c = corpus(0);
        let mut m = tiny_model();
        m.set_trainable(Regime::MaskOnly);
        let before = m.clone();
        train(&mut m, &c, None, &config(Objective::MaskInference, 3, None)).unwrap();
        for (p, q) in m.params().iter().zip(before.params()) {
            if p.group == crate::network::ParamGroup::MaskHead {
                assert_ne!(p.value, q.value, "{}", p.name);
            } else {
                assert_eq!(p.value.data(), q.value.data(), "{}", p.name);
            }
        }
    }

    #[test]
    fn combined_total_is_weighted_sum_and_files_written() {
        let dir = tempfile::tempdir().unwrap();
        let c = corpus(0);
        let mut m = tiny_model();
        let report = train(
            &mut m,
            &c,
            None,
            &config(Objective::Combined { alpha: 0.01 }, 3, Some(dir.path().to_path_buf())),
        )
        .unwrap();
        for r in &report.records {
            let expect = 0.01 * r.loss_dc.unwrap() + 0.99 * r.loss_mi.unwrap();
            assert!((r.loss_total - expect).abs() < 1e-6);
        }
        let csv = fs::read_to_string(dir.path().join("loss.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], LOSS_CSV_HEADER);
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("1,pretrain,"));
        let back = ChimeraModel::<f32>::load(dir.path().join("final.ckpt")).unwrap();
        assert_eq!(back.params()[0].value, m.params()[0].value);
    }

    #[test]
    fn source_count_mismatch_rejected() {
        let c = corpus(0);
        let mut m = ChimeraModel::<f32>::init(
            ChimeraConfig {
                n_sources: 3,
                ..*tiny_model().config()
            },
            0,
        )
        .unwrap();
        assert!(matches!(
            train(&mut m, &c, None, &config(Objective::DeepClustering, 1, None)),
            Err(Error::InvalidArgument(_))
        ));
    }
}
