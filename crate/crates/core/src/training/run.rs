use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{substream, train, write_text, Objective, RunBudget, Stage, TrainConfig, TrainingReport};
use crate::datapipe::{MixSpec, StemCorpus};
use crate::manifest::ExperimentManifest;
use crate::network::{ChimeraConfig, ChimeraModel, ParamGroup, Regime};
use crate::{Error, Result};

/// Starting point of a fine-tuning run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Init {
    Scratch,
    Checkpoint(PathBuf),
}

impl FromStr for Init {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "" => Err(Error::invalid("empty --init")),
            "scratch" => Ok(Init::Scratch),
            path => Ok(Init::Checkpoint(PathBuf::from(path))),
        }
    }
}

impl fmt::Display for Init {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Init::Scratch => f.write_str("scratch"),
            Init::Checkpoint(p) => write!(f, "{}", p.display()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub name: String,
    pub dir: PathBuf,
    pub checkpoint: PathBuf,
    pub report: TrainingReport,
    pub frozen_groups: Vec<ParamGroup>,
}

/// Directory name of a run under the manifest's output directory.
pub fn run_name(init: &Init, regime: Regime) -> String {
    match (init, regime) {
        (Init::Scratch, Regime::Whole) => "baseline".into(),
        (Init::Scratch, Regime::MaskOnly) => "baseline_mask_only".into(),
        (Init::Checkpoint(_), r) => format!("finetune_{r}"),
    }
}

fn write_run_log(dir: &Path, manifest: &ExperimentManifest, lines: &[(&str, String)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut text = format!("# {} {}\n", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"));
    for (k, v) in lines {
        text.push_str(&format!("# {k}: {v}\n"));
    }
    text.push_str(&manifest.to_text());
    write_text(&dir.join("run.txt"), &text)
}

fn mix_spec(m: &ExperimentManifest) -> Result<MixSpec> {
    MixSpec::new(m.mix_mode, m.chunk_seconds, m.augmentations.clone())
}

fn groups_text(groups: &[ParamGroup]) -> String {
    if groups.is_empty() {
        return "none".into();
    }
    groups.iter().map(|g| g.to_string()).collect::<Vec<_>>().join(", ")
}

/// Trains a fresh model on the pretraining corpus with the deep clustering
/// loss only. The mask head is sized for that corpus and left untrained.
pub fn pretrain(m: &ExperimentManifest) -> Result<RunOutcome> {
    let corpus = StemCorpus::load(m.pretrain_corpus())?;
    let val = StemCorpus::load(m.pretrain_val_corpus())?;
    let config = ChimeraConfig {
        n_sources: corpus.n_sources(),
        ..m.model
    };
    let mut model = ChimeraModel::<f32>::init(config, substream(m.seed, "init"))?;
    let dir = m.output_dir.join("pretrain");
    write_run_log(
        &dir,
        m,
        &[("run", "pretrain".into()), ("stage", Stage::Pretrain.to_string())],
    )?;
    let cfg = TrainConfig {
        budget: RunBudget {
            stage: Stage::Pretrain,
            iterations: m.pretrain_iterations,
            batch_size: m.batch_size,
            chunk_seconds: m.chunk_seconds,
        },
        objective: Objective::DeepClustering,
        learning_rate: m.learning_rate,
        clip_percentile: m.clip_percentile,
        mix: mix_spec(m)?,
        data_seed: substream(m.seed, "pretrain.data"),
        val_seed: substream(m.seed, "pretrain.val"),
        val_examples: m.val_examples,
        checkpoint_every: m.checkpoint_every,
        output_dir: Some(dir.clone()),
    };
    let report = train(&mut model, &corpus, Some(&val), &cfg)?;
    Ok(RunOutcome {
        name: "pretrain".into(),
        checkpoint: dir.join("final.ckpt"),
        dir,
        report,
        frozen_groups: Vec::new(),
    })
}

/// Fine-tunes from a checkpoint, or trains the scratch baseline, on the
/// manifest's target corpus.
pub fn finetune(m: &ExperimentManifest, init: &Init, regime: Regime) -> Result<RunOutcome> {
    let corpus = StemCorpus::load(&m.train_corpus)?;
    let val = StemCorpus::load(&m.val_corpus)?;
    if corpus.n_sources() != m.model.n_sources {
        return Err(Error::invalid(format!(
            "manifest declares {} sources, {} has {}",
            m.model.n_sources,
            m.train_corpus.display(),
            corpus.n_sources()
        )));
    }
    let (mut model, stage, iterations) = match init {
        Init::Scratch => (
            ChimeraModel::<f32>::init(m.model, substream(m.seed, "init"))?,
            Stage::Baseline,
            m.baseline_iterations,
        ),
        Init::Checkpoint(path) => {
            let mut model = ChimeraModel::<f32>::load(path)?;
            let c = *model.config();
            if (c.n_freq, c.hidden_size, c.n_layers, c.embedding_dim)
                != (
                    m.model.n_freq,
                    m.model.hidden_size,
                    m.model.n_layers,
                    m.model.embedding_dim,
                )
            {
                return Err(Error::invalid(format!(
                    "checkpoint {} has config {c:?}, manifest expects {:?}",
                    path.display(),
                    m.model
                )));
            }
            if c.n_sources != m.model.n_sources {
                log::info!(
                    "mask head reinitialised for {} sources (checkpoint had {})",
                    m.model.n_sources,
                    c.n_sources
                );
                model.reset_mask_head(m.model.n_sources, substream(m.seed, "mask_head"))?;
            }
            (model, Stage::Finetune, m.finetune_iterations)
        }
    };
    model.set_trainable(regime);
    let frozen_groups = model.frozen_groups();
    let name = run_name(init, regime);
    let dir = m.output_dir.join(&name);
    log::info!("{name}: frozen parameter groups: {}", groups_text(&frozen_groups));
    write_run_log(
        &dir,
        m,
        &[
            ("run", name.clone()),
            ("stage", stage.to_string()),
            ("init", init.to_string()),
            ("regime", regime.to_string()),
            ("frozen_groups", groups_text(&frozen_groups)),
        ],
    )?;
    let objective = match regime {
        Regime::Whole => Objective::Combined { alpha: m.alpha },
        Regime::MaskOnly => Objective::MaskInference,
    };
    let cfg = TrainConfig {
        budget: RunBudget {
            stage,
            iterations,
            batch_size: m.batch_size,
            chunk_seconds: m.chunk_seconds,
        },
        objective,
        learning_rate: m.learning_rate,
        clip_percentile: m.clip_percentile,
        mix: mix_spec(m)?,
        data_seed: substream(m.seed, "target.data"),
        val_seed: substream(m.seed, "target.val"),
        val_examples: m.val_examples,
        checkpoint_every: m.checkpoint_every,
        output_dir: Some(dir.clone()),
    };
    let report = train(&mut model, &corpus, Some(&val), &cfg)?;
    Ok(RunOutcome {
        name,
        checkpoint: dir.join("final.ckpt"),
        dir,
        report,
        frozen_groups,
    })
}
