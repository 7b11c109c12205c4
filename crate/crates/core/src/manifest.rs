//! Experiment manifests: line-based `key = value` text, `#` comments,
//! comma-separated lists. Relative paths resolve against the manifest's
//! directory.
//!
//! ```text
//! # pretrain on corpus A, fine-tune on B
//! pretrain_corpus = data/a
//! train_corpus = data/b
//! val_corpus = data/b_val
//! test_corpus = data/b_test
//! augmentations = pitch_shift, time_stretch
//! hidden_size = 32
//! output_dir = runs/h1
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::datapipe::{Augmentation, MixMode};
use crate::network::ChimeraConfig;
use crate::signal::StftConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentManifest {
    /// Corpus for the pretraining stage; defaults to `train_corpus`.
    pub pretrain_corpus: Option<PathBuf>,
    /// Validation corpus for pretraining; defaults to `val_corpus`.
    pub pretrain_val_corpus: Option<PathBuf>,
    pub train_corpus: PathBuf,
    pub val_corpus: PathBuf,
    pub test_corpus: Option<PathBuf>,
    pub mix_mode: MixMode,
    pub augmentations: Vec<Augmentation>,
    pub chunk_seconds: f64,
    pub batch_size: usize,
    pub pretrain_iterations: usize,
    pub finetune_iterations: usize,
    pub baseline_iterations: usize,
    pub learning_rate: f64,
    pub clip_percentile: f64,
    pub alpha: f64,
    pub model: ChimeraConfig,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub val_examples: usize,
    pub checkpoint_every: usize,
    pub eval_examples: usize,
}

const KEYS: &[&str] = &[
    "pretrain_corpus",
    "pretrain_val_corpus",
    "train_corpus",
    "val_corpus",
    "test_corpus",
    "mix_mode",
    "augmentations",
    "chunk_seconds",
    "batch_size",
    "pretrain_iterations",
    "finetune_iterations",
    "baseline_iterations",
    "learning_rate",
    "clip_percentile",
    "alpha",
    "n_freq",
    "hidden_size",
    "n_layers",
    "embedding_dim",
    "n_sources",
    "seed",
    "output_dir",
    "val_examples",
    "checkpoint_every",
    "eval_examples",
];

struct Entries<'a> {
    path: &'a Path,
    base: &'a Path,
    values: BTreeMap<String, (usize, String)>,
    last_line: usize,
}

impl Entries<'_> {
    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line,
            message: message.into(),
        }
    }

    fn raw(&self, key: &str) -> Option<&(usize, String)> {
        self.values.get(key)
    }

    fn required(&self, key: &str) -> Result<&(usize, String)> {
        self.raw(key)
            .ok_or_else(|| self.err(self.last_line, format!("missing required key `{key}`")))
    }

    fn path_of(&self, value: &str) -> PathBuf {
        let p = PathBuf::from(value);
        if p.is_absolute() {
            p
        } else {
            self.base.join(p)
        }
    }

    fn opt_path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(|(_, v)| self.path_of(v))
    }

    fn req_path(&self, key: &str) -> Result<PathBuf> {
        self.required(key).map(|(_, v)| self.path_of(v))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some((line, v)) => v
                .parse()
                .map_err(|e| self.err(*line, format!("bad value for `{key}`: {e}"))),
        }
    }

    fn positive<T: std::str::FromStr + PartialOrd + Default + Copy>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.parse(key, default)?;
        if v <= T::default() {
            let line = self.raw(key).map_or(self.last_line, |(l, _)| *l);
            return Err(self.err(line, format!("`{key}` must be positive")));
        }
        Ok(v)
    }
}

impl ExperimentManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parent = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        let base = std::path::absolute(parent).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path, &base)
    }

    /// Parses manifest text. `path` only labels diagnostics; relative paths
    /// inside the manifest are joined onto `base`.
    pub fn parse(text: &str, path: &Path, base: &Path) -> Result<Self> {
        let mut entries = Entries {
            path,
            base,
            values: BTreeMap::new(),
            last_line: text.lines().count(),
        };
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(entries.err(line, format!("expected `key = value`, found `{content}`")));
            };
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(entries.err(line, format!("unknown key `{key}`")));
            }
            if entries.values.contains_key(key) {
                return Err(entries.err(line, format!("duplicate key `{key}`")));
            }
            entries.values.insert(key.to_string(), (line, value.to_string()));
        }
        let e = &entries;

        let augmentations = match e.raw("augmentations") {
            None => Vec::new(),
            Some((_, v)) if v.is_empty() || v == "none" => Vec::new(),
            Some((line, v)) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<Augmentation>()
                        .map_err(|err| e.err(*line, err.to_string()))
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let mix_mode = match e.raw("mix_mode") {
            None => MixMode::Coherent,
            Some((line, v)) => v.parse().map_err(|err: Error| e.err(*line, err.to_string()))?,
        };
        let reference = ChimeraConfig::reference(2);
        let n_freq = StftConfig::reference().n_freq();
        let model = ChimeraConfig {
            n_freq: e.positive("n_freq", n_freq)?,
            hidden_size: e.positive("hidden_size", reference.hidden_size)?,
            n_layers: e.positive("n_layers", reference.n_layers)?,
            embedding_dim: e.positive("embedding_dim", reference.embedding_dim)?,
            n_sources: e.positive("n_sources", reference.n_sources)?,
        };
        if model.n_freq != n_freq {
            let line = e.raw("n_freq").map_or(0, |(l, _)| *l);
            return Err(e.err(line, format!("n_freq must be {n_freq} for the 512/128 STFT")));
        }
        let alpha: f64 = e.parse("alpha", crate::losses::DEFAULT_ALPHA)?;
        if !(0.0..=1.0).contains(&alpha) {
            return Err(e.err(e.raw("alpha").map_or(0, |(l, _)| *l), "`alpha` must lie in [0, 1]"));
        }
        let clip_percentile: f64 = e.positive("clip_percentile", 10.0)?;
        if clip_percentile > 100.0 {
            return Err(e.err(
                e.raw("clip_percentile").map_or(0, |(l, _)| *l),
                "`clip_percentile` must be at most 100",
            ));
        }
        Ok(Self {
            pretrain_corpus: e.opt_path("pretrain_corpus"),
            pretrain_val_corpus: e.opt_path("pretrain_val_corpus"),
            train_corpus: e.req_path("train_corpus")?,
            val_corpus: e.req_path("val_corpus")?,
            test_corpus: e.opt_path("test_corpus"),
            mix_mode,
            augmentations,
            chunk_seconds: e.positive("chunk_seconds", 10.0)?,
            batch_size: e.positive("batch_size", 24)?,
            pretrain_iterations: e.positive("pretrain_iterations", 10_000)?,
            finetune_iterations: e.positive("finetune_iterations", 2_000)?,
            baseline_iterations: e.positive("baseline_iterations", 12_000)?,
            learning_rate: e.positive("learning_rate", 1e-3)?,
            clip_percentile,
            alpha,
            model,
            seed: e.parse("seed", 0)?,
            output_dir: e.req_path("output_dir")?,
            val_examples: e.positive("val_examples", 24)?,
            checkpoint_every: e.positive("checkpoint_every", 500)?,
            eval_examples: e.positive("eval_examples", 1000)?,
        })
    }

    pub fn pretrain_corpus(&self) -> &Path {
        self.pretrain_corpus.as_deref().unwrap_or(&self.train_corpus)
    }

    pub fn pretrain_val_corpus(&self) -> &Path {
        self.pretrain_val_corpus.as_deref().unwrap_or(&self.val_corpus)
    }

    /// The fully resolved manifest in its own syntax; parsing the result
    /// yields an equal manifest.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let p = |p: &Path| p.display().to_string();
        if let Some(c) = &self.pretrain_corpus {
            kv("pretrain_corpus", p(c));
        }
        if let Some(c) = &self.pretrain_val_corpus {
            kv("pretrain_val_corpus", p(c));
        }
        kv("train_corpus", p(&self.train_corpus));
        kv("val_corpus", p(&self.val_corpus));
        if let Some(c) = &self.test_corpus {
            kv("test_corpus", p(c));
        }
        kv("mix_mode", self.mix_mode.to_string());
        let augs: Vec<String> = self.augmentations.iter().map(|a| a.to_string()).collect();
        kv(
            "augmentations",
            if augs.is_empty() {
                "none".into()
            } else {
                augs.join(", ")
            },
        );
        kv("chunk_seconds", format!("{:?}", self.chunk_seconds));
        kv("batch_size", self.batch_size.to_string());
        kv("pretrain_iterations", self.pretrain_iterations.to_string());
        kv("finetune_iterations", self.finetune_iterations.to_string());
        kv("baseline_iterations", self.baseline_iterations.to_string());
        kv("learning_rate", format!("{:?}", self.learning_rate));
        kv("clip_percentile", format!("{:?}", self.clip_percentile));
        kv("alpha", format!("{:?}", self.alpha));
        kv("n_freq", self.model.n_freq.to_string());
        kv("hidden_size", self.model.hidden_size.to_string());
        kv("n_layers", self.model.n_layers.to_string());
        kv("embedding_dim", self.model.embedding_dim.to_string());
        kv("n_sources", self.model.n_sources.to_string());
        kv("seed", self.seed.to_string());
        kv("output_dir", p(&self.output_dir));
        kv("val_examples", self.val_examples.to_string());
        kv("checkpoint_every", self.checkpoint_every.to_string());
        kv("eval_examples", self.eval_examples.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentManifest> {
        ExperimentManifest::parse(text, Path::new("m.txt"), Path::new("/base"))
    }

    const MINIMAL: &str = "train_corpus = b\nval_corpus = /abs/v\noutput_dir = out\n";

    #[test]
    fn defaults_are_reference_values() {
        let m = parse(MINIMAL).unwrap();
        assert_eq!(m.train_corpus, PathBuf::from("/base/b"));
        assert_eq!(m.val_corpus, PathBuf::from("/abs/v"));
        assert_eq!(m.pretrain_corpus(), Path::new("/base/b"));
        assert_eq!(m.model, ChimeraConfig::reference(2));
        assert_eq!(
            (
                m.batch_size,
                m.pretrain_iterations,
                m.finetune_iterations,
                m.baseline_iterations
            ),
            (24, 10_000, 2_000, 12_000)
        );
        assert_eq!(m.chunk_seconds, 10.0);
        assert_eq!(m.learning_rate, 1e-3);
        assert_eq!(m.clip_percentile, 10.0);
        assert_eq!(m.alpha, 0.01);
        assert!(m.augmentations.is_empty());
        assert_eq!(m.mix_mode, MixMode::Coherent);
    }

    #[test]
    fn comments_lists_and_round_trip() {
        let text = format!(
            "# header\n{MINIMAL}augmentations = pitch_shift , time_stretch # both\nmix_mode = incoherent\nhidden_size = 16\nseed = 7\n"
        );
        let m = parse(&text).unwrap();
        assert_eq!(
            m.augmentations,
            vec![Augmentation::PitchShift, Augmentation::TimeStretch]
        );
        assert_eq!(m.mix_mode, MixMode::Incoherent);
        assert_eq!(m.model.hidden_size, 16);
        assert_eq!(m.seed, 7);
        assert_eq!(parse(&m.to_text()).unwrap(), m);
    }

    fn line_of(err: Error) -> usize {
        match err {
            Error::Parse { line, .. } => line,
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert_eq!(
            line_of(parse(&format!("{MINIMAL}\nbatch_size = ten\n")).unwrap_err()),
            5
        );
        assert_eq!(line_of(parse(&format!("{MINIMAL}bogus = 1\n")).unwrap_err()), 4);
        assert_eq!(line_of(parse(&format!("{MINIMAL}no equals sign\n")).unwrap_err()), 4);
        assert_eq!(
            line_of(parse(&format!("{MINIMAL}seed = 1\nseed = 2\n")).unwrap_err()),
            5
        );
        assert_eq!(
            line_of(parse(&format!("{MINIMAL}augmentations = reverb\n")).unwrap_err()),
            4
        );
        assert_eq!(line_of(parse(&format!("{MINIMAL}batch_size = 0\n")).unwrap_err()), 4);
        let msg = parse("val_corpus = v\noutput_dir = o\n").unwrap_err().to_string();
        assert!(msg.contains("train_corpus"), "{msg}");
    }
}
