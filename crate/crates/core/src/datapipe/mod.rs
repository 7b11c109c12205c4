//! Stem corpora, on-the-fly mixing and augmentation.
//!
//! On disk a corpus is a directory:
//!
//! ```text
//! root/corpus.txt          source names, one per line, a blank line,
//!                          then song directory names, one per line
//! root/<song>/<source>.wav mono WAV per stem
//! ```

mod augment;
mod synth;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;

pub use augment::{pitch_shift, time_stretch};
pub use synth::{make_synthetic_corpus, synthesize_corpus, Recipe, SynthParams};

use crate::signal::AudioSignal;
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "corpus.txt";
/// Pitch-shift range in semitones.
pub const PITCH_RANGE: (f64, f64) = (-3.0, 3.0);
/// Time-stretch rate range.
pub const STRETCH_RANGE: (f64, f64) = (0.8, 1.2);

#[derive(Debug, Clone, PartialEq)]
pub struct Song {
    pub name: String,
    /// One stem per corpus source, in source order.
    pub stems: Vec<AudioSignal>,
}

impl Song {
    pub fn len(&self) -> usize {
        self.stems.first().map_or(0, |s| s.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StemCorpus {
    source_names: Vec<String>,
    songs: Vec<Song>,
}

impl StemCorpus {
    pub fn new(source_names: Vec<String>, songs: Vec<Song>) -> Result<Self> {
        if source_names.is_empty() {
            return Err(Error::invalid("corpus declares no sources"));
        }
        for song in &songs {
            if song.stems.len() != source_names.len() {
                return Err(Error::invalid(format!(
                    "song {} has {} stems for {} sources",
                    song.name,
                    song.stems.len(),
                    source_names.len()
                )));
            }
            let (len, sr) = (song.stems[0].len(), song.stems[0].sample_rate());
            if song.stems.iter().any(|s| s.len() != len || s.sample_rate() != sr) {
                return Err(Error::invalid(format!(
                    "stems of song {} differ in length or sample rate",
                    song.name
                )));
            }
        }
        Ok(Self { source_names, songs })
    }

    pub fn source_names(&self) -> &[String] {
        &self.source_names
    }

    pub fn n_sources(&self) -> usize {
        self.source_names.len()
    }

    pub fn songs(&self) -> &[Song] {
        &self.songs
    }

    pub fn sample_rate(&self) -> Option<u32> {
        self.songs.first().map(|s| s.stems[0].sample_rate())
    }

    pub fn duration_seconds_per_source(&self) -> f64 {
        self.songs.iter().map(|s| s.stems[0].duration_seconds()).sum()
    }

    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let manifest = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        let mut sections = text.splitn(2, "\n\n");
        let names: Vec<String> = sections
            .next()
            .unwrap_or("")
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        let song_dirs: Vec<&str> = sections
            .next()
            .unwrap_or("")
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect();
        let songs = song_dirs
            .iter()
            .map(|dir| {
                let stems = names
                    .iter()
                    .map(|n| AudioSignal::read_wav(root.join(dir).join(format!("{n}.wav"))))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Song {
                    name: dir.to_string(),
                    stems,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(names, songs)
    }

    pub fn write(&self, root: impl AsRef<Path>) -> Result<()> {
        let root = root.as_ref();
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let mut manifest = String::new();
        for n in &self.source_names {
            manifest.push_str(n);
            manifest.push('\n');
        }
        manifest.push('\n');
        for song in &self.songs {
            manifest.push_str(&song.name);
            manifest.push('\n');
            let dir = root.join(&song.name);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for (name, stem) in self.source_names.iter().zip(&song.stems) {
                stem.write_wav(dir.join(format!("{name}.wav")))?;
            }
        }
        let path = root.join(MANIFEST_FILE);
        fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixMode {
    /// All stems from one song and one time offset.
    Coherent,
    /// Song and offset drawn independently for every stem.
    Incoherent,
}

impl fmt::Display for MixMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MixMode::Coherent => "coherent",
            MixMode::Incoherent => "incoherent",
        })
    }
}

impl FromStr for MixMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coherent" => Ok(MixMode::Coherent),
            "incoherent" => Ok(MixMode::Incoherent),
            other => Err(Error::invalid(format!(
                "unknown mix mode {other:?} (coherent or incoherent)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Augmentation {
    PitchShift,
    TimeStretch,
}

impl fmt::Display for Augmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Augmentation::PitchShift => "pitch_shift",
            Augmentation::TimeStretch => "time_stretch",
        })
    }
}

impl FromStr for Augmentation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pitch_shift" => Ok(Augmentation::PitchShift),
            "time_stretch" => Ok(Augmentation::TimeStretch),
            other => Err(Error::invalid(format!(
                "unknown augmentation {other:?} (pitch_shift or time_stretch)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixSpec {
    pub mode: MixMode,
    pub chunk_seconds: f64,
    pub augmentations: Vec<Augmentation>,
}

impl MixSpec {
    pub fn new(mode: MixMode, chunk_seconds: f64, augmentations: Vec<Augmentation>) -> Result<Self> {
        if !chunk_seconds.is_finite() || chunk_seconds <= 0.0 {
            return Err(Error::invalid(format!(
                "chunk length {chunk_seconds} s must be positive"
            )));
        }
        Ok(Self {
            mode,
            chunk_seconds,
            augmentations,
        })
    }

    fn has(&self, a: Augmentation) -> bool {
        self.augmentations.contains(&a)
    }

    pub fn chunk_len(&self, sample_rate: u32) -> usize {
        (self.chunk_seconds * sample_rate as f64).round() as usize
    }
}

/// Where one stem of an example came from and how it was altered.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StemProvenance {
    pub song: usize,
    pub offset: usize,
    pub semitones: Option<f64>,
    pub stretch: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub mixture: AudioSignal,
    pub sources: Vec<AudioSignal>,
    pub provenance: Vec<StemProvenance>,
}

fn eligible_songs(corpus: &StemCorpus, chunk_len: usize) -> Result<Vec<usize>> {
    let songs: Vec<usize> = corpus
        .songs()
        .iter()
        .enumerate()
        .filter(|(_, s)| s.len() >= chunk_len && chunk_len > 0)
        .map(|(i, _)| i)
        .collect();
    if songs.is_empty() {
        return Err(Error::invalid(format!(
            "no song in the corpus is at least {chunk_len} samples long"
        )));
    }
    Ok(songs)
}

fn draw_tuple<R: Rng>(
    corpus: &StemCorpus,
    spec: &MixSpec,
    eligible: &[usize],
    chunk_len: usize,
    rng: &mut R,
) -> StemProvenance {
    let song = eligible[rng.gen_range(0..eligible.len())];
    let offset = rng.gen_range(0..=corpus.songs()[song].len() - chunk_len);
    let semitones = spec
        .has(Augmentation::PitchShift)
        .then(|| rng.gen_range(PITCH_RANGE.0..=PITCH_RANGE.1));
    let stretch = spec
        .has(Augmentation::TimeStretch)
        .then(|| rng.gen_range(STRETCH_RANGE.0..=STRETCH_RANGE.1));
    StemProvenance {
        song,
        offset,
        semitones,
        stretch,
    }
}

fn render_stem(stem: &AudioSignal, p: &StemProvenance, chunk_len: usize) -> Result<AudioSignal> {
    // A stretched excerpt is read long enough to fill the chunk after stretching.
    let read_len = p.stretch.map_or(chunk_len, |r| (chunk_len as f64 * r).round() as usize);
    let mut x = stem.excerpt(p.offset, read_len);
    if let Some(rate) = p.stretch {
        x = time_stretch(&x, rate)?;
    }
    if let Some(semitones) = p.semitones {
        x = pitch_shift(&x, semitones)?;
    }
    Ok(x.fit_to_len(chunk_len))
}

fn assemble(corpus: &StemCorpus, provenance: Vec<StemProvenance>, chunk_len: usize) -> Result<TrainingExample> {
    let sources = provenance
        .iter()
        .enumerate()
        .map(|(c, p)| render_stem(&corpus.songs()[p.song].stems[c], p, chunk_len))
        .collect::<Result<Vec<_>>>()?;
    let sr = sources[0].sample_rate();
    let mut mix = vec![0.0; chunk_len];
    for s in &sources {
        for (m, v) in mix.iter_mut().zip(s.samples()) {
            *m += v;
        }
    }
    Ok(TrainingExample {
        mixture: AudioSignal::new(mix, sr)?,
        sources,
        provenance,
    })
}

/// One song, one offset, one set of augmentation parameters for all stems.
pub fn draw_coherent<R: Rng>(corpus: &StemCorpus, spec: &MixSpec, rng: &mut R) -> Result<TrainingExample> {
    let sr = corpus.sample_rate().ok_or_else(|| Error::invalid("empty corpus"))?;
    let chunk_len = spec.chunk_len(sr);
    let eligible = eligible_songs(corpus, chunk_len)?;
    let p = draw_tuple(corpus, spec, &eligible, chunk_len, rng);
    assemble(corpus, vec![p; corpus.n_sources()], chunk_len)
}

/// Song, offset and augmentation parameters drawn independently per stem.
pub fn draw_incoherent<R: Rng>(corpus: &StemCorpus, spec: &MixSpec, rng: &mut R) -> Result<TrainingExample> {
    let sr = corpus.sample_rate().ok_or_else(|| Error::invalid("empty corpus"))?;
    let chunk_len = spec.chunk_len(sr);
    let eligible = eligible_songs(corpus, chunk_len)?;
    let provenance = (0..corpus.n_sources())
        .map(|_| draw_tuple(corpus, spec, &eligible, chunk_len, rng))
        .collect();
    assemble(corpus, provenance, chunk_len)
}

pub fn draw_example<R: Rng>(corpus: &StemCorpus, spec: &MixSpec, rng: &mut R) -> Result<TrainingExample> {
    match spec.mode {
        MixMode::Coherent => draw_coherent(corpus, spec, rng),
        MixMode::Incoherent => draw_incoherent(corpus, spec, rng),
    }
}
