//! Seeded synthetic polyphony for tests and desk-scale experiments.
//!
//! Each voice is a bounded random walk in pitch around its own register
//! centre, with random note lengths and occasional rests. Neighbouring
//! registers overlap, so voices can cross.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::score::{Measure, Note, Score};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub divisions: u32,
    pub measure_ticks: u64,
    pub lowest_pitch: u8,
    pub highest_pitch: u8,
    /// Half-width of each voice's register around its centre.
    pub register_half_width: u8,
    /// Largest melodic step, in semitones.
    pub max_step: u8,
    /// Note lengths in ticks, drawn uniformly (repeat entries to weight them).
    pub durations: Vec<u64>,
    pub rest_probability: f64,
    pub rest_durations: Vec<u64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            divisions: 4,
            measure_ticks: 16,
            lowest_pitch: 36,
            highest_pitch: 84,
            register_half_width: 7,
            max_step: 4,
            durations: vec![2, 4, 4, 4, 8],
            rest_probability: 0.1,
            rest_durations: vec![2, 4, 8],
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.divisions == 0 || self.measure_ticks == 0 {
            return Err(Error::Config("divisions and measure_ticks must be positive".into()));
        }
        if self.highest_pitch > 127 || self.lowest_pitch > self.highest_pitch {
            return Err(Error::Config("pitch range must satisfy lowest <= highest <= 127".into()));
        }
        if self.max_step == 0 {
            return Err(Error::Config("max_step must be positive".into()));
        }
        let span = self.highest_pitch - self.lowest_pitch;
        if span < self.max_step || 2 * u16::from(self.register_half_width) < u16::from(self.max_step) {
            return Err(Error::Config(format!(
                "pitch range too narrow for a step of {} semitones",
                self.max_step
            )));
        }
        if self.durations.is_empty() || self.durations.contains(&0) {
            return Err(Error::Config("durations must be nonempty and positive".into()));
        }
        if !(0.0..=1.0).contains(&self.rest_probability) {
            return Err(Error::Config("rest_probability must lie in [0, 1]".into()));
        }
        if self.rest_probability > 0.0 && (self.rest_durations.is_empty() || self.rest_durations.contains(&0)) {
            return Err(Error::Config("rest_durations must be nonempty and positive".into()));
        }
        Ok(())
    }
}

/// Generates a labelled, monophonic-per-voice score. Voice 0 is the lowest
/// register.
pub fn generate_synthetic_score(seed: u64, n_voices: usize, n_notes_per_voice: usize, config: &SynthConfig) -> Result<Score> {
    if n_voices == 0 {
        return Err(Error::Config("n_voices must be at least 1".into()));
    }
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let low = f64::from(config.lowest_pitch);
    let high = f64::from(config.highest_pitch);
    let band = (high - low) / n_voices as f64;
    let half = i32::from(config.register_half_width);
    let step = i32::from(config.max_step);

    let mut notes = Vec::with_capacity(n_voices * n_notes_per_voice);
    for v in 0..n_voices {
        let centre = (low + band * (v as f64 + 0.5)).round() as i32;
        let lo = (centre - half).max(i32::from(config.lowest_pitch));
        let hi = (centre + half).min(i32::from(config.highest_pitch));
        let mut pitch = rng.gen_range(lo..=hi);
        let mut t = if rng.gen_bool(config.rest_probability) {
            *config.rest_durations.choose(&mut rng).expect("validated")
        } else {
            0
        };
        for k in 0..n_notes_per_voice {
            let duration = *config.durations.choose(&mut rng).expect("validated");
            notes.push(Note {
                id: format!("v{v}n{k:04}"),
                onset: t,
                duration,
                pitch: pitch as u8,
                voice: Some(v as u32),
            });
            t += duration;
            if config.rest_probability > 0.0 && rng.gen_bool(config.rest_probability) {
                t += *config.rest_durations.choose(&mut rng).expect("validated");
            }
            let mut next = pitch + rng.gen_range(-step..=step);
            // Reflect at the register walls.
            if next > hi {
                next = 2 * hi - next;
            }
            if next < lo {
                next = 2 * lo - next;
            }
            pitch = next.clamp(lo, hi);
        }
    }

    let end = notes.iter().map(Note::offset).max().unwrap_or(0);
    let count = end.div_ceil(config.measure_ticks).max(1);
    let measures = (0..count)
        .map(|i| Measure {
            index: i as i64,
            onset: i * config.measure_ticks,
            duration: config.measure_ticks,
        })
        .collect();
    Score::new(config.divisions, measures, notes)
}

/// Layout of a seeded train/test corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub base_seed: u64,
    pub train_pieces: usize,
    pub test_pieces: usize,
    pub min_voices: usize,
    pub max_voices: usize,
    pub notes_per_voice: usize,
    pub synth: SynthConfig,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            base_seed: 1000,
            train_pieces: 22,
            test_pieces: 5,
            min_voices: 2,
            max_voices: 4,
            notes_per_voice: 30,
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub name: String,
    pub split: String,
    pub seed: u64,
    pub voices: usize,
    #[serde(skip)]
    pub score: Option<Score>,
}

/// Pieces `train_00..` then `test_00..`; piece `i` uses seed
/// `base_seed + i` and cycles through the voice counts.
pub fn synthetic_corpus(spec: &CorpusSpec) -> Result<Vec<CorpusEntry>> {
    if spec.min_voices == 0 || spec.min_voices > spec.max_voices {
        return Err(Error::Config("voice range must satisfy 1 <= min_voices <= max_voices".into()));
    }
    let span = spec.max_voices - spec.min_voices + 1;
    let mut out = Vec::with_capacity(spec.train_pieces + spec.test_pieces);
    for i in 0..spec.train_pieces + spec.test_pieces {
        let (split, k) = if i < spec.train_pieces {
            ("train", i)
        } else {
            ("test", i - spec.train_pieces)
        };
        let seed = spec.base_seed + i as u64;
        let voices = spec.min_voices + i % span;
        let score = generate_synthetic_score(seed, voices, spec.notes_per_voice, &spec.synth)?;
        out.push(CorpusEntry {
            name: format!("{split}_{k:02}"),
            split: split.to_string(),
            seed,
            voices,
            score: Some(score),
        });
    }
    Ok(out)
}
