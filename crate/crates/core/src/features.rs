//! Per-note input features.
//!
//! Column layout of the 41-wide matrix:
//!
//! | columns  | content                                   |
//! |----------|-------------------------------------------|
//! | 0..12    | pitch-class one-hot                       |
//! | 12..20   | octave one-hot, `floor(pitch/12) - 1` clamped to 0..=7 |
//! | 20       | `1 - tanh(dur(note) / dur(measure))`      |
//! | 21..41   | Laplacian positional encoding             |

use std::io::Write;

use rand::Rng;
use voicelink_autodiff::Tensor;

use crate::error::{Error, Result};
use crate::graph::ScoreGraph;
use crate::score::Score;
use crate::spectral::{smallest_nontrivial, NormalizedLaplacian};

pub const PITCH_CLASS_COLS: usize = 12;
pub const OCTAVE_COLS: usize = 8;
pub const INTRINSIC_COLS: usize = PITCH_CLASS_COLS + OCTAVE_COLS + 1;
pub const DURATION_COL: usize = PITCH_CLASS_COLS + OCTAVE_COLS;
pub const DEFAULT_PE_DIM: usize = 20;
pub const FEATURE_DIM: usize = INTRINSIC_COLS + DEFAULT_PE_DIM;

/// Node features, one row per note in score order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Tensor,
    pub pe_dim: usize,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }

    /// Flips the sign of each positional-encoding column independently.
    pub fn with_random_pe_signs<R: Rng>(&self, rng: &mut R) -> Self {
        let mut out = self.clone();
        for c in INTRINSIC_COLS..INTRINSIC_COLS + self.pe_dim {
            if rng.gen_bool(0.5) {
                for r in 0..out.values.rows() {
                    let v = out.values.get(r, c);
                    out.values.set(r, c, -v);
                }
            }
        }
        out
    }

    /// Little-endian binary dump: `b"VLFEAT\0\0"`, rows `u64`, cols `u64`,
    /// then `rows*cols` row-major `f64`.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(b"VLFEAT\0\0")?;
        w.write_all(&(self.rows() as u64).to_le_bytes())?;
        w.write_all(&(self.cols() as u64).to_le_bytes())?;
        for v in self.values.data() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(bytes: &[u8]) -> Result<Tensor> {
        if bytes.len() < 24 || &bytes[..8] != b"VLFEAT\0\0" {
            return Err(Error::Parse("not a feature matrix file".into()));
        }
        let rows = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let cols = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes")) as usize;
        let body = &bytes[24..];
        if body.len() != rows * cols * 8 {
            return Err(Error::Parse("feature matrix payload has the wrong length".into()));
        }
        let data = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Ok(Tensor::from_vec(rows, cols, data)?)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in 0..self.rows() {
            let row: Vec<String> = self.values.row(r).iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Duration encoding relative to the containing measure.
pub fn duration_feature(duration: u64, measure_duration: u64) -> f64 {
    1.0 - (duration as f64 / measure_duration as f64).tanh()
}

pub fn octave_index(pitch: u8) -> usize {
    (i32::from(pitch) / 12 - 1).clamp(0, OCTAVE_COLS as i32 - 1) as usize
}

/// Pitch class, octave and duration columns (`|V| x 21`).
pub fn intrinsic_features(score: &Score) -> Tensor {
    let measures = score.note_measures();
    let mut x = Tensor::zeros(score.len(), INTRINSIC_COLS);
    for (i, n) in score.notes.iter().enumerate() {
        x.set(i, usize::from(n.pitch % 12), 1.0);
        x.set(i, PITCH_CLASS_COLS + octave_index(n.pitch), 1.0);
        x.set(i, DURATION_COL, duration_feature(n.duration, score.measures[measures[i]].duration));
    }
    x
}

#[derive(Debug, Clone, Copy)]
pub struct PeOptions {
    pub k: usize,
    /// Largest graph solved with the dense eigensolver.
    pub dense_limit: usize,
    pub seed: u64,
}

impl Default for PeOptions {
    fn default() -> Self {
        Self {
            k: DEFAULT_PE_DIM,
            dense_limit: 2000,
            seed: 0,
        }
    }
}

/// Eigenvectors of the `k` smallest non-null normalized-Laplacian
/// eigenvalues over the type-collapsed, symmetrized edge set. Each column
/// is sign-fixed (first nonzero entry positive) and missing columns are
/// zero.
pub fn laplacian_pe(graph: &ScoreGraph, options: &PeOptions) -> Result<Tensor> {
    let n = graph.num_nodes();
    if n == 0 {
        return Err(Error::Consistency("positional encoding needs at least one node".into()));
    }
    let lap = NormalizedLaplacian::from_edges(n, graph.edges.iter().map(|e| (e.src, e.dst)));
    let spectrum = smallest_nontrivial(&lap, options.k, options.dense_limit, options.seed)?;
    let mut pe = Tensor::zeros(n, options.k);
    for (c, v) in spectrum.vectors.iter().enumerate() {
        let sign = v.iter().find(|x| x.abs() > 1e-10).map_or(1.0, |x| x.signum());
        for (r, x) in v.iter().enumerate() {
            pe.set(r, c, sign * x);
        }
    }
    Ok(pe)
}

/// Concatenates intrinsic features and the positional encoding.
pub fn assemble_features(score: &Score, graph: &ScoreGraph, options: &PeOptions) -> Result<FeatureMatrix> {
    if score.len() != graph.num_nodes() || score.notes.iter().zip(&graph.node_ids).any(|(n, id)| &n.id != id) {
        return Err(Error::Consistency("score and graph disagree on note ids or order".into()));
    }
    let intrinsic = intrinsic_features(score);
    let mut values = Tensor::zeros(score.len(), INTRINSIC_COLS + options.k);
    if score.is_empty() {
        return Ok(FeatureMatrix { values, pe_dim: options.k });
    }
    let pe = laplacian_pe(graph, options)?;
    for r in 0..score.len() {
        let row = values.row_mut(r);
        row[..INTRINSIC_COLS].copy_from_slice(intrinsic.row(r));
        row[INTRINSIC_COLS..].copy_from_slice(pe.row(r));
    }
    Ok(FeatureMatrix { values, pe_dim: options.k })
}
