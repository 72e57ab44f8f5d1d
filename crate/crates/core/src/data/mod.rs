//! Synthetic datasets: factorial Gaussian sources, structured and flow-based
//! mixings, and the Triangles renderer.

mod generators;
mod io;
mod triangles;

pub use generators::{
    column_orthogonality, generate, generators, Generated, Generator, GeneratorConfig, MobiusMixing, StructuredMlp,
    IMA_ORTHOGONALITY_LIMIT,
};
pub use io::{load_dataset, save_dataset, DatasetMeta};
pub use triangles::{render_triangle, render_triangles, write_factors_csv, write_images, GrayImage, TriangleGeometry, DEFAULT_SIZE};

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conditions::{check_intersection_condition, check_undercomplete_condition};
use crate::error::{Error, Result};
use crate::linalg::{derived_seed, gaussian_matrix, seeded_rng};
use crate::mixing::Mixing;
use crate::support::SupportPattern;

/// Range of the per-source variances.
pub const VARIANCE_RANGE: (f64, f64) = (0.5, 3.0);

/// RNG stream for source sampling; mixing parameters use stream 1.
const SOURCE_STREAM: u64 = 0;
const MIXING_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Sources {
    /// `k x n`.
    pub values: DMatrix<f64>,
    pub variances: Vec<f64>,
}

/// Zero-mean factorial Gaussian with variances drawn once from U[0.5, 3].
pub fn sample_sources(n: usize, k: usize, seed: u64) -> Result<Sources> {
    if n == 0 || k == 0 {
        return Err(Error::Invalid(format!("need n >= 1 and k >= 1, got n={n}, k={k}")));
    }
    let mut rng = seeded_rng(derived_seed(seed, SOURCE_STREAM));
    let variances: Vec<f64> = (0..n).map(|_| rng.random_range(VARIANCE_RANGE.0..VARIANCE_RANGE.1)).collect();
    let mut values = gaussian_matrix(k, n, &mut rng);
    for (j, v) in variances.iter().enumerate() {
        values.column_mut(j).scale_mut(v.sqrt());
    }
    Ok(Sources { values, variances })
}

/// Parent mask of a structured mixing: entry `(i, j)` means source `j`
/// feeds observation `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SupportPattern", into = "SupportPattern")]
pub struct StructureMask(SupportPattern);

impl TryFrom<SupportPattern> for StructureMask {
    type Error = Error;
    fn try_from(p: SupportPattern) -> Result<Self> {
        Self::new(p)
    }
}

impl From<StructureMask> for SupportPattern {
    fn from(m: StructureMask) -> Self {
        m.0
    }
}

impl StructureMask {
    /// Requires every row and every column to be nonempty.
    pub fn new(pattern: SupportPattern) -> Result<Self> {
        if let Some(i) = (0..pattern.rows()).find(|&i| pattern.row_len(i) == 0) {
            return Err(Error::Invalid(format!("mask row {i} is empty")));
        }
        if let Some(j) = (0..pattern.cols()).find(|&j| pattern.col(j).is_empty()) {
            return Err(Error::Invalid(format!("mask column {j} is empty")));
        }
        Ok(Self(pattern))
    }

    pub fn pattern(&self) -> &SupportPattern {
        &self.0
    }

    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn cols(&self) -> usize {
        self.0.cols()
    }

    pub fn parents(&self, i: usize) -> Vec<usize> {
        self.0.row(i).into_iter().collect()
    }

    /// Whether the mask satisfies the intersection condition.
    pub fn ss_valid(&self) -> bool {
        check_intersection_condition(&self.0).verdict
    }
}

/// Random mask passing the intersection condition: the first `n` rows hold
/// the diagonal plus extra parents with probability `edge_prob`, further rows
/// get random nonempty parent sets. With `undercomplete`, the mask must also
/// pass the undercomplete condition.
pub fn random_ss_mask(
    n: usize,
    m: usize,
    edge_prob: f64,
    undercomplete: bool,
    rng: &mut impl Rng,
) -> Result<StructureMask> {
    if n == 0 || m < n {
        return Err(Error::Invalid(format!("need 1 <= n <= m, got n={n}, m={m}")));
    }
    if !(0.0..=1.0).contains(&edge_prob) {
        return Err(Error::Invalid(format!("edge probability {edge_prob} outside [0, 1]")));
    }
    const ATTEMPTS: usize = 10_000;
    for _ in 0..ATTEMPTS {
        let mut p = SupportPattern::empty(m, n);
        for i in 0..m {
            for j in 0..n {
                let on = if i < n { i == j || rng.random_bool(edge_prob) } else { rng.random_bool(0.5) };
                if on {
                    p.insert(i, j)?;
                }
            }
            if p.row_len(i) == 0 {
                p.insert(i, rng.random_range(0..n))?;
            }
        }
        let Ok(mask) = StructureMask::new(p) else { continue };
        if !mask.ss_valid() {
            continue;
        }
        if undercomplete && !check_undercomplete_condition(mask.pattern())?.verdict {
            continue;
        }
        return Ok(mask);
    }
    Err(Error::Invalid(format!(
        "no valid {m}x{n} mask found in {ATTEMPTS} draws with edge probability {edge_prob}"
    )))
}

/// Sources, observations and ground truth for one generated dataset.
#[derive(Clone)]
pub struct Dataset {
    pub generator: String,
    pub seed: u64,
    pub sources: DMatrix<f64>,
    pub observations: DMatrix<f64>,
    pub variances: Vec<f64>,
    pub mask: Option<StructureMask>,
    /// The true mixing, when generated in this process.
    pub truth: Option<Arc<dyn Mixing>>,
}

impl std::fmt::Debug for Dataset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dataset")
            .field("generator", &self.generator)
            .field("seed", &self.seed)
            .field("n", &self.n())
            .field("m", &self.m())
            .field("k", &self.k())
            .field("mask", &self.mask)
            .finish_non_exhaustive()
    }
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.sources.ncols()
    }

    pub fn m(&self) -> usize {
        self.observations.ncols()
    }

    pub fn k(&self) -> usize {
        self.observations.nrows()
    }
}

/// Samples sources and applies the named generator, all from one seed.
pub fn generate_dataset(name: &str, config: &GeneratorConfig, seed: u64) -> Result<Dataset> {
    let generator = generators().get(name)?;
    let sources = sample_sources(config.n, config.k, seed)?;
    let mut rng = seeded_rng(derived_seed(seed, MIXING_STREAM));
    let out = generator.generate(&sources, config, &mut rng)?;
    Ok(Dataset {
        generator: name.to_string(),
        seed,
        sources: sources.values,
        observations: out.observations,
        variances: sources.variances,
        mask: out.mask,
        truth: Some(out.mixing),
    })
}
