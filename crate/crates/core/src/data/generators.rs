use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{random_ss_mask, Sources, StructureMask};
use crate::error::{Error, Result};
use crate::flow::{CouplingFlow, FlowMode};
use crate::linalg::{gaussian_matrix, random_orthogonal, random_rotation, Rng64};
use crate::linear::LinearMixing;
use crate::mixing::{Composed, LinearMap, Mixing};
use crate::registry::{Named, Registry};
use crate::support::{function_support, Tolerance, DEFAULT_RELATIVE_TOL};

/// Largest mean off-diagonal column |cos| an II mixing may show.
pub const IMA_ORTHOGONALITY_LIMIT: f64 = 0.05;

/// Smallest admissible |det J| for the structured MLP.
const MIN_ABS_DET: f64 = 1e-6;

/// Minimal distance between Möbius inputs and the pole.
const POLE_MARGIN: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub n: usize,
    /// Observed dimension; defaults to `n`. Only the SS and linear generators
    /// accept `m > n`.
    pub m: Option<usize>,
    pub k: usize,
    /// Fixed parent mask for the SS and linear generators.
    pub mask: Option<StructureMask>,
    /// Expected number of off-diagonal parents per row of a random mask.
    /// Holding this fixed keeps the mask density comparable across `n`.
    pub extra_parents: f64,
    /// Hidden width of the per-observation MLPs.
    pub mlp_hidden: usize,
    /// Weight of the tanh part of the per-observation MLPs.
    pub nonlinearity: f64,
    pub flow_layers: usize,
    pub flow_hidden: usize,
    /// Output scale of the random coupling subnetworks.
    pub flow_scale: f64,
    /// Precede generator flows with a random rotation so that every
    /// observation depends on every source.
    pub flow_rotation: bool,
    /// Rejection-sampling budget for invertible weights.
    pub max_attempts: usize,
    /// Points used for the invertibility, support and orthogonality checks.
    pub check_points: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n: 5,
            m: None,
            k: 10_000,
            mask: None,
            extra_parents: 0.8,
            mlp_hidden: 32,
            nonlinearity: 1.0,
            flow_layers: 8,
            flow_hidden: 16,
            flow_scale: 1.0,
            flow_rotation: true,
            max_attempts: 20,
            check_points: 256,
        }
    }
}

impl GeneratorConfig {
    pub fn observed_dim(&self) -> usize {
        self.m.unwrap_or(self.n)
    }

    /// Per-entry probability of an off-diagonal parent in random masks.
    pub fn edge_prob(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        (self.extra_parents / (self.n - 1) as f64).clamp(0.0, 1.0)
    }
}

pub struct Generated {
    pub observations: DMatrix<f64>,
    pub mask: Option<StructureMask>,
    pub mixing: Arc<dyn Mixing>,
}

pub trait Generator: Named + Send + Sync {
    fn generate(&self, sources: &Sources, config: &GeneratorConfig, rng: &mut Rng64) -> Result<Generated>;
}

pub fn generators() -> &'static Registry<dyn Generator> {
    static REG: OnceLock<Registry<dyn Generator>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut r: Registry<dyn Generator> = Registry::new("generator");
        r.register(Arc::new(StructuredSparsity))
            .register(Arc::new(IndependentInfluence))
            .register(Arc::new(VolumePreservingFlow))
            .register(Arc::new(BaseFlow))
            .register(Arc::new(SparseLinear));
        r
    })
}

/// Applies a registered generator to given sources.
pub fn generate(name: &str, sources: &Sources, config: &GeneratorConfig, rng: &mut Rng64) -> Result<Generated> {
    generators().get(name)?.generate(sources, config, rng)
}

fn check_sources(sources: &Sources, config: &GeneratorConfig) -> Result<()> {
    if sources.values.ncols() != config.n {
        return Err(Error::DimensionMismatch {
            expected: config.n,
            actual: sources.values.ncols(),
        });
    }
    Ok(())
}

fn square_only(name: &str, config: &GeneratorConfig) -> Result<()> {
    if config.observed_dim() != config.n {
        return Err(Error::Invalid(format!("the {name} generator needs m = n")));
    }
    Ok(())
}

fn check_rows(sources: &Sources, count: usize) -> Vec<DVector<f64>> {
    (0..count.min(sources.values.nrows()))
        .map(|r| sources.values.row(r).transpose())
        .collect()
}

fn mask_for(config: &GeneratorConfig, undercomplete: bool, rng: &mut Rng64) -> Result<StructureMask> {
    let (n, m) = (config.n, config.observed_dim());
    match &config.mask {
        Some(mask) => {
            if mask.cols() != n || mask.rows() != m {
                return Err(Error::shape(format!("{m}x{n} mask"), format!("{}x{}", mask.rows(), mask.cols())));
            }
            if !mask.ss_valid() {
                return Err(Error::Invalid("mask violates the intersection condition".into()));
            }
            Ok(mask.clone())
        }
        None => random_ss_mask(n, m, config.edge_prob(), undercomplete, rng),
    }
}

fn random_sign(rng: &mut Rng64) -> f64 {
    if rng.random_bool(0.5) {
        1.0
    } else {
        -1.0
    }
}

/// One observation as a function of its parents:
/// `x_i = a . s_P + w2 . tanh(W1 s_P + b1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RowNet {
    parents: Vec<usize>,
    linear: Vec<f64>,
    w1: DMatrix<f64>,
    b1: DVector<f64>,
    w2: DVector<f64>,
}

impl RowNet {
    fn random(parents: Vec<usize>, hidden: usize, nonlinearity: f64, rng: &mut Rng64) -> Self {
        let p = parents.len();
        let linear = (0..p).map(|_| random_sign(rng) * rng.random_range(0.5..1.5)).collect();
        let w1 = gaussian_matrix(hidden, p, rng) / (p as f64).sqrt();
        let b1 = gaussian_matrix(hidden, 1, rng).column(0) * 0.5;
        let w2 = gaussian_matrix(hidden, 1, rng).column(0) * (nonlinearity / (hidden as f64).sqrt());
        Self {
            parents,
            linear,
            w1,
            b1,
            w2,
        }
    }

    fn inputs(&self, s: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.parents.len(), self.parents.iter().map(|&j| s[j]))
    }
}

/// Observation-wise MLPs restricted to a parent mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredMlp {
    n: usize,
    rows: Vec<RowNet>,
}

impl StructuredMlp {
    pub fn random(mask: &StructureMask, hidden: usize, nonlinearity: f64, rng: &mut Rng64) -> Self {
        Self {
            n: mask.cols(),
            rows: (0..mask.rows())
                .map(|i| RowNet::random(mask.parents(i), hidden, nonlinearity, rng))
                .collect(),
        }
    }
}

impl Mixing for StructuredMlp {
    fn input_dim(&self) -> usize {
        self.n
    }
    fn output_dim(&self) -> usize {
        self.rows.len()
    }
    fn eval(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        if s.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                actual: s.len(),
            });
        }
        Ok(DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|r| {
                let u = r.inputs(s);
                let lin: f64 = r.linear.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
                let h = (&r.w1 * &u + &r.b1).map(f64::tanh);
                lin + r.w2.dot(&h)
            }),
        ))
    }
    fn jacobian(&self, s: &DVector<f64>) -> Result<DMatrix<f64>> {
        if s.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                actual: s.len(),
            });
        }
        let mut jac = DMatrix::zeros(self.rows.len(), self.n);
        for (i, r) in self.rows.iter().enumerate() {
            let u = r.inputs(s);
            let slope = (&r.w1 * &u + &r.b1).map(|v| 1.0 - v.tanh().powi(2));
            let weighted = r.w2.component_mul(&slope);
            let grad = r.w1.tr_mul(&weighted);
            for (c, &j) in r.parents.iter().enumerate() {
                jac[(i, j)] = r.linear[c] + grad[c];
            }
        }
        Ok(jac)
    }
}

/// Invertibility evidence: for square maps, `|det J|` above the floor with a
/// single sign over all points; otherwise full column rank.
fn looks_invertible(map: &dyn Mixing, points: &[DVector<f64>]) -> Result<bool> {
    let square = map.input_dim() == map.output_dim();
    let mut sign = 0.0;
    for p in points {
        let j = map.jacobian(p)?;
        if square {
            let det = j.lu().determinant();
            if !(det.abs() > MIN_ABS_DET) {
                return Ok(false);
            }
            if sign == 0.0 {
                sign = det.signum();
            } else if det.signum() != sign {
                return Ok(false);
            }
        } else {
            let sv = j.singular_values();
            if !(sv.min() > MIN_ABS_DET) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

pub struct StructuredSparsity;

impl Named for StructuredSparsity {
    fn name(&self) -> &'static str {
        "ss"
    }
}

impl Generator for StructuredSparsity {
    fn generate(&self, sources: &Sources, config: &GeneratorConfig, rng: &mut Rng64) -> Result<Generated> {
        check_sources(sources, config)?;
        let mask = mask_for(config, false, rng)?;
        let points = check_rows(sources, config.check_points);
        for _ in 0..config.max_attempts {
            let mlp = StructuredMlp::random(&mask, config.mlp_hidden, config.nonlinearity, rng);
            if !looks_invertible(&mlp, &points)? {
                continue;
            }
            let support = function_support(|s| mlp.jacobian(s), &points, Tolerance::Relative(DEFAULT_RELATIVE_TOL))?;
            if &support != mask.pattern() {
                continue;
            }
            let observations = mlp.eval_rows(&sources.values)?;
            return Ok(Generated {
                observations,
                mask: Some(mask),
                mixing: Arc::new(mlp),
            });
        }
        Err(Error::NotInvertible {
            attempts: config.max_attempts,
        })
    }
}

/// `x = b + alpha O (D s - a) / |D s - a|^2` (or without the inversion),
/// with `D` diagonal of distinct scales and unit determinant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobiusMixing {
    pub scales: Vec<f64>,
    pub pole: DVector<f64>,
    pub alpha: f64,
    pub rotation: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub invert: bool,
}

impl MobiusMixing {
    pub fn new(
        scales: Vec<f64>,
        pole: DVector<f64>,
        alpha: f64,
        rotation: DMatrix<f64>,
        offset: DVector<f64>,
        invert: bool,
    ) -> Result<Self> {
        let n = scales.len();
        if pole.len() != n || offset.len() != n || rotation.shape() != (n, n) {
            return Err(Error::shape(format!("dimension {n}"), "mismatched Möbius parameters"));
        }
        for i in 0..n {
            for j in 0..i {
                if (scales[i] - scales[j]).abs() < 1e-9 {
                    return Err(Error::Invalid(format!("scales {j} and {i} are equal; the map would be conformal")));
                }
            }
        }
        if scales.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Invalid("scales must be positive".into()));
        }
        if !(alpha != 0.0 && alpha.is_finite()) {
            return Err(Error::Invalid("alpha must be finite and nonzero".into()));
        }
        Ok(Self {
            scales,
            pole,
            alpha,
            rotation,
            offset,
            invert,
        })
    }

    fn shifted(&self, s: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(s.len(), s.iter().zip(&self.scales).map(|(v, c)| v * c)) - &self.pole
    }

    /// Distance of `D s` from the pole.
    pub fn pole_distance(&self, s: &DVector<f64>) -> f64 {
        self.shifted(s).norm()
    }
}

impl Mixing for MobiusMixing {
    fn input_dim(&self) -> usize {
        self.scales.len()
    }
    fn output_dim(&self) -> usize {
        self.scales.len()
    }
    fn eval(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        if s.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: s.len(),
            });
        }
        let d = self.shifted(s);
        let inner = if self.invert {
            let r2 = d.norm_squared();
            if r2 == 0.0 {
                return Err(Error::Degenerate("evaluation at the inversion pole".into()));
            }
            d / r2
        } else {
            d
        };
        Ok(&self.offset + &self.rotation * inner * self.alpha)
    }
    fn jacobian(&self, s: &DVector<f64>) -> Result<DMatrix<f64>> {
        if s.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: s.len(),
            });
        }
        let n = self.input_dim();
        let d = self.shifted(s);
        let inner = if self.invert {
            let r2 = d.norm_squared();
            if r2 == 0.0 {
                return Err(Error::Degenerate("evaluation at the inversion pole".into()));
            }
            (DMatrix::identity(n, n) - &d * d.transpose() * (2.0 / r2)) / r2
        } else {
            DMatrix::identity(n, n)
        };
        let scale = DMatrix::from_diagonal(&DVector::from_vec(self.scales.clone()));
        Ok(&self.rotation * inner * scale * self.alpha)
    }
}

/// Mean over points of the mean off-diagonal |cos| between Jacobian columns.
pub fn column_orthogonality(map: &dyn Mixing, points: &[DVector<f64>]) -> Result<f64> {
    let n = map.input_dim();
    if n < 2 || points.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for p in points {
        let j = map.jacobian(p)?;
        let mut acc = 0.0;
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    let (ca, cb) = (j.column(a), j.column(b));
                    acc += (ca.dot(&cb) / (ca.norm() * cb.norm())).abs();
                }
            }
        }
        total += acc / (n * (n - 1)) as f64;
    }
    Ok(total / points.len() as f64)
}

pub struct IndependentInfluence;

impl Named for IndependentInfluence {
    fn name(&self) -> &'static str {
        "ii"
    }
}

impl Generator for IndependentInfluence {
    fn generate(&self, sources: &Sources, config: &GeneratorConfig, rng: &mut Rng64) -> Result<Generated> {
        check_sources(sources, config)?;
        square_only("ii", config)?;
        let n = config.n;
        if n < 2 {
            return Err(Error::Invalid("the ii generator needs n >= 2".into()));
        }
        // distinct log-scales centered so that det D = 1
        let mut logs: Vec<f64> = (0..n).map(|i| (i as f64 + rng.random_range(0.2..0.8)) / n as f64).collect();
        let mean = logs.iter().sum::<f64>() / n as f64;
        logs.iter_mut().for_each(|l| *l -= mean);
        let scales: Vec<f64> = logs.iter().map(|l| l.exp()).collect();
        let scaled_norm = (0..sources.values.nrows())
            .map(|r| {
                sources.values.row(r).iter().zip(&scales).map(|(v, c)| (v * c).powi(2)).sum::<f64>().sqrt()
            })
            .fold(0.0, f64::max);
        let mut direction = crate::linalg::gaussian_vector(n, rng);
        direction /= direction.norm();
        let radius = scaled_norm + POLE_MARGIN;
        let mobius = MobiusMixing::new(
            scales,
            direction * radius,
            radius * radius,
            random_orthogonal(n, rng),
            crate::linalg::gaussian_vector(n, rng),
            true,
        )?;
        let points = check_rows(sources, config.check_points);
        let stat = column_orthogonality(&mobius, &points)?;
        if !(stat < IMA_ORTHOGONALITY_LIMIT) {
            return Err(Error::Invalid(format!("column orthogonality statistic {stat} exceeds {IMA_ORTHOGONALITY_LIMIT}")));
        }
        let observations = mobius.eval_rows(&sources.values)?;
        Ok(Generated {
            observations,
            mask: None,
            mixing: Arc::new(mobius),
        })
    }
}

fn flow_generator(mode: FlowMode, name: &str, sources: &Sources, config: &GeneratorConfig, rng: &mut Rng64) -> Result<Generated> {
    check_sources(sources, config)?;
    square_only(name, config)?;
    let flow = CouplingFlow::random(config.n, config.flow_layers, config.flow_hidden, mode, config.flow_scale, rng)?;
    let mixing: Arc<dyn Mixing> = if config.flow_rotation {
        let rotation = LinearMap::new(random_rotation(config.n, rng));
        Arc::new(Composed::new(rotation, flow)?)
    } else {
        Arc::new(flow)
    };
    let observations = mixing.eval_rows(&sources.values)?;
    Ok(Generated {
        observations,
        mask: None,
        mixing,
    })
}

pub struct VolumePreservingFlow;

impl Named for VolumePreservingFlow {
    fn name(&self) -> &'static str {
        "vp"
    }
}

impl Generator for VolumePreservingFlow {
    fn generate(&self, sources: &Sources, config: &GeneratorConfig, rng: &mut Rng64) -> Result<Generated> {
        flow_generator(FlowMode::VolumePreserving, "vp", sources, config, rng)
    }
}

pub struct BaseFlow;

impl Named for BaseFlow {
    fn name(&self) -> &'static str {
        "base"
    }
}

impl Generator for BaseFlow {
    fn generate(&self, sources: &Sources, config: &GeneratorConfig, rng: &mut Rng64) -> Result<Generated> {
        flow_generator(FlowMode::General, "base", sources, config, rng)
    }
}

/// `x = A s` with `supp(A)` a mask passing both the intersection and the
/// undercomplete conditions.
pub struct SparseLinear;

impl Named for SparseLinear {
    fn name(&self) -> &'static str {
        "linear"
    }
}

impl Generator for SparseLinear {
    fn generate(&self, sources: &Sources, config: &GeneratorConfig, rng: &mut Rng64) -> Result<Generated> {
        check_sources(sources, config)?;
        let mask = mask_for(config, true, rng)?;
        let (m, n) = (mask.rows(), mask.cols());
        let mut a = DMatrix::zeros(m, n);
        for (i, j) in mask.pattern().entries() {
            a[(i, j)] = random_sign(rng) * rng.random_range(0.5..2.0);
        }
        let mut mixing = LinearMixing::new(a);
        mixing.mask = Some(mask.pattern().clone());
        let observations = mixing.eval_rows(&sources.values)?;
        Ok(Generated {
            observations,
            mask: Some(mask),
            mixing: Arc::new(mixing),
        })
    }
}
