use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::gaussian_matrix;
use crate::mixing::Mixing;

pub const FLOW_FORMAT: &str = "sparsica-coupling-flow";
pub const FLOW_FORMAT_VERSION: u32 = 1;

/// Bound applied to raw scale outputs: `s = SCALE_BOUND * tanh(raw)`.
const SCALE_BOUND: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowMode {
    /// The last scale of every layer is minus the sum of the others, so
    /// `log|det J| = 0` everywhere.
    VolumePreserving,
    General,
}

/// One-hidden-layer tanh network `W2 tanh(W1 x + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

impl Mlp {
    pub fn zeros(inputs: usize, hidden: usize, outputs: usize) -> Self {
        Self {
            w1: DMatrix::zeros(hidden, inputs),
            b1: DVector::zeros(hidden),
            w2: DMatrix::zeros(outputs, hidden),
            b2: DVector::zeros(outputs),
        }
    }

    /// Gaussian weights; `w1 ~ N(0, 1/inputs)`, `w2 ~ N(0, out_scale^2 / hidden)`.
    pub fn random(inputs: usize, hidden: usize, outputs: usize, out_scale: f64, rng: &mut impl Rng) -> Self {
        let in_std = 1.0 / (inputs.max(1) as f64).sqrt();
        let out_std = out_scale / (hidden.max(1) as f64).sqrt();
        Self {
            w1: gaussian_matrix(hidden, inputs, rng) * in_std,
            b1: DVector::from_iterator(hidden, gaussian_matrix(hidden, 1, rng).iter().map(|v| 0.5 * v)),
            w2: gaussian_matrix(outputs, hidden, rng) * out_std,
            b2: DVector::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.w2.nrows()
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Returns `(tanh activations, output)`.
    pub fn forward(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let h = (&self.w1 * x + &self.b1).map(f64::tanh);
        let y = &self.w2 * &h + &self.b2;
        (h, y)
    }

    /// `outputs x inputs` Jacobian given the activations from [`Mlp::forward`].
    pub fn jacobian_from(&self, h: &DVector<f64>) -> DMatrix<f64> {
        let mut scaled = self.w1.clone();
        for (r, mut row) in scaled.row_iter_mut().enumerate() {
            row *= 1.0 - h[r] * h[r];
        }
        &self.w2 * scaled
    }

    fn push_params(&self, out: &mut Vec<f64>) {
        push_row_major(&self.w1, out);
        out.extend(self.b1.iter());
        push_row_major(&self.w2, out);
        out.extend(self.b2.iter());
    }

    fn pull_params(&mut self, src: &mut impl Iterator<Item = f64>) {
        pull_row_major(&mut self.w1, src);
        self.b1.iter_mut().for_each(|v| *v = src.next().expect("parameter length checked"));
        pull_row_major(&mut self.w2, src);
        self.b2.iter_mut().for_each(|v| *v = src.next().expect("parameter length checked"));
    }
}

pub(crate) fn push_row_major(m: &DMatrix<f64>, out: &mut Vec<f64>) {
    for r in 0..m.nrows() {
        out.extend(m.row(r).iter());
    }
}

fn pull_row_major(m: &mut DMatrix<f64>, src: &mut impl Iterator<Item = f64>) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            m[(r, c)] = src.next().expect("parameter length checked");
        }
    }
}

/// `y_c = x_c`, `y_t = x_t * exp(s(x_c)) + t(x_c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingLayer {
    pub conditioner: Vec<usize>,
    pub transformed: Vec<usize>,
    pub scale_net: Mlp,
    pub shift_net: Mlp,
}

struct LayerEval {
    /// Bounded (and, in VP mode, adjusted) scales.
    scale: DVector<f64>,
    shift: DVector<f64>,
    /// `d scale / d x_c` and `d shift / d x_c`.
    dscale: DMatrix<f64>,
    dshift: DMatrix<f64>,
}

impl CouplingLayer {
    fn conditioner_values(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.conditioner.len(), self.conditioner.iter().map(|&i| x[i]))
    }

    fn evaluate(&self, xc: &DVector<f64>, mode: FlowMode, with_jacobian: bool) -> LayerEval {
        let (hs, raw) = self.scale_net.forward(xc);
        let squashed = raw.map(|r| SCALE_BOUND * r.tanh());
        let mut scale = squashed.clone();
        let (ht, shift) = self.shift_net.forward(xc);
        let (mut dscale, mut dshift) = (DMatrix::zeros(0, 0), DMatrix::zeros(0, 0));
        if with_jacobian {
            dscale = self.scale_net.jacobian_from(&hs);
            for (r, mut row) in dscale.row_iter_mut().enumerate() {
                let t = squashed[r] / SCALE_BOUND;
                row *= SCALE_BOUND * (1.0 - t * t);
            }
            dshift = self.shift_net.jacobian_from(&ht);
        }
        if mode == FlowMode::VolumePreserving {
            let last = scale.len() - 1;
            scale[last] = -scale.rows(0, last).sum();
            if with_jacobian {
                let total = dscale.rows(0, last).row_sum();
                dscale.row_mut(last).copy_from(&(-total));
            }
        }
        LayerEval {
            scale,
            shift,
            dscale,
            dshift,
        }
    }
}

/// Stack of affine coupling layers with alternating even/odd index splits.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingFlow {
    dim: usize,
    mode: FlowMode,
    layers: Vec<CouplingLayer>,
}

fn split(dim: usize, layer: usize) -> (Vec<usize>, Vec<usize>) {
    let even: Vec<usize> = (0..dim).step_by(2).collect();
    let odd: Vec<usize> = (1..dim).step_by(2).collect();
    if layer % 2 == 0 {
        (even, odd)
    } else {
        (odd, even)
    }
}

impl CouplingFlow {
    /// All subnetworks zero, so the flow is the identity.
    pub fn identity(dim: usize, layers: usize, hidden: usize, mode: FlowMode) -> Result<Self> {
        Self::build(dim, layers, mode, |c, t| (Mlp::zeros(c, hidden, t), Mlp::zeros(c, hidden, t)))
    }

    /// Random subnetworks whose output layers have scale `out_scale`.
    pub fn random(
        dim: usize,
        layers: usize,
        hidden: usize,
        mode: FlowMode,
        out_scale: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Self::build(dim, layers, mode, |c, t| {
            (
                Mlp::random(c, hidden, t, out_scale, rng),
                Mlp::random(c, hidden, t, out_scale, rng),
            )
        })
    }

    fn build(
        dim: usize,
        layers: usize,
        mode: FlowMode,
        mut nets: impl FnMut(usize, usize) -> (Mlp, Mlp),
    ) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Invalid("coupling flows need dimension >= 2".into()));
        }
        let layers = (0..layers)
            .map(|l| {
                let (conditioner, transformed) = split(dim, l);
                let (scale_net, shift_net) = nets(conditioner.len(), transformed.len());
                CouplingLayer {
                    conditioner,
                    transformed,
                    scale_net,
                    shift_net,
                }
            })
            .collect();
        Ok(Self { dim, mode, layers })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> FlowMode {
        self.mode
    }

    pub fn layers(&self) -> &[CouplingLayer] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.scale_net.num_params() + l.shift_net.num_params())
            .sum()
    }

    /// Flat parameters: per layer, scale net then shift net, each as
    /// `w1` (row-major), `b1`, `w2` (row-major), `b2`.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            l.scale_net.push_params(&mut out);
            l.shift_net.push_params(&mut out);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                actual: params.len(),
            });
        }
        let mut src = params.iter().copied();
        for l in &mut self.layers {
            l.scale_net.pull_params(&mut src);
            l.shift_net.pull_params(&mut src);
        }
        Ok(())
    }

    fn check_input(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: v.len(),
            });
        }
        Ok(())
    }

    /// Mixing direction `s -> x`.
    pub fn forward(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        self.forward_with(s, false).map(|(x, _, _)| x)
    }

    /// Unmixing direction `x -> s`.
    pub fn inverse(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.inverse_with(x, false).map(|(s, _, _)| s)
    }

    /// Forward pass returning the output, `log|det J_forward|` and optionally the Jacobian.
    fn forward_with(&self, s: &DVector<f64>, jac: bool) -> Result<(DVector<f64>, f64, Option<DMatrix<f64>>)> {
        self.check_input(s)?;
        let mut x = s.clone();
        let mut log_det = 0.0;
        let mut total = jac.then(|| DMatrix::identity(self.dim, self.dim));
        for (idx, layer) in self.layers.iter().enumerate() {
            let xc = layer.conditioner_values(&x);
            let ev = layer.evaluate(&xc, self.mode, jac);
            let mut local = jac.then(|| DMatrix::identity(self.dim, self.dim));
            for (j, &t) in layer.transformed.iter().enumerate() {
                let e = ev.scale[j].exp();
                let xt = x[t];
                if let Some(local) = local.as_mut() {
                    local[(t, t)] = e;
                    for (c, &ci) in layer.conditioner.iter().enumerate() {
                        local[(t, ci)] = xt * e * ev.dscale[(j, c)] + ev.dshift[(j, c)];
                    }
                }
                x[t] = xt * e + ev.shift[j];
                log_det += ev.scale[j];
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { layer: idx });
            }
            if let (Some(total), Some(local)) = (total.as_mut(), local) {
                *total = local * &*total;
            }
        }
        if self.mode == FlowMode::VolumePreserving {
            log_det = 0.0;
        }
        Ok((x, log_det, total))
    }

    fn inverse_with(&self, x: &DVector<f64>, jac: bool) -> Result<(DVector<f64>, f64, Option<DMatrix<f64>>)> {
        self.check_input(x)?;
        let mut s = x.clone();
        let mut log_det = 0.0;
        let mut total = jac.then(|| DMatrix::identity(self.dim, self.dim));
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let yc = layer.conditioner_values(&s);
            let ev = layer.evaluate(&yc, self.mode, jac);
            let mut local = jac.then(|| DMatrix::identity(self.dim, self.dim));
            for (j, &t) in layer.transformed.iter().enumerate() {
                let e = (-ev.scale[j]).exp();
                let st = (s[t] - ev.shift[j]) * e;
                if let Some(local) = local.as_mut() {
                    local[(t, t)] = e;
                    for (c, &ci) in layer.conditioner.iter().enumerate() {
                        local[(t, ci)] = -e * ev.dshift[(j, c)] - st * ev.dscale[(j, c)];
                    }
                }
                s[t] = st;
                log_det -= ev.scale[j];
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { layer: idx });
            }
            if let (Some(total), Some(local)) = (total.as_mut(), local) {
                *total = local * &*total;
            }
        }
        if self.mode == FlowMode::VolumePreserving {
            log_det = 0.0;
        }
        Ok((s, log_det, total))
    }

    pub fn forward_jacobian(&self, s: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.forward_with(s, true)?.2.expect("requested"))
    }

    pub fn inverse_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.inverse_with(x, true)?.2.expect("requested"))
    }

    /// `log|det J_forward(s)|`; identically zero in volume-preserving mode.
    pub fn forward_log_det(&self, s: &DVector<f64>) -> Result<f64> {
        Ok(self.forward_with(s, false)?.1)
    }

    /// `log|det J_inverse(x)|`; identically zero in volume-preserving mode.
    pub fn inverse_log_det(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.inverse_with(x, false)?.1)
    }

    /// Inverse pass returning `(s, log|det J_inverse(x)|)`.
    pub fn inverse_and_log_det(&self, x: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
        let (s, ld, _) = self.inverse_with(x, false)?;
        Ok((s, ld))
    }

    pub fn inverse_rows(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        FlowInverse(self).eval_rows(x)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&FlowDocument::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: FlowDocument = serde_json::from_str(text)?;
        doc.try_into()
    }
}

impl Mixing for CouplingFlow {
    fn input_dim(&self) -> usize {
        self.dim
    }
    fn output_dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        self.forward(s)
    }
    fn jacobian(&self, s: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.forward_jacobian(s)
    }
}

/// The unmixing direction of a flow as a [`Mixing`].
#[derive(Debug, Clone, Copy)]
pub struct FlowInverse<'a>(pub &'a CouplingFlow);

impl Mixing for FlowInverse<'_> {
    fn input_dim(&self) -> usize {
        self.0.dim
    }
    fn output_dim(&self) -> usize {
        self.0.dim
    }
    fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.0.inverse(x)
    }
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.0.inverse_jacobian(x)
    }
}

#[derive(Serialize, Deserialize)]
struct MlpDocument {
    inputs: usize,
    hidden: usize,
    outputs: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct LayerDocument {
    conditioner: Vec<usize>,
    transformed: Vec<usize>,
    scale_net: MlpDocument,
    shift_net: MlpDocument,
}

#[derive(Serialize, Deserialize)]
struct FlowDocument {
    format: String,
    version: u32,
    dim: usize,
    mode: FlowMode,
    layers: Vec<LayerDocument>,
}

impl From<&Mlp> for MlpDocument {
    fn from(m: &Mlp) -> Self {
        let mut w1 = Vec::new();
        push_row_major(&m.w1, &mut w1);
        let mut w2 = Vec::new();
        push_row_major(&m.w2, &mut w2);
        Self {
            inputs: m.inputs(),
            hidden: m.hidden(),
            outputs: m.outputs(),
            w1,
            b1: m.b1.iter().copied().collect(),
            w2,
            b2: m.b2.iter().copied().collect(),
        }
    }
}

impl TryFrom<MlpDocument> for Mlp {
    type Error = Error;

    fn try_from(d: MlpDocument) -> Result<Self> {
        let check = |name: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(Error::Invalid(format!("{name} has {got} values, expected {want}")))
            }
        };
        check("w1", d.w1.len(), d.hidden * d.inputs)?;
        check("b1", d.b1.len(), d.hidden)?;
        check("w2", d.w2.len(), d.outputs * d.hidden)?;
        check("b2", d.b2.len(), d.outputs)?;
        Ok(Mlp {
            w1: DMatrix::from_row_slice(d.hidden, d.inputs, &d.w1),
            b1: DVector::from_vec(d.b1),
            w2: DMatrix::from_row_slice(d.outputs, d.hidden, &d.w2),
            b2: DVector::from_vec(d.b2),
        })
    }
}

impl From<&CouplingFlow> for FlowDocument {
    fn from(f: &CouplingFlow) -> Self {
        Self {
            format: FLOW_FORMAT.into(),
            version: FLOW_FORMAT_VERSION,
            dim: f.dim,
            mode: f.mode,
            layers: f
                .layers
                .iter()
                .map(|l| LayerDocument {
                    conditioner: l.conditioner.clone(),
                    transformed: l.transformed.clone(),
                    scale_net: (&l.scale_net).into(),
                    shift_net: (&l.shift_net).into(),
                })
                .collect(),
        }
    }
}

impl TryFrom<FlowDocument> for CouplingFlow {
    type Error = Error;

    fn try_from(d: FlowDocument) -> Result<Self> {
        if d.format != FLOW_FORMAT || d.version != FLOW_FORMAT_VERSION {
            return Err(Error::Invalid(format!(
                "unsupported flow document {} v{}",
                d.format, d.version
            )));
        }
        let layers = d
            .layers
            .into_iter()
            .enumerate()
            .map(|(idx, l)| {
                let mut seen = vec![false; d.dim];
                for &i in l.conditioner.iter().chain(&l.transformed) {
                    if i >= d.dim || std::mem::replace(&mut seen[i], true) {
                        return Err(Error::Invalid(format!("layer {idx}: masks must partition 0..{}", d.dim)));
                    }
                }
                if l.transformed.is_empty() || seen.iter().any(|s| !s) {
                    return Err(Error::Invalid(format!("layer {idx}: masks must partition 0..{}", d.dim)));
                }
                let scale_net: Mlp = l.scale_net.try_into()?;
                let shift_net: Mlp = l.shift_net.try_into()?;
                for net in [&scale_net, &shift_net] {
                    if net.inputs() != l.conditioner.len() || net.outputs() != l.transformed.len() {
                        return Err(Error::Invalid(format!("layer {idx}: subnetwork shape does not match masks")));
                    }
                }
                Ok(CouplingLayer {
                    conditioner: l.conditioner,
                    transformed: l.transformed,
                    scale_net,
                    shift_net,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CouplingFlow {
            dim: d.dim,
            mode: d.mode,
            layers,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_vector, seeded_rng};
    use crate::mixing::{finite_difference_jacobian, relative_error};

    fn random_flow(dim: usize, layers: usize, mode: FlowMode, seed: u64) -> CouplingFlow {
        let mut rng = seeded_rng(seed);
        CouplingFlow::random(dim, layers, 16, mode, 1.0, &mut rng).unwrap()
    }

    #[test]
    fn zero_subnetworks_give_identity() {
        let f = CouplingFlow::identity(3, 4, 8, FlowMode::General).unwrap();
        let s = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        assert_eq!(f.forward(&s).unwrap(), s);
        assert_eq!(f.forward_jacobian(&s).unwrap(), DMatrix::identity(3, 3));
    }

    #[test]
    fn round_trip_is_exact_to_1e6() {
        let mut rng = seeded_rng(100);
        for mode in [FlowMode::General, FlowMode::VolumePreserving] {
            let f = random_flow(4, 24, mode, 7);
            for _ in 0..100 {
                let s = gaussian_vector(4, &mut rng) * 1.5;
                let back = f.inverse(&f.forward(&s).unwrap()).unwrap();
                assert!((back - s).amax() < 1e-6);
            }
        }
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = seeded_rng(101);
        for (dim, mode) in [(2, FlowMode::General), (5, FlowMode::VolumePreserving), (4, FlowMode::General)] {
            let f = random_flow(dim, 24, mode, 8);
            for _ in 0..5 {
                let s = gaussian_vector(dim, &mut rng);
                let fd = finite_difference_jacobian(&f, &s, 1e-5).unwrap();
                assert!(relative_error(&f.forward_jacobian(&s).unwrap(), &fd, 1e-12) < 1e-4);
                let x = f.forward(&s).unwrap();
                let inv = FlowInverse(&f);
                let fd = finite_difference_jacobian(&inv, &x, 1e-5).unwrap();
                assert!(relative_error(&f.inverse_jacobian(&x).unwrap(), &fd, 1e-12) < 1e-4);
            }
        }
    }

    #[test]
    fn single_layer_jacobian_is_block_triangular() {
        let mut rng = seeded_rng(5);
        let f = CouplingFlow::random(2, 1, 8, FlowMode::General, 1.0, &mut rng).unwrap();
        let s = DVector::from_vec(vec![0.4, -0.9]);
        let j = f.forward_jacobian(&s).unwrap();
        // conditioner row is untouched; transformed diagonal is exp(scale)
        assert_eq!(j[(0, 0)], 1.0);
        assert_eq!(j[(0, 1)], 0.0);
        let l = &f.layers()[0];
        let (_, raw) = l.scale_net.forward(&DVector::from_vec(vec![s[0]]));
        assert!((j[(1, 1)] - (0.5 * raw[0].tanh()).exp()).abs() < 1e-14);
    }

    #[test]
    fn log_det_matches_jacobian_determinant() {
        let mut rng = seeded_rng(102);
        let g = random_flow(3, 12, FlowMode::General, 9);
        let vp = random_flow(3, 12, FlowMode::VolumePreserving, 9);
        for _ in 0..20 {
            let s = gaussian_vector(3, &mut rng);
            let fd = finite_difference_jacobian(&g, &s, 1e-5).unwrap();
            assert!((g.forward_log_det(&s).unwrap() - fd.determinant().abs().ln()).abs() < 1e-3);
            assert_eq!(vp.forward_log_det(&s).unwrap(), 0.0);
            let fd = finite_difference_jacobian(&vp, &s, 1e-5).unwrap();
            assert!(fd.determinant().abs().ln().abs() < 1e-3);
            let x = g.forward(&s).unwrap();
            assert!((g.inverse_log_det(&x).unwrap() + g.forward_log_det(&s).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn params_round_trip() {
        let f = random_flow(3, 4, FlowMode::General, 1);
        let mut g = CouplingFlow::identity(3, 4, 16, FlowMode::General).unwrap();
        g.set_params(&f.params()).unwrap();
        assert_eq!(f, g);
        assert!(g.set_params(&[0.0]).is_err());
    }

    #[test]
    fn json_document_round_trips() {
        let f = random_flow(3, 3, FlowMode::VolumePreserving, 2);
        let text = f.to_json().unwrap();
        assert!(text.contains(FLOW_FORMAT));
        assert_eq!(CouplingFlow::from_json(&text).unwrap(), f);
        let broken = text.replace("\"version\": 1", "\"version\": 9");
        assert!(CouplingFlow::from_json(&broken).is_err());
    }

    #[test]
    fn non_finite_input_names_a_layer() {
        let f = random_flow(2, 3, FlowMode::General, 3);
        let s = DVector::from_vec(vec![f64::NAN, 0.0]);
        assert!(matches!(f.forward(&s), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn odd_dimension_splits_alternate() {
        let f = CouplingFlow::identity(5, 2, 4, FlowMode::General).unwrap();
        assert_eq!(f.layers()[0].conditioner, vec![0, 2, 4]);
        assert_eq!(f.layers()[0].transformed, vec![1, 3]);
        assert_eq!(f.layers()[1].conditioner, vec![1, 3]);
        assert_eq!(f.layers()[1].transformed, vec![0, 2, 4]);
    }
}
