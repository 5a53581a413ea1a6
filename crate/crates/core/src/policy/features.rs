//! State feature maps `phi(s)`.
//!
//! A feature map is either the identity (no trainable parameters, so the policy
//! on top of it is purely log-linear) or a tanh multilayer perceptron whose
//! weights are the nonlinear parameters of the policy. Both forward-mode
//! (Jacobian-vector) and reverse-mode (vector-Jacobian) products with respect
//! to the parameters are provided; the Fisher operator needs both.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out x in`
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
    /// When set the last layer is affine (identity activation); otherwise every layer is tanh.
    linear_output: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap {
    /// `phi(s) = s`.
    Identity {
        dim: usize,
    },
    Mlp(Mlp),
}

/// Forward activations kept for Jacobian products.
#[derive(Debug, Clone)]
pub struct FeatureTrace {
    /// Input to each layer (`inputs[0]` is the state).
    inputs: Vec<DVector<f64>>,
    /// Activation derivative at each layer's pre-activation.
    slopes: Vec<DVector<f64>>,
    pub output: DVector<f64>,
}

impl Mlp {
    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], linear_output: bool, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .map(|io| {
                let (fan_in, fan_out) = (io[0], io[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                Dense {
                    weight: DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-bound..bound)),
                    bias: DVector::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self { layers, linear_output })
    }

    pub fn from_layers(layers: Vec<Dense>, linear_output: bool) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("mlp needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].weight.nrows() != pair[1].weight.ncols() {
                return Err(Error::DimensionMismatch("consecutive layer sizes disagree".into()));
            }
        }
        for l in &layers {
            if l.bias.len() != l.weight.nrows() {
                return Err(Error::DimensionMismatch("bias length".into()));
            }
        }
        Ok(Self { layers, linear_output })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn linear_output(&self) -> bool {
        self.linear_output
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].weight.ncols()];
        s.extend(self.layers.iter().map(|l| l.weight.nrows()));
        s
    }

    fn is_tanh(&self, layer: usize) -> bool {
        !(self.linear_output && layer + 1 == self.layers.len())
    }
}

impl FeatureMap {
    pub fn identity(dim: usize) -> Self {
        FeatureMap::Identity { dim }
    }

    pub fn mlp<R: Rng + ?Sized>(sizes: &[usize], linear_output: bool, rng: &mut R) -> Result<Self> {
        Ok(FeatureMap::Mlp(Mlp::new(sizes, linear_output, rng)?))
    }

    pub fn input_dim(&self) -> usize {
        match self {
            FeatureMap::Identity { dim } => *dim,
            FeatureMap::Mlp(m) => m.layers[0].weight.ncols(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            FeatureMap::Identity { dim } => *dim,
            FeatureMap::Mlp(m) => m.layers.last().unwrap().weight.nrows(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            FeatureMap::Identity { .. } => 0,
            FeatureMap::Mlp(m) => m.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum(),
        }
    }

    /// Flat parameters: for each layer, the weight matrix row-major followed by the bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        if let FeatureMap::Mlp(m) = self {
            for l in &m.layers {
                for r in 0..l.weight.nrows() {
                    out.extend(l.weight.row(r).iter());
                }
                out.extend(l.bias.iter());
            }
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch(format!(
                "feature parameters: expected {}, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        if let FeatureMap::Mlp(m) = self {
            let mut off = 0;
            for l in &mut m.layers {
                let (rows, cols) = l.weight.shape();
                l.weight = DMatrix::from_row_slice(rows, cols, &flat[off..off + rows * cols]);
                off += rows * cols;
                l.bias.copy_from_slice(&flat[off..off + rows]);
                off += rows;
            }
        }
        Ok(())
    }

    pub fn forward(&self, s: &[f64]) -> DVector<f64> {
        match self {
            FeatureMap::Identity { .. } => DVector::from_column_slice(s),
            FeatureMap::Mlp(m) => {
                let mut x = DVector::from_column_slice(s);
                for (i, l) in m.layers.iter().enumerate() {
                    let z = &l.weight * &x + &l.bias;
                    x = if m.is_tanh(i) { z.map(f64::tanh) } else { z };
                }
                x
            }
        }
    }

    pub fn trace(&self, s: &[f64]) -> FeatureTrace {
        match self {
            FeatureMap::Identity { .. } => {
                FeatureTrace { inputs: Vec::new(), slopes: Vec::new(), output: DVector::from_column_slice(s) }
            }
            FeatureMap::Mlp(m) => {
                let mut inputs = Vec::with_capacity(m.layers.len());
                let mut slopes = Vec::with_capacity(m.layers.len());
                let mut x = DVector::from_column_slice(s);
                for (i, l) in m.layers.iter().enumerate() {
                    let z = &l.weight * &x + &l.bias;
                    inputs.push(x);
                    if m.is_tanh(i) {
                        let y = z.map(f64::tanh);
                        slopes.push(y.map(|v| 1.0 - v * v));
                        x = y;
                    } else {
                        slopes.push(DVector::from_element(z.len(), 1.0));
                        x = z;
                    }
                }
                FeatureTrace { inputs, slopes, output: x }
            }
        }
    }

    /// `d phi / d params * dparams`.
    pub fn jvp(&self, trace: &FeatureTrace, dparams: &[f64]) -> DVector<f64> {
        match self {
            FeatureMap::Identity { dim } => DVector::zeros(*dim),
            FeatureMap::Mlp(m) => {
                let mut dx = DVector::zeros(m.layers[0].weight.ncols());
                let mut off = 0;
                for (i, l) in m.layers.iter().enumerate() {
                    let (rows, cols) = l.weight.shape();
                    let dw = DMatrix::from_row_slice(rows, cols, &dparams[off..off + rows * cols]);
                    off += rows * cols;
                    let db = DVector::from_column_slice(&dparams[off..off + rows]);
                    off += rows;
                    let dz = &l.weight * &dx + dw * &trace.inputs[i] + db;
                    dx = dz.component_mul(&trace.slopes[i]);
                }
                dx
            }
        }
    }

    /// `(d phi / d params)^T * dphi`, in the flat parameter layout.
    pub fn vjp(&self, trace: &FeatureTrace, dphi: &DVector<f64>) -> Vec<f64> {
        match self {
            FeatureMap::Identity { .. } => Vec::new(),
            FeatureMap::Mlp(m) => {
                let mut grads: Vec<Vec<f64>> = Vec::with_capacity(m.layers.len());
                let mut upstream = dphi.clone();
                for (i, l) in m.layers.iter().enumerate().rev() {
                    let dz = upstream.component_mul(&trace.slopes[i]);
                    let x = &trace.inputs[i];
                    let mut g = Vec::with_capacity(l.weight.len() + l.bias.len());
                    for r in 0..l.weight.nrows() {
                        g.extend(x.iter().map(|xv| dz[r] * xv));
                    }
                    g.extend(dz.iter());
                    grads.push(g);
                    upstream = l.weight.tr_mul(&dz);
                }
                grads.into_iter().rev().flatten().collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(linear_output: bool) -> FeatureMap {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        FeatureMap::mlp(&[3, 4, 5, 2], linear_output, &mut rng).unwrap()
    }

    #[test]
    fn output_dims() {
        let f = net(true);
        assert_eq!(f.forward(&[0.1, 0.2, 0.3]).len(), 2);
        assert_eq!(f.param_count(), 3 * 4 + 4 + 4 * 5 + 5 + 5 * 2 + 2);
        assert_eq!(FeatureMap::identity(4).param_count(), 0);
    }

    #[test]
    fn params_round_trip() {
        let mut f = net(false);
        let p: Vec<f64> = (0..f.param_count()).map(|i| i as f64 * 0.01).collect();
        f.set_params(&p).unwrap();
        assert_eq!(f.params(), p);
        assert!(f.set_params(&p[1..]).is_err());
    }

    #[test]
    fn jvp_and_vjp_match_finite_differences() {
        for linear_output in [true, false] {
            let f = net(linear_output);
            let s = [0.3, -0.7, 1.1];
            let tr = f.trace(&s);
            let p0 = f.params();
            let h = 1e-6;
            let dir: Vec<f64> = (0..p0.len()).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect();
            let jv = f.jvp(&tr, &dir);
            let shifted = |sign: f64| {
                let mut g = f.clone();
                let p: Vec<f64> = p0.iter().zip(&dir).map(|(a, d)| a + sign * h * d).collect();
                g.set_params(&p).unwrap();
                g.forward(&s)
            };
            let fd = (shifted(1.0) - shifted(-1.0)) / (2.0 * h);
            assert!((&fd - &jv).norm() < 1e-7 * (1.0 + fd.norm()));

            // adjoint identity <u, J v> = <J^T u, v>
            let u = DVector::from_vec(vec![0.4, -1.3]);
            let lhs = u.dot(&jv);
            let rhs: f64 = f.vjp(&tr, &u).iter().zip(&dir).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
        }
    }
}
