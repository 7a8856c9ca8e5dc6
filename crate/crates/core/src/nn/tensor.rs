//! Dense row-major `f32` tensors and the eager (non-recording) forward ops.
//!
//! The recording counterparts used for training live in [`super::graph`];
//! both share the kernels in [`super::kernels`].

use super::kernels;
use super::NnError;

/// Clamp applied to probabilities before taking logarithms.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor, checking that the extents are positive, match the data
    /// length, and that every element is finite.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, NnError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(NnError::InvalidShape { shape });
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NnError::DataLength {
                shape,
                len: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(NnError::NonFinite {
                context: format!("tensor element {pos}"),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn vector(data: Vec<f32>) -> Result<Self, NnError> {
        let n = data.len();
        Self::new(vec![n], data)
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self, NnError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(NnError::Ragged);
        }
        Self::new(
            vec![rows.len(), cols],
            rows.iter().flatten().copied().collect(),
        )
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading extent, or 1 for vectors viewed as a single row.
    pub fn rows(&self) -> usize {
        if self.shape.len() == 1 {
            1
        } else {
            self.shape[0]
        }
    }

    /// Product of all but the leading extent.
    pub fn cols(&self) -> usize {
        if self.shape.len() == 1 {
            self.shape[0]
        } else {
            self.shape[1..].iter().product()
        }
    }

    pub fn row(&self, r: usize) -> &[f32] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn at(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols() + c]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self, NnError> {
        if shape.iter().product::<usize>() != self.data.len() || shape.contains(&0) {
            return Err(NnError::ShapeMismatch {
                op: "reshape",
                left: self.shape,
                right: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// `output[b, j] = sum_i input[b, i] * weights[i, j] + bias[j]`.
pub fn affine_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor, NnError> {
    if input.shape().len() != 2 || weights.shape().len() != 2 || input.shape()[1] != weights.shape()[0]
    {
        return Err(NnError::ShapeMismatch {
            op: "affine_forward",
            left: input.shape().to_vec(),
            right: weights.shape().to_vec(),
        });
    }
    let (batch, fan_in, fan_out) = (input.shape()[0], weights.shape()[0], weights.shape()[1]);
    if bias.len() != fan_out {
        return Err(NnError::ShapeMismatch {
            op: "affine_forward",
            left: weights.shape().to_vec(),
            right: bias.shape().to_vec(),
        });
    }
    let mut out = vec![0.0f32; batch * fan_out];
    kernels::matmul(input.data(), weights.data(), batch, fan_in, fan_out, &mut out);
    kernels::add_row_broadcast(&mut out, bias.data());
    Tensor::new(vec![batch, fan_out], out)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Elementwise logistic function in the two-branch stable form.
pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(kernels::sigmoid)
}

/// Row-wise softmax over the trailing extent, max-subtracted.
pub fn softmax(x: &Tensor) -> Tensor {
    let cols = x.cols();
    let mut data = x.data().to_vec();
    for row in data.chunks_mut(cols) {
        kernels::softmax_row(row);
    }
    Tensor {
        shape: x.shape().to_vec(),
        data,
    }
}

/// Mean binary cross-entropy with `p` clamped to `[PROB_EPS, 1 - PROB_EPS]`.
/// Accumulates in `f64`.
pub fn bce_loss(p: &Tensor, y: &Tensor) -> Result<f64, NnError> {
    if p.len() != y.len() {
        return Err(NnError::ShapeMismatch {
            op: "bce_loss",
            left: p.shape().to_vec(),
            right: y.shape().to_vec(),
        });
    }
    let mut total = 0.0f64;
    for (&pi, &yi) in p.data().iter().zip(y.data()) {
        check_label(yi)?;
        total += kernels::bce_term(f64::from(pi), f64::from(yi), PROB_EPS);
    }
    Ok(total / p.len() as f64)
}

pub(crate) fn check_label<T: num_traits::Float>(y: T) -> Result<(), NnError> {
    if y == T::zero() || y == T::one() {
        Ok(())
    } else {
        Err(NnError::InvalidLabel {
            value: y.to_f64().unwrap_or(f64::NAN),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_affine(x: &[Vec<f32>], w: &[Vec<f32>], b: &[f32]) -> Vec<Vec<f32>> {
        x.iter()
            .map(|row| {
                (0..b.len())
                    .map(|j| {
                        let mut acc = b[j];
                        for (i, xi) in row.iter().enumerate() {
                            acc += xi * w[i][j];
                        }
                        acc
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn affine_identity_and_bias() {
        let eye = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let out = affine_forward(&x, &eye, &Tensor::zeros(&[2])).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0]);

        let x = Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let b = Tensor::vector(vec![3.0, -3.0]).unwrap();
        let out = affine_forward(&x, &eye, &b).unwrap();
        assert_eq!(out.data(), &[4.0, -2.0]);
    }

    #[test]
    fn affine_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<Vec<f32>> = (0..4)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let w: Vec<Vec<f32>> = (0..3)
            .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let b: Vec<f32> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let expected = naive_affine(&x, &w, &b);
        let out = affine_forward(
            &Tensor::from_rows(&x).unwrap(),
            &Tensor::from_rows(&w).unwrap(),
            &Tensor::vector(b).unwrap(),
        )
        .unwrap();
        for (r, row) in expected.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                assert!((out.at(r, c) - v).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn affine_shape_error_names_both_shapes() {
        let x = Tensor::zeros(&[2, 3]);
        let w = Tensor::zeros(&[4, 2]);
        let err = affine_forward(&x, &w, &Tensor::zeros(&[2])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn relu_cases() {
        let x = Tensor::vector(vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let neg = Tensor::vector(vec![-3.0, -0.5]).unwrap();
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = Tensor::vector((0..50).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap();
        assert_eq!(relu(&relu(&r)), relu(&r));
    }

    #[test]
    fn sigmoid_cases() {
        let z = sigmoid(&Tensor::vector(vec![0.0]).unwrap());
        assert_eq!(z.data()[0], 0.5);
        let tiny = sigmoid(&Tensor::vector(vec![-100.0]).unwrap()).data()[0];
        assert!(tiny > 0.0 && tiny <= 1e-30, "{tiny}");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let x: f32 = rng.random_range(-20.0..20.0);
            let s = sigmoid(&Tensor::vector(vec![x, -x]).unwrap());
            assert!((f64::from(s.data()[0]) + f64::from(s.data()[1]) - 1.0).abs() <= 1e-7);
        }
    }

    #[test]
    fn softmax_cases() {
        let u = softmax(&Tensor::from_rows(&[vec![0.0, 0.0, 0.0]]).unwrap());
        for v in u.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
        let big = softmax(&Tensor::from_rows(&[vec![1000.0, 0.0]]).unwrap());
        assert!((big.data()[0] - 1.0).abs() < 1e-6 && big.data()[1] < 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f32> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
        let shifted: Vec<f32> = x.iter().map(|v| v + 7.25).collect();
        let a = softmax(&Tensor::new(vec![2, 3], x).unwrap());
        let b = softmax(&Tensor::new(vec![2, 3], shifted).unwrap());
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-6);
        }
        for r in 0..2 {
            let s: f32 = a.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn bce_cases() {
        let half = Tensor::vector(vec![0.5]).unwrap();
        let one = Tensor::vector(vec![1.0]).unwrap();
        assert!((bce_loss(&half, &one).unwrap() - std::f64::consts::LN_2).abs() < 1e-6);
        let near = Tensor::vector(vec![(1.0 - PROB_EPS) as f32]).unwrap();
        assert!(bce_loss(&near, &one).unwrap() < 1e-6);
        let bad = Tensor::vector(vec![0.5]).unwrap();
        assert!(matches!(
            bce_loss(&half, &bad),
            Err(NnError::InvalidLabel { .. })
        ));
    }

    #[test]
    fn bce_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p: Vec<f32> = (0..64).map(|_| rng.random_range(0.01..0.99)).collect();
        let y: Vec<f32> = (0..64).map(|_| f32::from(rng.random_bool(0.3) as u8)).collect();
        let mut oracle = 0.0f64;
        for (&pi, &yi) in p.iter().zip(&y) {
            let (pi, yi) = (f64::from(pi), f64::from(yi));
            oracle += -(yi * pi.ln() + (1.0 - yi) * (1.0 - pi).ln());
        }
        oracle /= 64.0;
        let got = bce_loss(&Tensor::vector(p).unwrap(), &Tensor::vector(y).unwrap()).unwrap();
        assert!((got - oracle).abs() < 1e-6);
    }

    #[test]
    fn construction_checks() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
        assert!(Tensor::new(vec![1], vec![f32::NAN]).is_err());
    }
}
