//! Dense row-major tensors of `f64`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("no feasible action: every mask entry is false")]
    Infeasible,
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::Shape {
        op,
        detail: detail.into(),
    }
}

/// A dense array with an explicit shape. The empty shape denotes a scalar.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(shape_err(
                "new",
                format!(
                    "shape {shape:?} needs {expected} values, got {}",
                    data.len()
                ),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Builds an `r x c` matrix from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(shape_err("from_rows", "ragged rows"));
        }
        Ok(Self {
            shape: vec![r, c],
            data: rows.concat(),
        })
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `(rows, cols)` of a matrix.
    pub fn dims2(&self) -> Result<(usize, usize), TensorError> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(shape_err(
                "dims2",
                format!("expected a matrix, got {other:?}"),
            )),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = *self.shape.last().unwrap_or(&1);
        &self.data[i * c..(i + 1) * c]
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        let (r, k) = self.dims2()?;
        let (k2, c) = other.dims2()?;
        if k != k2 {
            return Err(shape_err(
                "matmul",
                format!("{:?} x {:?}", self.shape, other.shape),
            ));
        }
        let mut out = vec![0.0; r * c];
        matmul_into(&self.data, &other.data, &mut out, r, k, c);
        Ok(Tensor {
            shape: vec![r, c],
            data: out,
        })
    }

    pub fn transpose(&self) -> Result<Tensor, TensorError> {
        let (r, c) = self.dims2()?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor {
            shape: vec![c, r],
            data: out,
        })
    }

    /// Rounds every value through `f32`, the precision used on disk.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.data {
            *v = f64::from(*v as f32);
        }
    }
}

/// `out += a (r x k) * b (k x c)`, i-k-j order for contiguous inner loops.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], r: usize, k: usize, c: usize) {
    for i in 0..r {
        let out_row = &mut out[i * c..(i + 1) * c];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * c..(p + 1) * c];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out += a (r x k) * b^T` where `b` is `c x k`.
pub(crate) fn matmul_t_into(a: &[f64], b: &[f64], out: &mut [f64], r: usize, k: usize, c: usize) {
    for i in 0..r {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..c {
            let b_row = &b[j * k..(j + 1) * k];
            out[i * c + j] += a_row.iter().zip(b_row).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out += a^T (k x r, stored r x k) * g (r x c)`.
pub(crate) fn t_matmul_into(a: &[f64], g: &[f64], out: &mut [f64], r: usize, k: usize, c: usize) {
    for i in 0..r {
        let g_row = &g[i * c..(i + 1) * c];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[p * c..(p + 1) * c];
            for (o, gv) in out_row.iter_mut().zip(g_row) {
                *o += av * gv;
            }
        }
    }
}

/// Softmax restricted to the `true` entries of `mask`; masked entries are exactly zero.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>, TensorError> {
    if logits.len() != mask.len() {
        return Err(shape_err(
            "masked_softmax",
            format!("{} logits vs {} mask entries", logits.len(), mask.len()),
        ));
    }
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(TensorError::Infeasible);
    }
    let mut out: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&l, &m)| if m { (l - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    Ok(out)
}

/// Tensor-level wrapper over [`masked_softmax`]; preserves the input shape.
pub fn masked_softmax_tensor(logits: &Tensor, mask: &[bool]) -> Result<Tensor, TensorError> {
    let data = masked_softmax(logits.data(), mask)?;
    Tensor::new(logits.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matmul_identity() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let eye = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(a.matmul(&eye).unwrap(), a);
    }

    #[test]
    fn matmul_zero() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let z = Tensor::zeros(&[2, 3]);
        assert_eq!(a.matmul(&z).unwrap(), Tensor::zeros(&[2, 3]));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mk = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..3)
                .map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect()
        };
        let a = mk(&mut rng);
        let b = mk(&mut rng);
        let got = Tensor::from_rows(&a)
            .unwrap()
            .matmul(&Tensor::from_rows(&b).unwrap())
            .unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for p in 0..3 {
                    s += a[i][p] * b[p][j];
                }
                assert!((got.data()[i * 3 + j] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_dimension_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        assert!(matches!(a.matmul(&b), Err(TensorError::Shape { .. })));
    }

    #[test]
    fn new_rejects_wrong_length() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn softmax_uniform() {
        let p = masked_softmax(&[0.0; 4], &[true; 4]).unwrap();
        assert_eq!(p, vec![0.25; 4]);
    }

    #[test]
    fn softmax_single_feasible_is_one_hot() {
        let p = masked_softmax(&[5.0, -1.0, 0.3], &[false, false, true]).unwrap();
        assert_eq!(p, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn softmax_reference_values() {
        // exp(k) / (e + e^2 + e^3), evaluated independently
        let p = masked_softmax(&[1.0, 2.0, 3.0], &[true; 3]).unwrap();
        let expected = [
            0.090_030_573_170_380_46,
            0.244_728_471_054_797_6,
            0.665_240_955_774_821_9,
        ];
        for (a, b) in p.iter().zip(expected) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn softmax_all_masked_is_infeasible() {
        assert_eq!(
            masked_softmax(&[1.0, 2.0], &[false, false]),
            Err(TensorError::Infeasible)
        );
    }

    #[test]
    fn softmax_large_logits_stable() {
        let p = masked_softmax(&[1000.0, 1001.0], &[true, true]).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
