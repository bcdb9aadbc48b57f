use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
///
/// Every operation in the crate works on one- or two-dimensional arrays;
/// a vector of length `n` is stored with shape `[1, n]` where a row is needed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumArray {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl NumArray {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let count: usize = shape.iter().product();
        if count != values.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                count,
                values.len()
            )));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            shape: vec![rows, cols],
            values: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Self {
            shape: vec![rows, cols],
            values: vec![v; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Ok(Self {
            shape: vec![rows.len(), cols],
            values: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn row_vector(values: Vec<f64>) -> Self {
        Self {
            shape: vec![1, values.len()],
            values,
        }
    }

    pub fn col_vector(values: Vec<f64>) -> Self {
        Self {
            shape: vec![values.len(), 1],
            values,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1, 1],
            values: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Row count, treating a 1-D array as a single row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.values[r * cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.values[r * c..(r + 1) * c]
    }

    pub fn item(&self) -> f64 {
        self.values[0]
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.values[i * c + j];
            }
        }
        Self {
            shape: vec![c, r],
            values: out,
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Plain matrix product `a · b`.
pub fn matmul(a: &NumArray, b: &NumArray) -> Result<NumArray> {
    let (n, k) = (a.rows(), a.cols());
    let (k2, m) = (b.rows(), b.cols());
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul inner extents differ: {n}x{k} by {k2}x{m}"
        )));
    }
    let mut out = vec![0.0; n * m];
    let (av, bv) = (a.values(), b.values());
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = av[i * k + p];
            let brow = &bv[p * m..(p + 1) * m];
            for (o, &bj) in orow.iter_mut().zip(brow) {
                *o += aip * bj;
            }
        }
    }
    NumArray::new(vec![n, m], out)
}

/// `a · bᵀ` without materializing the transpose.
pub fn matmul_nt(a: &NumArray, b: &NumArray) -> Result<NumArray> {
    let (n, k) = (a.rows(), a.cols());
    let (m, k2) = (b.rows(), b.cols());
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul_nt inner extents differ: {n}x{k} by ({m}x{k2})^T"
        )));
    }
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let arow = a.row(i);
        for j in 0..m {
            out[i * m + j] = dot(arow, b.row(j));
        }
    }
    NumArray::new(vec![n, m], out)
}

/// `aᵀ · b`.
pub fn matmul_tn(a: &NumArray, b: &NumArray) -> Result<NumArray> {
    let (k, n) = (a.rows(), a.cols());
    let (k2, m) = (b.rows(), b.cols());
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul_tn inner extents differ: ({k}x{n})^T by {k2}x{m}"
        )));
    }
    let mut out = vec![0.0; n * m];
    for p in 0..k {
        let arow = a.row(p);
        let brow = b.row(p);
        for (i, &api) in arow.iter().enumerate() {
            if api == 0.0 {
                continue;
            }
            let orow = &mut out[i * m..(i + 1) * m];
            for (o, &bj) in orow.iter_mut().zip(brow) {
                *o += api * bj;
            }
        }
    }
    NumArray::new(vec![n, m], out)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Above this value of `x / phi` the softplus switches to its overflow-safe form.
pub const SOFTPLUS_GUARD: f64 = 30.0;

/// `phi · ln(1 + exp(x / phi))`, evaluated without overflow.
///
/// Results that underflow are clamped to the smallest positive normal float so
/// the output stays strictly positive.
pub fn scaled_softplus_scalar(x: f64, phi: f64) -> f64 {
    let z = x / phi;
    let v = if z > SOFTPLUS_GUARD {
        x + phi * (-z).exp().ln_1p()
    } else {
        phi * z.exp().ln_1p()
    };
    v.max(f64::MIN_POSITIVE)
}

/// Elementwise scaled softplus with a per-column timescale.
pub fn scaled_softplus(x: &NumArray, phi: &[f64]) -> Result<NumArray> {
    if phi.len() != x.cols() {
        return Err(Error::Dimension(format!(
            "softplus timescale has {} entries for {} columns",
            phi.len(),
            x.cols()
        )));
    }
    if let Some(p) = phi.iter().find(|p| !(**p > 0.0)) {
        return Err(Error::ParameterDomain(format!(
            "softplus timescale must be positive, got {p}"
        )));
    }
    let cols = x.cols();
    let values = x
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| scaled_softplus_scalar(v, phi[i % cols]))
        .collect();
    NumArray::new(x.shape().to_vec(), values)
}

/// Row softmax where `mask[i] == false` marks an excluded entry.
pub fn masked_softmax_rows(scores: &NumArray, mask: &[bool]) -> Result<NumArray> {
    if mask.len() != scores.len() {
        return Err(Error::Dimension(format!(
            "mask has {} entries for {} scores",
            mask.len(),
            scores.len()
        )));
    }
    let (r, c) = (scores.rows(), scores.cols());
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let row = scores.row(i);
        let m = &mask[i * c..(i + 1) * c];
        let max = row
            .iter()
            .zip(m)
            .filter(|(_, &keep)| keep)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::DegenerateRow { row: i });
        }
        let orow = &mut out[i * c..(i + 1) * c];
        let mut total = 0.0;
        for j in 0..c {
            if m[j] {
                let e = (row[j] - max).exp();
                orow[j] = e;
                total += e;
            }
        }
        for o in orow.iter_mut() {
            *o /= total;
        }
    }
    NumArray::new(scores.shape().to_vec(), out)
}

/// Lower-triangular (inclusive) causal mask for an `l x l` score matrix.
pub fn causal_mask(l: usize) -> Vec<bool> {
    let mut m = vec![false; l * l];
    for i in 0..l {
        for j in 0..=i {
            m[i * l + j] = true;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_count() {
        assert!(NumArray::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(NumArray::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let i = NumArray::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let b = NumArray::col_vector(vec![3.0, 4.0]);
        assert_eq!(matmul(&i, &b).unwrap().values(), &[3.0, 4.0]);
        let a = NumArray::row_vector(vec![1.0, 2.0]);
        assert_eq!(matmul(&a, &b).unwrap().values(), &[11.0]);
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let a = NumArray::zeros(2, 3);
        let b = NumArray::zeros(2, 3);
        assert!(matches!(matmul(&a, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn transposed_products_agree_with_explicit_transpose() {
        let a = NumArray::from_rows(&[vec![1.0, -2.0, 0.5], vec![3.0, 0.25, -1.0]]).unwrap();
        let b = NumArray::from_rows(&[vec![0.5, 1.5, 2.0], vec![-1.0, 0.0, 4.0]]).unwrap();
        let nt = matmul_nt(&a, &b).unwrap();
        assert_eq!(nt, matmul(&a, &b.transpose()).unwrap());
        let tn = matmul_tn(&a, &b).unwrap();
        assert_eq!(tn, matmul(&a.transpose(), &b).unwrap());
    }

    #[test]
    fn softplus_values() {
        assert!((scaled_softplus_scalar(0.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((scaled_softplus_scalar(0.0, 2.0) - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
        // 10 + ln(1 + e^-10), evaluated at 50 digits
        assert!((scaled_softplus_scalar(10.0, 1.0) - 10.000045398899216).abs() < 1e-12);
        assert!(scaled_softplus_scalar(-2000.0, 1.0) > 0.0);
        assert!(scaled_softplus_scalar(1e6, 1.0).is_finite());
    }

    #[test]
    fn softplus_rejects_nonpositive_timescale() {
        let x = NumArray::zeros(1, 2);
        assert!(matches!(
            scaled_softplus(&x, &[1.0, 0.0]),
            Err(Error::ParameterDomain(_))
        ));
        assert!(matches!(
            scaled_softplus(&x, &[1.0, -1.0]),
            Err(Error::ParameterDomain(_))
        ));
    }

    #[test]
    fn softmax_examples() {
        let s = NumArray::row_vector(vec![0.0, 0.0]);
        let p = masked_softmax_rows(&s, &[true, true]).unwrap();
        assert_eq!(p.values(), &[0.5, 0.5]);

        let s = NumArray::row_vector(vec![3.7, 100.0]);
        let p = masked_softmax_rows(&s, &[true, false]).unwrap();
        assert_eq!(p.values(), &[1.0, 0.0]);

        let s = NumArray::row_vector(vec![1.0, 2.0, 3.0]);
        let p = masked_softmax_rows(&s, &[true; 3]).unwrap();
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        for (j, v) in [1.0f64, 2.0, 3.0].iter().enumerate() {
            assert!((p.values()[j] - v.exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_fully_masked_row_is_an_error() {
        let s = NumArray::from_rows(&[vec![1.0, 2.0], vec![0.0, 0.0]]).unwrap();
        let err = masked_softmax_rows(&s, &[true, false, false, false]).unwrap_err();
        assert_eq!(err, Error::DegenerateRow { row: 1 });
    }
}
