//! Dense row-major `f64` tensors.
//!
//! This is the sole numeric carrier in the workspace. Element `(r, c)` of an
//! `m×n` tensor lives at `data[r * n + c]`. All reductions run in a fixed
//! left-to-right order and everything is 64-bit, so results are
//! bit-reproducible across runs and platforms. Public operations reject
//! non-finite values instead of letting them propagate silently.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, validating the shape/data contract and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Dimension(format!(
                "zero-sized dimension in shape {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} implies {expected} elements, got {}",
                data.len()
            )));
        }
        let t = Self { shape, data };
        t.check_finite("tensor construction")?;
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape.to_vec(), vec![value; n])
    }

    /// 2-d convenience constructor from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Argument("from_rows needs at least one row".into()));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(vec![rows.len(), cols], data)
    }

    /// Identity matrix of order `n`.
    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row count; for 1-d tensors this is the element count.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Column count of a 2-d tensor.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            _ => self.shape[1],
        }
    }

    fn require_2d(&self, what: &str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::Dimension(format!(
                "{what} requires a 2-d tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[r * self.shape[1] + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[r * self.shape[1] + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        debug_assert_eq!(self.shape.len(), 2);
        let w = self.shape[1];
        &self.data[r * w..(r + 1) * w]
    }

    /// Copy of column `c` of a 2-d tensor.
    pub fn column(&self, c: usize) -> Vec<f64> {
        debug_assert_eq!(self.shape.len(), 2);
        (0..self.shape[0]).map(|r| self.get(r, c)).collect()
    }

    fn check_finite(&self, context: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::NonFinite(format!(
                "{context}: element {i} of shape {:?}",
                self.shape
            ))),
        }
    }

    /// Selects rows by index, in the given order.
    pub fn take_rows(&self, idx: &[usize]) -> Result<Tensor> {
        let (_, w) = self.require_2d("take_rows")?;
        let mut data = Vec::with_capacity(idx.len() * w);
        for &r in idx {
            if r >= self.rows() {
                return Err(Error::Index(format!(
                    "row {r} out of range 0..{}",
                    self.rows()
                )));
            }
            data.extend_from_slice(self.row(r));
        }
        Tensor::new(vec![idx.len(), w], data)
    }

    /// Selects columns by index, in the given order.
    pub fn take_columns(&self, idx: &[usize]) -> Result<Tensor> {
        let (m, w) = self.require_2d("take_columns")?;
        let mut data = Vec::with_capacity(idx.len() * m);
        for r in 0..m {
            for &c in idx {
                if c >= w {
                    return Err(Error::Index(format!("column {c} out of range 0..{w}")));
                }
                data.push(self.get(r, c));
            }
        }
        Tensor::new(vec![m, idx.len()], data)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.require_2d("transpose")?;
        let mut data = vec![0.0; m * n];
        for r in 0..m {
            for c in 0..n {
                data[c * m + r] = self.data[r * n + c];
            }
        }
        Ok(Tensor {
            shape: vec![n, m],
            data,
        })
    }

    /// Element-wise map; the result is finiteness-checked.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let t = Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        };
        t.check_finite("map")?;
        Ok(t)
    }

    /// Element-wise combination of two same-shape tensors.
    pub fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "zip_with shapes {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let t = Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        };
        t.check_finite("zip_with")?;
        Ok(t)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn scale(&self, k: f64) -> Result<Tensor> {
        self.map(|v| k * v)
    }

    /// Adds a `1×n` row vector to every row of an `m×n` tensor. This is the
    /// only broadcasting the engine supports.
    pub fn add_row_vector(&self, bias: &Tensor) -> Result<Tensor> {
        let (m, n) = self.require_2d("add_row_vector")?;
        if bias.shape() != [1, n] {
            return Err(Error::Dimension(format!(
                "bias shape {:?} does not broadcast over {:?}",
                bias.shape, self.shape
            )));
        }
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            for c in 0..n {
                data.push(self.data[r * n + c] + bias.data[c]);
            }
        }
        let t = Tensor {
            shape: self.shape.clone(),
            data,
        };
        t.check_finite("add_row_vector")?;
        Ok(t)
    }

    /// Column sums of a 2-d tensor as a `1×n` tensor, accumulated top to
    /// bottom.
    pub fn column_sums(&self) -> Result<Tensor> {
        let (m, n) = self.require_2d("column_sums")?;
        let mut sums = vec![0.0; n];
        for r in 0..m {
            for c in 0..n {
                sums[c] += self.data[r * n + c];
            }
        }
        Tensor::new(vec![1, n], sums)
    }
}

/// Matrix product of `a: m×k` and `b: k×n`, accumulated left to right in
/// `f64`. No parallel or blocked reduction, so the summation order is fixed.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, ka) = a.require_2d("matmul lhs")?;
    let (kb, n) = b.require_2d("matmul rhs")?;
    if ka != kb {
        return Err(Error::Dimension(format!(
            "matmul inner dimensions differ: {:?} x {:?}",
            a.shape, b.shape
        )));
    }
    let mut data = vec![0.0; m * n];
    for r in 0..m {
        let arow = &a.data[r * ka..(r + 1) * ka];
        for (i, &av) in arow.iter().enumerate() {
            let brow = &b.data[i * n..(i + 1) * n];
            let out = &mut data[r * n..(r + 1) * n];
            for c in 0..n {
                out[c] += av * brow[c];
            }
        }
    }
    let t = Tensor {
        shape: vec![m, n],
        data,
    };
    t.check_finite("matmul")?;
    Ok(t)
}

/// Concatenates 2-d tensors side by side. Part `i`'s columns land at offset
/// `sum of widths before i`; input order is preserved exactly.
pub fn concat_columns(parts: &[Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::Argument("concat_columns of an empty list".into()));
    }
    let m = parts[0].require_2d("concat_columns")?.0;
    let mut total = 0usize;
    for p in parts {
        let (rows, w) = p.require_2d("concat_columns")?;
        if rows != m {
            return Err(Error::Alignment(format!(
                "concat_columns row counts differ: {m} vs {rows}"
            )));
        }
        total += w;
    }
    let mut data = Vec::with_capacity(m * total);
    for r in 0..m {
        for p in parts {
            data.extend_from_slice(p.row(r));
        }
    }
    Tensor::new(vec![m, total], data)
}

/// Splits a 2-d tensor into column blocks of the given widths; the exact
/// inverse of [`concat_columns`].
pub fn split_columns(t: &Tensor, widths: &[usize]) -> Result<Vec<Tensor>> {
    let (m, n) = t.require_2d("split_columns")?;
    let total: usize = widths.iter().sum();
    if total != n {
        return Err(Error::Dimension(format!(
            "split widths {widths:?} sum to {total}, tensor has {n} columns"
        )));
    }
    if widths.iter().any(|&w| w == 0) {
        return Err(Error::Argument("zero-width split block".into()));
    }
    let mut out = Vec::with_capacity(widths.len());
    let mut offset = 0;
    for &w in widths {
        let mut data = Vec::with_capacity(m * w);
        for r in 0..m {
            let row = t.row(r);
            data.extend_from_slice(&row[offset..offset + w]);
        }
        out.push(Tensor::new(vec![m, w], data)?);
        offset += w;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matmul_identity() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let i = Tensor::identity(2);
        assert_eq!(matmul(&a, &i).unwrap(), a);
    }

    #[test]
    fn matmul_hand_oracle() {
        // [[1,2],[3,4]] x [[5],[6]] = [[17],[39]]
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![5.0], vec![6.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 2]);
        let err = matmul(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn construction_rejects_bad_lengths_and_nonfinite() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(vec![2], vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn row_major_indexing() {
        let t = Tensor::new(vec![2, 3], (0..6).map(|v| v as f64).collect()).unwrap();
        for r in 0..2 {
            for c in 0..3 {
                assert_eq!(t.get(r, c), t.data()[r * 3 + c]);
            }
        }
    }

    #[test]
    fn concat_columns_hand_oracle() {
        let a = Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        let c = concat_columns(&[a, b]).unwrap();
        assert_eq!(c, Tensor::from_rows(&[vec![1.0, 3.0], vec![2.0, 4.0]]).unwrap());
    }

    #[test]
    fn concat_columns_widths() {
        let parts = [
            Tensor::zeros(&[3, 4]),
            Tensor::zeros(&[3, 4]),
            Tensor::zeros(&[3, 8]),
        ];
        assert_eq!(concat_columns(&parts).unwrap().shape(), &[3, 16]);
    }

    #[test]
    fn concat_single_part_is_identity() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(concat_columns(std::slice::from_ref(&a)).unwrap(), a);
    }

    #[test]
    fn concat_errors() {
        assert!(matches!(
            concat_columns(&[]).unwrap_err(),
            Error::Argument(_)
        ));
        let a = Tensor::zeros(&[2, 1]);
        let b = Tensor::zeros(&[3, 1]);
        assert!(matches!(
            concat_columns(&[a, b]).unwrap_err(),
            Error::Alignment(_)
        ));
    }

    #[test]
    fn transpose_round_trip() {
        let t = Tensor::new(vec![2, 3], (0..6).map(|v| v as f64).collect()).unwrap();
        assert_eq!(t.transpose().unwrap().transpose().unwrap(), t);
    }

    proptest! {
        #[test]
        fn split_concat_round_trip(
            rows in 1usize..6,
            widths in proptest::collection::vec(1usize..5, 1..5),
            seed in any::<u64>(),
        ) {
            let total: usize = widths.iter().sum();
            let mut rng = crate::rng::RngState::new(seed);
            let t = crate::rng::rng_uniform(&mut rng, &[rows, total], -10.0, 10.0).unwrap();
            let parts = split_columns(&t, &widths).unwrap();
            let back = concat_columns(&parts).unwrap();
            // Bit-exact round trip.
            prop_assert_eq!(back, t);
        }

        #[test]
        fn reconstruction_from_indexing(rows in 1usize..5, cols in 1usize..5, seed in any::<u64>()) {
            let mut rng = crate::rng::RngState::new(seed);
            let t = crate::rng::rng_uniform(&mut rng, &[rows, cols], -1.0, 1.0).unwrap();
            let mut rebuilt = Tensor::zeros(&[rows, cols]);
            for r in 0..rows {
                for c in 0..cols {
                    rebuilt.set(r, c, t.get(r, c));
                }
            }
            prop_assert_eq!(rebuilt, t);
        }
    }
}
