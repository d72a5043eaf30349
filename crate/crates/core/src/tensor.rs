//! Dense tensors, adjacency-matrix network structures and the error and
//! complexity metrics used to score them.
//!
//! A [`TnStructure`] stores the strict upper triangle of a symmetric bond
//! matrix as a flat gene vector. A gene of 1 means the two nodes are not
//! connected (the bond is trivially contracted). Core `n` carries its
//! physical index first and then one bond index per other node, in ascending
//! neighbour order.

use rand::Rng;
use thiserror::Error;

use crate::network::Labeled;

/// Default cap on the number of bond index tuples enumerated by
/// [`contract_bruteforce`].
pub const BRUTEFORCE_CAP: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape must be non-empty with every dimension >= 1, got {0:?}")]
    BadShape(Vec<usize>),
    #[error("data length {actual} does not match shape product {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("network order must be at least 2, got {0}")]
    OrderTooSmall(usize),
    #[error("expected {expected} genes for order {order}, got {actual}")]
    GeneCount { order: usize, expected: usize, actual: usize },
    #[error("gene {index} = {value} is outside [1, {upper}]")]
    GeneOutOfRange { index: usize, value: usize, upper: usize },
    #[error("adjacency matrix is not symmetric at ({0}, {1})")]
    NotSymmetric(usize, usize),
    #[error("adjacency matrix must be square with one row per mode")]
    NotSquare,
    #[error("core {node} has shape {actual:?}, expected {expected:?}")]
    CoreShape { node: usize, expected: Vec<usize>, actual: Vec<usize> },
    #[error("expected {expected} cores, got {actual}")]
    CoreCount { expected: usize, actual: usize },
    #[error("shape {left:?} does not match {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("reference tensor has zero norm")]
    ZeroReference,
    #[error("brute-force enumeration of {0} bond tuples exceeds the cap of {1}")]
    CapExceeded(usize, usize),
}

/// Dense multiway array stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(TensorError::BadShape(shape));
        }
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::LengthMismatch { expected, actual: data.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self, TensorError> {
        let len = shape.iter().product();
        Self::new(shape, vec![0.0; len])
    }

    /// Tensor with i.i.d. `N(0, std^2)` entries.
    pub fn random_normal<R: Rng + ?Sized>(
        shape: Vec<usize>,
        std: f64,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        let len = shape.iter().product();
        let data = (0..len)
            .map(|_| std * rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        Self::new(shape, data)
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

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Number of genes for a network of the given order.
pub fn gene_len(order: usize) -> usize {
    order * order.saturating_sub(1) / 2
}

/// Position of the bond between nodes `a < b` in the row-major strict upper
/// triangle.
fn edge_index(order: usize, a: usize, b: usize) -> usize {
    debug_assert!(a < b && b < order);
    a * (2 * order - a - 1) / 2 + (b - a - 1)
}

/// A tensor network structure: mode dimensions plus bond ranks.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TnStructure {
    mode_dims: Vec<usize>,
    genes: Vec<usize>,
}

impl TnStructure {
    pub fn new(mode_dims: Vec<usize>, genes: Vec<usize>) -> Result<Self, TensorError> {
        let order = mode_dims.len();
        if order < 2 {
            return Err(TensorError::OrderTooSmall(order));
        }
        if mode_dims.contains(&0) {
            return Err(TensorError::BadShape(mode_dims));
        }
        let expected = gene_len(order);
        if genes.len() != expected {
            return Err(TensorError::GeneCount { order, expected, actual: genes.len() });
        }
        if let Some((index, &value)) = genes.iter().enumerate().find(|(_, &g)| g == 0) {
            return Err(TensorError::GeneOutOfRange { index, value, upper: usize::MAX });
        }
        Ok(Self { mode_dims, genes })
    }

    /// Like [`TnStructure::new`] but also enforces `gene <= rank_upper_bound`.
    pub fn bounded(
        mode_dims: Vec<usize>,
        genes: Vec<usize>,
        rank_upper_bound: usize,
    ) -> Result<Self, TensorError> {
        let s = Self::new(mode_dims, genes)?;
        if let Some((index, &value)) =
            s.genes.iter().enumerate().find(|(_, &g)| g > rank_upper_bound)
        {
            return Err(TensorError::GeneOutOfRange { index, value, upper: rank_upper_bound });
        }
        Ok(s)
    }

    pub fn order(&self) -> usize {
        self.mode_dims.len()
    }

    pub fn mode_dims(&self) -> &[usize] {
        &self.mode_dims
    }

    pub fn genes(&self) -> &[usize] {
        &self.genes
    }

    pub fn element_count(&self) -> usize {
        self.mode_dims.iter().product()
    }

    /// Bond rank between two distinct nodes.
    pub fn bond(&self, a: usize, b: usize) -> usize {
        assert_ne!(a, b, "no bond from a node to itself");
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        self.genes[edge_index(self.order(), lo, hi)]
    }

    /// Shape of core `n`: physical dimension, then bonds in ascending
    /// neighbour order.
    pub fn core_shape(&self, n: usize) -> Vec<usize> {
        let mut shape = Vec::with_capacity(self.order());
        shape.push(self.mode_dims[n]);
        shape.extend((0..self.order()).filter(|&m| m != n).map(|m| self.bond(n, m)));
        shape
    }

    /// Index labels of core `n`, matching [`TnStructure::core_shape`].
    /// Physical index of node `n` is labelled `n`; the bond `(a, b)` is
    /// labelled `order + edge_index(a, b)`.
    pub(crate) fn core_labels(&self, n: usize) -> Vec<usize> {
        let order = self.order();
        let mut labels = Vec::with_capacity(order);
        labels.push(n);
        for m in (0..order).filter(|&m| m != n) {
            let (lo, hi) = if n < m { (n, m) } else { (m, n) };
            labels.push(order + edge_index(order, lo, hi));
        }
        labels
    }
}

/// Builds a structure from a symmetric bond matrix. The diagonal is ignored.
pub fn encode_structure(
    mode_dims: Vec<usize>,
    adjacency: &[Vec<usize>],
) -> Result<TnStructure, TensorError> {
    let order = mode_dims.len();
    if adjacency.len() != order || adjacency.iter().any(|row| row.len() != order) {
        return Err(TensorError::NotSquare);
    }
    let mut genes = Vec::with_capacity(gene_len(order));
    for a in 0..order {
        for b in (a + 1)..order {
            if adjacency[a][b] != adjacency[b][a] {
                return Err(TensorError::NotSymmetric(a, b));
            }
            genes.push(adjacency[a][b]);
        }
    }
    TnStructure::new(mode_dims, genes)
}

/// Symmetric bond matrix of a structure, with zeros on the diagonal.
pub fn decode_structure(s: &TnStructure) -> Vec<Vec<usize>> {
    let order = s.order();
    let mut a = vec![vec![0; order]; order];
    for i in 0..order {
        for j in (i + 1)..order {
            let g = s.bond(i, j);
            a[i][j] = g;
            a[j][i] = g;
        }
    }
    a
}

/// The core tensors of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct CoreSet {
    pub cores: Vec<Tensor>,
}

impl CoreSet {
    pub fn new(cores: Vec<Tensor>) -> Self {
        Self { cores }
    }

    pub fn zeros(s: &TnStructure) -> Self {
        let cores = (0..s.order())
            .map(|n| Tensor::zeros(s.core_shape(n)).expect("structure shapes are valid"))
            .collect();
        Self { cores }
    }

    pub fn check(&self, s: &TnStructure) -> Result<(), TensorError> {
        if self.cores.len() != s.order() {
            return Err(TensorError::CoreCount { expected: s.order(), actual: self.cores.len() });
        }
        for (node, core) in self.cores.iter().enumerate() {
            let expected = s.core_shape(node);
            if core.shape() != expected.as_slice() {
                return Err(TensorError::CoreShape {
                    node,
                    expected,
                    actual: core.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.cores.iter().map(Tensor::len).sum()
    }
}

pub(crate) fn labeled_core(s: &TnStructure, cores: &CoreSet, n: usize) -> Labeled {
    let core = &cores.cores[n];
    Labeled::new(s.core_labels(n), core.shape().to_vec(), core.data().to_vec())
}

/// Full contraction of the network, merging nodes pairwise in node order.
pub fn contract(cores: &CoreSet, s: &TnStructure) -> Result<Tensor, TensorError> {
    cores.check(s)?;
    let mut acc = labeled_core(s, cores, 0);
    for n in 1..s.order() {
        acc = acc.contract(&labeled_core(s, cores, n));
    }
    let physical: Vec<usize> = (0..s.order()).collect();
    let out = acc.permuted(&physical);
    Tensor::new(s.mode_dims().to_vec(), out.data)
}

/// Contraction by explicit enumeration over every bond index tuple.
///
/// Only meant as a reference for small networks; errors when the number of
/// bond tuples exceeds `cap`.
pub fn contract_bruteforce(
    cores: &CoreSet,
    s: &TnStructure,
    cap: usize,
) -> Result<Tensor, TensorError> {
    cores.check(s)?;
    let order = s.order();
    let bond_tuples = s.genes().iter().try_fold(1usize, |acc, &g| acc.checked_mul(g));
    let bond_tuples = match bond_tuples {
        Some(n) if n <= cap => n,
        Some(n) => return Err(TensorError::CapExceeded(n, cap)),
        None => return Err(TensorError::CapExceeded(usize::MAX, cap)),
    };

    let strides: Vec<Vec<usize>> = cores.cores.iter().map(|c| row_major_strides(c.shape())).collect();
    let neighbours: Vec<Vec<usize>> =
        (0..order).map(|n| (0..order).filter(|&m| m != n).collect()).collect();

    let mut out = Tensor::zeros(s.mode_dims().to_vec())?;
    let mut phys = vec![0usize; order];
    let mut bonds = vec![0usize; s.genes().len()];
    for flat in 0..out.len() {
        unravel(flat, s.mode_dims(), &mut phys);
        let mut total = 0.0;
        for tuple in 0..bond_tuples {
            unravel(tuple, s.genes(), &mut bonds);
            let mut prod = 1.0;
            for n in 0..order {
                let mut offset = phys[n] * strides[n][0];
                for (slot, &m) in neighbours[n].iter().enumerate() {
                    let (lo, hi) = if n < m { (n, m) } else { (m, n) };
                    offset += bonds[edge_index(order, lo, hi)] * strides[n][slot + 1];
                }
                prod *= cores.cores[n].data()[offset];
            }
            total += prod;
        }
        out.data_mut()[flat] = total;
    }
    Ok(out)
}

pub(crate) fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

fn unravel(mut flat: usize, dims: &[usize], out: &mut [usize]) {
    for i in (0..dims.len()).rev() {
        out[i] = flat % dims[i];
        flat /= dims[i];
    }
}

/// Total number of core parameters: `sum_n I_n * prod_{m != n} A[n, m]`.
pub fn param_count(s: &TnStructure) -> usize {
    (0..s.order()).map(|n| s.core_shape(n).iter().product::<usize>()).sum()
}

/// Complexity term: parameter count divided by the number of data elements.
pub fn complexity_phi(s: &TnStructure, x_elements: usize) -> f64 {
    param_count(s) as f64 / x_elements as f64
}

/// `log10(elements / params)`, the reported compression ratio.
pub fn log10_compression_ratio(s: &TnStructure, x_elements: usize) -> f64 {
    (x_elements as f64 / param_count(s) as f64).log10()
}

fn check_same_shape(x: &Tensor, y: &Tensor) -> Result<(), TensorError> {
    if x.shape() != y.shape() {
        return Err(TensorError::ShapeMismatch {
            left: x.shape().to_vec(),
            right: y.shape().to_vec(),
        });
    }
    Ok(())
}

/// `||x - y||_F^2 / ||x||_F^2`.
pub fn rse_squared(x: &Tensor, y: &Tensor) -> Result<f64, TensorError> {
    check_same_shape(x, y)?;
    let norm = x.frobenius_norm_sq();
    if norm == 0.0 {
        return Err(TensorError::ZeroReference);
    }
    let diff: f64 = x.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(diff / norm)
}

/// Square root of [`rse_squared`].
pub fn rse(x: &Tensor, y: &Tensor) -> Result<f64, TensorError> {
    rse_squared(x, y).map(f64::sqrt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn sym(n: usize, upper: &[usize]) -> Vec<Vec<usize>> {
        let mut a = vec![vec![0; n]; n];
        let mut k = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                a[i][j] = upper[k];
                a[j][i] = upper[k];
                k += 1;
            }
        }
        a
    }

    #[test]
    fn encode_row_major_upper_triangle() {
        let s = encode_structure(vec![2, 2, 2], &sym(3, &[2, 3, 1])).unwrap();
        assert_eq!(s.genes(), &[2, 3, 1]);
        let s = encode_structure(vec![2, 2], &sym(2, &[5])).unwrap();
        assert_eq!(s.genes(), &[5]);
        assert_eq!(gene_len(8), 28);
    }

    #[test]
    fn encode_rejects_bad_matrices() {
        let mut a = sym(3, &[2, 3, 1]);
        a[1][0] = 4;
        assert_eq!(encode_structure(vec![2; 3], &a), Err(TensorError::NotSymmetric(0, 1)));
        let a = sym(3, &[2, 0, 1]);
        assert!(matches!(
            encode_structure(vec![2; 3], &a),
            Err(TensorError::GeneOutOfRange { .. })
        ));
    }

    #[test]
    fn decode_inverts_encode() {
        let s = TnStructure::new(vec![2, 2, 2], vec![2, 3, 1]).unwrap();
        let a = decode_structure(&s);
        assert_eq!(a, vec![vec![0, 2, 3], vec![2, 0, 1], vec![3, 1, 0]]);
        let ones = decode_structure(&TnStructure::new(vec![3; 4], vec![1; 6]).unwrap());
        for (i, row) in ones.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(v, usize::from(i != j));
            }
        }
    }

    #[test]
    fn two_node_rank_one_outer_product() {
        let s = TnStructure::new(vec![2, 2], vec![1]).unwrap();
        let cores = CoreSet::new(vec![
            Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap(),
            Tensor::new(vec![2, 1], vec![3.0, 4.0]).unwrap(),
        ]);
        let expected = vec![3.0, 4.0, 6.0, 8.0];
        assert_eq!(contract(&cores, &s).unwrap().data(), expected.as_slice());
        assert_eq!(contract_bruteforce(&cores, &s, BRUTEFORCE_CAP).unwrap().data(), expected.as_slice());
    }

    #[test]
    fn core_shape_mismatch_is_rejected() {
        let s = TnStructure::new(vec![2, 2], vec![2]).unwrap();
        let cores = CoreSet::new(vec![
            Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap(),
            Tensor::new(vec![2, 1], vec![3.0, 4.0]).unwrap(),
        ]);
        assert!(matches!(contract(&cores, &s), Err(TensorError::CoreShape { node: 0, .. })));
    }

    #[test]
    fn single_node_is_rejected() {
        assert_eq!(TnStructure::new(vec![3], vec![]), Err(TensorError::OrderTooSmall(1)));
    }

    #[test]
    fn zero_cores_contract_to_zero() {
        let s = TnStructure::new(vec![2, 3, 2], vec![2, 2, 3]).unwrap();
        let cores = CoreSet::zeros(&s);
        let y = contract_bruteforce(&cores, &s, BRUTEFORCE_CAP).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert_eq!(y.shape(), &[2, 3, 2]);
    }

    #[test]
    fn bruteforce_cap_is_enforced() {
        let s = TnStructure::new(vec![2, 2, 2], vec![4, 4, 4]).unwrap();
        let cores = CoreSet::zeros(&s);
        assert_eq!(
            contract_bruteforce(&cores, &s, 10),
            Err(TensorError::CapExceeded(64, 10))
        );
    }

    #[test]
    fn param_counts() {
        let s = TnStructure::new(vec![2, 3, 4], vec![2, 3, 1]).unwrap();
        assert_eq!(param_count(&s), 30);
        let s = TnStructure::new(vec![2, 3, 4], vec![1, 1, 1]).unwrap();
        assert_eq!(param_count(&s), 9);
        let s = TnStructure::new(vec![4; 8], vec![1; 28]).unwrap();
        assert_eq!(param_count(&s), 32);
    }

    #[test]
    fn complexity_values() {
        let s = TnStructure::new(vec![2, 3, 4], vec![2, 3, 1]).unwrap();
        assert_close(complexity_phi(&s, 24), 1.25, 1e-15);
        assert_close(log10_compression_ratio(&s, 24), -0.09691001300805639, 1e-12);
        let s = TnStructure::new(vec![2, 3, 4], vec![1, 1, 1]).unwrap();
        assert_close(log10_compression_ratio(&s, 9), 0.0, 1e-15);
        let s = TnStructure::new(vec![4; 8], vec![1; 28]).unwrap();
        assert_close(complexity_phi(&s, 65536), 32.0 / 65536.0, 1e-18);
        assert_close(log10_compression_ratio(&s, 65536), 3.3113299523037933, 1e-12);
    }

    #[test]
    fn rse_values() {
        let x = Tensor::new(vec![1], vec![2.0]).unwrap();
        let y = Tensor::new(vec![1], vec![1.0]).unwrap();
        assert_close(rse_squared(&x, &y).unwrap(), 0.25, 1e-15);
        assert_close(rse(&x, &y).unwrap(), 0.5, 1e-15);
        assert_eq!(rse_squared(&x, &x).unwrap(), 0.0);
        let zero = Tensor::zeros(vec![1]).unwrap();
        assert_eq!(rse_squared(&x, &zero).unwrap(), 1.0);
        assert_eq!(rse_squared(&zero, &x), Err(TensorError::ZeroReference));
    }

    #[test]
    fn tensor_invariants() {
        assert!(Tensor::new(vec![], vec![]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert_eq!(
            Tensor::new(vec![2, 2], vec![1.0; 3]),
            Err(TensorError::LengthMismatch { expected: 4, actual: 3 })
        );
    }

    mod props {
        use super::super::*;
        use crate::decompose::{init_cores, FitConfig};
        use proptest::prelude::*;

        fn structure() -> impl Strategy<Value = TnStructure> {
            (2usize..=4)
                .prop_flat_map(|n| (prop::collection::vec(1usize..=3, n), prop::collection::vec(1usize..=2, gene_len(n))))
                .prop_map(|(dims, genes)| TnStructure::new(dims, genes).unwrap())
        }

        proptest! {
            #[test]
            fn contraction_matches_bruteforce(s in structure(), seed in any::<u64>()) {
                let cores = init_cores(&s, &FitConfig { init_std: 1.0, seed, ..FitConfig::default() });
                let fast = contract(&cores, &s).unwrap();
                let slow = contract_bruteforce(&cores, &s, BRUTEFORCE_CAP).unwrap();
                prop_assert_eq!(fast.shape(), slow.shape());
                for (a, b) in fast.data().iter().zip(slow.data()) {
                    prop_assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
                }
            }

            #[test]
            fn encode_decode_roundtrip(s in structure()) {
                let back = encode_structure(s.mode_dims().to_vec(), &decode_structure(&s)).unwrap();
                prop_assert_eq!(back, s);
            }

            #[test]
            fn param_count_matches_cores(s in structure()) {
                prop_assert_eq!(param_count(&s), CoreSet::zeros(&s).param_count());
            }
        }
    }
}
