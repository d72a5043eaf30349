//! Index-labelled dense tensors and pairwise contraction.
//!
//! Every index carries an integer label. Contracting two tensors sums over
//! the labels they share; the result keeps the free labels of the left
//! operand followed by the free labels of the right operand.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

use crate::tensor::row_major_strides;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Labeled {
    pub labels: Vec<usize>,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Labeled {
    pub fn new(labels: Vec<usize>, dims: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(labels.len(), dims.len());
        debug_assert_eq!(data.len(), dims.iter().product::<usize>());
        Self { labels, dims, data }
    }

    fn dim_of(&self, label: usize) -> usize {
        let pos = self.labels.iter().position(|&l| l == label).expect("label present");
        self.dims[pos]
    }

    /// Reorders the axes so that they follow `order` (a permutation of the
    /// current labels).
    pub fn permuted(&self, order: &[usize]) -> Labeled {
        debug_assert_eq!(order.len(), self.labels.len());
        if order == self.labels.as_slice() {
            return self.clone();
        }
        let src_strides = row_major_strides(&self.dims);
        let axes: Vec<usize> = order
            .iter()
            .map(|l| self.labels.iter().position(|x| x == l).expect("label present"))
            .collect();
        let dims: Vec<usize> = axes.iter().map(|&a| self.dims[a]).collect();
        let strides: Vec<usize> = axes.iter().map(|&a| src_strides[a]).collect();
        let rank = dims.len();

        let mut data = Vec::with_capacity(self.data.len());
        if rank == 0 {
            data.extend_from_slice(&self.data);
            return Labeled::new(order.to_vec(), dims, data);
        }
        let mut index = vec![0usize; rank];
        let mut offset = 0usize;
        let inner_dim = dims[rank - 1];
        let inner_stride = strides[rank - 1];
        loop {
            for k in 0..inner_dim {
                data.push(self.data[offset + k * inner_stride]);
            }
            // odometer over the outer axes
            let mut axis = rank - 1;
            loop {
                if axis == 0 {
                    return Labeled::new(order.to_vec(), dims, data);
                }
                axis -= 1;
                index[axis] += 1;
                offset += strides[axis];
                if index[axis] < dims[axis] {
                    break;
                }
                offset -= strides[axis] * dims[axis];
                index[axis] = 0;
            }
        }
    }

    /// Sums over the shared labels of `self` and `other`.
    pub fn contract(&self, other: &Labeled) -> Labeled {
        let shared: Vec<usize> =
            self.labels.iter().copied().filter(|l| other.labels.contains(l)).collect();
        let free_a: Vec<usize> =
            self.labels.iter().copied().filter(|l| !shared.contains(l)).collect();
        let free_b: Vec<usize> =
            other.labels.iter().copied().filter(|l| !shared.contains(l)).collect();

        let m: usize = free_a.iter().map(|&l| self.dim_of(l)).product();
        let k: usize = shared.iter().map(|&l| self.dim_of(l)).product();
        let n: usize = free_b.iter().map(|&l| other.dim_of(l)).product();

        let a_order: Vec<usize> = free_a.iter().chain(&shared).copied().collect();
        let b_order: Vec<usize> = shared.iter().chain(&free_b).copied().collect();
        let a = self.permuted(&a_order);
        let b = other.permuted(&b_order);

        let mut out = vec![0.0; m * n];
        {
            let av = ArrayView2::from_shape((m, k), &a.data).expect("a matrix shape");
            let bv = ArrayView2::from_shape((k, n), &b.data).expect("b matrix shape");
            let mut cv = ArrayViewMut2::from_shape((m, n), &mut out).expect("c matrix shape");
            general_mat_mul(1.0, &av, &bv, 0.0, &mut cv);
        }

        let mut labels = free_a.clone();
        labels.extend(&free_b);
        let mut dims: Vec<usize> = free_a.iter().map(|&l| self.dim_of(l)).collect();
        dims.extend(free_b.iter().map(|&l| other.dim_of(l)));
        Labeled::new(labels, dims, out)
    }
}
