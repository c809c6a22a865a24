//! Finite-difference operators on the interior nodes of a [`GridSpec`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::spaces::{GradientOperator, GridSpec};

/// Lumped mass weights (one cell volume per interior node).
pub fn mass_weights(grid: &GridSpec) -> DVector<f64> {
    DVector::from_element(grid.interior_count(), grid.cell_volume())
}

/// Gradient sampled at cell midpoints (1D) or on the two triangles of every cell (2D).
///
/// With the stored weights, `sum_q w_q |(∇u)_q|²` is the standard five-point
/// (three-point in 1D) Dirichlet form.
pub fn gradient_operator(grid: &GridSpec) -> GradientOperator {
    match grid.dimension() {
        1 => gradient_1d(grid),
        _ => gradient_2d(grid),
    }
}

fn gradient_1d(grid: &GridSpec) -> GradientOperator {
    let n = grid.interior_count();
    let h = grid.spacing(0);
    let d = DMatrix::from_fn(n + 1, n, |q, j| {
        if q == j {
            1.0 / h
        } else if q == j + 1 {
            -1.0 / h
        } else {
            0.0
        }
    });
    GradientOperator {
        weights: DVector::from_element(n + 1, h),
        components: vec![d],
    }
}

fn gradient_2d(grid: &GridSpec) -> GradientOperator {
    let (nx, ny) = (grid.nodes(0), grid.nodes(1));
    let (hx, hy) = (grid.spacing(0), grid.spacing(1));
    let n = grid.interior_count();
    let cells = (nx - 1) * (ny - 1);
    let mut dx = DMatrix::zeros(2 * cells, n);
    let mut dy = DMatrix::zeros(2 * cells, n);
    // Full-grid node (i, j) -> interior column, or None on the boundary.
    let col = |i: usize, j: usize| {
        (i > 0 && j > 0 && i + 1 < nx && j + 1 < ny).then(|| grid.index(i - 1, j - 1))
    };
    let add = |m: &mut DMatrix<f64>, q: usize, node: (usize, usize), c: f64| {
        if let Some(k) = col(node.0, node.1) {
            m[(q, k)] += c;
        }
    };
    let mut q = 0;
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            // lower-left triangle: (i,j), (i+1,j), (i,j+1)
            add(&mut dx, q, (i + 1, j), 1.0 / hx);
            add(&mut dx, q, (i, j), -1.0 / hx);
            add(&mut dy, q, (i, j + 1), 1.0 / hy);
            add(&mut dy, q, (i, j), -1.0 / hy);
            q += 1;
            // upper-right triangle: (i+1,j+1), (i,j+1), (i+1,j)
            add(&mut dx, q, (i + 1, j + 1), 1.0 / hx);
            add(&mut dx, q, (i, j + 1), -1.0 / hx);
            add(&mut dy, q, (i + 1, j + 1), 1.0 / hy);
            add(&mut dy, q, (i + 1, j), -1.0 / hy);
            q += 1;
        }
    }
    GradientOperator {
        weights: DVector::from_element(2 * cells, 0.5 * hx * hy),
        components: vec![dx, dy],
    }
}

/// Second difference on a 1D clamped beam, mapped to all `n + 2` nodes.
///
/// Interior rows are the usual three-point Laplacian with zero Dirichlet data;
/// the boundary rows use the reflected ghost value of a zero normal derivative,
/// `(Δu)_0 = 2u_1/h²`. The returned weights are the trapezoidal ones.
#[derive(Clone, Debug)]
pub struct ClampedLaplacian {
    pub matrix: DMatrix<f64>,
    pub weights: DVector<f64>,
}

impl ClampedLaplacian {
    pub fn new(grid: &GridSpec) -> Result<Self> {
        if grid.dimension() != 1 {
            return Err(Error::invalid(
                "the clamped biharmonic operator is one-dimensional",
            ));
        }
        if grid.nodes(0) < 7 {
            return Err(Error::invalid(
                "the biharmonic stencil needs at least 7 grid nodes",
            ));
        }
        let n = grid.interior_count();
        let h = grid.spacing(0);
        let h2 = h * h;
        let mut l = DMatrix::zeros(n + 2, n);
        l[(0, 0)] = 2.0 / h2;
        l[(n + 1, n - 1)] = 2.0 / h2;
        for i in 1..=n {
            let k = i - 1;
            l[(i, k)] = -2.0 / h2;
            if k > 0 {
                l[(i, k - 1)] = 1.0 / h2;
            }
            if k + 1 < n {
                l[(i, k + 1)] = 1.0 / h2;
            }
        }
        let mut w = DVector::from_element(n + 2, h);
        w[0] = 0.5 * h;
        w[n + 1] = 0.5 * h;
        Ok(Self {
            matrix: l,
            weights: w,
        })
    }

    pub fn apply(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.matrix * u
    }

    /// `Lᵀ W L`, the Gram matrix of `u -> (sum w |Lu|²)^{1/2}`.
    pub fn gram(&self) -> DMatrix<f64> {
        let wl = DMatrix::from_fn(self.matrix.nrows(), self.matrix.ncols(), |i, j| {
            self.weights[i] * self.matrix[(i, j)]
        });
        self.matrix.tr_mul(&wl)
    }
}
