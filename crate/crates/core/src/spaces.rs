//! Finite-dimensional realization of the space scale `U ↪ V, W ↪ H`.
//!
//! All four spaces share one nodal coefficient space; they differ only in the norm
//! they carry. Functionals (elements of the dual spaces) are coefficient arrays
//! against the nodal basis and pair with states through the plain dot product.

use std::ops::Deref;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{check_dim, Error, Result};
use crate::optim::{bisect_monotone, minimize, MinimizeOptions, Objective};

/// Uniform tensor grid on `[0, L_x] (x [0, L_y])` with homogeneous Dirichlet data.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    extent: Vec<f64>,
    nodes: Vec<usize>,
}

impl GridSpec {
    pub fn new(extent: Vec<f64>, nodes: Vec<usize>) -> Result<Self> {
        if extent.is_empty() || extent.len() > 2 || extent.len() != nodes.len() {
            return Err(Error::invalid(
                "grid dimension must be 1 or 2 with one extent and node count per axis",
            ));
        }
        if nodes.iter().any(|&n| n < 3) {
            return Err(Error::invalid("grid needs at least 3 nodes per axis"));
        }
        if extent.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::invalid("grid extent must be positive and finite"));
        }
        Ok(Self { extent, nodes })
    }

    pub fn line(length: f64, nodes: usize) -> Result<Self> {
        Self::new(vec![length], vec![nodes])
    }

    pub fn rectangle(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Self> {
        Self::new(vec![lx, ly], vec![nx, ny])
    }

    pub fn dimension(&self) -> usize {
        self.extent.len()
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.extent[axis]
    }

    pub fn nodes(&self, axis: usize) -> usize {
        self.nodes[axis]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.extent[axis] / (self.nodes[axis] - 1) as f64
    }

    /// Interior nodes along one axis.
    pub fn interior(&self, axis: usize) -> usize {
        self.nodes[axis] - 2
    }

    pub fn interior_count(&self) -> usize {
        (0..self.dimension()).map(|a| self.interior(a)).product()
    }

    /// Volume of one grid cell (`h` in 1D, `h_x h_y` in 2D).
    pub fn cell_volume(&self) -> f64 {
        (0..self.dimension()).map(|a| self.spacing(a)).product()
    }

    pub fn domain_measure(&self) -> f64 {
        self.extent.iter().product()
    }

    /// Linear index of interior node `(i, j)` (zero-based interior indices).
    pub fn index(&self, i: usize, j: usize) -> usize {
        if self.dimension() == 1 {
            i
        } else {
            j * self.interior(0) + i
        }
    }

    /// Physical coordinates of every interior node, in linear-index order.
    pub fn interior_points(&self) -> Vec<[f64; 2]> {
        let hx = self.spacing(0);
        if self.dimension() == 1 {
            (1..=self.interior(0))
                .map(|i| [i as f64 * hx, 0.0])
                .collect()
        } else {
            let hy = self.spacing(1);
            let mut pts = Vec::with_capacity(self.interior_count());
            for j in 1..=self.interior(1) {
                for i in 1..=self.interior(0) {
                    pts.push([i as f64 * hx, j as f64 * hy]);
                }
            }
            pts
        }
    }

    /// Samples `f(x, y)` at the interior nodes.
    pub fn sample<F: Fn(f64, f64) -> f64>(&self, f: F) -> StateVec {
        StateVec::new(DVector::from_iterator(
            self.interior_count(),
            self.interior_points().into_iter().map(|[x, y]| f(x, y)),
        ))
    }
}

macro_rules! coefficient_vector {
    ($name:ident) => {
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name(DVector<f64>);

        impl $name {
            pub fn new(values: DVector<f64>) -> Self {
                Self(values)
            }

            pub fn zeros(n: usize) -> Self {
                Self(DVector::zeros(n))
            }

            pub fn from_slice(values: &[f64]) -> Self {
                Self(DVector::from_column_slice(values))
            }

            pub fn into_inner(self) -> DVector<f64> {
                self.0
            }

            pub fn as_vector(&self) -> &DVector<f64> {
                &self.0
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }

            pub fn scaled(&self, factor: f64) -> Self {
                Self(&self.0 * factor)
            }
        }

        impl Deref for $name {
            type Target = DVector<f64>;
            fn deref(&self) -> &DVector<f64> {
                &self.0
            }
        }

        impl From<DVector<f64>> for $name {
            fn from(v: DVector<f64>) -> Self {
                Self(v)
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(v: Vec<f64>) -> Self {
                Self(DVector::from_vec(v))
            }
        }
    };
}

coefficient_vector!(StateVec);
coefficient_vector!(DualVec);

impl DualVec {
    /// Duality pairing `<xi, x>`.
    pub fn pair(&self, x: &StateVec) -> f64 {
        self.0.dot(&x.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SpaceTag {
    U,
    V,
    W,
    H,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DualTag {
    UStar,
    VStar,
    WStar,
    /// `H` identified with its dual through the Riesz map `G_H`.
    H,
}

/// The two admissible orderings of the space scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum EmbeddingOrder {
    /// `U ↪ V ↪ H` and `U ↪ W ↪ H`.
    #[default]
    Standard,
    /// `U ↪ W ↪ V ↪ H`.
    Chained,
}

/// Symmetric positive-definite matrix with its Cholesky factor.
#[derive(Clone, Debug)]
pub struct SpdOperator {
    matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl SpdOperator {
    pub fn new(matrix: DMatrix<f64>, what: &str) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::invalid(format!("{what} must be square")));
        }
        let scale = matrix.amax().max(f64::MIN_POSITIVE);
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > 1e-12 * scale || matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite { what: what.into() });
        }
        let chol = Cholesky::new(matrix.clone())
            .ok_or_else(|| Error::NotPositiveDefinite { what: what.into() })?;
        Ok(Self { matrix, chol })
    }

    pub fn identity(n: usize) -> Self {
        Self::new(DMatrix::identity(n, n), "identity").expect("identity is SPD")
    }

    pub fn diagonal(d: &DVector<f64>, what: &str) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(d), what)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x
    }

    pub fn solve(&self, xi: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(xi)
    }

    /// `x^T G x`.
    pub fn quad(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.matrix * x))
    }

    /// `xi^T G^{-1} xi`.
    pub fn inverse_quad(&self, xi: &DVector<f64>) -> f64 {
        xi.dot(&self.chol.solve(xi)).max(0.0)
    }

    pub fn cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }

    /// Eigenvalues of the pencil `(other, self)`, ascending: `other x = k self x`.
    pub fn generalized_eigenvalues(&self, other: &DMatrix<f64>) -> DVector<f64> {
        let l = self.chol.l();
        let linv = l
            .clone()
            .solve_lower_triangular(&DMatrix::identity(self.dim(), self.dim()))
            .expect("Cholesky factor is invertible");
        let m = &linv * other * linv.transpose();
        let sym = (&m + m.transpose()) * 0.5;
        let mut ev: Vec<f64> = SymmetricEigen::new(sym)
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        DVector::from_vec(ev)
    }

    /// Rough 2-norm condition number from the Cholesky diagonal.
    pub fn condition_estimate(&self) -> f64 {
        let d = self.chol.l_dirty().diagonal();
        let (lo, hi) = d.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), v| {
            (lo.min(v.abs()), hi.max(v.abs()))
        });
        (hi / lo).powi(2)
    }
}

/// Gradient of a nodal function sampled at quadrature points.
///
/// Each quadrature point `q` carries a weight `w_q` and one row per spatial
/// component: `(grad u)_q = (D_0 u, D_1 u)_q`.
#[derive(Clone, Debug)]
pub struct GradientOperator {
    pub weights: DVector<f64>,
    pub components: Vec<DMatrix<f64>>,
}

impl GradientOperator {
    pub fn points(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].ncols()
    }

    pub fn apply(&self, u: &DVector<f64>) -> Vec<DVector<f64>> {
        self.components.iter().map(|d| d * u).collect()
    }

    /// Euclidean magnitude of the gradient at each quadrature point.
    pub fn magnitudes(g: &[DVector<f64>]) -> DVector<f64> {
        let n = g[0].len();
        DVector::from_fn(n, |q, _| g.iter().map(|c| c[q] * c[q]).sum::<f64>().sqrt())
    }

    /// Adjoint: `sum_c D_c^T (w ⊙ flux_c)`.
    pub fn weighted_adjoint(&self, flux: &[DVector<f64>]) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        for (d, f) in self.components.iter().zip(flux) {
            out += d.tr_mul(&f.component_mul(&self.weights));
        }
        out
    }

    /// `sum_c D_c^T diag(w) D_c`, the stiffness matrix of `∫|∇u|^2`.
    pub fn stiffness(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut k = DMatrix::zeros(n, n);
        for d in &self.components {
            let wd = DMatrix::from_fn(d.nrows(), n, |q, j| self.weights[q] * d[(q, j)]);
            k += d.tr_mul(&wd);
        }
        k
    }

    /// Value of `sum_q w_q (1/p)|g_q|^p`.
    pub fn power_energy(&self, u: &DVector<f64>, p: f64) -> f64 {
        let mags = Self::magnitudes(&self.apply(u));
        mags.iter()
            .zip(self.weights.iter())
            .map(|(m, w)| w * m.powf(p) / p)
            .sum()
    }

    /// Gradient of [`Self::power_energy`]: the discrete `-Δ_p u`.
    pub fn power_gradient(&self, u: &DVector<f64>, p: f64) -> DVector<f64> {
        let g = self.apply(u);
        let mags = Self::magnitudes(&g);
        let factor = mags.map(|m| {
            if m > 0.0 {
                m.powf(p - 2.0)
            } else if p == 2.0 {
                1.0
            } else {
                0.0
            }
        });
        let flux: Vec<_> = g.iter().map(|c| c.component_mul(&factor)).collect();
        self.weighted_adjoint(&flux)
    }

    /// Hessian of [`Self::power_energy`]; valid for `p >= 2`.
    pub fn power_hessian(&self, u: &DVector<f64>, p: f64) -> DMatrix<f64> {
        let n = self.dim();
        let g = self.apply(u);
        let mags = Self::magnitudes(&g);
        let nc = self.components.len();
        let mut hess = DMatrix::zeros(n, n);
        for q in 0..self.points() {
            let m = mags[q];
            let iso = if m > 0.0 {
                m.powf(p - 2.0)
            } else if p == 2.0 {
                1.0
            } else {
                0.0
            };
            let aniso = if m > 0.0 && p != 2.0 {
                (p - 2.0) * m.powf(p - 4.0)
            } else {
                0.0
            };
            let w = self.weights[q];
            // local nc x nc block: iso I + aniso g g^T
            for a in 0..nc {
                let ra = self.components[a].row(q);
                for b in 0..nc {
                    let mut coef = aniso * g[a][q] * g[b][q];
                    if a == b {
                        coef += iso;
                    }
                    if coef == 0.0 {
                        continue;
                    }
                    let rb = self.components[b].row(q);
                    hess += (ra.transpose() * rb) * (w * coef);
                }
            }
        }
        hess
    }
}

/// How a power norm measures a vector before integration.
#[derive(Clone, Debug)]
pub enum PowerOperator {
    /// `(sum_i w_i |x_i|^r)^(1/r)`.
    Identity { weights: DVector<f64> },
    /// `(sum_q w_q |(grad x)_q|^r)^(1/r)`.
    Gradient(Arc<GradientOperator>),
}

/// Quadrature-backed `L^r` or `W^{1,r}` type norm.
#[derive(Clone, Debug)]
pub struct PowerNorm {
    pub operator: PowerOperator,
    pub exponent: f64,
}

impl PowerNorm {
    pub fn lebesgue(weights: DVector<f64>, exponent: f64) -> Result<Self> {
        if !(exponent > 1.0) {
            return Err(Error::invalid("power-norm exponent must exceed 1"));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::invalid("quadrature weights must be positive"));
        }
        Ok(Self {
            operator: PowerOperator::Identity { weights },
            exponent,
        })
    }

    pub fn sobolev(gradient: Arc<GradientOperator>, exponent: f64) -> Result<Self> {
        if !(exponent > 1.0) {
            return Err(Error::invalid("power-norm exponent must exceed 1"));
        }
        Ok(Self {
            operator: PowerOperator::Gradient(gradient),
            exponent,
        })
    }

    pub fn dim(&self) -> usize {
        match &self.operator {
            PowerOperator::Identity { weights } => weights.len(),
            PowerOperator::Gradient(g) => g.dim(),
        }
    }

    pub fn conjugate_exponent(&self) -> f64 {
        self.exponent / (self.exponent - 1.0)
    }

    pub fn norm(&self, x: &DVector<f64>) -> f64 {
        let r = self.exponent;
        match &self.operator {
            PowerOperator::Identity { weights } => scaled_power_sum(x, weights, r, 1.0),
            PowerOperator::Gradient(g) => {
                let mags = GradientOperator::magnitudes(&g.apply(x));
                scaled_power_sum(&mags, &g.weights, r, 1.0)
            }
        }
    }

    /// Dual norm with respect to the coefficient pairing.
    pub fn dual_norm(&self, xi: &DVector<f64>) -> Result<f64> {
        match &self.operator {
            PowerOperator::Identity { weights } => {
                let rp = self.conjugate_exponent();
                Ok(scaled_power_sum(xi, weights, rp, 1.0 - rp))
            }
            PowerOperator::Gradient(g) => gradient_dual_norm(g, self.exponent, xi),
        }
    }
}

/// `(sum_i w_i^e |x_i|^r)^(1/r)` evaluated with max-scaling to avoid overflow.
fn scaled_power_sum(x: &DVector<f64>, w: &DVector<f64>, r: f64, e: f64) -> f64 {
    let m = x.amax();
    if m == 0.0 {
        return 0.0;
    }
    let s: f64 = x
        .iter()
        .zip(w.iter())
        .map(|(v, wi)| wi.powf(e) * (v.abs() / m).powf(r))
        .sum();
    m * s.powf(1.0 / r)
}

/// `||xi||_* = (p' F*(xi))^(1/p')` with `F = (1/p)||.||^p`.
fn gradient_dual_norm(g: &GradientOperator, p: f64, xi: &DVector<f64>) -> Result<f64> {
    let scale = xi.amax();
    if scale == 0.0 {
        return Ok(0.0);
    }
    let target = xi / scale;
    struct Conj<'a> {
        g: &'a GradientOperator,
        p: f64,
        xi: &'a DVector<f64>,
    }
    impl Objective for Conj<'_> {
        fn dim(&self) -> usize {
            self.xi.len()
        }
        fn value(&self, x: &DVector<f64>) -> f64 {
            self.g.power_energy(x, self.p) - self.xi.dot(x)
        }
        fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
            self.g.power_gradient(x, self.p) - self.xi
        }
        fn hessian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
            (self.p >= 2.0).then(|| self.g.power_hessian(x, self.p))
        }
    }
    let obj = Conj { g, p, xi: &target };
    let stiff = g.stiffness();
    let start = Cholesky::new(stiff.clone())
        .map(|c| c.solve(&target))
        .ok_or_else(|| Error::NotPositiveDefinite {
            what: "gradient operator stiffness".into(),
        })?;
    let opts = MinimizeOptions {
        tol: 1e-13,
        max_iters: 500,
        preconditioner: Some(&stiff),
        ..Default::default()
    };
    let m = minimize(&obj, &start, &opts).map_err(|f| Error::IterationLimit {
        what: "W^{1,p} dual norm".into(),
        iterations: f.best.iterations,
        residual: f.best.relative_residual(),
    })?;
    let conj = (-m.value).max(0.0);
    let pp = p / (p - 1.0);
    Ok(scale * (pp * conj).powf(1.0 / pp))
}

/// A norm on the nodal space: either Hilbertian (Gram) or power type.
#[derive(Clone, Debug)]
pub enum Norm {
    Gram(SpdOperator),
    Power(PowerNorm),
}

impl Norm {
    pub fn dim(&self) -> usize {
        match self {
            Norm::Gram(g) => g.dim(),
            Norm::Power(p) => p.dim(),
        }
    }

    pub fn norm(&self, x: &DVector<f64>) -> f64 {
        match self {
            Norm::Gram(g) => g.quad(x).max(0.0).sqrt(),
            Norm::Power(p) => p.norm(x),
        }
    }

    pub fn dual_norm(&self, xi: &DVector<f64>) -> Result<f64> {
        match self {
            Norm::Gram(g) => Ok(g.inverse_quad(xi).sqrt()),
            Norm::Power(p) => p.dual_norm(xi),
        }
    }

    /// Value and gradient of the squared dual norm when available in closed form.
    fn dual_sq_with_grad(&self, xi: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
        match self {
            Norm::Gram(g) => {
                let s = g.solve(xi);
                Some((xi.dot(&s), s * 2.0))
            }
            Norm::Power(PowerNorm {
                operator: PowerOperator::Identity { weights },
                exponent,
            }) => {
                let rp = exponent / (exponent - 1.0);
                let n = scaled_power_sum(xi, weights, rp, 1.0 - rp);
                if n == 0.0 {
                    return Some((0.0, DVector::zeros(xi.len())));
                }
                let grad = DVector::from_fn(xi.len(), |i, _| {
                    let c = weights[i].powf(1.0 - rp);
                    2.0 * n.powf(2.0 - rp) * c * xi[i].abs().powf(rp - 1.0) * xi[i].signum()
                });
                Some((n * n, grad))
            }
            Norm::Power(_) => None,
        }
    }
}

/// The four norms of the space scale plus the measured `V ↪ H` constant.
#[derive(Clone, Debug)]
pub struct NormFamily {
    pub h: SpdOperator,
    pub v: SpdOperator,
    pub w: Norm,
    pub u: Norm,
    pub order: EmbeddingOrder,
    embedding_vh: f64,
}

impl NormFamily {
    pub fn new(
        h: SpdOperator,
        v: SpdOperator,
        w: Norm,
        u: Norm,
        order: EmbeddingOrder,
    ) -> Result<Self> {
        let n = h.dim();
        check_dim(n, v.dim())?;
        check_dim(n, w.dim())?;
        check_dim(n, u.dim())?;
        let ev = v.generalized_eigenvalues(h.matrix());
        let embedding_vh = ev[ev.len() - 1].max(0.0).sqrt();
        Ok(Self {
            h,
            v,
            w,
            u,
            order,
            embedding_vh,
        })
    }

    /// All four spaces Euclidean.
    pub fn euclidean(n: usize) -> Self {
        let id = SpdOperator::identity(n);
        Self::new(
            id.clone(),
            id.clone(),
            Norm::Gram(id.clone()),
            Norm::Gram(id),
            EmbeddingOrder::Standard,
        )
        .expect("euclidean family is consistent")
    }

    pub fn dim(&self) -> usize {
        self.h.dim()
    }

    /// Smallest `C` with `|v|_H <= C ||v||_V`.
    pub fn embedding_vh(&self) -> f64 {
        self.embedding_vh
    }

    pub fn norm(&self, which: SpaceTag, x: &StateVec) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(match which {
            SpaceTag::H => self.h.quad(x).max(0.0).sqrt(),
            SpaceTag::V => self.v.quad(x).max(0.0).sqrt(),
            SpaceTag::W => self.w.norm(x),
            SpaceTag::U => self.u.norm(x),
        })
    }

    pub fn dual_norm(&self, which: DualTag, xi: &DualVec) -> Result<f64> {
        check_dim(self.dim(), xi.len())?;
        let op = match which {
            DualTag::H => &self.h,
            DualTag::VStar => &self.v,
            DualTag::WStar => return self.w.dual_norm(xi),
            DualTag::UStar => return self.u.dual_norm(xi),
        };
        let cond = op.condition_estimate();
        if !cond.is_finite() || cond > 1e15 {
            return Err(Error::SingularSolve {
                what: format!("{which:?} dual norm"),
                condition_estimate: cond,
            });
        }
        Ok(op.inverse_quad(xi).sqrt())
    }

    /// Riesz map `H -> H*`: the functional `(x, .)_H`.
    pub fn riesz_h(&self, x: &StateVec) -> DualVec {
        DualVec::new(self.h.apply(x))
    }

    /// `||xi||_{V* + W*} = inf_{xi = xi1 + xi2} max(||xi1||_{V*}, ||xi2||_{W*})`.
    ///
    /// Solved through the saddle form `max_θ min_η θ||xi-η||²_{V*} + (1-θ)||η||²_{W*}`:
    /// the inner problem is smooth and strictly convex, and the optimal `θ` is the
    /// root of the (monotone) difference of the two squared norms.
    pub fn sum_dual_norm(&self, xi: &DualVec, tol: f64) -> Result<f64> {
        check_dim(self.dim(), xi.len())?;
        if !(tol > 0.0) {
            return Err(Error::invalid("sum_dual_norm tolerance must be positive"));
        }
        let vnorm = self.v.inverse_quad(xi).sqrt();
        if vnorm == 0.0 {
            return Ok(0.0);
        }
        if self.w.dual_sq_with_grad(xi).is_none() {
            return Err(Error::invalid("sum_dual_norm needs a closed-form W* norm"));
        }
        let target: DVector<f64> = xi.as_vector() / vnorm;

        let inner = |theta: f64, warm: &DVector<f64>| -> Result<(DVector<f64>, f64, f64)> {
            let obj = SplitObjective {
                v: &self.v,
                w: &self.w,
                xi: &target,
                theta,
            };
            let opts = MinimizeOptions {
                tol: 1e-12,
                max_iters: 2000,
                ..Default::default()
            };
            let m = minimize(&obj, warm, &opts).map_err(|f| Error::IterationLimit {
                what: "sum-space split".into(),
                iterations: f.best.iterations,
                residual: f.best.relative_residual(),
            })?;
            let a = self.v.inverse_quad(&(&target - &m.x));
            let b = self
                .w
                .dual_sq_with_grad(&m.x)
                .map(|(v, _)| v)
                .unwrap_or(f64::NAN);
            Ok((m.x, a, b))
        };

        let mut warm = &target * 0.5;
        let mut failure = None;
        let theta = bisect_monotone(
            |theta| match inner(theta, &warm) {
                Ok((x, a, b)) => {
                    warm = x;
                    // h'(θ) = a - b is nonincreasing; bisect on its negation.
                    b - a
                }
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            },
            0.0,
            1.0,
            1e-15,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        let (_, a, b) = inner(theta, &warm)?;
        let (sa, sb) = (a.sqrt(), b.sqrt());
        if (sa - sb).abs() > tol * (1.0 + sa.max(sb)) {
            return Err(Error::IterationLimit {
                what: "sum-space dual norm".into(),
                iterations: 200,
                residual: (sa - sb).abs(),
            });
        }
        Ok(vnorm * sa.max(sb))
    }
}

struct SplitObjective<'a> {
    v: &'a SpdOperator,
    w: &'a Norm,
    xi: &'a DVector<f64>,
    theta: f64,
}

impl Objective for SplitObjective<'_> {
    fn dim(&self) -> usize {
        self.xi.len()
    }
    fn value(&self, eta: &DVector<f64>) -> f64 {
        let (b, _) = self.w.dual_sq_with_grad(eta).expect("checked closed form");
        self.theta * self.v.inverse_quad(&(self.xi - eta)) + (1.0 - self.theta) * b
    }
    fn gradient(&self, eta: &DVector<f64>) -> DVector<f64> {
        let (_, gb) = self.w.dual_sq_with_grad(eta).expect("checked closed form");
        self.v.solve(&(self.xi - eta)) * (-2.0 * self.theta) + gb * (1.0 - self.theta)
    }
    fn hessian(&self, _eta: &DVector<f64>) -> Option<DMatrix<f64>> {
        match self.w {
            Norm::Gram(g) => {
                let n = self.xi.len();
                let id = DMatrix::identity(n, n);
                let vinv = self.v.cholesky().solve(&id);
                let winv = g.cholesky().solve(&id);
                Some(vinv * (2.0 * self.theta) + winv * (2.0 * (1.0 - self.theta)))
            }
            Norm::Power(_) => None,
        }
    }
}
