//! Initial conditions for the flows: exact balanced factorizations of a given
//! product, random orthogonal-balanced tuples, Gaussian tuples, the
//! pathological autoencoder start, and the dimension grid used by the
//! experiment sweeps.
//!
//! Every constructor is a deterministic function of its parameters and a
//! 64-bit seed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::sorted_svd;
use crate::model::{DataSet, NetworkShape, WeightTuple};
use crate::{Error, Mat, Result};

/// Standard deviation rule for Gaussian layer initialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StdRule {
    /// `σ_j = 1/√d_{j-1}` (fan-in). Default.
    InverseSqrtInput,
    /// `σ_j = 1/√d_j` (fan-out).
    InverseSqrtOutput,
    /// Fixed `σ` for every layer.
    Constant(f64),
}

impl Default for StdRule {
    fn default() -> Self {
        StdRule::InverseSqrtInput
    }
}

impl StdRule {
    fn sigma(&self, rows: usize, cols: usize) -> f64 {
        match self {
            StdRule::InverseSqrtInput => 1.0 / (cols as f64).sqrt(),
            StdRule::InverseSqrtOutput => 1.0 / (rows as f64).sqrt(),
            StdRule::Constant(s) => *s,
        }
    }
}

/// Declarative, seed-deterministic description of an initial condition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InitSpec {
    #[serde(flatten)]
    pub kind: InitKind,
    pub seed: u64,
}

/// The supported initialization families.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum InitKind {
    /// Exact balanced factorization of a target product matrix
    /// (rows given row-major).
    BalancedFromProduct { target: Vec<Vec<f64>> },
    /// Random balanced tuple with partial-isometry layers.
    OrthogonalBalanced,
    /// Independent Gaussian entries per layer.
    Gaussian {
        #[serde(default)]
        std_rule: StdRule,
    },
    /// `W₁ = V_rᵀ, W₂ = −V_r` from the top-`r` eigenvectors of `X Xᵀ`;
    /// balanced, but starting on the wrong side of every eigendirection.
    PathologicalAutoencoder,
}

impl InitSpec {
    /// Materializes the initial tuple for `shape`. The data set is consulted
    /// only by the pathological autoencoder start.
    pub fn realize(&self, shape: &NetworkShape, data: &DataSet) -> Result<WeightTuple> {
        match &self.kind {
            InitKind::BalancedFromProduct { target } => {
                let rows = target.len();
                if rows == 0 || target.iter().any(|r| r.len() != target[0].len()) {
                    return Err(Error::Parameter("target matrix must be rectangular".into()));
                }
                let cols = target[0].len();
                let flat: Vec<f64> = target.iter().flatten().copied().collect();
                let w0 = Mat::from_row_slice(rows, cols, &flat);
                balanced_from_product(&w0, shape)
            }
            InitKind::OrthogonalBalanced => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                orthogonal_balanced(shape, &mut rng)
            }
            InitKind::Gaussian { std_rule } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                Ok(gaussian(shape, *std_rule, &mut rng))
            }
            InitKind::PathologicalAutoencoder => {
                if shape.depth() != 2 {
                    return Err(Error::Parameter(
                        "the pathological autoencoder start is a two-layer construction".into(),
                    ));
                }
                pathological_autoencoder(data, shape.dims()[1])
            }
        }
    }
}

/// Integer width grid `d_0 = d_N = d`, `d_1 = r`, and
/// `d_j = round(r + (d − r)(j − 1)/(N − 1))` in between (rounding to the
/// nearest integer, halfway cases away from zero).
pub fn grid_dims(d: usize, r: usize, n: usize) -> Result<NetworkShape> {
    if n < 2 {
        return Err(Error::Parameter("grid needs N ≥ 2".into()));
    }
    if r == 0 || r > d {
        return Err(Error::Parameter(format!("grid needs 1 ≤ r ≤ d, got r = {r}, d = {d}")));
    }
    let mut dims = Vec::with_capacity(n + 1);
    dims.push(d);
    for j in 1..n {
        let value = r as f64 + (d - r) as f64 * (j - 1) as f64 / (n - 1) as f64;
        dims.push(value.round() as usize);
    }
    dims.push(d);
    NetworkShape::new(dims)
}

/// Rectangular diagonal embedding: `rows × cols` matrix with `values` on the
/// leading diagonal.
fn diag_embed(rows: usize, cols: usize, values: &[f64]) -> Mat {
    let mut m = Mat::zeros(rows, cols);
    for (i, &v) in values.iter().enumerate() {
        m[(i, i)] = v;
    }
    m
}

/// Exact balanced factorization of `w0` along `shape`: with the SVD
/// `W₀ = U S Vᵀ` of rank `ℓ`, the layers are
/// `W̃₁ = S(σ^{1/N}) Vᵀ`, interior `W̃_j = S(σ^{1/N})`, `W̃_N = U S(σ^{1/N})`
/// using rectangular diagonal embeddings. The product reproduces `w0` and the
/// tuple is balanced by construction.
pub fn balanced_from_product(w0: &Mat, shape: &NetworkShape) -> Result<WeightTuple> {
    if w0.ncols() != shape.d_in() || w0.nrows() != shape.d_out() {
        return Err(Error::Shape(format!(
            "target is {}×{}, shape maps {} → {}",
            w0.nrows(),
            w0.ncols(),
            shape.d_in(),
            shape.d_out()
        )));
    }
    let svd = sorted_svd(w0);
    let rank = svd.rank();
    if rank > shape.bottleneck() {
        return Err(Error::Infeasible(format!(
            "target has rank {rank} but the narrowest layer width is {}",
            shape.bottleneck()
        )));
    }
    let n = shape.depth();
    let roots: Vec<f64> = svd.sigma.iter().map(|s| s.powf(1.0 / n as f64)).collect();

    let mut layers = Vec::with_capacity(n);
    for j in 1..=n {
        let (rows, cols) = shape.layer_dims(j);
        let layer = if j == 1 {
            diag_embed(rows, rank, &roots) * svd.v.transpose()
        } else if j == n {
            &svd.u * diag_embed(rank, cols, &roots)
        } else {
            diag_embed(rows, cols, &roots)
        };
        layers.push(layer);
    }
    WeightTuple::new(layers, shape.clone())
}

/// Random balanced tuple `W_j = U_j U_{j-1}ᵀ` where `U_j` holds the first
/// `d_1` columns of a Haar-random orthogonal `d_j × d_j` matrix and `U_0` is
/// the first `d_1` columns of the identity. Every layer is a partial isometry
/// and the product has all nonzero singular values equal to one.
pub fn orthogonal_balanced(shape: &NetworkShape, rng: &mut impl Rng) -> Result<WeightTuple> {
    let r = shape.bottleneck();
    let d1 = shape.dims()[1];
    if d1 != r {
        return Err(Error::Parameter(format!(
            "orthogonal-balanced initialization requires d_1 = min width (d_1 = {d1}, min = {r})"
        )));
    }
    let n = shape.depth();
    let mut u_prev = Mat::identity(shape.d_in(), d1);
    let mut layers = Vec::with_capacity(n);
    for j in 1..=n {
        let dj = shape.dims()[j];
        let v = haar_orthogonal(dj, rng);
        let u_j = v.columns(0, d1).into_owned();
        layers.push(&u_j * u_prev.transpose());
        u_prev = u_j;
    }
    WeightTuple::new(layers, shape.clone())
}

/// Independent `N(0, σ_j²)` entries with `σ_j` given by the rule.
pub fn gaussian(shape: &NetworkShape, std_rule: StdRule, rng: &mut impl Rng) -> WeightTuple {
    let n = shape.depth();
    let mut layers = Vec::with_capacity(n);
    for j in 1..=n {
        let (rows, cols) = shape.layer_dims(j);
        let sigma = std_rule.sigma(rows, cols);
        layers.push(Mat::from_fn(rows, cols, |_, _| {
            sigma * rng.sample::<f64, _>(StandardNormal)
        }));
    }
    WeightTuple::new(layers, shape.clone()).expect("dimensions by construction")
}

/// Pathological two-layer autoencoder start `W₁ = V_rᵀ`, `W₂ = −V_r`, where
/// the columns of `V_r` are the top-`r` eigenvectors of `X Xᵀ`. Balanced by
/// construction, but `u_iᵀ W(0) u_i = −1` for every leading eigendirection,
/// so the flow initially heads toward the zero equilibrium.
pub fn pathological_autoencoder(data: &DataSet, r: usize) -> Result<WeightTuple> {
    let d = data.d_in();
    if r == 0 || r > d {
        return Err(Error::Parameter(format!("need 1 ≤ r ≤ d, got r = {r}, d = {d}")));
    }
    let eig = nalgebra::SymmetricEigen::new(data.gram().clone());
    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let mut v_r = Mat::zeros(d, r);
    for (col, &i) in idx.iter().take(r).enumerate() {
        v_r.set_column(col, &eig.eigenvectors.column(i));
    }
    let w1 = v_r.transpose();
    let w2 = -v_r;
    WeightTuple::from_layers(vec![w1, w2])
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// diagonal of `R` sign-corrected.
pub fn haar_orthogonal(d: usize, rng: &mut impl Rng) -> Mat {
    let g = Mat::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let r_diag = qr.r().diagonal();
    let mut q = qr.q();
    for (i, &ri) in r_diag.iter().enumerate() {
        if ri < 0.0 {
            let col = -q.column(i);
            q.set_column(i, &col);
        }
    }
    q
}
