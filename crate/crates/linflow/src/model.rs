//! Network and data types, both loss functionals, their exact gradients, and
//! balancedness / conservation measurements.
//!
//! A depth-`N` linear network is a tuple of layer matrices
//! `W_j ∈ ℝ^{d_j × d_{j-1}}` acting as `x ↦ W_N ⋯ W_1 x`. The layered loss is
//! `L_N(W_1, …, W_N) = ½‖Y − W_N ⋯ W_1 X‖_F²` and the product loss is
//! `L_1(W) = ½‖Y − W X‖_F²`; the two coincide through the product map.

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::{Error, Mat, Result};

/// Singular value threshold factor for numerical rank decisions:
/// `σ` counts as nonzero iff `σ > RANK_TOL · max(σ_max, 1)`.
pub const RANK_TOL: f64 = 1e-9;

/// Relative eigenvalue floor below which `X Xᵀ` is rejected as rank deficient.
pub const GRAM_TOL: f64 = 1e-10;

/// Layer-width chain `d_0, …, d_N` of a depth-`N` network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    dims: Vec<usize>,
}

impl NetworkShape {
    /// Builds a shape from the width chain `d_0, …, d_N`, requiring `N ≥ 2`
    /// and every width positive.
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.len() < 3 {
            return Err(Error::Parameter(format!(
                "a network needs at least 2 layers (3 widths), got {} widths",
                dims.len()
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Parameter("all layer widths must be positive".into()));
        }
        Ok(Self { dims })
    }

    /// The full width chain `d_0, …, d_N`.
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Number of layers `N`.
    pub fn depth(&self) -> usize {
        self.dims.len() - 1
    }

    /// Input width `d_0`.
    pub fn d_in(&self) -> usize {
        self.dims[0]
    }

    /// Output width `d_N`.
    pub fn d_out(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// Bottleneck `r = min(d_0, …, d_N)`: the maximal achievable product rank.
    pub fn bottleneck(&self) -> usize {
        *self.dims.iter().min().unwrap()
    }

    /// Dimensions `(d_j, d_{j-1})` of layer `j ∈ {1, …, N}`.
    pub fn layer_dims(&self, j: usize) -> (usize, usize) {
        (self.dims[j], self.dims[j - 1])
    }
}

/// The layer matrices `(W_1, …, W_N)` together with their dimension chain.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTuple {
    layers: Vec<Mat>,
    shape: NetworkShape,
}

impl WeightTuple {
    /// Wraps layer matrices, validating them against `shape`.
    pub fn new(layers: Vec<Mat>, shape: NetworkShape) -> Result<Self> {
        if layers.len() != shape.depth() {
            return Err(Error::Shape(format!(
                "expected {} layers, got {}",
                shape.depth(),
                layers.len()
            )));
        }
        for (j, layer) in layers.iter().enumerate() {
            let (rows, cols) = shape.layer_dims(j + 1);
            if layer.nrows() != rows || layer.ncols() != cols {
                return Err(Error::Shape(format!(
                    "layer {} is {}×{}, shape requires {}×{}",
                    j + 1,
                    layer.nrows(),
                    layer.ncols(),
                    rows,
                    cols
                )));
            }
        }
        Ok(Self { layers, shape })
    }

    /// Infers the shape from the matrices themselves.
    pub fn from_layers(layers: Vec<Mat>) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::Parameter("need at least 2 layers".into()));
        }
        let mut dims = vec![layers[0].ncols()];
        for layer in &layers {
            dims.push(layer.nrows());
        }
        for w in layers.windows(2) {
            if w[1].ncols() != w[0].nrows() {
                return Err(Error::Shape(format!(
                    "chain break: {}×{} cannot follow {}×{}",
                    w[1].nrows(),
                    w[1].ncols(),
                    w[0].nrows(),
                    w[0].ncols()
                )));
            }
        }
        let shape = NetworkShape::new(dims)?;
        Ok(Self { layers, shape })
    }

    pub fn layers(&self) -> &[Mat] {
        &self.layers
    }

    /// Layer `W_j` for `j ∈ {1, …, N}`.
    pub fn layer(&self, j: usize) -> &Mat {
        &self.layers[j - 1]
    }

    pub fn shape(&self) -> &NetworkShape {
        &self.shape
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn into_layers(self) -> Vec<Mat> {
        self.layers
    }
}

/// Data matrices `X ∈ ℝ^{d_x × m}`, `Y ∈ ℝ^{d_y × m}` with cached Gram
/// decompositions. Construction fails loudly when `X Xᵀ` is rank deficient.
#[derive(Debug, Clone)]
pub struct DataSet {
    x: Mat,
    y: Mat,
    gram: Mat,
    gram_sqrt: Mat,
    gram_inv_sqrt: Mat,
}

impl DataSet {
    /// Builds the data set and caches `X Xᵀ`, its principal square root and
    /// the inverse square root.
    pub fn new(x: Mat, y: Mat) -> Result<Self> {
        if x.ncols() != y.ncols() {
            return Err(Error::Shape(format!(
                "X has {} samples but Y has {}",
                x.ncols(),
                y.ncols()
            )));
        }
        let gram = &x * x.transpose();
        let eig = SymmetricEigen::new(gram.clone());
        let max_eig = eig.eigenvalues.max();
        let min_eig = eig.eigenvalues.min();
        if !(min_eig > GRAM_TOL * max_eig && max_eig > 0.0) {
            return Err(Error::Precondition(format!(
                "X Xᵀ must have full rank: eigenvalue range [{min_eig:e}, {max_eig:e}]"
            )));
        }
        let u = &eig.eigenvectors;
        let sqrt_diag = Mat::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
        let inv_sqrt_diag = Mat::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
        let gram_sqrt = u * sqrt_diag * u.transpose();
        let gram_inv_sqrt = u * inv_sqrt_diag * u.transpose();
        Ok(Self { x, y, gram, gram_sqrt, gram_inv_sqrt })
    }

    /// Autoencoder data set (`Y = X`).
    pub fn autoencoder(x: Mat) -> Result<Self> {
        let y = x.clone();
        Self::new(x, y)
    }

    pub fn x(&self) -> &Mat {
        &self.x
    }

    pub fn y(&self) -> &Mat {
        &self.y
    }

    /// Cached `X Xᵀ`.
    pub fn gram(&self) -> &Mat {
        &self.gram
    }

    /// Cached principal square root `(X Xᵀ)^{1/2}`.
    pub fn gram_sqrt(&self) -> &Mat {
        &self.gram_sqrt
    }

    /// Cached `(X Xᵀ)^{-1/2}`.
    pub fn gram_inv_sqrt(&self) -> &Mat {
        &self.gram_inv_sqrt
    }

    pub fn d_in(&self) -> usize {
        self.x.nrows()
    }

    pub fn d_out(&self) -> usize {
        self.y.nrows()
    }

    pub fn samples(&self) -> usize {
        self.x.ncols()
    }
}

/// End-to-end matrix `W = W_N ⋯ W_1` with its numerical rank estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductState {
    pub w: Mat,
    pub rank_estimate: usize,
}

impl ProductState {
    /// Wraps a matrix, estimating its rank by singular value thresholding.
    pub fn from_matrix(w: Mat) -> Self {
        let rank_estimate = numerical_rank(&w);
        Self { w, rank_estimate }
    }
}

/// Number of singular values above `RANK_TOL · max(σ_max, 1)`.
pub fn numerical_rank(w: &Mat) -> usize {
    let svals = w.clone().svd(false, false).singular_values;
    let sigma_max = svals.max();
    let thr = RANK_TOL * sigma_max.max(1.0);
    svals.iter().filter(|&&s| s > thr).count()
}

fn check_compat(weights: &WeightTuple, data: &DataSet) -> Result<()> {
    if weights.shape().d_in() != data.d_in() || weights.shape().d_out() != data.d_out() {
        return Err(Error::Shape(format!(
            "network maps {} → {}, data is {} → {}",
            weights.shape().d_in(),
            weights.shape().d_out(),
            data.d_in(),
            data.d_out()
        )));
    }
    Ok(())
}

/// Layered loss `½‖Y − W_N ⋯ W_1 X‖_F²`.
pub fn loss_ln(weights: &WeightTuple, data: &DataSet) -> Result<f64> {
    check_compat(weights, data)?;
    let w = product(weights).w;
    let residual = data.y() - w * data.x();
    Ok(0.5 * residual.norm_squared())
}

/// Product loss `½‖Y − W X‖_F²`.
pub fn loss_l1(w: &Mat, data: &DataSet) -> Result<f64> {
    if w.nrows() != data.d_out() || w.ncols() != data.d_in() {
        return Err(Error::Shape(format!(
            "W is {}×{}, data requires {}×{}",
            w.nrows(),
            w.ncols(),
            data.d_out(),
            data.d_in()
        )));
    }
    let residual = data.y() - w * data.x();
    Ok(0.5 * residual.norm_squared())
}

/// Gradient of the product loss: `∇L_1(W) = W X Xᵀ − Y Xᵀ`.
pub fn grad_l1(w: &Mat, data: &DataSet) -> Result<Mat> {
    if w.nrows() != data.d_out() || w.ncols() != data.d_in() {
        return Err(Error::Shape(format!(
            "W is {}×{}, data requires {}×{}",
            w.nrows(),
            w.ncols(),
            data.d_out(),
            data.d_in()
        )));
    }
    Ok(w * data.gram() - data.y() * data.x().transpose())
}

/// Gradient of the layered loss with respect to layer `j`:
/// `∇_{W_j} = W_{j+1}ᵀ ⋯ W_Nᵀ · ∇L_1(W) · W_1ᵀ ⋯ W_{j-1}ᵀ`
/// (empty products are identities).
pub fn grad_ln_layer(j: usize, weights: &WeightTuple, data: &DataSet) -> Result<Mat> {
    let n = weights.depth();
    if j == 0 || j > n {
        return Err(Error::Parameter(format!("layer index {j} out of range 1..={n}")));
    }
    check_compat(weights, data)?;
    let core = grad_l1(&product(weights).w, data)?;

    // left factor (W_N ⋯ W_{j+1})ᵀ applied as successive transposed products
    let mut g = core;
    for l in (j + 1..=n).rev() {
        g = weights.layer(l).tr_mul(&g);
    }
    // right factor (W_{j-1} ⋯ W_1)ᵀ = W_1ᵀ W_2ᵀ ⋯ W_{j-1}ᵀ
    for l in 1..j {
        g = g * weights.layer(l).transpose();
    }
    Ok(g)
}

/// All layer gradients `(∇_{W_1}, …, ∇_{W_N})` sharing one `∇L_1` evaluation.
pub fn grad_ln(weights: &WeightTuple, data: &DataSet) -> Result<Vec<Mat>> {
    check_compat(weights, data)?;
    let n = weights.depth();
    let core = grad_l1(&product(weights).w, data)?;

    // prefix[j] = W_j ⋯ W_1 (prefix[0] = I), suffix[j] = W_N ⋯ W_{j}
    let mut prefix: Vec<Mat> = Vec::with_capacity(n + 1);
    prefix.push(Mat::identity(weights.shape().d_in(), weights.shape().d_in()));
    for l in 1..=n {
        let next = weights.layer(l) * prefix.last().unwrap();
        prefix.push(next);
    }
    let mut suffix: Vec<Mat> = vec![Mat::identity(weights.shape().d_out(), weights.shape().d_out()); n + 2];
    for l in (1..=n).rev() {
        suffix[l] = &suffix[l + 1] * weights.layer(l);
    }

    let mut grads = Vec::with_capacity(n);
    for j in 1..=n {
        let left = suffix[j + 1].tr_mul(&core);
        grads.push(left * prefix[j - 1].transpose());
    }
    Ok(grads)
}

/// End-to-end product `W = W_N ⋯ W_1` with rank estimate.
pub fn product(weights: &WeightTuple) -> ProductState {
    let mut w = weights.layer(1).clone();
    for j in 2..=weights.depth() {
        w = weights.layer(j) * w;
    }
    ProductState::from_matrix(w)
}

/// Per-pair conserved quantities `D_j = W_{j+1}ᵀ W_{j+1} − W_j W_jᵀ`,
/// constant along the layered flow.
pub fn conserved_differences(weights: &WeightTuple) -> Vec<Mat> {
    let n = weights.depth();
    (1..n)
        .map(|j| {
            let wj = weights.layer(j);
            let wj1 = weights.layer(j + 1);
            wj1.tr_mul(wj1) - wj * wj.transpose()
        })
        .collect()
}

/// `max_j ‖W_{j+1}ᵀ W_{j+1} − W_j W_jᵀ‖_F`; zero iff the tuple is balanced.
pub fn balancedness_residual(weights: &WeightTuple) -> f64 {
    conserved_differences(weights)
        .iter()
        .map(Mat::norm)
        .fold(0.0, f64::max)
}
