//! Riemannian machinery on the fixed-rank manifold.
//!
//! For `W` of rank `k` the manifold of rank-`k` matrices has tangent space
//! `T_W = {W A + B W}`, with orthogonal projection
//! `P_W(Z) = Q_U Z + Z Q_V − Q_U Z Q_V` built from the reduced SVD of `W`.
//! The linear operator
//!
//! ```text
//! 𝒜_W(Z) = Σ_{j=1}^{N} (W Wᵀ)^{(N−j)/N} · Z · (Wᵀ W)^{(j−1)/N}
//! ```
//!
//! is self-adjoint with image `T_W` and kernel `T_W^⊥`; restricted to the
//! tangent space it is positive definite, and its inverse defines the metric
//! `g_W(Z₁, Z₂) = ⟨𝒜̄_W^{-1} Z₁, Z₂⟩_F` that turns the balanced product flow
//! into a Riemannian gradient flow. This module evaluates `g` three
//! independent ways — an improper-integral quadrature, a linear solve in
//! tangent coordinates, and the `N = 2` closed form — so each can serve as an
//! oracle for the others.

use std::f64::consts::PI;

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::model::{self, DataSet, RANK_TOL};
use crate::{Error, Mat, Result, Vector};

/// Reduced singular value decomposition `W = U Σ Vᵀ`, truncated at the
/// numerical rank, singular values descending.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    /// `d_y × k`, orthonormal columns.
    pub u: Mat,
    /// Positive singular values, descending, length `k`.
    pub sigma: Vector,
    /// `d_x × k`, orthonormal columns.
    pub v: Mat,
}

impl SvdFactors {
    /// Numerical rank `k`.
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// `U Σ Vᵀ`.
    pub fn reconstruct(&self) -> Mat {
        &self.u * Mat::from_diagonal(&self.sigma) * self.v.transpose()
    }
}

/// Full thin SVD by one-sided Jacobi (Hestenes) iteration, singular values
/// descending (including zero ones). The stock Golub–Kahan SVD loses up to
/// ~1e-4 of factor consistency on matrices with clustered singular values
/// next to exact zeros — the product flow and the landscape fixtures produce
/// exactly those — while Jacobi rotations keep `U Σ Vᵀ = W` to machine
/// precision.
pub fn thin_svd(w: &Mat) -> (Mat, Vector, Mat) {
    if w.nrows() < w.ncols() {
        let (u, s, v) = thin_svd(&w.transpose());
        return (v, s, u);
    }
    let n = w.ncols();
    let mut a = w.clone();
    let mut v = Mat::identity(n, n);

    let tol = 1e-15;
    for _sweep in 0..60 {
        let mut rotated = false;
        for i in 0..n {
            for j in (i + 1)..n {
                let ai = a.column(i);
                let aj = a.column(j);
                let g = ai.dot(&aj);
                let ni = ai.norm_squared();
                let nj = aj.norm_squared();
                if g.abs() <= tol * (ni * nj).sqrt() || ni == 0.0 || nj == 0.0 {
                    continue;
                }
                rotated = true;
                let tau = (nj - ni) / (2.0 * g);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for row in 0..a.nrows() {
                    let x = a[(row, i)];
                    let y = a[(row, j)];
                    a[(row, i)] = c * x - s * y;
                    a[(row, j)] = s * x + c * y;
                }
                for row in 0..n {
                    let x = v[(row, i)];
                    let y = v[(row, j)];
                    v[(row, i)] = c * x - s * y;
                    v[(row, j)] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n).map(|i| a.column(i).norm()).collect();
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).unwrap());

    let mut u = Mat::zeros(w.nrows(), n);
    let mut v_sorted = Mat::zeros(n, n);
    let mut sigma = Vector::zeros(n);
    for (col, &i) in order.iter().enumerate() {
        sigma[col] = norms[i];
        if norms[i] > 0.0 {
            u.set_column(col, &(a.column(i) / norms[i]));
        }
        v_sorted.set_column(col, &v.column(i));
    }
    (u, sigma, v_sorted)
}

/// Thin SVD with deterministic conventions: singular values sorted
/// descending, truncated at `RANK_TOL · max(σ_max, 1)`, and each pair
/// `(u_i, v_i)` sign-fixed so that the first significant entry of `v_i`
/// is positive.
pub fn sorted_svd(w: &Mat) -> SvdFactors {
    let (u, s, v) = thin_svd(w);

    let sigma_max = if s.is_empty() { 0.0 } else { s[0] };
    let thr = RANK_TOL * sigma_max.max(1.0);
    let kept: Vec<usize> = (0..s.len()).filter(|&i| s[i] > thr).collect();
    let k = kept.len();

    let mut u_k = Mat::zeros(w.nrows(), k);
    let mut v_k = Mat::zeros(w.ncols(), k);
    let mut sigma = Vector::zeros(k);
    for (col, &i) in kept.iter().enumerate() {
        let ui = u.column(i);
        let vi = v.column(i);
        let scale = vi.amax();
        let lead = vi.iter().find(|x| x.abs() > 1e-12 * scale.max(1.0));
        let flip = matches!(lead, Some(x) if *x < 0.0);
        let sgn = if flip { -1.0 } else { 1.0 };
        u_k.set_column(col, &(ui * sgn));
        v_k.set_column(col, &(vi * sgn));
        sigma[col] = s[i];
    }
    SvdFactors { u: u_k, sigma, v: v_k }
}

/// Orthonormal basis of the orthogonal complement of `range(basis)`, where
/// `basis` has orthonormal columns. Returns a `d × (d−k)` matrix.
pub fn orthonormal_complement(basis: &Mat) -> Mat {
    let d = basis.nrows();
    let k = basis.ncols();
    if k == 0 {
        return Mat::identity(d, d);
    }
    let projector = Mat::identity(d, d) - basis * basis.transpose();
    let eig = SymmetricEigen::new(projector);
    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let mut out = Mat::zeros(d, d - k);
    for (col, &i) in idx.iter().take(d - k).enumerate() {
        out.set_column(col, &eig.eigenvectors.column(i));
    }
    out
}

/// Principal `p`-th root of a symmetric positive semidefinite matrix via
/// eigendecomposition; rounding-level negative eigenvalues are clamped to 0.
pub fn principal_root(a: &Mat, p: u32) -> Result<Mat> {
    if p == 0 {
        return Err(Error::Parameter("root order p must be ≥ 1".into()));
    }
    if a.nrows() != a.ncols() {
        return Err(Error::Precondition("principal root needs a square matrix".into()));
    }
    let scale = a.norm().max(1.0);
    if (a - a.transpose()).norm() > 1e-10 * scale {
        return Err(Error::Precondition("principal root needs a symmetric matrix".into()));
    }
    let eig = SymmetricEigen::new(a.clone());
    let powered = eig.eigenvalues.map(|l| l.max(0.0).powf(1.0 / p as f64));
    Ok(&eig.eigenvectors * Mat::from_diagonal(&powered) * eig.eigenvectors.transpose())
}

/// Precomputed fractional powers of `W Wᵀ` and `Wᵀ W` for repeated
/// applications of `𝒜_W` at a fixed base point.
pub(crate) struct AwOperator {
    /// `(W Wᵀ)^{e/N}` for `e = 0 … N−1`; entry 0 is `None` (identity).
    left: Vec<Option<Mat>>,
    /// `(Wᵀ W)^{e/N}` for `e = 0 … N−1`.
    right: Vec<Option<Mat>>,
}

impl AwOperator {
    pub(crate) fn new(svd: &SvdFactors, n: u32) -> Self {
        let n = n as usize;
        let mut left = vec![None; n];
        let mut right = vec![None; n];
        for e in 1..n {
            let alpha = e as f64 / n as f64;
            let pow = svd.sigma.map(|s| (s * s).powf(alpha));
            left[e] = Some(&svd.u * Mat::from_diagonal(&pow) * svd.u.transpose());
            right[e] = Some(&svd.v * Mat::from_diagonal(&pow) * svd.v.transpose());
        }
        Self { left, right }
    }

    pub(crate) fn apply(&self, z: &Mat) -> Mat {
        let n = self.left.len();
        let mut acc = Mat::zeros(z.nrows(), z.ncols());
        for j in 1..=n {
            let mut term = match &self.left[n - j] {
                Some(l) => l * z,
                None => z.clone(),
            };
            if let Some(r) = &self.right[j - 1] {
                term *= r;
            }
            acc += term;
        }
        acc
    }
}

/// Applies `𝒜_W(Z) = Σ_j (W Wᵀ)^{(N−j)/N} Z (Wᵀ W)^{(j−1)/N}`.
pub fn apply_a_w(w: &Mat, z: &Mat, n: u32) -> Result<Mat> {
    if n < 2 {
        return Err(Error::Parameter("layer count N must be ≥ 2".into()));
    }
    if w.shape() != z.shape() {
        return Err(Error::Shape(format!(
            "W is {}×{} but Z is {}×{}",
            w.nrows(),
            w.ncols(),
            z.nrows(),
            z.ncols()
        )));
    }
    let svd = sorted_svd(w);
    Ok(AwOperator::new(&svd, n).apply(z))
}

/// Orthogonal projection onto the tangent space at `W`:
/// `P_W(Z) = Q_U Z + Z Q_V − Q_U Z Q_V`.
pub fn tangent_project(w: &Mat, z: &Mat) -> Result<Mat> {
    if w.shape() != z.shape() {
        return Err(Error::Shape("tangent projection needs matching shapes".into()));
    }
    let svd = sorted_svd(w);
    if svd.rank() == 0 {
        return Err(Error::DegenerateRank(
            "W has numerical rank 0; the tangent space is {0}".into(),
        ));
    }
    let ut_z = svd.u.tr_mul(z); // Ūᵀ Z
    let z_v = z * &svd.v; // Z V̄
    let p = &svd.u * &ut_z + &z_v * svd.v.transpose() - &svd.u * (ut_z * &svd.v) * svd.v.transpose();
    Ok(p)
}

/// Rotated coordinates `Z' = [Ū|Ū⊥]ᵀ Z [V̄|V̄⊥]` at a base point, plus the
/// index set of tangent modes (`a < k` or `b < k`).
struct RotatedFrame {
    u_full: Mat,
    v_full: Mat,
    k: usize,
}

impl RotatedFrame {
    fn new(svd: &SvdFactors) -> Self {
        let u_perp = orthonormal_complement(&svd.u);
        let v_perp = orthonormal_complement(&svd.v);
        let mut u_full = Mat::zeros(svd.u.nrows(), svd.u.nrows());
        u_full.view_mut((0, 0), (svd.u.nrows(), svd.rank())).copy_from(&svd.u);
        u_full
            .view_mut((0, svd.rank()), (svd.u.nrows(), u_perp.ncols()))
            .copy_from(&u_perp);
        let mut v_full = Mat::zeros(svd.v.nrows(), svd.v.nrows());
        v_full.view_mut((0, 0), (svd.v.nrows(), svd.rank())).copy_from(&svd.v);
        v_full
            .view_mut((0, svd.rank()), (svd.v.nrows(), v_perp.ncols()))
            .copy_from(&v_perp);
        Self { u_full, v_full, k: svd.rank() }
    }

    fn rotate(&self, z: &Mat) -> Mat {
        self.u_full.tr_mul(z) * &self.v_full
    }

    fn rotate_back(&self, zp: &Mat) -> Mat {
        &self.u_full * zp * self.v_full.transpose()
    }

    /// Tangent mode indices, row-major over the rotated matrix.
    fn tangent_modes(&self) -> Vec<(usize, usize)> {
        let (dy, dx) = (self.u_full.nrows(), self.v_full.nrows());
        let mut s = Vec::with_capacity(self.k * (dx + dy - self.k));
        for a in 0..dy {
            for b in 0..dx {
                if a < self.k || b < self.k {
                    s.push((a, b));
                }
            }
        }
        s
    }

    /// Relative mass of `Z` outside the tangent space (the `a ≥ k, b ≥ k` block).
    fn normal_mass(&self, zp: &Mat) -> f64 {
        let (dy, dx) = (self.u_full.nrows(), self.v_full.nrows());
        if self.k >= dy.min(dx) {
            return 0.0;
        }
        let block = zp.view((self.k, self.k), (dy - self.k, dx - self.k));
        block.norm() / zp.norm().max(1e-300)
    }
}

fn require_tangent(frame: &RotatedFrame, zp: &Mat, label: &str) -> Result<()> {
    let mass = frame.normal_mass(zp);
    if mass > 1e-8 {
        return Err(Error::Precondition(format!(
            "{label} has relative non-tangent component {mass:e} > 1e-8; project first"
        )));
    }
    Ok(())
}

/// Solves `𝒜_W(X) = Z` restricted to the tangent space at `W`, by assembling
/// the operator in an explicit orthonormal tangent-coordinate basis of
/// dimension `k(d_x + d_y − k)` and solving the dense linear system.
pub fn inverse_a_w_solve(w: &Mat, z: &Mat, n: u32) -> Result<Mat> {
    if n < 2 {
        return Err(Error::Parameter("layer count N must be ≥ 2".into()));
    }
    if w.shape() != z.shape() {
        return Err(Error::Shape("inverse solve needs matching shapes".into()));
    }
    let svd = sorted_svd(w);
    if svd.rank() == 0 {
        return Err(Error::DegenerateRank("W has numerical rank 0".into()));
    }
    let frame = RotatedFrame::new(&svd);
    let zp = frame.rotate(z);
    require_tangent(&frame, &zp, "Z")?;

    let modes = frame.tangent_modes();
    let dim = modes.len();
    let op = AwOperator::new(&svd, n);

    // column s: coordinates of 𝒜_W(u_a v_bᵀ) in the same basis
    let mut system = Mat::zeros(dim, dim);
    for (col, &(a, b)) in modes.iter().enumerate() {
        let basis_vec = frame.u_full.column(a) * frame.v_full.column(b).transpose();
        let image = frame.rotate(&op.apply(&basis_vec));
        for (row, &(c, d)) in modes.iter().enumerate() {
            system[(row, col)] = image[(c, d)];
        }
    }
    let mut rhs = Vector::zeros(dim);
    for (row, &(a, b)) in modes.iter().enumerate() {
        rhs[row] = zp[(a, b)];
    }
    let lu = system.clone().lu();
    let mut sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Precondition("tangent operator matrix is singular".into()))?;
    // two rounds of iterative refinement recover the digits an
    // ill-conditioned core (σ_max/σ_min large) costs the factorization
    for _ in 0..2 {
        let defect = &rhs - &system * &sol;
        if let Some(correction) = lu.solve(&defect) {
            sol += correction;
        }
    }

    let mut xp = Mat::zeros(z.nrows(), z.ncols());
    for (row, &(a, b)) in modes.iter().enumerate() {
        xp[(a, b)] = sol[row];
    }
    let x = frame.rotate_back(&xp);

    let residual = (op.apply(&x) - z).norm() / z.norm().max(1e-300);
    if residual > 1e-8 {
        return Err(Error::Accuracy { requested: 1e-8, achieved: residual });
    }
    Ok(x)
}

/// Quadrature scheme for the improper metric integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuadScheme {
    /// Split `[0, ∞)` at `s` and apply Gauss–Legendre on both pieces after
    /// power substitutions that remove the `t^{1/N}` endpoint behavior.
    GaussLegendreSplit,
    /// Direct Gauss–Laguerre on `[0, ∞)` against the `e^{-t}` weight.
    GaussLaguerre,
}

/// Parameters controlling numerical evaluation of the metric integrals.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub scheme: QuadScheme,
    /// Nodes per piece (per resolution level).
    pub n_nodes: usize,
    /// Floor for the domain split `s = max(split_point, σ_max²)`.
    pub split_point: f64,
    /// Target relative accuracy, verified by comparing two resolutions.
    pub rel_tol: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            scheme: QuadScheme::GaussLegendreSplit,
            n_nodes: 64,
            split_point: 1.0,
            rel_tol: 1e-8,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_nodes < 8 {
            return Err(Error::Parameter("quadrature needs n_nodes ≥ 8".into()));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol <= 1e-2) {
            return Err(Error::Parameter("rel_tol must lie in (0, 1e-2]".into()));
        }
        if !(self.split_point > 0.0) {
            return Err(Error::Parameter("split_point must be positive".into()));
        }
        Ok(())
    }
}

/// Gauss–Legendre nodes/weights on `[0, 1]` (Golub–Welsch on the Jacobi
/// matrix of the Legendre recurrence).
pub fn gauss_legendre_01(n: usize) -> Vec<(f64, f64)> {
    let mut jac = Mat::zeros(n, n);
    for i in 1..n {
        let b = i as f64 / ((4 * i * i - 1) as f64).sqrt();
        jac[(i - 1, i)] = b;
        jac[(i, i - 1)] = b;
    }
    let eig = SymmetricEigen::new(jac);
    let mut rule: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let x = eig.eigenvalues[i];
            let w = 2.0 * eig.eigenvectors[(0, i)].powi(2);
            ((x + 1.0) / 2.0, w / 2.0)
        })
        .collect();
    rule.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    rule
}

/// Gauss–Laguerre nodes/weights for `∫_0^∞ f(t) e^{-t} dt`.
pub fn gauss_laguerre(n: usize) -> Vec<(f64, f64)> {
    let mut jac = Mat::zeros(n, n);
    for i in 0..n {
        jac[(i, i)] = (2 * i + 1) as f64;
        if i > 0 {
            jac[(i - 1, i)] = i as f64;
            jac[(i, i - 1)] = i as f64;
        }
    }
    let eig = SymmetricEigen::new(jac);
    let mut rule: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    rule.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    rule
}

/// One scalar mode integral
/// `J_N(λ, μ) = sin(π/N)/π · ∫_0^∞ t^{1/N} / ((t+λ)(t+μ)) dt`, `λ, μ ≥ 0`
/// not both zero, at a given node count.
fn mode_integral(lambda: f64, mu: f64, n: u32, cfg: &QuadratureConfig, split: f64, nodes: &[(f64, f64)]) -> f64 {
    let nf = n as f64;
    let prefactor = (PI / nf).sin() / PI;
    match cfg.scheme {
        QuadScheme::GaussLegendreSplit => {
            // head t = s·u^N and tail t = s·u^{-N}; both integrands are
            // analytic in u on [0, 1]
            let s = split;
            let mut acc = 0.0;
            for &(u, w) in nodes {
                let un = u.powi(n as i32);
                let head = un / ((s * un + lambda) * (s * un + mu));
                let tail = u.powi(n as i32 - 2) / ((s + lambda * un) * (s + mu * un));
                acc += w * (head + tail);
            }
            prefactor * nf * s.powf(1.0 + 1.0 / nf) * acc
        }
        QuadScheme::GaussLaguerre => nodes
            .iter()
            .map(|&(t, w)| {
                prefactor * w * t.exp() * t.powf(1.0 / nf) / ((t + lambda) * (t + mu))
            })
            .sum(),
    }
}

fn mode_nodes(cfg: &QuadratureConfig, n_nodes: usize) -> Vec<(f64, f64)> {
    match cfg.scheme {
        QuadScheme::GaussLegendreSplit => gauss_legendre_01(n_nodes),
        QuadScheme::GaussLaguerre => gauss_laguerre(n_nodes),
    }
}

/// Evaluates the metric
/// `g_W(Z₁, Z₂) = sin(π/N)/π ∫_0^∞ tr((tI + WWᵀ)⁻¹ Z₁ (tI + WᵀW)⁻¹ Z₂ᵀ) t^{1/N} dt`
/// numerically. In the SVD basis of `W` the trace splits into scalar mode
/// integrals `J_N(σ_a², σ_b²)`; modes with one vanishing singular value use
/// their closed form `σ^{2(1/N−1)}` (the integrand is singular there), the
/// rest are integrated with the configured scheme at two resolutions to
/// verify `rel_tol`.
pub fn metric_g_quadrature(w: &Mat, z1: &Mat, z2: &Mat, n: u32, cfg: &QuadratureConfig) -> Result<f64> {
    cfg.validate()?;
    if n < 2 {
        return Err(Error::Parameter("layer count N must be ≥ 2".into()));
    }
    if w.shape() != z1.shape() || w.shape() != z2.shape() {
        return Err(Error::Shape("metric needs matching shapes".into()));
    }
    let svd = sorted_svd(w);
    let k = svd.rank();
    if k == 0 {
        return Err(Error::DegenerateRank("metric undefined at W = 0".into()));
    }
    let frame = RotatedFrame::new(&svd);
    let z1p = frame.rotate(z1);
    let z2p = frame.rotate(z2);
    require_tangent(&frame, &z1p, "Z1")?;
    require_tangent(&frame, &z2p, "Z2")?;

    // weights indexed by (min(a,k), min(b,k)); index k means σ = 0
    let mut table = vec![vec![None; k + 1]; k + 1];
    let nf = n as f64;
    let mut weight = |a: usize, b: usize| -> Result<f64> {
        let (ia, ib) = (a.min(k), b.min(k));
        if let Some(v) = table[ia][ib] {
            return Ok(v);
        }
        let lambda = if ia < k { svd.sigma[ia] * svd.sigma[ia] } else { 0.0 };
        let mu = if ib < k { svd.sigma[ib] * svd.sigma[ib] } else { 0.0 };
        let value = if lambda == 0.0 || mu == 0.0 {
            // singular mode: sin(π/N)/π ∫ t^{1/N−1}/(t+λ) dt = λ^{1/N−1}
            lambda.max(mu).powf(1.0 / nf - 1.0)
        } else {
            // the geometric mean centers the split between the two poles, so
            // widely separated σ's still resolve; node counts double until
            // two consecutive resolutions agree
            let split = cfg.split_point.max((lambda * mu).sqrt());
            let mut nodes = cfg.n_nodes;
            let mut prev = mode_integral(lambda, mu, n, cfg, split, &mode_nodes(cfg, nodes));
            let mut converged = None;
            let mut last_diff = f64::INFINITY;
            for _ in 0..6 {
                let next = mode_integral(lambda, mu, n, cfg, split, &mode_nodes(cfg, 2 * nodes));
                last_diff = (next - prev).abs() / next.abs().max(1e-300);
                if last_diff <= cfg.rel_tol {
                    converged = Some(next);
                    break;
                }
                prev = next;
                nodes *= 2;
            }
            match converged {
                Some(v) => v,
                None => return Err(Error::Accuracy { requested: cfg.rel_tol, achieved: last_diff }),
            }
        };
        table[ia][ib] = Some(value);
        Ok(value)
    };

    let mut g = 0.0;
    for (a, b) in frame.tangent_modes() {
        let coeff = z1p[(a, b)] * z2p[(a, b)];
        if coeff != 0.0 {
            g += coeff * weight(a, b)?;
        }
    }
    Ok(g)
}

/// Metric via the tangent-space linear solve: `g = ⟨𝒜̄_W^{-1}(Z₁), Z₂⟩_F`.
pub fn metric_g_solver(w: &Mat, z1: &Mat, z2: &Mat, n: u32) -> Result<f64> {
    let x = inverse_a_w_solve(w, z1, n)?;
    Ok(x.dot(z2))
}

/// Closed form for `N = 2`:
/// `g_W(Z₁, Z₂) = ∫_0^∞ tr(e^{-t(WWᵀ)^{1/2}} Z₁ e^{-t(WᵀW)^{1/2}} Z₂ᵀ) dt`,
/// which in the SVD basis weights mode `(a, b)` by `1/(σ_a + σ_b)`.
pub fn metric_g_n2(w: &Mat, z1: &Mat, z2: &Mat) -> Result<f64> {
    if w.shape() != z1.shape() || w.shape() != z2.shape() {
        return Err(Error::Shape("metric needs matching shapes".into()));
    }
    let svd = sorted_svd(w);
    let k = svd.rank();
    if k == 0 {
        return Err(Error::DegenerateRank("metric undefined at W = 0".into()));
    }
    let frame = RotatedFrame::new(&svd);
    let z1p = frame.rotate(z1);
    let z2p = frame.rotate(z2);
    require_tangent(&frame, &z1p, "Z1")?;
    require_tangent(&frame, &z2p, "Z2")?;

    let sig = |i: usize| if i < k { svd.sigma[i] } else { 0.0 };
    let mut g = 0.0;
    for (a, b) in frame.tangent_modes() {
        g += z1p[(a, b)] * z2p[(a, b)] / (sig(a) + sig(b));
    }
    Ok(g)
}

/// Riemannian gradient of the product loss with respect to the metric `g`:
/// `∇^g L_1(W) = 𝒜_W(∇L_1(W))`; the product flow is its negative.
pub fn riemannian_gradient(w: &Mat, data: &DataSet, n: u32) -> Result<Mat> {
    let euclid = model::grad_l1(w, data)?;
    apply_a_w(w, &euclid, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_mat(rng: &mut impl Rng, r: usize, c: usize) -> Mat {
        Mat::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Random matrix of exact rank k.
    fn random_rank(rng: &mut impl Rng, dy: usize, dx: usize, k: usize) -> Mat {
        let a = random_mat(rng, dy, k);
        let b = random_mat(rng, k, dx);
        a * b
    }

    fn random_tangent(rng: &mut impl Rng, w: &Mat) -> Mat {
        let z = random_mat(rng, w.nrows(), w.ncols());
        tangent_project(w, &z).unwrap()
    }

    /// Independent scalar oracle for the mode integral, by the exact
    /// antiderivative-free formulas for the resolvent integral.
    fn mode_exact(lambda: f64, mu: f64, n: u32) -> f64 {
        let p = 1.0 / n as f64;
        if lambda == 0.0 || mu == 0.0 {
            return lambda.max(mu).powf(p - 1.0);
        }
        if (lambda - mu).abs() < 1e-14 * lambda.max(mu) {
            lambda.powf(p - 1.0) / n as f64
        } else {
            (lambda.powf(p) - mu.powf(p)) / (lambda - mu)
        }
    }

    #[test]
    fn sorted_svd_reconstructs_and_orders() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = random_rank(&mut rng, 5, 4, 2);
        let svd = sorted_svd(&w);
        assert_eq!(svd.rank(), 2);
        assert!(svd.sigma[0] >= svd.sigma[1]);
        assert!((svd.reconstruct() - &w).norm() < 1e-12 * w.norm());
        assert!((svd.u.tr_mul(&svd.u) - Mat::identity(2, 2)).norm() < 1e-10);
        assert!((svd.v.tr_mul(&svd.v) - Mat::identity(2, 2)).norm() < 1e-10);
    }

    #[test]
    fn principal_root_trivial_and_reconstruction() {
        assert_relative_eq!(
            principal_root(&Mat::identity(3, 3), 7).unwrap(),
            Mat::identity(3, 3),
            epsilon = 1e-12
        );
        let a = Mat::from_element(1, 1, 8.0);
        assert_relative_eq!(principal_root(&a, 3).unwrap()[(0, 0)], 2.0, epsilon = 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = random_mat(&mut rng, 4, 4);
        let psd = &b * b.transpose();
        let root = principal_root(&psd, 5).unwrap();
        let mut back = Mat::identity(4, 4);
        for _ in 0..5 {
            back = back * &root;
        }
        assert!((&back - &psd).norm() < 1e-8 * psd.norm());

        let mut asym = psd.clone();
        asym[(0, 1)] += 1.0;
        assert!(principal_root(&asym, 2).is_err());
    }

    #[test]
    fn apply_a_w_identity_and_scalar() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = random_mat(&mut rng, 4, 4);
        let out = apply_a_w(&Mat::identity(4, 4), &z, 3).unwrap();
        assert_relative_eq!(out, &z * 3.0, epsilon = 1e-12);

        let w = 0.8_f64;
        let z = 1.3;
        for n in [2u32, 3, 5] {
            let got = apply_a_w(&Mat::from_element(1, 1, w), &Mat::from_element(1, 1, z), n)
                .unwrap()[(0, 0)];
            let expect = n as f64 * w.powf(2.0 * (n as f64 - 1.0) / n as f64) * z;
            assert_relative_eq!(got, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn apply_a_w_is_self_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in [2u32, 3, 5] {
            let w = random_rank(&mut rng, 5, 4, 3);
            let z1 = random_mat(&mut rng, 5, 4);
            let z2 = random_mat(&mut rng, 5, 4);
            let lhs = apply_a_w(&w, &z1, n).unwrap().dot(&z2);
            let rhs = z1.dot(&apply_a_w(&w, &z2, n).unwrap());
            assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn apply_a_w_image_lies_in_tangent_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [2u32, 3, 5] {
            let w = random_rank(&mut rng, 6, 5, 2);
            let z = random_mat(&mut rng, 6, 5);
            let az = apply_a_w(&w, &z, n).unwrap();
            let residual = (&az - tangent_project(&w, &az).unwrap()).norm();
            assert!(residual <= 1e-9 * az.norm());
        }
    }

    #[test]
    fn apply_a_w_kills_normal_component() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for n in [2u32, 3, 5] {
            let w = random_rank(&mut rng, 6, 5, 2);
            let z = random_mat(&mut rng, 6, 5);
            let normal = &z - tangent_project(&w, &z).unwrap();
            let image = apply_a_w(&w, &normal, n).unwrap();
            assert!(image.norm() <= 1e-9 * z.norm());
        }
    }

    #[test]
    fn tangent_project_full_rank_square_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = random_mat(&mut rng, 4, 4) + Mat::identity(4, 4) * 3.0;
        let z = random_mat(&mut rng, 4, 4);
        assert_relative_eq!(tangent_project(&w, &z).unwrap(), z, epsilon = 1e-10);
    }

    #[test]
    fn tangent_project_idempotent_self_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = random_rank(&mut rng, 5, 6, 3);
        let z1 = random_mat(&mut rng, 5, 6);
        let z2 = random_mat(&mut rng, 5, 6);
        let p1 = tangent_project(&w, &z1).unwrap();
        let pp1 = tangent_project(&w, &p1).unwrap();
        assert!((&pp1 - &p1).norm() < 1e-10 * p1.norm());
        let lhs = p1.dot(&z2);
        let rhs = z1.dot(&tangent_project(&w, &z2).unwrap());
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn tangent_project_zero_rank_is_degenerate() {
        let w = Mat::zeros(3, 3);
        let z = Mat::identity(3, 3);
        assert!(matches!(tangent_project(&w, &z), Err(Error::DegenerateRank(_))));
    }

    #[test]
    fn inverse_solve_identity_and_scalar() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = random_mat(&mut rng, 3, 3);
        let x = inverse_a_w_solve(&Mat::identity(3, 3), &z, 4).unwrap();
        assert_relative_eq!(x, &z / 4.0, epsilon = 1e-10);

        let w = 1.7_f64;
        let z = -0.4;
        for n in [2u32, 3, 5] {
            let x = inverse_a_w_solve(&Mat::from_element(1, 1, w), &Mat::from_element(1, 1, z), n)
                .unwrap()[(0, 0)];
            let expect = z / (n as f64 * w.powf(2.0 * (n as f64 - 1.0) / n as f64));
            assert_relative_eq!(x, expect, epsilon = 1e-10);
        }
    }

    #[test]
    fn inverse_solve_round_trips_apply() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for n in [2u32, 3, 5] {
            let w = random_rank(&mut rng, 5, 4, 2);
            let z = random_tangent(&mut rng, &w);
            let x = inverse_a_w_solve(&w, &z, n).unwrap();
            let back = apply_a_w(&w, &x, n).unwrap();
            assert!((&back - &z).norm() <= 1e-8 * z.norm());
            // and the other composition order
            let y = apply_a_w(&w, &z, n).unwrap();
            let back2 = inverse_a_w_solve(&w, &y, n).unwrap();
            assert!((&back2 - &z).norm() <= 1e-8 * z.norm());
        }
    }

    #[test]
    fn inverse_solve_rejects_non_tangent_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = random_rank(&mut rng, 5, 5, 2);
        let z = random_mat(&mut rng, 5, 5);
        assert!(matches!(inverse_a_w_solve(&w, &z, 3), Err(Error::Precondition(_))));
    }

    #[test]
    fn mode_integral_matches_exact_formulas() {
        let cfg = QuadratureConfig::default();
        let nodes = gauss_legendre_01(cfg.n_nodes);
        for n in [2u32, 3, 5] {
            let pairs: [(f64, f64); 5] =
                [(1.0, 1.0), (4.0, 0.25), (9.0, 9.0), (0.01, 5.0), (2.5, 2.4999)];
            for &(lambda, mu) in &pairs {
                let split = 1.0f64.max(lambda.max(mu));
                let got = mode_integral(lambda, mu, n, &cfg, split, &nodes);
                let expect = mode_exact(lambda, mu, n);
                assert!(
                    (got - expect).abs() <= 1e-9 * expect.abs(),
                    "N={n} λ={lambda} μ={mu}: got {got}, expected {expect}"
                );
            }
        }
    }

    #[test]
    fn gauss_laguerre_integrates_polynomials() {
        let rule = gauss_laguerre(16);
        // ∫ t^3 e^{-t} = 6
        let got: f64 = rule.iter().map(|&(t, w)| w * t.powi(3)).sum();
        assert_relative_eq!(got, 6.0, epsilon = 1e-9);
    }

    #[test]
    fn metric_quadrature_identity_base_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let w = Mat::identity(4, 4);
        let z1 = random_mat(&mut rng, 4, 4);
        let z2 = random_mat(&mut rng, 4, 4);
        let cfg = QuadratureConfig::default();
        for n in [2u32, 3, 5] {
            let g = metric_g_quadrature(&w, &z1, &z2, n, &cfg).unwrap();
            assert!((g - z1.dot(&z2) / n as f64).abs() <= cfg.rel_tol * z1.dot(&z2).abs().max(1.0));
        }
    }

    #[test]
    fn metric_triple_agreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cfg = QuadratureConfig::default();
        for n in [2u32, 3, 5] {
            for k in 1..=3usize {
                let w = random_rank(&mut rng, 4, 3, k);
                let z1 = random_tangent(&mut rng, &w);
                let z2 = random_tangent(&mut rng, &w);
                let g_quad = metric_g_quadrature(&w, &z1, &z2, n, &cfg).unwrap();
                let g_solve = metric_g_solver(&w, &z1, &z2, n).unwrap();
                assert!(
                    (g_quad - g_solve).abs() <= 1e-6 * g_solve.abs().max(1e-12),
                    "N={n} k={k}: quadrature {g_quad} vs solver {g_solve}"
                );
                if n == 2 {
                    let g_closed = metric_g_n2(&w, &z1, &z2).unwrap();
                    assert!((g_quad - g_closed).abs() <= 1e-6 * g_closed.abs().max(1e-12));
                }
            }
        }
    }

    #[test]
    fn metric_n2_scalar_symmetry_positivity() {
        let w = Mat::from_element(1, 1, 0.9);
        let z1 = Mat::from_element(1, 1, 1.1);
        let z2 = Mat::from_element(1, 1, -0.7);
        let g = metric_g_n2(&w, &z1, &z2).unwrap();
        assert_relative_eq!(g, 1.1 * (-0.7) / (2.0 * 0.9), epsilon = 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let w = random_rank(&mut rng, 4, 4, 2);
        let z1 = random_tangent(&mut rng, &w);
        let z2 = random_tangent(&mut rng, &w);
        let g12 = metric_g_n2(&w, &z1, &z2).unwrap();
        let g21 = metric_g_n2(&w, &z2, &z1).unwrap();
        assert!((g12 - g21).abs() <= 1e-12 * g12.abs().max(1.0));
        let gz = metric_g_n2(&w, &z1, &z1).unwrap();
        assert!(gz > 0.0);
    }

    #[test]
    fn metric_is_bilinear() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let w = random_rank(&mut rng, 4, 4, 2);
        let z1 = random_tangent(&mut rng, &w);
        let z1 = &z1 / z1.norm();
        let z2 = random_tangent(&mut rng, &w);
        let z2 = &z2 / z2.norm();
        let z3 = random_tangent(&mut rng, &w);
        let z3 = &z3 / z3.norm();
        let (a, b) = (0.6, -1.4);
        let cfg = QuadratureConfig::default();
        let lhs = metric_g_quadrature(&w, &(&z1 * a + &z2 * b), &z3, 3, &cfg).unwrap();
        let rhs = a * metric_g_quadrature(&w, &z1, &z3, 3, &cfg).unwrap()
            + b * metric_g_quadrature(&w, &z2, &z3, 3, &cfg).unwrap();
        assert!((lhs - rhs).abs() <= 1e-10);
    }

    #[test]
    fn riemannian_gradient_defining_identity_and_zeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let x = random_mat(&mut rng, 3, 8);
        let y = random_mat(&mut rng, 3, 8);
        let data = DataSet::new(x, y).unwrap();

        // at W = 0 the operator 𝒜 vanishes
        let g0 = riemannian_gradient(&Mat::zeros(3, 3), &data, 3).unwrap();
        assert_eq!(g0.norm(), 0.0);

        // g_W(∇^g f, Z) = ⟨∇f, Z⟩ for tangent Z
        let w = random_rank(&mut rng, 3, 3, 2);
        let z = random_tangent(&mut rng, &w);
        for n in [2u32, 3] {
            let grad_g = riemannian_gradient(&w, &data, n).unwrap();
            let lhs = metric_g_solver(&w, &grad_g, &z, n).unwrap();
            let rhs = model::grad_l1(&w, &data).unwrap().dot(&z);
            assert!(
                (lhs - rhs).abs() <= 1e-6 * rhs.abs().max(1.0),
                "defining identity failed for N={n}: {lhs} vs {rhs}"
            );
        }
    }
}
