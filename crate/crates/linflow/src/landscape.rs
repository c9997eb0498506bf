//! Closed-form critical-point analysis of the product loss on fixed-rank
//! manifolds.
//!
//! Everything is parameterized by the matrix `Q = Y Xᵀ (X Xᵀ)^{-1/2}` and its
//! SVD `Q = Σ_i σ_i u_i v_iᵀ`: the critical points of `L_1` on the rank-`k`
//! manifold are exactly the matrices `W = Σ_{j∈J} σ_j u_j v_jᵀ (X Xᵀ)^{-1/2}`
//! over `k`-element index sets `J`, with loss `½(tr(Y Yᵀ) − Σ_{j∈J} σ_j²)`.
//! The global minimizers on rank `k` pick the `k` largest singular values;
//! every other critical point is a strict saddle, certified by an explicit
//! descent curve whose second derivative is `2σ_{j0}(σ_{j0} − σ_{j1})`.

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::geometry::{sorted_svd, SvdFactors};
use crate::model::{self, DataSet, NetworkShape, WeightTuple};
use crate::{Error, Mat, Result, Vector};

/// Hard cap on the number of index subsets an enumeration may produce.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

/// Relative tolerance under which two singular values of `Q` count as tied
/// (classification is then flagged ambiguous rather than guessed).
pub const TIE_TOL: f64 = 1e-9;

/// `Q = Y Xᵀ (X Xᵀ)^{-1/2}` with its SVD and rank.
#[derive(Debug, Clone)]
pub struct QDecomposition {
    pub q: Mat,
    pub svd: SvdFactors,
}

impl QDecomposition {
    /// Rank of `Q` at the singular value threshold.
    pub fn rank(&self) -> usize {
        self.svd.rank()
    }

    /// Singular values of `Q`, descending.
    pub fn sigma(&self) -> &Vector {
        &self.svd.sigma
    }

    /// Whether any two retained singular values are relatively tied.
    pub fn has_ties(&self) -> bool {
        let s = &self.svd.sigma;
        s.iter()
            .zip(s.iter().skip(1))
            .any(|(a, b)| (a - b).abs() <= TIE_TOL * a.max(1e-300))
    }
}

/// Classification of a critical point of `L_1` on a rank-`k` manifold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CriticalKind {
    /// `J` picks the `k` largest singular values of `Q`.
    GlobalMinOnMk,
    /// Some picked singular value is beaten by an unpicked one.
    StrictSaddle,
    /// The `k = 0` point. As a critical point of the layered loss it is a
    /// strict saddle only for two layers; for three or more the Hessian has
    /// no negative eigenvalue (it vanishes).
    Zero,
}

/// Descent-curve certificate for a strict saddle: rotating
/// `(u_{j0}, v_{j0})` toward `(u_{j1}, v_{j1})` decreases the loss at second
/// order with `d²/dt² L_1(γ(t))|₀ = 2σ_{j0}(σ_{j0} − σ_{j1}) < 0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaddleCertificate {
    /// Index in `J` (1-based into σ) whose singular value is beaten.
    pub j0: usize,
    /// Index outside `J` with `σ_{j1} > σ_{j0}`.
    pub j1: usize,
    /// Analytic value `2σ_{j0}(σ_{j0} − σ_{j1})`.
    pub second_derivative: f64,
}

/// One critical point: its index set, matrix, loss value and classification.
#[derive(Debug, Clone)]
pub struct CriticalPoint {
    /// Sorted 1-based indices into the singular values of `Q`.
    pub indices: Vec<usize>,
    pub w: Mat,
    pub loss: f64,
    pub kind: CriticalKind,
    pub certificate: Option<SaddleCertificate>,
    /// Set when tied singular values make the classification ambiguous.
    pub ambiguous: bool,
}

impl CriticalPoint {
    pub fn rank(&self) -> usize {
        self.indices.len()
    }
}

/// Computes `Q = Y Xᵀ (X Xᵀ)^{-1/2}` with SVD and rank.
pub fn compute_q(data: &DataSet) -> QDecomposition {
    let q = data.y() * data.x().transpose() * data.gram_inv_sqrt();
    let svd = sorted_svd(&q);
    QDecomposition { q, svd }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Ordered `k`-element subsets of `{0, …, n-1}` (lexicographic).
fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..k).collect();
    if k == 0 {
        return vec![vec![]];
    }
    if k > n {
        return out;
    }
    loop {
        out.push(current.clone());
        // advance
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if current[i] != i + n - k {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        current[i] += 1;
        for j in i + 1..k {
            current[j] = current[j - 1] + 1;
        }
    }
}

fn materialize(qdec: &QDecomposition, data: &DataSet, subset0: &[usize]) -> (Mat, f64) {
    let (dy, dx) = (data.d_out(), data.d_in());
    let mut core = Mat::zeros(dy, dx);
    for &i in subset0 {
        core += qdec.svd.u.column(i) * qdec.svd.v.column(i).transpose() * qdec.svd.sigma[i];
    }
    let w = &core * data.gram_inv_sqrt();
    let trace_yyt = data.y().norm_squared();
    let picked: f64 = subset0.iter().map(|&i| qdec.svd.sigma[i] * qdec.svd.sigma[i]).sum();
    (w, 0.5 * (trace_yyt - picked))
}

/// Classifies an index set and, for saddles, builds the certificate with the
/// deterministic choice: smallest beaten `j0`, then the largest `σ_{j1}`
/// among unpicked indices.
pub fn classify(subset0: &[usize], qdec: &QDecomposition) -> (CriticalKind, Option<SaddleCertificate>) {
    let k = subset0.len();
    if k == 0 {
        return (CriticalKind::Zero, None);
    }
    let is_top_k = subset0.iter().enumerate().all(|(pos, &i)| i == pos);
    if is_top_k {
        return (CriticalKind::GlobalMinOnMk, None);
    }
    let sigma = &qdec.svd.sigma;
    let sigma_k = sigma[k - 1]; // k-th largest
    let j0 = subset0
        .iter()
        .copied()
        .find(|&i| sigma[i] < sigma_k)
        .expect("a non-top-k subset picks some beaten value");
    let j1 = (0..qdec.rank())
        .find(|i| !subset0.contains(i) && sigma[*i] > sigma[j0])
        .expect("some unpicked value beats σ_{j0}");
    let second_derivative = 2.0 * sigma[j0] * (sigma[j0] - sigma[j1]);
    (
        CriticalKind::StrictSaddle,
        Some(SaddleCertificate { j0: j0 + 1, j1: j1 + 1, second_derivative }),
    )
}

/// Enumerates all critical points of `L_1` on the rank-`k` manifold: one per
/// `k`-element subset of `{1, …, rank(Q)}` (empty for `k > rank(Q)`).
pub fn enumerate_critical_points(data: &DataSet, k: usize) -> Result<Vec<CriticalPoint>> {
    if k > data.d_in().min(data.d_out()) {
        return Err(Error::Parameter(format!(
            "rank {k} exceeds min dimension {}",
            data.d_in().min(data.d_out())
        )));
    }
    let qdec = compute_q(data);
    let q = qdec.rank();
    if k > q {
        return Ok(Vec::new());
    }
    let count = binomial(q, k);
    if count > ENUMERATION_LIMIT {
        return Err(Error::SizeGuard { count, limit: ENUMERATION_LIMIT });
    }
    let ambiguous = qdec.has_ties();

    let mut points = Vec::with_capacity(count as usize);
    for subset0 in subsets(q, k) {
        let (w, loss) = materialize(&qdec, data, &subset0);
        let (kind, certificate) = classify(&subset0, &qdec);
        points.push(CriticalPoint {
            indices: subset0.iter().map(|i| i + 1).collect(),
            w,
            loss,
            kind,
            certificate,
            ambiguous,
        });
    }
    Ok(points)
}

/// Measures `d²/dt² L_1(γ(t))` at `t = 0` by central differences along the
/// certificate's descent curve, for comparison against the analytic value.
pub fn saddle_curve_check(
    cp: &CriticalPoint,
    cert: &SaddleCertificate,
    data: &DataSet,
    fd_step: f64,
) -> Result<f64> {
    let qdec = compute_q(data);
    let sigma = &qdec.svd.sigma;
    let (i0, i1) = (cert.j0 - 1, cert.j1 - 1);
    if i0 >= qdec.rank() || i1 >= qdec.rank() {
        return Err(Error::Parameter("certificate indices exceed rank(Q)".into()));
    }
    let subset0: Vec<usize> = cp.indices.iter().map(|&j| j - 1).collect();

    let gamma = |t: f64| -> Mat {
        let c = (1.0 - t * t).sqrt();
        let u0 = qdec.svd.u.column(i1) * t + qdec.svd.u.column(i0) * c;
        let v0 = qdec.svd.v.column(i1) * t + qdec.svd.v.column(i0) * c;
        let mut core = &u0 * v0.transpose() * sigma[i0];
        for &i in subset0.iter().filter(|&&i| i != i0) {
            core += qdec.svd.u.column(i) * qdec.svd.v.column(i).transpose() * sigma[i];
        }
        core * data.gram_inv_sqrt()
    };

    let l = |t: f64| model::loss_l1(&gamma(t), data).unwrap();
    Ok((l(fd_step) - 2.0 * l(0.0) + l(-fd_step)) / (fd_step * fd_step))
}

/// Lifts a critical point of `L_1` on rank `k` to a layer tuple that is
/// critical for the layered loss: `W₁ = Σᵢ eᵢ v_{jᵢ}ᵀ (X Xᵀ)^{-1/2}`,
/// interior layers rectangular identities on the first `k` coordinates, and
/// `W_N = Σᵢ σ_{jᵢ} u_{jᵢ} eᵢᵀ`.
pub fn lift_critical_point(cp: &CriticalPoint, shape: &NetworkShape, data: &DataSet) -> Result<WeightTuple> {
    let k = cp.rank();
    if k > shape.bottleneck() {
        return Err(Error::Infeasible(format!(
            "critical point of rank {k} cannot factor through bottleneck {}",
            shape.bottleneck()
        )));
    }
    if shape.d_in() != data.d_in() || shape.d_out() != data.d_out() {
        return Err(Error::Shape("shape does not match the data dimensions".into()));
    }
    let qdec = compute_q(data);
    let n = shape.depth();
    let subset0: Vec<usize> = cp.indices.iter().map(|&j| j - 1).collect();
    if subset0.iter().any(|&i| i >= qdec.rank()) {
        return Err(Error::Parameter("index set exceeds rank(Q)".into()));
    }

    let mut layers = Vec::with_capacity(n);
    for l in 1..=n {
        let (rows, cols) = shape.layer_dims(l);
        let mut m = Mat::zeros(rows, cols);
        if l == 1 {
            for (i, &j) in subset0.iter().enumerate() {
                m.set_row(i, &qdec.svd.v.column(j).transpose());
            }
            m = m * data.gram_inv_sqrt();
        } else if l == n {
            for (i, &j) in subset0.iter().enumerate() {
                m.set_column(i, &(qdec.svd.u.column(j) * qdec.svd.sigma[j]));
            }
        } else {
            for i in 0..k {
                m[(i, i)] = 1.0;
            }
        }
        layers.push(m);
    }
    WeightTuple::new(layers, shape.clone())
}

/// Optimal rank-`r` projector for the autoencoder problem.
#[derive(Debug, Clone)]
pub struct PcaSolution {
    /// Top-`r` eigenvector basis of `X Xᵀ` (columns).
    pub basis: Mat,
    /// `U_r U_rᵀ`.
    pub projector: Mat,
    /// All eigenvalues of `X Xᵀ`, descending.
    pub eigenvalues: Vector,
    /// Set when `λ_r − λ_{r+1}` is below resolution: the projector is then
    /// not unique.
    pub ambiguous_gap: bool,
}

impl PcaSolution {
    /// `√(Σ_{i>r} λ_i)`: the optimal residual `‖X − U_r U_rᵀ X‖_F`.
    pub fn optimal_residual(&self) -> f64 {
        self.eigenvalues.iter().skip(self.basis.ncols()).sum::<f64>().max(0.0).sqrt()
    }
}

/// Eigendecomposition of `X Xᵀ`: returns the top-`r` basis and projector.
pub fn pca_solution(data: &DataSet, r: usize) -> Result<PcaSolution> {
    let d = data.d_in();
    if r == 0 || r > d {
        return Err(Error::Parameter(format!("need 1 ≤ r ≤ {d}, got {r}")));
    }
    let eig = SymmetricEigen::new(data.gram().clone());
    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let eigenvalues = Vector::from_iterator(d, idx.iter().map(|&i| eig.eigenvalues[i]));
    let mut basis = Mat::zeros(d, r);
    for (c, &i) in idx.iter().take(r).enumerate() {
        basis.set_column(c, &eig.eigenvectors.column(i));
    }
    let projector = &basis * basis.transpose();
    let ambiguous_gap = r < d && (eigenvalues[r - 1] - eigenvalues[r]) <= 1e-10 * eigenvalues[0].max(1.0);
    Ok(PcaSolution { basis, projector, eigenvalues, ambiguous_gap })
}

/// One equilibrium of the two-layer autoencoder flow: `W₂ = U Vᵀ`,
/// `W₁ = V Uᵀ`, `W = U Uᵀ` over a `k`-subset of eigenvectors of `X Xᵀ`.
#[derive(Debug, Clone)]
pub struct AutoencoderEquilibrium {
    /// Chosen eigenvalue indices (0-based, into the descending order).
    pub indices: Vec<usize>,
    /// `d × k` eigenvector block `U`.
    pub u: Mat,
    /// `W = U Uᵀ` (`d × d` zero matrix for `k = 0`).
    pub w: Mat,
    pub w1: Mat,
    pub w2: Mat,
    pub loss: f64,
    /// Only the top-`k = r` choice is a stable equilibrium.
    pub stable: bool,
    /// Set when eigenvalue ties make the subset labeling ambiguous.
    pub ambiguous: bool,
}

/// Enumerates the balanced equilibria of the two-layer autoencoder flow with
/// hidden width `r` at product rank `k ≤ r` (the `k = 0` zero equilibrium
/// included as the empty subset).
pub fn autoencoder_equilibria(data: &DataSet, r: usize, k: usize) -> Result<Vec<AutoencoderEquilibrium>> {
    let d = data.d_in();
    if data.d_out() != d {
        return Err(Error::Shape("autoencoder equilibria need d_y = d_x".into()));
    }
    if k > r || r > d {
        return Err(Error::Parameter(format!("need k ≤ r ≤ d, got k = {k}, r = {r}, d = {d}")));
    }
    let count = binomial(d, k);
    if count > ENUMERATION_LIMIT {
        return Err(Error::SizeGuard { count, limit: ENUMERATION_LIMIT });
    }

    let eig = SymmetricEigen::new(data.gram().clone());
    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let lambdas: Vec<f64> = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let ambiguous = lambdas
        .windows(2)
        .any(|w| (w[0] - w[1]).abs() <= TIE_TOL * w[0].max(1e-300));
    let total: f64 = lambdas.iter().sum();

    let mut out = Vec::with_capacity(count as usize);
    for subset in subsets(d, k) {
        let mut u = Mat::zeros(d, k);
        for (c, &pos) in subset.iter().enumerate() {
            u.set_column(c, &eig.eigenvectors.column(idx[pos]));
        }
        // V = leading k columns of the identity on the hidden layer
        let v = Mat::identity(r, k);
        let w2 = &u * v.transpose();
        let w1 = &v * u.transpose();
        let w = &u * u.transpose();
        let picked: f64 = subset.iter().map(|&pos| lambdas[pos]).sum();
        let stable = k == r && subset.iter().enumerate().all(|(c, &pos)| pos == c);
        out.push(AutoencoderEquilibrium {
            indices: subset,
            u,
            w,
            w1,
            w2,
            loss: 0.5 * (total - picked),
            stable,
            ambiguous,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{riemannian_gradient, tangent_project};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// X = diag(2, 1) (so X Xᵀ = diag(4, 1)), Y = X: σ(Q) = {2, 1},
    /// tr(Y Yᵀ) = 5.
    fn diag_fixture() -> DataSet {
        let x = Mat::from_diagonal(&nalgebra::dvector![2.0, 1.0]);
        DataSet::autoencoder(x).unwrap()
    }

    fn random_data(seed: u64, dy: usize, dx: usize, m: usize) -> DataSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Mat::from_fn(dx, m, |_, _| rng.random_range(-1.0..1.0));
        let y = Mat::from_fn(dy, m, |_, _| rng.random_range(-1.0..1.0));
        DataSet::new(x, y).unwrap()
    }

    #[test]
    fn compute_q_identity_and_autoencoder() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = Mat::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let data = DataSet::new(Mat::identity(3, 3), y.clone()).unwrap();
        let qdec = compute_q(&data);
        assert_relative_eq!(qdec.q, y, epsilon = 1e-12);

        // autoencoder: Q = (X Xᵀ)^{1/2}, singular values √λ_i
        let data = diag_fixture();
        let qdec = compute_q(&data);
        assert_relative_eq!(qdec.q, Mat::from_diagonal(&nalgebra::dvector![2.0, 1.0]), epsilon = 1e-12);
        assert_eq!(qdec.rank(), 2);
    }

    #[test]
    fn compute_q_two_path_agreement() {
        // (X Xᵀ)^{-1/2} via the cached route vs an explicit eigen route
        let data = random_data(2, 3, 4, 9);
        let qdec = compute_q(&data);
        let eig = SymmetricEigen::new(data.gram().clone());
        let inv_sqrt = &eig.eigenvectors
            * Mat::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()))
            * eig.eigenvectors.transpose();
        let q2 = data.y() * data.x().transpose() * inv_sqrt;
        assert!((&qdec.q - &q2).norm() <= 1e-10 * q2.norm());
    }

    #[test]
    fn enumerate_diag_fixture_k1() {
        let data = diag_fixture();
        let points = enumerate_critical_points(&data, 1).unwrap();
        assert_eq!(points.len(), 2);

        let e1 = Mat::from_fn(2, 2, |i, j| if i == 0 && j == 0 { 1.0 } else { 0.0 });
        let e2 = Mat::from_fn(2, 2, |i, j| if i == 1 && j == 1 { 1.0 } else { 0.0 });

        assert_eq!(points[0].indices, vec![1]);
        assert_relative_eq!(points[0].loss, 0.5, epsilon = 1e-10);
        assert!((points[0].w.clone() - e1).norm() < 1e-10);
        assert_eq!(points[0].kind, CriticalKind::GlobalMinOnMk);

        assert_eq!(points[1].indices, vec![2]);
        assert_relative_eq!(points[1].loss, 2.0, epsilon = 1e-10);
        assert!((points[1].w.clone() - e2).norm() < 1e-10);
        assert_eq!(points[1].kind, CriticalKind::StrictSaddle);
        let cert = points[1].certificate.as_ref().unwrap();
        assert_eq!((cert.j0, cert.j1), (2, 1));
        assert_relative_eq!(cert.second_derivative, -2.0, epsilon = 1e-10);
    }

    #[test]
    fn enumerate_beyond_rank_is_empty_and_k_eq_q_has_no_saddles() {
        let data = diag_fixture();
        // rank(Q) = 2 in a 2×2 problem: k = 2 exists, nothing above
        let at_q = enumerate_critical_points(&data, 2).unwrap();
        assert_eq!(at_q.len(), 1);
        assert_eq!(at_q[0].kind, CriticalKind::GlobalMinOnMk);

        // a rank-1 Y makes rank(Q) = 1 < min(dy, dx)
        let x = Mat::identity(2, 2);
        let y = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let data = DataSet::new(x, y).unwrap();
        assert!(enumerate_critical_points(&data, 2).unwrap().is_empty());
    }

    #[test]
    fn enumerated_points_are_riemannian_critical() {
        for seed in 0..5 {
            let data = random_data(10 + seed, 3, 4, 8);
            let qdec = compute_q(&data);
            for k in 1..=qdec.rank() {
                for cp in enumerate_critical_points(&data, k).unwrap() {
                    let scale = cp.w.norm().max(1.0);
                    let rg = riemannian_gradient(&cp.w, &data, 3).unwrap();
                    assert!(rg.norm() <= 1e-10 * scale.max(model::grad_l1(&cp.w, &data).unwrap().norm()),
                        "riemannian gradient {:e} at J={:?}", rg.norm(), cp.indices);
                    let pg = tangent_project(&cp.w, &model::grad_l1(&cp.w, &data).unwrap()).unwrap();
                    assert!(pg.norm() <= 1e-10 * scale, "projected gradient {:e}", pg.norm());
                    // stored loss equals a direct evaluation
                    let direct = model::loss_l1(&cp.w, &data).unwrap();
                    assert!((cp.loss - direct).abs() <= 1e-10 * (1.0 + direct));
                }
            }
        }
    }

    #[test]
    fn minimal_loss_at_level_k_is_top_k() {
        let data = random_data(20, 4, 4, 10);
        let qdec = compute_q(&data);
        for k in 1..=qdec.rank() {
            let points = enumerate_critical_points(&data, k).unwrap();
            let min = points.iter().map(|p| p.loss).fold(f64::INFINITY, f64::min);
            let top = points.iter().find(|p| p.kind == CriticalKind::GlobalMinOnMk).unwrap();
            assert_relative_eq!(top.loss, min, epsilon = 1e-12);
            assert_eq!(top.indices, (1..=k).collect::<Vec<_>>());
        }
    }

    #[test]
    fn saddle_curve_check_matches_analytic_value() {
        let data = diag_fixture();
        let points = enumerate_critical_points(&data, 1).unwrap();
        let saddle = &points[1];
        let cert = saddle.certificate.as_ref().unwrap();
        let measured = saddle_curve_check(saddle, cert, &data, 1e-3).unwrap();
        assert!((measured - cert.second_derivative).abs() <= 1e-4,
            "measured {measured} vs analytic {}", cert.second_derivative);
    }

    #[test]
    fn saddle_certificates_are_negative_in_random_sweep() {
        for seed in 0..10 {
            let data = random_data(30 + seed, 4, 5, 9);
            let qdec = compute_q(&data);
            for k in 1..qdec.rank() {
                for cp in enumerate_critical_points(&data, k).unwrap() {
                    if let Some(cert) = &cp.certificate {
                        assert!(cert.second_derivative < 0.0);
                        let measured = saddle_curve_check(&cp, cert, &data, 1e-3).unwrap();
                        assert!((measured - cert.second_derivative).abs() <= 1e-4);
                    }
                }
            }
        }
    }

    #[test]
    fn lift_zero_and_diag_example() {
        let data = diag_fixture();
        let zero = &enumerate_critical_points(&data, 0).unwrap()[0];
        assert_eq!(zero.kind, CriticalKind::Zero);
        let shape = NetworkShape::new(vec![2, 1, 2]).unwrap();
        let lifted = lift_critical_point(zero, &shape, &data).unwrap();
        for layer in lifted.layers() {
            assert_eq!(layer.norm(), 0.0);
        }

        let top = &enumerate_critical_points(&data, 1).unwrap()[0];
        let lifted = lift_critical_point(top, &shape, &data).unwrap();
        // W₁ = (1, 0) · diag(1/2, 1) = (1/2, 0); W₂ = 2 e₁
        assert_relative_eq!(lifted.layer(1), &Mat::from_row_slice(1, 2, &[0.5, 0.0]), epsilon = 1e-12);
        assert_relative_eq!(lifted.layer(2), &Mat::from_column_slice(2, 1, &[2.0, 0.0]), epsilon = 1e-12);
        assert!((model::product(&lifted).w - &top.w).norm() <= 1e-10);
    }

    #[test]
    fn lifted_tuples_have_vanishing_layer_gradients() {
        let data = random_data(40, 3, 3, 7);
        let shape = NetworkShape::new(vec![3, 2, 3, 3]).unwrap();
        for k in 0..=2usize {
            for cp in enumerate_critical_points(&data, k).unwrap() {
                let lifted = lift_critical_point(&cp, &shape, &data).unwrap();
                assert!((model::product(&lifted).w - &cp.w).norm() <= 1e-10 * (1.0 + cp.w.norm()));
                for j in 1..=lifted.depth() {
                    let g = model::grad_ln_layer(j, &lifted, &data).unwrap();
                    assert!(g.norm() <= 1e-10, "layer {j} gradient {:e} at J={:?}", g.norm(), cp.indices);
                }
            }
        }
    }

    #[test]
    fn lift_rejects_infeasible_rank() {
        let data = diag_fixture();
        let top = &enumerate_critical_points(&data, 2).unwrap()[0];
        let shape = NetworkShape::new(vec![2, 1, 2]).unwrap();
        assert!(matches!(lift_critical_point(top, &shape, &data), Err(Error::Infeasible(_))));
    }

    #[test]
    fn pca_solution_diag_and_properties() {
        let data = diag_fixture();
        let pca = pca_solution(&data, 1).unwrap();
        let e11 = Mat::from_fn(2, 2, |i, j| if i == 0 && j == 0 { 1.0 } else { 0.0 });
        assert_relative_eq!(pca.projector, e11, epsilon = 1e-12);
        assert!(!pca.ambiguous_gap);

        // idempotent, symmetric, residual matches the eigenvalue tail
        let data = random_data(50, 5, 5, 12);
        let data = DataSet::autoencoder(data.x().clone()).unwrap();
        let pca = pca_solution(&data, 2).unwrap();
        let p = &pca.projector;
        assert!((p * p - p).norm() <= 1e-12 * p.norm());
        assert!((p - p.transpose()).norm() <= 1e-12);
        let residual = (data.x() - p * data.x()).norm();
        assert!((residual - pca.optimal_residual()).abs() <= 1e-8);
    }

    #[test]
    fn pca_flags_degenerate_gap() {
        let x = Mat::identity(3, 3);
        let data = DataSet::autoencoder(x).unwrap();
        let pca = pca_solution(&data, 1).unwrap();
        assert!(pca.ambiguous_gap);
    }

    #[test]
    fn autoencoder_equilibria_zero_top_and_stationarity() {
        let data = random_data(60, 4, 4, 10);
        let data = DataSet::autoencoder(data.x().clone()).unwrap();

        let zero = autoencoder_equilibria(&data, 2, 0).unwrap();
        assert_eq!(zero.len(), 1);
        assert_eq!(zero[0].w.norm(), 0.0);
        assert!(!zero[0].stable);

        let eqs = autoencoder_equilibria(&data, 2, 2).unwrap();
        let top = eqs.iter().find(|e| e.stable).unwrap();
        let pca = pca_solution(&data, 2).unwrap();
        assert!((top.w.clone() - &pca.projector).norm() <= 1e-10);

        // every equilibrium zeroes the coupled flow RHS
        let c = data.gram();
        for eq in autoencoder_equilibria(&data, 2, 1).unwrap().iter().chain(eqs.iter()) {
            let (w1, w2) = (&eq.w1, &eq.w2);
            let r1 = -(w2.tr_mul(w2) * w1 * c) + w2.transpose() * c;
            let r2 = -(w2 * w1 * c * w1.transpose()) + c * w1.transpose();
            assert!(r1.norm().max(r2.norm()) <= 1e-10, "rhs {:e}", r1.norm().max(r2.norm()));
            // balanced high-order stationarity also under the layered flow
            let tuple = WeightTuple::from_layers(vec![w1.clone(), w2.clone()]).unwrap();
            assert!(model::balancedness_residual(&tuple) <= 1e-12);
        }
    }

    #[test]
    fn size_guard_fires() {
        assert!(binomial(40, 20) > ENUMERATION_LIMIT);
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let x = Mat::from_fn(40, 80, |_, _| rng.random_range(-1.0..1.0));
        let data = DataSet::autoencoder(x).unwrap();
        assert!(matches!(
            enumerate_critical_points(&data, 20),
            Err(Error::SizeGuard { .. })
        ));
    }
}
