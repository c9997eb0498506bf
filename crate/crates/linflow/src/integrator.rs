//! Fixed-step RK4 integration of every flow variant, with snapshotting,
//! stopping criteria and per-snapshot diagnostics.
//!
//! All flows are autonomous matrix ODEs. The driver stores full snapshots at
//! a configurable stride (problem sizes are desk scale), always records the
//! final state, stops early once the right-hand side drops below
//! `grad_stop_tol`, and reports divergence (non-finite entries or a state
//! norm beyond `1e12`) as an error naming the offending step.

use serde::{Deserialize, Serialize};

use crate::geometry::{sorted_svd, AwOperator};
use crate::model::{self, DataSet, NetworkShape, ProductState, WeightTuple};
use crate::{Error, Mat, Result};

/// Step size, horizon and stopping parameters for one integration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IntegratorConfig {
    /// Step size.
    pub h: f64,
    /// Final time.
    pub t_max: f64,
    /// Snapshot stride in steps.
    pub snapshot_every: usize,
    /// Stop when the Frobenius norm of the stacked RHS drops below this.
    pub grad_stop_tol: f64,
    /// Hard safety cap on the number of steps.
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { h: 1e-3, t_max: 50.0, snapshot_every: 100, grad_stop_tol: 1e-10, max_steps: 10_000_000 }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) || !(self.t_max > 0.0) {
            return Err(Error::Parameter("need h > 0 and t_max > 0".into()));
        }
        if self.grad_stop_tol < 0.0 {
            return Err(Error::Parameter("grad_stop_tol must be ≥ 0".into()));
        }
        if self.snapshot_every == 0 {
            return Err(Error::Parameter("snapshot_every must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Convenience: same config with a different horizon.
    pub fn with_t_max(mut self, t_max: f64) -> Self {
        self.t_max = t_max;
        self
    }

    /// Convenience: same config with a different step size.
    pub fn with_h(mut self, h: f64) -> Self {
        self.h = h;
        self
    }
}

/// One stored state along a trajectory.
#[derive(Debug, Clone)]
pub enum Snapshot {
    /// Layer tuple of the layered flow.
    Tuple(WeightTuple),
    /// Product matrix of the induced fixed-rank flow.
    Product(ProductState),
    /// Orthonormal frame `V` of the Oja / symmetric autoencoder flows.
    Frame(Mat),
    /// Two-layer autoencoder pair `(W₁, W₂)`.
    Pair { w1: Mat, w2: Mat },
    /// Stacked `[W₁ᵀ; W₂]` of the Riccati form.
    Stacked(Mat),
}

impl Snapshot {
    /// The end-to-end matrix this state represents: the layer product, the
    /// product matrix itself, `V Vᵀ` for frames, or `W₂ W₁` for pairs.
    pub fn product_matrix(&self) -> Mat {
        match self {
            Snapshot::Tuple(t) => model::product(t).w,
            Snapshot::Product(p) => p.w.clone(),
            Snapshot::Frame(v) => v * v.transpose(),
            Snapshot::Pair { w1, w2 } => w2 * w1,
            Snapshot::Stacked(v) => {
                let d = v.nrows() / 2;
                let w1 = v.rows(0, d).transpose();
                let w2 = v.rows(d, d).into_owned();
                w2 * w1
            }
        }
    }

    pub fn as_tuple(&self) -> Option<&WeightTuple> {
        match self {
            Snapshot::Tuple(t) => Some(t),
            _ => None,
        }
    }
}

/// Per-snapshot diagnostics record.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SnapshotStats {
    pub loss: f64,
    /// Frobenius norm of the stacked flow RHS at this state.
    pub rhs_norm: f64,
    /// Balancedness residual for layered states, orthonormality deviation
    /// `‖VᵀV − I‖_F` for frame states; absent where meaningless.
    pub balance_residual: Option<f64>,
    pub rank_estimate: usize,
    /// `max_j ‖D_j(t) − D_j(0)‖_F` against the initial conserved quantities.
    pub conserved_drift: Option<f64>,
}

/// Why the integration stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    /// Reached `t_max`.
    TimeLimit,
    /// RHS norm fell below `grad_stop_tol`.
    GradientBelowTol,
    /// Hit the `max_steps` safety cap.
    MaxSteps,
}

/// Time-stamped snapshots of a flow plus per-snapshot diagnostics.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Snapshot>,
    pub stats: Vec<SnapshotStats>,
    pub stop: StopReason,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn final_state(&self) -> &Snapshot {
        self.states.last().unwrap()
    }

    pub fn final_stats(&self) -> &SnapshotStats {
        self.stats.last().unwrap()
    }
}

/// A specific matrix ODE: its vector field plus snapshot/diagnostic hooks.
trait Flow {
    fn rhs(&self, state: &[Mat]) -> Vec<Mat>;
    fn snapshot(&self, state: &[Mat]) -> Snapshot;
    fn stats(&self, state: &[Mat], rhs_norm: f64) -> SnapshotStats;
    /// Applied after every accepted step (e.g. a manifold retraction).
    fn postprocess(&self, _state: &mut [Mat]) {}
    /// Norm used for the gradient stopping rule and the `rhs_norm` stat;
    /// defaults to the stacked Frobenius norm of the state derivative.
    fn rhs_norm(&self, _state: &[Mat], k1: &[Mat]) -> f64 {
        stacked_norm(k1)
    }
}

fn stacked_norm(mats: &[Mat]) -> f64 {
    mats.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt()
}

fn all_finite(mats: &[Mat]) -> bool {
    mats.iter().all(|m| m.iter().all(|x| x.is_finite()))
}

const DIVERGENCE_NORM: f64 = 1e12;

/// Classic fixed-step RK4 over a stack of matrices.
fn run_flow<F: Flow>(flow: &F, state0: Vec<Mat>, cfg: &IntegratorConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let n_steps = (cfg.t_max / cfg.h).round().max(1.0) as usize;
    let h = cfg.h;

    let mut state = state0;
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut stats = Vec::new();

    let record = |step: usize, state: &[Mat], rhs_norm: f64, times: &mut Vec<f64>, states: &mut Vec<Snapshot>, stats: &mut Vec<SnapshotStats>| {
        times.push(step as f64 * h);
        states.push(flow.snapshot(state));
        stats.push(flow.stats(state, rhs_norm));
    };

    let mut step = 0usize;
    let stop = loop {
        let k1 = flow.rhs(&state);
        let rhs_norm = flow.rhs_norm(&state, &k1);

        let stopping = rhs_norm < cfg.grad_stop_tol
            || step >= n_steps
            || step >= cfg.max_steps;
        if step % cfg.snapshot_every == 0 || stopping {
            record(step, &state, rhs_norm, &mut times, &mut states, &mut stats);
        }
        if rhs_norm < cfg.grad_stop_tol {
            break StopReason::GradientBelowTol;
        }
        if step >= n_steps {
            break StopReason::TimeLimit;
        }
        if step >= cfg.max_steps {
            break StopReason::MaxSteps;
        }

        // stages
        let mid1: Vec<Mat> = state.iter().zip(&k1).map(|(s, k)| s + k * (h / 2.0)).collect();
        let k2 = flow.rhs(&mid1);
        let mid2: Vec<Mat> = state.iter().zip(&k2).map(|(s, k)| s + k * (h / 2.0)).collect();
        let k3 = flow.rhs(&mid2);
        let end: Vec<Mat> = state.iter().zip(&k3).map(|(s, k)| s + k * h).collect();
        let k4 = flow.rhs(&end);

        for (i, s) in state.iter_mut().enumerate() {
            *s += (&k1[i] + &k2[i] * 2.0 + &k3[i] * 2.0 + &k4[i]) * (h / 6.0);
        }
        flow.postprocess(&mut state);
        step += 1;

        let norm = stacked_norm(&state);
        if !all_finite(&state) || norm > DIVERGENCE_NORM {
            return Err(Error::Divergence { step, time: step as f64 * h, norm });
        }
    };

    Ok(Trajectory { times, states, stats, stop })
}

struct FullFlow<'a> {
    data: &'a DataSet,
    shape: NetworkShape,
    initial_differences: Vec<Mat>,
}

impl Flow for FullFlow<'_> {
    fn rhs(&self, state: &[Mat]) -> Vec<Mat> {
        let tuple = WeightTuple::new(state.to_vec(), self.shape.clone()).expect("shape fixed");
        model::grad_ln(&tuple, self.data)
            .expect("shapes validated at start")
            .into_iter()
            .map(|g| -g)
            .collect()
    }

    fn snapshot(&self, state: &[Mat]) -> Snapshot {
        Snapshot::Tuple(WeightTuple::new(state.to_vec(), self.shape.clone()).unwrap())
    }

    fn stats(&self, state: &[Mat], rhs_norm: f64) -> SnapshotStats {
        let tuple = WeightTuple::new(state.to_vec(), self.shape.clone()).unwrap();
        let p = model::product(&tuple);
        let drift = model::conserved_differences(&tuple)
            .iter()
            .zip(&self.initial_differences)
            .map(|(d, d0)| (d - d0).norm())
            .fold(0.0, f64::max);
        SnapshotStats {
            loss: model::loss_l1(&p.w, self.data).unwrap(),
            rhs_norm,
            balance_residual: Some(model::balancedness_residual(&tuple)),
            rank_estimate: p.rank_estimate,
            conserved_drift: Some(drift),
        }
    }
}

/// Simultaneous gradient flow `Ẇ_j = −∇_{W_j} L_N` on all layers.
pub fn integrate_full(weights0: &WeightTuple, data: &DataSet, cfg: &IntegratorConfig) -> Result<Trajectory> {
    // fail fast on incompatible shapes
    model::loss_ln(weights0, data)?;
    let flow = FullFlow {
        data,
        shape: weights0.shape().clone(),
        initial_differences: model::conserved_differences(weights0),
    };
    run_flow(&flow, weights0.layers().to_vec(), cfg)
}

/// Product flow in factored coordinates `W = U S Vᵀ` (`U, V` orthonormal
/// frames, `S` a small square core). The flow field `−𝒜_W(∇L_1)` is tangent
/// to the rank-`k` manifold, so it decomposes exactly into
/// `U̇ = (I − UUᵀ) F V S⁻¹`, `Ṡ = Uᵀ F V`, `V̇ = (I − VVᵀ) Fᵀ U S⁻ᵀ`.
/// Integrating these keeps the state on the manifold by construction. In
/// ambient coordinates the manifold is an unstable invariant set (normal
/// perturbations grow like `e^{2λt}`) and the fractional powers have
/// `|σ|^{2/N}` kinks across it, which defeats plain RK4 for any step size.
struct ProductFlow<'a> {
    data: &'a DataSet,
    depth: u32,
    /// Cached `Y Xᵀ`.
    yxt: Mat,
}

impl ProductFlow<'_> {
    /// Evaluates `F = −𝒜_W(∇L_1(W))` at `W = u s vᵀ`.
    fn ambient_field(&self, u: &Mat, s: &Mat, v: &Mat) -> Mat {
        // SVD of the small core aligns the big frames with W's singular bases
        let (us, sig, vs) = crate::geometry::thin_svd(s);
        let u_star = u * us;
        let v_star = v * vs;
        let w = &u_star * Mat::from_diagonal(&sig) * v_star.transpose();
        let grad = &w * self.data.gram() - &self.yxt;
        let op = AwOperator::new(
            &crate::geometry::SvdFactors { u: u_star, sigma: sig, v: v_star },
            self.depth,
        );
        -op.apply(&grad)
    }
}

impl Flow for ProductFlow<'_> {
    fn rhs(&self, state: &[Mat]) -> Vec<Mat> {
        let (u, s, v) = (&state[0], &state[1], &state[2]);
        let f = self.ambient_field(u, s, v);
        let s_inv = s.clone().try_inverse().expect("core S stays invertible while the rank holds");
        let fv = &f * v;
        let ftu = f.tr_mul(u);
        let s_dot = u.tr_mul(&fv);
        let u_dot = (&fv - u * &s_dot) * &s_inv;
        let v_dot = (&ftu - v * s_dot.transpose()) * s_inv.transpose();
        vec![u_dot, s_dot, v_dot]
    }

    /// Stopping and diagnostics are phrased in terms of the ambient RHS norm
    /// `‖Ẇ‖_F`; the three factor velocities are orthogonal pieces of it.
    fn rhs_norm(&self, state: &[Mat], k1: &[Mat]) -> f64 {
        let s = &state[1];
        let (u_dot, s_dot, v_dot) = (&k1[0], &k1[1], &k1[2]);
        let a = (u_dot * s).norm_squared();
        let b = s_dot.norm_squared();
        let c = (v_dot * s.transpose()).norm_squared();
        (a + b + c).sqrt()
    }

    // Frames drift from orthonormality at the local truncation level only;
    // a QR polish per step absorbs the drift into the core.
    fn postprocess(&self, state: &mut [Mat]) {
        let (qu, ru) = qr_positive(&state[0]);
        let (qv, rv) = qr_positive(&state[2]);
        state[0] = qu;
        state[1] = ru * &state[1] * rv.transpose();
        state[2] = qv;
    }

    fn snapshot(&self, state: &[Mat]) -> Snapshot {
        let w = &state[0] * &state[1] * state[2].transpose();
        Snapshot::Product(ProductState::from_matrix(w))
    }

    fn stats(&self, state: &[Mat], rhs_norm: f64) -> SnapshotStats {
        let w = &state[0] * &state[1] * state[2].transpose();
        let p = ProductState::from_matrix(w);
        SnapshotStats {
            loss: model::loss_l1(&p.w, self.data).unwrap(),
            rhs_norm,
            balance_residual: None,
            rank_estimate: p.rank_estimate,
            conserved_drift: None,
        }
    }
}

/// Thin QR with the sign convention `diag(R) ≥ 0`, which makes `Q` a
/// continuous polish of an already near-orthonormal input.
fn qr_positive(m: &Mat) -> (Mat, Mat) {
    let qr = m.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for i in 0..r.nrows().min(r.ncols()) {
        if r[(i, i)] < 0.0 {
            let col = -q.column(i);
            q.set_column(i, &col);
            let row = -r.row(i);
            r.set_row(i, &row);
        }
    }
    (q, r)
}

/// The zero matrix is a fixed point of the product flow (`𝒜_0 = 0`); the
/// factored parametrization does not cover rank 0, so it gets a trivial flow.
struct ZeroProductFlow<'a> {
    data: &'a DataSet,
    dims: (usize, usize),
}

impl Flow for ZeroProductFlow<'_> {
    fn rhs(&self, _state: &[Mat]) -> Vec<Mat> {
        vec![Mat::zeros(self.dims.0, self.dims.1)]
    }

    fn snapshot(&self, state: &[Mat]) -> Snapshot {
        Snapshot::Product(ProductState::from_matrix(state[0].clone()))
    }

    fn stats(&self, state: &[Mat], rhs_norm: f64) -> SnapshotStats {
        SnapshotStats {
            loss: model::loss_l1(&state[0], self.data).unwrap(),
            rhs_norm,
            balance_residual: None,
            rank_estimate: 0,
            conserved_drift: None,
        }
    }
}

/// Induced flow of the product `W = W_N ⋯ W_1` under balanced provenance:
/// `Ẇ = −Σ_j (W Wᵀ)^{(N−j)/N} ∇L_1(W) (Wᵀ W)^{(j−1)/N} = −𝒜_W(∇L_1(W))`,
/// a Riemannian gradient flow on the manifold of rank-`k` matrices, `k` the
/// rank of `w0`. Integrated in factored `U S Vᵀ` coordinates (see
/// [`ProductFlow`]); snapshots carry rank estimates so that rank behavior
/// can be monitored (a singular value can decay through the threshold in the
/// long-time limit, the count can never grow).
pub fn integrate_product(w0: &ProductState, data: &DataSet, n: u32, cfg: &IntegratorConfig) -> Result<Trajectory> {
    if n < 2 {
        return Err(Error::Parameter("layer count N must be ≥ 2".into()));
    }
    model::grad_l1(&w0.w, data)?;
    let yxt = self_yxt(data);
    if w0.rank_estimate == 0 {
        let flow = ZeroProductFlow { data, dims: (w0.w.nrows(), w0.w.ncols()) };
        return run_flow(&flow, vec![w0.w.clone()], cfg);
    }
    let svd = sorted_svd(&w0.w);
    let state0 = vec![svd.u.clone(), Mat::from_diagonal(&svd.sigma), svd.v.clone()];
    let flow = ProductFlow { data, depth: n, yxt };
    run_flow(&flow, state0, cfg)
}

fn self_yxt(data: &DataSet) -> Mat {
    data.y() * data.x().transpose()
}

fn check_orthonormal_start(v0: &Mat) -> Result<()> {
    let gram = v0.tr_mul(v0);
    let dev = (&gram - Mat::identity(gram.nrows(), gram.ncols())).norm();
    if dev > 1e-10 {
        return Err(Error::Precondition(format!(
            "V(0)ᵀV(0) deviates from the identity by {dev:e} > 1e-10"
        )));
    }
    Ok(())
}

struct FrameFlow<'a> {
    data: &'a DataSet,
    symmetric: bool,
}

impl FrameFlow<'_> {
    fn field(&self, v: &Mat) -> Mat {
        let c = self.data.gram();
        let cv = c * v;
        let vvt_cv = v * v.tr_mul(&cv);
        let oja = &cv - &vvt_cv;
        if self.symmetric {
            // + X Xᵀ (I − V Vᵀ) V
            let v_minus = v - v * v.tr_mul(v);
            oja + c * v_minus
        } else {
            oja
        }
    }
}

impl Flow for FrameFlow<'_> {
    fn rhs(&self, state: &[Mat]) -> Vec<Mat> {
        vec![self.field(&state[0])]
    }

    fn snapshot(&self, state: &[Mat]) -> Snapshot {
        Snapshot::Frame(state[0].clone())
    }

    fn stats(&self, state: &[Mat], rhs_norm: f64) -> SnapshotStats {
        let v = &state[0];
        let proj = v * v.transpose();
        let residual = self.data.x() - &proj * self.data.x();
        let gram_dev = (v.tr_mul(v) - Mat::identity(v.ncols(), v.ncols())).norm();
        SnapshotStats {
            loss: 0.5 * residual.norm_squared(),
            rhs_norm,
            balance_residual: Some(gram_dev),
            rank_estimate: model::numerical_rank(&proj),
            conserved_drift: None,
        }
    }
}

/// Oja's flow `V̇ = (I − V Vᵀ) X Xᵀ V` from an orthonormal frame.
pub fn integrate_oja(v0: &Mat, data: &DataSet, cfg: &IntegratorConfig) -> Result<Trajectory> {
    if v0.nrows() != data.d_in() {
        return Err(Error::Shape("V must have d rows".into()));
    }
    check_orthonormal_start(v0)?;
    let flow = FrameFlow { data, symmetric: false };
    run_flow(&flow, vec![v0.clone()], cfg)
}

/// Symmetric autoencoder flow
/// `V̇ = (I − V Vᵀ) X Xᵀ V + X Xᵀ (I − V Vᵀ) V`; coincides with Oja's flow
/// on orthonormal starts because the second term vanishes along it.
pub fn integrate_symmetric_autoencoder(v0: &Mat, data: &DataSet, cfg: &IntegratorConfig) -> Result<Trajectory> {
    if v0.nrows() != data.d_in() {
        return Err(Error::Shape("V must have d rows".into()));
    }
    check_orthonormal_start(v0)?;
    let flow = FrameFlow { data, symmetric: true };
    run_flow(&flow, vec![v0.clone()], cfg)
}

struct TwoLayerFlow<'a> {
    data: &'a DataSet,
    initial_difference: Mat,
}

impl Flow for TwoLayerFlow<'_> {
    fn rhs(&self, state: &[Mat]) -> Vec<Mat> {
        let (w1, w2) = (&state[0], &state[1]);
        let c = self.data.gram();
        let d_w1 = -(w2.tr_mul(w2) * w1 * c) + w2.transpose() * c;
        let d_w2 = -(w2 * w1 * c * w1.transpose()) + c * w1.transpose();
        vec![d_w1, d_w2]
    }

    fn snapshot(&self, state: &[Mat]) -> Snapshot {
        Snapshot::Pair { w1: state[0].clone(), w2: state[1].clone() }
    }

    fn stats(&self, state: &[Mat], rhs_norm: f64) -> SnapshotStats {
        let (w1, w2) = (&state[0], &state[1]);
        let w = w2 * w1;
        let diff = w2.tr_mul(w2) - w1 * w1.transpose();
        SnapshotStats {
            loss: model::loss_l1(&w, self.data).unwrap(),
            rhs_norm,
            balance_residual: Some(diff.norm()),
            rank_estimate: model::numerical_rank(&w),
            conserved_drift: Some((&diff - &self.initial_difference).norm()),
        }
    }
}

/// Coupled two-layer autoencoder flow (`Y = X` implied):
/// `Ẇ₁ = −W₂ᵀW₂W₁XXᵀ + W₂ᵀXXᵀ`, `Ẇ₂ = −W₂W₁XXᵀW₁ᵀ + XXᵀW₁ᵀ`.
pub fn integrate_two_layer_autoencoder(w1_0: &Mat, w2_0: &Mat, data: &DataSet, cfg: &IntegratorConfig) -> Result<Trajectory> {
    let d = data.d_in();
    if data.d_out() != d {
        return Err(Error::Shape("autoencoder flow needs d_y = d_x".into()));
    }
    if w1_0.ncols() != d || w2_0.nrows() != d || w1_0.nrows() != w2_0.ncols() {
        return Err(Error::Shape(format!(
            "need W₁ ∈ ℝ^(r×{d}) and W₂ ∈ ℝ^({d}×r), got {}×{} and {}×{}",
            w1_0.nrows(),
            w1_0.ncols(),
            w2_0.nrows(),
            w2_0.ncols()
        )));
    }
    let initial_difference = w2_0.tr_mul(w2_0) - w1_0 * w1_0.transpose();
    let flow = TwoLayerFlow { data, initial_difference };
    run_flow(&flow, vec![w1_0.clone(), w2_0.clone()], cfg)
}

struct RiccatiFlow {
    c: Mat,
    c_inv: Mat,
}

impl Flow for RiccatiFlow {
    fn rhs(&self, state: &[Mat]) -> Vec<Mat> {
        let v = &state[0];
        let d = self.c.nrows();
        let top = v.rows(0, d).into_owned();
        let bottom = v.rows(d, d).into_owned();

        // m = [[0, C], [C, 0]] · V
        let m_top = &self.c * &bottom;
        let m_bottom = &self.c * &top;

        // [[−C, 0], [0, 0]] · V Vᵀ · [[0, 0], [C⁻¹, 0]] · m
        // (the top block of the innermost product is identically zero)
        let inner_bottom = &self.c_inv * &m_top;
        let coeff = bottom.tr_mul(&inner_bottom);
        let t2_top = -(&self.c * (&top * &coeff));

        // [[0, 0], [0, −I]] · V Vᵀ · [[0, I], [0, 0]] · m
        let inner_top = m_bottom.clone();
        let coeff2 = top.tr_mul(&inner_top);
        let t3_bottom = -(&bottom * &coeff2);

        let mut out = Mat::zeros(2 * d, v.ncols());
        out.rows_mut(0, d).copy_from(&(m_top + t2_top));
        out.rows_mut(d, d).copy_from(&(m_bottom + t3_bottom));
        vec![out]
    }

    fn snapshot(&self, state: &[Mat]) -> Snapshot {
        Snapshot::Stacked(state[0].clone())
    }

    fn stats(&self, state: &[Mat], rhs_norm: f64) -> SnapshotStats {
        let v = &state[0];
        let d = self.c.nrows();
        let w1 = v.rows(0, d).transpose();
        let w2 = v.rows(d, d).into_owned();
        let w = &w2 * &w1;
        // loss ½‖X − W X‖² in Gram form: ½ tr((I−W)C(I−W)ᵀ)
        let eye = Mat::identity(d, d);
        let res = &eye - &w;
        let loss = 0.5 * (&res * &self.c * res.transpose()).trace();
        SnapshotStats {
            loss,
            rhs_norm,
            balance_residual: Some((w2.tr_mul(&w2) - &w1 * w1.transpose()).norm()),
            rank_estimate: model::numerical_rank(&w),
            conserved_drift: None,
        }
    }
}

/// Riccati form of the two-layer autoencoder flow on the stacked variable
/// `V = [W₁ᵀ; W₂] ∈ ℝ^{2d×r}`; algebraically equivalent to
/// [`integrate_two_layer_autoencoder`] and used as its oracle.
pub fn integrate_riccati(v0: &Mat, c: &Mat, cfg: &IntegratorConfig) -> Result<Trajectory> {
    let d2 = v0.nrows();
    if d2 % 2 != 0 {
        return Err(Error::Shape("stacked variable must have 2d rows".into()));
    }
    let d = d2 / 2;
    if c.nrows() != d || c.ncols() != d {
        return Err(Error::Shape(format!("C must be {d}×{d}")));
    }
    if (c - c.transpose()).norm() > 1e-10 * c.norm().max(1.0) {
        return Err(Error::Parameter("C must be symmetric".into()));
    }
    let eig = nalgebra::SymmetricEigen::new(c.clone());
    if eig.eigenvalues.min() <= 1e-12 * eig.eigenvalues.max().max(1.0) {
        return Err(Error::Parameter("C must be positive definite".into()));
    }
    let c_inv = eig.recompose().try_inverse().ok_or_else(|| Error::Parameter("C not invertible".into()))?;
    let flow = RiccatiFlow { c: c.clone(), c_inv };
    run_flow(&flow, vec![v0.clone()], cfg)
}
