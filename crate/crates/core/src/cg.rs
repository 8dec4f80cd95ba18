//! The three block conjugate gradient variants behind one iteration record
//! format, plus the solve driver that wires in the error-bound machinery.

use crate::block::BlockVector;
use crate::bounds::{
    delayed_bounds, gauss_theta_from, radau_init, radau_step, BoundPoint, BoundSeries, RadauSeries,
    RadauState,
};
use crate::dense::{SmallBlock, ABS_FLOOR};
use crate::error::{Error, Result};
use crate::lanczos::BlockTridiagonal;
use crate::sparse::SparseSpd;

/// True residual is recomputed and compared to the recursive one every this
/// many iterations.
const RECOMPUTE_INTERVAL: usize = 50;

/// Relative divergence (against ||B||_F) of recursive vs true residual that
/// flags maximum attainable accuracy.
const DIVERGENCE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Standard,
    OLeary,
    DubrulleR,
}

/// Scaling policy for the O'Leary variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SigmaPolicy {
    /// Sigma_k = I: reproduces the standard variant bit for bit.
    #[default]
    Identity,
    /// Sigma_k = inverse R factor of qr(R_k + P_{k-1} Xi_k), so every scaled
    /// direction block has orthonormal columns.
    InverseRFactor,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub variant: Variant,
    pub max_iter: usize,
    /// Stop once the delayed Gauss estimate (A-norm scale) falls below this,
    /// relative to the iteration-0 estimate; falls back to the relative
    /// residual Frobenius norm when bounds are unavailable or invalid.
    pub stop_tol: f64,
    /// Positive underestimate of the smallest eigenvalue; required for upper
    /// bounds. Validity as a true underestimate is the caller's contract.
    pub mu: Option<f64>,
    /// Delay d >= 1: bounds for iterate k-1 are emitted at iteration k-1+d.
    pub delay: usize,
    pub sigma_policy: SigmaPolicy,
    /// Keep per-iterate snapshots (X_k, R_k, direction blocks) for
    /// verification; desk scale only.
    pub archive: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Standard,
            max_iter: 1000,
            stop_tol: 1e-10,
            mu: None,
            delay: 1,
            sigma_policy: SigmaPolicy::Identity,
            archive: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delay < 1 {
            return Err(Error::InvalidConfig("delay must be at least 1".into()));
        }
        if self.max_iter < 1 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        if self.stop_tol < 0.0 {
            return Err(Error::InvalidConfig("stop_tol must be nonnegative".into()));
        }
        if let Some(mu) = self.mu {
            if mu <= 0.0 {
                return Err(Error::NonPositiveMu(mu));
            }
        }
        Ok(())
    }
}

/// One step's coefficient snapshot. All variants normalize into the same
/// fields, so the bound estimators are variant-agnostic:
/// `rtr` is R_{k-1}^T R_{k-1}, `upsilon` the effective Upsilon_{k-1}
/// (Sigma-corrected for O'Leary, Phi-hat based for Dubrulle-R), `xi` the
/// standard Xi_k, and `theta` = rtr * upsilon symmetrized.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub k: usize,
    pub rtr: SmallBlock,
    pub upsilon: SmallBlock,
    pub xi: SmallBlock,
    pub theta: SmallBlock,
    pub residual_fro: f64,
}

/// Solve with a coefficient Gram block. A degenerate pivot (the 1e-14
/// relative threshold of the LU, i.e. condition beyond ~1e14) is surfaced as
/// `NearSingularCoefficient` with the equilibrated condition estimate
/// attached; rank-deficiency remedies are out of scope, so nothing is masked
/// or repaired. Large-but-solvable conditioning is allowed through: the
/// classical variants keep iterating in that regime, at the price of
/// delayed convergence and attainable accuracy.
fn guarded_spd_solve(s: &SmallBlock, rhs: &SmallBlock, which: &'static str) -> Result<SmallBlock> {
    s.solve(rhs).map_err(|_| Error::NearSingularCoefficient {
        which,
        cond_estimate: s.spd_condition_estimate(),
    })
}

/// Standard block CG state.
#[derive(Debug, Clone)]
pub struct BcgState {
    pub x: BlockVector,
    pub r: BlockVector,
    pub p: BlockVector,
    k: usize,
}

impl BcgState {
    pub fn new(a: &SparseSpd, b: &BlockVector, x0: &BlockVector) -> Result<Self> {
        let r = b.sub(&a.spmm(x0)?);
        Ok(Self {
            x: x0.clone(),
            p: r.clone(),
            r,
            k: 0,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

/// One standard BCG iteration:
/// Upsilon_{k-1} = (P^T A P)^{-1} (R^T R), X += P Upsilon, R -= AP Upsilon,
/// Xi_k = (R_{k-1}^T R_{k-1})^{-1} (R_k^T R_k), P = R + P Xi.
pub fn bcg_step(state: &mut BcgState, a: &SparseSpd) -> Result<IterationRecord> {
    let k = state.k + 1;
    let ap = a.spmm(&state.p)?;
    let pap = state.p.gram_with(&ap).symmetrize();
    let rtr_prev = state.r.gram();
    let upsilon = guarded_spd_solve(&pap, &rtr_prev, "PtAP")?;
    state.x.add_assign_mul(&state.p, &upsilon);
    state.r.sub_assign_mul(&ap, &upsilon);
    let rtr_new = state.r.gram();
    let xi = guarded_spd_solve(&rtr_prev, &rtr_new, "RtR")?;
    let mut p_next = state.r.clone();
    p_next.add_assign_mul(&state.p, &xi);
    state.p = p_next;
    state.k = k;
    let theta = gauss_theta_from(&rtr_prev, &upsilon);
    Ok(IterationRecord {
        k,
        rtr: rtr_prev,
        upsilon,
        xi,
        theta,
        residual_fro: state.r.frobenius_norm(),
    })
}

/// The Sigma scaling of the O'Leary variant, applied as solves against the
/// stored R factor rather than as a formed inverse.
#[derive(Debug, Clone)]
enum SigmaOp {
    Identity,
    /// Sigma = R^{-1} for the stored upper triangular R.
    InvR(SmallBlock),
}

impl SigmaOp {
    /// Sigma * M
    fn apply(&self, m: &SmallBlock) -> Result<SmallBlock> {
        match self {
            SigmaOp::Identity => Ok(m.clone()),
            SigmaOp::InvR(r) => r.solve(m).map_err(|_| Error::SingularSigma),
        }
    }

    /// Sigma^T * M
    fn apply_transpose(&self, m: &SmallBlock) -> Result<SmallBlock> {
        match self {
            SigmaOp::Identity => Ok(m.clone()),
            SigmaOp::InvR(r) => r.transpose().solve(m).map_err(|_| Error::SingularSigma),
        }
    }

    /// Sigma^{-1} * M
    fn apply_inverse(&self, m: &SmallBlock) -> Result<SmallBlock> {
        match self {
            SigmaOp::Identity => Ok(m.clone()),
            SigmaOp::InvR(r) => Ok(r.mul(m)),
        }
    }
}

/// O'Leary-variant state: directions carry an extra m-by-m scaling Sigma_k.
#[derive(Debug, Clone)]
pub struct OlbcgState {
    pub x: BlockVector,
    pub r: BlockVector,
    pub p: BlockVector,
    sigma: SigmaOp,
    k: usize,
}

impl OlbcgState {
    pub fn new(
        a: &SparseSpd,
        b: &BlockVector,
        x0: &BlockVector,
        policy: SigmaPolicy,
    ) -> Result<Self> {
        let r = b.sub(&a.spmm(x0)?);
        let (p, sigma) = match policy {
            SigmaPolicy::Identity => (r.clone(), SigmaOp::Identity),
            SigmaPolicy::InverseRFactor => {
                let (q, rf) = r.qr_thin().map_err(|_| Error::SingularSigma)?;
                (q, SigmaOp::InvR(rf))
            }
        };
        Ok(Self {
            x: x0.clone(),
            r,
            p,
            sigma,
            k: 0,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

/// One O'Leary iteration. The record stores the effective coefficients
/// (Sigma_{k-1} Upsilon~_{k-1} and the standard Xi_k), so the estimators see
/// the same inputs as for the standard variant.
pub fn olbcg_step(
    state: &mut OlbcgState,
    a: &SparseSpd,
    policy: SigmaPolicy,
) -> Result<IterationRecord> {
    let k = state.k + 1;
    let ap = a.spmm(&state.p)?;
    let pap = state.p.gram_with(&ap).symmetrize();
    let rtr_prev = state.r.gram();
    let rhs = state.sigma.apply_transpose(&rtr_prev)?;
    let upsilon_tilde = guarded_spd_solve(&pap, &rhs, "PtAP")?;
    state.x.add_assign_mul(&state.p, &upsilon_tilde);
    state.r.sub_assign_mul(&ap, &upsilon_tilde);
    let rtr_new = state.r.gram();
    let xi = guarded_spd_solve(&rtr_prev, &rtr_new, "RtR")?;
    let xi_tilde = state.sigma.apply_inverse(&xi)?;
    let mut candidate = state.r.clone();
    candidate.add_assign_mul(&state.p, &xi_tilde);
    let upsilon_eff = state.sigma.apply(&upsilon_tilde)?;
    let (p_next, sigma_next) = match policy {
        SigmaPolicy::Identity => (candidate, SigmaOp::Identity),
        SigmaPolicy::InverseRFactor => {
            let (q, rf) = candidate.qr_thin().map_err(|_| Error::SingularSigma)?;
            (q, SigmaOp::InvR(rf))
        }
    };
    state.p = p_next;
    state.sigma = sigma_next;
    state.k = k;
    let theta = gauss_theta_from(&rtr_prev, &upsilon_eff);
    Ok(IterationRecord {
        k,
        rtr: rtr_prev,
        upsilon: upsilon_eff,
        xi,
        theta,
        residual_fro: state.r.frobenius_norm(),
    })
}

/// Dubrulle-R state: orthonormal residual basis Q_k, scaled directions
/// S_k = P_k Phi_hat_k, and the accumulated triangular-ish factor Phi_hat_k
/// with R_k = Q_k Phi_hat_k.
#[derive(Debug, Clone)]
pub struct DrbcgState {
    pub x: BlockVector,
    pub q: BlockVector,
    pub s: BlockVector,
    pub phi_hat: SmallBlock,
    k: usize,
}

impl DrbcgState {
    pub fn new(a: &SparseSpd, b: &BlockVector, x0: &BlockVector) -> Result<Self> {
        let r = b.sub(&a.spmm(x0)?);
        let (q, phi_hat) = r.qr_thin()?;
        Ok(Self {
            x: x0.clone(),
            s: q.clone(),
            q,
            phi_hat,
            k: 0,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// R_k = Q_k Phi_hat_k, reconstructed on demand.
    pub fn residual(&self) -> BlockVector {
        self.q.mul_small(&self.phi_hat)
    }
}

/// One Dubrulle-R iteration:
/// Pi_hat = (S^T A S)^{-1}; X += S Pi_hat Phi_hat;
/// [Q_k, Psi_hat] = qr(Q_{k-1} - A S Pi_hat); S = Q + S Psi_hat^T;
/// Phi_hat_k = Psi_hat Phi_hat_{k-1}.
///
/// No R^T R inverse appears, and rank deficiency inside the QR is tolerated.
pub fn drbcg_step(state: &mut DrbcgState, a: &SparseSpd) -> Result<IterationRecord> {
    let k = state.k + 1;
    let m = state.phi_hat.rows();
    let as_ = a.spmm(&state.s)?;
    let sas = state.s.gram_with(&as_).symmetrize();
    let pi_hat = guarded_spd_solve(&sas, &SmallBlock::identity(m), "StAS")?.symmetrize();
    let u = pi_hat.mul(&state.phi_hat);
    state.x.add_assign_mul(&state.s, &u);
    let mut z = state.q.clone();
    z.sub_assign_mul(&as_, &pi_hat);
    let (q_next, psi_hat) = z.qr_thin_unchecked();
    let mut s_next = q_next.clone();
    s_next.add_assign_mul(&state.s, &psi_hat.transpose());
    let phi_next = psi_hat.mul(&state.phi_hat);

    let rtr_prev = state.phi_hat.transpose().mul(&state.phi_hat).symmetrize();
    let rtr_next = phi_next.transpose().mul(&phi_next).symmetrize();
    let theta = state.phi_hat.transpose().mul(&u).symmetrize();
    let upsilon_eff = state
        .phi_hat
        .solve(&u)
        .map_err(|_| Error::NearSingularCoefficient {
            which: "PhiHat",
            cond_estimate: f64::INFINITY,
        })?;
    let xi = guarded_spd_solve(&rtr_prev, &rtr_next, "RtR")?;

    state.q = q_next;
    state.s = s_next;
    state.phi_hat = phi_next;
    state.k = k;
    Ok(IterationRecord {
        k,
        rtr: rtr_prev,
        upsilon: upsilon_eff,
        xi,
        theta,
        residual_fro: state.phi_hat.frobenius_norm(),
    })
}

/// How a solve ended.
#[derive(Debug)]
pub enum SolveStatus {
    /// Stop criterion met.
    Converged,
    /// Iteration budget exhausted.
    MaxIterReached,
    /// The recursive residual diverged from the true one: maximum attainable
    /// accuracy was reached before the stop tolerance.
    Stagnated,
    /// A step failed; history and bounds up to the failure are preserved.
    Failed(Error),
}

impl SolveStatus {
    pub fn is_converged(&self) -> bool {
        matches!(self, SolveStatus::Converged)
    }
}

/// Per-iterate snapshots for verification runs.
#[derive(Debug, Clone, Default)]
pub struct ArchivedRun {
    /// X_0, X_1, ..., X_K.
    pub x: Vec<BlockVector>,
    /// R_0, R_1, ..., R_K.
    pub r: Vec<BlockVector>,
    /// Direction blocks at the start of each step: P_0..P_{K-1}
    /// (S_0..S_{K-1} for Dubrulle-R).
    pub directions: Vec<BlockVector>,
}

/// Everything a solve produces.
#[derive(Debug)]
pub struct SolveOutput {
    pub x: BlockVector,
    pub history: Vec<IterationRecord>,
    pub bounds: BoundSeries,
    pub radau: Option<RadauSeries>,
    pub status: SolveStatus,
    /// Estimated onset of maximum attainable accuracy: the first iteration
    /// where an SPD monitor failed or the residual-divergence check fired.
    pub stagnation: Option<usize>,
    pub iterations: usize,
    pub r0_fro: f64,
    pub archive: Option<ArchivedRun>,
}

enum VariantState {
    Std(BcgState),
    Ol(OlbcgState),
    Dr(DrbcgState),
}

impl VariantState {
    fn step(&mut self, a: &SparseSpd, policy: SigmaPolicy) -> Result<IterationRecord> {
        match self {
            VariantState::Std(st) => bcg_step(st, a),
            VariantState::Ol(st) => olbcg_step(st, a, policy),
            VariantState::Dr(st) => drbcg_step(st, a),
        }
    }

    fn x(&self) -> &BlockVector {
        match self {
            VariantState::Std(st) => &st.x,
            VariantState::Ol(st) => &st.x,
            VariantState::Dr(st) => &st.x,
        }
    }

    fn residual(&self) -> BlockVector {
        match self {
            VariantState::Std(st) => st.r.clone(),
            VariantState::Ol(st) => st.r.clone(),
            VariantState::Dr(st) => st.residual(),
        }
    }

    fn direction(&self) -> &BlockVector {
        match self {
            VariantState::Std(st) => &st.p,
            VariantState::Ol(st) => &st.p,
            VariantState::Dr(st) => &st.s,
        }
    }

    fn into_x(self) -> BlockVector {
        match self {
            VariantState::Std(st) => st.x,
            VariantState::Ol(st) => st.x,
            VariantState::Dr(st) => st.x,
        }
    }
}

/// Run the configured variant until the stop criterion, stagnation, or
/// `max_iter`, computing delayed Gauss/Gauss-Radau bounds along the way.
///
/// Runtime failures do not discard work: they are returned as
/// `SolveStatus::Failed` inside the output, with the partial history and
/// bounds intact. `Err` is reserved for precondition violations.
pub fn solve(
    a: &SparseSpd,
    b: &BlockVector,
    x0: Option<&BlockVector>,
    config: &SolverConfig,
) -> Result<SolveOutput> {
    config.validate()?;
    if b.n() != a.n() {
        return Err(Error::DimensionMismatch(format!(
            "A order {} vs B rows {}",
            a.n(),
            b.n()
        )));
    }
    let x0 = match x0 {
        Some(x) => {
            if x.n() != a.n() || x.m() != b.m() {
                return Err(Error::DimensionMismatch(
                    "X_0 must match A's order and B's column count".into(),
                ));
            }
            x.clone()
        }
        None => BlockVector::zeros(a.n(), b.m()),
    };

    let r0 = b.sub(&a.spmm(&x0)?);
    // Full column rank of R_0 is a precondition of every variant.
    r0.qr_thin()?;
    let r0_fro = r0.frobenius_norm();
    let rtr0 = r0.gram();

    let mut state = match config.variant {
        Variant::Standard => VariantState::Std(BcgState::new(a, b, &x0)?),
        Variant::OLeary => VariantState::Ol(OlbcgState::new(a, b, &x0, config.sigma_policy)?),
        Variant::DubrulleR => VariantState::Dr(DrbcgState::new(a, b, &x0)?),
    };

    let mut radau_state: Option<RadauState> = match config.mu {
        Some(mu) => Some(radau_init(mu, &rtr0)?),
        None => None,
    };
    let mut radau_series = radau_state.as_ref().map(RadauSeries::begin);

    let mut history: Vec<IterationRecord> = Vec::new();
    let mut bounds = BoundSeries::new(config.delay);
    let mut archive = config.archive.then(|| ArchivedRun {
        x: vec![x0.clone()],
        r: vec![r0.clone()],
        directions: Vec::new(),
    });

    let mut stagnation: Option<usize> = None;
    let mut monitor_ok = true;
    let mut baseline_lb: Option<Vec<f64>> = None;
    let mut status = SolveStatus::MaxIterReached;

    for k in 1..=config.max_iter {
        // The direction consumed by step k is the state's before stepping;
        // it is archived only once the step succeeds, so the archive always
        // holds exactly one direction per completed iteration.
        let direction = archive.is_some().then(|| state.direction().clone());
        let record = match state.step(a, config.sigma_policy) {
            Ok(rec) => rec,
            Err(e) => {
                status = SolveStatus::Failed(e);
                break;
            }
        };
        if let Some(ref mut arch) = archive {
            arch.directions.push(direction.expect("cloned above"));
            arch.x.push(state.x().clone());
            arch.r.push(state.residual());
        }

        // Validity monitors: Theta_{k-1}, Theta_{k-1}^{(mu)} - Theta_{k-1}
        // (inside radau_step), and B_k^{(mu)}.
        let mut step_ok = record.theta.cholesky().is_ok();
        if let Some(ref mut rst) = radau_state {
            let prev_theta_mu = rst.theta_mu().clone();
            match radau_step(rst, &record) {
                Ok(()) => {
                    let gap = prev_theta_mu.sub(&record.theta).symmetrize();
                    let b_k = gap.sub(rst.theta_mu()).symmetrize();
                    if !rst.is_valid() || b_k.cholesky().is_err() {
                        step_ok = false;
                    }
                    radau_series.as_mut().unwrap().push(rst);
                }
                Err(_) => {
                    // The estimate chain broke; the iterates themselves are
                    // unaffected, so disable the Radau side and continue.
                    step_ok = false;
                    radau_state = None;
                }
            }
        }
        if !step_ok && stagnation.is_none() {
            stagnation = Some(k);
        }
        monitor_ok &= step_ok;
        let residual_fro = record.residual_fro;
        history.push(record);

        // Emit the bound for iterate k - d.
        if k >= config.delay {
            let target = k - config.delay + 1;
            let per_col = delayed_bounds(
                &history,
                radau_series
                    .as_ref()
                    .filter(|s| s.theta_mu.len() > k)
                    .map(|s| s as _),
                config.delay,
                target,
            )?;
            if target == 1 {
                baseline_lb = Some(per_col.iter().map(|(lo, _)| *lo).collect());
            }
            let radau_ok = radau_series
                .as_ref()
                .map(|s| s.theta_mu.len() > k && s.first_invalid().is_none())
                .unwrap_or(false);
            for (col, (lower, upper)) in per_col.iter().enumerate() {
                bounds.points.push(BoundPoint {
                    iteration: target - 1,
                    column: col,
                    gauss_lower: *lower,
                    radau_upper: *upper,
                    gauss_valid: monitor_ok || stagnation.is_none_or(|s| k < s),
                    radau_valid: radau_ok,
                    delay_used: config.delay,
                });
            }
            // Stop on the delayed Gauss estimate relative to iterate 0.
            if monitor_ok {
                if let Some(ref base) = baseline_lb {
                    let rel = per_col
                        .iter()
                        .zip(base)
                        .map(|((lo, _), b)| lo / b.max(ABS_FLOOR))
                        .fold(0.0_f64, f64::max);
                    if rel <= config.stop_tol {
                        status = SolveStatus::Converged;
                        break;
                    }
                }
            }
        }
        // Fallbacks: an exactly zero residual, or the relative residual once
        // the bound estimates are no longer trustworthy.
        if residual_fro == 0.0
            || (!monitor_ok && residual_fro <= config.stop_tol * r0_fro.max(ABS_FLOOR))
        {
            status = SolveStatus::Converged;
            break;
        }

        // Attainable-accuracy detector: recompute the true residual.
        if k % RECOMPUTE_INTERVAL == 0 {
            let r_true = b.sub(&a.spmm(state.x())?);
            let gap = r_true.sub(&state.residual()).frobenius_norm();
            if gap > DIVERGENCE_TOL * b.frobenius_norm().max(ABS_FLOOR) {
                if stagnation.is_none() {
                    stagnation = Some(k);
                }
                status = SolveStatus::Stagnated;
                break;
            }
        }
    }

    let iterations = history.len();
    Ok(SolveOutput {
        x: state.into_x(),
        history,
        bounds,
        radau: radau_series,
        status,
        stagnation,
        iterations,
        r0_fro,
        archive,
    })
}

/// Reconstruct the block Lanczos coefficients (Delta_k, Gamma_k, Omega_k)
/// from a BCG history:
///
///   Delta_k = Phi_{k-1} Upsilon_{k-1}^{-1} Phi_{k-1}^{-1}
///   Gamma_k = the unique upper triangular factor with positive diagonal of
///             C^T (R_k^T R_k) C,  C = Upsilon_{k-1}^{-1} Phi_{k-1}^{-1}
///   Omega_k = Delta_k + Gamma_{k-1} Delta_{k-1}^{-1} Gamma_{k-1}^T
///   Phi_k   = Gamma_k Phi_{k-1} Upsilon_{k-1}
///
/// starting from Phi_0 = upper-Cholesky(R_0^T R_0). In exact arithmetic this
/// reproduces the blocks of the Lanczos recurrence started at V_1 = R_0
/// Phi_0^{-1} with the same QR sign convention.
pub fn coefficient_bridge(history: &[IterationRecord]) -> Result<BlockTridiagonal> {
    assert!(
        !history.is_empty(),
        "history must contain at least one record"
    );
    let phi0 = history[0]
        .rtr
        .upper_cholesky()
        .map_err(|_| Error::SingularPhi(0))?;

    let mut phi_prev = phi0;
    let mut deltas: Vec<SmallBlock> = Vec::with_capacity(history.len());
    let mut gammas: Vec<SmallBlock> = Vec::new();
    let mut omegas: Vec<SmallBlock> = Vec::with_capacity(history.len());

    for (idx, rec) in history.iter().enumerate() {
        let k = idx + 1;
        // Delta_k = Phi Upsilon^{-1} Phi^{-1}
        let t1 = rec
            .upsilon
            .transpose()
            .solve(&phi_prev.transpose())?
            .transpose();
        let delta = phi_prev
            .transpose()
            .solve(&t1.transpose())?
            .transpose()
            .symmetrize();
        let omega = if idx == 0 {
            delta.clone()
        } else {
            let g = &gammas[idx - 1];
            let z = deltas[idx - 1].solve(&g.transpose())?;
            delta.add(&g.mul(&z)).symmetrize()
        };
        omegas.push(omega);
        deltas.push(delta);

        if idx + 1 < history.len() {
            // Gram of Gamma_k: C^T (R_k^T R_k) C by nested solves.
            let rtr_next = &history[idx + 1].rtr;
            let w1 = rec.upsilon.transpose().solve(rtr_next)?;
            let w2 = rec.upsilon.transpose().solve(&w1.transpose())?.transpose();
            let w3 = phi_prev.transpose().solve(&w2)?;
            let gram = phi_prev.transpose().solve(&w3.transpose())?.transpose();
            let gamma = gram
                .symmetrize()
                .upper_cholesky()
                .map_err(|_| Error::SingularPhi(k))?;
            // Phi_k = Gamma_k Phi_{k-1} Upsilon_{k-1}
            phi_prev = gamma.mul(&phi_prev).mul(&rec.upsilon);
            gammas.push(gamma);
        }
    }
    Ok(BlockTridiagonal::from_parts(omegas, gammas))
}
