//! Per-column lower and upper bounds on the A-norm of the error, from the
//! block Gauss rule (lower) and the block Gauss-Radau rule with prescribed
//! node mu (upper), with delay-window accumulation and validity monitoring.

use crate::block::BlockVector;
use crate::cg::IterationRecord;
use crate::dense::{jacobi_eigen, SmallBlock};
use crate::error::{Error, Result};
use crate::sparse::SparseSpd;

/// Theta_{k-1} = (R_{k-1}^T R_{k-1}) Upsilon_{k-1}, symmetrized.
///
/// Its diagonal entries are the one-step Gauss lower bounds on the squared
/// column A-norm errors at iteration k-1.
pub fn gauss_theta(record: &IterationRecord) -> SmallBlock {
    gauss_theta_from(&record.rtr, &record.upsilon)
}

pub(crate) fn gauss_theta_from(rtr: &SmallBlock, upsilon: &SmallBlock) -> SmallBlock {
    rtr.mul(upsilon).symmetrize()
}

/// Running state of the Gauss-Radau recurrence.
#[derive(Debug, Clone)]
pub struct RadauState {
    mu: f64,
    upsilon_mu: SmallBlock,
    theta_mu: SmallBlock,
    valid: bool,
    k: usize,
}

impl RadauState {
    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Theta_k^{(mu)} for the current k.
    pub fn theta_mu(&self) -> &SmallBlock {
        &self.theta_mu
    }

    /// Upsilon_k^{(mu)} for the current k.
    pub fn upsilon_mu(&self) -> &SmallBlock {
        &self.upsilon_mu
    }

    /// False once Theta^{(mu)} - Theta first failed its SPD test. Invalidity
    /// is reported, not raised: the bounds remain useful up to that point.
    pub fn is_valid(&self) -> bool {
        self.valid
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

/// Start the Gauss-Radau recurrence: Upsilon_0^{(mu)} = mu^{-1} I and
/// Theta_0^{(mu)} = (R_0^T R_0) mu^{-1}.
pub fn radau_init(mu: f64, rtr0: &SmallBlock) -> Result<RadauState> {
    if mu <= 0.0 {
        return Err(Error::NonPositiveMu(mu));
    }
    let m = rtr0.rows();
    Ok(RadauState {
        mu,
        upsilon_mu: SmallBlock::identity(m).scaled(1.0 / mu),
        theta_mu: rtr0.scaled(1.0 / mu),
        valid: true,
        k: 0,
    })
}

/// Advance the recurrence by one iteration using record k:
///
/// `Upsilon_k^{(mu)} = [mu (Theta_{k-1}^{(mu)} - Theta_{k-1}) + R_k^T R_k]^{-1}
///                     (Theta_{k-1}^{(mu)} - Theta_{k-1})`
/// `Theta_k^{(mu)}   = (R_k^T R_k) Upsilon_k^{(mu)}`
///
/// This Theta-form uses only symmetric operands; R_k^T R_k is recovered as
/// (R_{k-1}^T R_{k-1}) Xi_k. The state is marked invalid (not an error) the
/// first time Theta_{k-1}^{(mu)} - Theta_{k-1} fails its SPD test.
pub fn radau_step(state: &mut RadauState, record: &IterationRecord) -> Result<()> {
    let gap = state.theta_mu.sub(&record.theta).symmetrize();
    if state.valid && gap.cholesky().is_err() {
        state.valid = false;
    }
    let rtr_next = record.rtr.mul(&record.xi).symmetrize();
    let bracket = gap.scaled(state.mu).add(&rtr_next);
    let upsilon_mu = bracket
        .solve(&gap)
        .map_err(|_| Error::SingularBracket(record.k))?;
    state.theta_mu = rtr_next.mul(&upsilon_mu).symmetrize();
    state.upsilon_mu = upsilon_mu;
    state.k = record.k;
    Ok(())
}

/// The equivalent Upsilon-form recurrence, kept as an independent cross-check
/// of [`radau_step`]:
/// `[mu (Upsilon_{k-1}^{(mu)} - Upsilon_{k-1}) + Xi_k]^{-1}
///  (Upsilon_{k-1}^{(mu)} - Upsilon_{k-1})`.
pub fn radau_step_upsilon_form(state: &RadauState, record: &IterationRecord) -> Result<SmallBlock> {
    let du = state.upsilon_mu.sub(&record.upsilon);
    let bracket = du.scaled(state.mu).add(&record.xi);
    bracket
        .solve(&du)
        .map_err(|_| Error::SingularBracket(record.k))
}

/// Per-iteration Gauss-Radau quantities collected over a run.
/// `theta_mu[j]` is Theta_j^{(mu)}; index 0 comes from [`radau_init`].
#[derive(Debug, Clone)]
pub struct RadauSeries {
    pub mu: f64,
    pub theta_mu: Vec<SmallBlock>,
    pub upsilon_mu: Vec<SmallBlock>,
    /// Validity at each index; false from the first SPD failure onward.
    pub valid: Vec<bool>,
}

impl RadauSeries {
    pub fn begin(state: &RadauState) -> Self {
        Self {
            mu: state.mu,
            theta_mu: vec![state.theta_mu.clone()],
            upsilon_mu: vec![state.upsilon_mu.clone()],
            valid: vec![true],
        }
    }

    pub fn push(&mut self, state: &RadauState) {
        self.theta_mu.push(state.theta_mu.clone());
        self.upsilon_mu.push(state.upsilon_mu.clone());
        self.valid.push(state.is_valid());
    }

    /// Run the recurrence over a whole history at once.
    pub fn over_history(mu: f64, history: &[IterationRecord]) -> Result<Self> {
        assert!(!history.is_empty());
        let mut state = radau_init(mu, &history[0].rtr)?;
        let mut series = Self::begin(&state);
        for record in history {
            radau_step(&mut state, record)?;
            series.push(&state);
        }
        Ok(series)
    }

    pub fn first_invalid(&self) -> Option<usize> {
        self.valid.iter().position(|v| !v)
    }
}

/// One reported bound: A-norm scale, for one column at one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundPoint {
    pub iteration: usize,
    pub column: usize,
    pub gauss_lower: f64,
    pub radau_upper: Option<f64>,
    pub gauss_valid: bool,
    pub radau_valid: bool,
    pub delay_used: usize,
}

/// Bound history of a solve, one point per (iteration, column).
#[derive(Debug, Clone, Default)]
pub struct BoundSeries {
    pub delay: usize,
    pub points: Vec<BoundPoint>,
}

impl BoundSeries {
    pub fn new(delay: usize) -> Self {
        Self {
            delay,
            points: Vec::new(),
        }
    }

    pub fn for_iteration(&self, iteration: usize) -> impl Iterator<Item = &BoundPoint> {
        self.points.iter().filter(move |p| p.iteration == iteration)
    }

    pub fn last_iteration(&self) -> Option<usize> {
        self.points.last().map(|p| p.iteration)
    }
}

/// Delayed bounds for the error at iterate k-1, using iterations through
/// l = k-1+d:
///
/// lower_i^2 = sum_{j=k-1}^{l-1} diag_i(Theta_j)
/// upper_i^2 = lower_i^2 + diag_i(Theta_l^{(mu)})
///
/// Reported on the A-norm scale (square roots of the accumulated squares).
/// With d = 1 this is the classic "at iteration k, bound the error at k-1".
pub fn delayed_bounds(
    history: &[IterationRecord],
    radau: Option<&RadauSeries>,
    d: usize,
    k: usize,
) -> Result<Vec<(f64, Option<f64>)>> {
    assert!(k >= 1, "target iteration is 1-based");
    assert!(d >= 1, "delay must be at least 1");
    let l = k - 1 + d;
    if history.len() < l {
        return Err(Error::InsufficientHistory {
            need: l,
            have: history.len(),
        });
    }
    let m = history[0].theta.rows();
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let mut lower_sq = 0.0;
        for record in &history[k - 1..l] {
            lower_sq += record.theta.get(i, i);
        }
        let upper_sq = match radau {
            Some(series) => {
                if series.theta_mu.len() <= l {
                    return Err(Error::InsufficientHistory {
                        need: l + 1,
                        have: series.theta_mu.len(),
                    });
                }
                Some(lower_sq + series.theta_mu[l].get(i, i))
            }
            None => None,
        };
        out.push((
            lower_sq.max(0.0).sqrt(),
            upper_sq.map(|u| u.max(0.0).sqrt()),
        ));
    }
    Ok(out)
}

/// Validity of one monitored iteration.
#[derive(Debug, Clone)]
pub struct MonitorEntry {
    /// Iteration index j: the entry covers Theta_{j-1}, Theta_{j-1}^{(mu)} -
    /// Theta_{j-1}, and B_j^{(mu)}.
    pub j: usize,
    pub gauss_spd: bool,
    pub radau_gap_spd: Option<bool>,
    pub b_spd: Option<bool>,
    /// Smallest eigenvalue of B_j^{(mu)}, when computable.
    pub b_min_eig: Option<f64>,
}

impl MonitorEntry {
    pub fn all_ok(&self) -> bool {
        self.gauss_spd && self.radau_gap_spd.unwrap_or(true) && self.b_spd.unwrap_or(true)
    }
}

/// Positive-definiteness monitor report over a run.
#[derive(Debug, Clone)]
pub struct MonitorReport {
    pub entries: Vec<MonitorEntry>,
    /// First iteration where any SPD test failed: the estimated onset of
    /// maximum attainable accuracy. Diagnostic only.
    pub first_failure: Option<usize>,
}

/// Cholesky-test Theta_{j-1} (Gauss validity), Theta_{j-1}^{(mu)} -
/// Theta_{j-1}, and B_j^{(mu)} = (Theta_{j-1}^{(mu)} - Theta_{j-1}) -
/// Theta_j^{(mu)} (Radau validity) for every recorded iteration.
pub fn bound_monitor(history: &[IterationRecord], radau: Option<&RadauSeries>) -> MonitorReport {
    let mut entries = Vec::with_capacity(history.len());
    let mut first_failure = None;
    for record in history {
        let j = record.k;
        let gauss_spd = record.theta.cholesky().is_ok();
        let (radau_gap_spd, b_spd, b_min_eig) = match radau {
            Some(series) if series.theta_mu.len() > j => {
                let gap = series.theta_mu[j - 1].sub(&record.theta).symmetrize();
                let b = gap.sub(&series.theta_mu[j]).symmetrize();
                let min_eig = jacobi_eigen(&b).ok().map(|(vals, _)| vals[0]);
                (
                    Some(gap.cholesky().is_ok()),
                    Some(b.cholesky().is_ok()),
                    min_eig,
                )
            }
            _ => (None, None, None),
        };
        let entry = MonitorEntry {
            j,
            gauss_spd,
            radau_gap_spd,
            b_spd,
            b_min_eig,
        };
        if first_failure.is_none() && !entry.all_ok() {
            first_failure = Some(j);
        }
        entries.push(entry);
    }
    MonitorReport {
        entries,
        first_failure,
    }
}

/// Exact error matrix E_k = (X - X_k)^T A (X - X_k); verification only.
/// Diagonal entries are the squared column A-norm errors.
pub fn true_error_matrix(
    a: &SparseSpd,
    x_true: &BlockVector,
    x_k: &BlockVector,
) -> Result<SmallBlock> {
    let d = x_true.sub(x_k);
    let ad = a.spmm(&d)?;
    Ok(d.gram_with(&ad).symmetrize())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(k: usize, rtr: SmallBlock, upsilon: SmallBlock, xi: SmallBlock) -> IterationRecord {
        let theta = gauss_theta_from(&rtr, &upsilon);
        let residual_fro = 0.0;
        IterationRecord {
            k,
            rtr,
            upsilon,
            xi,
            theta,
            residual_fro,
        }
    }

    #[test]
    fn radau_init_values() {
        let st = radau_init(1.0, &SmallBlock::identity(2)).unwrap();
        assert!(
            st.upsilon_mu()
                .sub(&SmallBlock::identity(2))
                .frobenius_norm()
                < 1e-15
        );

        let st = radau_init(0.0205, &SmallBlock::identity(3)).unwrap();
        assert!((st.upsilon_mu().get(0, 0) - 1.0 / 0.0205).abs() < 1e-12);

        // m = 1, ||r_0|| = 1, mu = 0.25: Theta_0^{(mu)} = 4
        let st = radau_init(0.25, &SmallBlock::scalar(1.0)).unwrap();
        assert!((st.theta_mu().get(0, 0) - 4.0).abs() < 1e-15);

        assert!(matches!(
            radau_init(-1.0, &SmallBlock::identity(1)),
            Err(Error::NonPositiveMu(_))
        ));
    }

    #[test]
    fn radau_exact_on_two_point_spectrum() {
        // A = diag(mu, lambda) with the prescribed node at the exact lower
        // eigenvalue: after one CG step the rule is exact, so the upper bound
        // equals the true error. Hand-computed run with b = (1,1), x0 = 0,
        // mu = 1, lambda = 3:
        //   gamma_0 = 1/2, Theta_0 = 1, xi_1 = 1/4, E_0 = 4/3, E_1 = 1/3.
        let rtr0 = SmallBlock::scalar(2.0);
        let upsilon0 = SmallBlock::scalar(0.5);
        let xi1 = SmallBlock::scalar(0.25);
        let rec = record(1, rtr0, upsilon0, xi1);
        assert!((rec.theta.get(0, 0) - 1.0).abs() < 1e-15);

        let mut st = radau_init(1.0, &rec.rtr).unwrap();
        assert!((st.theta_mu().get(0, 0) - 2.0).abs() < 1e-15);
        radau_step(&mut st, &rec).unwrap();
        // Theta_1^{(mu)} = E_1 exactly
        assert!((st.theta_mu().get(0, 0) - 1.0 / 3.0).abs() < 1e-14);
        assert!(st.is_valid());

        // Upper bound at iterate 0 with l = 1: Theta_0 + Theta_1^{(mu)} = E_0.
        let series = {
            let mut s = RadauSeries::begin(&radau_init(1.0, &rec.rtr).unwrap());
            s.push(&st);
            s
        };
        let bounds = delayed_bounds(&[rec], Some(&series), 1, 1).unwrap();
        let (lower, upper) = bounds[0];
        assert!((lower - 1.0f64.sqrt()).abs() < 1e-14);
        assert!((upper.unwrap() - (4.0f64 / 3.0).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn upsilon_form_agrees_with_theta_form() {
        // Consistent records from a real run: the two recurrences must track
        // each other closely while the bounds are valid.
        let a = crate::io::poisson2d(4);
        let b = crate::io::random_rhs(16, 2, 9).unwrap();
        let cfg = crate::cg::SolverConfig {
            stop_tol: 0.0,
            max_iter: 6,
            ..crate::cg::SolverConfig::default()
        };
        let out = crate::cg::solve(&a, &b, None, &cfg).unwrap();
        let mu = 0.5 * crate::io::poisson2d_eigenvalues(4)[0];
        let mut st = radau_init(mu, &out.history[0].rtr).unwrap();
        for rec in &out.history {
            let cross = radau_step_upsilon_form(&st, rec).unwrap();
            radau_step(&mut st, rec).unwrap();
            let dev =
                cross.sub(st.upsilon_mu()).frobenius_norm() / st.upsilon_mu().frobenius_norm();
            assert!(dev <= 1e-8, "forms diverge at k={}: {dev}", rec.k);
        }
    }

    #[test]
    fn bound_monitor_identity_one_step() {
        // A = I converges in one step: B_1^{(mu)} ~ Theta_0^{(mu)} - Theta_0
        // because Theta_1^{(mu)} vanishes with R_1.
        let a = crate::sparse::SparseSpd::identity(4);
        let b = crate::io::random_rhs(4, 2, 5).unwrap();
        let cfg = crate::cg::SolverConfig {
            stop_tol: 1e-12,
            mu: Some(0.5),
            max_iter: 3,
            ..crate::cg::SolverConfig::default()
        };
        let out = crate::cg::solve(&a, &b, None, &cfg).unwrap();
        let series = out.radau.as_ref().unwrap();
        let gap0 = series.theta_mu[0].sub(&out.history[0].theta);
        let b1 = gap0.sub(&series.theta_mu[1]);
        let dev = b1.sub(&gap0).frobenius_norm() / gap0.frobenius_norm();
        assert!(dev <= 1e-12, "Theta_1^(mu) should vanish, dev {dev}");
        let report = bound_monitor(&out.history, out.radau.as_ref());
        assert!(report.entries[0].all_ok(), "first step must be valid");
    }

    #[test]
    fn gauss_theta_identity_step() {
        let a = crate::sparse::SparseSpd::identity(4);
        let b = crate::io::random_rhs(4, 2, 8).unwrap();
        let mut st =
            crate::cg::BcgState::new(&a, &b, &crate::block::BlockVector::zeros(4, 2)).unwrap();
        let rec = crate::cg::bcg_step(&mut st, &a).unwrap();
        let theta = gauss_theta(&rec);
        let btb = b.gram();
        assert!(theta.sub(&btb).frobenius_norm() <= 1e-12 * btb.frobenius_norm());
        assert_eq!(theta, rec.theta);
    }

    #[test]
    fn delayed_bounds_monotone_tightening() {
        // Larger delay: lower bounds grow, upper bounds shrink, and the
        // sandwich lower <= upper holds whenever both exist.
        let a = crate::io::poisson2d(5);
        let b = crate::io::random_rhs(25, 2, 6).unwrap();
        let mu = 0.5 * crate::io::poisson2d_eigenvalues(5)[0];
        let cfg = crate::cg::SolverConfig {
            stop_tol: 0.0,
            max_iter: 8,
            mu: Some(mu),
            ..crate::cg::SolverConfig::default()
        };
        let out = crate::cg::solve(&a, &b, None, &cfg).unwrap();
        let series = out.radau.as_ref().unwrap();
        for k in 1..=4usize {
            let mut prev: Option<Vec<(f64, Option<f64>)>> = None;
            for d in 1..=3usize {
                let cur = delayed_bounds(&out.history, Some(series), d, k).unwrap();
                for (lo, up) in &cur {
                    assert!(*lo <= up.unwrap() * (1.0 + 1e-12), "lower exceeds upper");
                }
                if let Some(p) = prev {
                    for ((lo1, up1), (lo0, up0)) in cur.iter().zip(&p) {
                        assert!(lo1 >= lo0, "lower bound must tighten with delay");
                        assert!(
                            up1.unwrap() <= up0.unwrap() * (1.0 + 1e-12),
                            "upper bound must tighten with delay"
                        );
                    }
                }
                prev = Some(cur);
            }
        }
    }

    #[test]
    fn delayed_bounds_exact_at_termination() {
        // Two-point spectrum, m = 1: CG terminates exactly at step 2, so the
        // summed Theta window reproduces the error exactly.
        let a = SparseSpd::diagonal(&[1.0, 3.0]).unwrap();
        let b = BlockVector::new(2, 1, vec![1.0, 1.0]);
        let cfg = crate::cg::SolverConfig {
            stop_tol: 0.0,
            max_iter: 2,
            ..crate::cg::SolverConfig::default()
        };
        let out = crate::cg::solve(&a, &b, None, &cfg).unwrap();
        assert_eq!(out.history.len(), 2);
        // E_0 = b^T A^{-1} b = 4/3; lower at iterate 0 with l = 2 covers it
        let bounds = delayed_bounds(&out.history, None, 2, 1).unwrap();
        assert!((bounds[0].0 * bounds[0].0 - 4.0 / 3.0).abs() < 1e-13);
    }

    #[test]
    fn delayed_bounds_insufficient_history() {
        let rec = record(
            1,
            SmallBlock::identity(1),
            SmallBlock::scalar(0.5),
            SmallBlock::scalar(0.5),
        );
        assert!(matches!(
            delayed_bounds(&[rec], None, 2, 1),
            Err(Error::InsufficientHistory { .. })
        ));
    }

    #[test]
    fn true_error_matrix_basics() {
        let a = crate::io::poisson2d(3);
        let b = crate::io::random_rhs(9, 2, 3).unwrap();
        let x = crate::io::dense_reference_solve(&a, &b).unwrap();
        // zero at the solution
        let e = true_error_matrix(&a, &x, &x).unwrap();
        assert!(e.frobenius_norm() < 1e-20);
        // E_0 = X^T A X = X^T B at X_0 = 0
        let e0 = true_error_matrix(&a, &x, &BlockVector::zeros(9, 2)).unwrap();
        let xtb = x.gram_with(&b).symmetrize();
        assert!(e0.sub(&xtb).frobenius_norm() <= 1e-10 * xtb.frobenius_norm());
    }

    #[test]
    fn true_error_diag_example() {
        // A = diag(2,4), b = (1,1): E_0 = b^T A^{-1} b = 3/4
        let a = SparseSpd::diagonal(&[2.0, 4.0]).unwrap();
        let x = BlockVector::new(2, 1, vec![0.5, 0.25]);
        let e0 = true_error_matrix(&a, &x, &BlockVector::zeros(2, 1)).unwrap();
        assert!((e0.get(0, 0) - 0.75).abs() < 1e-15);
    }
}
