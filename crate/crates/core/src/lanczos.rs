//! Block Lanczos: the three-term block recurrence, the block tridiagonal
//! matrix it accumulates, its LDL^T-style factorization, leading blocks of
//! inverses, and the Gauss-Radau diagonal extension.

use crate::block::BlockVector;
use crate::dense::{SmallBlock, ABS_FLOOR};
use crate::error::{Error, Result};
use crate::sparse::SparseSpd;

/// Relative threshold on ||W_k||_F (against ||A V_k||_F) below which the
/// recurrence is declared terminated: the block Krylov space is invariant.
const TERMINATION_TOL: f64 = 1e-12;

/// Symmetric block tridiagonal matrix: diagonal blocks `diag[0..k]` and
/// subdiagonal blocks `sub[0..k-1]` (upper triangular by the QR convention).
#[derive(Debug, Clone)]
pub struct BlockTridiagonal {
    m: usize,
    diag: Vec<SmallBlock>,
    sub: Vec<SmallBlock>,
}

impl BlockTridiagonal {
    pub fn new(m: usize) -> Self {
        assert!(m > 0);
        Self {
            m,
            diag: Vec::new(),
            sub: Vec::new(),
        }
    }

    pub fn from_parts(diag: Vec<SmallBlock>, sub: Vec<SmallBlock>) -> Self {
        assert!(!diag.is_empty());
        let m = diag[0].rows();
        assert_eq!(
            sub.len() + 1,
            diag.len(),
            "need one fewer subdiagonal block"
        );
        for d in &diag {
            assert_eq!((d.rows(), d.cols()), (m, m));
            assert!(d.is_symmetric(), "diagonal blocks must be symmetric");
        }
        for s in &sub {
            assert_eq!((s.rows(), s.cols()), (m, m));
        }
        Self { m, diag, sub }
    }

    /// Scalar (m = 1) tridiagonal from diagonal and subdiagonal entries.
    pub fn scalar(diag: &[f64], sub: &[f64]) -> Self {
        Self::from_parts(
            diag.iter().map(|&d| SmallBlock::scalar(d)).collect(),
            sub.iter().map(|&s| SmallBlock::scalar(s)).collect(),
        )
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    /// Number of block rows k.
    #[inline]
    pub fn k(&self) -> usize {
        self.diag.len()
    }

    /// Order of the dense expansion, k*m.
    pub fn order(&self) -> usize {
        self.k() * self.m
    }

    pub fn diag_block(&self, j: usize) -> &SmallBlock {
        &self.diag[j]
    }

    pub fn sub_block(&self, j: usize) -> &SmallBlock {
        &self.sub[j]
    }

    pub fn push_diag(&mut self, omega: SmallBlock) {
        assert_eq!((omega.rows(), omega.cols()), (self.m, self.m));
        self.diag.push(omega);
    }

    pub fn push_sub(&mut self, gamma: SmallBlock) {
        assert_eq!((gamma.rows(), gamma.cols()), (self.m, self.m));
        self.sub.push(gamma);
    }

    /// Leading j-block principal submatrix.
    pub fn prefix(&self, j: usize) -> BlockTridiagonal {
        assert!(j >= 1 && j <= self.k());
        BlockTridiagonal {
            m: self.m,
            diag: self.diag[..j].to_vec(),
            sub: self.sub[..j - 1].to_vec(),
        }
    }

    /// Dense expansion, verification scale only.
    pub fn to_dense(&self) -> SmallBlock {
        let k = self.k();
        let m = self.m;
        let n = k * m;
        let mut t = SmallBlock::zeros(n, n);
        for (bj, d) in self.diag.iter().enumerate() {
            for i in 0..m {
                for j in 0..m {
                    t.set(bj * m + i, bj * m + j, d.get(i, j));
                }
            }
        }
        for (bj, g) in self.sub.iter().enumerate() {
            // Gamma_{bj+1} sits at block (bj+1, bj); its transpose above.
            for i in 0..m {
                for j in 0..m {
                    t.set((bj + 1) * m + i, bj * m + j, g.get(i, j));
                    t.set(bj * m + j, (bj + 1) * m + i, g.get(i, j));
                }
            }
        }
        t
    }

    /// Dense expansion of the one-step extension by (Gamma_k, new diagonal
    /// block), e.g. the Gauss-Radau matrix from [`radau_extend`].
    pub fn to_dense_extended(&self, gamma_k: &SmallBlock, omega_next: &SmallBlock) -> SmallBlock {
        let k = self.k();
        let m = self.m;
        let n = (k + 1) * m;
        let base = self.to_dense();
        let mut t = SmallBlock::zeros(n, n);
        for i in 0..k * m {
            for j in 0..k * m {
                t.set(i, j, base.get(i, j));
            }
        }
        for i in 0..m {
            for j in 0..m {
                t.set(k * m + i, (k - 1) * m + j, gamma_k.get(i, j));
                t.set((k - 1) * m + j, k * m + i, gamma_k.get(i, j));
                t.set(k * m + i, k * m + j, omega_next.get(i, j));
            }
        }
        t
    }
}

/// Block LDL^T-style factorization of a block tridiagonal matrix:
/// `Delta_1 = Omega_1`, `Delta_j = Omega_j - Gamma_{j-1} Delta_{j-1}^{-1}
/// Gamma_{j-1}^T`, with `Pi_j = Gamma_j Delta_j^{-1}`.
#[derive(Debug, Clone)]
pub struct BlockLdlt {
    pub delta: Vec<SmallBlock>,
    pub pi: Vec<SmallBlock>,
}

pub fn block_ldlt(t: &BlockTridiagonal) -> Result<BlockLdlt> {
    let k = t.k();
    let mut delta: Vec<SmallBlock> = Vec::with_capacity(k);
    let mut pi: Vec<SmallBlock> = Vec::with_capacity(k.saturating_sub(1));
    for j in 0..k {
        let d = if j == 0 {
            t.diag_block(0).clone()
        } else {
            let gamma = t.sub_block(j - 1);
            // Z = Delta_{j-1}^{-1} Gamma_{j-1}^T via a solve
            let z = delta[j - 1].solve(&gamma.transpose())?;
            pi.push(z.transpose());
            t.diag_block(j).sub(&gamma.mul(&z)).symmetrize()
        };
        // SPD gate; the pivot index is remapped to the failing block.
        if let Err(e) = d.cholesky() {
            return Err(match e {
                Error::NotPositiveDefinite(_) => Error::NotPositiveDefinite(j),
                other => other,
            });
        }
        delta.push(d);
    }
    Ok(BlockLdlt { delta, pi })
}

/// Leading m-by-m block of T^{-1}, computed through the block factorization
/// (forward then back substitution on the first block column of the identity).
pub fn inv11(t: &BlockTridiagonal) -> Result<SmallBlock> {
    let fac = block_ldlt(t)?;
    let k = t.k();
    let m = t.m();
    let eye = SmallBlock::identity(m);
    // Forward: Ltilde Z = E_1
    let mut z: Vec<SmallBlock> = Vec::with_capacity(k);
    z.push(fac.delta[0].solve(&eye)?);
    for j in 1..k {
        let w = t.sub_block(j - 1).mul(&z[j - 1]);
        z.push(fac.delta[j].solve(&w)?.scaled(-1.0));
    }
    // Back: Ltilde^T Y = diag(Delta) Z, i.e. Y_k = Z_k and
    // Y_j = Z_j - Delta_j^{-1} Gamma_j^T Y_{j+1}.
    let mut y_next = z[k - 1].clone();
    for j in (0..k - 1).rev() {
        let w = t.sub_block(j).transpose().mul(&y_next);
        y_next = z[j].sub(&fac.delta[j].solve(&w)?);
    }
    Ok(y_next)
}

/// Difference `[T_{k+1}^{-1}]_{1,1} - [T_k^{-1}]_{1,1}` by the rank-m update
/// formula, without forming `T_{k+1}`:
/// `[Y]_1 Gamma_k^T [Omega_{k+1} - Gamma_k [Y]_k Gamma_k^T]^{-1} Gamma_k [Y]_1^T`
/// with `Y = T_k^{-1} E_k`.
pub fn inv11_update(
    t: &BlockTridiagonal,
    omega_next: &SmallBlock,
    gamma_k: &SmallBlock,
) -> Result<SmallBlock> {
    let fac = block_ldlt(t)?;
    let k = t.k();
    // Y = T_k^{-1} E_k: forward pass gives Z_j = 0 for j < k, Z_k = Delta_k^{-1};
    // back substitution fills Y_j = -Delta_j^{-1} Gamma_j^T Y_{j+1}.
    let y_k = fac.delta[k - 1].solve(&SmallBlock::identity(t.m()))?;
    let mut y_1 = y_k.clone();
    for j in (0..k - 1).rev() {
        let w = t.sub_block(j).transpose().mul(&y_1);
        y_1 = fac.delta[j].solve(&w)?.scaled(-1.0);
    }
    let bracket = omega_next
        .sub(&gamma_k.mul(&y_k).mul(&gamma_k.transpose()))
        .symmetrize();
    let w = gamma_k.mul(&y_1.transpose());
    let x = bracket.solve(&w)?;
    Ok(w.transpose().mul(&x).symmetrize())
}

/// Whether the shifted factorization of T - mu I stays SPD, i.e. whether mu
/// lies strictly below every Ritz value of T.
pub fn shift_is_below_ritz(t: &BlockTridiagonal, mu: f64) -> bool {
    shifted_delta_chain(t, mu).is_ok()
}

/// Diagonal blocks of the factorization of T - mu I.
fn shifted_delta_chain(t: &BlockTridiagonal, mu: f64) -> Result<Vec<SmallBlock>> {
    let k = t.k();
    let mut chain: Vec<SmallBlock> = Vec::with_capacity(k);
    for j in 0..k {
        let d = if j == 0 {
            t.diag_block(0).shifted(mu)
        } else {
            let gamma = t.sub_block(j - 1);
            let z = chain[j - 1]
                .solve(&gamma.transpose())
                .map_err(|_| Error::ShiftNotBelowSpectrum { mu, block: j - 1 })?;
            t.diag_block(j).shifted(mu).sub(&gamma.mul(&z)).symmetrize()
        };
        if d.cholesky().is_err() {
            return Err(Error::ShiftNotBelowSpectrum { mu, block: j });
        }
        chain.push(d);
    }
    Ok(chain)
}

/// Modified diagonal block `Omega_{k+1}^{(mu)} = mu I + Gamma_k
/// [(T_k - mu I)^{-1}]_{k,k} Gamma_k^T` that gives the extended matrix the
/// prescribed eigenvalue mu with multiplicity m.
///
/// The trailing block of the shifted inverse is taken from the shifted
/// factorization; `(T - mu I)^{-1}` is never formed. Fails with
/// `ShiftNotBelowSpectrum` when mu is not below the Ritz values.
pub fn radau_extend(t: &BlockTridiagonal, gamma_k: &SmallBlock, mu: f64) -> Result<SmallBlock> {
    if mu <= 0.0 {
        return Err(Error::NonPositiveMu(mu));
    }
    let chain = shifted_delta_chain(t, mu)?;
    let last = chain.last().expect("chain is nonempty");
    let z = last.solve(&gamma_k.transpose())?;
    let mut omega = gamma_k.mul(&z);
    for i in 0..omega.rows() {
        omega.set(i, i, omega.get(i, i) + mu);
    }
    Ok(omega.symmetrize())
}

/// Why the recurrence stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationKind {
    /// The whole block W_q vanished: the block Krylov subspace is invariant
    /// and A V_q = V_q T_q holds (up to the termination tolerance).
    InvariantSubspace,
    /// Some column of W_q became dependent while others still carried
    /// weight. Deflation is out of scope, so the recurrence stops; the
    /// accumulated T_q is a plain truncation, not an exact invariance.
    RankDeficient,
}

/// One solve's block Lanczos state. Streaming mode keeps only the two live
/// basis blocks; archival mode stores the whole basis for reorthogonalization
/// and verification.
#[derive(Debug, Clone)]
pub struct LanczosState {
    v_prev: BlockVector,
    v_cur: BlockVector,
    gamma_prev: SmallBlock,
    phi0: SmallBlock,
    blocks: BlockTridiagonal,
    k: usize,
    terminated: Option<(usize, TerminationKind)>,
    archive: Option<Vec<BlockVector>>,
}

/// Result of one Lanczos step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LanczosOutcome {
    Advanced,
    /// The recurrence stopped after q steps; see
    /// [`LanczosState::termination_kind`] for whether this was true
    /// invariant-subspace exhaustion or a partial rank deficiency.
    Terminated(usize),
}

impl LanczosState {
    /// Pending subdiagonal block Gamma_k produced by the latest step (the
    /// R factor of W_k); Gamma_0 = Phi_0 right after init.
    pub fn gamma_pending(&self) -> &SmallBlock {
        &self.gamma_prev
    }

    pub fn phi0(&self) -> &SmallBlock {
        &self.phi0
    }

    pub fn blocks(&self) -> &BlockTridiagonal {
        &self.blocks
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn terminated(&self) -> Option<usize> {
        self.terminated.map(|(q, _)| q)
    }

    pub fn termination_kind(&self) -> Option<TerminationKind> {
        self.terminated.map(|(_, kind)| kind)
    }

    pub fn v_current(&self) -> &BlockVector {
        &self.v_cur
    }

    /// Archived basis blocks V_1..V_{k+1} (archival mode only).
    pub fn basis(&self) -> Option<&[BlockVector]> {
        self.archive.as_deref()
    }
}

/// Start the recurrence: V_1 Gamma_0 = V by thin QR. When V is the initial
/// residual R_0, Gamma_0 is the factor Phi_0 with R_0^T R_0 = Phi_0^T Phi_0.
pub fn lanczos_init(a: &SparseSpd, v: &BlockVector) -> Result<LanczosState> {
    init_impl(a, v, false)
}

/// As [`lanczos_init`], but storing the basis so steps may reorthogonalize.
pub fn lanczos_init_archival(a: &SparseSpd, v: &BlockVector) -> Result<LanczosState> {
    init_impl(a, v, true)
}

fn init_impl(a: &SparseSpd, v: &BlockVector, archival: bool) -> Result<LanczosState> {
    if v.n() != a.n() {
        return Err(Error::DimensionMismatch(format!(
            "A order {} vs starting block rows {}",
            a.n(),
            v.n()
        )));
    }
    let (v1, gamma0) = v.qr_thin()?;
    let m = v.m();
    Ok(LanczosState {
        v_prev: BlockVector::zeros(v.n(), m),
        v_cur: v1.clone(),
        gamma_prev: gamma0.clone(),
        phi0: gamma0,
        blocks: BlockTridiagonal::new(m),
        k: 0,
        terminated: None,
        archive: archival.then(|| vec![v1]),
    })
}

/// Advance the recurrence by one step:
/// W = A V_k - V_{k-1} Gamma_{k-1}^T, Omega_k = V_k^T W,
/// W_k = W - V_k Omega_k, V_{k+1} Gamma_k = qr(W_k).
///
/// With `reorthogonalize` set (archival states only), W_k is re-projected
/// against every stored basis block, twice, before the QR. Rank deficiency
/// of W_k terminates the recurrence (deflation is out of scope), reported
/// as `LanczosOutcome::Terminated(q)` with the kind recorded on the state,
/// never as an error.
pub fn lanczos_step(
    state: &mut LanczosState,
    a: &SparseSpd,
    reorthogonalize: bool,
) -> Result<LanczosOutcome> {
    if let Some((q, _)) = state.terminated {
        return Ok(LanczosOutcome::Terminated(q));
    }
    if reorthogonalize && state.archive.is_none() {
        return Err(Error::ArchiveRequired);
    }
    let k = state.k + 1;

    let av = a.spmm(&state.v_cur)?;
    let av_scale = av.frobenius_norm();
    let mut w = av;
    if k > 1 {
        w.sub_assign_mul(&state.v_prev, &state.gamma_prev.transpose());
    }
    let omega = state.v_cur.gram_with(&w).symmetrize();
    w.sub_assign_mul(&state.v_cur, &omega);

    if reorthogonalize {
        let basis = state.archive.as_ref().unwrap();
        for _ in 0..2 {
            for vj in basis {
                let proj = vj.gram_with(&w);
                w.sub_assign_mul(vj, &proj);
            }
        }
    }

    // T_k is complete once Omega_k is in place.
    if k >= 2 {
        state.blocks.push_sub(state.gamma_prev.clone());
    }
    state.blocks.push_diag(omega);
    state.k = k;

    if w.frobenius_norm() <= TERMINATION_TOL * av_scale.max(ABS_FLOOR) {
        state.terminated = Some((k, TerminationKind::InvariantSubspace));
        return Ok(LanczosOutcome::Terminated(k));
    }
    match w.qr_thin() {
        Ok((v_next, gamma)) => {
            state.v_prev = std::mem::replace(&mut state.v_cur, v_next);
            state.gamma_prev = gamma;
            if let Some(ref mut basis) = state.archive {
                basis.push(state.v_cur.clone());
            }
            Ok(LanczosOutcome::Advanced)
        }
        Err(Error::RankDeficient(_)) => {
            state.terminated = Some((k, TerminationKind::RankDeficient));
            Ok(LanczosOutcome::Terminated(k))
        }
        Err(e) => Err(e),
    }
}
