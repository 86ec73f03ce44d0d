//! Discrete-time LQR with cross weight `N = 0`: stationary and time-varying
//! Riccati solutions, the feedback law `u = -K x`, Cholesky-parameterized
//! weights and the sensitivities of the gains to those weights.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use thiserror::Error;

use crate::plant::{PendulumParams, PlantState, StageCost};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiccatiError {
    #[error("(A, B) is not stabilizable: closed-loop spectral radius {0}")]
    NotStabilizable(f64),
    #[error("Riccati iteration did not converge, residual {0:e}")]
    NoConvergence(f64),
    #[error("R + B'SB is not positive definite")]
    SingularInnerMatrix,
    #[error("Jacobian of the Riccati system is singular")]
    SingularJacobian,
    #[error("dimension mismatch: {0}")]
    Dimension(&'static str),
}

pub type Result<T> = std::result::Result<T, RiccatiError>;

const DOUBLING_ITERATIONS: usize = 80;
const NEWTON_ITERATIONS: usize = 6;

/// Residual threshold (induced infinity norm, scaled by `max(1, max|S|)`) for
/// an accepted DARE solution.
pub const DARE_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct DareSolution {
    pub s: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub residual: f64,
}

/// Finite-horizon Riccati sweep: `s_seq[k]` for `k = 0..=N` with `s_seq[N]`
/// the terminal matrix, and gains `k_seq[k]` for `k = 0..N`.
#[derive(Clone, Debug, PartialEq)]
pub struct LqrSequence {
    pub s_seq: Vec<DMatrix<f64>>,
    pub k_seq: Vec<DMatrix<f64>>,
}

impl LqrSequence {
    pub fn horizon(&self) -> usize {
        self.k_seq.len()
    }
}

/// Derivatives of `(Q, R)` with respect to one scalar parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightDirection {
    pub dq: DMatrix<f64>,
    pub dr: DMatrix<f64>,
}

/// `ds[p]`, `dk[p]`: derivatives of `S`, `K` with respect to parameter `p`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sensitivity {
    pub ds: Vec<DMatrix<f64>>,
    pub dk: Vec<DMatrix<f64>>,
}

fn induced_inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn check_dims(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<()> {
    let n = a.nrows();
    let m = b.ncols();
    if !a.is_square() {
        return Err(RiccatiError::Dimension("A must be square"));
    }
    if b.nrows() != n {
        return Err(RiccatiError::Dimension("B must have as many rows as A"));
    }
    if q.shape() != (n, n) {
        return Err(RiccatiError::Dimension("Q must be n x n"));
    }
    if r.shape() != (m, m) {
        return Err(RiccatiError::Dimension("R must be m x m"));
    }
    Ok(())
}

/// `K = (R + B'SB)^-1 B'SA`.
pub fn gain(a: &DMatrix<f64>, b: &DMatrix<f64>, r: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let bts = b.transpose() * s;
    let e = symmetrize(&(r + &bts * b));
    let chol = e.cholesky().ok_or(RiccatiError::SingularInnerMatrix)?;
    Ok(chol.solve(&(bts * a)))
}

/// One Riccati step `S <- Q + A'S(A - BK)` together with the gain it uses.
pub fn riccati_step(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    s_next: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let k = gain(a, b, r, s_next)?;
    let s = q + a.transpose() * s_next * (a - b * &k);
    Ok((symmetrize(&s), k))
}

/// Induced infinity norm of `Q + A'SA - A'SB(R + B'SB)^-1 B'SA - S`.
pub fn dare_residual(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, s: &DMatrix<f64>) -> f64 {
    match riccati_step(a, b, q, r, s) {
        Ok((next, _)) => induced_inf_norm(&(next - s)),
        Err(_) => f64::INFINITY,
    }
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max)
}

/// Structured doubling for `H -> S`.
fn doubling(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let r_chol = r.clone().cholesky().ok_or(RiccatiError::SingularInnerMatrix)?;
    let mut g = b * r_chol.solve(&b.transpose());
    let mut ak = a.clone();
    let mut h = q.clone();
    let identity = DMatrix::<f64>::identity(n, n);
    for _ in 0..DOUBLING_ITERATIONS {
        let w = (&identity + &g * &h).lu();
        let wa = w.solve(&ak).ok_or(RiccatiError::NoConvergence(f64::INFINITY))?;
        let wg = w.solve(&g).ok_or(RiccatiError::NoConvergence(f64::INFINITY))?;
        let h_next = symmetrize(&(&h + ak.transpose() * &h * &wa));
        g = symmetrize(&(&g + &ak * wg * ak.transpose()));
        ak = &ak * wa;
        if !h_next.iter().all(|v| v.is_finite()) {
            return Err(RiccatiError::NoConvergence(f64::INFINITY));
        }
        let change = (&h_next - &h).amax();
        h = h_next;
        if change <= 1e-15 * h.amax().max(1.0) {
            return Ok(h);
        }
    }
    Err(RiccatiError::NoConvergence(dare_residual(a, b, q, r, &h)))
}

/// Solve the Stein equation `X = F'XF + C` through its Kronecker form.
fn stein(f: &DMatrix<f64>, c: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = f.nrows();
    let ft = f.transpose();
    let lhs = DMatrix::<f64>::identity(n * n, n * n) - ft.kronecker(&ft);
    let x = lhs.lu().solve(&DVector::from_column_slice(c.as_slice()))?;
    Some(symmetrize(&DMatrix::from_column_slice(n, n, x.as_slice())))
}

/// Stationary solution of the DARE and its gain.
pub fn solve_dare(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DareSolution> {
    check_dims(a, b, q, r)?;
    let mut s = doubling(a, b, q, r)?;
    let mut residual = dare_residual(a, b, q, r, &s);
    for _ in 0..NEWTON_ITERATIONS {
        if residual <= 1e-3 * DARE_TOLERANCE {
            break;
        }
        let k = gain(a, b, r, &s)?;
        let closed = a - b * &k;
        let Some(next) = stein(&closed, &(q + k.transpose() * r * &k)) else { break };
        let next_residual = dare_residual(a, b, q, r, &next);
        if next_residual >= residual {
            break;
        }
        s = next;
        residual = next_residual;
    }
    let k = gain(a, b, r, &s)?;
    let rho = spectral_radius(&(a - b * &k));
    if rho >= 1.0 {
        return Err(RiccatiError::NotStabilizable(rho));
    }
    if residual >= DARE_TOLERANCE * s.amax().max(1.0) {
        return Err(RiccatiError::NoConvergence(residual));
    }
    Ok(DareSolution { s, k, residual })
}

/// Backward sweep over time-varying dynamics, starting from `s_terminal`.
pub fn backward_pass(
    a_seq: &[DMatrix<f64>],
    b_seq: &[DMatrix<f64>],
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    s_terminal: &DMatrix<f64>,
) -> Result<LqrSequence> {
    if a_seq.len() != b_seq.len() {
        return Err(RiccatiError::Dimension("A and B sequences differ in length"));
    }
    let n = a_seq.len();
    let mut s_seq = vec![s_terminal.clone(); n + 1];
    let mut k_seq = Vec::with_capacity(n);
    for k in (0..n).rev() {
        check_dims(&a_seq[k], &b_seq[k], q, r)?;
        let (s, gain) = riccati_step(&a_seq[k], &b_seq[k], q, r, &s_seq[k + 1])?;
        s_seq[k] = s;
        k_seq.push(gain);
    }
    k_seq.reverse();
    Ok(LqrSequence { s_seq, k_seq })
}

/// Sensitivities of `(S_inf, K_inf)` by implicit differentiation of
/// `F1 = Q + A'SA - A'SBK - S = 0`, `F2 = (R + B'SB)K - B'SA = 0`.
pub fn dare_sensitivity(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    r: &DMatrix<f64>,
    solution: &DareSolution,
    directions: &[WeightDirection],
) -> Result<Sensitivity> {
    let n = a.nrows();
    let m = b.ncols();
    let s = &solution.s;
    let k = &solution.k;
    let e = r + b.transpose() * s * b;
    let at_s_b = a.transpose() * s * b;
    let dim = n * n + m * n;
    let mut jac = DMatrix::<f64>::zeros(dim, dim);
    let mut put = |col: usize, f1: &DMatrix<f64>, f2: &DMatrix<f64>| {
        for (i, v) in f1.iter().chain(f2.iter()).enumerate() {
            jac[(i, col)] = *v;
        }
    };
    for j in 0..n {
        for i in 0..n {
            let mut ds = DMatrix::<f64>::zeros(n, n);
            ds[(i, j)] = 1.0;
            let f1 = a.transpose() * &ds * a - &ds - a.transpose() * &ds * b * k;
            let f2 = b.transpose() * &ds * b * k - b.transpose() * &ds * a;
            put(j * n + i, &f1, &f2);
        }
    }
    for j in 0..n {
        for i in 0..m {
            let mut dk = DMatrix::<f64>::zeros(m, n);
            dk[(i, j)] = 1.0;
            let f1 = -(&at_s_b * &dk);
            let f2 = &e * &dk;
            put(n * n + j * m + i, &f1, &f2);
        }
    }
    let lu = jac.lu();
    let pivot = lu.u().diagonal().iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    let scale = lu.u().amax().max(1.0);
    if pivot <= 1e-13 * scale {
        return Err(RiccatiError::SingularJacobian);
    }
    let mut ds = Vec::with_capacity(directions.len());
    let mut dk = Vec::with_capacity(directions.len());
    for dir in directions {
        let f2 = &dir.dr * k;
        let rhs = DVector::from_iterator(dim, dir.dq.iter().chain(f2.iter()).map(|v| -v));
        let y = lu.solve(&rhs).ok_or(RiccatiError::SingularJacobian)?;
        ds.push(symmetrize(&DMatrix::from_column_slice(n, n, &y.as_slice()[..n * n])));
        dk.push(DMatrix::from_column_slice(m, n, &y.as_slice()[n * n..]));
    }
    Ok(Sensitivity { ds, dk })
}

/// Propagates `dS` backward along a time-varying sweep and returns
/// `dk[step][param]`; `terminal_ds[param]` is the derivative of `s_seq[N]`.
pub fn timevarying_sensitivity(
    a_seq: &[DMatrix<f64>],
    b_seq: &[DMatrix<f64>],
    r: &DMatrix<f64>,
    sweep: &LqrSequence,
    terminal_ds: &[DMatrix<f64>],
    directions: &[WeightDirection],
) -> Result<Vec<Vec<DMatrix<f64>>>> {
    if terminal_ds.len() != directions.len() {
        return Err(RiccatiError::Dimension("one terminal derivative per parameter"));
    }
    if a_seq.len() != sweep.horizon() || b_seq.len() != sweep.horizon() {
        return Err(RiccatiError::Dimension("sweep length differs from dynamics"));
    }
    let horizon = sweep.horizon();
    let mut ds: Vec<DMatrix<f64>> = terminal_ds.to_vec();
    let mut out = vec![Vec::new(); horizon];
    for k in (0..horizon).rev() {
        let (a, b) = (&a_seq[k], &b_seq[k]);
        let gain = &sweep.k_seq[k];
        let s_next = &sweep.s_seq[k + 1];
        let e = symmetrize(&(r + b.transpose() * s_next * b));
        let chol = e.cholesky().ok_or(RiccatiError::SingularInnerMatrix)?;
        let closed = a - b * gain;
        let mut dk_step = Vec::with_capacity(directions.len());
        for (p, dir) in directions.iter().enumerate() {
            let d_next = &ds[p];
            let de = &dir.dr + b.transpose() * d_next * b;
            let dk = chol.solve(&(b.transpose() * d_next * a - de * gain));
            let d_now = &dir.dq + closed.transpose() * d_next * &closed + gain.transpose() * &dir.dr * gain;
            ds[p] = symmetrize(&d_now);
            dk_step.push(dk);
        }
        out[k] = dk_step;
    }
    Ok(out)
}

/// `u = -K e`.
pub fn lqr_input(k: &DMatrix<f64>, e: &DVector<f64>) -> DVector<f64> {
    -(k * e)
}

fn exchange(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| if i + j == n - 1 { 1.0 } else { 0.0 })
}

/// Lower-triangular `L` with positive diagonal such that `L'L = m`.
fn lower_factor(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let p = exchange(m.nrows());
    let c = (&p * m * &p).cholesky()?.l();
    Some(&p * c.transpose() * &p)
}

/// `Q = L_Q' L_Q`, `R = L_R' L_R` with lower-triangular factors whose
/// entries on and below the diagonal are the tunable parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct LqrWeights {
    pub q_chol: DMatrix<f64>,
    pub r_chol: DMatrix<f64>,
}

fn lower_entries(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(|i| (0..=i).map(move |j| (i, j)))
}

impl LqrWeights {
    pub fn from_matrices(q: &DMatrix<f64>, r: &DMatrix<f64>) -> Option<Self> {
        Some(Self { q_chol: lower_factor(q)?, r_chol: lower_factor(r)? })
    }

    /// Factorize a symmetric `Q` after lifting eigenvalues below `floor` to `floor`.
    pub fn from_hessians(q: &DMatrix<f64>, r: &DMatrix<f64>, floor: f64) -> Option<Self> {
        let eig = symmetrize(q).symmetric_eigen();
        let clamped = eig.eigenvalues.map(|l| l.max(floor));
        let q = symmetrize(&(&eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose()));
        Self::from_matrices(&q, r)
    }

    pub fn q(&self) -> DMatrix<f64> {
        self.q_chol.transpose() * &self.q_chol
    }

    pub fn r(&self) -> DMatrix<f64> {
        self.r_chol.transpose() * &self.r_chol
    }

    pub fn state_dim(&self) -> usize {
        self.q_chol.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.r_chol.nrows()
    }

    pub fn num_params(&self) -> usize {
        let (n, m) = (self.state_dim(), self.input_dim());
        n * (n + 1) / 2 + m * (m + 1) / 2
    }

    /// Lower-triangular entries, row by row, `Q` factor first.
    pub fn params(&self) -> Vec<f64> {
        lower_entries(self.state_dim())
            .map(|(i, j)| self.q_chol[(i, j)])
            .chain(lower_entries(self.input_dim()).map(|(i, j)| self.r_chol[(i, j)]))
            .collect()
    }

    pub fn set_params(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.num_params());
        let n = self.state_dim();
        let m = self.input_dim();
        let mut it = values.iter();
        for (i, j) in lower_entries(n) {
            self.q_chol[(i, j)] = *it.next().unwrap();
        }
        for (i, j) in lower_entries(m) {
            self.r_chol[(i, j)] = *it.next().unwrap();
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        lower_entries(self.state_dim())
            .map(|(i, j)| format!("q_chol[{i},{j}]"))
            .chain(lower_entries(self.input_dim()).map(|(i, j)| format!("r_chol[{i},{j}]")))
            .collect()
    }

    /// `dQ/dp`, `dR/dp` for every parameter, in `params()` order.
    pub fn directions(&self) -> Vec<WeightDirection> {
        let (n, m) = (self.state_dim(), self.input_dim());
        let unit_product = |l: &DMatrix<f64>, i: usize, j: usize| {
            let size = l.nrows();
            let mut e = DMatrix::<f64>::zeros(size, size);
            e[(i, j)] = 1.0;
            e.transpose() * l + l.transpose() * e
        };
        let q_dirs = lower_entries(n).map(|(i, j)| WeightDirection {
            dq: unit_product(&self.q_chol, i, j),
            dr: DMatrix::zeros(m, m),
        });
        let r_dirs = lower_entries(m).map(|(i, j)| WeightDirection {
            dq: DMatrix::zeros(n, n),
            dr: unit_product(&self.r_chol, i, j),
        });
        q_dirs.chain(r_dirs).collect()
    }
}

/// Stage-cost Hessians at the steady state, eigenvalue-clamped at `1e-6`.
pub fn init_weights(cost: &StageCost, params: &PendulumParams, steady: &PlantState) -> LqrWeights {
    let h: Matrix4<f64> = cost.state_hessian(steady, params);
    let q = DMatrix::from_column_slice(4, 4, h.as_slice());
    let r = DMatrix::from_element(1, 1, 2.0 * cost.input_change_weight);
    LqrWeights::from_hessians(&q, &r, 1e-6).expect("clamped Hessian is positive definite")
}

pub fn to_dvector(x: &Vector4<f64>) -> DVector<f64> {
    DVector::from_column_slice(x.as_slice())
}

pub fn to_dmatrix(a: &Matrix4<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(4, 4, a.as_slice())
}

pub fn column_to_dmatrix(b: &Vector4<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(4, 1, b.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn zero_dynamics_give_zero_gain() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.3]);
        let sol = solve_dare(&DMatrix::zeros(2, 2), &b, &q, &scalar(0.7)).unwrap();
        assert!((&sol.s - &q).amax() < 1e-14);
        assert!(sol.k.amax() < 1e-14);
    }

    #[test]
    fn single_step_sweep_is_one_gain_formula() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 0.1]);
        let st = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let r = scalar(0.5);
        let sweep = backward_pass(&[a.clone()], &[b.clone()], &DMatrix::identity(2, 2), &r, &st).unwrap();
        let direct = (&r + b.transpose() * &st * &b).try_inverse().unwrap() * b.transpose() * &st * &a;
        assert!((&sweep.k_seq[0] - direct).amax() < 1e-14);
        assert_eq!(sweep.s_seq.len(), 2);
        assert_eq!(sweep.s_seq[1], st);
    }

    #[test]
    fn cholesky_round_trip() {
        let q = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, -0.2, 0.5, -0.2, 2.0]);
        let w = LqrWeights::from_matrices(&q, &scalar(0.2)).unwrap();
        assert!((w.q() - &q).amax() < 1e-14);
        assert!((w.r()[(0, 0)] - 0.2).abs() < 1e-15);
        for i in 0..3 {
            assert!(w.q_chol[(i, i)] > 0.0);
            for j in i + 1..3 {
                assert_eq!(w.q_chol[(i, j)], 0.0);
            }
        }
        let again = LqrWeights::from_matrices(&w.q(), &w.r()).unwrap();
        assert!((again.q_chol - &w.q_chol).amax() < 1e-13);
    }

    #[test]
    fn params_round_trip_and_directions_match_differences() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let mut w = LqrWeights::from_matrices(&q, &scalar(0.4)).unwrap();
        let p = w.params();
        assert_eq!(p.len(), 4);
        assert_eq!(w.param_names()[1], "q_chol[1,0]");
        let dirs = w.directions();
        for (i, dir) in dirs.iter().enumerate() {
            let h = 1e-6;
            let mut up = p.clone();
            up[i] += h;
            let mut down = p.clone();
            down[i] -= h;
            w.set_params(&up);
            let (qp, rp) = (w.q(), w.r());
            w.set_params(&down);
            let (qm, rm) = (w.q(), w.r());
            assert!(((qp - qm) / (2.0 * h) - &dir.dq).amax() < 1e-8);
            assert!(((rp - rm) / (2.0 * h) - &dir.dr).amax() < 1e-8);
        }
        w.set_params(&p);
        assert_eq!(w.params(), p);
    }

    #[test]
    fn indefinite_hessian_is_clamped() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -3.0]);
        let w = LqrWeights::from_hessians(&q, &scalar(0.2), 1e-6).unwrap();
        let eig = w.q().symmetric_eigen().eigenvalues;
        assert!(eig.iter().all(|&l| l >= 1e-6 * (1.0 - 1e-9)));
        assert!((w.q()[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_error_gives_zero_correction() {
        let k = DMatrix::from_row_slice(1, 4, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(lqr_input(&k, &DVector::zeros(4))[0], 0.0);
    }
}
