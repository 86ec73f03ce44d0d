use std::time::Instant;

use nalgebra::{Matrix4, Matrix5, RowVector5, Vector4, Vector5};

use super::{Ocp, OcpError, OcpProblem, OcpSolution, PredictionModel, SolveStatus, StateCost, WarmStart};

const PSI: usize = 0;
/// Safeguard factor keeping bound multipliers near the central path.
const KAPPA_SIGMA: f64 = 1e10;
const KAPPA_EPSILON: f64 = 10.0;
const BARRIER_DECREASE: f64 = 0.2;
const BARRIER_POWER: f64 = 1.5;
const GAMMA_THETA: f64 = 1e-5;
const GAMMA_PHI: f64 = 1e-8;
const GAMMA_ALPHA: f64 = 0.05;
const S_THETA: f64 = 1.1;
const S_PHI: f64 = 2.3;

/// Filter line search acceptance tests.
struct LineSearch {
    theta0: f64,
    phi0: f64,
    slope: f64,
    theta_min: f64,
    theta_max: f64,
    armijo: f64,
}

impl LineSearch {
    fn switching(&self, alpha: f64) -> bool {
        self.slope < 0.0 && alpha * (-self.slope).powf(S_PHI) > self.theta0.powf(S_THETA)
    }

    fn min_step(&self) -> f64 {
        let mut a = GAMMA_THETA;
        if self.slope < 0.0 {
            a = a
                .min(GAMMA_PHI * self.theta0 / -self.slope)
                .min(self.theta0.powf(S_THETA) / (-self.slope).powf(S_PHI));
        }
        (GAMMA_ALPHA * a).max(1e-14)
    }

    /// `Some(f_type)` if `(theta, phi)` is acceptable at step `alpha`.
    fn acceptable(&self, theta: f64, phi: f64, alpha: f64, filter: &[(f64, f64)]) -> Option<bool> {
        if !theta.is_finite() || !phi.is_finite() || theta > self.theta_max {
            return None;
        }
        if filter.iter().any(|&(t, p)| theta >= t && phi >= p) {
            return None;
        }
        if self.theta0 <= self.theta_min && self.switching(alpha) {
            let armijo = phi <= self.phi0 + self.armijo * alpha * self.slope;
            return armijo.then_some(true);
        }
        let ok = theta <= (1.0 - GAMMA_THETA) * self.theta0 || phi <= self.phi0 - GAMMA_PHI * self.theta0;
        ok.then_some(false)
    }
}

struct SocContext<'a> {
    stages: &'a [StageQp],
    terminal: &'a (Matrix5<f64>, Vector5<f64>),
    search: &'a LineSearch,
    filter: &'a [(f64, f64)],
    tau: f64,
    mu: f64,
    delta: f64,
}

#[derive(Clone, Debug)]
struct Iterate {
    /// `x[0]` is fixed.
    x: Vec<Vector4<f64>>,
    u: Vec<f64>,
    /// `lam[k]` multiplies the defect `F(x_k, u_k) - x_{k+1}`.
    lam: Vec<Vector4<f64>>,
    zl_u: Vec<f64>,
    zu_u: Vec<f64>,
    /// Position bound multipliers, index 0 unused.
    zl_p: Vec<f64>,
    zu_p: Vec<f64>,
}

/// Derivative information at an iterate.
#[derive(Clone, Debug)]
struct Evaluation {
    a: Vec<Matrix4<f64>>,
    b: Vec<Vector4<f64>>,
    defect: Vec<Vector4<f64>>,
    /// Objective gradient w.r.t. `x_k`, index 0 unused.
    gx: Vec<Vector4<f64>>,
    gu: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
struct KktError {
    stationarity: f64,
    feasibility: f64,
    complementarity: f64,
}

impl KktError {
    fn max(&self) -> f64 {
        self.stationarity.max(self.feasibility).max(self.complementarity)
    }
}

#[derive(Clone, Debug)]
struct StageQp {
    qzz: Matrix5<f64>,
    quz: RowVector5<f64>,
    ruu: f64,
    qz: Vector5<f64>,
    ru: f64,
    a_hat: Matrix5<f64>,
    b_hat: Vector5<f64>,
    c_hat: Vector5<f64>,
}

#[derive(Clone, Debug)]
struct NewtonStep {
    dx: Vec<Vector4<f64>>,
    du: Vec<f64>,
    lam: Vec<Vector4<f64>>,
}

struct Riccati {
    p_mat: Vec<Matrix5<f64>>,
    p_vec: Vec<Vector5<f64>>,
    gain: Vec<RowVector5<f64>>,
    feedforward: Vec<f64>,
}

impl Riccati {
    fn new(n: usize) -> Self {
        Self {
            p_mat: vec![Matrix5::zeros(); n + 1],
            p_vec: vec![Vector5::zeros(); n + 1],
            gain: vec![RowVector5::zeros(); n],
            feedforward: vec![0.0; n],
        }
    }
}

fn slack_bounds(value: f64, limit: f64) -> (f64, f64) {
    (value + limit, limit - value)
}

fn fraction_to_boundary(value: f64, step: f64, limit: f64, tau: f64) -> f64 {
    let (sl, su) = slack_bounds(value, limit);
    if step < 0.0 {
        (tau * sl / -step).min(1.0)
    } else if step > 0.0 {
        (tau * su / step).min(1.0)
    } else {
        1.0
    }
}

fn multiplier_fraction(z: f64, dz: f64, tau: f64) -> f64 {
    if dz < 0.0 {
        (tau * z / -dz).min(1.0)
    } else {
        1.0
    }
}

fn clamp_multiplier(z: f64, slack: f64, mu: f64) -> f64 {
    z.clamp(mu / (KAPPA_SIGMA * slack), KAPPA_SIGMA * mu / slack)
}

impl<M: PredictionModel, C: StateCost> Ocp<M, C> {
    /// Solve the optimal control problem from `problem.x0`.
    pub fn solve(&self, problem: &OcpProblem, warm: Option<&WarmStart>) -> Result<OcpSolution, OcpError> {
        let start = Instant::now();
        let n = problem.horizon;
        if n == 0 {
            return Err(OcpError::EmptyHorizon);
        }
        let x0 = problem.x0.to_vector();
        if !x0.iter().all(|v| v.is_finite()) || !problem.u_prev.is_finite() || !problem.reference.is_finite() {
            return Err(OcpError::NonFinite);
        }
        if x0[PSI].abs() > self.position_limit {
            return Err(OcpError::Infeasible(x0[PSI]));
        }
        let s = &self.settings;
        let mut mu = if warm.is_some_and(|w| !w.is_empty()) { s.warm_barrier } else { s.initial_barrier };
        let mut it = self.initial_iterate(problem, warm, mu);
        let mut ev = self.evaluate(&it, problem);
        let mut riccati = Riccati::new(n);
        let theta_start: f64 = ev.defect.iter().map(|c| c.lp_norm(1)).sum();
        let theta_max = 1e4 * theta_start.max(1.0);
        let theta_min = 1e-4 * theta_start.max(1.0);
        let mut filter: Vec<(f64, f64)> = Vec::new();
        let mut filter_mu = mu;
        let mut failures = 0;
        let mut delta_last = 0.0_f64;
        let mut best: Option<(f64, Iterate)> = None;
        let mut iterations = 0;
        let status;
        let mut error = f64::INFINITY;

        loop {
            if !ev.gu.iter().all(|g| g.is_finite()) || !ev.defect.iter().all(|d| d.iter().all(|v| v.is_finite())) {
                if best.is_none() {
                    return Err(OcpError::NonFinite);
                }
                status = SolveStatus::MaxIterations;
                break;
            }
            error = self.kkt_error(&it, &ev, 0.0).max();
            if best.as_ref().is_none_or(|(e, _)| error < *e) {
                best = Some((error, it.clone()));
            }
            if error <= s.tolerance {
                status = SolveStatus::Converged;
                break;
            }
            if iterations >= s.max_iterations {
                status = SolveStatus::MaxIterations;
                break;
            }
            while mu > s.min_barrier && self.kkt_error(&it, &ev, mu).max() <= KAPPA_EPSILON * mu {
                mu = s.min_barrier.max((BARRIER_DECREASE * mu).min(mu.powf(BARRIER_POWER)));
            }
            let tau = (1.0 - mu).max(0.99);

            let stages = self.stage_qps(&it, &ev, problem, mu);
            let terminal = self.terminal_qp(&it, &ev, problem, mu);
            let mut delta = 0.0;
            let mut attempts = 0;
            let mut factored = true;
            while !self.backward(&stages, &terminal, delta, &mut riccati) {
                attempts += 1;
                delta = match attempts {
                    1 if delta_last == 0.0 => 1e-4,
                    1 => (delta_last / 3.0).max(1e-20),
                    _ if delta_last == 0.0 => delta * 100.0,
                    _ => delta * 8.0,
                };
                if delta > 1e40 || !delta.is_finite() {
                    factored = false;
                    break;
                }
            }
            if !factored {
                if iterations == 0 {
                    return Err(OcpError::InertiaCorrection);
                }
                status = SolveStatus::MaxIterations;
                break;
            }
            if delta > 0.0 {
                delta_last = delta;
            }
            let step = forward(&stages, &riccati);
            if !step.du.iter().all(|v| v.is_finite()) || !step.dx.iter().all(|d| d.iter().all(|v| v.is_finite())) {
                status = SolveStatus::MaxIterations;
                break;
            }

            if mu != filter_mu {
                filter.clear();
                filter_mu = mu;
            }
            let alpha_max = self.primal_fraction(&it, &step, tau);
            let theta0: f64 = ev.defect.iter().map(|c| c.lp_norm(1)).sum();
            let phi0 = self.barrier_objective(&it, problem, mu);
            let slope = self.barrier_slope(&it, &ev, &step, mu);
            let search = LineSearch { theta0, phi0, slope, theta_min, theta_max, armijo: s.armijo };
            let alpha_min = search.min_step();

            let mut alpha = alpha_max;
            let mut accepted: Option<(Iterate, NewtonStep, bool)> = None;
            let mut first = true;
            while alpha >= alpha_min {
                let trial = self.take_step(&it, &step, alpha);
                let (theta, phi) = self.measure(&trial, problem, mu);
                if let Some(f_type) = search.acceptable(theta, phi, alpha, &filter) {
                    accepted = Some((trial, step.clone(), f_type));
                    break;
                }
                if first && theta >= theta0 {
                    let soc = SocContext { stages: &stages, terminal: &terminal, search: &search, filter: &filter, tau, mu, delta };
                    if let Some(found) = self.second_order_correction(&it, &trial, &soc, alpha, problem, &mut riccati) {
                        accepted = Some(found);
                        break;
                    }
                }
                first = false;
                alpha *= 0.5;
            }
            let (mut trial, step, f_type) = match accepted {
                Some(found) => {
                    failures = 0;
                    found
                }
                None => {
                    failures += 1;
                    if failures > 5 {
                        status = SolveStatus::MaxIterations;
                        break;
                    }
                    filter.clear();
                    alpha = alpha_min.max(1e-3 * alpha_max).min(alpha_max);
                    (self.take_step(&it, &step, alpha), step, false)
                }
            };
            if !f_type {
                filter.push(((1.0 - GAMMA_THETA) * theta0, phi0 - GAMMA_PHI * theta0));
            }
            self.update_multipliers(&it, &mut trial, &step, mu, tau);
            it = trial;
            ev = self.evaluate(&it, problem);
            iterations += 1;
        }

        if status == SolveStatus::MaxIterations {
            if let Some((e, b)) = best {
                error = e;
                if b.u != it.u || b.x != it.x {
                    it = b;
                    ev = self.evaluate(&it, problem);
                }
            }
        }
        Ok(OcpSolution {
            objective: self.objective(&it.x, &it.u, problem.u_prev, problem.reference),
            u_seq: it.u,
            x_pred: it.x,
            a_seq: ev.a,
            b_seq: ev.b,
            costates: it.lam,
            kkt_residual: error,
            iterations,
            solve_time: start.elapsed().as_secs_f64(),
            status,
            reference: problem.reference,
        })
    }

    fn initial_iterate(&self, problem: &OcpProblem, warm: Option<&WarmStart>, mu: f64) -> Iterate {
        let n = problem.horizon;
        let s = &self.settings;
        let u_cap = self.input_limit - s.input_margin;
        let p_cap = self.position_limit - s.position_margin;
        let empty = WarmStart::default();
        let warm = warm.unwrap_or(&empty);

        let mut u: Vec<f64> = warm.inputs.iter().take(n).copied().collect();
        let last_u = u.last().copied().unwrap_or(0.0);
        u.resize(n, last_u);
        for v in u.iter_mut() {
            *v = v.clamp(-u_cap, u_cap);
        }
        let mut x = Vec::with_capacity(n + 1);
        x.push(problem.x0.to_vector());
        for k in 0..n {
            let next = match warm.states.get(k) {
                Some(s) => *s,
                None => self.model.step(&x[k], u[k]),
            };
            x.push(next);
        }
        for xk in x.iter_mut().skip(1) {
            if !xk.iter().all(|v| v.is_finite()) {
                *xk = problem.x0.to_vector();
            }
            xk[PSI] = xk[PSI].clamp(-p_cap, p_cap);
        }
        let mut lam: Vec<Vector4<f64>> = warm.costates.iter().take(n).copied().collect();
        lam.resize(n, Vector4::zeros());

        let mut zl_u = vec![0.0; n];
        let mut zu_u = vec![0.0; n];
        for k in 0..n {
            let (sl, su) = slack_bounds(u[k], self.input_limit);
            zl_u[k] = mu / sl;
            zu_u[k] = mu / su;
        }
        let mut zl_p = vec![0.0; n + 1];
        let mut zu_p = vec![0.0; n + 1];
        for k in 1..=n {
            let (sl, su) = slack_bounds(x[k][PSI], self.position_limit);
            zl_p[k] = mu / sl;
            zu_p[k] = mu / su;
        }
        Iterate { x, u, lam, zl_u, zu_u, zl_p, zu_p }
    }

    fn weights(&self, n: usize) -> Vec<f64> {
        let mut w = Vec::with_capacity(n + 1);
        let mut v = 1.0;
        for _ in 0..=n {
            w.push(v);
            v *= self.discount;
        }
        w
    }

    fn evaluate(&self, it: &Iterate, problem: &OcpProblem) -> Evaluation {
        let n = it.u.len();
        let w = self.weights(n);
        let d = self.input_change_weight;
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        let mut defect = Vec::with_capacity(n);
        for k in 0..n {
            let (f, ak, bk) = self.model.jacobian(&it.x[k], it.u[k]);
            a.push(ak);
            b.push(bk);
            defect.push(f - it.x[k + 1]);
        }
        let mut gx = vec![Vector4::zeros(); n + 1];
        for k in 1..=n {
            gx[k] = self.cost.gradient(&it.x[k], problem.reference) * w[k - 1];
        }
        let mut gu = vec![0.0; n];
        for k in 0..n {
            let prev = if k == 0 { problem.u_prev } else { it.u[k - 1] };
            gu[k] += 2.0 * w[k] * d * (it.u[k] - prev);
            if k + 1 < n {
                gu[k] -= 2.0 * w[k + 1] * d * (it.u[k + 1] - it.u[k]);
            }
        }
        Evaluation { a, b, defect, gx, gu }
    }

    fn kkt_error(&self, it: &Iterate, ev: &Evaluation, mu: f64) -> KktError {
        let n = it.u.len();
        let mut stationarity = 0.0_f64;
        let mut complementarity = 0.0_f64;
        for k in 0..n {
            let r = ev.gu[k] + ev.b[k].dot(&it.lam[k]) - it.zl_u[k] + it.zu_u[k];
            stationarity = stationarity.max(r.abs());
            let (sl, su) = slack_bounds(it.u[k], self.input_limit);
            complementarity = complementarity.max((it.zl_u[k] * sl - mu).abs()).max((it.zu_u[k] * su - mu).abs());
        }
        for k in 1..=n {
            let mut r = ev.gx[k] - it.lam[k - 1];
            if k < n {
                r += ev.a[k].transpose() * it.lam[k];
            }
            r[PSI] -= it.zl_p[k] - it.zu_p[k];
            stationarity = stationarity.max(r.amax());
            let (sl, su) = slack_bounds(it.x[k][PSI], self.position_limit);
            complementarity = complementarity.max((it.zl_p[k] * sl - mu).abs()).max((it.zu_p[k] * su - mu).abs());
        }
        let feasibility = ev.defect.iter().map(|c| c.amax()).fold(0.0, f64::max);
        KktError { stationarity, feasibility, complementarity }
    }

    fn stage_qps(&self, it: &Iterate, ev: &Evaluation, problem: &OcpProblem, mu: f64) -> Vec<StageQp> {
        let n = it.u.len();
        let w = self.weights(n);
        let d = self.input_change_weight;
        (0..n)
            .map(|k| {
                let d2 = 2.0 * w[k] * d;
                let prev = if k == 0 { problem.u_prev } else { it.u[k - 1] };
                let du = it.u[k] - prev;
                let lam_h = if it.lam[k].amax() > 0.0 {
                    self.model.adjoint_hessian(&it.x[k], it.u[k], &it.lam[k])
                } else {
                    Matrix5::zeros()
                };
                let mut qzz = Matrix5::zeros();
                let mut qz = Vector5::zeros();
                let mut quz = RowVector5::zeros();
                if k >= 1 {
                    let h = self.cost.hessian(&it.x[k], problem.reference) * w[k - 1];
                    let (sl, su) = slack_bounds(it.x[k][PSI], self.position_limit);
                    let mut g = ev.gx[k];
                    g[PSI] += -mu / sl + mu / su;
                    for i in 0..4 {
                        for j in 0..4 {
                            qzz[(i, j)] = h[(i, j)] + lam_h[(i, j)];
                        }
                        qz[i] = g[i];
                        quz[i] = lam_h[(4, i)];
                    }
                    qzz[(PSI, PSI)] += it.zl_p[k] / sl + it.zu_p[k] / su;
                }
                qzz[(4, 4)] = d2;
                quz[4] = -d2;
                qz[4] = -d2 * du;
                let (sl, su) = slack_bounds(it.u[k], self.input_limit);
                let ruu = d2 + lam_h[(4, 4)] + it.zl_u[k] / sl + it.zu_u[k] / su;
                let ru = d2 * du - mu / sl + mu / su;
                let mut a_hat = Matrix5::zeros();
                a_hat.fixed_view_mut::<4, 4>(0, 0).copy_from(&ev.a[k]);
                let b = ev.b[k];
                let c = ev.defect[k];
                StageQp {
                    qzz,
                    quz,
                    ruu,
                    qz,
                    ru,
                    a_hat,
                    b_hat: Vector5::new(b[0], b[1], b[2], b[3], 1.0),
                    c_hat: Vector5::new(c[0], c[1], c[2], c[3], 0.0),
                }
            })
            .collect()
    }

    fn terminal_qp(&self, it: &Iterate, ev: &Evaluation, problem: &OcpProblem, mu: f64) -> (Matrix5<f64>, Vector5<f64>) {
        let n = it.u.len();
        let x = &it.x[n];
        let h = self.cost.hessian(x, problem.reference) * self.discount.powi(n as i32 - 1);
        let (sl, su) = slack_bounds(x[PSI], self.position_limit);
        let mut p = Matrix5::zeros();
        let mut q = Vector5::zeros();
        p.fixed_view_mut::<4, 4>(0, 0).copy_from(&h);
        q.fixed_rows_mut::<4>(0).copy_from(&ev.gx[n]);
        p[(PSI, PSI)] += it.zl_p[n] / sl + it.zu_p[n] / su;
        q[PSI] += -mu / sl + mu / su;
        (p, q)
    }

    /// Riccati factorization of the Newton system; `false` if the reduced
    /// Hessian is not positive definite.
    fn backward(
        &self,
        stages: &[StageQp],
        terminal: &(Matrix5<f64>, Vector5<f64>),
        delta: f64,
        r: &mut Riccati,
    ) -> bool {
        let n = stages.len();
        let mut p_mat = terminal.0;
        for i in 0..4 {
            p_mat[(i, i)] += delta;
        }
        let mut p_vec = terminal.1;
        r.p_mat[n] = p_mat;
        r.p_vec[n] = p_vec;
        for k in (0..n).rev() {
            let st = &stages[k];
            let pa = p_mat * st.a_hat;
            let pb = p_mat * st.b_hat;
            let pc = p_mat * st.c_hat + p_vec;
            let mut qxx = st.qzz + st.a_hat.transpose() * pa;
            if k > 0 {
                for i in 0..4 {
                    qxx[(i, i)] += delta;
                }
            }
            let qux = st.quz + pb.transpose() * st.a_hat;
            let quu = st.ruu + delta + st.b_hat.dot(&pb);
            if !(quu > 1e-10) {
                return false;
            }
            let qx = st.qz + st.a_hat.transpose() * pc;
            let qu = st.ru + st.b_hat.dot(&pc);
            r.gain[k] = -qux / quu;
            r.feedforward[k] = -qu / quu;
            p_mat = qxx - qux.transpose() * qux / quu;
            p_mat = (p_mat + p_mat.transpose()) * 0.5;
            p_vec = qx - qux.transpose() * (qu / quu);
            r.p_mat[k] = p_mat;
            r.p_vec[k] = p_vec;
        }
        true
    }

    fn primal_fraction(&self, it: &Iterate, step: &NewtonStep, tau: f64) -> f64 {
        let mut alpha = 1.0_f64;
        for k in 0..it.u.len() {
            alpha = alpha.min(fraction_to_boundary(it.u[k], step.du[k], self.input_limit, tau));
            alpha = alpha.min(fraction_to_boundary(it.x[k + 1][PSI], step.dx[k + 1][PSI], self.position_limit, tau));
        }
        alpha
    }

    fn barrier(&self, it: &Iterate, mu: f64) -> f64 {
        let mut b = 0.0;
        for k in 0..it.u.len() {
            let (sl, su) = slack_bounds(it.u[k], self.input_limit);
            let (pl, pu) = slack_bounds(it.x[k + 1][PSI], self.position_limit);
            b -= sl.ln() + su.ln() + pl.ln() + pu.ln();
        }
        mu * b
    }

    /// Infeasibility and barrier objective at a trial point.
    fn measure(&self, it: &Iterate, problem: &OcpProblem, mu: f64) -> (f64, f64) {
        let theta = self.defects(it).iter().map(|c| c.lp_norm(1)).sum();
        (theta, self.barrier_objective(it, problem, mu))
    }

    fn defects(&self, it: &Iterate) -> Vec<Vector4<f64>> {
        (0..it.u.len()).map(|k| self.model.step(&it.x[k], it.u[k]) - it.x[k + 1]).collect()
    }

    fn barrier_objective(&self, it: &Iterate, problem: &OcpProblem, mu: f64) -> f64 {
        self.objective(&it.x, &it.u, problem.u_prev, problem.reference) + self.barrier(it, mu)
    }

    fn barrier_slope(&self, it: &Iterate, ev: &Evaluation, step: &NewtonStep, mu: f64) -> f64 {
        let mut slope = 0.0;
        for k in 0..it.u.len() {
            let (sl, su) = slack_bounds(it.u[k], self.input_limit);
            slope += (ev.gu[k] - mu / sl + mu / su) * step.du[k];
            let (pl, pu) = slack_bounds(it.x[k + 1][PSI], self.position_limit);
            let mut g = ev.gx[k + 1];
            g[PSI] += -mu / pl + mu / pu;
            slope += g.dot(&step.dx[k + 1]);
        }
        slope
    }

    /// Corrected steps that re-linearize the defects at the rejected trial point.
    fn second_order_correction(
        &self,
        it: &Iterate,
        first_trial: &Iterate,
        ctx: &SocContext,
        alpha: f64,
        problem: &OcpProblem,
        riccati: &mut Riccati,
    ) -> Option<(Iterate, NewtonStep, bool)> {
        let mut corrected: Vec<StageQp> = ctx.stages.to_vec();
        let mut c_soc: Vec<Vector4<f64>> = corrected.iter().map(|st| st.c_hat.fixed_rows::<4>(0).into_owned()).collect();
        let mut trial_defects = self.defects(first_trial);
        let mut theta_prev = ctx.search.theta0;
        let mut a_soc = alpha;
        for _ in 0..4 {
            for k in 0..corrected.len() {
                c_soc[k] = c_soc[k] * a_soc + trial_defects[k];
                let c = c_soc[k];
                corrected[k].c_hat = Vector5::new(c[0], c[1], c[2], c[3], 0.0);
            }
            if !self.backward(&corrected, ctx.terminal, ctx.delta, riccati) {
                return None;
            }
            let step = forward(&corrected, riccati);
            a_soc = self.primal_fraction(it, &step, ctx.tau);
            let trial = self.take_step(it, &step, a_soc);
            trial_defects = self.defects(&trial);
            let theta: f64 = trial_defects.iter().map(|c| c.lp_norm(1)).sum();
            let phi = self.barrier_objective(&trial, problem, ctx.mu);
            if let Some(f_type) = ctx.search.acceptable(theta, phi, alpha, ctx.filter) {
                return Some((trial, step, f_type));
            }
            if theta > 0.99 * theta_prev {
                return None;
            }
            theta_prev = theta;
        }
        None
    }

    fn take_step(&self, it: &Iterate, step: &NewtonStep, alpha: f64) -> Iterate {
        let mut next = it.clone();
        for k in 0..it.u.len() {
            next.u[k] += alpha * step.du[k];
            next.x[k + 1] += step.dx[k + 1] * alpha;
            next.lam[k] += (step.lam[k] - it.lam[k]) * alpha;
        }
        next
    }

    /// Primal-dual step of the bound multipliers, applied to `next`.
    fn update_multipliers(&self, it: &Iterate, next: &mut Iterate, step: &NewtonStep, mu: f64, tau: f64) {
        let n = it.u.len();
        let mut dz = Vec::with_capacity(4 * n);
        let mut alpha_z = 1.0_f64;
        for k in 0..n {
            let (sl, su) = slack_bounds(it.u[k], self.input_limit);
            let dl = mu / sl - it.zl_u[k] - it.zl_u[k] / sl * step.du[k];
            let du = mu / su - it.zu_u[k] + it.zu_u[k] / su * step.du[k];
            let (pl, pu) = slack_bounds(it.x[k + 1][PSI], self.position_limit);
            let dp = step.dx[k + 1][PSI];
            let dpl = mu / pl - it.zl_p[k + 1] - it.zl_p[k + 1] / pl * dp;
            let dpu = mu / pu - it.zu_p[k + 1] + it.zu_p[k + 1] / pu * dp;
            alpha_z = alpha_z
                .min(multiplier_fraction(it.zl_u[k], dl, tau))
                .min(multiplier_fraction(it.zu_u[k], du, tau))
                .min(multiplier_fraction(it.zl_p[k + 1], dpl, tau))
                .min(multiplier_fraction(it.zu_p[k + 1], dpu, tau));
            dz.push([dl, du, dpl, dpu]);
        }
        for k in 0..n {
            let [dl, du, dpl, dpu] = dz[k];
            let (sl, su) = slack_bounds(next.u[k], self.input_limit);
            next.zl_u[k] = clamp_multiplier(it.zl_u[k] + alpha_z * dl, sl, mu);
            next.zu_u[k] = clamp_multiplier(it.zu_u[k] + alpha_z * du, su, mu);
            let (pl, pu) = slack_bounds(next.x[k + 1][PSI], self.position_limit);
            next.zl_p[k + 1] = clamp_multiplier(it.zl_p[k + 1] + alpha_z * dpl, pl, mu);
            next.zu_p[k + 1] = clamp_multiplier(it.zu_p[k + 1] + alpha_z * dpu, pu, mu);
        }
    }
}

fn forward(stages: &[StageQp], r: &Riccati) -> NewtonStep {
    let n = stages.len();
    let mut dx = vec![Vector4::zeros(); n + 1];
    let mut du = vec![0.0; n];
    let mut lam = vec![Vector4::zeros(); n];
    let mut dz = Vector5::zeros();
    for k in 0..n {
        let st = &stages[k];
        let duk = (r.gain[k] * dz)[0] + r.feedforward[k];
        let next = st.a_hat * dz + st.b_hat * duk + st.c_hat;
        let costate = r.p_mat[k + 1] * next + r.p_vec[k + 1];
        du[k] = duk;
        dx[k + 1] = next.fixed_rows::<4>(0).into_owned();
        lam[k] = costate.fixed_rows::<4>(0).into_owned();
        dz = next;
    }
    NewtonStep { dx, du, lam }
}
