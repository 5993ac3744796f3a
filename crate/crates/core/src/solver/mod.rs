//! Primal-dual interior-point method for sparse NLPs with banded KKT systems.
//!
//! Problems have the form
//!
//! ```text
//! min f(x)  s.t.  cl <= c(x) <= cu,  xl <= x <= xu
//! ```
//!
//! Rows with `cl == cu` are equalities; the rest receive slack variables.
//! Each iteration solves the condensed primal-dual system
//! `[W + Σ + δw I, Jᵀ; J, -D] [dx; dy] = rhs` by banded LU, using the
//! variable/constraint ordering supplied by the problem. Globalisation uses
//! an ℓ2 exact-penalty merit function with backtracking and second-order
//! corrections; the barrier parameter follows the monotone Fiacco–McCormick
//! rule.

pub mod band;

use band::{BandLu, BandMatrix};

const INF: f64 = 1e19;

/// A smooth nonlinear program with sparse derivatives.
pub trait Nlp {
    fn num_vars(&self) -> usize;
    fn num_cons(&self) -> usize;
    fn var_bounds(&self) -> (Vec<f64>, Vec<f64>);
    fn con_bounds(&self) -> (Vec<f64>, Vec<f64>);
    fn initial_point(&self) -> Vec<f64>;
    fn objective(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], g: &mut [f64]);
    fn constraints(&self, x: &[f64], c: &mut [f64]);
    /// `(row, col)` pairs of the constraint Jacobian.
    fn jacobian_structure(&self) -> Vec<(usize, usize)>;
    fn jacobian_values(&self, x: &[f64], vals: &mut [f64]);
    /// Lower-triangular `(row, col)` pairs (`row >= col`) of the Lagrangian Hessian.
    fn hessian_structure(&self) -> Vec<(usize, usize)>;
    /// Values of `obj_factor ∇²f + Σ λ_j ∇²c_j`.
    fn hessian_values(&self, x: &[f64], obj_factor: f64, lambda: &[f64], vals: &mut [f64]);
    /// Permutation of `0..n+m` (variables first, then `n + row`) giving a
    /// narrow band in the KKT matrix.
    fn kkt_ordering(&self) -> Vec<usize> {
        (0..self.num_vars() + self.num_cons()).collect()
    }
    fn constraint_name(&self, row: usize) -> String {
        format!("c[{row}]")
    }
}

#[derive(Debug, Clone)]
pub struct IpmOptions {
    /// Scaled optimality tolerance.
    pub tol: f64,
    /// Unscaled constraint violation required for convergence.
    pub constr_tol: f64,
    pub acceptable_tol: f64,
    pub acceptable_iter: usize,
    pub max_iter: usize,
    pub mu_init: f64,
    pub bound_push: f64,
    /// Wall-clock limit in seconds.
    pub time_limit: f64,
}

impl Default for IpmOptions {
    fn default() -> Self {
        IpmOptions {
            tol: 1e-8,
            constr_tol: 1e-6,
            acceptable_tol: 1e-6,
            acceptable_iter: 15,
            max_iter: 3000,
            mu_init: 0.1,
            bound_push: 1e-2,
            time_limit: 600.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    Acceptable,
    MaxIterations,
    TimeLimit,
    LineSearchFailed,
    NumericalError,
}

impl Status {
    pub fn is_success(self) -> bool {
        matches!(self, Status::Converged | Status::Acceptable)
    }
}

#[derive(Debug, Clone)]
pub struct IterRecord {
    pub iter: usize,
    pub objective: f64,
    pub violation: f64,
    pub mu: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct IpmResult {
    pub status: Status,
    pub x: Vec<f64>,
    /// Constraint multipliers (unscaled, `L = f + λᵀc`).
    pub lambda: Vec<f64>,
    pub objective: f64,
    /// Max unscaled constraint or bound violation.
    pub violation: f64,
    pub iterations: usize,
    pub history: Vec<IterRecord>,
}

struct Scaled<'a, P: Nlp> {
    p: &'a P,
    obj: f64,
    row: Vec<f64>,
}

impl<P: Nlp> Scaled<'_, P> {
    fn f(&self, x: &[f64]) -> f64 {
        self.obj * self.p.objective(x)
    }
    fn grad(&self, x: &[f64], g: &mut [f64]) {
        self.p.gradient(x, g);
        g.iter_mut().for_each(|v| *v *= self.obj);
    }
    fn cons(&self, x: &[f64], c: &mut [f64]) {
        self.p.constraints(x, c);
        for (v, s) in c.iter_mut().zip(&self.row) {
            *v *= s;
        }
    }
}

struct Layout {
    n: usize,
    m: usize,
    xl: Vec<f64>,
    xu: Vec<f64>,
    fixed: Vec<bool>,
    has_l: Vec<bool>,
    has_u: Vec<bool>,
    /// Scaled constraint bounds.
    cl: Vec<f64>,
    cu: Vec<f64>,
    is_eq: Vec<bool>,
    s_l: Vec<bool>,
    s_u: Vec<bool>,
    jac: Vec<(usize, usize)>,
    hess: Vec<(usize, usize)>,
    pos: Vec<usize>,
    bw: usize,
}

struct Iterate {
    x: Vec<f64>,
    s: Vec<f64>,
    y: Vec<f64>,
    zl: Vec<f64>,
    zu: Vec<f64>,
    vl: Vec<f64>,
    vu: Vec<f64>,
}

/// Barrier damping for one-sided bounds.
const KAPPA_D: f64 = 1e-5;

fn push_inside(v: f64, lo: f64, hi: f64, has_l: bool, has_u: bool, k: f64) -> f64 {
    let mut pl = 0.0;
    let mut pu = 0.0;
    if has_l {
        pl = k * lo.abs().max(1.0);
    }
    if has_u {
        pu = k * hi.abs().max(1.0);
    }
    if has_l && has_u {
        pl = pl.min(k * (hi - lo));
        pu = pu.min(k * (hi - lo));
    }
    let mut out = v;
    if has_l {
        out = out.max(lo + pl);
    }
    if has_u {
        out = out.min(hi - pu);
    }
    if has_l && has_u && (out < lo || out > hi) {
        out = 0.5 * (lo + hi);
    }
    out
}

impl Layout {
    fn barrier(&self, it_x: &[f64], it_s: &[f64], mu: f64, f: f64) -> f64 {
        let mut phi = f;
        for i in 0..self.n {
            if self.fixed[i] {
                continue;
            }
            if self.has_l[i] {
                phi -= mu * (it_x[i] - self.xl[i]).ln();
                if !self.has_u[i] {
                    phi += KAPPA_D * mu * (it_x[i] - self.xl[i]);
                }
            }
            if self.has_u[i] {
                phi -= mu * (self.xu[i] - it_x[i]).ln();
                if !self.has_l[i] {
                    phi += KAPPA_D * mu * (self.xu[i] - it_x[i]);
                }
            }
        }
        for j in 0..self.m {
            if self.is_eq[j] {
                continue;
            }
            if self.s_l[j] {
                phi -= mu * (it_s[j] - self.cl[j]).ln();
                if !self.s_u[j] {
                    phi += KAPPA_D * mu * (it_s[j] - self.cl[j]);
                }
            }
            if self.s_u[j] {
                phi -= mu * (self.cu[j] - it_s[j]).ln();
                if !self.s_l[j] {
                    phi += KAPPA_D * mu * (self.cu[j] - it_s[j]);
                }
            }
        }
        phi
    }

    /// Residual `c̃ = [c_E - cl; c_I - s]`.
    fn residual(&self, c: &[f64], s: &[f64]) -> Vec<f64> {
        (0..self.m)
            .map(|j| if self.is_eq[j] { c[j] - self.cl[j] } else { c[j] - s[j] })
            .collect()
    }

    fn barrier_grad_x(&self, g: &[f64], x: &[f64], mu: f64) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                if self.fixed[i] {
                    return 0.0;
                }
                let mut v = g[i];
                if self.has_l[i] {
                    v -= mu / (x[i] - self.xl[i]);
                    if !self.has_u[i] {
                        v += KAPPA_D * mu;
                    }
                }
                if self.has_u[i] {
                    v += mu / (self.xu[i] - x[i]);
                    if !self.has_l[i] {
                        v -= KAPPA_D * mu;
                    }
                }
                v
            })
            .collect()
    }

    fn barrier_grad_s(&self, s: &[f64], mu: f64) -> Vec<f64> {
        (0..self.m)
            .map(|j| {
                if self.is_eq[j] {
                    return 0.0;
                }
                let mut v = 0.0;
                if self.s_l[j] {
                    v -= mu / (s[j] - self.cl[j]);
                    if !self.s_u[j] {
                        v += KAPPA_D * mu;
                    }
                }
                if self.s_u[j] {
                    v += mu / (self.cu[j] - s[j]);
                    if !self.s_l[j] {
                        v -= KAPPA_D * mu;
                    }
                }
                v
            })
            .collect()
    }

    fn jt_mul(&self, jv: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (k, &(r, c)) in self.jac.iter().enumerate() {
            out[c] += jv[k] * y[r];
        }
        out
    }

    fn h_mul(&self, hv: &[f64], d: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (k, &(r, c)) in self.hess.iter().enumerate() {
            out[r] += hv[k] * d[c];
            if r != c {
                out[c] += hv[k] * d[r];
            }
        }
        out
    }

    /// Assembles and factors the condensed KKT matrix.
    fn factor(&self, hv: Option<&[f64]>, jv: &[f64], sig_x: &[f64], d_c: &[f64]) -> Option<BandLu> {
        let dim = self.n + self.m;
        let mut k = BandMatrix::zeros(dim, self.bw, self.bw);
        for i in 0..self.n {
            let p = self.pos[i];
            if self.fixed[i] {
                k.add(p, p, 1.0);
            } else {
                k.add(p, p, sig_x[i]);
            }
        }
        if let Some(hv) = hv {
            for (idx, &(r, c)) in self.hess.iter().enumerate() {
                if self.fixed[r] || self.fixed[c] {
                    continue;
                }
                let (pr, pc) = (self.pos[r], self.pos[c]);
                k.add(pr, pc, hv[idx]);
                if r != c {
                    k.add(pc, pr, hv[idx]);
                }
            }
        }
        for (idx, &(r, c)) in self.jac.iter().enumerate() {
            if self.fixed[c] {
                continue;
            }
            let (pr, pc) = (self.pos[self.n + r], self.pos[c]);
            k.add(pr, pc, jv[idx]);
            k.add(pc, pr, jv[idx]);
        }
        for j in 0..self.m {
            let p = self.pos[self.n + j];
            k.add(p, p, -d_c[j]);
        }
        k.factor().ok()
    }

    fn solve(&self, lu: &BandLu, rx: &[f64], rc: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut b = vec![0.0; self.n + self.m];
        for i in 0..self.n {
            b[self.pos[i]] = if self.fixed[i] { 0.0 } else { rx[i] };
        }
        for j in 0..self.m {
            b[self.pos[self.n + j]] = rc[j];
        }
        lu.solve(&mut b);
        let dx = (0..self.n)
            .map(|i| if self.fixed[i] { 0.0 } else { b[self.pos[i]] })
            .collect();
        let dy = (0..self.m).map(|j| b[self.pos[self.n + j]]).collect();
        (dx, dy)
    }

    fn max_step(&self, it: &Iterate, dx: &[f64], ds: &[f64], tau: f64) -> f64 {
        let mut a: f64 = 1.0;
        for i in 0..self.n {
            if self.fixed[i] {
                continue;
            }
            if self.has_l[i] && dx[i] < 0.0 {
                a = a.min(-tau * (it.x[i] - self.xl[i]) / dx[i]);
            }
            if self.has_u[i] && dx[i] > 0.0 {
                a = a.min(tau * (self.xu[i] - it.x[i]) / dx[i]);
            }
        }
        for j in 0..self.m {
            if self.is_eq[j] {
                continue;
            }
            if self.s_l[j] && ds[j] < 0.0 {
                a = a.min(-tau * (it.s[j] - self.cl[j]) / ds[j]);
            }
            if self.s_u[j] && ds[j] > 0.0 {
                a = a.min(tau * (self.cu[j] - it.s[j]) / ds[j]);
            }
        }
        a
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn amax(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dual_step(z: &[f64], dz: &[f64], active: &[bool], tau: f64) -> f64 {
    let mut a: f64 = 1.0;
    for i in 0..z.len() {
        if active[i] && dz[i] < 0.0 {
            a = a.min(-tau * z[i] / dz[i]);
        }
    }
    a
}

/// Unscaled max violation of constraints and bounds at `x`.
pub fn max_violation<P: Nlp>(p: &P, x: &[f64]) -> f64 {
    let (xl, xu) = p.var_bounds();
    let (cl, cu) = p.con_bounds();
    let mut c = vec![0.0; p.num_cons()];
    p.constraints(x, &mut c);
    let mut v: f64 = 0.0;
    for j in 0..c.len() {
        v = v.max(cl[j] - c[j]).max(c[j] - cu[j]);
    }
    for i in 0..x.len() {
        v = v.max(xl[i] - x[i]).max(x[i] - xu[i]);
    }
    v
}

/// Per-row unscaled violations, largest first.
pub fn worst_constraints<P: Nlp>(p: &P, x: &[f64], count: usize) -> Vec<(String, f64)> {
    let (cl, cu) = p.con_bounds();
    let mut c = vec![0.0; p.num_cons()];
    p.constraints(x, &mut c);
    let mut rows: Vec<(usize, f64)> = (0..c.len())
        .map(|j| (j, (cl[j] - c[j]).max(c[j] - cu[j]).max(0.0)))
        .filter(|(_, v)| *v > 0.0)
        .collect();
    rows.sort_by(|a, b| b.1.total_cmp(&a.1));
    rows.truncate(count);
    rows.into_iter().map(|(j, v)| (p.constraint_name(j), v)).collect()
}

/// Runs the interior-point method from `p.initial_point()`.
pub fn solve<P: Nlp>(p: &P, opt: &IpmOptions) -> IpmResult {
    let start = std::time::Instant::now();
    let n = p.num_vars();
    let m = p.num_cons();
    let (xl, xu) = p.var_bounds();
    let (cl0, cu0) = p.con_bounds();
    let jac = p.jacobian_structure();
    let hess = p.hessian_structure();
    let order = p.kkt_ordering();
    assert_eq!(order.len(), n + m, "ordering must cover every unknown");
    let mut pos = vec![usize::MAX; n + m];
    for (k, &u) in order.iter().enumerate() {
        pos[u] = k;
    }
    assert!(pos.iter().all(|&v| v != usize::MAX), "ordering must be a permutation");

    let fixed: Vec<bool> = (0..n).map(|i| (xu[i] - xl[i]).abs() <= 1e-14).collect();
    let mut x: Vec<f64> = p.initial_point();
    for i in 0..n {
        if fixed[i] {
            x[i] = xl[i];
        }
    }

    // Gradient-based scaling at the starting point.
    let mut g0 = vec![0.0; n];
    p.gradient(&x, &mut g0);
    let gmax = amax(&g0);
    let obj_scale = if gmax > 100.0 { 100.0 / gmax } else { 1.0 };
    let mut jv = vec![0.0; jac.len()];
    p.jacobian_values(&x, &mut jv);
    let mut rmax = vec![0.0f64; m];
    for (k, &(r, c)) in jac.iter().enumerate() {
        if !fixed[c] {
            rmax[r] = rmax[r].max(jv[k].abs());
        }
    }
    let row: Vec<f64> = rmax.iter().map(|&v| if v > 100.0 { 100.0 / v } else { 1.0 }).collect();
    let sp = Scaled {
        p,
        obj: obj_scale,
        row: row.clone(),
    };

    let mut bw = 0usize;
    for &(r, c) in &jac {
        if !fixed[c] {
            bw = bw.max(pos[n + r].abs_diff(pos[c]));
        }
    }
    for &(r, c) in &hess {
        if !fixed[r] && !fixed[c] {
            bw = bw.max(pos[r].abs_diff(pos[c]));
        }
    }

    let cl: Vec<f64> = (0..m)
        .map(|j| if cl0[j] <= -INF { cl0[j] } else { cl0[j] * row[j] })
        .collect();
    let cu: Vec<f64> = (0..m)
        .map(|j| if cu0[j] >= INF { cu0[j] } else { cu0[j] * row[j] })
        .collect();
    let is_eq: Vec<bool> = (0..m).map(|j| (cu0[j] - cl0[j]).abs() <= 1e-14).collect();
    let lay = Layout {
        n,
        m,
        has_l: (0..n).map(|i| !fixed[i] && xl[i] > -INF).collect(),
        has_u: (0..n).map(|i| !fixed[i] && xu[i] < INF).collect(),
        xl: xl.clone(),
        xu: xu.clone(),
        fixed,
        s_l: (0..m).map(|j| !is_eq[j] && cl[j] > -INF).collect(),
        s_u: (0..m).map(|j| !is_eq[j] && cu[j] < INF).collect(),
        cl,
        cu,
        is_eq,
        jac,
        hess,
        pos,
        bw,
    };

    for i in 0..n {
        if !lay.fixed[i] {
            x[i] = push_inside(x[i], xl[i], xu[i], lay.has_l[i], lay.has_u[i], opt.bound_push);
        }
    }
    let mut c = vec![0.0; m];
    sp.cons(&x, &mut c);
    let s: Vec<f64> = (0..m)
        .map(|j| {
            if lay.is_eq[j] {
                0.0
            } else {
                push_inside(c[j], lay.cl[j], lay.cu[j], lay.s_l[j], lay.s_u[j], opt.bound_push)
            }
        })
        .collect();
    let ones = |mask: &[bool]| -> Vec<f64> { mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect() };
    let mut it = Iterate {
        x,
        s,
        y: vec![0.0; m],
        zl: ones(&lay.has_l),
        zu: ones(&lay.has_u),
        vl: ones(&lay.s_l),
        vu: ones(&lay.s_u),
    };

    let mut g = vec![0.0; n];
    sp.grad(&it.x, &mut g);
    sp.p.jacobian_values(&it.x, &mut jv);
    for (k, &(r, _)) in lay.jac.iter().enumerate() {
        jv[k] *= row[r];
    }

    // Least-squares multiplier estimate.
    {
        let sig = vec![1.0; n];
        let zero = vec![0.0; m];
        let d_ls: Vec<f64> = lay.is_eq.iter().map(|&e| if e { 0.0 } else { 1.0 }).collect();
        if let Some(lu) = lay.factor(None, &jv, &sig, &d_ls) {
            let rx: Vec<f64> = (0..n).map(|i| -(g[i] - it.zl[i] + it.zu[i])).collect();
            let (_, y) = lay.solve(&lu, &rx, &zero);
            if amax(&y) <= 1e3 {
                it.y = y;
                for j in 0..m {
                    if !lay.is_eq[j] {
                        // Keep slack multipliers consistent with the bound duals.
                        it.y[j] = 0.0;
                    }
                }
            }
        }
    }

    let mut mu = opt.mu_init;
    let mut nu = 1.0;
    let mut delta_w_last = 0.0f64;
    let mut hv = vec![0.0; lay.hess.len()];
    let mut history = Vec::new();
    let mut acceptable_count = 0usize;
    let mut status = Status::MaxIterations;
    let mut iterations = 0;

    let e_mu = |it: &Iterate, g: &[f64], jv: &[f64], c: &[f64], mu: f64| -> (f64, f64, f64) {
        let jty = lay.jt_mul(jv, &it.y);
        let mut dual: f64 = 0.0;
        for i in 0..n {
            if lay.fixed[i] {
                continue;
            }
            dual = dual.max((g[i] + jty[i] - it.zl[i] + it.zu[i]).abs());
        }
        for j in 0..m {
            if !lay.is_eq[j] {
                dual = dual.max((-it.y[j] - it.vl[j] + it.vu[j]).abs());
            }
        }
        let prim = amax(&lay.residual(c, &it.s));
        let mut comp: f64 = 0.0;
        let mut zsum = 0.0;
        let mut zcount = 0usize;
        for i in 0..n {
            if lay.has_l[i] {
                comp = comp.max(((it.x[i] - lay.xl[i]) * it.zl[i] - mu).abs());
                zsum += it.zl[i];
                zcount += 1;
            }
            if lay.has_u[i] {
                comp = comp.max(((lay.xu[i] - it.x[i]) * it.zu[i] - mu).abs());
                zsum += it.zu[i];
                zcount += 1;
            }
        }
        for j in 0..m {
            if lay.s_l[j] {
                comp = comp.max(((it.s[j] - lay.cl[j]) * it.vl[j] - mu).abs());
                zsum += it.vl[j];
                zcount += 1;
            }
            if lay.s_u[j] {
                comp = comp.max(((lay.cu[j] - it.s[j]) * it.vu[j] - mu).abs());
                zsum += it.vu[j];
                zcount += 1;
            }
        }
        let smax: f64 = 100.0;
        let ysum: f64 = it.y.iter().map(|v| v.abs()).sum();
        let sd = (smax.max((ysum + zsum) / ((m + zcount).max(1) as f64))) / smax;
        let sc = (smax.max(zsum / (zcount.max(1) as f64))) / smax;
        (dual / sd, prim, comp / sc)
    };

    let unscaled_viol = |x: &[f64]| -> f64 { max_violation(p, x) };

    for iter in 0..opt.max_iter {
        iterations = iter;
        if start.elapsed().as_secs_f64() > opt.time_limit {
            status = Status::TimeLimit;
            break;
        }
        sp.cons(&it.x, &mut c);
        let (d0, p0, c0) = e_mu(&it, &g, &jv, &c, 0.0);
        let err0 = d0.max(p0).max(c0);
        let viol = unscaled_viol(&it.x);
        history.push(IterRecord {
            iter,
            objective: p.objective(&it.x),
            violation: viol,
            mu,
            alpha: history.last().map(|h: &IterRecord| h.alpha).unwrap_or(0.0),
        });
        if err0 <= opt.tol && viol <= opt.constr_tol {
            status = Status::Converged;
            break;
        }
        if err0 <= opt.acceptable_tol && viol <= opt.constr_tol {
            acceptable_count += 1;
            if acceptable_count >= opt.acceptable_iter {
                status = Status::Acceptable;
                break;
            }
        } else {
            acceptable_count = 0;
        }

        // Barrier update.
        loop {
            let (d, pr, cm) = e_mu(&it, &g, &jv, &c, mu);
            if d.max(pr).max(cm) <= 10.0 * mu && mu > opt.tol / 10.0 {
                mu = (opt.tol / 10.0).max((0.2 * mu).min(mu.powf(1.5)));
            } else {
                break;
            }
        }
        let tau = (1.0 - mu).max(0.99);

        let sig_x: Vec<f64> = (0..n)
            .map(|i| {
                let mut v = 0.0;
                if lay.has_l[i] {
                    v += it.zl[i] / (it.x[i] - lay.xl[i]);
                }
                if lay.has_u[i] {
                    v += it.zu[i] / (lay.xu[i] - it.x[i]);
                }
                v
            })
            .collect();
        let sig_s: Vec<f64> = (0..m)
            .map(|j| {
                let mut v = 0.0;
                if lay.s_l[j] {
                    v += it.vl[j] / (it.s[j] - lay.cl[j]);
                }
                if lay.s_u[j] {
                    v += it.vu[j] / (lay.cu[j] - it.s[j]);
                }
                v
            })
            .collect();

        sp.p.hessian_values(&it.x, obj_scale, &scaled_to_unscaled(&it.y, &row), &mut hv);
        let gphi_x = lay.barrier_grad_x(&g, &it.x, mu);
        let gphi_s = lay.barrier_grad_s(&it.s, mu);
        let jty = lay.jt_mul(&jv, &it.y);
        let rx: Vec<f64> = (0..n).map(|i| -(gphi_x[i] + jty[i])).collect();
        let r_s: Vec<f64> = (0..m)
            .map(|j| if lay.is_eq[j] { 0.0 } else { gphi_s[j] - it.y[j] })
            .collect();
        let ctil = lay.residual(&c, &it.s);

        // Factor with inertia-free curvature regularisation.
        let mut delta_w = 0.0;
        let mut delta_c = 0.0;
        let mut tries = 0;
        let (dx, ds, dy, lu, dc_vec, sig_w) = loop {
            tries += 1;
            if tries > 60 {
                break (Vec::new(), Vec::new(), Vec::new(), None, Vec::new(), Vec::new());
            }
            let sig_w: Vec<f64> = sig_x.iter().map(|v| v + delta_w).collect();
            let dc_vec: Vec<f64> = (0..m)
                .map(|j| {
                    if lay.is_eq[j] {
                        delta_c
                    } else {
                        1.0 / (sig_s[j] + delta_w) + delta_c
                    }
                })
                .collect();
            let Some(lu) = lay.factor(Some(&hv), &jv, &sig_w, &dc_vec) else {
                if delta_c == 0.0 {
                    delta_c = 1e-8 * mu.powf(0.25);
                } else {
                    delta_w = next_delta(delta_w, delta_w_last);
                }
                continue;
            };
            let rc: Vec<f64> = (0..m)
                .map(|j| {
                    if lay.is_eq[j] {
                        -ctil[j]
                    } else {
                        -ctil[j] - r_s[j] / (sig_s[j] + delta_w)
                    }
                })
                .collect();
            let (dx, dy) = lay.solve(&lu, &rx, &rc);
            if dx.iter().chain(dy.iter()).any(|v| !v.is_finite()) {
                delta_w = next_delta(delta_w, delta_w_last);
                continue;
            }
            let ds: Vec<f64> = (0..m)
                .map(|j| {
                    if lay.is_eq[j] {
                        0.0
                    } else {
                        (dy[j] - r_s[j]) / (sig_s[j] + delta_w)
                    }
                })
                .collect();
            let hdx = lay.h_mul(&hv, &dx);
            let mut curv = 0.0;
            let mut nrm = 0.0;
            for i in 0..n {
                curv += dx[i] * (hdx[i] + sig_w[i] * dx[i]);
                nrm += dx[i] * dx[i];
            }
            for j in 0..m {
                curv += ds[j] * ds[j] * (sig_s[j] + delta_w);
                nrm += ds[j] * ds[j];
            }
            if curv < 1e-8 * nrm {
                delta_w = next_delta(delta_w, delta_w_last);
                continue;
            }
            break (dx, ds, dy, Some(lu), dc_vec, sig_w);
        };
        let Some(lu) = lu else {
            status = Status::NumericalError;
            break;
        };
        let _ = (&dc_vec, &sig_w);
        if delta_w > 0.0 {
            delta_w_last = delta_w;
        }

        // Penalty parameter.
        let cnorm = norm2(&ctil);
        let gd = dot(&gphi_x, &dx) + dot(&gphi_s, &ds);
        let hdx = lay.h_mul(&hv, &dx);
        let mut dwd = 0.0;
        for i in 0..n {
            dwd += dx[i] * (hdx[i] + sig_x[i] * dx[i]);
        }
        for j in 0..m {
            dwd += ds[j] * ds[j] * sig_s[j];
        }
        if cnorm > 1e-12 {
            let nu_trial = (gd + 0.5 * dwd.max(0.0)) / (0.9 * cnorm);
            if nu < nu_trial {
                nu = nu_trial + 1.0;
            }
        }
        let f0 = sp.f(&it.x);
        let merit0 = lay.barrier(&it.x, &it.s, mu, f0) + nu * cnorm;
        let dmerit = gd - nu * cnorm;

        let alpha_max = lay.max_step(&it, &dx, &ds, tau);
        let mut alpha = alpha_max;
        let mut accepted: Option<(Vec<f64>, Vec<f64>, f64)> = None;
        let mut ctrial = vec![0.0; m];
        let mut first = true;
        while alpha > 1e-14 {
            let xt: Vec<f64> = (0..n).map(|i| it.x[i] + alpha * dx[i]).collect();
            let st: Vec<f64> = (0..m).map(|j| it.s[j] + alpha * ds[j]).collect();
            sp.cons(&xt, &mut ctrial);
            let ft = sp.f(&xt);
            let ct = lay.residual(&ctrial, &st);
            let mt = lay.barrier(&xt, &st, mu, ft) + nu * norm2(&ct);
            if mt.is_finite() && mt <= merit0 + 1e-4 * alpha * dmerit {
                accepted = Some((xt, st, alpha));
                break;
            }
            if first && alpha == alpha_max && norm2(&ct) >= cnorm {
                // Second-order correction.
                let c_soc: Vec<f64> = (0..m).map(|j| alpha * ctil[j] + ct[j]).collect();
                let rc: Vec<f64> = (0..m)
                    .map(|j| {
                        if lay.is_eq[j] {
                            -c_soc[j]
                        } else {
                            -c_soc[j] - alpha * r_s[j] / (sig_s[j] + delta_w)
                        }
                    })
                    .collect();
                let rx_soc: Vec<f64> = rx.iter().map(|v| alpha * v).collect();
                let (dxs, dys) = lay.solve(&lu, &rx_soc, &rc);
                let dss: Vec<f64> = (0..m)
                    .map(|j| {
                        if lay.is_eq[j] {
                            0.0
                        } else {
                            (dys[j] - alpha * r_s[j]) / (sig_s[j] + delta_w)
                        }
                    })
                    .collect();
                let a_soc = lay.max_step(&it, &dxs, &dss, tau);
                if a_soc >= 1.0 - 1e-12 {
                    let xs: Vec<f64> = (0..n).map(|i| it.x[i] + dxs[i]).collect();
                    let ss: Vec<f64> = (0..m).map(|j| it.s[j] + dss[j]).collect();
                    sp.cons(&xs, &mut ctrial);
                    let fs = sp.f(&xs);
                    let cs = lay.residual(&ctrial, &ss);
                    let ms = lay.barrier(&xs, &ss, mu, fs) + nu * norm2(&cs);
                    if ms.is_finite() && ms <= merit0 + 1e-4 * alpha * dmerit {
                        accepted = Some((xs, ss, alpha));
                        break;
                    }
                }
            }
            first = false;
            alpha *= 0.5;
        }
        let Some((xn, sn, alpha)) = accepted else {
            status = Status::LineSearchFailed;
            break;
        };
        if let Some(h) = history.last_mut() {
            h.alpha = alpha;
        }

        // Dual updates.
        let mut dzl = vec![0.0; n];
        let mut dzu = vec![0.0; n];
        for i in 0..n {
            if lay.has_l[i] {
                let gap = it.x[i] - lay.xl[i];
                dzl[i] = mu / gap - it.zl[i] - it.zl[i] / gap * dx[i];
            }
            if lay.has_u[i] {
                let gap = lay.xu[i] - it.x[i];
                dzu[i] = mu / gap - it.zu[i] + it.zu[i] / gap * dx[i];
            }
        }
        let mut dvl = vec![0.0; m];
        let mut dvu = vec![0.0; m];
        for j in 0..m {
            if lay.s_l[j] {
                let gap = it.s[j] - lay.cl[j];
                dvl[j] = mu / gap - it.vl[j] - it.vl[j] / gap * ds[j];
            }
            if lay.s_u[j] {
                let gap = lay.cu[j] - it.s[j];
                dvu[j] = mu / gap - it.vu[j] + it.vu[j] / gap * ds[j];
            }
        }
        let az = dual_step(&it.zl, &dzl, &lay.has_l, tau)
            .min(dual_step(&it.zu, &dzu, &lay.has_u, tau))
            .min(dual_step(&it.vl, &dvl, &lay.s_l, tau))
            .min(dual_step(&it.vu, &dvu, &lay.s_u, tau));
        it.x = xn;
        it.s = sn;
        for j in 0..m {
            it.y[j] += alpha * dy[j];
        }
        let kappa = 1e10;
        let clamp = |z: f64, gap: f64| -> f64 { z.max(mu / (kappa * gap)).min(kappa * mu / gap) };
        for i in 0..n {
            if lay.has_l[i] {
                it.zl[i] = clamp(it.zl[i] + az * dzl[i], it.x[i] - lay.xl[i]);
            }
            if lay.has_u[i] {
                it.zu[i] = clamp(it.zu[i] + az * dzu[i], lay.xu[i] - it.x[i]);
            }
        }
        for j in 0..m {
            if lay.s_l[j] {
                it.vl[j] = clamp(it.vl[j] + az * dvl[j], it.s[j] - lay.cl[j]);
            }
            if lay.s_u[j] {
                it.vu[j] = clamp(it.vu[j] + az * dvu[j], lay.cu[j] - it.s[j]);
            }
        }

        sp.grad(&it.x, &mut g);
        sp.p.jacobian_values(&it.x, &mut jv);
        for (k, &(r, _)) in lay.jac.iter().enumerate() {
            jv[k] *= row[r];
        }
        iterations = iter + 1;
    }

    let lambda = scaled_to_unscaled(&it.y, &row)
        .into_iter()
        .map(|v| v / obj_scale)
        .collect();
    IpmResult {
        status,
        objective: p.objective(&it.x),
        violation: max_violation(p, &it.x),
        x: it.x,
        lambda,
        iterations,
        history,
    }
}

fn scaled_to_unscaled(y: &[f64], row: &[f64]) -> Vec<f64> {
    y.iter().zip(row).map(|(a, b)| a * b).collect()
}

fn next_delta(current: f64, last: f64) -> f64 {
    if current == 0.0 {
        if last == 0.0 {
            1e-4
        } else {
            (last / 3.0).max(1e-20)
        }
    } else if last == 0.0 {
        current * 100.0
    } else {
        current * 8.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// HS071: min x0 x3 (x0 + x1 + x2) + x2
    /// s.t. x0 x1 x2 x3 >= 25, Σ x² = 40, 1 <= x <= 5.
    struct Hs071;

    impl Nlp for Hs071 {
        fn num_vars(&self) -> usize {
            4
        }
        fn num_cons(&self) -> usize {
            2
        }
        fn var_bounds(&self) -> (Vec<f64>, Vec<f64>) {
            (vec![1.0; 4], vec![5.0; 4])
        }
        fn con_bounds(&self) -> (Vec<f64>, Vec<f64>) {
            (vec![25.0, 40.0], vec![2e19, 40.0])
        }
        fn initial_point(&self) -> Vec<f64> {
            vec![1.0, 5.0, 5.0, 1.0]
        }
        fn objective(&self, x: &[f64]) -> f64 {
            x[0] * x[3] * (x[0] + x[1] + x[2]) + x[2]
        }
        fn gradient(&self, x: &[f64], g: &mut [f64]) {
            g[0] = x[3] * (2.0 * x[0] + x[1] + x[2]);
            g[1] = x[0] * x[3];
            g[2] = x[0] * x[3] + 1.0;
            g[3] = x[0] * (x[0] + x[1] + x[2]);
        }
        fn constraints(&self, x: &[f64], c: &mut [f64]) {
            c[0] = x[0] * x[1] * x[2] * x[3];
            c[1] = x.iter().map(|v| v * v).sum();
        }
        fn jacobian_structure(&self) -> Vec<(usize, usize)> {
            (0..2).flat_map(|r| (0..4).map(move |c| (r, c))).collect()
        }
        fn jacobian_values(&self, x: &[f64], v: &mut [f64]) {
            v[0] = x[1] * x[2] * x[3];
            v[1] = x[0] * x[2] * x[3];
            v[2] = x[0] * x[1] * x[3];
            v[3] = x[0] * x[1] * x[2];
            for i in 0..4 {
                v[4 + i] = 2.0 * x[i];
            }
        }
        fn hessian_structure(&self) -> Vec<(usize, usize)> {
            (0..4).flat_map(|r| (0..=r).map(move |c| (r, c))).collect()
        }
        fn hessian_values(&self, x: &[f64], of: f64, l: &[f64], v: &mut [f64]) {
            // Order: (0,0) (1,0) (1,1) (2,0) (2,1) (2,2) (3,0) (3,1) (3,2) (3,3)
            v[0] = of * 2.0 * x[3] + l[1] * 2.0;
            v[1] = of * x[3] + l[0] * x[2] * x[3];
            v[2] = l[1] * 2.0;
            v[3] = of * x[3] + l[0] * x[1] * x[3];
            v[4] = l[0] * x[0] * x[3];
            v[5] = l[1] * 2.0;
            v[6] = of * (2.0 * x[0] + x[1] + x[2]) + l[0] * x[1] * x[2];
            v[7] = of * x[0] + l[0] * x[0] * x[2];
            v[8] = of * x[0] + l[0] * x[0] * x[1];
            v[9] = l[1] * 2.0;
        }
    }

    #[test]
    fn hs071_reaches_known_optimum() {
        let r = solve(&Hs071, &IpmOptions::default());
        assert!(r.status.is_success(), "{:?}", r.status);
        let expect = [1.0, 4.742_999_64, 3.821_149_98, 1.379_408_29];
        for (a, b) in r.x.iter().zip(expect) {
            assert!((a - b).abs() < 1e-6, "{:?}", r.x);
        }
        assert!((r.objective - 17.014_017_29).abs() < 1e-6);
        assert!(r.violation < 1e-8);
    }

    /// min Σ (x_i - i)² subject to a chain x_{i+1} - x_i = 0.5 and x_0 fixed.
    struct Chain(usize);

    impl Nlp for Chain {
        fn num_vars(&self) -> usize {
            self.0
        }
        fn num_cons(&self) -> usize {
            self.0 - 1
        }
        fn var_bounds(&self) -> (Vec<f64>, Vec<f64>) {
            let mut lo = vec![-2e19; self.0];
            let mut hi = vec![2e19; self.0];
            lo[0] = 0.0;
            hi[0] = 0.0;
            (lo, hi)
        }
        fn con_bounds(&self) -> (Vec<f64>, Vec<f64>) {
            (vec![0.5; self.0 - 1], vec![0.5; self.0 - 1])
        }
        fn initial_point(&self) -> Vec<f64> {
            vec![3.0; self.0]
        }
        fn objective(&self, x: &[f64]) -> f64 {
            x.iter().enumerate().map(|(i, v)| (v - i as f64).powi(2)).sum()
        }
        fn gradient(&self, x: &[f64], g: &mut [f64]) {
            for i in 0..self.0 {
                g[i] = 2.0 * (x[i] - i as f64);
            }
        }
        fn constraints(&self, x: &[f64], c: &mut [f64]) {
            for j in 0..self.0 - 1 {
                c[j] = x[j + 1] - x[j];
            }
        }
        fn jacobian_structure(&self) -> Vec<(usize, usize)> {
            (0..self.0 - 1).flat_map(|j| [(j, j), (j, j + 1)]).collect()
        }
        fn jacobian_values(&self, _: &[f64], v: &mut [f64]) {
            for j in 0..self.0 - 1 {
                v[2 * j] = -1.0;
                v[2 * j + 1] = 1.0;
            }
        }
        fn hessian_structure(&self) -> Vec<(usize, usize)> {
            (0..self.0).map(|i| (i, i)).collect()
        }
        fn hessian_values(&self, _: &[f64], of: f64, _: &[f64], v: &mut [f64]) {
            v.iter_mut().for_each(|h| *h = 2.0 * of);
        }
        fn kkt_ordering(&self) -> Vec<usize> {
            let n = self.0;
            let mut o = Vec::new();
            for i in 0..n {
                o.push(i);
                if i + 1 < n {
                    o.push(n + i);
                }
            }
            o
        }
    }

    #[test]
    fn fixed_variables_and_banded_ordering() {
        let r = solve(&Chain(50), &IpmOptions::default());
        assert_eq!(r.status, Status::Converged);
        for (i, v) in r.x.iter().enumerate() {
            assert!((v - 0.5 * i as f64).abs() < 1e-9);
        }
    }
}
