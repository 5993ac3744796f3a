//! Knot-level acceleration in attitude-increment coordinates with exact
//! first derivatives.
//!
//! Input vector layout `y = [θ(3), v(3), ω(3), F, f_a(3), m_a(3)]` where the
//! attitude is `R = R_ref exp(θ)`.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3, Vector6};

use crate::contact::{ContactFrame, ContactParams};
use crate::model::UamParams;
use crate::se3::{exp_so3, hat, right_jacobian};

pub(crate) const NY: usize = 16;
pub(crate) type YVec = SVector<f64, NY>;
pub(crate) type AJac = SMatrix<f64, 6, NY>;

const TH: usize = 0;
const V: usize = 3;
const W: usize = 6;
const F: usize = 9;
const FA: usize = 10;
const MA: usize = 13;

#[derive(Debug, Clone)]
pub(crate) struct KnotModel {
    m: f64,
    g: f64,
    t: Vector3<f64>,
    je: Matrix3<f64>,
    je_inv: Matrix3<f64>,
    pub r_ref: Matrix3<f64>,
    n_t: Vector3<f64>,
    lat: Vector3<f64>,
    t_z: Vector3<f64>,
    mu_y: f64,
    mu_z: f64,
    eps: f64,
}

impl KnotModel {
    pub fn new(params: &UamParams, frame: &ContactFrame, cp: &ContactParams) -> Self {
        let je = params.tip_inertia();
        KnotModel {
            m: params.mass,
            g: params.gravity,
            t: params.t_b_e,
            je,
            je_inv: je.try_inverse().expect("tip inertia is positive definite"),
            r_ref: *frame.rotation().matrix(),
            n_t: frame.n_t,
            lat: frame.lateral(),
            t_z: frame.t_z,
            mu_y: cp.mu_y,
            mu_z: cp.mu_z,
            eps: cp.v_eps,
        }
    }

    fn v3(y: &YVec, at: usize) -> Vector3<f64> {
        Vector3::new(y[at], y[at + 1], y[at + 2])
    }

    /// Rigid-body part (no contact) and its Jacobian.
    pub fn rigid(&self, y: &YVec) -> (Vector6<f64>, AJac) {
        let th = Self::v3(y, TH);
        let w = Self::v3(y, W);
        let fa = Self::v3(y, FA);
        let ma = Self::v3(y, MA);
        let r = self.r_ref * exp_so3(&th).matrix();
        let jr = right_jacobian(&th);
        let u = r.transpose() * Vector3::z();
        let grav = u * (self.m * self.g);
        let dgrav = hat(&u) * jr * (self.m * self.g);
        let tt = hat(&self.t);

        let f_net = fa - grav;
        let tau_e = ma - self.t.cross(&f_net);
        let hw = self.je * w;
        let wd = self.je_inv * (tau_e - w.cross(&hw));

        let mut jwd = SMatrix::<f64, 3, NY>::zeros();
        jwd.fixed_view_mut::<3, 3>(0, TH).copy_from(&(self.je_inv * tt * dgrav));
        jwd.fixed_view_mut::<3, 3>(0, W)
            .copy_from(&(self.je_inv * (hat(&hw) - hat(&w) * self.je)));
        jwd.fixed_view_mut::<3, 3>(0, FA).copy_from(&(-self.je_inv * tt));
        jwd.fixed_view_mut::<3, 3>(0, MA).copy_from(&self.je_inv);

        let q = w.cross(&self.t);
        let b = fa - self.t.cross(&wd) * self.m - q.cross(&w) * self.m;
        let mut jb = -(tt * jwd) * self.m;
        let dqw = (hat(&w) * tt + hat(&q)) * self.m;
        for c in 0..3 {
            for rr in 0..3 {
                jb[(rr, W + c)] -= dqw[(rr, c)];
            }
            jb[(c, FA + c)] += 1.0;
        }

        let a_lin = r * b / self.m - Vector3::z() * self.g;
        let mut ja = AJac::zeros();
        let jlin = r * jb / self.m;
        ja.fixed_view_mut::<3, NY>(0, 0).copy_from(&jlin);
        let dth = -(r * hat(&b) * jr) / self.m;
        for c in 0..3 {
            for rr in 0..3 {
                ja[(rr, TH + c)] += dth[(rr, c)];
            }
        }
        ja.fixed_view_mut::<3, NY>(3, 0).copy_from(&jwd);
        let mut a = Vector6::zeros();
        a.fixed_rows_mut::<3>(0).copy_from(&a_lin);
        a.fixed_rows_mut::<3>(3).copy_from(&wd);
        (a, ja)
    }

    fn slip(&self, v: &Vector3<f64>) -> (f64, f64) {
        (v.dot(&self.lat) / self.eps, v.dot(&self.t_z) / self.eps)
    }

    /// Contact force direction per unit normal force, world frame.
    fn contact_dir(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let (sl, sz) = self.slip(v);
        -self.n_t - self.lat * (self.mu_y * sl.tanh()) - self.t_z * (self.mu_z * sz.tanh())
    }

    /// Full acceleration with smooth friction, plus its Jacobian.
    pub fn accel(&self, y: &YVec) -> (Vector6<f64>, AJac) {
        let (mut a, mut ja) = self.rigid(y);
        let v = Self::v3(y, V);
        let f = y[F];
        let dir = self.contact_dir(&v);
        let (sl, sz) = self.slip(&v);
        let sech2 = |s: f64| 1.0 - s.tanh().powi(2);
        let dv = (self.lat * self.lat.transpose() * (self.mu_y * sech2(sl))
            + self.t_z * self.t_z.transpose() * (self.mu_z * sech2(sz)))
            * (-f / (self.eps * self.m));
        for rr in 0..3 {
            a[rr] += dir[rr] * f / self.m;
            ja[(rr, F)] += dir[rr] / self.m;
            for c in 0..3 {
                ja[(rr, V + c)] += dv[(rr, c)];
            }
        }
        (a, ja)
    }

    /// Hessian of `λᵀ a(y)` for `λ` over the six acceleration rows.
    ///
    /// The rigid part is differentiated numerically from its exact Jacobian;
    /// the friction part is exact.
    pub fn hessian(&self, y: &YVec, lam: &Vector6<f64>) -> SMatrix<f64, NY, NY> {
        let mut h = SMatrix::<f64, NY, NY>::zeros();
        let cols = [
            TH,
            TH + 1,
            TH + 2,
            W,
            W + 1,
            W + 2,
            FA,
            FA + 1,
            FA + 2,
            MA,
            MA + 1,
            MA + 2,
        ];
        for &i in &cols {
            let step = 1e-5 * y[i].abs().max(1.0);
            let mut yp = *y;
            let mut ym = *y;
            yp[i] += step;
            ym[i] -= step;
            let gp = self.rigid(&yp).1.transpose() * lam;
            let gm = self.rigid(&ym).1.transpose() * lam;
            let col = (gp - gm) / (2.0 * step);
            for &r in &cols {
                h[(r, i)] = col[r];
            }
        }
        let h = (h + h.transpose()) * 0.5;
        let mut h = h;
        let v = Self::v3(y, V);
        let f = y[F];
        let (sl, sz) = self.slip(&v);
        let ll = lam.fixed_rows::<3>(0).into_owned();
        for (dir, s, mu) in [(self.lat, sl, self.mu_y), (self.t_z, sz, self.mu_z)] {
            let th = s.tanh();
            let se = 1.0 - th * th;
            let proj = ll.dot(&dir);
            // d/dv of (F/m)(-mu tanh(v·d/eps))(λ·d)
            let dvv = dir * dir.transpose() * (-mu * proj * f / self.m * (-2.0 * th * se) / (self.eps * self.eps));
            let dvf = dir * (-mu * proj * se / (self.eps * self.m));
            for r in 0..3 {
                for c in 0..3 {
                    h[(V + r, V + c)] += dvv[(r, c)];
                }
                h[(V + r, F)] += dvf[r];
                h[(F, V + r)] += dvf[r];
            }
        }
        h
    }
}
