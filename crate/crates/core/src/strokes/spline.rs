//! Natural cubic splines over a strictly increasing knot vector.

/// One scalar channel `y(u)` with zero second derivative at both ends.
#[derive(Debug, Clone)]
pub(crate) struct Natural {
    u: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl Natural {
    /// `u` must be strictly increasing with at least two entries.
    pub(crate) fn new(u: &[f64], y: &[f64]) -> Self {
        let n = u.len();
        debug_assert!(n >= 2 && y.len() == n);
        let mut m = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior second derivatives.
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            let mut upper = vec![0.0; k];
            for i in 0..k {
                let h0 = u[i + 1] - u[i];
                let h1 = u[i + 2] - u[i + 1];
                diag[i] = 2.0 * (h0 + h1);
                upper[i] = h1;
                rhs[i] = 6.0 * ((y[i + 2] - y[i + 1]) / h1 - (y[i + 1] - y[i]) / h0);
            }
            for i in 1..k {
                let w = (u[i + 1] - u[i]) / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
            }
        }
        Natural {
            u: u.to_vec(),
            y: y.to_vec(),
            m,
        }
    }

    fn segment(&self, t: f64) -> usize {
        let last = self.u.len() - 2;
        match self.u.binary_search_by(|x| x.total_cmp(&t)) {
            Ok(i) => i.min(last),
            Err(i) => i.saturating_sub(1).min(last),
        }
    }

    /// Value, first and second derivative at `t`.
    pub(crate) fn eval(&self, t: f64) -> (f64, f64, f64) {
        let i = self.segment(t);
        let (u0, u1) = (self.u[i], self.u[i + 1]);
        let h = u1 - u0;
        let (a, b) = ((u1 - t) / h, (t - u0) / h);
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        let (y0, y1) = (self.y[i], self.y[i + 1]);
        let v = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let d = (y1 - y0) / h + ((1.0 - 3.0 * a * a) * m0 + (3.0 * b * b - 1.0) * m1) * h / 6.0;
        let dd = a * m0 + b * m1;
        (v, d, dd)
    }

    pub(crate) fn knots(&self) -> &[f64] {
        &self.u
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn interpolates_knots_and_reproduces_lines() {
        let u = [0.0, 1.0, 2.5, 4.0];
        let s = Natural::new(&u, &[1.0, 3.0, 6.0, 9.0]);
        for (t, y) in u.iter().zip([1.0, 3.0, 6.0, 9.0]) {
            assert_relative_eq!(s.eval(*t).0, y, epsilon = 1e-12);
        }
        let line = Natural::new(&u, &[0.0, 2.0, 5.0, 8.0]);
        for t in [0.3, 1.7, 3.9] {
            let (v, d, dd) = line.eval(t);
            assert_relative_eq!(v, 2.0 * t, epsilon = 1e-12);
            assert_relative_eq!(d, 2.0, epsilon = 1e-12);
            assert_relative_eq!(dd, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn second_derivative_vanishes_at_the_ends() {
        let s = Natural::new(&[0.0, 1.0, 2.0, 3.0, 4.0], &[0.0, 1.0, 0.0, 2.0, -1.0]);
        assert_relative_eq!(s.eval(0.0).2, 0.0, epsilon = 1e-12);
        assert_relative_eq!(s.eval(4.0).2, 0.0, epsilon = 1e-12);
        // C2 continuity at an interior knot.
        let (l, r) = (s.eval(2.0 - 1e-9), s.eval(2.0 + 1e-9));
        assert_relative_eq!(l.1, r.1, epsilon = 1e-6);
        assert_relative_eq!(l.2, r.2, epsilon = 1e-6);
    }
}
