//! Small numerical kernels shared across modules: adaptive quadrature, scalar
//! root finding, golden-section search, monotone interpolation and
//! symmetric tridiagonal eigenvalues.

use crate::error::{Error, Result};

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Composite Gauss-Legendre (5 nodes) on `panels` equal subintervals.
pub fn gauss_legendre<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    const X: [f64; 5] = [
        0.0,
        -0.538_469_310_105_683_1,
        0.538_469_310_105_683_1,
        -0.906_179_845_938_664,
        0.906_179_845_938_664,
    ];
    const W: [f64; 5] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
        0.236_926_885_056_189_1,
    ];
    let panels = panels.max(1);
    let h = (b - a) / panels as f64;
    let mut sum = 0.0;
    for p in 0..panels {
        let c = a + (p as f64 + 0.5) * h;
        for (x, w) in X.iter().zip(W) {
            sum += w * f(c + 0.5 * h * x);
        }
    }
    0.5 * h * sum
}

/// Root of `f` in `[lo, hi]` by bisection followed by secant polishing.
pub fn bisect_secant<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, xtol: f64) -> Result<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::Domain(format!("root not bracketed in [{lo}, {hi}]")));
    }
    // coarse bisection
    for _ in 0..60 {
        if (hi - lo) <= 1e3 * xtol.max(f64::EPSILON * hi.abs()) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    // secant polish, kept inside the bracket
    let (mut x0, mut x1) = (lo, hi);
    let (mut f0, mut f1) = (f(x0), f(x1));
    for _ in 0..50 {
        if f1 == f0 {
            break;
        }
        let x2 = x1 - f1 * (x1 - x0) / (f1 - f0);
        let x2 = x2.clamp(lo.min(hi), lo.max(hi));
        if (x2 - x1).abs() <= xtol {
            return Ok(x2);
        }
        x0 = x1;
        f0 = f1;
        x1 = x2;
        f1 = f(x1);
    }
    Ok(x1)
}

/// Golden-section search for the maximum of a unimodal `f` on `[lo, hi]`.
pub fn golden_max<F: FnMut(f64) -> Result<f64>>(mut f: F, mut lo: f64, mut hi: f64, xtol: f64) -> Result<f64> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while (hi - lo).abs() > xtol {
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c)?;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d)?;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Monotone piecewise-cubic Hermite interpolant (Fritsch-Carlson slopes).
#[derive(Debug, Clone)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl Pchip {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(Error::Domain("pchip needs >= 2 matching samples".into()));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("pchip abscissae must be strictly increasing".into()));
        }
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut m = vec![0.0; n];
        if n == 2 {
            m[0] = delta[0];
            m[1] = delta[0];
        } else {
            for i in 1..n - 1 {
                if delta[i - 1] * delta[i] <= 0.0 {
                    m[i] = 0.0;
                } else {
                    let w1 = 2.0 * h[i] + h[i - 1];
                    let w2 = h[i] + 2.0 * h[i - 1];
                    m[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
                }
            }
            m[0] = end_slope(h[0], h[1], delta[0], delta[1]);
            m[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Ok(Pchip { x, y, m })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x[0], *self.x.last().unwrap())
    }

    /// Evaluates the interpolant; `None` outside the sampled interval.
    pub fn eval(&self, t: f64) -> Option<f64> {
        let (lo, hi) = self.domain();
        if !(t >= lo && t <= hi) {
            return None;
        }
        let i = match self.x.partition_point(|&v| v <= t) {
            0 => 0,
            k if k >= self.x.len() => self.x.len() - 2,
            k => k - 1,
        };
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        Some(h00 * self.y[i] + h10 * h * self.m[i] + h01 * self.y[i + 1] + h11 * h * self.m[i + 1])
    }
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let m = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if m.signum() != d0.signum() {
        0.0
    } else if d0.signum() != d1.signum() && m.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        m
    }
}

/// Linear interpolation on strictly increasing abscissae; `None` outside.
pub fn lerp_table(x: &[f64], y: &[f64], t: f64) -> Option<f64> {
    let n = x.len();
    if n == 0 || !(t >= x[0] && t <= x[n - 1]) {
        return None;
    }
    if n == 1 {
        return Some(y[0]);
    }
    let k = x.partition_point(|&v| v <= t).clamp(1, n - 1);
    let (x0, x1) = (x[k - 1], x[k]);
    let s = (t - x0) / (x1 - x0);
    Some(y[k - 1] + s * (y[k] - y[k - 1]))
}

/// Lowest `count` eigenvalues (ascending) of the symmetric tridiagonal matrix
/// with `diag` and constant off-diagonal `off`, by Sturm-sequence bisection.
pub fn tridiag_lowest_eigenvalues(diag: &[f64], off: f64, count: usize) -> Vec<f64> {
    let n = diag.len();
    let count = count.min(n);
    // Gershgorin bounds
    let lo = diag.iter().fold(f64::INFINITY, |a, &d| a.min(d)) - 2.0 * off.abs();
    let hi = diag.iter().fold(f64::NEG_INFINITY, |a, &d| a.max(d)) + 2.0 * off.abs();
    let off2 = off * off;
    // number of eigenvalues strictly below x
    let sturm = |x: f64| -> usize {
        let mut c = 0;
        let mut q = diag[0] - x;
        if q < 0.0 {
            c += 1;
        }
        for d in &diag[1..] {
            let prev = if q == 0.0 { f64::EPSILON * (off.abs() + 1.0) } else { q };
            q = d - x - off2 / prev;
            if q < 0.0 {
                c += 1;
            }
        }
        c
    };
    let mut out = Vec::with_capacity(count);
    let mut lower = lo;
    for k in 0..count {
        let (mut a, mut b) = (lower, hi);
        while b - a > 4.0 * f64::EPSILON * (a.abs().max(b.abs()).max(1.0)) {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if sturm(mid) > k {
                b = mid;
            } else {
                a = mid;
            }
        }
        let ev = 0.5 * (a + b);
        out.push(ev);
        lower = a;
    }
    out
}

/// Minimal-cost perfect assignment for a square cost matrix (row-major `n x n`).
/// Returns `assign[row] = col`. Kuhn-Munkres with potentials, O(n^3).
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    let inf = f64::INFINITY;
    // 1-based arrays as in the classic formulation
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

/// Real least-squares polynomial fit of degree `deg`; returns coefficients
/// lowest order first and the RMS residual.
pub fn polyfit(x: &[f64], y: &[f64], deg: usize) -> Result<(Vec<f64>, f64)> {
    let m = x.len();
    if m <= deg || y.len() != m {
        return Err(Error::Domain(format!("polyfit needs more than {deg} points")));
    }
    // centre and scale the abscissa for conditioning
    let mean = x.iter().sum::<f64>() / m as f64;
    let scale = x.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let a = nalgebra::DMatrix::from_fn(m, deg + 1, |i, j| ((x[i] - mean) / scale).powi(j as i32));
    let b = nalgebra::DVector::from_column_slice(y);
    let svd = a.clone().svd(true, true);
    let c = svd.solve(&b, 1e-14).map_err(|e| Error::Domain(e.to_string()))?;
    let resid = (&a * &c - &b).norm() / (m as f64).sqrt();
    // expand back into powers of x
    let mut out = vec![0.0; deg + 1];
    let mut binom = vec![vec![0.0; deg + 1]; deg + 1];
    for n in 0..=deg {
        binom[n][0] = 1.0;
        for k in 1..=n {
            binom[n][k] = binom[n - 1][k - 1] + if k < n { binom[n - 1][k] } else { 0.0 };
        }
    }
    for (j, cj) in c.iter().enumerate() {
        // cj * ((x - mean)/scale)^j
        let f = cj / scale.powi(j as i32);
        for k in 0..=j {
            out[k] += f * binom[j][k] * (-mean).powi((j - k) as i32);
        }
    }
    Ok((out, resid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    #[test]
    fn simpson_integrates_smooth_functions() {
        let v = adaptive_simpson(&|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-12);
        assert_relative_eq!(v, 2.0, max_relative = 1e-11);
        let v = adaptive_simpson(&|x: f64| (-x * x).exp(), -6.0, 6.0, 1e-13);
        assert_relative_eq!(v, std::f64::consts::PI.sqrt(), max_relative = 1e-11);
    }

    #[test]
    fn gauss_legendre_is_exact_for_degree_nine() {
        let v = gauss_legendre(|x: f64| x.powi(9) + 3.0 * x.powi(8), 0.0, 1.0, 1);
        assert_relative_eq!(v, 0.1 + 3.0 / 9.0, max_relative = 1e-14);
    }

    #[test]
    fn root_finder_polishes() {
        let r = bisect_secant(|x| x * x - 2.0, 0.0, 3.0, 1e-15).unwrap();
        assert_relative_eq!(r, 2f64.sqrt(), max_relative = 1e-14);
        assert!(bisect_secant(|x| x * x + 1.0, 0.0, 3.0, 1e-12).is_err());
    }

    #[test]
    fn golden_section_finds_parabola_vertex() {
        let x = golden_max(|x| Ok(-(x - 1.234).powi(2)), 0.0, 5.0, 1e-9).unwrap();
        assert!((x - 1.234).abs() < 1e-8);
    }

    #[test]
    fn pchip_reproduces_linear_data_and_stays_monotone() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let p = Pchip::new(x, y).unwrap();
        assert_relative_eq!(p.eval(3.3).unwrap(), 7.6, max_relative = 1e-14);
        assert!(p.eval(-0.1).is_none());

        let x = vec![0.0, 1.0, 2.0, 3.0, 4.0];
        let y = vec![0.0, 0.0, 1.0, 1.0, 5.0];
        let p = Pchip::new(x, y).unwrap();
        let mut last = f64::NEG_INFINITY;
        for i in 0..=400 {
            let v = p.eval(i as f64 * 0.01).unwrap();
            assert!(v >= last - 1e-15);
            last = v;
        }
    }

    #[test]
    fn hungarian_finds_optimal_permutation() {
        let cost = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let a = hungarian(&cost, 3);
        let total: f64 = a.iter().enumerate().map(|(r, &c)| cost[r * 3 + c]).sum();
        assert_eq!(total, 5.0);
        // brute force over all permutations of 4
        let cost: Vec<f64> = (0..16).map(|i| ((i * 7 + 3) % 11) as f64).collect();
        let a = hungarian(&cost, 4);
        let got: f64 = a.iter().enumerate().map(|(r, &c)| cost[r * 4 + c]).sum();
        let mut best = f64::INFINITY;
        for p in 0..24usize {
            let mut items = vec![0, 1, 2, 3];
            let mut perm = vec![];
            let mut k = p;
            for m in (1..=4).rev() {
                perm.push(items.remove(k % m));
                k /= m;
            }
            best = best.min(perm.iter().enumerate().map(|(r, &c)| cost[r * 4 + c]).sum());
        }
        assert_eq!(got, best);
    }

    #[test]
    fn polyfit_recovers_quadratic() {
        let x: Vec<f64> = (0..9).map(|i| 300.0 + i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v + 0.25 * v * v).collect();
        let (c, r) = polyfit(&x, &y, 2).unwrap();
        assert!((c[2] - 0.25).abs() < 1e-9 && (c[1] + 0.5).abs() < 1e-6 && r < 1e-8);
    }

    #[test]
    fn sturm_bisection_matches_dense_solver() {
        let n = 41;
        let diag: Vec<f64> = (0..n).map(|i| (2.0 * (i as f64 - 20.0) + 0.3).powi(2)).collect();
        let off = 5.0;
        let mut m = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = diag[i];
            if i + 1 < n {
                m[(i, i + 1)] = off;
                m[(i + 1, i)] = off;
            }
        }
        let mut dense: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
        dense.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let ours = tridiag_lowest_eigenvalues(&diag, off, 6);
        for (a, b) in ours.iter().zip(&dense) {
            assert!((a - b).abs() < 1e-11, "{a} vs {b}");
        }
    }
}
