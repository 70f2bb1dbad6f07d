//! Independent reference computations shared by the integration tests.
//! Nothing here calls into the library's numerics.

#![allow(dead_code)]

/// Least squares via the normal equations `(A^T A) c = A^T y`, solved with
/// Gaussian elimination and partial pivoting.
pub fn normal_equations(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = rows[0].len();
    let mut a = vec![vec![0.0; p + 1]; p];
    for (r, &t) in rows.iter().zip(y) {
        for i in 0..p {
            for j in 0..p {
                a[i][j] += r[i] * r[j];
            }
            a[i][p] += r[i] * t;
        }
    }
    for col in 0..p {
        let piv = (col..p)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        let (top, rest) = a.split_at_mut(col + 1);
        let pivot = &top[col];
        for row in rest {
            let f = row[col] / pivot[col];
            for (v, pv) in row[col..].iter_mut().zip(&pivot[col..]) {
                *v -= f * pv;
            }
        }
    }
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = (i + 1..p).map(|j| a[i][j] * x[j]).sum();
        x[i] = (a[i][p] - s) / a[i][i];
    }
    x
}

/// Every exponent vector with total degree `<= degree`, paired with the
/// monomial value at `x` computed by repeated multiplication.
pub fn brute_force_monomials(x: &[f64], degree: u32) -> Vec<(Vec<u32>, f64)> {
    let d = x.len();
    let mut out = Vec::new();
    let mut e = vec![0u32; d];
    loop {
        if e.iter().sum::<u32>() <= degree {
            let mut v = 1.0;
            for (xi, &k) in x.iter().zip(&e) {
                for _ in 0..k {
                    v *= xi;
                }
            }
            out.push((e.clone(), v));
        }
        // odometer increment over {0..=degree}^d
        let mut i = 0;
        loop {
            if i == d {
                return out;
            }
            e[i] += 1;
            if e[i] <= degree {
                break;
            }
            e[i] = 0;
            i += 1;
        }
    }
}

pub fn binomial(n: u64, k: u64) -> u64 {
    (1..=k).fold(1, |acc, i| acc * (n - k + i) / i)
}

/// Dvoretzky-Kiefer-Wolfowitz band half-width at confidence `1 - alpha`.
pub fn dkw_epsilon(n: usize, alpha: f64) -> f64 {
    ((2.0 / alpha).ln() / (2.0 * n as f64)).sqrt()
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Binary concrete density on (0, 1) in its closed form
/// `b a t^(-b-1) (1-t)^(-b-1) / (a t^(-b) + (1-t)^(-b))^2`, in log space.
pub fn concrete_pdf(t: f64, log_alpha: f64, beta: f64) -> f64 {
    let (lt, l1t) = (t.ln(), (1.0 - t).ln());
    let num = beta.ln() + log_alpha - (beta + 1.0) * (lt + l1t);
    let a = log_alpha - beta * lt;
    let b = -beta * l1t;
    let m = a.max(b);
    let lse = m + ((a - m).exp() + (b - m).exp()).ln();
    (num - 2.0 * lse).exp()
}

/// CDF by integrating [`concrete_pdf`] with composite Simpson in logit
/// coordinates, where the integrand decays exponentially at both ends.
pub fn concrete_cdf_quadrature(t: f64, log_alpha: f64, beta: f64) -> f64 {
    let hi = (t / (1.0 - t)).ln();
    let lo = hi.min(0.0) - 80.0;
    let n = 40_000;
    let h = (hi - lo) / n as f64;
    let f = |x: f64| {
        let s = logistic(x);
        concrete_pdf(s, log_alpha, beta) * s * (1.0 - s)
    };
    let mut acc = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + i as f64 * h);
    }
    acc * h / 3.0
}

/// Kolmogorov distance between the empirical CDF of `samples` and `cdf`.
pub fn sup_distance(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}
