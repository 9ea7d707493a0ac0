//! Special functions and summation helpers shared by the certified sums.

use statrs::function::gamma::ln_gamma;

/// Compensated (Neumaier) running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

const FACT_TABLE_LEN: usize = 171;

fn ln_factorial_table() -> &'static [f64; FACT_TABLE_LEN] {
    use std::sync::OnceLock;
    static TABLE: OnceLock<[f64; FACT_TABLE_LEN]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [0.0; FACT_TABLE_LEN];
        let mut f = 1.0f64;
        for (n, slot) in t.iter_mut().enumerate().skip(1) {
            f *= n as f64;
            *slot = f.ln();
        }
        t
    })
}

/// ln(n!).
pub fn ln_factorial(n: u64) -> f64 {
    if (n as usize) < FACT_TABLE_LEN {
        ln_factorial_table()[n as usize]
    } else {
        ln_gamma(n as f64 + 1.0)
    }
}

/// Exact binomial coefficient when it fits in a u128 (always for n ≤ 64).
pub fn binomial_exact(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) is divisible by (i + 1) after the multiplication
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

/// ln C(n, k); exact integer arithmetic for n ≤ 64, log-gamma beyond.
pub fn ln_binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    if n <= 64 {
        if let Some(b) = binomial_exact(n, k) {
            return (b as f64).ln();
        }
    }
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// ln(e^a + e^b).
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// ln(e^a − e^b) for a ≥ b.
pub fn log_sub_exp(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    a + (-(b - a).exp()).ln_1p()
}

/// P(Poisson(1) ≥ r + 1), summed from the tail side to avoid cancellation.
pub fn poisson1_upper_tail(r: u32) -> f64 {
    let mut sum = Neumaier::new();
    let mut k = r as u64 + 1;
    loop {
        let term = (-1.0 - ln_factorial(k)).exp();
        sum.add(term);
        if term < 1e-20 * sum.value() || term == 0.0 {
            break;
        }
        k += 1;
    }
    sum.value()
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

// B_{2k} for k = 1..=12.
const BERNOULLI_2K: [f64; 12] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
    43867.0 / 798.0,
    -174611.0 / 330.0,
    854513.0 / 138.0,
    -236364091.0 / 2730.0,
];

/// Logarithm of the Hurwitz zeta function ζ(s, a) = Σ_{n≥0} (a+n)^{-s}
/// for s > 1, a > 0, together with a bound on the relative truncation error
/// (rounding is not included).
///
/// Works with the sum scaled by a^s so that huge s does not underflow.
pub fn ln_hurwitz_zeta(s: f64, a: f64) -> (f64, f64) {
    assert!(s > 1.0 && a > 0.0, "ln_hurwitz_zeta needs s > 1, a > 0");
    // Shift far enough that the Euler-Maclaurin tail converges quickly.
    let target = (2.0 * s).max(16.0);
    let n_direct = if a >= target { 0u64 } else { (target - a).ceil() as u64 };
    let mut head = Neumaier::new();
    for n in 0..n_direct {
        head.add((-s * (n as f64 / a).ln_1p()).exp());
    }
    let b = a + n_direct as f64;
    // Scaled tail: b^s Σ_{n≥0}(b+n)^{-s}
    let mut tail = Neumaier::new();
    tail.add(b / (s - 1.0));
    tail.add(0.5);
    // rising factorial s(s+1)...(s+2k-2) / b^{2k-1}, updated in place
    let mut rise = s / b;
    let mut fact = 2.0; // (2k)!
    let mut last = f64::INFINITY;
    for (k, bern) in BERNOULLI_2K.iter().enumerate() {
        let term = bern / fact * rise;
        tail.add(term);
        last = term.abs();
        if last < 1e-17 * tail.value() {
            break;
        }
        let kk = (k + 1) as f64;
        rise *= (s + 2.0 * kk - 1.0) * (s + 2.0 * kk) / (b * b);
        fact *= (2.0 * kk + 1.0) * (2.0 * kk + 2.0);
    }
    let tail_v = tail.value();
    let shift = -s * (b / a).ln();
    let scaled = head.value() + (shift.exp() * tail_v);
    let rel_tail = 2.0 * last / tail_v;
    let rel = rel_tail * (shift.exp() * tail_v / scaled);
    (-s * a.ln() + scaled.ln(), rel)
}

/// ln Γ(a, x), the upper incomplete gamma function, for a > 0, x ≥ 0.
pub fn ln_upper_gamma(a: f64, x: f64) -> f64 {
    assert!(a > 0.0 && x >= 0.0);
    if x == 0.0 {
        return ln_gamma(a);
    }
    if x < a + 1.0 {
        // series for the regularized lower function
        let mut ap = a;
        let mut del = 1.0 / a;
        let mut sum = del;
        for _ in 0..10_000 {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        let ln_lower = -x + a * x.ln() + sum.ln();
        let lg = ln_gamma(a);
        log_sub_exp(lg, ln_lower)
    } else {
        // modified Lentz continued fraction
        const TINY: f64 = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        -x + a * x.ln() + h.ln()
    }
}

pub use statrs::function::gamma::gamma;
pub use statrs::function::gamma::ln_gamma as ln_gamma_fn;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomials_exact() {
        assert_eq!(binomial_exact(4, 2), Some(6));
        assert_eq!(binomial_exact(64, 32), Some(1832624140942590534));
        assert!((ln_binomial(12, 6) - 924f64.ln()).abs() < 1e-15);
        assert!((ln_binomial(200, 100).exp() / 9.054851465610328e58 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zeta_two() {
        let (l, rel) = ln_hurwitz_zeta(2.0, 1.0);
        let pi2_6 = std::f64::consts::PI.powi(2) / 6.0;
        assert!((l.exp() / pi2_6 - 1.0).abs() < 1e-14);
        assert!(rel < 1e-13);
    }

    #[test]
    fn zeta_matches_direct_sum() {
        // ζ(3.5, 7) by brute force with integral completion
        let s = 3.5;
        let mut acc = Neumaier::new();
        let n = 200_000u64;
        for k in 0..n {
            acc.add((7.0 + k as f64).powf(-s));
        }
        let b = 7.0 + n as f64;
        acc.add(b.powf(1.0 - s) / (s - 1.0) + 0.5 * b.powf(-s));
        let (l, _) = ln_hurwitz_zeta(s, 7.0);
        assert!((l.exp() / acc.value() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zeta_huge_order_scaled() {
        // dominated by the first term when s is large
        let (l, _) = ln_hurwitz_zeta(400.0, 3.0);
        let first = -400.0 * 3f64.ln();
        let second = -400.0 * 4f64.ln();
        let expect = log_add_exp(first, second);
        assert!((l - expect).abs() < 1e-12);
    }

    #[test]
    fn upper_gamma_against_statrs() {
        for &(a, x) in &[(2.0, 0.5), (2.0, 5.0), (0.5, 3.0), (7.5, 4.0), (3.0, 40.0)] {
            let reference = statrs::function::gamma::gamma_ur(a, x) * gamma(a);
            let ours = ln_upper_gamma(a, x).exp();
            assert!((ours / reference - 1.0).abs() < 1e-10, "a={a} x={x}");
        }
    }

    #[test]
    fn poisson_tail_values() {
        let e1 = (-1.0f64).exp();
        assert!((poisson1_upper_tail(1) - (1.0 - 2.0 * e1)).abs() < 1e-15);
        assert!((poisson1_upper_tail(2) - (1.0 - 2.5 * e1)).abs() < 1e-15);
    }

    #[test]
    fn neumaier_recovers_cancellation() {
        let mut s = Neumaier::new();
        s.add(1.0);
        s.add(1e100);
        s.add(1.0);
        s.add(-1e100);
        assert_eq!(s.value(), 2.0);
    }
}
