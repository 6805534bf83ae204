use serde::Serialize;

use super::{same_parity, WalkerError};
use crate::env_model::SiteField;
use crate::numeric::{compensated_sum, CompensatedSum};

/// The base environment with `ω̂_a = 1` and `ω̂_c = 0`, so the chain never
/// leaves `[a, c]`. `bottom` fixes the anchor and parity class of the measures.
#[derive(Debug, Clone)]
pub struct ReflectedEnv<F> {
    pub base: F,
    pub a: i64,
    pub c: i64,
    pub bottom: i64,
}

impl<F: SiteField> ReflectedEnv<F> {
    pub fn new(base: F, a: i64, c: i64, bottom: i64) -> Self {
        assert!(a < c, "reflection interval [{a}, {c}] is empty");
        assert!((a..=c).contains(&bottom), "bottom {bottom} outside [{a}, {c}]");
        Self { base, a, c, bottom }
    }
}

impl<F: SiteField> SiteField for ReflectedEnv<F> {
    #[inline]
    fn omega(&self, x: i64) -> f64 {
        if x == self.a {
            1.0
        } else if x == self.c {
            0.0
        } else {
            self.base.omega(x)
        }
    }
}

/// `μ̂` on `[a, c]` (scaled so that the bottom term is `O(1)`) and its
/// normalization `ν̂` on the parity class of the bottom.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantMeasure {
    pub a: i64,
    pub c: i64,
    pub bottom: i64,
    /// `mu_hat[k]` is the weight of `a + k`.
    pub mu_hat: Vec<f64>,
    /// Same indexing; zero off the parity class of `bottom`.
    pub nu_hat: Vec<f64>,
}

impl InvariantMeasure {
    pub fn sites(&self) -> std::ops::RangeInclusive<i64> {
        self.a..=self.c
    }

    pub fn mu(&self, x: i64) -> f64 {
        self.mu_hat[(x - self.a) as usize]
    }

    pub fn nu(&self, x: i64) -> f64 {
        if (self.a..=self.c).contains(&x) {
            self.nu_hat[(x - self.a) as usize]
        } else {
            0.0
        }
    }

    /// Sites of the parity class of the bottom with their `ν̂` weights.
    pub fn class(&self) -> Vec<(i64, f64)> {
        self.sites()
            .filter(|&x| same_parity(x, self.bottom))
            .map(|x| (x, self.nu(x)))
            .collect()
    }

    /// Inverse-CDF draw from `ν̂`.
    pub fn sample_nu(&self, u: f64) -> i64 {
        let class = self.class();
        let mut acc = 0.0;
        for &(x, w) in &class {
            acc += w;
            if u < acc {
                return x;
            }
        }
        class.iter().rev().find(|&&(_, w)| w > 0.0).map(|&(x, _)| x).unwrap_or(self.bottom)
    }
}

/// Closed-form invariant measure of the reflected chain, with the potential
/// anchored at the bottom: `μ̂(a) = e^{−V(a)}`, `μ̂(c) = e^{−V(c−1)}` and
/// `μ̂(x) = e^{−V(x)} + e^{−V(x−1)}` in between.
pub fn reflected_invariant_measure<F: SiteField>(
    renv: &ReflectedEnv<F>,
) -> Result<InvariantMeasure, WalkerError> {
    let (a, c, b) = (renv.a, renv.c, renv.bottom);
    if c <= a + 1 {
        return Err(WalkerError::DegenerateInterval { a, c });
    }
    // rel[k] = V(a + k) − V(b) for k in 0..c−a, from the base environment.
    let n = (c - a) as usize;
    let mut rel = vec![0.0; n];
    let ib = (b - a).min(n as i64 - 1) as usize;
    let mut acc = CompensatedSum::new();
    if b == c {
        // V(c) − V(c−1) = log ρ_c; anchor at c−1 then shift.
        acc.add(-renv.base.log_rho(c));
    }
    let anchor = acc.value();
    rel[ib] = anchor;
    let mut up = acc;
    for k in ib + 1..n {
        up.add(renv.base.log_rho(a + k as i64));
        rel[k] = up.value();
    }
    let mut down = acc;
    for k in (0..ib).rev() {
        down.add(-renv.base.log_rho(a + k as i64 + 1));
        rel[k] = down.value();
    }
    let w: Vec<f64> = rel.iter().map(|v| (-v).exp()).collect();
    let mut mu_hat = Vec::with_capacity(n + 1);
    mu_hat.push(w[0]);
    for k in 1..n {
        mu_hat.push(w[k] + w[k - 1]);
    }
    mu_hat.push(w[n - 1]);
    let total = compensated_sum(
        mu_hat
            .iter()
            .enumerate()
            .filter(|&(k, _)| same_parity(a + k as i64, b))
            .map(|(_, &m)| m),
    );
    let nu_hat = mu_hat
        .iter()
        .enumerate()
        .map(|(k, &m)| if same_parity(a + k as i64, b) { m / total } else { 0.0 })
        .collect();
    Ok(InvariantMeasure { a, c, bottom: b, mu_hat, nu_hat })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_model::TabulatedField;
    use approx::assert_relative_eq;

    fn constant(w: f64) -> TabulatedField {
        TabulatedField { offset: 0, values: vec![], fill: w }
    }

    #[test]
    fn overrides_only_at_the_ends() {
        let r = ReflectedEnv::new(constant(0.7), -2, 3, 0);
        assert_eq!(r.omega(-2), 1.0);
        assert_eq!(r.omega(3), 0.0);
        for x in -1..3 {
            assert_eq!(r.omega(x), 0.7);
        }
        assert_eq!(r.omega(10), 0.7);
    }

    #[test]
    fn three_site_example() {
        let m = reflected_invariant_measure(&ReflectedEnv::new(constant(0.7), 0, 2, 0)).unwrap();
        let scale = m.mu_hat[0];
        assert_relative_eq!(m.mu_hat[1] / scale, 10.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(m.mu_hat[2] / scale, 7.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(m.nu_hat[0], 0.3, epsilon = 1e-14);
        assert_eq!(m.nu_hat[1], 0.0);
        assert_relative_eq!(m.nu_hat[2], 0.7, epsilon = 1e-14);
    }

    #[test]
    fn anchoring_is_a_rescaling() {
        let f = TabulatedField { offset: -3, values: vec![0.3, 0.8, 0.6, 0.2, 0.75, 0.4, 0.9], fill: 0.5 };
        let m0 = reflected_invariant_measure(&ReflectedEnv::new(&f, -3, 5, -3)).unwrap();
        let m1 = reflected_invariant_measure(&ReflectedEnv::new(&f, -3, 5, 1)).unwrap();
        let m2 = reflected_invariant_measure(&ReflectedEnv::new(&f, -3, 5, 5)).unwrap();
        let r = m1.mu_hat[0] / m0.mu_hat[0];
        for k in 0..m0.mu_hat.len() {
            assert_relative_eq!(m1.mu_hat[k], r * m0.mu_hat[k], max_relative = 1e-13);
        }
        for k in 0..m0.nu_hat.len() {
            assert_relative_eq!(m1.nu_hat[k], m0.nu_hat[k], epsilon = 1e-14);
            assert_relative_eq!(m2.nu_hat[k], m0.nu_hat[k], epsilon = 1e-14);
        }
    }

    #[test]
    fn balance_holds() {
        let f = TabulatedField { offset: 0, values: vec![0.3, 0.8, 0.6, 0.2, 0.75, 0.4, 0.9, 0.35], fill: 0.5 };
        let r = ReflectedEnv::new(&f, 0, 7, 3);
        let m = reflected_invariant_measure(&r).unwrap();
        for x in 0..=7i64 {
            let left = if x > 0 { r.omega(x - 1) * m.mu(x - 1) } else { 0.0 };
            let right = if x < 7 { (1.0 - r.omega(x + 1)) * m.mu(x + 1) } else { 0.0 };
            assert_relative_eq!(m.mu(x), left + right, max_relative = 1e-13);
        }
        let s: f64 = m.nu_hat.iter().sum();
        assert_relative_eq!(s, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn short_interval_is_degenerate() {
        let r = ReflectedEnv::new(constant(0.7), 0, 1, 0);
        assert!(matches!(reflected_invariant_measure(&r), Err(WalkerError::DegenerateInterval { .. })));
    }

    #[test]
    fn sampling_respects_class() {
        let m = reflected_invariant_measure(&ReflectedEnv::new(constant(0.7), 0, 2, 0)).unwrap();
        assert_eq!(m.sample_nu(0.0), 0);
        assert_eq!(m.sample_nu(0.29), 0);
        assert_eq!(m.sample_nu(0.31), 2);
        assert_eq!(m.sample_nu(0.999_999), 2);
    }
}
