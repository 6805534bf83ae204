use crate::env_model::SiteField;
use crate::walker_sim::ReflectedEnv;

/// Stationary law of a finite irreducible chain by Grassmann–Taksar–Heyman
/// state reduction. Only additions, multiplications and divisions of
/// nonnegative numbers appear, so small entries keep full relative accuracy.
pub fn gth_stationary(mut p: Vec<Vec<f64>>) -> Vec<f64> {
    let n = p.len();
    for k in (1..n).rev() {
        let s: f64 = p[k][..k].iter().sum();
        assert!(s > 0.0, "chain is reducible at state {k}");
        for row in p.iter_mut().take(k) {
            row[k] /= s;
        }
        for i in 0..k {
            let pik = p[i][k];
            if pik == 0.0 {
                continue;
            }
            for j in 0..k {
                let pkj = p[k][j];
                p[i][j] += pik * pkj;
            }
        }
    }
    let mut pi = vec![0.0; n];
    pi[0] = 1.0;
    for k in 1..n {
        pi[k] = (0..k).map(|i| pi[i] * p[i][k]).sum();
    }
    let total: f64 = pi.iter().sum();
    pi.iter().map(|x| x / total).collect()
}

/// Stationary weights of the reflected chain on `[a, c]` (summing to 1),
/// from a dense transition matrix.
pub fn stationary_bruteforce<F: SiteField>(renv: &ReflectedEnv<F>) -> Vec<f64> {
    let (a, c) = (renv.a, renv.c);
    let n = (c - a + 1) as usize;
    let mut p = vec![vec![0.0; n]; n];
    for k in 0..n {
        let w = renv.omega(a + k as i64);
        if k + 1 < n {
            p[k][k + 1] = w;
        }
        if k > 0 {
            p[k][k - 1] = 1.0 - w;
        }
    }
    gth_stationary(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_model::TabulatedField;
    use approx::assert_relative_eq;

    #[test]
    fn three_site_chain() {
        let f = TabulatedField { offset: 0, values: vec![], fill: 0.7 };
        let pi = stationary_bruteforce(&ReflectedEnv::new(f, 0, 2, 0));
        let total = 1.0 + 10.0 / 3.0 + 7.0 / 3.0;
        assert_relative_eq!(pi[0], 1.0 / total, epsilon = 1e-15);
        assert_relative_eq!(pi[1], 10.0 / 3.0 / total, epsilon = 1e-15);
        assert_relative_eq!(pi[2], 7.0 / 3.0 / total, epsilon = 1e-15);
    }

    #[test]
    fn alternating_pair() {
        let f = TabulatedField { offset: 0, values: vec![], fill: 0.4 };
        let pi = stationary_bruteforce(&ReflectedEnv::new(f, 0, 1, 0));
        assert_eq!(pi, vec![0.5, 0.5]);
    }
}
