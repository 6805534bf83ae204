use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::calibration::{fresh_env, path_to_first_ascent};
use super::OracleError;
use crate::env_model::EnvDistribution;
use crate::numeric::CompensatedSum;
use crate::potential::left_ascent;
use crate::rng::{next_unit, Role, StreamKey};
use crate::stats::{ks_two_sample, pearson};

/// Scalar summaries of a segment `W(0) = 0, W(1), …, W(ℓ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SegmentFunctionals {
    pub length: f64,
    pub terminal: f64,
    pub maximum: f64,
}

// Values snapped to 1e−9 so that lattice levels reached along different
// summation orders compare equal.
fn snap(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

fn functionals(seg: &[f64]) -> SegmentFunctionals {
    SegmentFunctionals {
        length: (seg.len() - 1) as f64,
        terminal: snap(*seg.last().unwrap()),
        maximum: snap(seg.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
    }
}

const NAMES: [&str; 3] = ["length", "terminal", "maximum"];

fn column(xs: &[SegmentFunctionals], j: usize) -> Vec<f64> {
    xs.iter()
        .map(|f| match j {
            0 => f.length,
            1 => f.terminal,
            _ => f.maximum,
        })
        .collect()
}

/// The two segments of the potential around `m₁(h)` in one environment:
/// `(V(m₁−k) − V(m₁))` up to `↑T_h(h)` when that lies in `[0, m₁]`, and
/// `(V(m₁+k) − V(m₁))` up to `T↑(h)`.
fn env_segments(
    dist: &Arc<EnvDistribution>,
    h: f64,
    seed: u64,
    k: u64,
) -> Option<(Option<SegmentFunctionals>, SegmentFunctionals)> {
    let env = fresh_env(dist, seed, k);
    let (path, asc) = path_to_first_ascent(&env, h)?;
    let vm = path.v(asc.m1);
    let right: Vec<f64> = path.slice(asc.m1, asc.t_up).iter().map(|v| v - vm).collect();
    let left = left_ascent(&path, h, h).ok().flatten().map(|lo| {
        let seg: Vec<f64> = path.slice(lo, asc.m1).iter().rev().map(|v| v - vm).collect();
        functionals(&seg)
    });
    Some((left, functionals(&right)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    /// Steps `−log ρ`, stopped on `[h, ∞)`, killed on `(−∞, 0]`.
    Left,
    /// Steps `log ρ`, stopped on `[h, ∞)`, killed on `(−∞, 0)`.
    Right,
}

fn reference_segment(
    dist: &EnvDistribution,
    side: Side,
    h: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
    budget: u64,
) -> Option<(SegmentFunctionals, u64)> {
    for attempt in 1..=budget {
        let mut acc = CompensatedSum::new();
        let mut seg = vec![0.0];
        loop {
            let w = dist.quantile(next_unit(rng));
            let lr = ((1.0 - w) / w).ln();
            acc.add(if side == Side::Left { -lr } else { lr });
            let z = acc.value();
            seg.push(z);
            if z >= h {
                return Some((functionals(&seg), attempt));
            }
            let killed = match side {
                Side::Left => z <= 0.0,
                Side::Right => z < 0.0,
            };
            if killed {
                break;
            }
        }
    }
    None
}

fn reference_samples(
    dist: &EnvDistribution,
    side: Side,
    h: f64,
    n: usize,
    seed: u64,
    budget: u64,
) -> Result<(Vec<SegmentFunctionals>, f64), OracleError> {
    let phase = match side {
        Side::Left => 1,
        Side::Right => 2,
    } + ((h * 1e6).round() as u64) * 4;
    let out: Vec<Option<(SegmentFunctionals, u64)>> = (0..n as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = StreamKey::new(seed, Role::Replicate, k).with_phase(phase).rng();
            reference_segment(dist, side, h, &mut rng, budget)
        })
        .collect();
    let mut samples = Vec::with_capacity(n);
    let mut attempts = 0u64;
    for o in out {
        let (f, a) = o.ok_or(OracleError::RejectionBudgetExceeded { attempts: budget })?;
        samples.push(f);
        attempts += a;
    }
    Ok((samples, n as f64 / attempts as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KsCheck {
    pub side: String,
    pub functional: String,
    pub statistic: f64,
    pub p_value: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationCheck {
    pub functional: String,
    pub r: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionedLawReport {
    pub h: f64,
    pub n_samples: usize,
    /// Environments drawn to collect `n_samples` left segments.
    pub env_draws: usize,
    pub left_acceptance: f64,
    pub right_acceptance: f64,
    pub threshold: f64,
    pub left: Vec<KsCheck>,
    pub right: Vec<KsCheck>,
    pub independence: Vec<CorrelationCheck>,
    /// Environment segments at `h` against references at `h + 1`.
    pub control: Vec<KsCheck>,
    pub control_rejects: bool,
}

impl ConditionedLawReport {
    pub fn identities_hold(&self) -> bool {
        self.left.iter().chain(&self.right).all(|c| c.pass) && self.independence.iter().all(|c| c.pass)
    }
}

fn ks_block(side: &str, a: &[SegmentFunctionals], b: &[SegmentFunctionals], threshold: f64) -> Vec<KsCheck> {
    (0..3)
        .map(|j| {
            let r = ks_two_sample(&column(a, j), &column(b, j));
            KsCheck {
                side: side.to_string(),
                functional: NAMES[j].to_string(),
                statistic: r.statistic,
                p_value: r.p_value,
                pass: r.p_value > threshold,
            }
        })
        .collect()
}

/// Two-sample KS tests, Bonferroni-corrected over the three functionals,
/// comparing the potential around `m₁(h)` in fresh environments with
/// rejection-sampled conditioned walks, plus the `h` vs `h + 1` control.
pub fn conditioned_law_tests(
    dist: &EnvDistribution,
    h: f64,
    n_samples: usize,
    seed: u64,
    level: f64,
) -> Result<ConditionedLawReport, OracleError> {
    let shared = Arc::new(dist.clone());
    let budget = 1_000_000u64;
    let mut pairs: Vec<(SegmentFunctionals, SegmentFunctionals)> = Vec::with_capacity(n_samples);
    let mut all_right: Vec<SegmentFunctionals> = Vec::with_capacity(n_samples);
    let mut draws = 0usize;
    let batch = n_samples.max(64);
    while pairs.len() < n_samples {
        if draws >= 100 * n_samples.max(1) {
            return Err(OracleError::RejectionBudgetExceeded { attempts: draws as u64 });
        }
        let got: Vec<_> = (draws as u64..(draws + batch) as u64)
            .into_par_iter()
            .map(|k| env_segments(&shared, h, seed, k))
            .collect();
        for g in got {
            draws += 1;
            let Some((left, right)) = g else { continue };
            if all_right.len() < n_samples {
                all_right.push(right);
            }
            if let Some(l) = left {
                if pairs.len() < n_samples {
                    pairs.push((l, right));
                }
            }
        }
    }
    // The right segment is tested without the left conditioning; the pairs
    // carry both sides for the independence check.
    let env_left: Vec<SegmentFunctionals> = pairs.iter().map(|p| p.0).collect();
    let paired_right: Vec<SegmentFunctionals> = pairs.iter().map(|p| p.1).collect();
    let env_right = all_right;
    let (ref_left, left_acceptance) = reference_samples(dist, Side::Left, h, n_samples, seed, budget)?;
    let (ref_right, right_acceptance) = reference_samples(dist, Side::Right, h, n_samples, seed, budget)?;
    let threshold = level / 3.0;

    let bound = 4.0 / (n_samples as f64).sqrt();
    let independence = (0..3)
        .map(|j| {
            let r = pearson(&column(&env_left, j), &column(&paired_right, j));
            CorrelationCheck { functional: NAMES[j].to_string(), r, bound, pass: r.abs() <= bound }
        })
        .collect();

    let (ctl_left, _) = reference_samples(dist, Side::Left, h + 1.0, n_samples, seed, budget)?;
    let (ctl_right, _) = reference_samples(dist, Side::Right, h + 1.0, n_samples, seed, budget)?;
    let mut control = ks_block("left", &env_left, &ctl_left, threshold);
    control.extend(ks_block("right", &env_right, &ctl_right, threshold));
    let control_rejects = ["left", "right"]
        .iter()
        .all(|s| control.iter().any(|c| c.side == *s && !c.pass));

    Ok(ConditionedLawReport {
        h,
        n_samples,
        env_draws: draws,
        left_acceptance,
        right_acceptance,
        threshold,
        left: ks_block("left", &env_left, &ref_left, threshold),
        right: ks_block("right", &env_right, &ref_right, threshold),
        independence,
        control,
        control_rejects,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn terminal_reaches_level() {
        let dist = EnvDistribution::two_point(0.25, 0.75, 0.3, 0.25).unwrap();
        let mut rng = StreamKey::new(1, Role::Replicate, 0).rng();
        for side in [Side::Left, Side::Right] {
            for _ in 0..200 {
                let (f, _) = reference_segment(&dist, side, 3.0, &mut rng, 100_000).unwrap();
                assert!(f.terminal >= 3.0);
                assert_eq!(f.terminal, f.maximum);
            }
        }
    }
}
