//! The potential `V` of an environment and its fluctuation functionals.
//!
//! `V(0) = 0`, `V(x) − V(x−1) = log ρ_x`. Values are accumulated outward from
//! the origin with compensated summation; the accumulator state is kept so a
//! path extended in chunks is bit-identical to one built in a single pass.

use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::env_model::SiteField;
use crate::numeric::CompensatedSum;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PotentialError {
    #[error("window [{0}, {1}] does not contain the origin")]
    MissingOrigin(i64, i64),
    #[error("window exhausted on the {side:?} side at site {at}")]
    WindowExhausted { side: Side, at: i64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Side {
    Left,
    Right,
}

/// `V` on an integer window `[x_min, x_max]` containing 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialPath {
    x_min: i64,
    values: Vec<f64>,
    left_acc: CompensatedSum,
    right_acc: CompensatedSum,
}

pub fn potential<F: SiteField + ?Sized>(
    field: &F,
    window: (i64, i64),
) -> Result<PotentialPath, PotentialError> {
    let (lo, hi) = window;
    if lo > 0 || hi < 0 {
        return Err(PotentialError::MissingOrigin(lo, hi));
    }
    let mut path = PotentialPath {
        x_min: 0,
        values: vec![0.0],
        left_acc: CompensatedSum::new(),
        right_acc: CompensatedSum::new(),
    };
    path.extend_right(field, hi);
    path.extend_left(field, lo);
    Ok(path)
}

impl PotentialPath {
    /// Wrap precomputed values; `values[k]` is `V(x_min + k)` and `V(0)` must be 0.
    pub fn from_values(x_min: i64, values: Vec<f64>) -> Result<Self, PotentialError> {
        let x_max = x_min + values.len() as i64 - 1;
        if x_min > 0 || x_max < 0 {
            return Err(PotentialError::MissingOrigin(x_min, x_max));
        }
        assert_eq!(values[(-x_min) as usize], 0.0, "V(0) must be 0");
        let mut left_acc = CompensatedSum::new();
        left_acc.add(values[0]);
        let mut right_acc = CompensatedSum::new();
        right_acc.add(values[values.len() - 1]);
        Ok(Self {
            x_min,
            values,
            left_acc,
            right_acc,
        })
    }

    #[inline]
    pub fn x_min(&self) -> i64 {
        self.x_min
    }

    #[inline]
    pub fn x_max(&self) -> i64 {
        self.x_min + self.values.len() as i64 - 1
    }

    #[inline]
    pub fn contains(&self, x: i64) -> bool {
        x >= self.x_min && x <= self.x_max()
    }

    /// `V(x)`; panics outside the window.
    #[inline]
    pub fn v(&self, x: i64) -> f64 {
        self.values[(x - self.x_min) as usize]
    }

    pub fn get(&self, x: i64) -> Option<f64> {
        self.contains(x).then(|| self.v(x))
    }

    /// Values on `[from, to]`.
    pub fn slice(&self, from: i64, to: i64) -> &[f64] {
        &self.values[(from - self.x_min) as usize..=(to - self.x_min) as usize]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn extend_right<F: SiteField + ?Sized>(&mut self, field: &F, new_x_max: i64) {
        let start = self.x_max() + 1;
        self.values.reserve((new_x_max - start + 1).max(0) as usize);
        for x in start..=new_x_max {
            self.right_acc.add(field.log_rho(x));
            self.values.push(self.right_acc.value());
        }
    }

    pub fn extend_left<F: SiteField + ?Sized>(&mut self, field: &F, new_x_min: i64) {
        if new_x_min >= self.x_min {
            return;
        }
        let mut fresh = Vec::with_capacity((self.x_min - new_x_min) as usize + self.values.len());
        // V(x) = V(x+1) − log ρ_{x+1} for x < 0.
        for x in (new_x_min..self.x_min).rev() {
            self.left_acc.add(-field.log_rho(x + 1));
            fresh.push(self.left_acc.value());
        }
        fresh.reverse();
        fresh.extend_from_slice(&self.values);
        self.values = fresh;
        self.x_min = new_x_min;
    }

    /// CSV dump with columns `x,omega_x,V_x`.
    pub fn write_csv<F: SiteField + ?Sized, W: Write>(&self, field: &F, mut out: W) -> io::Result<()> {
        writeln!(out, "x,omega_x,V_x")?;
        for x in self.x_min..=self.x_max() {
            writeln!(out, "{},{},{}", x, field.omega(x), self.v(x))?;
        }
        Ok(())
    }
}

/// Weak and strict descending ladder epochs with excursion heights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LadderDecomposition {
    /// `e₀ = 0 < e₁ < …`, each the first later site with `V(eᵢ) ≤ V(eᵢ₋₁)`.
    pub weak_epochs: Vec<i64>,
    /// `Hᵢ = max_{[eᵢ, eᵢ₊₁]} (V − V(eᵢ))`, one per complete excursion.
    pub weak_heights: Vec<f64>,
    pub strict_epochs: Vec<i64>,
    pub strict_heights: Vec<f64>,
    /// Fewer than the requested number of excursions fit in the window.
    pub exhausted: bool,
}

fn scan_epochs(path: &PotentialPath, count: usize, strict: bool) -> (Vec<i64>, Vec<f64>, bool) {
    let mut epochs = vec![0i64];
    let mut heights = Vec::new();
    let mut base = path.v(0);
    let mut top = 0.0f64;
    for k in 1..=path.x_max() {
        if heights.len() >= count {
            break;
        }
        let v = path.v(k);
        let is_epoch = if strict { v < base } else { v <= base };
        if is_epoch {
            heights.push(top);
            epochs.push(k);
            base = v;
            top = 0.0;
        } else {
            top = top.max(v - base);
        }
    }
    let exhausted = heights.len() < count;
    (epochs, heights, exhausted)
}

/// Ladder decomposition of `V` on `[0, x_max]`, stopping after `count`
/// complete excursions (`usize::MAX` scans the whole window).
pub fn ladder(path: &PotentialPath, count: usize) -> LadderDecomposition {
    let (weak_epochs, weak_heights, weak_ex) = scan_epochs(path, count, false);
    let (strict_epochs, strict_heights, strict_ex) = scan_epochs(path, count, true);
    LadderDecomposition {
        weak_epochs,
        weak_heights,
        strict_epochs,
        strict_heights,
        exhausted: count != usize::MAX && (weak_ex || strict_ex),
    }
}

/// `V↑(x) = max_{0 ≤ i ≤ j ≤ x} (V(j) − V(i))`.
pub fn v_up(path: &PotentialPath, x: i64) -> f64 {
    v_up_between(path, 0, x)
}

/// `V↑(x, y) = max_{x ≤ i ≤ j ≤ y} (V(j) − V(i))`.
pub fn v_up_between(path: &PotentialPath, x: i64, y: i64) -> f64 {
    let mut low = f64::INFINITY;
    let mut best = 0.0f64;
    for k in x..=y {
        let v = path.v(k);
        low = low.min(v);
        best = best.max(v - low);
    }
    best
}

/// `T↑(h)` together with `m₁(h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FirstAscent {
    pub t_up: i64,
    pub m1: i64,
}

/// First site where the maximal increase reaches `h`, and the leftmost
/// minimum of `V` before it.
pub fn first_ascent(path: &PotentialPath, h: f64) -> Result<FirstAscent, PotentialError> {
    let mut low = path.v(0);
    let mut argmin = 0i64;
    for x in 0..=path.x_max() {
        let v = path.v(x);
        if v < low {
            low = v;
            argmin = x;
        }
        if v - low >= h {
            return Ok(FirstAscent { t_up: x, m1: argmin });
        }
    }
    Err(PotentialError::WindowExhausted {
        side: Side::Right,
        at: path.x_max(),
    })
}

/// `T↑(h) = min{x ≥ 0 : V↑(x) ≥ h}`.
pub fn t_up(path: &PotentialPath, h: f64) -> Result<i64, PotentialError> {
    first_ascent(path, h).map(|a| a.t_up)
}

/// `m₁(h)`, leftmost argmin of `V` on `[0, T↑(h)]`.
pub fn m1(path: &PotentialPath, h: f64) -> Result<i64, PotentialError> {
    first_ascent(path, h).map(|a| a.m1)
}

/// `↑T_h(y) = max{x ≤ m₁(h) : V(x) − V(m₁(h)) ≥ y}`; `None` when no such site
/// lies in the window (this includes the `−∞` of an empty set).
pub fn left_ascent(path: &PotentialPath, h: f64, y: f64) -> Result<Option<i64>, PotentialError> {
    let m = m1(path, h)?;
    let base = path.v(m);
    Ok((path.x_min()..=m).rev().find(|&x| path.v(x) - base >= y))
}

/// Scan direction for [`hit_level_set`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Interval of potential values with open or closed ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelSet {
    pub lo: f64,
    pub lo_closed: bool,
    pub hi: f64,
    pub hi_closed: bool,
}

impl LevelSet {
    /// `[h, ∞)`
    pub fn at_least(h: f64) -> Self {
        Self { lo: h, lo_closed: true, hi: f64::INFINITY, hi_closed: false }
    }
    /// `(h, ∞)`
    pub fn above(h: f64) -> Self {
        Self { lo: h, lo_closed: false, hi: f64::INFINITY, hi_closed: false }
    }
    /// `(−∞, h]`
    pub fn at_most(h: f64) -> Self {
        Self { lo: f64::NEG_INFINITY, lo_closed: false, hi: h, hi_closed: true }
    }
    /// `(−∞, h)`
    pub fn below(h: f64) -> Self {
        Self { lo: f64::NEG_INFINITY, lo_closed: false, hi: h, hi_closed: false }
    }

    #[inline]
    pub fn contains(&self, v: f64) -> bool {
        let lo_ok = if self.lo_closed { v >= self.lo } else { v > self.lo };
        let hi_ok = if self.hi_closed { v <= self.hi } else { v < self.hi };
        lo_ok && hi_ok
    }
}

/// `T_V(A) = min{x ≥ 1 : V(x) ∈ A}` (or `V(−x)` going backward).
pub fn hit_level_set(path: &PotentialPath, direction: Direction, set: LevelSet) -> Option<i64> {
    (1..)
        .map(|x| (x, if direction == Direction::Forward { x } else { -x }))
        .take_while(|&(_, site)| path.contains(site))
        .find(|&(_, site)| set.contains(path.v(site)))
        .map(|(x, _)| x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_model::{sample_env, EnvDistribution, MirroredField};
    use approx::assert_relative_eq;

    fn constant_env(w: f64) -> crate::env_model::Environment {
        sample_env(&EnvDistribution::constant(w, 0.25).unwrap(), 1)
    }

    fn q_env(seed: u64) -> crate::env_model::Environment {
        sample_env(&EnvDistribution::two_point(0.25, 0.75, 0.3, 0.25).unwrap(), seed)
    }

    #[test]
    fn constant_drift_is_linear_both_sides() {
        let p = potential(&constant_env(0.7), (-50, 50)).unwrap();
        let slope = (3.0f64 / 7.0).ln();
        for x in -50..=50 {
            assert_relative_eq!(p.v(x), x as f64 * slope, epsilon = 1e-12);
        }
        let p = potential(&constant_env(0.3), (-5, 5)).unwrap();
        for x in -5..5 {
            assert!(p.v(x + 1) > p.v(x));
        }
    }

    #[test]
    fn increments_are_log_rho() {
        let env = q_env(4);
        let p = potential(&env, (-100, 100)).unwrap();
        assert_eq!(p.v(0), 0.0);
        assert_relative_eq!(p.v(2) - p.v(1), env.log_rho(2), epsilon = 1e-14);
        for x in -99..=100 {
            assert_relative_eq!(p.v(x) - p.v(x - 1), env.log_rho(x), epsilon = 1e-12);
        }
    }

    #[test]
    fn origin_required() {
        assert!(potential(&q_env(0), (1, 10)).is_err());
        assert!(potential(&q_env(0), (-10, -1)).is_err());
    }

    #[test]
    fn chunked_extension_is_bit_identical() {
        let env = q_env(8);
        let whole = potential(&env, (-3000, 5000)).unwrap();
        let mut p = potential(&env, (-10, 10)).unwrap();
        for (l, r) in [(-100, 777), (-1500, 2000), (-3000, 5000)] {
            p.extend_right(&env, r);
            p.extend_left(&env, l);
        }
        assert_eq!(p.slice(-3000, 5000), whole.slice(-3000, 5000));
    }

    #[test]
    fn monotone_ladder() {
        let p = potential(&constant_env(0.7), (0, 20)).unwrap();
        let l = ladder(&p, 10);
        assert_eq!(l.weak_epochs, (0..=10).collect::<Vec<_>>());
        assert_eq!(l.strict_epochs, (0..=10).collect::<Vec<_>>());
        assert!(l.weak_heights.iter().all(|&h| h == 0.0));
        assert!(!l.exhausted);
        let l = ladder(&p, 50);
        assert!(l.exhausted);
        assert_eq!(l.weak_heights.len(), 20);
    }

    #[test]
    fn weak_and_strict_differ_on_ties() {
        // V: 0, 1, 0, -1, -1
        let p = PotentialPath::from_values(0, vec![0.0, 1.0, 0.0, -1.0, -1.0]).unwrap();
        let l = ladder(&p, usize::MAX);
        assert_eq!(l.weak_epochs, vec![0, 2, 3, 4]);
        assert_eq!(l.weak_heights, vec![1.0, 0.0, 0.0]);
        assert_eq!(l.strict_epochs, vec![0, 3]);
        assert_eq!(l.strict_heights, vec![1.0]);
    }

    #[test]
    fn v_up_examples() {
        let p = potential(&constant_env(0.7), (0, 30)).unwrap();
        assert_eq!(v_up(&p, 30), 0.0);
        let p = potential(&constant_env(0.3), (0, 30)).unwrap();
        assert_relative_eq!(v_up(&p, 12), 12.0 * (7.0f64 / 3.0).ln(), epsilon = 1e-12);
    }

    #[test]
    fn first_ascent_uphill() {
        let p = potential(&constant_env(0.3), (0, 30)).unwrap();
        let a = first_ascent(&p, 1.0).unwrap();
        assert_eq!(a.t_up, (1.0 / (7.0f64 / 3.0).ln()).ceil() as i64);
        assert_eq!(a.t_up, 2);
        assert_eq!(a.m1, 0);
    }

    #[test]
    fn first_ascent_exhausts_downhill() {
        let p = potential(&constant_env(0.7), (0, 1000)).unwrap();
        assert!(matches!(
            t_up(&p, 0.5),
            Err(PotentialError::WindowExhausted { side: Side::Right, .. })
        ));
    }

    #[test]
    fn left_ascent_absent_and_present() {
        // V: -, 3, 1, 0, -2, -1, 2 ; window starts at -1 with V(-1)=3
        let p = PotentialPath::from_values(-1, vec![3.0, 0.0, 1.0, -2.0, -1.0, 2.0]).unwrap();
        let a = first_ascent(&p, 3.5).unwrap();
        assert_eq!((a.t_up, a.m1), (4, 2));
        assert_eq!(left_ascent(&p, 3.5, 2.5).unwrap(), Some(1));
        assert_eq!(left_ascent(&p, 3.5, 5.0).unwrap(), Some(-1));
        assert_eq!(left_ascent(&p, 3.5, 6.0).unwrap(), None);
    }

    #[test]
    fn level_set_hits() {
        let p = potential(&constant_env(0.7), (-10, 10)).unwrap();
        assert_eq!(hit_level_set(&p, Direction::Forward, LevelSet::at_most(-1.0)), Some(2));
        assert_eq!(hit_level_set(&p, Direction::Forward, LevelSet::at_least(0.0)), None);
        assert_eq!(hit_level_set(&p, Direction::Backward, LevelSet::at_least(1.0)), Some(2));
    }

    #[test]
    fn backward_scan_equals_forward_on_mirror() {
        let env = q_env(21);
        let mirror = MirroredField(&env);
        let p = potential(&env, (-400, 400)).unwrap();
        let pm = potential(&mirror, (-400, 400)).unwrap();
        for x in -400..=400 {
            assert_relative_eq!(pm.v(x), p.v(-x), epsilon = 1e-9);
        }
        for h in [0.5, 1.5, 3.0, 4.5] {
            let set = LevelSet::at_least(h);
            assert_eq!(
                hit_level_set(&p, Direction::Backward, set),
                hit_level_set(&pm, Direction::Forward, set)
            );
        }
    }

    #[test]
    fn csv_dump() {
        let env = constant_env(0.7);
        let p = potential(&env, (-1, 1)).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&env, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,omega_x,V_x\n-1,0.7,"));
        assert_eq!(text.lines().count(), 4);
    }
}
