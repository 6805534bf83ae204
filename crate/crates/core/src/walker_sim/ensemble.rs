use rand::RngCore;
use serde::Serialize;

use super::{same_parity, step_from, WalkerError};
use crate::env_model::{SiteCache, SiteField};
use crate::rng::{next_unit, Role, StreamKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub horizon: u64,
    /// Record all positions every `stride` steps (0 disables checkpoints).
    pub checkpoint_stride: u64,
    pub detect_meetings: bool,
}

impl RunOptions {
    pub fn new(horizon: u64) -> Self {
        Self { horizon, checkpoint_stride: 0, detect_meetings: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectorySummary {
    pub starts: Vec<i64>,
    pub horizon: u64,
    /// `(time, positions)` every checkpoint stride, time 0 included.
    pub checkpoints: Vec<(u64, Vec<i64>)>,
    pub min_sites: Vec<i64>,
    pub max_sites: Vec<i64>,
    pub final_positions: Vec<i64>,
}

/// Every time at which all walkers stand on the same site.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MeetingLog {
    pub meeting_times: Vec<u64>,
    pub meeting_sites: Vec<i64>,
}

impl MeetingLog {
    pub fn len(&self) -> usize {
        self.meeting_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meeting_times.is_empty()
    }

    /// Number of meetings at times in `[from, to]`.
    pub fn count_between(&self, from: u64, to: u64) -> usize {
        let lo = self.meeting_times.partition_point(|&t| t < from);
        let hi = self.meeting_times.partition_point(|&t| t <= to);
        hi.saturating_sub(lo)
    }
}

/// Run `starts.len()` independent walkers for `horizon` steps. Walker `j`
/// draws from the substream `(seed, Walker, j)`.
pub fn run<F: SiteField + ?Sized>(
    field: &F,
    starts: &[i64],
    seed: u64,
    opts: RunOptions,
) -> Result<(TrajectorySummary, MeetingLog), WalkerError> {
    if starts.is_empty() {
        return Err(WalkerError::NoWalkers);
    }
    if opts.detect_meetings && !starts.iter().all(|&s| same_parity(s, starts[0])) {
        return Err(WalkerError::MixedParity(starts.to_vec()));
    }
    let mut cache = SiteCache::new(field, starts[0]);
    let mut rngs: Vec<_> = (0..starts.len())
        .map(|j| StreamKey::new(seed, Role::Walker, j as u64).rng())
        .collect();
    let mut pos = starts.to_vec();
    let mut min_sites = pos.clone();
    let mut max_sites = pos.clone();
    let mut checkpoints = Vec::new();
    let mut log = MeetingLog::default();
    let stride = opts.checkpoint_stride;

    let observe = |t: u64, pos: &[i64], log: &mut MeetingLog, checkpoints: &mut Vec<(u64, Vec<i64>)>| {
        if opts.detect_meetings && pos.iter().all(|&p| p == pos[0]) {
            log.meeting_times.push(t);
            log.meeting_sites.push(pos[0]);
        }
        if stride > 0 && t % stride == 0 {
            checkpoints.push((t, pos.to_vec()));
        }
    };
    observe(0, &pos, &mut log, &mut checkpoints);
    for t in 1..=opts.horizon {
        for (j, p) in pos.iter_mut().enumerate() {
            let u = next_unit(&mut rngs[j]);
            *p = step_from(*p, cache.omega(*p), u);
            min_sites[j] = min_sites[j].min(*p);
            max_sites[j] = max_sites[j].max(*p);
        }
        observe(t, &pos, &mut log, &mut checkpoints);
    }
    for (p, s) in pos.iter().zip(starts) {
        assert!(same_parity(p - s, opts.horizon as i64), "parity law violated");
    }
    let summary = TrajectorySummary {
        starts: starts.to_vec(),
        horizon: opts.horizon,
        checkpoints,
        min_sites,
        max_sites,
        final_positions: pos,
    };
    Ok((summary, log))
}

/// First time the walker started at `start` sits in `targets`, if before `cap`.
fn first_passage<F: SiteField + ?Sized, R: RngCore + ?Sized>(
    field: &F,
    start: i64,
    cap: u64,
    rng: &mut R,
    mut stop: impl FnMut(i64) -> bool,
) -> Option<(u64, i64)> {
    if stop(start) {
        return Some((0, start));
    }
    let mut cache = SiteCache::new(field, start);
    let mut x = start;
    for t in 1..=cap {
        x = step_from(x, cache.omega(x), next_unit(rng));
        if stop(x) {
            return Some((t, x));
        }
    }
    None
}

/// `τ(target)` for the walk started at `start`, or `None` if it exceeds `cap`.
pub fn hitting_time<F: SiteField + ?Sized, R: RngCore + ?Sized>(
    field: &F,
    start: i64,
    target: i64,
    cap: u64,
    rng: &mut R,
) -> Option<u64> {
    first_passage(field, start, cap, rng, |x| x == target).map(|(t, _)| t)
}

/// `τ(x, y)`: first visit to `y` after the first visit to `x`, counted from
/// time 0; `cap` bounds the total number of steps.
pub fn hitting_time_after<F: SiteField + ?Sized, R: RngCore + ?Sized>(
    field: &F,
    start: i64,
    x: i64,
    y: i64,
    cap: u64,
    rng: &mut R,
) -> Option<u64> {
    let first = hitting_time(field, start, x, cap, rng)?;
    if x == y {
        // The restart at τ(x) already sits on y; the next visit needs a return.
        let (t, _) = first_passage(field, x, cap - first, rng, {
            let mut moved = false;
            move |z| {
                let hit = moved && z == y;
                moved = true;
                hit
            }
        })?;
        return Some(first + t);
    }
    hitting_time(field, x, y, cap - first, rng).map(|t| first + t)
}

/// `τ(lo) ∧ τ(hi)` with the exit site, for `lo ≤ start ≤ hi`.
pub fn exit_time<F: SiteField + ?Sized, R: RngCore + ?Sized>(
    field: &F,
    start: i64,
    lo: i64,
    hi: i64,
    cap: u64,
    rng: &mut R,
) -> Option<(u64, i64)> {
    first_passage(field, start, cap, rng, |x| x <= lo || x >= hi)
}
