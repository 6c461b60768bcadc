//! Excursion decomposition of a level-`n` walk.
//!
//! Around every level-`n` tile centre sit the inner region `Gamma^1`
//! (sup-distance `<= 2 beta_n`) and, outside the larger square of radius
//! `4 beta_n`, the outer region `Gamma^2`. The walk alternates between them:
//!
//! - `U_k`: first visit to `Gamma^2` at or after `S_{k-1}` (`S_0 = 0`);
//! - `S_k`: first visit to `Gamma^1` at or after `U_k`;
//! - `V_k`: first time at or after `T_{k-1}` (`T_0 = 0`) that lies in some
//!   `[U_j, S_j]` with `U_j >= T_{k-1}` and at which the walk sits in
//!   `X(T_{k-1}) + a_{n-1} Z^2`;
//! - `T_k`: first visit to `Gamma^1` at or after `V_k`.
//!
//! On `J = U [V_k, T_k]` the walk stays away from level-`n` obstacles and so
//! moves in the level-`(n-1)` environment. Since `X(V_{k+1}) - X(T_k)` lies
//! in `a_{n-1} Z^2`, gluing the `J`-pieces together yields a process with the
//! law of `X^{(n-1)}`. A jump at time `s` is credited to `J` iff
//! `V_k < s <= T_k` for some `k`.
//!
//! All stopping times are jump times (or `0`), so they are stored as event
//! indices: index `i` is the state after `i` jumps.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};
use thiserror::Error;

use crate::environment::{sample_offsets, EnvError, Environment};
use crate::lattice::LatticePoint;
use crate::rng::{derive_seed, RngStream};
use crate::stats::{self, wilson_interval, Moments, Statistic, StatsError, TestReport};
use crate::walk::{self, map_walkers, Execution, PathRecord, WalkError};

#[derive(Debug, Error)]
pub enum DecompError {
    #[error("the decomposition needs n >= 1: the spacing a_(n-1) is undefined at n = 0")]
    UnsupportedLevel,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Walk(#[from] WalkError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("time {t} outside the time-changed domain [0, {end}]")]
    OutOfDomain { t: f64, end: f64 },
    #[error("invalid experiment parameters: {0}")]
    Parameters(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppingTime {
    pub time: f64,
    /// Number of jumps made by this time.
    pub index: usize,
}

/// What the horizon interrupted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pending {
    /// Inside `[V_k, T_k]`, waiting for `T_k`.
    Return,
    /// Inside `[T_k, V_{k+1}]`, waiting for `V_{k+1}`.
    Excursion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcursionDecomposition {
    pub level: usize,
    pub horizon: f64,
    pub start: LatticePoint,
    /// Whether the start lies outside the interior of `Gamma^1`.
    pub start_condition: bool,
    /// `U_1, U_2, ...`
    pub u: Vec<StoppingTime>,
    /// `S_1, S_2, ...`; one shorter than `u` if the last return is pending.
    pub s: Vec<StoppingTime>,
    /// `V_1, V_2, ...`
    pub v: Vec<StoppingTime>,
    /// `T_1, T_2, ...`; one shorter than `v` when `pending == Return`.
    pub t: Vec<StoppingTime>,
    pub pending: Pending,
}

impl ExcursionDecomposition {
    /// `[V_k, T_k]`, the last one closed at the horizon if pending.
    pub fn j_intervals(&self) -> Vec<(f64, f64)> {
        self.v
            .iter()
            .enumerate()
            .map(|(k, v)| (v.time, self.t.get(k).map_or(self.horizon, |t| t.time)))
            .collect()
    }

    /// `[T_k, V_{k+1}]` for `k >= 0`, computed from the stopping times
    /// directly rather than as the complement of [`Self::j_intervals`].
    pub fn complement_intervals(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.t.len() + 1);
        let mut from = 0.0;
        for k in 0..=self.t.len() {
            match self.v.get(k) {
                Some(v) => out.push((from, v.time)),
                None => {
                    out.push((from, self.horizon));
                    break;
                }
            }
            match self.t.get(k) {
                Some(t) => from = t.time,
                None => break,
            }
        }
        out
    }

    /// Event-index ranges `(V_k, T_k]` of jumps credited to `J`.
    fn j_jump_ranges(&self, jumps: usize) -> Vec<(usize, usize)> {
        self.v
            .iter()
            .enumerate()
            .map(|(k, v)| (v.index, self.t.get(k).map_or(jumps, |t| t.index)))
            .collect()
    }
}

/// Scans the jump events of `path` for the stopping times at level `n`.
pub fn compute_stopping_times(
    path: &PathRecord,
    env: &Environment,
    n: usize,
) -> Result<ExcursionDecomposition, DecompError> {
    if n == 0 {
        return Err(DecompError::UnsupportedLevel);
    }
    env.check_level(n)?;
    let beta = env.schedule().beta(n) as i64;
    let spacing = env.schedule().a(n - 1) as i64;
    let m = path.jump_count();
    let dist: Vec<i64> = (0..=m)
        .map(|k| env.center_distance(n, path.position_after(k)))
        .collect();
    let inner = |k: usize| dist[k] <= 2 * beta;
    let outer = |k: usize| dist[k] > 4 * beta;
    let at = |k: usize| StoppingTime {
        time: if k == 0 { 0.0 } else { path.jump_times[k - 1] },
        index: k,
    };
    let first = |from: usize, pred: &dyn Fn(usize) -> bool| (from..=m).find(|&k| pred(k));

    let mut u = Vec::new();
    let mut s = Vec::new();
    let mut from = 0;
    while let Some(ku) = first(from, &outer) {
        u.push(ku);
        match first(ku, &inner) {
            Some(ks) => {
                s.push(ks);
                from = ks;
            }
            None => break,
        }
    }

    let mut v = Vec::new();
    let mut t = Vec::new();
    let mut tprev = 0;
    let mut j = 0;
    let pending = loop {
        while j < u.len() && u[j] < tprev {
            j += 1;
        }
        let reference = path.position_after(tprev);
        let mut found = None;
        for (jj, &ku) in u.iter().enumerate().skip(j) {
            let end = s.get(jj).copied().unwrap_or(m);
            if let Some(k) =
                (ku..=end).find(|&k| path.position_after(k).congruent(reference, spacing))
            {
                found = Some(k);
                break;
            }
        }
        let Some(kv) = found else {
            break Pending::Excursion;
        };
        v.push(kv);
        match first(kv, &inner) {
            Some(kt) => {
                t.push(kt);
                tprev = kt;
            }
            None => break Pending::Return,
        }
    };

    Ok(ExcursionDecomposition {
        level: n,
        horizon: path.horizon,
        start: path.start,
        start_condition: dist[0] >= 2 * beta,
        u: u.into_iter().map(at).collect(),
        s: s.into_iter().map(at).collect(),
        v: v.into_iter().map(at).collect(),
        t: t.into_iter().map(at).collect(),
        pending,
    })
}

/// Additive functional `t -> |[0, t] ∩ I|` of a union of disjoint
/// increasing intervals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Clock {
    intervals: Vec<(f64, f64)>,
    horizon: f64,
}

impl Clock {
    pub fn new(intervals: Vec<(f64, f64)>, horizon: f64) -> Self {
        Self { intervals, horizon }
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn value(&self, t: f64) -> f64 {
        self.intervals
            .iter()
            .take_while(|(a, _)| *a < t)
            .map(|&(a, b)| b.min(t) - a)
            .sum()
    }

    pub fn total(&self) -> f64 {
        self.value(self.horizon)
    }

    /// Right-continuous inverse `inf{s >= 0 : value(s) >= tau}`.
    pub fn inverse(&self, tau: f64) -> Result<f64, DecompError> {
        let end = self.total();
        if !(0.0..=end).contains(&tau) {
            return Err(DecompError::OutOfDomain { t: tau, end });
        }
        if tau == 0.0 {
            return Ok(0.0);
        }
        let mut acc = 0.0;
        for &(a, b) in &self.intervals {
            let len = b - a;
            if acc + len >= tau {
                return Ok(a + (tau - acc));
            }
            acc += len;
        }
        Ok(self.horizon)
    }
}

/// The two components of a decomposed path and their time changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    /// `X^{n,1}`: the start plus the jumps made during `J`.
    pub x1: PathRecord,
    /// `X^{n,2}`: the start plus the jumps made outside `J`.
    pub x2: PathRecord,
    pub sigma1: Clock,
    pub sigma2: Clock,
    /// `X^{n,1}` run on the clock of `J`, defined on `[0, sigma1(horizon)]`.
    pub x1_hat: PathRecord,
    /// `X^{n,2}` run on the complementary clock.
    pub x2_hat: PathRecord,
}

impl Split {
    pub fn x1_hat_at(&self, tau: f64) -> Result<LatticePoint, DecompError> {
        hat_at(&self.x1_hat, tau)
    }

    pub fn x2_hat_at(&self, tau: f64) -> Result<LatticePoint, DecompError> {
        hat_at(&self.x2_hat, tau)
    }
}

fn hat_at(p: &PathRecord, tau: f64) -> Result<LatticePoint, DecompError> {
    p.position_at(tau).map_err(|_| DecompError::OutOfDomain {
        t: tau,
        end: p.horizon,
    })
}

/// Builds `(X^1, X^2, sigma^1, sigma^2, X-hat^1, X-hat^2)` from a path and
/// its decomposition.
pub fn split_and_clock(
    path: &PathRecord,
    decomp: &ExcursionDecomposition,
) -> Result<Split, DecompError> {
    if decomp.start != path.start || decomp.horizon != path.horizon {
        return Err(DecompError::Parameters(
            "decomposition belongs to another path".into(),
        ));
    }
    let m = path.jump_count();
    let ranges = decomp.j_jump_ranges(m);
    let mut in_j = vec![false; m + 1];
    for &(lo, hi) in &ranges {
        for flag in &mut in_j[lo + 1..=hi] {
            *flag = true;
        }
    }
    let time = |i: usize| path.jump_times[i - 1];
    let step = |i: usize| path.position_after(i) - path.position_after(i - 1);

    let mut x1 = PathRecord::constant(path.start, path.horizon);
    let mut x2 = PathRecord::constant(path.start, path.horizon);
    for i in 1..=m {
        let target = if in_j[i] { &mut x1 } else { &mut x2 };
        let prev = target.final_position();
        target.jump_times.push(time(i));
        target.positions.push(prev + step(i));
    }

    let sigma1 = Clock::new(decomp.j_intervals(), path.horizon);
    let sigma2 = Clock::new(decomp.complement_intervals(), path.horizon);

    let hat = |intervals: &[(f64, f64)], jump_ranges: &[(usize, usize)]| {
        let mut p = PathRecord::constant(path.start, 0.0);
        let mut acc = 0.0;
        for (&(a, b), &(lo, hi)) in intervals.iter().zip(jump_ranges) {
            for i in lo + 1..=hi {
                let prev = p.final_position();
                p.jump_times.push(acc + (time(i) - a));
                p.positions.push(prev + step(i));
            }
            acc += b - a;
        }
        p.horizon = acc;
        p
    };
    let x1_hat = hat(&decomp.j_intervals(), &ranges);
    let complement_ranges: Vec<(usize, usize)> = {
        let mut out = Vec::new();
        let mut from = 0;
        for (k, v) in decomp.v.iter().enumerate() {
            out.push((from, v.index));
            match decomp.t.get(k) {
                Some(t) => from = t.index,
                None => {
                    from = m;
                    break;
                }
            }
        }
        if decomp.pending == Pending::Excursion {
            out.push((from, m));
        }
        out
    };
    let x2_hat = hat(&decomp.complement_intervals(), &complement_ranges);
    Ok(Split {
        x1,
        x2,
        sigma1,
        sigma2,
        x1_hat,
        x2_hat,
    })
}

/// `Y_k = X(V_{k+1}) - X(T_k)` and `Ybar_k = sup |X(t) - X(T_k)|` over
/// `[T_k, V_{k+1}]`, for every `k >= 0` with `V_{k+1}` inside the horizon.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExcursionIncrements {
    pub y: Vec<LatticePoint>,
    pub ybar: Vec<f64>,
}

pub fn excursion_increments(
    path: &PathRecord,
    decomp: &ExcursionDecomposition,
) -> ExcursionIncrements {
    let mut out = ExcursionIncrements::default();
    let mut from = 0;
    for (k, v) in decomp.v.iter().enumerate() {
        let base = path.position_after(from);
        out.y.push(path.position_after(v.index) - base);
        let sup = (from..=v.index)
            .map(|i| (path.position_after(i) - base).euclidean())
            .fold(0.0, f64::max);
        out.ybar.push(sup);
        match decomp.t.get(k) {
            Some(t) => from = t.index,
            None => break,
        }
    }
    out
}

/// First time the path visits `D_k` for some `n < k <= N`.
pub fn obstacle_hitting_time(env: &Environment, n: usize, path: &PathRecord) -> Option<f64> {
    let top = env.level();
    (0..=path.jump_count())
        .find(|&i| {
            let p = path.position_after(i);
            (n + 1..=top).any(|k| env.in_obstacle(k, p))
        })
        .map(|i| if i == 0 { 0.0 } else { path.jump_times[i - 1] })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    pub hitting_time: Option<f64>,
    pub compared_jumps: usize,
    pub coincide: bool,
}

/// Drives a level-`N` and a level-`n` walk with the same stream and checks
/// that they agree up to the level-`N` walk's first visit to a higher-level
/// obstacle.
pub fn coupling_check(
    env: &Environment,
    n: usize,
    start: LatticePoint,
    horizon: f64,
    stream: RngStream,
) -> Result<CouplingReport, DecompError> {
    let high = walk::simulate(env, env.level(), start, horizon, stream)?;
    let low = walk::simulate(env, n, start, horizon, stream)?;
    let r = obstacle_hitting_time(env, n, &high);
    let cut = r.unwrap_or(horizon);
    let kh = high.jumps_until(cut);
    let kl = low.jumps_until(cut);
    let coincide = kh == kl
        && high.jump_times[..kh] == low.jump_times[..kl]
        && high.positions[..kh] == low.positions[..kl];
    Ok(CouplingReport {
        hitting_time: r,
        compared_jumps: kh,
        coincide,
    })
}

fn env_hash(env: &Environment) -> String {
    env.schedule().fingerprint()
}

/// Parameters of [`law_equality_experiment`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LawEqualityOptions {
    pub samples: u64,
    /// Times on the `J`-clock at which marginals are compared.
    pub times: Vec<f64>,
    pub start: LatticePoint,
    /// Initial horizon of the level-`n` walks; doubled per walker while the
    /// `J`-clock falls short of the largest test time.
    pub horizon: f64,
    pub max_horizon: f64,
    /// Family-wise significance level, split over all KS tests (Bonferroni).
    pub alpha: f64,
}

/// Compares marginals of `X-hat^{n,1}` at fixed times with those of a
/// directly simulated `X^{(n-1)}` by two-sample KS tests, together with a
/// split-half control on the `X-hat^{n,1}` sample.
pub fn law_equality_experiment(
    env: &Environment,
    n: usize,
    opts: &LawEqualityOptions,
    seed: u64,
) -> Result<TestReport, DecompError> {
    if n == 0 {
        return Err(DecompError::UnsupportedLevel);
    }
    env.check_level(n)?;
    let tmax = opts.times.iter().cloned().fold(0.0, f64::max);
    if opts.times.is_empty() || !(tmax > 0.0) || opts.samples < 2 * stats::KS_MIN_SAMPLES as u64 {
        return Err(DecompError::Parameters(
            "need positive test times and at least 16 samples".into(),
        ));
    }
    let walkers = derive_seed(seed, "law-walkers");
    let reference = derive_seed(seed, "law-reference");

    let hats = map_walkers(
        opts.samples,
        Execution::Parallel,
        |i| -> Result<Option<Vec<LatticePoint>>, DecompError> {
            let mut h = opts.horizon.min(opts.max_horizon);
            loop {
                let path = walk::simulate(env, n, opts.start, h, RngStream::new(walkers, i))?;
                let d = compute_stopping_times(&path, env, n)?;
                let split = split_and_clock(&path, &d)?;
                if split.sigma1.total() >= tmax {
                    return opts
                        .times
                        .iter()
                        .map(|&t| split.x1_hat_at(t))
                        .collect::<Result<Vec<_>, _>>()
                        .map(Some);
                }
                if h >= opts.max_horizon {
                    return Ok(None);
                }
                h = (2.0 * h).min(opts.max_horizon);
            }
        },
    );
    let refs = map_walkers(
        opts.samples,
        Execution::Parallel,
        |i| -> Result<Vec<LatticePoint>, DecompError> {
            let path = walk::simulate(env, n - 1, opts.start, tmax, RngStream::new(reference, i))?;
            Ok(opts
                .times
                .iter()
                .map(|&t| path.position_at(t))
                .collect::<Result<Vec<_>, _>>()?)
        },
    );
    let mut hat_samples = Vec::new();
    let mut dropped = 0u64;
    for h in hats {
        match h? {
            Some(v) => hat_samples.push(v),
            None => dropped += 1,
        }
    }
    let ref_samples = refs.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut report = TestReport::new("law-equality");
    report.seed = Some(seed);
    report.schedule_hash = Some(env_hash(env));
    report
        .sample_sizes
        .insert("hat".into(), hat_samples.len() as u64);
    report
        .sample_sizes
        .insert("reference".into(), ref_samples.len() as u64);
    report.sample_sizes.insert("dropped".into(), dropped);
    if dropped > 0 {
        report.flags.push(format!(
            "{dropped} walkers dropped: J-clock shorter than {tmax} at horizon {}",
            opts.max_horizon
        ));
    }
    report
        .notes
        .push("family-wise level split over all KS tests by Bonferroni".into());
    if hat_samples.len() < 2 * stats::KS_MIN_SAMPLES {
        return Err(DecompError::Parameters(format!(
            "only {} usable samples",
            hat_samples.len()
        )));
    }

    let tests = 2 * opts.times.len();
    let level = opts.alpha / tests as f64;
    let coord = |p: &LatticePoint, c: usize| if c == 0 { p.x as f64 } else { p.y as f64 };
    let half = hat_samples.len() / 2;
    let mut min_p = 1.0f64;
    let mut min_p_control = 1.0f64;
    for (ti, &t) in opts.times.iter().enumerate() {
        for (c, name) in ["x", "y"].iter().enumerate() {
            let a: Vec<f64> = hat_samples.iter().map(|v| coord(&v[ti], c)).collect();
            let b: Vec<f64> = ref_samples.iter().map(|v| coord(&v[ti], c)).collect();
            let ks = stats::two_sample_ks(&a, &b)?;
            let s = &ks.statistics[0];
            let p = s.p_value.unwrap();
            min_p = min_p.min(p);
            report.push(
                Statistic::new(format!("ks_{name}(t={t})"), s.value)
                    .with_p(p)
                    .with_pass(p >= level),
            );
            let ctl = stats::two_sample_ks(&a[..half], &a[half..])?;
            let cs = &ctl.statistics[0];
            let cp = cs.p_value.unwrap();
            min_p_control = min_p_control.min(cp);
            report.push(
                Statistic::new(format!("control_split_half_{name}(t={t})"), cs.value)
                    .with_p(cp)
                    .with_pass(cp >= level),
            );
        }
    }
    report.push(
        Statistic::new("min_p", min_p)
            .with_reference(level)
            .with_pass(min_p >= level),
    );
    report.push(
        Statistic::new("control_min_p", min_p_control)
            .with_reference(level)
            .with_pass(min_p_control >= level),
    );
    Ok(report)
}

/// Repeats [`law_equality_experiment`] with `eta_n = K_n = 1`, where the two
/// processes coincide by construction, and compares the number of family
/// rejections with the binomial law at the nominal level.
pub fn law_equality_degenerate_control(
    env: &Environment,
    n: usize,
    opts: &LawEqualityOptions,
    repetitions: u64,
    seed: u64,
) -> Result<TestReport, DecompError> {
    if n == 0 {
        return Err(DecompError::UnsupportedLevel);
    }
    let schedule = env.schedule().clone().with_eta(n, 1.0).with_k(n, 1.0);
    let flat = env.with_schedule(schedule)?;
    let mut rejections = 0u64;
    for r in 0..repetitions {
        let rep =
            law_equality_experiment(&flat, n, opts, derive_seed(seed, &format!("control-{r}")))?;
        if rep.get("min_p").and_then(|s| s.pass) == Some(false) {
            rejections += 1;
        }
    }
    let bound = binomial_upper_quantile(repetitions, opts.alpha, 0.999);
    let mut report = TestReport::new("law-equality-degenerate-control");
    report.seed = Some(seed);
    report.schedule_hash = Some(flat.schedule().fingerprint());
    report
        .sample_sizes
        .insert("repetitions".into(), repetitions);
    report.sample_sizes.insert("samples".into(), opts.samples);
    let rate = rejections as f64 / repetitions.max(1) as f64;
    let [lo, hi] = wilson_interval(rejections, repetitions, 1.96);
    report.push(
        Statistic::new("rejection_rate", rate)
            .with_ci(lo, hi)
            .with_reference(opts.alpha),
    );
    report.push(
        Statistic::new("rejections", rejections as f64)
            .with_reference(bound as f64)
            .with_pass(rejections <= bound),
    );
    report.notes.push(format!(
        "rejections are compared with the 99.9% quantile of Binomial({repetitions}, {})",
        opts.alpha
    ));
    Ok(report)
}

/// Smallest `q` with `P(Binomial(n, p) <= q) >= level`.
pub fn binomial_upper_quantile(n: u64, p: f64, level: f64) -> u64 {
    let b = Binomial::new(p, n).expect("valid binomial parameters");
    (0..=n).find(|&q| b.cdf(q) >= level).unwrap_or(n)
}

/// Parameters of [`smallness_experiment`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SmallnessOptions {
    pub u: f64,
    pub samples: u64,
    pub deltas: Vec<f64>,
    /// How many fresh offset draws to try when the origin violates the start
    /// condition.
    pub max_offset_resamples: u32,
}

/// Estimates `P(sigma^2_u / u <= delta, sup_{s <= u} |X^2_s| / sqrt(u) <= delta)`
/// for the walk started at the origin, over a grid of `delta`.
pub fn smallness_experiment(
    env: &Environment,
    n: usize,
    opts: &SmallnessOptions,
    seed: u64,
) -> Result<TestReport, DecompError> {
    if n == 0 {
        return Err(DecompError::UnsupportedLevel);
    }
    env.check_level(n)?;
    if !(opts.u > 0.0) || opts.deltas.is_empty() || opts.samples == 0 {
        return Err(DecompError::Parameters(
            "need u > 0, a nonempty delta grid and samples > 0".into(),
        ));
    }
    let beta = env.schedule().beta(n) as i64;
    let origin = LatticePoint::ORIGIN;
    let mut env = env.clone();
    let mut resamples = 0u32;
    while env.center_distance(n, origin) < 2 * beta {
        if resamples == opts.max_offset_resamples {
            return Err(DecompError::Parameters(format!(
                "origin violates the start condition after {resamples} offset resamples"
            )));
        }
        resamples += 1;
        let offsets = sample_offsets(
            env.schedule(),
            derive_seed(seed, &format!("offsets-resample-{resamples}")),
        );
        env = Environment::new(env.schedule().clone(), offsets)?;
    }
    let env = &env;
    let walkers = derive_seed(seed, "smallness-walkers");
    let results = map_walkers(
        opts.samples,
        Execution::Parallel,
        |i| -> Result<(f64, f64), DecompError> {
            let path = walk::simulate(env, n, origin, opts.u, RngStream::new(walkers, i))?;
            let d = compute_stopping_times(&path, env, n)?;
            let split = split_and_clock(&path, &d)?;
            let clock = split.sigma2.value(opts.u) / opts.u;
            let start = split.x2.start;
            let sup = (0..=split.x2.jump_count())
                .map(|k| (split.x2.position_after(k) - start).euclidean())
                .fold(0.0, f64::max)
                / opts.u.sqrt();
            Ok((clock, sup))
        },
    );
    let pairs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut report = TestReport::new("smallness");
    report.seed = Some(seed);
    report.schedule_hash = Some(env_hash(env));
    report.sample_sizes.insert("samples".into(), opts.samples);
    report
        .sample_sizes
        .insert("offset_resamples".into(), resamples as u64);
    if resamples > 0 {
        report.flags.push(format!(
            "offsets resampled {resamples} time(s) to satisfy the start condition"
        ));
    }
    let mut deltas = opts.deltas.clone();
    deltas.sort_by(f64::total_cmp);
    let mut prev = (0u64, 0u64);
    let mut monotone = true;
    for &delta in &deltas {
        let both = pairs
            .iter()
            .filter(|(c, s)| *c <= delta && *s <= delta)
            .count() as u64;
        let clock = pairs.iter().filter(|(c, _)| *c <= delta).count() as u64;
        monotone &= both >= prev.0 && clock >= prev.1;
        prev = (both, clock);
        let nn = opts.samples;
        let [lo, hi] = wilson_interval(both, nn, 1.96);
        report.push(
            Statistic::new(format!("p_both(delta={delta})"), both as f64 / nn as f64)
                .with_ci(lo, hi),
        );
        let [lo, hi] = wilson_interval(clock, nn, 1.96);
        report.push(
            Statistic::new(format!("p_sigma2(delta={delta})"), clock as f64 / nn as f64)
                .with_ci(lo, hi),
        );
    }
    report.push(
        Statistic::new("monotone_in_delta", if monotone { 1.0 } else { 0.0 }).with_pass(monotone),
    );
    let clocks: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let sups: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    for (name, xs) in [
        ("mean_sigma2_over_u", clocks),
        ("mean_sup_x2_over_sqrt_u", sups),
    ] {
        let m = Moments::of(&xs);
        let se = m.mean_se();
        report.push(Statistic::new(name, m.mean).with_ci(m.mean - 1.96 * se, m.mean + 1.96 * se));
    }
    Ok(report)
}

/// Parameters of [`covariance_decay_experiment`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CovarianceOptions {
    pub samples: u64,
    pub maxlag: usize,
    pub start: LatticePoint,
    /// Initial horizon; doubled for the whole ensemble while the mean number
    /// of increments per path is below `maxlag + 3`.
    pub horizon: f64,
    pub max_horizon: f64,
}

/// Lag covariances of the first coordinates of `Y_k`, with moments of `Y`
/// and `Ybar` in units of `beta_n`.
pub fn covariance_decay_experiment(
    env: &Environment,
    n: usize,
    opts: &CovarianceOptions,
    seed: u64,
) -> Result<TestReport, DecompError> {
    if n == 0 {
        return Err(DecompError::UnsupportedLevel);
    }
    env.check_level(n)?;
    if opts.samples < 2 || !(opts.horizon > 0.0) {
        return Err(DecompError::Parameters(
            "need at least 2 samples and a positive horizon".into(),
        ));
    }
    let walkers = derive_seed(seed, "covariance-walkers");
    let mut horizon = opts.horizon.min(opts.max_horizon);
    let increments = loop {
        let runs = map_walkers(
            opts.samples,
            Execution::Parallel,
            |i| -> Result<ExcursionIncrements, DecompError> {
                let path = walk::simulate(env, n, opts.start, horizon, RngStream::new(walkers, i))?;
                let d = compute_stopping_times(&path, env, n)?;
                Ok(excursion_increments(&path, &d))
            },
        );
        let incs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
        let mean = incs.iter().map(|r| r.y.len()).sum::<usize>() as f64 / incs.len() as f64;
        if mean >= (opts.maxlag + 3) as f64 || horizon >= opts.max_horizon {
            break incs;
        }
        horizon = (2.0 * horizon).min(opts.max_horizon);
    };
    let beta = env.schedule().beta(n) as f64;
    let mut report = TestReport::new("covariance-decay");
    report.seed = Some(seed);
    report.schedule_hash = Some(env_hash(env));
    report.sample_sizes.insert("paths".into(), opts.samples);
    let total: usize = increments.iter().map(|r| r.y.len()).sum();
    report
        .sample_sizes
        .insert("increments".into(), total as u64);
    let mean_count = total as f64 / increments.len() as f64;
    report.push(Statistic::new("horizon", horizon));
    report.push(Statistic::new("mean_increments_per_path", mean_count));
    if mean_count < 3.0 {
        report.flags.push(format!(
            "only {mean_count:.2} increments per path on average; a longer horizon is needed"
        ));
    }
    let all_y1: Vec<f64> = increments
        .iter()
        .flat_map(|r| r.y.iter().map(|p| p.x as f64))
        .collect();
    let all_ybar: Vec<f64> = increments
        .iter()
        .flat_map(|r| r.ybar.iter().cloned())
        .collect();
    if all_y1.len() < 2 {
        report
            .flags
            .push("fewer than two increments in total; no statistics".into());
        return Ok(report);
    }
    let mean_y1 = all_y1.iter().sum::<f64>() / all_y1.len() as f64;
    let ybar = Moments::of(&all_ybar);
    let y1 = Moments::of(&all_y1);
    report.push(
        Statistic::new("mean_ybar_over_beta", ybar.mean / beta).with_ci(
            (ybar.mean - 3.0 * ybar.mean_se()) / beta,
            (ybar.mean + 3.0 * ybar.mean_se()) / beta,
        ),
    );
    report.push(Statistic::new(
        "var_ybar_over_beta2",
        ybar.var / (beta * beta),
    ));
    report.push(Statistic::new("var_y1_over_beta2", y1.var / (beta * beta)));

    let mut fit = Vec::new();
    for lag in 0..=opts.maxlag {
        // per-path sums make the standard error robust to within-path dependence
        let mut sums = Vec::new();
        let mut counts = Vec::new();
        for r in &increments {
            let ys = &r.y;
            if ys.len() > lag {
                let s: f64 = (0..ys.len() - lag)
                    .map(|j| (ys[j].x as f64 - mean_y1) * (ys[j + lag].x as f64 - mean_y1))
                    .sum();
                sums.push(s);
                counts.push((ys.len() - lag) as f64);
            }
        }
        let pairs: f64 = counts.iter().sum();
        if pairs < 2.0 {
            report.flags.push(format!("no pairs at lag {lag}"));
            continue;
        }
        let c = sums.iter().sum::<f64>() / pairs;
        let se = (sums
            .iter()
            .zip(&counts)
            .map(|(s, k)| (s - c * k).powi(2))
            .sum::<f64>())
        .sqrt()
            / pairs;
        let mut st =
            Statistic::new(format!("cov_lag_{lag}"), c).with_ci(c - 3.0 * se, c + 3.0 * se);
        if lag >= 5 {
            st = st.with_reference(0.0).with_pass(c.abs() <= 3.0 * se);
        }
        report.push(st);
        report.push(Statistic::new(
            format!("cov_lag_{lag}_over_beta2"),
            c / (beta * beta),
        ));
        if lag >= 1 && c.abs() > 2.0 * se && c != 0.0 {
            fit.push((lag as f64, c.abs().ln()));
        }
    }
    if fit.len() >= 2 {
        let k = fit.len() as f64;
        let mx = fit.iter().map(|p| p.0).sum::<f64>() / k;
        let my = fit.iter().map(|p| p.1).sum::<f64>() / k;
        let sxy: f64 = fit.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = fit.iter().map(|p| (p.0 - mx).powi(2)).sum();
        report.push(Statistic::new("decay_rate", -sxy / sxx));
    } else {
        report.notes.push(
            "fewer than two lags >= 1 differ from zero by 2 standard errors; no decay rate fitted"
                .into(),
        );
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::OffsetSequence;
    use crate::schedule::{DeskRatios, ParameterSchedule};

    /// EXCURSION schedule at N = 1: a = 264, beta = 22, b = 2, tile centre
    /// at (132, 132); Gamma^1 is d <= 44, Gamma^2 is d > 88.
    fn env() -> Environment {
        let s = ParameterSchedule::desk_with(1, DeskRatios::EXCURSION)
            .unwrap()
            .with_k(1, 4.0);
        Environment::new(s.clone(), OffsetSequence::zeros(&s)).unwrap()
    }

    fn p(x: i64, y: i64) -> LatticePoint {
        LatticePoint::new(x, y)
    }

    /// A path moving one step at a time through `points`, jump `i` at time `i`.
    fn walk_through(points: &[LatticePoint], horizon: f64) -> PathRecord {
        let times = (1..points.len()).map(|i| i as f64).collect();
        PathRecord::new(points[0], times, points[1..].to_vec(), horizon).unwrap()
    }

    #[test]
    fn level_zero_is_unsupported() {
        let path = PathRecord::constant(p(0, 0), 1.0);
        assert!(matches!(
            compute_stopping_times(&path, &env(), 0),
            Err(DecompError::UnsupportedLevel)
        ));
    }

    #[test]
    fn path_inside_gamma1_has_empty_j() {
        let path = walk_through(&[p(132, 132), p(133, 132), p(133, 133)], 5.0);
        let d = compute_stopping_times(&path, &env(), 1).unwrap();
        assert!(d.u.is_empty() && d.v.is_empty());
        let split = split_and_clock(&path, &d).unwrap();
        assert_eq!(split.sigma2.value(3.7), 3.7);
        assert_eq!(split.sigma1.total(), 0.0);
        assert_eq!(split.x2_hat, path);
        assert_eq!(split.x1.jump_count(), 0);
        assert!(split.x1_hat_at(0.1).is_err());
    }

    #[test]
    fn hand_traced_excursion() {
        // start in Gamma^2 at distance 89, step to 88 (not Gamma^2) and back
        let c = 132;
        let pts = [p(c, c + 89), p(c, c + 88), p(c, c + 89), p(c, c + 90)];
        let path = walk_through(&pts, 10.0);
        let d = compute_stopping_times(&path, &env(), 1).unwrap();
        assert_eq!(d.u[0].index, 0);
        assert_eq!(d.v[0].time, 0.0);
        assert!(d.t.is_empty());
        assert_eq!(d.pending, Pending::Return);
        assert_eq!(d.j_intervals(), vec![(0.0, 10.0)]);
        let split = split_and_clock(&path, &d).unwrap();
        assert_eq!(split.x1_hat, path);
        assert_eq!(split.x2.jump_count(), 0);
    }

    #[test]
    fn full_cycle_by_hand() {
        // T_0 = 0 at d = 44 (inner boundary); walk out to d = 89, back to 44
        let c = 132;
        let mut pts: Vec<LatticePoint> = (44..=89).map(|k| p(c + k, c)).collect();
        pts.extend((44..89).rev().map(|k| p(c + k, c)));
        let path = walk_through(&pts, 200.0);
        let d = compute_stopping_times(&path, &env(), 1).unwrap();
        assert!(d.start_condition);
        assert_eq!(d.u[0].index, 45);
        assert_eq!(d.s[0].index, 90);
        // a_0 = 1 so the first point of [U_1, S_1] qualifies
        assert_eq!(d.v[0].index, 45);
        assert_eq!(d.t[0].index, 90);
        assert_eq!(d.pending, Pending::Excursion);
        let inc = excursion_increments(&path, &d);
        assert_eq!(inc.y, vec![p(45, 0)]);
        assert_eq!(inc.ybar, vec![45.0]);
        let split = split_and_clock(&path, &d).unwrap();
        assert_eq!(split.sigma1.total(), 45.0);
        assert_eq!(split.sigma2.total(), 155.0);
        assert_eq!(split.x1.final_position(), path.start - p(45, 0));
        assert_eq!(split.x2.final_position(), path.start + p(45, 0));
        assert_eq!(split.sigma1.inverse(10.0).unwrap(), 55.0);
        assert_eq!(split.x1_hat_at(45.0).unwrap(), path.start - p(45, 0));
    }

    #[test]
    fn congruence_condition_with_coarser_spacing() {
        // level 2 of the EXCURSION schedule uses a_1 = 264 as spacing
        let s = ParameterSchedule::desk_with(2, DeskRatios::EXCURSION).unwrap();
        let env = Environment::new(s.clone(), OffsetSequence::zeros(&s)).unwrap();
        let path = walk::simulate(&env, 0, p(0, 0), 4000.0, RngStream::new(1, 1)).unwrap();
        let d = compute_stopping_times(&path, &env, 2).unwrap();
        for (k, v) in d.v.iter().enumerate() {
            let t_prev = if k == 0 { 0 } else { d.t[k - 1].index };
            assert!(path
                .position_after(v.index)
                .congruent(path.position_after(t_prev), 264));
        }
    }

    #[test]
    fn clocks_and_splitting_on_simulated_paths() {
        let env = env();
        for i in 0..20 {
            let path = walk::simulate(&env, 1, p(0, 0), 3000.0, RngStream::new(9, i)).unwrap();
            let d = compute_stopping_times(&path, &env, 1).unwrap();
            let split = split_and_clock(&path, &d).unwrap();
            split.x1.validate().unwrap();
            split.x2.validate().unwrap();
            split.x1_hat.validate().unwrap();
            split.x2_hat.validate().unwrap();
            for k in 0..=path.jump_count() {
                let t = if k == 0 { 0.0 } else { path.jump_times[k - 1] };
                let s = split.sigma1.value(t) + split.sigma2.value(t);
                assert!((s - t).abs() <= 1e-12 * t.max(1.0));
                let sum = split.x1.position_at(t).unwrap() + split.x2.position_at(t).unwrap()
                    - path.start;
                assert_eq!(sum, path.position_at(t).unwrap());
            }
            for v in &d.v {
                assert!(env.center_distance(1, path.position_after(v.index)) >= 44);
            }
            let inc = excursion_increments(&path, &d);
            for (y, yb) in inc.y.iter().zip(&inc.ybar) {
                assert!(y.euclidean() <= *yb);
            }
        }
    }

    #[test]
    fn hitting_time_and_coupling() {
        let s = ParameterSchedule::desk_with(2, DeskRatios::EXCURSION)
            .unwrap()
            .with_k(1, 3.0)
            .with_k(2, 5.0);
        let env = Environment::new(s.clone(), OffsetSequence::zeros(&s)).unwrap();
        // a level-2 bar point: (a'_2 - beta_2, a'_2)
        let a2 = s.a(2) as i64 / 2;
        let bar = p(a2 - s.beta(2) as i64, a2);
        assert!(env.in_obstacle(2, bar));
        let path = walk_through(&[bar + p(-1, 0), bar], 3.0);
        assert_eq!(obstacle_hitting_time(&env, 1, &path), Some(1.0));
        let far = PathRecord::constant(p(0, 0), 3.0);
        assert_eq!(obstacle_hitting_time(&env, 1, &far), None);
        let mut hits = 0;
        for i in 0..10 {
            let r = coupling_check(&env, 1, bar + p(-3, 2), 400.0, RngStream::new(4, i)).unwrap();
            assert!(r.coincide);
            hits += r.hitting_time.is_some() as usize;
        }
        assert!(hits > 0);
    }

    #[test]
    fn binomial_quantile() {
        assert_eq!(binomial_upper_quantile(10, 0.0, 0.999), 0);
        assert!(binomial_upper_quantile(100, 0.01, 0.999) >= 4);
    }
}
