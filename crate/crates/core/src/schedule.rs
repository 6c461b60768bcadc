//! Scale sequences `a_n`, `b_n`, `beta_n` and the conductance levels
//! `eta_n`, `K_n` that parameterise the hierarchical environment.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Largest tile period accepted anywhere in the crate. Keeps lattice
/// arithmetic (folding, reflections, ball tests) clear of `i64` overflow.
pub const MAX_PERIOD: u64 = 1 << 62;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("malformed schedule: {0}")]
    Structure(String),
    #[error("level {level}: scale exceeds 2^62")]
    Overflow { level: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Every numbered condition is checked as written, magnitudes included.
    Strict,
    /// Structural relations only (parity, divisibility, obstacle geometry).
    Desk,
}

/// Multipliers used by the desk generator:
/// `b_n = b_per_prev * a_{n-1}`, `beta_n = beta_per_b * b_n`,
/// `a_n = a_per_beta * beta_n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeskRatios {
    pub b_per_prev: u64,
    pub beta_per_b: u64,
    pub a_per_beta: u64,
}

impl DeskRatios {
    /// The reference desk generator (`a_1 = 352` for one level).
    pub const DEFAULT: DeskRatios = DeskRatios {
        b_per_prev: 4,
        beta_per_b: 11,
        a_per_beta: 8,
    };

    /// Smaller scales with `a_n = 12 beta_n`, so the far region
    /// (sup-distance `> 4 beta_n` from every tile centre) is non-empty and
    /// excursions actually happen.
    pub const EXCURSION: DeskRatios = DeskRatios {
        b_per_prev: 2,
        beta_per_b: 11,
        a_per_beta: 12,
    };
}

impl Default for DeskRatios {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// The parameter sequences for levels `1..=N`.
///
/// `a` is indexed from level 0 (`a[0] == 1`); every other sequence stores
/// level `n` at index `n - 1`. Use the accessor methods rather than raw
/// indexing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSchedule {
    pub mode: Mode,
    pub a: Vec<u64>,
    pub b: Vec<u64>,
    pub beta: Vec<u64>,
    pub eta: Vec<f64>,
    /// Bar conductances; `None` until calibrated or set by hand.
    pub k: Vec<Option<f64>>,
}

/// `eta_n = b_n^{-(1 + 1/n)}`.
pub fn eta_of(n: usize, b: u64) -> f64 {
    assert!(n >= 1, "levels start at 1");
    (b as f64).powf(-(1.0 + 1.0 / n as f64))
}

impl ParameterSchedule {
    /// Builds a schedule with `eta` derived from `b` and `K` unset.
    pub fn new(
        mode: Mode,
        a: Vec<u64>,
        b: Vec<u64>,
        beta: Vec<u64>,
    ) -> Result<Self, ScheduleError> {
        if b.len() != beta.len() || a.len() != b.len() + 1 {
            return Err(ScheduleError::Structure(format!(
                "expected |a| = |b| + 1 = |beta| + 1, got |a| = {}, |b| = {}, |beta| = {}",
                a.len(),
                b.len(),
                beta.len()
            )));
        }
        let eta = b
            .iter()
            .enumerate()
            .map(|(i, &bn)| eta_of(i + 1, bn))
            .collect();
        let k = vec![None; b.len()];
        Ok(Self {
            mode,
            a,
            b,
            beta,
            eta,
            k,
        })
    }

    pub fn desk(levels: usize) -> Result<Self, ScheduleError> {
        Self::desk_with(levels, DeskRatios::DEFAULT)
    }

    pub fn desk_with(levels: usize, ratios: DeskRatios) -> Result<Self, ScheduleError> {
        if levels == 0 {
            return Err(ScheduleError::Structure(
                "at least one level is required".into(),
            ));
        }
        let mut a = vec![1u64];
        let mut b = Vec::with_capacity(levels);
        let mut beta = Vec::with_capacity(levels);
        for n in 1..=levels {
            let prev = a[n - 1];
            let bn = prev.checked_mul(ratios.b_per_prev);
            let betan = bn.and_then(|v| v.checked_mul(ratios.beta_per_b));
            let an = betan.and_then(|v| v.checked_mul(ratios.a_per_beta));
            match (bn, betan, an) {
                (Some(bn), Some(betan), Some(an)) if an <= MAX_PERIOD => {
                    b.push(bn);
                    beta.push(betan);
                    a.push(an);
                }
                _ => return Err(ScheduleError::Overflow { level: n }),
            }
        }
        Self::new(Mode::Desk, a, b, beta)
    }

    pub fn levels(&self) -> usize {
        self.b.len()
    }

    pub fn a(&self, n: usize) -> u64 {
        self.a[n]
    }

    pub fn half_a(&self, n: usize) -> u64 {
        self.a[n] / 2
    }

    pub fn b(&self, n: usize) -> u64 {
        self.b[n - 1]
    }

    pub fn beta(&self, n: usize) -> u64 {
        self.beta[n - 1]
    }

    pub fn eta(&self, n: usize) -> f64 {
        self.eta[n - 1]
    }

    pub fn k(&self, n: usize) -> Option<f64> {
        self.k[n - 1]
    }

    pub fn set_k(&mut self, n: usize, value: f64) {
        self.k[n - 1] = Some(value);
    }

    pub fn with_k(mut self, n: usize, value: f64) -> Self {
        self.set_k(n, value);
        self
    }

    /// Overrides `eta_n` (used for degenerate controls with `eta = K = 1`).
    pub fn with_eta(mut self, n: usize, value: f64) -> Self {
        self.eta[n - 1] = value;
        self
    }

    /// Short content hash used to tag reports.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("schedule serializes");
        let digest = Sha256::digest(&bytes);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    fn check_structure(&self) -> Result<(), ScheduleError> {
        let n = self.levels();
        if n == 0 {
            return Err(ScheduleError::Structure(
                "at least one level is required".into(),
            ));
        }
        let lens = [
            ("a", self.a.len(), n + 1),
            ("beta", self.beta.len(), n),
            ("eta", self.eta.len(), n),
            ("k", self.k.len(), n),
        ];
        for (name, got, want) in lens {
            if got != want {
                return Err(ScheduleError::Structure(format!(
                    "|{name}| = {got}, expected {want}"
                )));
            }
        }
        if self.a[0] != 1 {
            return Err(ScheduleError::Structure(format!(
                "a_0 must be 1, got {}",
                self.a[0]
            )));
        }
        if let Some(level) = self.a.iter().position(|&v| v == 0 || v > MAX_PERIOD) {
            return Err(ScheduleError::Structure(format!(
                "a_{level} outside (0, 2^62]"
            )));
        }
        if let Some(i) = self
            .b
            .iter()
            .zip(&self.beta)
            .position(|(&b, &beta)| b == 0 || beta == 0)
        {
            return Err(ScheduleError::Structure(format!(
                "b_{0} and beta_{0} must be positive",
                i + 1
            )));
        }
        Ok(())
    }

    /// Checks every condition that applies in the schedule's mode.
    pub fn validate(&self) -> Result<ValidationReport, ScheduleError> {
        self.check_structure()?;
        let mut report = ValidationReport::default();
        let levels = self.levels();
        for n in 1..=levels {
            let (a_prev, a, b, beta) = (self.a(n - 1), self.a(n), self.b(n), self.beta(n));
            if a % 2 != 0 {
                report.push(n, Condition::I, format!("a_{n} = {a} is odd"));
            }
            if b % a_prev != 0 {
                report.push(
                    n,
                    Condition::II,
                    format!("a_{} = {a_prev} does not divide b_{n} = {b}", n - 1),
                );
            }
            if beta % b != 0 {
                report.push(
                    n,
                    Condition::II,
                    format!("b_{n} = {b} does not divide beta_{n} = {beta}"),
                );
            }
            if a % b != 0 {
                report.push(
                    n,
                    Condition::II,
                    format!("b_{n} = {b} does not divide a_{n} = {a}"),
                );
            }
            if !(a_prev < b && b < beta && beta < a) {
                report.push(
                    n,
                    Condition::Ordering,
                    format!(
                        "need a_{} < b_{n} < beta_{n} < a_{n}: {a_prev}, {b}, {beta}, {a}",
                        n - 1
                    ),
                );
            }
            let eta = self.eta(n);
            if !(eta > 0.0 && eta.is_finite()) {
                report.push(n, Condition::EtaPositive, format!("eta_{n} = {eta}"));
            }
            if let Some(k) = self.k(n) {
                if !(k > 0.0 && k.is_finite()) {
                    report.push(n, Condition::KPositive, format!("K_{n} = {k}"));
                }
            }
            if a <= 8 * beta {
                report.warnings.push(format!(
                    "level {n}: a_{n} = {a} <= 8 beta_{n} = {}; the far region is empty and no excursion can start",
                    8 * beta
                ));
            }
            match self.mode {
                Mode::Desk => self.check_desk(n, &mut report),
                Mode::Strict => self.check_strict(n, &mut report),
            }
        }
        if self.mode == Mode::Strict {
            report
                .unverified
                .push("(vii): estimates (5.1) and (6.1) of the companion construction are not checkable here".into());
            report.unverified.push(
                "closeness of the rescaled level-(n-1) walk to Brownian motion for a >= a_n is not checkable; measure it instead"
                    .into(),
            );
        }
        Ok(report)
    }

    fn check_desk(&self, n: usize, report: &mut ValidationReport) {
        let (a, b, beta) = (self.a(n), self.b(n), self.beta(n));
        if beta < 11 * b {
            report.push(
                n,
                Condition::DeskBetaSpacing,
                format!("beta_{n} = {beta} < 11 b_{n} = {}", 11 * b),
            );
        }
        if 8 * beta > a {
            report.push(
                n,
                Condition::DeskTileFit,
                format!("8 beta_{n} = {} > a_{n} = {a}", 8 * beta),
            );
        }
    }

    fn check_strict(&self, n: usize, report: &mut ValidationReport) {
        let (a_prev, a, b, beta) = (
            self.a(n - 1) as f64,
            self.a(n) as f64,
            self.b(n) as f64,
            self.beta(n) as f64,
        );
        let nf = n as f64;
        if n == 1 && b < 1e10 {
            report.push(n, Condition::III, format!("b_1 = {b} < 10^10"));
        }
        if !(a / (2.0 * nf).sqrt() <= b && b <= a / nf.sqrt()) {
            report.push(
                n,
                Condition::IV,
                format!("need a_{n}/sqrt(2n) <= b_{n} <= a_{n}/sqrt(n); b_{n} = {b}, a_{n} = {a}"),
            );
        }
        if n < self.levels() {
            let next = self.b(n + 1) as f64;
            if next < 2f64.powi(n as i32) * b {
                report.push(
                    n,
                    Condition::V,
                    format!(
                        "b_{} = {next} < 2^{n} b_{n} = {}",
                        n + 1,
                        2f64.powi(n as i32) * b
                    ),
                );
            }
        }
        if b <= 40.0 * a_prev {
            report.push(
                n,
                Condition::VI,
                format!("b_{n} = {b} <= 40 a_{} = {}", n - 1, 40.0 * a_prev),
            );
        }
        let quarter = b * nf.powf(0.25);
        if !(100.0 * b < beta && beta <= quarter && quarter < 2.0 * beta && 2.0 * beta < a / 10.0) {
            report.push(
                n,
                Condition::VIII,
                format!("need 100 b_{n} < beta_{n} <= b_{n} n^(1/4) < 2 beta_{n} < a_{n}/10 with b = {b}, beta = {beta}, a = {a}"),
            );
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "(i)")]
    I,
    #[serde(rename = "(ii)")]
    II,
    #[serde(rename = "(iii)")]
    III,
    #[serde(rename = "(iv)")]
    IV,
    #[serde(rename = "(v)")]
    V,
    #[serde(rename = "(vi)")]
    VI,
    #[serde(rename = "(viii)")]
    VIII,
    #[serde(rename = "ordering")]
    Ordering,
    #[serde(rename = "desk:beta>=11b")]
    DeskBetaSpacing,
    #[serde(rename = "desk:8beta<=a")]
    DeskTileFit,
    #[serde(rename = "eta>0")]
    EtaPositive,
    #[serde(rename = "K>0")]
    KPositive,
}

impl Condition {
    pub fn label(self) -> &'static str {
        match self {
            Condition::I => "(i)",
            Condition::II => "(ii)",
            Condition::III => "(iii)",
            Condition::IV => "(iv)",
            Condition::V => "(v)",
            Condition::VI => "(vi)",
            Condition::VIII => "(viii)",
            Condition::Ordering => "ordering",
            Condition::DeskBetaSpacing => "desk:beta>=11b",
            Condition::DeskTileFit => "desk:8beta<=a",
            Condition::EtaPositive => "eta>0",
            Condition::KPositive => "K>0",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub level: usize,
    pub condition: Condition,
    pub detail: String,
}

/// Outcome of [`ParameterSchedule::validate`]. A schedule is valid when
/// `violations` is empty; `unverified` and `warnings` never make it invalid.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub unverified: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    fn push(&mut self, level: usize, condition: Condition, detail: String) {
        self.violations.push(Violation {
            level,
            condition,
            detail,
        });
    }

    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn violates(&self, condition: Condition) -> bool {
        self.violations.iter().any(|v| v.condition == condition)
    }
}
