//! Executes one configured experiment and writes its outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;
use walkforge_core::decomposition::{
    compute_stopping_times, covariance_decay_experiment, law_equality_degenerate_control,
    law_equality_experiment, smallness_experiment, split_and_clock,
};
use walkforge_core::environment::sample_offsets;
use walkforge_core::network::{
    calibrate_k, commute_identity_check, effective_resistance, export_finite_network,
    harmonic_extension, harnack_ratio, random_network_suite, Calibration, CalibrationOptions,
    Window,
};
use walkforge_core::rng::derive_seed;
use walkforge_core::stats::{
    fclt_report, heat_kernel_check, wilson_interval, FcltOptions, HeatKernelOptions, Moments,
    Statistic, TestReport,
};
use walkforge_core::walk::{batch_simulate, write_ensemble, Execution, PathRecord};
use walkforge_core::{EdgeClass, Environment, LatticePoint, OffsetSequence, ParameterSchedule};

use crate::config::{Experiment, ExperimentConfig, LoadedConfig, OffsetSpec};
use crate::error::CliError;
use crate::report::{KProvenance, KSource, Report, REPORT_SCHEMA_VERSION};

/// Tolerance for the commute-time identity on the random suite.
const COMMUTE_TOLERANCE: f64 = 1e-9;

pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub verbose: bool,
}

/// What a successful run produced.
pub struct RunSummary {
    pub report_path: PathBuf,
    /// False when the experiment itself is a validation that failed.
    pub valid: bool,
}

struct Outcome {
    result: TestReport,
    details: serde_json::Value,
    files: Vec<(String, Vec<u8>)>,
    valid: bool,
}

impl Outcome {
    fn new(result: TestReport, details: serde_json::Value) -> Self {
        Self {
            result,
            details,
            files: Vec::new(),
            valid: true,
        }
    }

    fn with_file(mut self, name: &str, bytes: Vec<u8>) -> Self {
        self.files.push((name.to_string(), bytes));
        self
    }
}

/// Schedule, environment and `K` provenance shared by the experiments.
struct Setup {
    schedule: ParameterSchedule,
    env: Environment,
    provenance: Vec<KProvenance>,
    calibrations: Vec<Calibration>,
}

pub fn run(loaded: &LoadedConfig, opts: &RunOptions) -> Result<RunSummary, CliError> {
    let cfg = &loaded.config;
    let out_dir = opts
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let log = |msg: &str| {
        if opts.verbose {
            eprintln!("walkforge: {msg}");
        }
    };
    let kind = cfg.experiment.kind();
    log(&format!("experiment {kind}, config {}", &loaded.hash[..12]));

    // Validation reports on schedules that cannot be turned into an environment.
    let mut bare_schedule = None;
    let setup = match &cfg.experiment {
        Experiment::CommuteCheck { .. } | Experiment::ValidateSchedule => None,
        _ => Some(prepare(cfg, &log)?),
    };
    let outcome = match (&cfg.experiment, &setup) {
        (
            Experiment::CommuteCheck {
                count,
                max_vertices,
            },
            _,
        ) => commute_check(cfg.seed, *count, *max_vertices)?,
        (Experiment::ValidateSchedule, _) => {
            let spec = cfg.schedule.as_ref().expect("validated: schedule present");
            let schedule = spec
                .build()
                .map_err(|e| CliError::Validation(format!("schedule: {e}")))?;
            let outcome = validate_schedule(&schedule)?;
            bare_schedule = Some(schedule);
            outcome
        }
        (exp, Some(setup)) => execute(exp, cfg.seed, setup)?,
        (_, None) => unreachable!("every other kind prepares a schedule"),
    };

    let stem = format!("{kind}-{}", &loaded.hash[..12]);
    fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::runtime(&format!("cannot create {}", out_dir.display()), e))?;
    let mut files = Vec::new();
    let mut stats_csv = Vec::new();
    write_statistics_csv(&outcome.result, &mut stats_csv)?;
    let mut outputs = vec![(format!("{stem}-statistics.csv"), stats_csv)];
    for (name, bytes) in outcome.files {
        outputs.push((format!("{stem}-{name}"), bytes));
    }
    for (name, bytes) in &outputs {
        write_file(&out_dir.join(name), bytes)?;
        files.push(name.clone());
    }

    let report = Report {
        schema_version: REPORT_SCHEMA_VERSION,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        experiment: kind.to_string(),
        config_hash: loaded.hash.clone(),
        seed: cfg.seed,
        schedule_hash: setup
            .as_ref()
            .map(|s| &s.schedule)
            .or(bare_schedule.as_ref())
            .map(|s| s.fingerprint()),
        schedule: setup.as_ref().map(|s| s.schedule.clone()).or(bare_schedule),
        offsets: setup.as_ref().map(|s| s.env.offsets().clone()),
        k_provenance: setup.map(|s| s.provenance).unwrap_or_default(),
        result: outcome.result,
        details: outcome.details,
        files,
    };
    let report_path = out_dir.join(format!("{stem}.json"));
    let mut text = serde_json::to_vec_pretty(&report)
        .map_err(|e| CliError::runtime("serialising report", e))?;
    text.push(b'\n');
    write_file(&report_path, &text)?;
    log(&format!("wrote {}", report_path.display()));
    Ok(RunSummary {
        report_path,
        valid: outcome.valid,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes)
        .map_err(|e| CliError::runtime(&format!("cannot write {}", path.display()), e))
}

/// Columns `name,value,p_value,ci_lo,ci_hi,reference,pass`.
fn write_statistics_csv(report: &TestReport, out: &mut Vec<u8>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    let io = |e| CliError::runtime("writing statistics table", e);
    w.write_record([
        "name",
        "value",
        "p_value",
        "ci_lo",
        "ci_hi",
        "reference",
        "pass",
    ])
    .map_err(io)?;
    for s in &report.statistics {
        w.write_record([
            s.name.clone(),
            s.value.to_string(),
            opt(s.p_value),
            opt(s.ci.map(|c| c[0])),
            opt(s.ci.map(|c| c[1])),
            opt(s.reference),
            s.pass.map(|p| p.to_string()).unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    w.flush()
        .map_err(|e| CliError::runtime("writing statistics table", e))?;
    Ok(())
}

fn prepare(cfg: &ExperimentConfig, log: &dyn Fn(&str)) -> Result<Setup, CliError> {
    let spec = cfg.schedule.as_ref().expect("validated: schedule present");
    let mut schedule = spec
        .build()
        .map_err(|e| CliError::Validation(format!("schedule: {e}")))?;
    let exp = &cfg.experiment;
    {
        let report = schedule
            .validate()
            .map_err(|e| CliError::Validation(format!("schedule: {e}")))?;
        if !report.is_valid() {
            let list: Vec<String> = report
                .violations
                .iter()
                .map(|v| format!("level {} {}: {}", v.level, v.condition, v.detail))
                .collect();
            return Err(CliError::Validation(format!(
                "schedule violates {}",
                list.join("; ")
            )));
        }
    }
    let levels = schedule.levels();
    if let Some(level) = exp.level() {
        if level > levels {
            return Err(CliError::Validation(format!(
                "level {level} exceeds the schedule's {levels} levels"
            )));
        }
    }
    let offsets = match &cfg.offsets {
        OffsetSpec::Sampled => sample_offsets(&schedule, derive_seed(cfg.seed, "offsets")),
        OffsetSpec::Zero => OffsetSequence::zeros(&schedule),
        OffsetSpec::Explicit(points) => OffsetSequence::new(points.clone(), &schedule)
            .map_err(|e| CliError::Validation(e.to_string()))?,
    };
    let mut provenance: Vec<KProvenance> = (1..=levels)
        .map(|n| KProvenance {
            level: n,
            value: schedule.k(n),
            source: if schedule.k(n).is_some() {
                KSource::Config
            } else {
                KSource::Unset
            },
            bracket: None,
            tolerance: None,
        })
        .collect();

    // Levels to calibrate, in increasing order: each target needs the level below.
    let needed = exp.level().unwrap_or(levels);
    let mut to_calibrate: Vec<usize> = if cfg.calibrate {
        (1..=needed).filter(|&n| schedule.k(n).is_none()).collect()
    } else {
        Vec::new()
    };
    let mut calib_opts = CalibrationOptions::default();
    if let Experiment::Calibrate {
        level,
        tolerance,
        lo,
        hi,
    } = *exp
    {
        calib_opts = CalibrationOptions { tolerance, lo, hi };
        let top = level.unwrap_or(levels);
        if top == 0 {
            return Err(CliError::Validation(
                "calibration needs a level >= 1".into(),
            ));
        }
        let mut list: Vec<usize> = (1..top).filter(|&n| schedule.k(n).is_none()).collect();
        match level {
            Some(n) => list.push(n),
            None => list = (1..=levels).collect(),
        }
        to_calibrate = list;
    }
    let mut env = Environment::new(schedule.clone(), offsets)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let mut calibrations = Vec::new();
    for n in to_calibrate {
        log(&format!("calibrating K_{n}"));
        let c = calibrate_k(&env, n, calib_opts)
            .map_err(|e| CliError::runtime(&format!("calibrating K_{n}"), e))?;
        schedule.set_k(n, c.k);
        env = env
            .with_schedule(schedule.clone())
            .map_err(|e| CliError::runtime("rebuilding environment", e))?;
        provenance[n - 1] = KProvenance {
            level: n,
            value: Some(c.k),
            source: KSource::Calibrated,
            bracket: Some(c.bracket),
            tolerance: Some(c.tolerance),
        };
        calibrations.push(c);
    }
    if !matches!(exp, Experiment::Calibrate { .. }) {
        if let Some(n) = (1..=needed).find(|&n| schedule.k(n).is_none()) {
            return Err(CliError::Validation(format!(
                "K_{n} is unset: give it in schedule.k or set \"calibrate\": true"
            )));
        }
    }
    Ok(Setup {
        schedule,
        env,
        provenance,
        calibrations,
    })
}

fn execute(exp: &Experiment, seed: u64, setup: &Setup) -> Result<Outcome, CliError> {
    let env = &setup.env;
    let sub = |label: &str| derive_seed(seed, label);
    let decomp = |e| CliError::runtime("experiment", e);
    match exp {
        Experiment::BuildEnv { level, write_tile } => build_env(env, *level, *write_tile),
        Experiment::Calibrate { .. } => calibration(&setup.calibrations),
        Experiment::Simulate {
            level,
            start,
            horizon,
            walkers,
            write_paths,
        } => simulate(
            env,
            *level,
            *start,
            *horizon,
            *walkers,
            sub("walkers"),
            *write_paths,
        ),
        Experiment::Decompose {
            level,
            start,
            horizon,
            walkers,
        } => decompose(env, *level, *start, *horizon, *walkers, sub("walkers")),
        Experiment::LawEquality {
            level,
            options,
            control_repetitions,
        } => {
            let mut result = law_equality_experiment(env, *level, options, sub("law-equality"))
                .map_err(decomp)?;
            let mut details = json!({});
            if *control_repetitions > 0 {
                let control = law_equality_degenerate_control(
                    env,
                    *level,
                    options,
                    *control_repetitions,
                    sub("law-equality-control"),
                )
                .map_err(decomp)?;
                for s in &control.statistics {
                    let mut s = s.clone();
                    s.name = format!("control/{}", s.name);
                    result.push(s);
                }
                details = json!({ "control": control });
            }
            Ok(Outcome::new(result, details))
        }
        Experiment::Smallness { level, options } => Ok(Outcome::new(
            smallness_experiment(env, *level, options, sub("smallness")).map_err(decomp)?,
            json!({}),
        )),
        Experiment::CovarianceDecay { level, options } => Ok(Outcome::new(
            covariance_decay_experiment(env, *level, options, sub("covariance-decay"))
                .map_err(decomp)?,
            json!({}),
        )),
        Experiment::Resistance { level, window } => resistance(env, *level, *window),
        Experiment::Harnack {
            level,
            window,
            margin,
        } => harnack(env, *level, *window, *margin),
        Experiment::HeatKernel {
            level,
            a,
            times,
            points,
            samples,
            smoothing,
            ci_z,
        } => {
            let opts = HeatKernelOptions {
                times: times.clone(),
                points: points.clone(),
                samples: *samples,
                smoothing: *smoothing,
                ci_z: *ci_z,
            };
            let result = heat_kernel_check(env, *level, *a, &opts, sub("heat-kernel"))
                .map_err(|e| CliError::runtime("heat kernel", e))?;
            Ok(Outcome::new(result, json!({})))
        }
        Experiment::Fclt {
            level,
            a,
            times,
            walkers,
            start,
            reference_diffusivity,
            lattice_spacing,
            ci_z,
            alpha,
        } => {
            let tmax = times.iter().cloned().fold(0.0, f64::max);
            let paths = walkers_for(env, *level, *start, a * a * tmax, *walkers, sub("walkers"))?;
            let opts = FcltOptions {
                reference_diffusivity: *reference_diffusivity,
                lattice_spacing: *lattice_spacing,
                ci_z: *ci_z,
                alpha: *alpha,
            };
            let result =
                fclt_report(&paths, *a, times, opts).map_err(|e| CliError::runtime("fclt", e))?;
            Ok(Outcome::new(result, json!({})))
        }
        Experiment::CommuteCheck { .. } | Experiment::ValidateSchedule => {
            unreachable!("handled without an environment")
        }
    }
}

fn walkers_for(
    env: &Environment,
    level: usize,
    start: LatticePoint,
    horizon: f64,
    count: u64,
    seed: u64,
) -> Result<Vec<PathRecord>, CliError> {
    batch_simulate(
        env,
        level,
        &[start],
        horizon,
        count,
        seed,
        Execution::Parallel,
    )
    .map_err(|e| CliError::runtime("simulation", e))
}

fn validate_schedule(schedule: &ParameterSchedule) -> Result<Outcome, CliError> {
    let report = schedule
        .validate()
        .map_err(|e| CliError::Validation(format!("schedule: {e}")))?;
    let mut result = TestReport::new("validate-schedule");
    result.push(
        Statistic::new("violations", report.violations.len() as f64).with_pass(report.is_valid()),
    );
    result.push(Statistic::new("unverified", report.unverified.len() as f64));
    result.push(Statistic::new("warnings", report.warnings.len() as f64));
    let mut outcome = Outcome::new(result, serde_json::to_value(&report).expect("serialisable"));
    outcome.valid = report.is_valid();
    Ok(outcome)
}

fn build_env(env: &Environment, level: usize, write_tile: bool) -> Result<Outcome, CliError> {
    let tile = env
        .enumerate_fundamental(level)
        .map_err(|e| CliError::runtime("enumerating the tile", e))?;
    let mut result = TestReport::new("build-env");
    for (name, class) in [
        ("gate_edges", EdgeClass::Gate),
        ("bar_edges", EdgeClass::Bar),
        ("unit_edges", EdgeClass::Unit),
    ] {
        result.push(Statistic::new(name, tile.count(class) as f64));
    }
    result.push(Statistic::new("side", tile.side as f64));
    let details = json!({ "level": level, "origin": tile.origin, "side": tile.side });
    let mut outcome = Outcome::new(result, details);
    if write_tile {
        let mut bytes = Vec::new();
        tile.write_csv(&mut bytes)
            .map_err(|e| CliError::runtime("writing tile", e))?;
        outcome = outcome.with_file("tile.csv", bytes);
    }
    Ok(outcome)
}

fn calibration(calibrations: &[Calibration]) -> Result<Outcome, CliError> {
    let mut result = TestReport::new("calibrate");
    let mut probes = csv::Writer::from_writer(Vec::new());
    let io = |e| CliError::runtime("writing probes", e);
    probes
        .write_record(["level", "k", "resistance"])
        .map_err(io)?;
    for c in calibrations {
        let n = c.level;
        result.push(
            Statistic::new(format!("K_{n}"), c.k)
                .with_ci(c.bracket[0], c.bracket[1])
                .with_pass(c.monotone),
        );
        result.push(Statistic::new(format!("target_resistance_{n}"), c.target));
        result.push(Statistic::new(format!("probes_{n}"), c.probes.len() as f64));
        for d in &c.subsquares {
            result.push(
                Statistic::new(format!("subsquare_{n}[{}]", d.label), d.resistance)
                    .with_reference(d.reference),
            );
        }
        for p in &c.probes {
            probes
                .write_record([n.to_string(), p.k.to_string(), p.resistance.to_string()])
                .map_err(io)?;
        }
    }
    let bytes = probes
        .into_inner()
        .map_err(|e| CliError::runtime("writing probes", e))?;
    let details = serde_json::to_value(calibrations).expect("serialisable");
    Ok(Outcome::new(result, details).with_file("probes.csv", bytes))
}

fn mean_stat(name: &str, xs: &[f64]) -> Statistic {
    let m = Moments::of(xs);
    let se = m.mean_se();
    Statistic::new(name, m.mean).with_ci(m.mean - 3.0 * se, m.mean + 3.0 * se)
}

fn simulate(
    env: &Environment,
    level: usize,
    start: LatticePoint,
    horizon: f64,
    walkers: u64,
    seed: u64,
    write_paths: bool,
) -> Result<Outcome, CliError> {
    let paths = walkers_for(env, level, start, horizon, walkers, seed)?;
    let mut result = TestReport::new("simulate");
    result.sample_sizes.insert("walkers".into(), walkers);
    let rate: Vec<f64> = paths
        .iter()
        .map(|p| p.jump_count() as f64 / horizon)
        .collect();
    let disp: Vec<[f64; 2]> = paths
        .iter()
        .map(|p| (p.final_position() - start).to_f64())
        .collect();
    result.push(mean_stat("jump_rate", &rate));
    for (c, name) in ["x", "y"].iter().enumerate() {
        let d: Vec<f64> = disp.iter().map(|v| v[c]).collect();
        let sq: Vec<f64> = d.iter().map(|v| v * v / horizon).collect();
        result.push(mean_stat(&format!("mean_displacement_{name}"), &d));
        result.push(mean_stat(&format!("msd_over_t_{name}"), &sq));
    }
    let mut table = csv::Writer::from_writer(Vec::new());
    let io = |e| CliError::runtime("writing walker table", e);
    table
        .write_record(["walker", "jumps", "final_x", "final_y"])
        .map_err(io)?;
    for (i, p) in paths.iter().enumerate() {
        let f = p.final_position();
        table
            .write_record([
                i.to_string(),
                p.jump_count().to_string(),
                f.x.to_string(),
                f.y.to_string(),
            ])
            .map_err(io)?;
    }
    let bytes = table
        .into_inner()
        .map_err(|e| CliError::runtime("writing walker table", e))?;
    let mut outcome = Outcome::new(result, json!({ "horizon": horizon, "start": start }))
        .with_file("walkers.csv", bytes);
    if write_paths {
        let mut bin = Vec::new();
        write_ensemble(&paths, &mut bin).map_err(|e| CliError::runtime("writing ensemble", e))?;
        outcome = outcome.with_file("paths.bin", bin);
    }
    Ok(outcome)
}

fn decompose(
    env: &Environment,
    level: usize,
    start: LatticePoint,
    horizon: f64,
    walkers: u64,
    seed: u64,
) -> Result<Outcome, CliError> {
    if level == 0 {
        return Err(CliError::Validation(
            "the decomposition needs level >= 1".into(),
        ));
    }
    let paths = walkers_for(env, level, start, horizon, walkers, seed)?;
    let mut table = csv::Writer::from_writer(Vec::new());
    let io = |e| CliError::runtime("writing decomposition table", e);
    table
        .write_record([
            "walker",
            "start_condition",
            "j_intervals",
            "sigma1",
            "sigma2",
            "x1_x",
            "x1_y",
            "x2_x",
            "x2_y",
        ])
        .map_err(io)?;
    let mut frac = Vec::new();
    let mut with_j = 0u64;
    let mut clock_err = 0.0f64;
    let mut mismatches = 0u64;
    for (i, p) in paths.iter().enumerate() {
        let d = compute_stopping_times(p, env, level)
            .map_err(|e| CliError::runtime("decomposition", e))?;
        let s = split_and_clock(p, &d).map_err(|e| CliError::runtime("decomposition", e))?;
        let (s1, s2) = (s.sigma1.total(), s.sigma2.total());
        clock_err = clock_err.max((s1 + s2 - horizon).abs() / horizon);
        let (x1, x2) = (s.x1.final_position(), s.x2.final_position());
        if x1 + x2 - p.start != p.final_position() {
            mismatches += 1;
        }
        if !d.v.is_empty() {
            with_j += 1;
        }
        frac.push(s1 / horizon);
        table
            .write_record([
                i.to_string(),
                d.start_condition.to_string(),
                d.v.len().to_string(),
                s1.to_string(),
                s2.to_string(),
                x1.x.to_string(),
                x1.y.to_string(),
                x2.x.to_string(),
                x2.y.to_string(),
            ])
            .map_err(io)?;
    }
    let mut result = TestReport::new("decompose");
    result.sample_sizes.insert("walkers".into(), walkers);
    result.push(mean_stat("sigma1_fraction", &frac));
    let [lo, hi] = wilson_interval(with_j, walkers, 3.0);
    result.push(Statistic::new("fraction_with_j", with_j as f64 / walkers as f64).with_ci(lo, hi));
    result.push(
        Statistic::new("max_clock_relative_error", clock_err)
            .with_reference(1e-12)
            .with_pass(clock_err <= 1e-12),
    );
    result.push(
        Statistic::new("splitting_mismatches", mismatches as f64)
            .with_reference(0.0)
            .with_pass(mismatches == 0),
    );
    let bytes = table
        .into_inner()
        .map_err(|e| CliError::runtime("writing decomposition table", e))?;
    Ok(
        Outcome::new(result, json!({ "horizon": horizon, "start": start }))
            .with_file("walkers.csv", bytes),
    )
}

fn resistance(env: &Environment, level: usize, window: Window) -> Result<Outcome, CliError> {
    let solve = |n: usize| {
        let net = export_finite_network(env, n, window)
            .map_err(|e| CliError::runtime("exporting window", e))?;
        let r = effective_resistance(&net, &window.left_column(), &window.right_column())
            .map_err(|e| CliError::runtime("resistance", e))?;
        Ok::<_, CliError>((net.vertex_count(), r))
    };
    let (vertices, r) = solve(level)?;
    let (_, flat) = solve(0)?;
    let mut result = TestReport::new("resistance");
    result
        .sample_sizes
        .insert("vertices".into(), vertices as u64);
    result.push(Statistic::new("r", r.r));
    result.push(Statistic::new("r_energy", 1.0 / r.energy).with_reference(1.0 / flat.energy));
    result.push(Statistic::new("residual", r.potential.residual));
    Ok(Outcome::new(
        result,
        json!({ "level": level, "window": window }),
    ))
}

fn harnack(
    env: &Environment,
    level: usize,
    window: Window,
    margin: i64,
) -> Result<Outcome, CliError> {
    let region: Vec<usize> = (window.y0 + margin..=window.y1 - margin)
        .flat_map(|y| {
            (window.x0 + margin..=window.x1 - margin).map(move |x| LatticePoint::new(x, y))
        })
        .map(|p| window.index(p))
        .collect();
    if region.is_empty() {
        return Err(CliError::Validation(
            "the margin leaves no interior sites".into(),
        ));
    }
    let ratio = |n: usize| {
        let net = export_finite_network(env, n, window)
            .map_err(|e| CliError::runtime("exporting window", e))?;
        let boundary = window
            .left_column()
            .into_iter()
            .map(|x| (x, 0.0))
            .chain(window.right_column().into_iter().map(|x| (x, 1.0)))
            .collect();
        let h = harmonic_extension(&net, &boundary)
            .map_err(|e| CliError::runtime("harmonic extension", e))?;
        harnack_ratio(&h.values, &region).map_err(|e| CliError::runtime("harnack ratio", e))
    };
    let mut result = TestReport::new("harnack");
    result
        .sample_sizes
        .insert("region".into(), region.len() as u64);
    result.push(Statistic::new("ratio", ratio(level)?).with_reference(ratio(0)?));
    Ok(Outcome::new(
        result,
        json!({ "level": level, "window": window, "margin": margin, "boundary": "0 on the left column, 1 on the right" }),
    ))
}

fn commute_check(seed: u64, count: usize, max_vertices: usize) -> Result<Outcome, CliError> {
    let suite = random_network_suite(derive_seed(seed, "commute-suite"), count, max_vertices);
    let mut table = csv::Writer::from_writer(Vec::new());
    let io = |e| CliError::runtime("writing commute table", e);
    table
        .write_record([
            "network",
            "vertices",
            "a1",
            "a2",
            "r",
            "forward",
            "backward",
            "relative_residual",
        ])
        .map_err(io)?;
    let mut worst = 0.0f64;
    for (i, case) in suite.iter().enumerate() {
        let c = commute_identity_check(&case.net, &case.a1, &case.a2)
            .map_err(|e| CliError::runtime(&format!("network {i}"), e))?;
        worst = worst.max(c.relative_residual);
        table
            .write_record([
                i.to_string(),
                c.vertex_count.to_string(),
                case.a1.len().to_string(),
                case.a2.len().to_string(),
                c.r.to_string(),
                c.forward.to_string(),
                c.backward.to_string(),
                c.relative_residual.to_string(),
            ])
            .map_err(io)?;
    }
    let mut result = TestReport::new("commute-check");
    result.sample_sizes.insert("networks".into(), count as u64);
    result.push(
        Statistic::new("max_relative_residual", worst)
            .with_reference(COMMUTE_TOLERANCE)
            .with_pass(worst <= COMMUTE_TOLERANCE),
    );
    let bytes = table
        .into_inner()
        .map_err(|e| CliError::runtime("writing commute table", e))?;
    Ok(Outcome::new(
        result,
        json!({ "count": count, "max_vertices": max_vertices }),
    )
    .with_file("networks.csv", bytes))
}
