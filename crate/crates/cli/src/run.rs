use std::path::{Path, PathBuf};

use funnel_core::funnel::{inspect_stage, Funnel, FunnelError, Mode, SweepFailure};
use funnel_core::io::{
    load_funnel, load_mc_report, save_funnel, save_mc_report, write_rho_series, write_samples, write_vdot_slice,
    IoError, RunConfig, VdotSlice,
};
use funnel_core::pipeline::Pipeline;
use funnel_core::validation::{McReport, ValidationError};
use log::info;

use crate::{DemoArgs, ExportArgs, McArgs, Overrides, RunArgs};

/// Step whose samples and `V̇` slice the demos export.
const DEMO_SLICE_STEP: usize = 7;

pub enum Failure {
    Usage(String),
    Verification(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Verification(_) => 1,
            Failure::Usage(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Verification(m) => m,
        }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::Usage(e.to_string())
    }
}

struct Loaded {
    config: RunConfig,
    source: PathBuf,
    pipeline: Pipeline,
    out: PathBuf,
}

impl Loaded {
    fn funnel_path(&self, given: Option<&Path>) -> PathBuf {
        given.map_or_else(|| self.out.join("funnel.json"), Path::to_path_buf)
    }
}

fn prepare(mut config: RunConfig, source: PathBuf, o: &Overrides) -> Result<Loaded, Failure> {
    if let Some(s) = o.seed {
        config.seed = s;
    }
    let mut sc = config.scenario(&source)?;
    if let Some(m) = o.samples_multiplier {
        sc.solver.samples_multiplier = m;
    }
    if let Some(e) = o.eps {
        sc.solver.eps = e;
    }
    if let Some(d) = o.degree {
        sc.solver.taylor_degree = d;
    }
    sc.solver
        .validate()
        .map_err(|e| Failure::Usage(format!("{}: {e}", source.display())))?;
    let pipeline = Pipeline::new(sc).map_err(|e| Failure::Usage(format!("{}: {e}", source.display())))?;
    let out = o.out.clone().unwrap_or_else(|| config.out_dir());
    Ok(Loaded {
        config,
        source,
        pipeline,
        out,
    })
}

fn load(path: &Path, o: &Overrides) -> Result<Loaded, Failure> {
    prepare(RunConfig::load(path)?, path.to_path_buf(), o)
}

fn sweep(l: &mut Loaded, mode: Mode) -> Result<Funnel, Failure> {
    l.pipeline.scenario.solver.mode = mode;
    let goal = l.config.goal(&l.source, &l.pipeline.scenario)?;
    let started = std::time::Instant::now();
    match l.pipeline.sweep(&goal) {
        Ok(f) => {
            info!("funnel computed in {:.1} s", started.elapsed().as_secs_f64());
            Ok(f)
        }
        Err(SweepFailure { error, partial }) => match error {
            FunnelError::Config(_) | FunnelError::Registry(_) | FunnelError::Lqr(_) => {
                Err(Failure::Usage(error.to_string()))
            }
            _ => {
                if let Some(p) = partial.filter(|p| !p.is_empty()) {
                    let path = l.out.join("funnel.partial.json");
                    save_funnel(&p, &path)?;
                    eprintln!("partial funnel ({} slices) written to {}", p.len(), path.display());
                }
                Err(Failure::Verification(error.to_string()))
            }
        },
    }
}

fn summarize(f: &Funnel) {
    let d = &f.diagnostics;
    println!(
        "funnel: {} knots, basis {}, rank {}, {} samples/step, rho_1 = {:.6e}, rho_N = {:.6e}",
        f.len(),
        d.basis_len,
        d.rank,
        d.samples_per_step,
        f.rho[0],
        f.rho[f.len() - 1]
    );
}

fn write_funnel(l: &Loaded, f: &Funnel) -> Result<(), Failure> {
    save_funnel(f, &l.out.join("funnel.json"))?;
    write_rho_series(&l.out.join("rho.csv"), f, None)?;
    Ok(())
}

pub fn funnel(a: &RunArgs, mode: Mode) -> Result<(), Failure> {
    let mut l = load(&a.config, &a.overrides)?;
    let f = sweep(&mut l, mode)?;
    write_funnel(&l, &f)?;
    summarize(&f);
    Ok(())
}

fn mc_usage(e: ValidationError) -> Failure {
    Failure::Usage(format!("Monte Carlo: {e}"))
}

/// Runs the rollouts, writes the report and merged series, and fails on
/// any violation or domain failure.
fn check(l: &Loaded, f: &Funnel, count: Option<usize>, policy: Option<&str>) -> Result<McReport, Failure> {
    let mut settings = l.pipeline.scenario.mc.clone();
    if let Some(c) = count {
        settings.count = c;
    }
    if let Some(p) = policy {
        settings.policy = p.to_string();
    }
    let (report, c) = l.pipeline.monte_carlo(f, &settings).map_err(mc_usage)?;
    save_mc_report(&report, &l.out.join("mc_report.json"))?;
    write_rho_series(&l.out.join("rho.csv"), f, Some(&report))?;
    println!(
        "monte carlo: {} rollouts ({}), {} violations, {} domain failures, worst margin {:.6} at step {}, {:.1} s",
        report.trajectories,
        report.policy,
        report.violations,
        report.domain_failures,
        c.worst_margin,
        c.worst_step,
        report.wall_clock_s
    );
    if !c.pass {
        return Err(Failure::Verification(format!(
            "containment failed: {} violations over {} steps, worst margin {:.6} at step {}",
            report.violations, c.violating_steps, c.worst_margin, c.worst_step
        )));
    }
    if report.domain_failures > 0 {
        return Err(Failure::Verification(format!(
            "{} rollouts left the model's domain",
            report.domain_failures
        )));
    }
    Ok(report)
}

pub fn validate_mc(a: &McArgs) -> Result<(), Failure> {
    let l = load(&a.config, &a.overrides)?;
    let f = load_funnel(&l.funnel_path(a.funnel.as_deref()))?;
    check(&l, &f, a.count, a.policy.as_deref()).map(|_| ())
}

fn export_slice(l: &Loaded, f: &Funnel, k: usize, axes: [usize; 2], grid: usize, extent: f64) -> Result<(), Failure> {
    let view = inspect_stage(&l.pipeline.inputs(), f, k).map_err(|e| Failure::Usage(e.to_string()))?;
    let points = view
        .vdot_slice(axes, grid, extent)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    write_samples(&l.out.join(format!("samples_{k}.csv")), &view.batch)?;
    write_vdot_slice(
        &l.out.join(format!("vdot_{k}.csv")),
        &VdotSlice { step: k, axes, points },
    )?;
    Ok(())
}

pub fn demo(system: &str, a: &DemoArgs) -> Result<(), Failure> {
    let text = format!("system = \"{system}\"\nseed = 0\nout = \"out/{system}\"\n");
    let cwd = std::env::current_dir().map_err(|e| Failure::Usage(e.to_string()))?;
    let config = RunConfig::parse(&text, Path::new("<built-in>"), cwd)?;
    let mut l = prepare(config, PathBuf::from(format!("<built-in {system}>")), &a.overrides)?;
    let f = sweep(&mut l, Mode::Forward)?;
    write_funnel(&l, &f)?;
    summarize(&f);
    if f.len() > DEMO_SLICE_STEP + 1 {
        export_slice(&l, &f, DEMO_SLICE_STEP, [0, 1], 41, 1.5)?;
    }
    check(&l, &f, a.count, None)?;
    eprintln!("outputs in {}", l.out.display());
    Ok(())
}

pub fn export_csv(a: &ExportArgs) -> Result<(), Failure> {
    let l = load(&a.config, &a.overrides)?;
    let f = load_funnel(&l.funnel_path(a.funnel.as_deref()))?;
    let report = a.mc.as_deref().map(load_mc_report).transpose()?;
    write_rho_series(&l.out.join("rho.csv"), &f, report.as_ref())?;
    if let Some(k) = a.vdot_slice {
        export_slice(&l, &f, k, [a.axes[0], a.axes[1]], a.grid, a.extent)?;
    }
    Ok(())
}
