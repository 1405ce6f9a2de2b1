use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{json::load_trajectory, read_text, IoError};
use crate::dynamics::LinearSystem;
use crate::funnel::SolverConfig;
use crate::registry::Registry;
use crate::scenarios::{DubinsScenario, EntryScenario, Scenario};
use crate::validation::McSettings;

/// A matrix written either as rows or as `{ diag = [...] }`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Diag { diag: Vec<f64> },
    Full(Vec<Vec<f64>>),
}

impl MatrixSpec {
    pub fn to_matrix(&self) -> Result<DMatrix<f64>, String> {
        match self {
            MatrixSpec::Diag { diag } => Ok(DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(diag))),
            MatrixSpec::Full(rows) => {
                let cols = rows.first().map_or(0, Vec::len);
                if let Some(i) = rows.iter().position(|r| r.len() != cols) {
                    return Err(format!("row {i} has {} entries, row 0 has {cols}", rows[i].len()));
                }
                Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
            }
        }
    }
}

/// TVLQR weights and the set matrices; each overrides the system default.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Weights {
    pub q: Option<MatrixSpec>,
    pub r: Option<MatrixSpec>,
    pub qf: Option<MatrixSpec>,
    pub m1: Option<MatrixSpec>,
    pub u: Option<MatrixSpec>,
    /// Goal set for backward sweeps; defaults to `m1`.
    pub goal: Option<MatrixSpec>,
}

/// `ẋ = A x + B u + E w` with the reference read from `trajectory`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalSystem {
    pub a: MatrixSpec,
    pub b: MatrixSpec,
    #[serde(default)]
    pub e: Option<MatrixSpec>,
}

/// One run: system, weights, solver and Monte Carlo settings, seed and
/// output directory. Relative paths resolve against the file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: String,
    pub seed: u64,
    #[serde(default)]
    pub trajectory: Option<PathBuf>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub weights: Weights,
    /// Overrides on top of the system's solver defaults.
    #[serde(default)]
    pub solver: toml::Table,
    #[serde(default)]
    pub mc: toml::Table,
    #[serde(default)]
    pub dubins: toml::Table,
    #[serde(default)]
    pub entry: toml::Table,
    #[serde(default)]
    pub external: Option<ExternalSystem>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Builds a [`Scenario`] from a run configuration.
pub trait SystemBuilder: Send + Sync {
    fn build(&self, config: &RunConfig, source: &Path) -> Result<Scenario, IoError>;
}

struct DubinsBuilder;
struct EntryBuilder;
struct ExternalBuilder;

impl SystemBuilder for DubinsBuilder {
    fn build(&self, config: &RunConfig, source: &Path) -> Result<Scenario, IoError> {
        let s: DubinsScenario = overlay(source, "dubins", &DubinsScenario::default(), &config.dubins)?;
        s.build().map_err(|e| IoError::schema(source, "dubins", e.to_string()))
    }
}

impl SystemBuilder for EntryBuilder {
    fn build(&self, config: &RunConfig, source: &Path) -> Result<Scenario, IoError> {
        let s: EntryScenario = overlay(source, "entry", &EntryScenario::default(), &config.entry)?;
        s.build().map_err(|e| IoError::schema(source, "entry", e.to_string()))
    }
}

impl SystemBuilder for ExternalBuilder {
    fn build(&self, config: &RunConfig, source: &Path) -> Result<Scenario, IoError> {
        let ext = config
            .external
            .as_ref()
            .ok_or_else(|| IoError::schema(source, "external", "system 'external' needs an [external] table"))?;
        let path = config
            .trajectory_path()
            .ok_or_else(|| IoError::schema(source, "trajectory", "system 'external' needs a trajectory file"))?;
        let traj = load_trajectory(&path)?;
        let (n, m) = (traj.state_dim(), traj.control_dim());
        let a = matrix(source, "external.a", &ext.a, (n, n))?;
        let b = matrix(source, "external.b", &ext.b, (n, m))?;
        let e = match &ext.e {
            Some(e) => {
                let e = ext_matrix(source, "external.e", e)?;
                if e.nrows() != n {
                    return Err(IoError::schema(
                        source,
                        "external.e",
                        format!("has {} rows, expected {n}", e.nrows()),
                    ));
                }
                e
            }
            None => DMatrix::zeros(n, 0),
        };
        let p = e.ncols();
        let w = &config.weights;
        let need = |name: &str, spec: &Option<MatrixSpec>, dim: usize| match spec {
            Some(s) => matrix(source, &format!("weights.{name}"), s, (dim, dim)),
            None => Err(IoError::schema(
                source,
                format!("weights.{name}"),
                "required for system 'external'",
            )),
        };
        let q = need("q", &w.q, n)?;
        let r = need("r", &w.r, m)?;
        let m1 = need("m1", &w.m1, n)?;
        let qf = match &w.qf {
            Some(s) => matrix(source, "weights.qf", s, (n, n))?,
            None => q.clone(),
        };
        let u = if p == 0 {
            DMatrix::zeros(0, 0)
        } else {
            need("u", &w.u, p)?
        };
        let model = LinearSystem::new(a, b, e).map_err(|e| IoError::schema(source, "external", e.to_string()))?;
        Ok(Scenario {
            name: "external".into(),
            model: Arc::new(model),
            traj,
            q,
            r,
            qf,
            m1,
            u,
            solver: SolverConfig::default(),
            mc: McSettings::default(),
        })
    }
}

/// The systems selectable by `system = "..."`.
pub fn systems() -> Registry<dyn SystemBuilder> {
    let mut r: Registry<dyn SystemBuilder> = Registry::new("system");
    r.register("dubins", Arc::new(DubinsBuilder));
    r.register("entry", Arc::new(EntryBuilder));
    r.register("external", Arc::new(ExternalBuilder));
    r
}

fn ext_matrix(source: &Path, field: &str, spec: &MatrixSpec) -> Result<DMatrix<f64>, IoError> {
    spec.to_matrix().map_err(|m| IoError::schema(source, field, m))
}

fn matrix(source: &Path, field: &str, spec: &MatrixSpec, dim: (usize, usize)) -> Result<DMatrix<f64>, IoError> {
    let m = ext_matrix(source, field, spec)?;
    if (m.nrows(), m.ncols()) != dim {
        return Err(IoError::schema(
            source,
            field,
            format!("is {}x{}, expected {}x{}", m.nrows(), m.ncols(), dim.0, dim.1),
        ));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(IoError::schema(source, field, "non-finite entry"));
    }
    Ok(m)
}

fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

/// `defaults` with the keys of `over` replaced, recursively.
fn overlay<T: Serialize + DeserializeOwned>(
    source: &Path,
    section: &str,
    defaults: &T,
    over: &toml::Table,
) -> Result<T, IoError> {
    let mut base = toml::Table::try_from(defaults).map_err(|e| IoError::schema(source, section, e.to_string()))?;
    merge(&mut base, over);
    toml::Value::Table(base)
        .try_into()
        .map_err(|e: toml::de::Error| IoError::schema(source, section, e.message().to_string()))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, IoError> {
        let text = read_text(path)?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        RunConfig::parse(&text, path, base)
    }

    /// Parses `text`; `source` names it in diagnostics.
    pub fn parse(text: &str, source: &Path, base_dir: PathBuf) -> Result<RunConfig, IoError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
            IoError::Parse {
                path: source.to_path_buf(),
                line,
                column,
                field: String::new(),
                message: e.message().to_string(),
            }
        })?;
        cfg.base_dir = base_dir;
        for (name, table) in [("solver", &cfg.solver), ("mc", &cfg.mc)] {
            if table.contains_key("seed") {
                return Err(IoError::schema(
                    source,
                    format!("{name}.seed"),
                    "use the top-level seed",
                ));
            }
        }
        systems()
            .get(&cfg.system)
            .map_err(|e| IoError::schema(source, "system", e.to_string()))?;
        if let Some(p) = cfg.trajectory_path() {
            if !p.is_file() {
                return Err(IoError::schema(
                    source,
                    "trajectory",
                    format!("{} does not exist", p.display()),
                ));
            }
        }
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn trajectory_path(&self) -> Option<PathBuf> {
        self.trajectory.as_deref().map(|p| self.resolve(p))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.out)
    }

    /// The fully configured scenario; `source` names the config in errors.
    pub fn scenario(&self, source: &Path) -> Result<Scenario, IoError> {
        let builder = systems()
            .get(&self.system)
            .map_err(|e| IoError::schema(source, "system", e.to_string()))?;
        let mut sc = builder.build(self, source)?;
        if self.system != "external" {
            if let Some(path) = self.trajectory_path() {
                let traj = load_trajectory(&path)?;
                if traj.state_dim() != sc.model.state_dim() || traj.control_dim() != sc.model.control_dim() {
                    return Err(IoError::schema(
                        &path,
                        "states",
                        format!(
                            "{}-state/{}-control trajectory for a {}-state/{}-control system",
                            traj.state_dim(),
                            traj.control_dim(),
                            sc.model.state_dim(),
                            sc.model.control_dim()
                        ),
                    ));
                }
                sc.traj = traj;
            }
            let (n, m, p) = (sc.model.state_dim(), sc.model.control_dim(), sc.model.disturbance_dim());
            let w = &self.weights;
            for (name, spec, dim, slot) in [
                ("q", &w.q, n, &mut sc.q),
                ("r", &w.r, m, &mut sc.r),
                ("qf", &w.qf, n, &mut sc.qf),
                ("m1", &w.m1, n, &mut sc.m1),
                ("u", &w.u, p, &mut sc.u),
            ] {
                if let Some(s) = spec {
                    *slot = matrix(source, &format!("weights.{name}"), s, (dim, dim))?;
                }
            }
        }
        sc.solver = overlay(source, "solver", &sc.solver, &self.solver)?;
        sc.mc = overlay(source, "mc", &sc.mc, &self.mc)?;
        sc.solver.seed = self.seed;
        sc.mc.seed = self.seed;
        sc.solver
            .validate()
            .map_err(|e| IoError::schema(source, "solver", e.to_string()))?;
        Ok(sc)
    }

    /// The goal set for backward sweeps.
    pub fn goal(&self, source: &Path, sc: &Scenario) -> Result<DMatrix<f64>, IoError> {
        let n = sc.model.state_dim();
        match &self.weights.goal {
            Some(s) => matrix(source, "weights.goal", s, (n, n)),
            None => Ok(sc.m1.clone()),
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig, IoError> {
        RunConfig::parse(text, Path::new("test.toml"), PathBuf::new())
    }

    #[test]
    fn seed_is_required() {
        let e = parse("system = \"dubins\"\n").unwrap_err();
        assert!(e.to_string().contains("seed"), "{e}");
    }

    #[test]
    fn unknown_system_is_rejected() {
        let e = parse("system = \"glider\"\nseed = 1\n").unwrap_err();
        assert!(e.to_string().contains("unknown system 'glider'"), "{e}");
    }

    #[test]
    fn partial_solver_table_keeps_scenario_defaults() {
        let cfg = parse("system = \"entry\"\nseed = 3\n[solver]\neps = 2e-6\n").unwrap();
        let sc = cfg.scenario(Path::new("test.toml")).unwrap();
        assert_eq!(sc.solver.eps, 2e-6);
        assert_eq!(sc.solver.taylor_degree, 1);
        assert_eq!(sc.solver.seed, 3);
        assert_eq!(sc.mc.seed, 3);
    }

    #[test]
    fn scenario_overrides_and_weights() {
        let text = "system = \"dubins\"\nseed = 0\n[dubins]\nsteps = 10\n[weights]\nr = [[2.0]]\nq = { diag = [1.0, 2.0, 3.0] }\n";
        let sc = parse(text).unwrap().scenario(Path::new("test.toml")).unwrap();
        assert_eq!(sc.traj.len(), 11);
        assert_eq!(sc.r[(0, 0)], 2.0);
        assert_eq!(sc.q[(2, 2)], 3.0);
    }

    #[test]
    fn wrong_dimension_names_the_field() {
        let text = "system = \"dubins\"\nseed = 0\n[weights]\nq = { diag = [1.0, 2.0] }\n";
        let e = parse(text).unwrap().scenario(Path::new("test.toml")).unwrap_err();
        assert!(
            e.to_string().contains("weights.q") && e.to_string().contains("expected 3x3"),
            "{e}"
        );
    }

    #[test]
    fn unknown_key_reports_line() {
        let e = parse("system = \"dubins\"\nseed = 0\nbogus = 1\n").unwrap_err();
        match e {
            IoError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn unknown_solver_key_is_rejected() {
        let e = parse("system = \"dubins\"\nseed = 0\n[solver]\nepsilon = 1.0\n")
            .unwrap()
            .scenario(Path::new("test.toml"))
            .unwrap_err();
        assert!(e.to_string().contains("epsilon"), "{e}");
    }
}
