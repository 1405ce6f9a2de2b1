use std::io::{self, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use super::{read_text, write_bytes, IoError};
use crate::funnel::{Funnel, FunnelDiagnostics};
use crate::lqr::ReferenceTrajectory;
use crate::validation::McReport;

pub const TRAJECTORY_SCHEMA: &str = "sosfunnel.trajectory/1";
pub const FUNNEL_SCHEMA: &str = "sosfunnel.funnel/1";
pub const MC_SCHEMA: &str = "sosfunnel.mc-report/1";

/// Pretty printing with every float as `d.dddddddddddddddde±x`.
struct Canonical<'a>(PrettyFormatter<'a>);

impl Formatter for Canonical<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

fn has_null(v: &serde_json::Value) -> bool {
    match v {
        serde_json::Value::Null => true,
        serde_json::Value::Array(a) => a.iter().any(has_null),
        serde_json::Value::Object(o) => o.values().any(has_null),
        _ => false,
    }
}

/// The canonical byte form used by every `save_*` function. Absent options
/// are omitted rather than written as `null`, so a `null` can only come from
/// a non-finite float and is refused.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<Vec<u8>, serde_json::Error> {
    if has_null(&serde_json::to_value(value)?) {
        return Err(serde::ser::Error::custom("non-finite number cannot be stored"));
    }
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Canonical(PrettyFormatter::with_indent(b"  ")));
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(out)
}

fn save<T: Serialize>(value: &T, path: &Path) -> Result<(), IoError> {
    let bytes = to_canonical_json(value).map_err(|e| IoError::schema(path, "", e.to_string()))?;
    write_bytes(path, &bytes)
}

fn parse<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T, IoError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let fail = |field: String, e: serde_json::Error| {
        let suffix = format!(" at line {} column {}", e.line(), e.column());
        let message = e.to_string();
        IoError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            field,
            message: message.strip_suffix(&suffix).unwrap_or(&message).to_string(),
        }
    };
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let field = e.path().to_string();
        fail(field, e.into_inner())
    })?;
    de.end().map_err(|e| fail(".".into(), e))?;
    Ok(value)
}

/// Parses the document after checking its `schema_version`.
fn parse_versioned<T: DeserializeOwned>(path: &Path, expected: &'static str) -> Result<T, IoError> {
    #[derive(Deserialize)]
    struct Header {
        schema_version: String,
    }
    let text = read_text(path)?;
    let header: Header = parse(path, &text)?;
    if header.schema_version != expected {
        return Err(IoError::Version {
            path: path.to_path_buf(),
            found: header.schema_version,
            expected,
        });
    }
    parse(path, &text)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryFile {
    schema_version: String,
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    controls: Vec<Vec<f64>>,
}

pub fn save_trajectory(traj: &ReferenceTrajectory, path: &Path) -> Result<(), IoError> {
    save(
        &TrajectoryFile {
            schema_version: TRAJECTORY_SCHEMA.into(),
            times: traj.times.clone(),
            states: traj.states.clone(),
            controls: traj.controls.clone(),
        },
        path,
    )
}

pub fn load_trajectory(path: &Path) -> Result<ReferenceTrajectory, IoError> {
    let f: TrajectoryFile = parse_versioned(path, TRAJECTORY_SCHEMA)?;
    strictly_increasing(path, &f.times)?;
    rows_of_width(path, "states", &f.states, f.states.first().map_or(0, Vec::len))?;
    rows_of_width(path, "controls", &f.controls, f.controls.first().map_or(0, Vec::len))?;
    ReferenceTrajectory::new(f.times, f.states, f.controls).map_err(|e| IoError::schema(path, "", e.to_string()))
}

fn strictly_increasing(path: &Path, times: &[f64]) -> Result<(), IoError> {
    match times.windows(2).position(|w| !(w[1] > w[0])) {
        Some(k) => Err(IoError::schema(
            path,
            format!("times[{}]", k + 1),
            "times not strictly increasing",
        )),
        None => Ok(()),
    }
}

fn rows_of_width(path: &Path, name: &str, rows: &[Vec<f64>], width: usize) -> Result<(), IoError> {
    match rows.iter().position(|r| r.len() != width) {
        Some(k) => Err(IoError::schema(
            path,
            format!("{name}[{k}]"),
            format!("has {} entries, expected {width}", rows[k].len()),
        )),
        None => Ok(()),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FunnelFile {
    schema_version: String,
    times: Vec<f64>,
    rho: Vec<f64>,
    #[serde(rename = "P")]
    p: Vec<Vec<Vec<f64>>>,
    x_nominal: Vec<Vec<f64>>,
    diagnostics: FunnelDiagnostics,
}

pub fn save_funnel(funnel: &Funnel, path: &Path) -> Result<(), IoError> {
    funnel.validate().map_err(|m| IoError::schema(path, "", m))?;
    let p = funnel
        .p
        .iter()
        .map(|m| m.row_iter().map(|r| r.iter().copied().collect()).collect())
        .collect();
    save(
        &FunnelFile {
            schema_version: FUNNEL_SCHEMA.into(),
            times: funnel.times.clone(),
            rho: funnel.rho.clone(),
            p,
            x_nominal: funnel.x_nominal.clone(),
            diagnostics: funnel.diagnostics.clone(),
        },
        path,
    )
}

pub fn load_funnel(path: &Path) -> Result<Funnel, IoError> {
    let f: FunnelFile = parse_versioned(path, FUNNEL_SCHEMA)?;
    let len = f.times.len();
    if len == 0 {
        return Err(IoError::schema(path, "times", "empty funnel"));
    }
    strictly_increasing(path, &f.times)?;
    for (name, l) in [("rho", f.rho.len()), ("P", f.p.len()), ("x_nominal", f.x_nominal.len())] {
        if l != len {
            return Err(IoError::schema(path, name, format!("{l} entries for {len} times")));
        }
    }
    if let Some(k) = f.rho.iter().position(|r| !(*r > 0.0)) {
        return Err(IoError::schema(
            path,
            format!("rho[{k}]"),
            format!("{} is not positive", f.rho[k]),
        ));
    }
    let n = f.x_nominal[0].len();
    rows_of_width(path, "x_nominal", &f.x_nominal, n)?;
    let mut p = Vec::with_capacity(len);
    for (k, rows) in f.p.iter().enumerate() {
        if rows.len() != n {
            return Err(IoError::schema(
                path,
                format!("P[{k}]"),
                format!("has {} rows, expected {n}", rows.len()),
            ));
        }
        rows_of_width(path, &format!("P[{k}]"), rows, n)?;
        let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        let asym = (&m - m.transpose()).amax();
        if asym > 1e-12 * m.amax() {
            return Err(IoError::schema(
                path,
                format!("P[{k}]"),
                format!("not symmetric (max |P - Pᵀ| = {asym:e})"),
            ));
        }
        p.push(m);
    }
    Ok(Funnel {
        times: f.times,
        rho: f.rho,
        p,
        x_nominal: f.x_nominal,
        diagnostics: f.diagnostics,
    })
}

#[derive(Serialize, Deserialize)]
struct McFile {
    schema_version: String,
    #[serde(flatten)]
    report: McReport,
}

/// The wall-clock time is not stored, so reports are reproducible.
pub fn save_mc_report(report: &McReport, path: &Path) -> Result<(), IoError> {
    save(
        &McFile {
            schema_version: MC_SCHEMA.into(),
            report: report.clone(),
        },
        path,
    )
}

pub fn load_mc_report(path: &Path) -> Result<McReport, IoError> {
    let f: McFile = parse_versioned(path, MC_SCHEMA)?;
    let r = f.report;
    let len = r.times.len();
    if r.rho_mc.len() != len || r.violations_per_step.len() != len {
        return Err(IoError::schema(
            path,
            "rho_mc",
            format!("per-step series do not match {len} times"),
        ));
    }
    if r.violations_per_step.iter().sum::<usize>() != r.violations {
        return Err(IoError::schema(path, "violations", "does not equal the per-step total"));
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_carry_seventeen_digits() {
        let s = String::from_utf8(to_canonical_json(&vec![0.1, -2.5e-300, 0.0]).unwrap()).unwrap();
        assert!(s.contains("1.0000000000000001e-1"), "{s}");
        assert!(s.contains("-2.5000000000000000e-300"), "{s}");
        let back: Vec<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, vec![0.1, -2.5e-300, 0.0]);
    }

    #[test]
    fn non_finite_is_refused() {
        assert!(to_canonical_json(&vec![f64::NAN]).is_err());
        assert!(to_canonical_json(&vec![f64::INFINITY]).is_err());
    }
}
