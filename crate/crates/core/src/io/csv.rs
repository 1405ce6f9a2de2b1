use std::path::Path;

use super::{write_bytes, IoError};
use crate::funnel::Funnel;
use crate::sampling::SampleBatch;
use crate::validation::McReport;

/// `V̇` on a grid over two state axes at one step; other coordinates and
/// the disturbance are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct VdotSlice {
    pub step: usize,
    pub axes: [usize; 2],
    /// `(u, v, V̇)` rows.
    pub points: Vec<[f64; 3]>,
}

/// Shortest representation that parses back to the same value.
fn num(v: f64) -> String {
    format!("{v:e}")
}

fn finish(path: &Path, w: csv::Writer<Vec<u8>>) -> Result<(), IoError> {
    let bytes = w
        .into_inner()
        .map_err(|e| IoError::io(path, std::io::Error::other(e.to_string())))?;
    write_bytes(path, &bytes)
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> IoError + '_ {
    move |e| IoError::io(path, std::io::Error::other(e.to_string()))
}

/// `k,t,rho,rho_mc,violations`; the Monte Carlo columns are empty without
/// a report.
pub fn write_rho_series(path: &Path, funnel: &Funnel, report: Option<&McReport>) -> Result<(), IoError> {
    if let Some(r) = report {
        if r.times != funnel.times {
            return Err(IoError::schema(
                path,
                "times",
                "report and funnel use different step grids",
            ));
        }
    }
    let err = csv_err(path);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["k", "t", "rho", "rho_mc", "violations"])
        .map_err(&err)?;
    for (k, (t, rho)) in funnel.times.iter().zip(&funnel.rho).enumerate() {
        let (mc, v) = match report {
            Some(r) => (num(r.rho_mc[k]), r.violations_per_step[k].to_string()),
            None => (String::new(), String::new()),
        };
        w.write_record([k.to_string(), num(*t), num(*rho), mc, v])
            .map_err(&err)?;
    }
    finish(path, w)
}

/// One row per `(x̄, w)` pair: `k,state_source,pair_source,x0..,w0..`.
pub fn write_samples(path: &Path, batch: &SampleBatch) -> Result<(), IoError> {
    let err = csv_err(path);
    let n = batch.states.first().map_or(0, Vec::len);
    let p = batch.pairs.first().map_or(0, |(_, w, _)| w.len());
    let mut header = vec!["k".to_string(), "state_source".into(), "pair_source".into()];
    header.extend((0..n).map(|i| format!("x{i}")));
    header.extend((0..p).map(|i| format!("w{i}")));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).map_err(&err)?;
    for (i, wv, tag) in &batch.pairs {
        let mut row = vec![
            batch.step.to_string(),
            batch.state_tags[*i].as_str().to_string(),
            tag.as_str().to_string(),
        ];
        row.extend(batch.states[*i].iter().map(|v| num(*v)));
        row.extend(wv.iter().map(|v| num(*v)));
        w.write_record(&row).map_err(&err)?;
    }
    finish(path, w)
}

/// `u,v,vdot` rows of a [`VdotSlice`].
pub fn write_vdot_slice(path: &Path, slice: &VdotSlice) -> Result<(), IoError> {
    let err = csv_err(path);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["u", "v", "vdot"]).map_err(&err)?;
    for [u, v, d] in &slice.points {
        w.write_record([num(*u), num(*v), num(*d)]).map_err(&err)?;
    }
    finish(path, w)
}
