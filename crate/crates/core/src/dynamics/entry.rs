//! Vinh's three-degree-of-freedom entry model.
//!
//! State `[r, θ, φ, V, γ, ψ]`, control `[σ]` (bank angle). Lift and drag
//! are specific accelerations `½ρV²S·C/m`, gravity is `μ/r²`, and density
//! is `exp(a0 + a1 (h - h0))`. The full disturbance vector is
//! `[6 additive rates; δa0; δa1]`; masked components are dropped from the
//! active vector seen by callers.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{check_len, Dynamics, DynamicsError};
use crate::poly::{Scalar, Taylor};

pub const ENTRY_DISTURBANCE_DIM: usize = 8;

const COS_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtmosphereModel {
    /// Log-density at `h0` [log(kg/m³)].
    pub a0: f64,
    /// Log-density slope [1/m], negative.
    pub a1: f64,
    /// Reference altitude [m].
    pub h0: f64,
}

impl AtmosphereModel {
    pub fn density(&self, h: f64) -> f64 {
        (self.a0 + self.a1 * (h - self.h0)).exp()
    }
}

/// User-supplied Coriolis terms `(C_γ, C_ψ)` for a rotating planet.
pub trait CoriolisTerms: Send + Sync {
    fn eval(&self, x: &[f64], omega: f64) -> (f64, f64);
    fn eval_taylor(&self, x: &[Taylor], omega: f64) -> (Taylor, Taylor);
}

fn default_mask() -> [bool; ENTRY_DISTURBANCE_DIM] {
    [true; ENTRY_DISTURBANCE_DIM]
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryParams {
    /// Gravitational parameter μ [m³/s²].
    pub mu: f64,
    pub planet_radius: f64,
    pub mass: f64,
    pub ref_area: f64,
    pub cl: f64,
    pub cd: f64,
    #[serde(default = "default_true")]
    pub bank_is_control: bool,
    #[serde(default)]
    pub omega_planet: f64,
    pub atmosphere: AtmosphereModel,
    /// Which of `[ṙ, θ̇, φ̇, V̇, γ̇, ψ̇, δa0, δa1]` disturbances are active.
    #[serde(default = "default_mask")]
    pub disturbance_mask: [bool; ENTRY_DISTURBANCE_DIM],
}

impl EntryParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let bad = |msg: &str| Err(DynamicsError::Params(msg.to_string()));
        if !(self.mass > 0.0) {
            return bad("mass must be positive");
        }
        if !(self.ref_area > 0.0) {
            return bad("ref_area must be positive");
        }
        if !(self.cd > 0.0) {
            return bad("cd must be positive");
        }
        if !(self.omega_planet >= 0.0) {
            return bad("omega_planet must be non-negative");
        }
        if !(self.mu > 0.0 && self.planet_radius > 0.0) {
            return bad("mu and planet_radius must be positive");
        }
        if !(self.atmosphere.a1 < 0.0) {
            return bad("atmosphere slope a1 must be negative");
        }
        if !self.bank_is_control {
            return bad("only bank-angle control is supported");
        }
        Ok(())
    }
}

#[derive(Clone)]
pub struct EntryModel {
    pub params: EntryParams,
    coriolis: Option<Arc<dyn CoriolisTerms>>,
}

impl fmt::Debug for EntryModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EntryModel")
            .field("params", &self.params)
            .field("coriolis", &self.coriolis.is_some())
            .finish()
    }
}

impl EntryModel {
    pub fn new(params: EntryParams) -> Result<Self, DynamicsError> {
        params.validate()?;
        if params.omega_planet > 0.0 {
            return Err(DynamicsError::Params(
                "omega_planet > 0 needs Coriolis terms; use EntryModel::with_coriolis".into(),
            ));
        }
        Ok(EntryModel { params, coriolis: None })
    }

    pub fn with_coriolis(params: EntryParams, terms: Arc<dyn CoriolisTerms>) -> Result<Self, DynamicsError> {
        params.validate()?;
        Ok(EntryModel {
            params,
            coriolis: Some(terms),
        })
    }

    fn coriolis_f64(&self, x: &[f64]) -> (f64, f64) {
        match &self.coriolis {
            Some(c) if self.params.omega_planet > 0.0 => c.eval(x, self.params.omega_planet),
            _ => (0.0, 0.0),
        }
    }

    fn coriolis_taylor(&self, x: &[Taylor]) -> (Taylor, Taylor) {
        match &self.coriolis {
            Some(c) if self.params.omega_planet > 0.0 => c.eval_taylor(x, self.params.omega_planet),
            _ => (x[0].lift(0.0), x[0].lift(0.0)),
        }
    }

    fn rhs<S: Scalar>(&self, x: &[S], u: &[S], w: &[S], coriolis: (S, S)) -> Result<Vec<S>, DynamicsError> {
        check_len("entry state", 6, x.len())?;
        check_len("entry control", 1, u.len())?;
        check_len("entry disturbance", self.disturbance_dim(), w.len())?;
        let p = &self.params;
        let zero = x[0].lift(0.0);
        let mut full: Vec<S> = vec![zero.clone(); ENTRY_DISTURBANCE_DIM];
        let mut it = w.iter();
        for (slot, on) in full.iter_mut().zip(&p.disturbance_mask) {
            if *on {
                *slot = it.next().expect("length checked").clone();
            }
        }

        let (r, phi, v, gamma, psi) = (&x[0], &x[2], &x[3], &x[4], &x[5]);
        let sigma = &u[0];
        if !(r.value() > 0.0) {
            return Err(DynamicsError::Domain {
                denominator: "r",
                value: r.value(),
            });
        }
        if v.value() == 0.0 || !v.value().is_finite() {
            return Err(DynamicsError::Domain {
                denominator: "V",
                value: v.value(),
            });
        }
        let cphi = phi.cos();
        if cphi.value().abs() < COS_TOL {
            return Err(DynamicsError::Domain {
                denominator: "cos(phi)",
                value: cphi.value(),
            });
        }

        let h = r.clone() + (-p.planet_radius - p.atmosphere.h0);
        let a0 = full[6].clone() + p.atmosphere.a0;
        let a1 = full[7].clone() + p.atmosphere.a1;
        let density = (a0 + a1 * h).exp();
        let q = density * v.square() * (0.5 * p.ref_area / p.mass);
        let lift = q.clone() * p.cl;
        let drag = q * p.cd;
        let rinv = r.recip();
        let g = rinv.square() * p.mu;

        let (sg, cg) = (gamma.sin(), gamma.cos());
        let (sps, cps) = (psi.sin(), psi.cos());
        let (ss, cs) = (sigma.sin(), sigma.cos());
        let vinv = v.recip();
        let v_over_r = v.clone() * rinv.clone();

        let rdot = v.clone() * sg.clone();
        let thdot = v_over_r.clone() * cg.clone() * cps.clone() / cphi.clone();
        let phdot = v_over_r.clone() * cg.clone() * sps;
        let vdot = -drag - g.clone() * sg;
        let gdot = vinv.clone() * (lift.clone() * cs - (g - v.clone() * v_over_r.clone()) * cg.clone()) + coriolis.0;
        // -(L sinσ + V²/r cos²γ cosψ tanφ)/(V cosγ), split so that the cos γ
        // factor cancels analytically in the second term.
        let side = lift * ss;
        let side_term = if cg.value().abs() < COS_TOL {
            if side.value() != 0.0 {
                return Err(DynamicsError::Domain {
                    denominator: "cos(gamma)",
                    value: cg.value(),
                });
            }
            zero.clone()
        } else {
            side * vinv / cg.clone()
        };
        let tphi = phi.sin() / cphi;
        let psdot = -side_term - v_over_r * cg * cps * tphi + coriolis.1;

        let mut out = vec![rdot, thdot, phdot, vdot, gdot, psdot];
        for (o, add) in out.iter_mut().zip(full.iter().take(6)) {
            *o = o.clone() + add.clone();
        }
        for (i, o) in out.iter().enumerate() {
            if !o.value().is_finite() {
                return Err(DynamicsError::NonFinite { component: i });
            }
        }
        Ok(out)
    }
}

impl Dynamics for EntryModel {
    fn name(&self) -> &str {
        "entry"
    }
    fn state_dim(&self) -> usize {
        6
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn disturbance_dim(&self) -> usize {
        self.params.disturbance_mask.iter().filter(|b| **b).count()
    }
    fn eval(&self, x: &[f64], u: &[f64], w: &[f64]) -> Result<Vec<f64>, DynamicsError> {
        let c = if x.len() == 6 { self.coriolis_f64(x) } else { (0.0, 0.0) };
        self.rhs(x, u, w, c)
    }
    fn eval_taylor(&self, x: &[Taylor], u: &[Taylor], w: &[Taylor]) -> Result<Vec<Taylor>, DynamicsError> {
        check_len("entry state", 6, x.len())?;
        let c = self.coriolis_taylor(x);
        self.rhs(x, u, w, c)
    }
}

/// Evaluates the entry model at one state with bank angle `bank` and the
/// active disturbance vector `w`.
pub fn vinh_derivative(
    state: &[f64; 6],
    bank: f64,
    w: &[f64],
    params: &EntryParams,
) -> Result<[f64; 6], DynamicsError> {
    let model = EntryModel::new(params.clone())?;
    let d = model.eval(state, &[bank], w)?;
    Ok([d[0], d[1], d[2], d[3], d[4], d[5]])
}
