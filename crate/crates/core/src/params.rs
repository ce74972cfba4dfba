//! Cell constants and the monitored aging-parameter vector.

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector4;
use serde::{Deserialize, Serialize};

use crate::error::{FdiError, Result};

/// Faraday constant [C/mol].
pub const FARADAY: f64 = 96_485.332_12;
/// Universal gas constant [J/(mol K)].
pub const GAS_CONSTANT: f64 = 8.314_462_618;

/// Electrochemical constants of one cell. Everything except the four
/// monitored parameters in [`ThetaVector`].
///
/// Currents handled by the model are densities over the cross-sectional
/// area `area` [A/m²]; positive current discharges the cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CellParameters {
    /// Cross-sectional area [m²].
    pub area: f64,
    /// Maximum lithium concentration, positive electrode [mol/m³].
    pub c_s_max_pos: f64,
    /// Maximum lithium concentration, negative electrode [mol/m³].
    pub c_s_max_neg: f64,
    /// Electrolyte concentration [mol/m³].
    pub c_e: f64,
    /// Faraday constant [C/mol].
    #[serde(default = "default_faraday")]
    pub faraday: f64,
    /// Side-reaction exchange current density [A/m²]. Zero disables the side reaction.
    pub j_sr0: f64,
    /// Reaction rate constant, positive electrode [A m^2.5 mol^-1.5].
    pub k_n_pos: f64,
    /// Reaction rate constant, negative electrode [A m^2.5 mol^-1.5].
    pub k_n_neg: f64,
    /// Electrode thicknesses [m].
    pub l_pos: f64,
    pub l_neg: f64,
    /// Particle radii [m].
    pub r_pos: f64,
    pub r_neg: f64,
    /// Universal gas constant [J/(mol K)].
    #[serde(default = "default_gas_constant")]
    pub r_gas: f64,
    /// Reference temperature [K].
    pub t_ref: f64,
    /// Apparent transfer coefficient [-].
    pub alpha0: f64,
    /// Particle volume ratio [-], strictly inside (0, 1).
    pub beta: f64,
    /// Active material volume fraction of the positive electrode [-].
    pub eps_s_pos: f64,
    /// Side-reaction equilibrium potential [V].
    pub u_sr: f64,
    /// Sampling time [s].
    pub t_s: f64,
}

fn default_faraday() -> f64 {
    FARADAY
}

fn default_gas_constant() -> f64 {
    GAS_CONSTANT
}

impl Default for CellParameters {
    /// Graphite/LCO cell at 25 °C sampled at 1 s.
    fn default() -> Self {
        CellParameters {
            area: 0.66,
            c_s_max_pos: 51_555.0,
            c_s_max_neg: 30_555.0,
            c_e: 1_000.0,
            faraday: FARADAY,
            j_sr0: 0.0,
            k_n_pos: 2.0e-6,
            k_n_neg: 4.0e-6,
            l_pos: 90.0e-6,
            l_neg: 100.0e-6,
            r_pos: 5.0e-6,
            r_neg: 10.0e-6,
            r_gas: GAS_CONSTANT,
            t_ref: 298.15,
            alpha0: 0.5,
            beta: 0.4,
            eps_s_pos: 0.6,
            u_sr: 0.42,
            t_s: 1.0,
        }
    }
}

impl CellParameters {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("area", self.area),
            ("c_s_max_pos", self.c_s_max_pos),
            ("c_s_max_neg", self.c_s_max_neg),
            ("c_e", self.c_e),
            ("faraday", self.faraday),
            ("k_n_pos", self.k_n_pos),
            ("k_n_neg", self.k_n_neg),
            ("l_pos", self.l_pos),
            ("l_neg", self.l_neg),
            ("r_pos", self.r_pos),
            ("r_neg", self.r_neg),
            ("r_gas", self.r_gas),
            ("t_ref", self.t_ref),
            ("alpha0", self.alpha0),
            ("t_s", self.t_s),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(FdiError::config(format!(
                    "cell parameter {name} must be finite and > 0, got {value}"
                )));
            }
        }
        if !(self.j_sr0.is_finite() && self.j_sr0 >= 0.0) {
            return Err(FdiError::config(format!(
                "j_sr0 must be finite and >= 0, got {}",
                self.j_sr0
            )));
        }
        if !self.u_sr.is_finite() {
            return Err(FdiError::config("u_sr must be finite"));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(FdiError::domain(format!(
                "beta must lie in (0, 1), got {}",
                self.beta
            )));
        }
        if !(self.eps_s_pos > 0.0 && self.eps_s_pos <= 1.0) {
            return Err(FdiError::config(format!(
                "eps_s_pos must lie in (0, 1], got {}",
                self.eps_s_pos
            )));
        }
        Ok(())
    }

    /// Thermal voltage scaled by the transfer coefficient, `R_g T / (alpha0 F)` [V].
    pub fn kinetic_voltage(&self) -> f64 {
        self.r_gas * self.t_ref / (self.alpha0 * self.faraday)
    }

    /// `1 / (beta (1 - beta))`
    pub fn a1(&self) -> f64 {
        1.0 / (self.beta * (1.0 - self.beta))
    }

    /// `1 / (c_s_max⁻ F L⁻)`
    pub fn b1(&self) -> f64 {
        1.0 / (self.c_s_max_neg * self.faraday * self.l_neg)
    }

    pub fn b2(&self) -> f64 {
        self.b1() / (1.0 - self.beta)
    }

    /// `R⁻ / (3 L⁻)`
    pub fn d1(&self) -> f64 {
        self.r_neg / (3.0 * self.l_neg)
    }

    /// Lithium-balance slope coefficient (negative by construction).
    pub fn rho(&self) -> f64 {
        -self.c_s_max_neg * self.l_neg / (self.c_s_max_pos * self.l_pos * self.eps_s_pos)
    }

    /// Lithium-balance offset coefficient [1/mol].
    pub fn sigma(&self) -> f64 {
        1.0 / (self.c_s_max_pos * self.l_pos * self.eps_s_pos * self.area)
    }

    /// Nominal capacity [Ah]: charge moved between negative-electrode SOC 0 and 1.
    pub fn nominal_capacity_ah(&self, theta: &ThetaVector) -> f64 {
        theta.eps_s_neg * self.l_neg * self.c_s_max_neg * self.faraday * self.area / 3600.0
    }

    /// Current density [A/m²] corresponding to a 1C rate.
    pub fn one_c_density(&self, theta: &ThetaVector) -> f64 {
        self.nominal_capacity_ah(theta) / self.area
    }
}

/// Index of one monitored parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Param {
    EpsSNeg,
    RF,
    GS,
    NLi,
}

impl Param {
    pub const ALL: [Param; 4] = [Param::EpsSNeg, Param::RF, Param::GS, Param::NLi];

    pub fn index(self) -> usize {
        match self {
            Param::EpsSNeg => 0,
            Param::RF => 1,
            Param::GS => 2,
            Param::NLi => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Param> {
        Param::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Param::EpsSNeg => "eps_s_neg",
            Param::RF => "R_f",
            Param::GS => "g_s",
            Param::NLi => "n_Li",
        }
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Param {
    type Err = FdiError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "eps_s_neg" | "eps_s" | "eps" => Ok(Param::EpsSNeg),
            "r_f" | "rf" => Ok(Param::RF),
            "g_s" | "gs" => Ok(Param::GS),
            "n_li" | "nli" => Ok(Param::NLi),
            other => Err(FdiError::config(format!(
                "unknown parameter '{other}' (expected eps_s_neg, R_f, g_s or n_Li)"
            ))),
        }
    }
}

impl TryFrom<String> for Param {
    type Error = FdiError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Param> for String {
    fn from(p: Param) -> String {
        p.name().to_string()
    }
}

/// The four monitored aging parameters `[eps_s⁻, R_f, g_s, n_Li]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThetaVector {
    /// Negative active material volume fraction [-].
    pub eps_s_neg: f64,
    /// Film resistance [Ω m²].
    pub r_f: f64,
    /// Inverse diffusion time constant [1/s].
    pub g_s: f64,
    /// Moles of cyclable lithium [mol].
    pub n_li: f64,
}

impl Default for ThetaVector {
    fn default() -> Self {
        ThetaVector {
            eps_s_neg: 0.6,
            r_f: 0.01,
            g_s: 5.0e-3,
            n_li: 2.0,
        }
    }
}

impl ThetaVector {
    pub fn new(eps_s_neg: f64, r_f: f64, g_s: f64, n_li: f64) -> Self {
        ThetaVector {
            eps_s_neg,
            r_f,
            g_s,
            n_li,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for p in Param::ALL {
            let v = self.get(p);
            if !(v.is_finite() && v > 0.0) {
                return Err(FdiError::domain(format!("{p} must be finite and > 0, got {v}")));
            }
        }
        if self.eps_s_neg > 1.0 {
            return Err(FdiError::domain(format!(
                "eps_s_neg must be <= 1, got {}",
                self.eps_s_neg
            )));
        }
        Ok(())
    }

    pub fn get(&self, p: Param) -> f64 {
        match p {
            Param::EpsSNeg => self.eps_s_neg,
            Param::RF => self.r_f,
            Param::GS => self.g_s,
            Param::NLi => self.n_li,
        }
    }

    pub fn set(&mut self, p: Param, value: f64) {
        match p {
            Param::EpsSNeg => self.eps_s_neg = value,
            Param::RF => self.r_f = value,
            Param::GS => self.g_s = value,
            Param::NLi => self.n_li = value,
        }
    }

    /// Copy with parameter `p` scaled by `1 + delta_rel`.
    pub fn perturbed(&self, p: Param, delta_rel: f64) -> Self {
        let mut out = *self;
        out.set(p, self.get(p) * (1.0 + delta_rel));
        out
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.eps_s_neg, self.r_f, self.g_s, self.n_li)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        ThetaVector::new(v[0], v[1], v[2], v[3])
    }
}
