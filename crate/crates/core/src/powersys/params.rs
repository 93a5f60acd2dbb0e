//! Parameter schema of the four-bus test system.
//!
//! All reactances are per unit. Machine data are given on the machine's own
//! MVA rating and converted to the system base on use. The defaults are the
//! calibrated reference set; see `README.md` for the calibration procedure.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemParams {
    pub base: BaseParams,
    pub source: SourceParams,
    pub network: NetworkParams,
    pub generator: GeneratorParams,
    pub avr: AvrParams,
    pub oxl: OxlParams,
    pub motor: MotorParams,
    pub load: LoadParams,
    pub ltc: LtcParams,
    pub detection: DetectionParams,
    pub solver: SolverParams,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            base: BaseParams::default(),
            source: SourceParams::default(),
            network: NetworkParams::default(),
            generator: GeneratorParams::default(),
            avr: AvrParams::default(),
            oxl: OxlParams::default(),
            motor: MotorParams::default(),
            load: LoadParams::default(),
            ltc: LtcParams::default(),
            detection: DetectionParams::default(),
            solver: SolverParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaseParams {
    /// System MVA base.
    pub s_base_mva: f64,
    /// Nominal voltage base (kV), informational.
    pub v_base_kv: f64,
    pub f_nominal_hz: f64,
}

impl Default for BaseParams {
    fn default() -> Self {
        Self {
            s_base_mva: 100.0,
            v_base_kv: 400.0,
            f_nominal_hz: 50.0,
        }
    }
}

/// Remote system seen from bus 1: EMF behind a reactance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceParams {
    pub emf: f64,
    pub x_th: f64,
}

impl Default for SourceParams {
    fn default() -> Self {
        Self {
            emf: 1.065,
            x_th: 0.004,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkParams {
    /// Reactance of each of the two tie circuits 1-4.
    pub x_tie: f64,
    pub r_tie: f64,
    /// Total shunt susceptance of each tie circuit.
    pub b_tie: f64,
    /// Step-up transformer 2-4 reactance on the system base.
    pub x_step_up: f64,
    /// LTC transformer 4-3 reactance on the system base.
    pub x_ltc: f64,
    /// Shunt susceptance at buses 1..4 (capacitor banks).
    pub bus_shunt_b: [f64; 4],
}

impl Default for NetworkParams {
    fn default() -> Self {
        Self {
            x_tie: 0.08,
            r_tie: 0.0,
            b_tie: 0.0,
            x_step_up: 0.02,
            x_ltc: 0.005,
            bus_shunt_b: [0.0, 0.0, 3.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorParams {
    pub s_rated_mva: f64,
    /// Inertia constant (s) on the machine rating.
    pub h: f64,
    /// Damping (pu torque / pu speed) on the machine rating.
    pub d: f64,
    pub xd: f64,
    pub xq: f64,
    pub xd_prime: f64,
    pub td0_prime: f64,
    /// Terminal voltage set point used to initialise the AVR reference.
    pub v_terminal_set: f64,
    pub online: bool,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            s_rated_mva: 700.0,
            h: 4.0,
            d: 2.0,
            xd: 2.2,
            xq: 2.0,
            xd_prime: 0.3,
            td0_prime: 7.0,
            v_terminal_set: 1.0,
            online: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AvrParams {
    pub ka: f64,
    pub ta: f64,
    pub efd_max: f64,
}

impl Default for AvrParams {
    fn default() -> Self {
        Self {
            ka: 50.0,
            ta: 0.1,
            efd_max: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OxlParams {
    /// Field-current limit (pu, equal to the field voltage sustaining it).
    pub if_lim: f64,
    /// Integration gain of the timer state.
    pub gain: f64,
    /// Timer level at which the limit is enforced (pu·s).
    pub threshold: f64,
    pub enabled: bool,
}

impl Default for OxlParams {
    fn default() -> Self {
        Self {
            if_lim: 2.8,
            gain: 1.0,
            threshold: 20.0,
            enabled: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotorParams {
    /// Fixed motor rating (MVA); the mechanical torque scales with the motor ratio.
    pub s_rated_mva: f64,
    pub rr: f64,
    /// Total leakage reactance.
    pub xm: f64,
    pub hm: f64,
}

impl Default for MotorParams {
    fn default() -> Self {
        Self {
            s_rated_mva: 650.0,
            rr: 0.02,
            xm: 0.3,
            hm: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoadParams {
    pub p_total_mw: f64,
    /// Reactive demand of the composite load as a fraction of its active demand.
    pub q_over_p: f64,
    pub alpha: f64,
    pub beta: f64,
    pub v0: f64,
}

impl Default for LoadParams {
    fn default() -> Self {
        Self {
            p_total_mw: 1500.0,
            q_over_p: 0.3,
            alpha: 1.5,
            beta: 2.5,
            v0: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LtcParams {
    pub deadband: f64,
    pub td0: f64,
    pub td: f64,
    pub step: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub v3_ref: f64,
}

impl Default for LtcParams {
    fn default() -> Self {
        Self {
            deadband: 0.01,
            td0: 20.0,
            td: 20.0,
            step: 0.01,
            r_min: 0.7,
            r_max: 1.1,
            v3_ref: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionParams {
    pub s_stall: f64,
    pub pole_slip_rad: f64,
}

impl Default for DetectionParams {
    fn default() -> Self {
        Self {
            s_stall: 0.95,
            pole_slip_rad: 2.0 * std::f64::consts::PI,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverParams {
    /// Integration step of the fast subsystem (s).
    pub h_int: f64,
    /// Power-mismatch tolerance of the network Newton solve (pu).
    pub newton_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            h_int: 0.01,
            newton_tol: 1e-11,
            max_iter: 50,
        }
    }
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("base.s_base_mva", self.base.s_base_mva),
            ("base.f_nominal_hz", self.base.f_nominal_hz),
            ("source.x_th", self.source.x_th),
            ("network.x_tie", self.network.x_tie),
            ("network.x_step_up", self.network.x_step_up),
            ("network.x_ltc", self.network.x_ltc),
            ("generator.s_rated_mva", self.generator.s_rated_mva),
            ("generator.h", self.generator.h),
            ("generator.xd_prime", self.generator.xd_prime),
            ("generator.xq", self.generator.xq),
            ("generator.td0_prime", self.generator.td0_prime),
            ("avr.ta", self.avr.ta),
            ("motor.s_rated_mva", self.motor.s_rated_mva),
            ("motor.rr", self.motor.rr),
            ("motor.xm", self.motor.xm),
            ("motor.hm", self.motor.hm),
            ("ltc.step", self.ltc.step),
            ("ltc.r_min", self.ltc.r_min),
            ("solver.h_int", self.solver.h_int),
            ("solver.newton_tol", self.solver.newton_tol),
        ];
        for (key, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{key} must be positive, got {v}")));
            }
        }
        if self.generator.xd <= self.generator.xd_prime {
            return Err(Error::Config("generator.xd must exceed generator.xd_prime".into()));
        }
        if self.generator.d < 0.0 {
            return Err(Error::Config("generator.d must be non-negative".into()));
        }
        if self.ltc.r_min >= self.ltc.r_max {
            return Err(Error::Config("ltc.r_min must be below ltc.r_max".into()));
        }
        if !(0.9..=1.1).contains(&self.ltc.v3_ref) {
            return Err(Error::Config("ltc.v3_ref must lie in [0.9, 1.1]".into()));
        }
        if self.load.alpha < 0.0 || self.load.beta < 0.0 {
            return Err(Error::Config("load exponents must be non-negative".into()));
        }
        if self.oxl.gain < 0.0 || self.oxl.threshold < 0.0 {
            return Err(Error::Config("oxl gain and threshold must be non-negative".into()));
        }
        if self.solver.max_iter == 0 {
            return Err(Error::Config("solver.max_iter must be at least 1".into()));
        }
        Ok(())
    }

    /// Machine-base to system-base impedance factor for the generator.
    pub fn gen_z_factor(&self) -> f64 {
        self.base.s_base_mva / self.generator.s_rated_mva
    }

    pub fn omega_s(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.base.f_nominal_hz
    }
}
