//! Dynamic state of the four-bus system.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::network::{ExpLoad, NetworkModel, BUS_LOAD};
use super::params::SystemParams;

/// One-axis synchronous generator, all quantities on the system base.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorState {
    pub delta: f64,
    pub domega: f64,
    pub eq_prime: f64,
    /// Mechanical power (pu, system base).
    pub p_m: f64,
    pub h: f64,
    pub d: f64,
    pub xd: f64,
    pub xq: f64,
    pub xd_prime: f64,
    pub td0_prime: f64,
    pub online: bool,
}

impl GeneratorState {
    pub fn from_params(p: &SystemParams, p_g_mw: f64) -> Self {
        let g = &p.generator;
        let z = p.gen_z_factor();
        Self {
            delta: 0.0,
            domega: 0.0,
            eq_prime: 1.0,
            p_m: p_g_mw / p.base.s_base_mva,
            h: g.h / z,
            d: g.d / z,
            xd: g.xd * z,
            xq: g.xq * z,
            xd_prime: g.xd_prime * z,
            td0_prime: g.td0_prime,
            online: g.online,
        }
    }

    /// Field current (pu) for a given d-axis stator current.
    pub fn field_current(&self, id: f64) -> f64 {
        self.eq_prime + (self.xd - self.xd_prime) * id
    }
}

/// AVR with ceiling and the timed-integrator over-excitation limiter.
#[derive(Debug, Clone, PartialEq)]
pub struct AvrOxlState {
    /// AVR output state (field voltage before OXL enforcement).
    pub efd: f64,
    pub v_ref: f64,
    pub ka: f64,
    pub ta: f64,
    pub efd_max: f64,
    pub x_oxl: f64,
    pub if_lim: f64,
    pub oxl_gain: f64,
    pub oxl_threshold: f64,
    pub oxl_active: bool,
    pub oxl_enabled: bool,
}

impl AvrOxlState {
    pub fn from_params(p: &SystemParams) -> Self {
        Self {
            efd: 1.0,
            v_ref: 1.0,
            ka: p.avr.ka,
            ta: p.avr.ta,
            efd_max: p.avr.efd_max,
            x_oxl: 0.0,
            if_lim: p.oxl.if_lim,
            oxl_gain: p.oxl.gain,
            oxl_threshold: p.oxl.threshold,
            oxl_active: false,
            oxl_enabled: p.oxl.enabled,
        }
    }

    /// Field voltage applied to the machine for an AVR state `efd`.
    pub fn applied_efd(&self, efd: f64) -> f64 {
        let e = efd.clamp(0.0, self.efd_max);
        if self.oxl_active {
            e.min(self.if_lim)
        } else {
            e
        }
    }
}

/// First-order slip model of the aggregate induction motor.
#[derive(Debug, Clone, PartialEq)]
pub struct MotorState {
    pub slip: f64,
    pub rr: f64,
    pub xm: f64,
    pub hm: f64,
    pub s_rated_mva: f64,
    /// Constant mechanical torque on the motor base.
    pub t_m: f64,
}

impl MotorState {
    pub fn from_params(p: &SystemParams) -> Self {
        Self {
            slip: 0.0,
            rr: p.motor.rr,
            xm: p.motor.xm,
            hm: p.motor.hm,
            s_rated_mva: p.motor.s_rated_mva,
            t_m: 0.0,
        }
    }

    pub fn active(&self) -> bool {
        self.t_m > 0.0
    }

    /// Electrical torque (motor base) from the steady-state equivalent circuit.
    pub fn torque(&self, slip: f64, vm: f64) -> f64 {
        let s = slip.max(0.0);
        vm * vm * self.rr * s / (self.rr * self.rr + s * s * self.xm * self.xm)
    }

    /// Shunt admittance seen by the network on the system base.
    pub fn admittance(&self, slip: f64, s_base_mva: f64) -> Complex64 {
        if !self.active() {
            return Complex64::new(0.0, 0.0);
        }
        let s = slip.max(0.0);
        let scale = self.s_rated_mva / s_base_mva;
        Complex64::new(s, 0.0) / Complex64::new(self.rr, s * self.xm) * scale
    }

    /// Slip at which the electrical torque peaks.
    pub fn peak_slip(&self) -> f64 {
        self.rr / self.xm
    }
}

/// Composite load: exponential static component plus the motor share.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadModel {
    pub p_total_mw: f64,
    pub r_motor: f64,
    pub q_over_p: f64,
    pub alpha: f64,
    pub beta: f64,
    pub v0: f64,
}

impl LoadModel {
    pub fn from_params(p: &SystemParams, p_total_mw: f64, r_motor: f64) -> Self {
        Self {
            p_total_mw,
            r_motor: r_motor.clamp(0.0, 1.0),
            q_over_p: p.load.q_over_p,
            alpha: p.load.alpha,
            beta: p.load.beta,
            v0: p.load.v0,
        }
    }

    /// Exponential component: the non-motor share of active and reactive demand.
    pub fn exp_load(&self, s_base_mva: f64) -> ExpLoad {
        let p0 = (1.0 - self.r_motor) * self.p_total_mw / s_base_mva;
        ExpLoad {
            bus: BUS_LOAD,
            p0,
            q0: p0 * self.q_over_p,
            alpha: self.alpha,
            beta: self.beta,
            v0: self.v0,
        }
    }

    /// Motor mechanical torque on the motor base such that the motor draws
    /// `r_motor * p_total` in steady state.
    pub fn motor_torque(&self, motor_rating_mva: f64) -> f64 {
        self.r_motor * self.p_total_mw / motor_rating_mva
    }
}

/// Discrete LTC with deadband and delay timers.
#[derive(Debug, Clone, PartialEq)]
pub struct LtcState {
    pub deadband: f64,
    pub td0: f64,
    pub td: f64,
    pub step: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub v3_ref: f64,
    /// Time spent continuously outside the deadband since the last tap move.
    pub timer: f64,
    /// True until the first move of the current excursion.
    pub first_move: bool,
}

impl LtcState {
    pub fn from_params(p: &SystemParams) -> Self {
        Self {
            deadband: p.ltc.deadband,
            td0: p.ltc.td0,
            td: p.ltc.td,
            step: p.ltc.step,
            r_min: p.ltc.r_min,
            r_max: p.ltc.r_max,
            v3_ref: p.ltc.v3_ref,
            timer: 0.0,
            first_move: true,
        }
    }

    pub fn delay(&self) -> f64 {
        if self.first_move {
            self.td0
        } else {
            self.td
        }
    }
}

/// Instability mechanisms distinguished by the detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mechanism {
    GeneratorLoss = 1,
    MotorStall = 2,
}

impl Mechanism {
    pub const ALL: [Mechanism; 2] = [Mechanism::GeneratorLoss, Mechanism::MotorStall];

    pub fn index(self) -> usize {
        self as usize - 1
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            Mechanism::GeneratorLoss => "gen",
            Mechanism::MotorStall => "motor",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstabilityEvent {
    pub mechanism: Mechanism,
    pub time: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    LineTrip(String),
    TapStep { from: f64, to: f64 },
    OxlActivated,
    OxlReleased,
    ReferenceChange { from: f64, to: f64 },
    Instability(InstabilityEvent),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent {
    pub time: f64,
    pub kind: EventKind,
}

impl SimEvent {
    pub fn label(&self) -> String {
        match &self.kind {
            EventKind::LineTrip(b) => format!("trip:{b}"),
            EventKind::TapStep { to, .. } => format!("tap:{to:.4}"),
            EventKind::OxlActivated => "oxl_on".into(),
            EventKind::OxlReleased => "oxl_off".into(),
            EventKind::ReferenceChange { to, .. } => format!("v3ref:{to:.4}"),
            EventKind::Instability(ev) => format!("instability:{}", ev.mechanism.label()),
        }
    }
}

/// A scheduled branch outage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSpec {
    pub time: f64,
    pub branch: String,
}

/// Serde adapter for `Option<DisturbanceSpec>`: no disturbance is written
/// as `false`, so a saved configuration reloads to the same value instead
/// of falling back to the default outage.
pub mod optional_disturbance {
    use super::DisturbanceSpec;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Flag(bool),
        Spec(DisturbanceSpec),
    }

    pub fn serialize<S: Serializer>(v: &Option<DisturbanceSpec>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(d) => Repr::Spec(d.clone()).serialize(s),
            None => Repr::Flag(false).serialize(s),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DisturbanceSpec>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Spec(spec) => Ok(Some(spec)),
            Repr::Flag(false) => Ok(None),
            Repr::Flag(true) => Err(serde::de::Error::custom(
                "disturbance = true is ambiguous; give a table with time and branch",
            )),
        }
    }
}

/// Full dynamic state of the test system.
#[derive(Debug, Clone)]
pub struct SimState {
    pub time: f64,
    pub generator: GeneratorState,
    pub exciter: AvrOxlState,
    pub motor: MotorState,
    pub ltc: LtcState,
    pub load: LoadModel,
    pub network: NetworkModel,
    pub voltages: [Complex64; 4],
    pub events: Vec<SimEvent>,
}
