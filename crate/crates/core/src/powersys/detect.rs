//! First-hit detection of short-term instability.

use super::network::BUS_GEN;
use super::state::{InstabilityEvent, Mechanism, SimState};

/// Detection thresholds and the context they are evaluated against.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryWindow {
    /// Post-disturbance reference rotor angle.
    pub delta_ref: f64,
    /// The last network/equilibrium solve failed.
    pub solve_failed: bool,
    pub s_stall: f64,
    pub pole_slip_rad: f64,
}

/// Returns the mechanism whose unsafe set the state has entered, if any.
///
/// Criteria, in priority order: rotor-angle excursion of a full turn, motor
/// slip at stall, then attribution of a failed solve (motor if its slip is
/// past the peak-torque slip, generator otherwise).
pub fn detect_instability(state: &SimState, window: &TrajectoryWindow) -> Option<InstabilityEvent> {
    let g = &state.generator;
    let m = &state.motor;
    let event = |mechanism, detail: String| {
        Some(InstabilityEvent {
            mechanism,
            time: state.time,
            detail,
        })
    };
    if g.online && (g.delta - window.delta_ref).abs() >= window.pole_slip_rad {
        return event(
            Mechanism::GeneratorLoss,
            format!("pole slip: |delta - delta_ref| = {:.3} rad", (g.delta - window.delta_ref).abs()),
        );
    }
    if m.active() && m.slip >= window.s_stall {
        return event(Mechanism::MotorStall, format!("stall: slip = {:.3}", m.slip));
    }
    if window.solve_failed {
        if m.active() && m.slip > m.peak_slip() {
            return event(
                Mechanism::MotorStall,
                format!("solve failure with slip {:.3} past peak-torque slip {:.3}", m.slip, m.peak_slip()),
            );
        }
        let detail = if state.exciter.oxl_active {
            "solve failure while field-limited".to_string()
        } else {
            format!("solve failure (V2 = {:.3})", state.voltages[BUS_GEN].norm())
        };
        return event(Mechanism::GeneratorLoss, detail);
    }
    None
}
