use std::f64::consts::FRAC_PI_2;

use nalgebra::DVector;

use crate::model::{StageSystem, ROTOR_MASS};

/// Electrical and mechanical state in the (shorts-removed) stage coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct FullState {
    pub t: f64,
    /// Node voltages `Ψ̇`.
    pub psi_dot: DVector<f64>,
    /// Flux linkages `Ψ`.
    pub psi: DVector<f64>,
    pub theta_dot: DVector<f64>,
    pub theta: DVector<f64>,
}

impl FullState {
    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.psi_dot.iter().all(|x| x.is_finite())
            && self.psi.iter().all(|x| x.is_finite())
            && self.theta_dot.iter().all(|x| x.is_finite())
            && self.theta.iter().all(|x| x.is_finite())
    }

    pub fn rotor_angle(&self) -> f64 {
        self.theta[ROTOR_MASS]
    }

    /// Node-1 voltage `(Ψ̇₁α, Ψ̇₁β)`; node 1 is never shorted.
    pub fn node1_voltage(&self, stage: &StageSystem) -> (f64, f64) {
        let a = stage.local_index(0).expect("node 1 is never removed");
        (self.psi_dot[a], self.psi_dot[a + 1])
    }
}

/// Power angle in radians: angle of the rotor quadrature axis (`θ₅ + π/2`)
/// ahead of the node-1 voltage phasor. Not wrapped.
pub fn power_angle_raw(rotor_angle: f64, v1: (f64, f64)) -> f64 {
    rotor_angle + FRAC_PI_2 - v1.1.atan2(v1.0)
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_pi(x: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut y = x.rem_euclid(two_pi);
    if y > std::f64::consts::PI {
        y -= two_pi;
    }
    y
}

/// Keeps a sequence of angles continuous by choosing the `2π` branch closest
/// to the previous sample.
#[derive(Clone, Debug, Default)]
pub struct Unwrapper {
    last: Option<f64>,
}

impl Unwrapper {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn seeded(last: f64) -> Self {
        Self { last: Some(last) }
    }

    pub fn push(&mut self, raw: f64) -> f64 {
        let out = match self.last {
            None => wrap_pi(raw),
            Some(prev) => prev + wrap_pi(raw - prev),
        };
        self.last = Some(out);
        out
    }
}
