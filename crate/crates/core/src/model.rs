//! The coupled two-qubit model: parameters, closed-form rotating-frame
//! propagator, the time-independent generator that reproduces it, and a
//! numerically integrated oracle.
//!
//! Conventions (fixed for the whole crate):
//! - hbar = 1; F, G, delta_omega are dimensionless angular frequencies.
//! - The joint basis is {uu, ud, du, dd} with qubit 1 in the
//!   least-significant slot: basis index = 2*(qubit-2 bit) + (qubit-1 bit),
//!   spin-up = bit 0.
//! - `unitary_closed` is the propagator in the frame co-rotating with the
//!   detuning; it is a one-parameter group (U(t)U(s) = U(t+s)) generated by
//!   the time-independent `effective_hamiltonian`.
//! - Outcome statistics are evaluated in the interaction frame of the
//!   time-dependent coupling Hamiltonian, whose time-ordered propagator is
//!   `born_propagator` = diag(1, e^{2i*dw*t}, 1, 1) * unitary_closed. The two
//!   frames differ by that diagonal phase only.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::linalg::ComplexMatrix;

/// Which of (F, G, delta_omega) are estimation targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreeMask {
    pub f: bool,
    pub g: bool,
    pub delta_omega: bool,
}

impl Default for FreeMask {
    /// (F, G) free, detuning known.
    fn default() -> Self {
        Self {
            f: true,
            g: true,
            delta_omega: false,
        }
    }
}

impl FreeMask {
    pub fn count(&self) -> usize {
        self.f as usize + self.g as usize + self.delta_omega as usize
    }
}

/// Model parameter point: flip-flop strength F, Ising strength G, and the
/// fixed detuning between the two qubit frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub f: f64,
    pub g: f64,
    pub delta_omega: f64,
    #[serde(default)]
    pub free: FreeMask,
}

impl ModelParams {
    pub fn new(f: f64, g: f64, delta_omega: f64) -> Self {
        assert!(delta_omega.is_finite());
        Self {
            f,
            g,
            delta_omega,
            free: FreeMask::default(),
        }
    }

    /// Rabi frequency of the flip-flop block.
    pub fn omega(&self) -> f64 {
        (self.f * self.f + self.delta_omega * self.delta_omega).sqrt()
    }

    /// Values of the free parameters, in (F, G, delta_omega) order.
    pub fn free_values(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(3);
        if self.free.f {
            v.push(self.f);
        }
        if self.free.g {
            v.push(self.g);
        }
        if self.free.delta_omega {
            v.push(self.delta_omega);
        }
        v
    }

    /// Copy with the j-th free parameter shifted by `delta`.
    pub fn shift_free(&self, j: usize, delta: f64) -> Self {
        let mut out = *self;
        let mut k = 0;
        if self.free.f {
            if k == j {
                out.f += delta;
                return out;
            }
            k += 1;
        }
        if self.free.g {
            if k == j {
                out.g += delta;
                return out;
            }
            k += 1;
        }
        if self.free.delta_omega && k == j {
            out.delta_omega += delta;
            return out;
        }
        panic!("free parameter index {j} out of range");
    }

    /// Copy with the free parameters replaced by `values`.
    pub fn with_free_values(&self, values: &[f64]) -> Self {
        assert_eq!(values.len(), self.free.count());
        let mut out = *self;
        let mut k = 0;
        if self.free.f {
            out.f = values[k];
            k += 1;
        }
        if self.free.g {
            out.g = values[k];
            k += 1;
        }
        if self.free.delta_omega {
            out.delta_omega = values[k];
        }
        out
    }
}

/// Unitary propagator at a given parameter point and duration.
#[derive(Debug, Clone)]
pub struct Propagator {
    pub u: ComplexMatrix,
    pub t: f64,
    pub params: ModelParams,
}

/// sin(omega t)/omega, with a guarded series below |omega t| = 1e-6 to
/// handle the omega -> 0 limit smoothly.
fn sinc_omega(omega: f64, t: f64) -> f64 {
    let x = omega * t;
    if x.abs() < 1e-6 {
        t * (1.0 - x * x / 6.0 + x.powi(4) / 120.0)
    } else {
        x.sin() / omega
    }
}

/// Closed-form propagator of the coupling model.
///
/// Nonzero entries: corners e^{-iGt}; middle block
/// e^{-i(dw - G)t} [cos(Omega t) -/+ i dw sin(Omega t)/Omega] on the
/// diagonal and -i F e^{-i(dw - G)t} sin(Omega t)/Omega off it, with
/// Omega = sqrt(F^2 + dw^2). The remaining twelve entries are exactly zero.
pub fn unitary_closed(params: &ModelParams, t: f64) -> Propagator {
    assert!(t.is_finite());
    let (f, dw, g) = (params.f, params.delta_omega, params.g);
    let omega = params.omega();
    let sinc = sinc_omega(omega, t);
    let cos = (omega * t).cos();
    let corner = C64::from_polar(1.0, -g * t);
    let phase = C64::from_polar(1.0, -(dw - g) * t);
    let mut u = ComplexMatrix::zeros(4, 4);
    u[(0, 0)] = corner;
    u[(3, 3)] = corner;
    u[(1, 1)] = phase * C64::new(cos, -dw * sinc);
    u[(2, 2)] = phase * C64::new(cos, dw * sinc);
    let offd = phase * C64::new(0.0, -f * sinc);
    u[(1, 2)] = offd;
    u[(2, 1)] = offd;
    Propagator {
        u,
        t,
        params: *params,
    }
}

/// Time-independent Hermitian generator of `unitary_closed`:
/// exp(-i H t) reproduces the closed form for all t.
///
/// H = diag(G, 2 dw - G, -G, G) plus F on the middle off-diagonals.
pub fn effective_hamiltonian(params: &ModelParams) -> ComplexMatrix {
    let (f, dw, g) = (params.f, params.delta_omega, params.g);
    let mut h = ComplexMatrix::zeros(4, 4);
    h[(0, 0)] = C64::new(g, 0.0);
    h[(1, 1)] = C64::new(2.0 * dw - g, 0.0);
    h[(2, 2)] = C64::new(-g, 0.0);
    h[(3, 3)] = C64::new(g, 0.0);
    h[(1, 2)] = C64::new(f, 0.0);
    h[(2, 1)] = C64::new(f, 0.0);
    h
}

/// Fourth-order Runge-Kutta integration of dU/dt = -i H_eff U from U(0) = I.
/// Converges to `unitary_closed` as `steps` grows.
pub fn unitary_numeric(params: &ModelParams, t: f64, steps: usize) -> Propagator {
    assert!(steps >= 100, "unitary_numeric requires steps >= 100");
    let h_eff = effective_hamiltonian(params);
    let rhs = |u: &ComplexMatrix| -> ComplexMatrix {
        h_eff.matmul(u).expect("4x4").scale(C64::new(0.0, -1.0))
    };
    let mut u = ComplexMatrix::identity(4);
    let dt = t / steps as f64;
    for _ in 0..steps {
        let k1 = rhs(&u);
        let k2 = rhs(&u.add(&k1.scale(C64::new(dt / 2.0, 0.0))).unwrap());
        let k3 = rhs(&u.add(&k2.scale(C64::new(dt / 2.0, 0.0))).unwrap());
        let k4 = rhs(&u.add(&k3.scale(C64::new(dt, 0.0))).unwrap());
        let incr = k1
            .add(&k2.scale(C64::new(2.0, 0.0)))
            .unwrap()
            .add(&k3.scale(C64::new(2.0, 0.0)))
            .unwrap()
            .add(&k4)
            .unwrap()
            .scale(C64::new(dt / 6.0, 0.0));
        u = u.add(&incr).unwrap();
    }
    Propagator {
        u,
        t,
        params: *params,
    }
}

/// Propagator in the frame in which outcome statistics are computed: the
/// time-ordered evolution of the time-dependent coupling Hamiltonian, whose
/// off-diagonal carries the phase e^{2i dw t}. Equals `unitary_closed`
/// dressed with diag(1, e^{2i dw t}, 1, 1).
pub fn born_propagator(params: &ModelParams, t: f64) -> ComplexMatrix {
    let mut u = unitary_closed(params, t).u;
    let d = C64::from_polar(1.0, 2.0 * params.delta_omega * t);
    u[(1, 0)] *= d;
    u[(1, 1)] *= d;
    u[(1, 2)] *= d;
    u[(1, 3)] *= d;
    u
}
