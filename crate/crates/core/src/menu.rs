//! The discretized experiment space: Bloch-vector constellations, product
//! states, product POVMs, the full and reference menus, and the gate-error
//! deformation.
//!
//! Angle convention: polar angle `phi` from +z, azimuth `theta`, single-qubit
//! state |psi(phi, theta)> = cos(phi/2)|0> + e^{i theta} sin(phi/2)|1> with
//! |0> the spin-up sigma_z eigenstate, so the Bloch vector is
//! (sin phi cos theta, sin phi sin theta, cos phi). Experiments carry their
//! defining angles so menu files round-trip bit-exactly.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{pauli_x, pauli_y, pauli_z, ComplexMatrix};

/// Polar angle of the diagonal constellation points: arccos(1/sqrt(3)).
pub fn chi() -> f64 {
    (1.0 / 3f64.sqrt()).acos()
}

/// Real 3-vector on (or inside) the Bloch sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlochVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BlochVector {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    /// Unit vector at polar angle `phi`, azimuth `theta`.
    pub fn from_angles(phi: f64, theta: f64) -> Self {
        Self {
            x: phi.sin() * theta.cos(),
            y: phi.sin() * theta.sin(),
            z: phi.cos(),
        }
    }

    /// (phi, theta) with phi in [0, pi], theta in [0, 2 pi); theta = 0 on the
    /// poles. Defined for any norm; only the direction matters.
    pub fn to_angles(&self) -> (f64, f64) {
        let r = self.norm();
        if r == 0.0 {
            return (0.0, 0.0);
        }
        let phi = (self.z / r).clamp(-1.0, 1.0).acos();
        let mut theta = self.y.atan2(self.x);
        if theta < 0.0 {
            theta += 2.0 * PI;
        }
        if self.x == 0.0 && self.y == 0.0 {
            theta = 0.0;
        }
        (phi, theta)
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::new(c * self.x, c * self.y, c * self.z)
    }

    pub fn neg(&self) -> Self {
        self.scaled(-1.0)
    }

    /// I + v . sigma as a 2x2 complex matrix.
    fn one_plus_dot_sigma(&self) -> ComplexMatrix {
        let mut m = ComplexMatrix::identity(2);
        m = m
            .add(&pauli_x().scale(C64::new(self.x, 0.0)))
            .unwrap()
            .add(&pauli_y().scale(C64::new(self.y, 0.0)))
            .unwrap()
            .add(&pauli_z().scale(C64::new(self.z, 0.0)))
            .unwrap();
        m
    }
}

/// One probe configuration: product preparation, product POVM, duration.
///
/// Preparations may be contracted (norm < 1, gate-error menus); measurement
/// axes stay unit-norm with a separate contraction factor applied inside the
/// POVM construction so the elements remain a valid POVM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub id: usize,
    /// (phi, theta) per qubit for the preparation.
    pub prep_angles: [(f64, f64); 2],
    /// (phi, theta) per qubit for the measurement axes.
    pub meas_angles: [(f64, f64); 2],
    pub t: f64,
    /// Bloch contraction of the preparations, 1.0 when ideal.
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub prep_scale: f64,
    /// Bloch contraction of the measurement axes inside the POVM, 1.0 ideal.
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub meas_scale: f64,
}

fn one() -> f64 {
    1.0
}

#[allow(clippy::trivially_copy_pass_by_ref)]
fn is_one(v: &f64) -> bool {
    *v == 1.0
}

impl Experiment {
    /// Preparation Bloch vectors (contracted when gate error is applied).
    pub fn prep_vectors(&self) -> (BlochVector, BlochVector) {
        let a = BlochVector::from_angles(self.prep_angles[0].0, self.prep_angles[0].1)
            .scaled(self.prep_scale);
        let b = BlochVector::from_angles(self.prep_angles[1].0, self.prep_angles[1].1)
            .scaled(self.prep_scale);
        (a, b)
    }

    /// Measurement axes (always unit norm).
    pub fn meas_axes(&self) -> (BlochVector, BlochVector) {
        (
            BlochVector::from_angles(self.meas_angles[0].0, self.meas_angles[0].1),
            BlochVector::from_angles(self.meas_angles[1].0, self.meas_angles[1].1),
        )
    }

    /// Initial density matrix.
    pub fn state(&self) -> Result<ComplexMatrix> {
        let (v1, v2) = self.prep_vectors();
        product_state(&v1, &v2)
    }

    /// The four POVM elements, outcome order (++, +-, -+, --) in the
    /// (qubit-1 sign, qubit-2 sign) labels.
    pub fn povm(&self) -> Result<[ComplexMatrix; 4]> {
        let (a1, a2) = self.meas_axes();
        for a in [&a1, &a2] {
            if (a.norm() - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidAxis { norm: a.norm() });
            }
        }
        Ok(povm_from_scaled_axes(
            &a1.scaled(self.meas_scale),
            &a2.scaled(self.meas_scale),
        ))
    }
}

/// How a menu was generated; stored in menu files so they reload faithfully.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MenuProvenance {
    pub generator: String,
    pub times: Vec<f64>,
    #[serde(default)]
    pub eps_prep: f64,
    #[serde(default)]
    pub eps_meas: f64,
}

/// Indexed finite set of experiments; the discretized design space.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentMenu {
    pub experiments: Vec<Experiment>,
    pub provenance: MenuProvenance,
}

impl ExperimentMenu {
    pub fn len(&self) -> usize {
        self.experiments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experiments.is_empty()
    }

    pub fn get(&self, id: usize) -> Result<&Experiment> {
        self.experiments
            .get(id)
            .filter(|e| e.id == id)
            .ok_or(Error::UnknownExperiment(id))
    }

    /// Distinct probe times, in first-appearance order.
    pub fn times(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for e in &self.experiments {
            if !out.iter().any(|t| t.to_bits() == e.t.to_bits()) {
                out.push(e.t);
            }
        }
        out
    }
}

/// The 26 unit vectors with components proportional to (a, b, c),
/// a, b, c in {-1, 0, +1}, not all zero, in the reference listing order:
/// poles first and last, rings of constant polar angle in between.
pub fn constellation26() -> Vec<BlochVector> {
    constellation26_angles()
        .into_iter()
        .map(|(phi, theta)| BlochVector::from_angles(phi, theta))
        .collect()
}

/// (phi, theta) pairs of the constellation in listing order.
pub fn constellation26_angles() -> Vec<(f64, f64)> {
    let x = chi();
    let mut rows: Vec<(f64, Vec<f64>)> = Vec::new();
    rows.push((0.0, vec![0.0]));
    rows.push((PI / 4.0, vec![0.0, PI / 2.0, PI, 3.0 * PI / 2.0]));
    rows.push((x, vec![PI / 4.0, 3.0 * PI / 4.0, 5.0 * PI / 4.0, 7.0 * PI / 4.0]));
    rows.push((
        PI / 2.0,
        vec![
            0.0,
            PI / 4.0,
            PI / 2.0,
            3.0 * PI / 4.0,
            PI,
            5.0 * PI / 4.0,
            3.0 * PI / 2.0,
            7.0 * PI / 4.0,
        ],
    ));
    rows.push((PI - x, vec![PI / 4.0, 3.0 * PI / 4.0, 5.0 * PI / 4.0, 7.0 * PI / 4.0]));
    rows.push((3.0 * PI / 4.0, vec![0.0, PI / 2.0, PI, 3.0 * PI / 2.0]));
    rows.push((PI, vec![0.0]));
    rows.into_iter()
        .flat_map(|(phi, thetas)| thetas.into_iter().map(move |th| (phi, th)))
        .collect()
}

/// The 13 measurement axes: the constellation deduplicated under antipodal
/// equivalence v ~ -v. The canonical representative of each pair is the
/// member with lexicographically larger (z, y, x); axes are listed in the
/// order their equivalence class first appears in the constellation.
pub fn axes13() -> Vec<BlochVector> {
    axes13_angles()
        .into_iter()
        .map(|(phi, theta)| BlochVector::from_angles(phi, theta))
        .collect()
}

/// (phi, theta) pairs of the canonical axes.
pub fn axes13_angles() -> Vec<(f64, f64)> {
    let tol = 1e-12;
    let lex_ge = |a: &BlochVector, b: &BlochVector| {
        if (a.z - b.z).abs() > tol {
            return a.z > b.z;
        }
        if (a.y - b.y).abs() > tol {
            return a.y > b.y;
        }
        a.x >= b.x
    };
    let mut out: Vec<(f64, f64)> = Vec::new();
    let mut reps: Vec<BlochVector> = Vec::new();
    for (phi, theta) in constellation26_angles() {
        let v = BlochVector::from_angles(phi, theta);
        let seen = reps
            .iter()
            .any(|r| (r.x - v.x).abs() < tol && (r.y - v.y).abs() < tol && (r.z - v.z).abs() < tol
                || (r.x + v.x).abs() < tol && (r.y + v.y).abs() < tol && (r.z + v.z).abs() < tol);
        if seen {
            continue;
        }
        if lex_ge(&v, &v.neg()) {
            reps.push(v);
            out.push((phi, theta));
        } else {
            let n = v.neg();
            reps.push(n);
            out.push(n.to_angles());
        }
    }
    out
}

/// Product density matrix (1/4)(I + v1.sigma) (x) (I + v2.sigma) in the
/// crate's joint basis (qubit 1 least significant).
pub fn product_state(v1: &BlochVector, v2: &BlochVector) -> Result<ComplexMatrix> {
    for v in [v1, v2] {
        if v.norm() > 1.0 + 1e-12 {
            return Err(Error::InvalidState { norm: v.norm() });
        }
    }
    let q1 = v1.one_plus_dot_sigma();
    let q2 = v2.one_plus_dot_sigma();
    Ok(q2.kron(&q1).scale(C64::new(0.25, 0.0)))
}

/// The four product-POVM elements for unit measurement axes, outcome order
/// (++, +-, -+, --) labelled by the (qubit-1, qubit-2) signs.
pub fn product_povm(a1: &BlochVector, a2: &BlochVector) -> Result<[ComplexMatrix; 4]> {
    for a in [a1, a2] {
        if (a.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidAxis { norm: a.norm() });
        }
    }
    Ok(povm_from_scaled_axes(a1, a2))
}

/// POVM from possibly contracted axes (norm <= 1); elements stay PSD and
/// complete for any contraction.
fn povm_from_scaled_axes(a1: &BlochVector, a2: &BlochVector) -> [ComplexMatrix; 4] {
    let p1 = a1.one_plus_dot_sigma();
    let m1 = a1.neg().one_plus_dot_sigma();
    let p2 = a2.one_plus_dot_sigma();
    let m2 = a2.neg().one_plus_dot_sigma();
    let quarter = C64::new(0.25, 0.0);
    [
        p2.kron(&p1).scale(quarter),
        m2.kron(&p1).scale(quarter),
        p2.kron(&m1).scale(quarter),
        m2.kron(&m1).scale(quarter),
    ]
}

/// Cartesian product constellation^2 x axes^2 x times in lexicographic order
/// (prep1, prep2, axis1, axis2, t). One time gives 26*26*13*13 = 114244
/// experiments.
pub fn build_full_menu(times: &[f64]) -> Result<ExperimentMenu> {
    if times.is_empty() {
        return Err(Error::Contract("build_full_menu: times must be nonempty".into()));
    }
    let prep = constellation26_angles();
    let axes = axes13_angles();
    let mut experiments =
        Vec::with_capacity(prep.len() * prep.len() * axes.len() * axes.len() * times.len());
    let mut id = 0;
    for &p1 in &prep {
        for &p2 in &prep {
            for &a1 in &axes {
                for &a2 in &axes {
                    for &t in times {
                        experiments.push(Experiment {
                            id,
                            prep_angles: [p1, p2],
                            meas_angles: [a1, a2],
                            t,
                            prep_scale: 1.0,
                            meas_scale: 1.0,
                        });
                        id += 1;
                    }
                }
            }
        }
    }
    Ok(ExperimentMenu {
        experiments,
        provenance: MenuProvenance {
            generator: "full".into(),
            times: times.to_vec(),
            eps_prep: 0.0,
            eps_meas: 0.0,
        },
    })
}

/// The 12-configuration principal-axis reference strategy at t = 1: four
/// preparations (both up; down/up; -x/+x; up/+x) crossed with measuring both
/// qubits along z, then y, then x.
pub fn suboptimal_menu() -> ExperimentMenu {
    let preps: [[(f64, f64); 2]; 4] = [
        [(0.0, 0.0), (0.0, 0.0)],
        [(PI, 0.0), (0.0, 0.0)],
        [(-PI / 2.0, 0.0), (PI / 2.0, 0.0)],
        [(0.0, 0.0), (PI / 2.0, 0.0)],
    ];
    let meas: [(f64, f64); 3] = [(0.0, 0.0), (PI / 2.0, PI / 2.0), (PI / 2.0, 0.0)];
    let mut experiments = Vec::with_capacity(12);
    let mut id = 0;
    for &m in &meas {
        for &p in &preps {
            experiments.push(Experiment {
                id,
                prep_angles: p,
                meas_angles: [m, m],
                t: 1.0,
                prep_scale: 1.0,
                meas_scale: 1.0,
            });
            id += 1;
        }
    }
    ExperimentMenu {
        experiments,
        provenance: MenuProvenance {
            generator: "suboptimal".into(),
            times: vec![1.0],
            eps_prep: 0.0,
            eps_meas: 0.0,
        },
    }
}

/// The two-experiment configuration that is A-optimal for the reference
/// guess (F, G) = (1, 1) at t = 1. The design weights (0.2 on the first,
/// 0.8 on the second) live in the design module.
pub fn optimal_pair_menu() -> ExperimentMenu {
    let x = chi();
    let experiments = vec![
        Experiment {
            id: 0,
            prep_angles: [(3.0 * PI / 4.0, 3.0 * PI / 2.0), (x, PI / 4.0)],
            meas_angles: [(PI / 4.0, 0.0), (PI / 4.0, PI)],
            t: 1.0,
            prep_scale: 1.0,
            meas_scale: 1.0,
        },
        Experiment {
            id: 1,
            prep_angles: [(PI - x, 7.0 * PI / 4.0), (x, PI / 4.0)],
            meas_angles: [(PI / 4.0, 0.0), (x, 5.0 * PI / 4.0)],
            t: 1.0,
            prep_scale: 1.0,
            meas_scale: 1.0,
        },
    ];
    ExperimentMenu {
        experiments,
        provenance: MenuProvenance {
            generator: "optimal-pair".into(),
            times: vec![1.0],
            eps_prep: 0.0,
            eps_meas: 0.0,
        },
    }
}

/// Contract every preparation Bloch vector by (1 - eps_prep) and build every
/// POVM from axes contracted by (1 - eps_meas). Models small random gate
/// error in preparation and measurement.
pub fn apply_gate_error(
    menu: &ExperimentMenu,
    eps_prep: f64,
    eps_meas: f64,
) -> Result<ExperimentMenu> {
    for eps in [eps_prep, eps_meas] {
        if !(0.0..1.0).contains(&eps) {
            return Err(Error::GateErrorRange(eps));
        }
    }
    let mut out = menu.clone();
    for e in &mut out.experiments {
        e.prep_scale *= 1.0 - eps_prep;
        e.meas_scale *= 1.0 - eps_meas;
    }
    out.provenance.eps_prep = 1.0 - (1.0 - out.provenance.eps_prep) * (1.0 - eps_prep);
    out.provenance.eps_meas = 1.0 - (1.0 - out.provenance.eps_meas) * (1.0 - eps_meas);
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct MenuFileExperiment {
    id: usize,
    prep: [[f64; 2]; 2],
    meas: [[f64; 2]; 2],
    t: f64,
}

#[derive(Serialize, Deserialize)]
struct MenuFile {
    version: u32,
    provenance: MenuProvenance,
    experiments: Vec<MenuFileExperiment>,
}

/// Serialize a menu to the versioned JSON document. Angles are written in
/// radians; serde_json's shortest-round-trip float formatting makes the
/// write/read cycle bit-stable.
pub fn menu_to_json(menu: &ExperimentMenu) -> serde_json::Value {
    let file = MenuFile {
        version: 1,
        provenance: menu.provenance.clone(),
        experiments: menu
            .experiments
            .iter()
            .map(|e| MenuFileExperiment {
                id: e.id,
                prep: [
                    [e.prep_angles[0].0, e.prep_angles[0].1],
                    [e.prep_angles[1].0, e.prep_angles[1].1],
                ],
                meas: [
                    [e.meas_angles[0].0, e.meas_angles[0].1],
                    [e.meas_angles[1].0, e.meas_angles[1].1],
                ],
                t: e.t,
            })
            .collect(),
    };
    serde_json::to_value(file).expect("menu serialization cannot fail")
}

/// Load a menu from its JSON document, re-applying any recorded gate error.
pub fn menu_from_json(value: serde_json::Value) -> Result<ExperimentMenu> {
    let file: MenuFile = serde_json::from_value(value)?;
    if file.version != 1 {
        return Err(Error::MenuFormat(format!(
            "unsupported menu version {}",
            file.version
        )));
    }
    let prep_scale = 1.0 - file.provenance.eps_prep;
    let meas_scale = 1.0 - file.provenance.eps_meas;
    let mut experiments = Vec::with_capacity(file.experiments.len());
    for (k, e) in file.experiments.into_iter().enumerate() {
        if e.id != k {
            return Err(Error::MenuFormat(format!(
                "non-contiguous experiment id {} at position {k}",
                e.id
            )));
        }
        experiments.push(Experiment {
            id: e.id,
            prep_angles: [(e.prep[0][0], e.prep[0][1]), (e.prep[1][0], e.prep[1][1])],
            meas_angles: [(e.meas[0][0], e.meas[0][1]), (e.meas[1][0], e.meas[1][1])],
            t: e.t,
            prep_scale,
            meas_scale,
        });
    }
    Ok(ExperimentMenu {
        experiments,
        provenance: file.provenance,
    })
}

pub fn write_menu(menu: &ExperimentMenu, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(&menu_to_json(menu))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn read_menu(path: &Path) -> Result<ExperimentMenu> {
    let text = std::fs::read_to_string(path)?;
    menu_from_json(serde_json::from_str(&text)?)
}
