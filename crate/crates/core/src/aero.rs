//! Blade-element aerodynamics with a two-pole indicial lag.
//!
//! Each element carries two lag states `xi_j` driven by the quasi-steady
//! angle of attack:
//!
//! ```text
//! xi_j' = (2|V|/c) (-b_j xi_j + A_j alpha_qs)
//! alpha_eff = (1 - A1 - A2) alpha_qs + b1 xi1 + b2 xi2      (clamped to ±alpha_max)
//! ```
//!
//! For a frozen `alpha_qs` the lag part `b1 xi1 + b2 xi2` rises to
//! `(A1 + A2) alpha_qs`, so `alpha_eff` follows the Jones deficiency
//! function `1 - A1 e^{-b1 s} - A2 e^{-b2 s}` in semichord time `s`.
//! Lift is `CL = CLa alpha_eff` perpendicular to the airspeed, drag is
//! `CD = CD0 + k_d CL^2` along it, both scaled by `rho |V|^2 S / 2`.
//! Element forces map to generalized forces through `Pjac^T`.

use std::f64::consts::PI;

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::multibody::{Kinematics, MultibodyModel};

/// Below this airspeed (m/s) the angle of attack is defined as zero.
pub const MIN_AIRSPEED: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct AeroParams {
    pub enabled: bool,
    /// Air density (kg/m³).
    pub rho: f64,
    /// Lift slope (1/rad).
    pub cl_alpha: f64,
    /// Stall clamp on the effective angle of attack (rad).
    pub alpha_max: f64,
    pub cd0: f64,
    pub k_d: f64,
    pub a1: f64,
    pub b1: f64,
    pub a2: f64,
    pub b2: f64,
}

impl Default for AeroParams {
    fn default() -> Self {
        AeroParams {
            enabled: true,
            rho: 1.225,
            cl_alpha: 2.0 * PI,
            alpha_max: 0.5,
            cd0: 0.05,
            k_d: 0.15,
            a1: 0.165,
            b1: 0.0455,
            a2: 0.335,
            b2: 0.3,
        }
    }
}

impl AeroParams {
    pub fn validate(&self) -> Result<(), String> {
        let all = [
            self.rho,
            self.cl_alpha,
            self.alpha_max,
            self.cd0,
            self.k_d,
            self.a1,
            self.b1,
            self.a2,
            self.b2,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err("all coefficients must be finite".into());
        }
        if self.rho < 0.0 || self.cd0 < 0.0 || self.k_d < 0.0 {
            return Err("rho, cd0 and k_d must be non-negative".into());
        }
        if self.alpha_max <= 0.0 {
            return Err("alpha_max must be positive".into());
        }
        if self.b1 <= 0.0 || self.b2 <= 0.0 {
            return Err("lag poles b1, b2 must be positive".into());
        }
        if self.a1 < 0.0 || self.a2 < 0.0 || self.a1 + self.a2 > 1.0 {
            return Err("lag gains need A1, A2 >= 0 and A1 + A2 <= 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElementGeometry {
    pub chord: f64,
    pub area: f64,
}

/// Relative flow seen by one element.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElementKinematics {
    /// Air velocity relative to the quarter-chord point (still air: `-Pjac_i q'`).
    pub airspeed: Vector3<f64>,
    pub speed: f64,
    /// Quasi-steady angle of attack in `[-pi/2, pi/2]`; positive when the
    /// flow strikes the lower (`-normal`) surface.
    pub alpha: f64,
    /// Unit lift direction (perpendicular to the airspeed), or zero when
    /// undefined.
    pub lift_dir: Vector3<f64>,
}

/// Per-element forces and their generalized counterpart `B2 u2`.
#[derive(Clone, Debug, PartialEq)]
pub struct AeroOutput {
    pub forces: Vec<Vector3<f64>>,
    pub alpha_eff: Vec<f64>,
    pub generalized: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct AeroGroundTruth {
    pub params: AeroParams,
    pub elements: Vec<ElementGeometry>,
}

/// Flow kinematics from an airspeed and the element's chord/normal axes.
pub fn flow_kinematics(
    airspeed: Vector3<f64>,
    chord: &Vector3<f64>,
    normal: &Vector3<f64>,
) -> ElementKinematics {
    let speed = airspeed.norm();
    if speed < MIN_AIRSPEED {
        return ElementKinematics {
            airspeed,
            speed,
            alpha: 0.0,
            lift_dir: Vector3::zeros(),
        };
    }
    let vc = airspeed.dot(chord);
    let vn = airspeed.dot(normal);
    // Flat plate: reversed chordwise flow sees the same incidence.
    let alpha = vn.atan2(vc.abs());
    let vhat = airspeed / speed;
    let perp = normal - vhat * normal.dot(&vhat);
    let pn = perp.norm();
    let lift_dir = if pn < 1e-12 {
        Vector3::zeros()
    } else {
        perp / pn
    };
    ElementKinematics {
        airspeed,
        speed,
        alpha,
        lift_dir,
    }
}

/// Force on one element for a given effective angle of attack (before
/// clamping).
pub fn blade_force(
    params: &AeroParams,
    area: f64,
    ek: &ElementKinematics,
    alpha_eff: f64,
) -> Vector3<f64> {
    if ek.speed < MIN_AIRSPEED {
        return Vector3::zeros();
    }
    let a = alpha_eff.clamp(-params.alpha_max, params.alpha_max);
    let q = 0.5 * params.rho * ek.speed * ek.speed * area;
    let cl = params.cl_alpha * a;
    let cd = params.cd0 + params.k_d * cl * cl;
    ek.lift_dir * (q * cl) + ek.airspeed * (q * cd / ek.speed)
}

impl AeroGroundTruth {
    pub fn new(model: &MultibodyModel) -> Self {
        let mut elements = Vec::new();
        for seg in &model.wing_segments {
            for _ in 0..seg.elements {
                elements.push(ElementGeometry {
                    chord: seg.chord,
                    area: seg.element_area(),
                });
            }
        }
        AeroGroundTruth {
            params: model.aero.clone(),
            elements,
        }
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    /// Two lag states per element, `[xi1_0, xi2_0, xi1_1, ...]`.
    pub fn n_lag(&self) -> usize {
        2 * self.elements.len()
    }

    pub fn element_kinematics(
        &self,
        kin: &Kinematics,
        qdot: &DVector<f64>,
        i: usize,
    ) -> ElementKinematics {
        let v = -kin.point_velocity(i, qdot);
        flow_kinematics(v, &kin.chord[i], &kin.normal[i])
    }

    pub fn all_kinematics(&self, kin: &Kinematics, qdot: &DVector<f64>) -> Vec<ElementKinematics> {
        (0..self.elements.len())
            .map(|i| self.element_kinematics(kin, qdot, i))
            .collect()
    }

    /// `xi'` for all elements; zero when aerodynamics is disabled.
    pub fn lag_dynamics(&self, ek: &[ElementKinematics], xi: &[f64], xidot: &mut [f64]) {
        let p = &self.params;
        for (e, geo) in self.elements.iter().enumerate() {
            if !p.enabled {
                xidot[2 * e] = 0.0;
                xidot[2 * e + 1] = 0.0;
                continue;
            }
            let rate = 2.0 * ek[e].speed / geo.chord;
            let a = ek[e].alpha;
            xidot[2 * e] = rate * (-p.b1 * xi[2 * e] + p.a1 * a);
            xidot[2 * e + 1] = rate * (-p.b2 * xi[2 * e + 1] + p.a2 * a);
        }
    }

    pub fn effective_alpha(&self, alpha_qs: f64, xi1: f64, xi2: f64) -> f64 {
        let p = &self.params;
        ((1.0 - p.a1 - p.a2) * alpha_qs + p.b1 * xi1 + p.b2 * xi2).clamp(-p.alpha_max, p.alpha_max)
    }

    /// Element forces and `B2 u2 = Pjac^T [f_0; f_1; ...]`.
    pub fn element_forces(
        &self,
        kin: &Kinematics,
        ek: &[ElementKinematics],
        xi: &[f64],
    ) -> AeroOutput {
        let n_q = kin.pjac.ncols();
        let mut forces = Vec::with_capacity(self.elements.len());
        let mut alpha_eff = Vec::with_capacity(self.elements.len());
        let mut generalized = DVector::zeros(n_q);
        for (e, geo) in self.elements.iter().enumerate() {
            let (f, a) = if self.params.enabled {
                let a = self.effective_alpha(ek[e].alpha, xi[2 * e], xi[2 * e + 1]);
                (blade_force(&self.params, geo.area, &ek[e], a), a)
            } else {
                (Vector3::zeros(), 0.0)
            };
            for k in 0..3 {
                for j in 0..n_q {
                    generalized[j] += kin.pjac[(3 * e + k, j)] * f[k];
                }
            }
            forces.push(f);
            alpha_eff.push(a);
        }
        AeroOutput {
            forces,
            alpha_eff,
            generalized,
        }
    }
}
