//! Declarative articulated-body description and its on-disk format.
//!
//! Model files are TOML with a mandatory `format = 1` field:
//!
//! ```toml
//! format = 1
//! name = "pendulum1"
//! gravity = 9.81
//!
//! [base]
//! kind = "fixed"            # fixed | planar | floating
//!
//! [[joint]]
//! name = "theta"
//! parent = "base"           # "base" or an earlier/later joint name
//! axis = [0.0, 1.0, 0.0]    # in the parent frame
//! origin = [0.0, 0.0, 0.0]  # joint position in the parent frame (m)
//! actuated = false
//! damping = 0.0             # viscous, N·m·s/rad
//! mass = 1.0                # child link (kg)
//! com = [0.0, 0.0, -1.0]    # child COM in the child frame (m)
//! inertia = [0, 0, 0, 0, 0, 0]   # ixx iyy izz ixy ixz iyz about COM (kg·m²)
//!
//! [[wing_segment]]
//! parent = "theta"
//! chord = 0.05              # m
//! span = 0.1                # m
//! root = [0.0, 0.0, 0.0]    # quarter-chord point at the segment root, parent frame
//! span_axis = [0.0, 1.0, 0.0]
//! chord_axis = [-1.0, 0.0, 0.0]   # leading edge to trailing edge
//! normal_axis = [0.0, 0.0, 1.0]
//! elements = 4
//!
//! [aero]                    # optional; see AeroParams
//! ```
//!
//! Generalized coordinates are ordered base DOFs first (`x y z roll pitch
//! yaw` for a floating base, `x z pitch` for a planar one), then passive
//! joints, then actuated joints, each group in file order.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::Deserialize;
use thiserror::Error;

use crate::aero::AeroParams;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot read model file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed model description: {0}")]
    Parse(String),
    #[error("unsupported model format {0} (expected {FORMAT_VERSION})")]
    Format(u32),
    #[error("duplicate joint name `{0}`")]
    DuplicateJoint(String),
    #[error("joint `{joint}` references unknown parent `{parent}`")]
    UnknownParent { joint: String, parent: String },
    #[error("kinematic loop through joint `{0}`")]
    KinematicLoop(String),
    #[error("link `{0}` must have positive mass")]
    NonPositiveMass(String),
    #[error("inertia of `{0}` is not positive semidefinite")]
    InertiaNotPsd(String),
    #[error("joint `{0}` has a zero-length axis")]
    ZeroAxis(String),
    #[error("wing segment {index}: {reason}")]
    WingSegment { index: usize, reason: String },
    #[error("base damping has {got} entries, base has {expected} DOFs")]
    BaseDamping { expected: usize, got: usize },
    #[error("aero parameters: {0}")]
    Aero(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseKind {
    Fixed,
    Planar,
    Floating,
}

impl BaseKind {
    pub fn dof_names(&self) -> &'static [&'static str] {
        match self {
            BaseKind::Fixed => &[],
            BaseKind::Planar => &["x", "z", "pitch"],
            BaseKind::Floating => &["x", "y", "z", "roll", "pitch", "yaw"],
        }
    }
}

/// Mass properties of one rigid link.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkInertia {
    pub mass: f64,
    /// COM offset in the link frame (m).
    pub com: Vector3<f64>,
    /// Inertia tensor about the COM, link frame (kg·m²).
    pub inertia: Matrix3<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Base {
    pub kind: BaseKind,
    pub link: LinkInertia,
    /// Viscous damping per base DOF.
    pub damping: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Joint {
    pub name: String,
    pub parent: String,
    /// Unit rotation axis in the parent frame.
    pub axis: Vector3<f64>,
    pub origin: Vector3<f64>,
    pub actuated: bool,
    pub damping: f64,
    pub link: LinkInertia,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WingSegment {
    pub parent: String,
    pub chord: f64,
    pub span: f64,
    pub root: Vector3<f64>,
    pub span_axis: Vector3<f64>,
    pub chord_axis: Vector3<f64>,
    pub normal_axis: Vector3<f64>,
    pub elements: usize,
}

impl WingSegment {
    /// Quarter-chord point of element `k`, parent frame.
    pub fn element_point(&self, k: usize) -> Vector3<f64> {
        let ds = self.span / self.elements as f64;
        self.root + self.span_axis * ((k as f64 + 0.5) * ds)
    }

    pub fn element_area(&self) -> f64 {
        self.chord * self.span / self.elements as f64
    }
}

/// Validated multibody model with its DOF partition.
#[derive(Clone, Debug, PartialEq)]
pub struct MultibodyModel {
    pub name: String,
    pub gravity: f64,
    pub base: Base,
    pub joints: Vec<Joint>,
    pub wing_segments: Vec<WingSegment>,
    pub aero: AeroParams,
    /// Position of each joint's angle in `q`.
    joint_dof: Vec<usize>,
    /// Joints sorted so parents precede children.
    topo: Vec<usize>,
    dof_names: Vec<String>,
    n_actuated: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    format: u32,
    name: Option<String>,
    gravity: Option<f64>,
    base: RawBase,
    #[serde(default)]
    joint: Vec<RawJoint>,
    #[serde(default)]
    wing_segment: Vec<RawSegment>,
    aero: Option<AeroParams>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBase {
    kind: BaseKind,
    mass: Option<f64>,
    com: Option<[f64; 3]>,
    inertia: Option<[f64; 6]>,
    damping: Option<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawJoint {
    name: String,
    parent: String,
    axis: [f64; 3],
    #[serde(default)]
    origin: [f64; 3],
    #[serde(default)]
    actuated: bool,
    #[serde(default)]
    damping: f64,
    mass: f64,
    #[serde(default)]
    com: [f64; 3],
    #[serde(default)]
    inertia: [f64; 6],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSegment {
    parent: String,
    chord: f64,
    span: f64,
    #[serde(default)]
    root: [f64; 3],
    span_axis: [f64; 3],
    chord_axis: [f64; 3],
    normal_axis: [f64; 3],
    #[serde(default = "default_elements")]
    elements: usize,
}

fn default_elements() -> usize {
    4
}

fn inertia_matrix(c: [f64; 6]) -> Matrix3<f64> {
    let [ixx, iyy, izz, ixy, ixz, iyz] = c;
    Matrix3::new(ixx, ixy, ixz, ixy, iyy, iyz, ixz, iyz, izz)
}

fn check_psd(name: &str, m: &Matrix3<f64>) -> Result<(), ModelError> {
    let eig = SymmetricEigen::new(*m);
    let scale = m.norm().max(1e-300);
    if eig.eigenvalues.iter().any(|&l| l < -1e-12 * scale) {
        return Err(ModelError::InertiaNotPsd(name.to_string()));
    }
    Ok(())
}

impl MultibodyModel {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ModelError> {
        let raw: RawModel = toml::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
        if raw.format != FORMAT_VERSION {
            return Err(ModelError::Format(raw.format));
        }
        let base_link = LinkInertia {
            mass: raw.base.mass.unwrap_or(0.0),
            com: Vector3::from(raw.base.com.unwrap_or_default()),
            inertia: inertia_matrix(raw.base.inertia.unwrap_or_default()),
        };
        let n_base = raw.base.kind.dof_names().len();
        let damping = raw.base.damping.unwrap_or_else(|| vec![0.0; n_base]);
        if damping.len() != n_base {
            return Err(ModelError::BaseDamping {
                expected: n_base,
                got: damping.len(),
            });
        }
        let base = Base {
            kind: raw.base.kind,
            link: base_link,
            damping,
        };
        let joints = raw
            .joint
            .into_iter()
            .map(|j| Joint {
                name: j.name,
                parent: j.parent,
                axis: Vector3::from(j.axis),
                origin: Vector3::from(j.origin),
                actuated: j.actuated,
                damping: j.damping,
                link: LinkInertia {
                    mass: j.mass,
                    com: Vector3::from(j.com),
                    inertia: inertia_matrix(j.inertia),
                },
            })
            .collect();
        let segments = raw
            .wing_segment
            .into_iter()
            .map(|s| WingSegment {
                parent: s.parent,
                chord: s.chord,
                span: s.span,
                root: Vector3::from(s.root),
                span_axis: Vector3::from(s.span_axis),
                chord_axis: Vector3::from(s.chord_axis),
                normal_axis: Vector3::from(s.normal_axis),
                elements: s.elements,
            })
            .collect();
        Self::new(
            raw.name.unwrap_or_else(|| "model".to_string()),
            raw.gravity.unwrap_or(9.81),
            base,
            joints,
            segments,
            raw.aero.unwrap_or_default(),
        )
    }

    /// Validates the description and fixes the DOF ordering.
    pub fn new(
        name: String,
        gravity: f64,
        base: Base,
        mut joints: Vec<Joint>,
        mut wing_segments: Vec<WingSegment>,
        aero: AeroParams,
    ) -> Result<Self, ModelError> {
        let n_base = base.kind.dof_names().len();
        if base.damping.len() != n_base {
            return Err(ModelError::BaseDamping {
                expected: n_base,
                got: base.damping.len(),
            });
        }
        if base.kind != BaseKind::Fixed && base.link.mass <= 0.0 {
            return Err(ModelError::NonPositiveMass("base".into()));
        }
        check_psd("base", &base.link.inertia)?;

        let mut index: HashMap<String, usize> = HashMap::new();
        for (i, j) in joints.iter().enumerate() {
            if j.name == "base" || index.insert(j.name.clone(), i).is_some() {
                return Err(ModelError::DuplicateJoint(j.name.clone()));
            }
        }
        for j in &joints {
            if j.link.mass.is_nan() || j.link.mass <= 0.0 {
                return Err(ModelError::NonPositiveMass(j.name.clone()));
            }
            check_psd(&j.name, &j.link.inertia)?;
            if j.parent != "base" && !index.contains_key(j.parent.as_str()) {
                return Err(ModelError::UnknownParent {
                    joint: j.name.clone(),
                    parent: j.parent.clone(),
                });
            }
        }

        // Depth-first order; a revisit on the current path is a loop.
        let mut topo = Vec::with_capacity(joints.len());
        let mut done = vec![false; joints.len()];
        for start in 0..joints.len() {
            let mut path = Vec::new();
            let mut on_path = HashSet::new();
            let mut cur = start;
            loop {
                if done[cur] {
                    break;
                }
                if !on_path.insert(cur) {
                    return Err(ModelError::KinematicLoop(joints[cur].name.clone()));
                }
                path.push(cur);
                match index.get(joints[cur].parent.as_str()) {
                    Some(&p) => cur = p,
                    None => break,
                }
            }
            for &j in path.iter().rev() {
                done[j] = true;
                topo.push(j);
            }
        }

        for j in joints.iter_mut() {
            let n = j.axis.norm();
            if n < 1e-12 {
                return Err(ModelError::ZeroAxis(j.name.clone()));
            }
            j.axis /= n;
        }

        for (i, s) in wing_segments.iter_mut().enumerate() {
            let bad = |reason: &str| ModelError::WingSegment {
                index: i,
                reason: reason.to_string(),
            };
            if s.parent != "base" && !index.contains_key(s.parent.as_str()) {
                return Err(bad(&format!("unknown parent `{}`", s.parent)));
            }
            if s.elements == 0 {
                return Err(bad("needs at least one element"));
            }
            if !(s.chord > 0.0 && s.span > 0.0) {
                return Err(bad("chord and span must be positive"));
            }
            for v in [&mut s.span_axis, &mut s.chord_axis, &mut s.normal_axis] {
                let n = v.norm();
                if n < 1e-12 {
                    return Err(bad("zero-length axis"));
                }
                *v /= n;
            }
            let ortho = s.span_axis.dot(&s.chord_axis).abs()
                + s.span_axis.dot(&s.normal_axis).abs()
                + s.chord_axis.dot(&s.normal_axis).abs();
            if ortho > 1e-9 {
                return Err(bad("span, chord and normal axes must be orthogonal"));
            }
        }
        aero.validate().map_err(ModelError::Aero)?;

        let mut dof_names: Vec<String> = base
            .kind
            .dof_names()
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut joint_dof = vec![0; joints.len()];
        for pass_actuated in [false, true] {
            for (i, j) in joints.iter().enumerate() {
                if j.actuated == pass_actuated {
                    joint_dof[i] = dof_names.len();
                    dof_names.push(j.name.clone());
                }
            }
        }
        let n_actuated = joints.iter().filter(|j| j.actuated).count();

        Ok(MultibodyModel {
            name,
            gravity,
            base,
            joints,
            wing_segments,
            aero,
            joint_dof,
            topo,
            dof_names,
            n_actuated,
        })
    }

    pub fn n_q(&self) -> usize {
        self.dof_names.len()
    }

    pub fn n_actuated(&self) -> usize {
        self.n_actuated
    }

    pub fn n_base(&self) -> usize {
        self.base.kind.dof_names().len()
    }

    pub fn dof_names(&self) -> &[String] {
        &self.dof_names
    }

    pub fn dof_index(&self, name: &str) -> Option<usize> {
        self.dof_names.iter().position(|n| n == name)
    }

    /// Index in `q` of joint `j` (file order).
    pub fn joint_dof(&self, j: usize) -> usize {
        self.joint_dof[j]
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// Joints in parent-before-child order.
    pub fn topological_order(&self) -> &[usize] {
        &self.topo
    }

    /// First index of the actuated block `q_a`.
    pub fn actuated_offset(&self) -> usize {
        self.n_q() - self.n_actuated
    }

    pub fn n_elements(&self) -> usize {
        self.wing_segments.iter().map(|s| s.elements).sum()
    }

    pub fn total_mass(&self) -> f64 {
        let base = if self.base.kind == BaseKind::Fixed {
            0.0
        } else {
            self.base.link.mass
        };
        base + self.joints.iter().map(|j| j.link.mass).sum::<f64>()
    }

    /// Viscous damping coefficient for every DOF of `q`.
    pub fn damping(&self) -> Vec<f64> {
        let mut d = self.base.damping.clone();
        d.resize(self.n_q(), 0.0);
        for (i, j) in self.joints.iter().enumerate() {
            d[self.joint_dof[i]] = j.damping;
        }
        d
    }

    /// Index of the pitch DOF when the base uses Euler angles.
    pub fn euler_pitch_index(&self) -> Option<usize> {
        match self.base.kind {
            BaseKind::Floating => Some(4),
            _ => None,
        }
    }

    /// Indices of base DOFs that are angles, wrapped to (-pi, pi].
    pub fn euler_indices(&self) -> &'static [usize] {
        match self.base.kind {
            BaseKind::Floating => &[3, 4, 5],
            BaseKind::Planar => &[2],
            BaseKind::Fixed => &[],
        }
    }
}
