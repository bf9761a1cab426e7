//! Robot description and state types, config file loading, and the built-in
//! desk-scale fixtures.
//!
//! The planar model lumps the two wheels into one effective wheel of mass
//! `2 m_w` and spin inertia `2 I_w`. Body links form a serial chain rooted at
//! the wheel axle; `q[0]` is the base-link pitch from vertical and the remaining
//! entries are relative joint angles.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;
use serde::Deserialize;

use crate::error::{Error, Result};

pub const DEFAULT_GRAVITY: f64 = 9.81;

#[derive(Clone, Debug, PartialEq)]
pub struct WheelParams {
    /// Wheel radius, m.
    pub radius: f64,
    /// Mass of a single wheel, kg.
    pub mass: f64,
    /// Spin inertia of a single wheel about its axle, kg·m².
    pub inertia: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkParams {
    pub mass: f64,
    /// Joint-to-joint length, m.
    pub length: f64,
    /// Distance from the inboard joint to the link CoM along the link axis, m.
    pub com_offset: f64,
    /// Planar inertia about the link CoM, kg·m².
    pub inertia_com: f64,
    /// Viscous joint damping, N·m·s/rad.
    pub damping: f64,
    /// Symmetric torque bound, N·m.
    pub torque_limit: f64,
    pub angle_min: f64,
    pub angle_max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobotDescription {
    pub wheel: WheelParams,
    pub links: Vec<LinkParams>,
    pub gravity: f64,
}

impl RobotDescription {
    pub fn new(wheel: WheelParams, links: Vec<LinkParams>, gravity: f64) -> Result<Self> {
        let desc = Self {
            wheel,
            links,
            gravity,
        };
        desc.validate()?;
        Ok(desc)
    }

    /// Number of body links.
    pub fn n(&self) -> usize {
        self.links.len()
    }

    /// Total body mass (wheels excluded).
    pub fn body_mass(&self) -> f64 {
        self.links.iter().map(|l| l.mass).sum()
    }

    /// Translational inertia of the wheel pair seen by the heading coordinate,
    /// `2 m_w + 2 I_w / R²`.
    pub fn wheel_effective_mass(&self) -> f64 {
        let w = &self.wheel;
        2.0 * w.mass + 2.0 * w.inertia / (w.radius * w.radius)
    }

    pub fn damping(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.links.iter().map(|l| l.damping))
    }

    pub fn torque_limits(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.links.iter().map(|l| l.torque_limit))
    }

    /// Copy of the description with all joint damping removed.
    pub fn frictionless(&self) -> Self {
        let mut d = self.clone();
        for l in &mut d.links {
            l.damping = 0.0;
        }
        d
    }

    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, field: String, reason: &str) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::Validation {
                    field,
                    reason: reason.to_string(),
                })
            }
        }
        let w = &self.wheel;
        check(w.radius.is_finite() && w.radius > 0.0, "wheel.radius".into(), "must be > 0")?;
        check(w.mass.is_finite() && w.mass > 0.0, "wheel.mass".into(), "must be > 0")?;
        check(w.inertia.is_finite() && w.inertia > 0.0, "wheel.inertia".into(), "must be > 0")?;
        check(
            self.gravity.is_finite() && self.gravity >= 0.0,
            "world.gravity".into(),
            "must be finite and >= 0",
        )?;
        check(!self.links.is_empty(), "links".into(), "at least one link is required")?;
        for (i, l) in self.links.iter().enumerate() {
            let f = |name: &str| format!("links[{i}].{name}");
            check(l.mass.is_finite() && l.mass > 0.0, f("mass"), "must be > 0")?;
            check(l.length.is_finite() && l.length > 0.0, f("length"), "must be > 0")?;
            check(
                l.com_offset.is_finite() && l.com_offset >= 0.0 && l.com_offset <= l.length,
                f("com_offset"),
                "must lie in [0, length]",
            )?;
            check(l.inertia_com.is_finite() && l.inertia_com >= 0.0, f("inertia_com"), "must be >= 0")?;
            check(l.damping.is_finite() && l.damping >= 0.0, f("damping"), "must be >= 0")?;
            check(
                l.torque_limit.is_finite() && l.torque_limit > 0.0,
                f("torque_limit"),
                "must be > 0",
            )?;
            check(
                !l.angle_min.is_nan() && !l.angle_max.is_nan() && l.angle_min < l.angle_max,
                f("angle_min"),
                "must be < angle_max",
            )?;
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawDescription = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let mut indexed = Vec::with_capacity(raw.link.len());
        for (key, link) in raw.link {
            let idx: usize = key
                .parse()
                .map_err(|_| Error::Parse(format!("link section `link.{key}` is not indexed by an integer")))?;
            indexed.push((idx, link));
        }
        indexed.sort_by_key(|(i, _)| *i);
        for (expected, (got, _)) in indexed.iter().enumerate() {
            if *got != expected {
                return Err(Error::Parse(format!(
                    "link sections must be numbered 0..n without gaps; missing `link.{expected}`"
                )));
            }
        }
        let links = indexed
            .into_iter()
            .map(|(_, l)| LinkParams {
                mass: l.mass,
                length: l.length,
                com_offset: l.com_offset,
                inertia_com: l.inertia_com,
                damping: l.damping,
                torque_limit: l.torque_limit,
                angle_min: l.angle_min,
                angle_max: l.angle_max,
            })
            .collect();
        Self::new(
            WheelParams {
                radius: raw.wheel.radius,
                mass: raw.wheel.mass,
                inertia: raw.wheel.inertia,
            },
            links,
            raw.world.map_or(DEFAULT_GRAVITY, |w| w.gravity),
        )
    }

    /// Serializes to the config format read by [`load_description`].
    pub fn to_toml_string(&self) -> String {
        let mut s = String::new();
        let w = &self.wheel;
        let _ = writeln!(s, "[world]\ngravity = {:?}\n", self.gravity);
        let _ = writeln!(
            s,
            "[wheel]\nradius = {:?}\nmass = {:?}\ninertia = {:?}",
            w.radius, w.mass, w.inertia
        );
        for (i, l) in self.links.iter().enumerate() {
            let _ = writeln!(
                s,
                "\n[link.{i}]\nmass = {:?}\nlength = {:?}\ncom_offset = {:?}\ninertia_com = {:?}\n\
                 damping = {:?}\ntorque_limit = {:?}\nangle_min = {:?}\nangle_max = {:?}",
                l.mass,
                l.length,
                l.com_offset,
                l.inertia_com,
                l.damping,
                l.torque_limit,
                l.angle_min,
                l.angle_max
            );
        }
        s
    }

    /// Built-in desk-scale fixture with `n` ∈ {1, 3, 7} links. These are
    /// implementer-chosen test parameters and mirror the files under `configs/`.
    pub fn desk_scale(n: usize) -> Option<Self> {
        let wheel = WheelParams {
            radius: 0.1,
            mass: 0.5,
            inertia: 0.0025,
        };
        let link = |mass, length, com_offset, inertia_com, damping, torque_limit, limit: f64| LinkParams {
            mass,
            length,
            com_offset,
            inertia_com,
            damping,
            torque_limit,
            angle_min: -limit,
            angle_max: limit,
        };
        let links = match n {
            1 => vec![link(2.0, 0.6, 0.3, 0.06, 0.0, 20.0, 1.5)],
            3 => vec![
                link(4.0, 0.4, 0.2, 0.0533, 0.0, 30.0, 1.2),
                link(3.0, 0.35, 0.175, 0.0306, 0.05, 60.0, 2.6),
                link(1.5, 0.3, 0.15, 0.01125, 0.05, 30.0, 2.6),
            ],
            7 => vec![
                link(4.0, 0.30, 0.15, 0.03, 0.0, 30.0, 1.2),
                link(3.5, 0.25, 0.125, 0.0182, 0.05, 80.0, 2.6),
                link(3.0, 0.20, 0.10, 0.01, 0.05, 60.0, 2.6),
                link(1.5, 0.15, 0.075, 0.0028, 0.05, 40.0, 2.6),
                link(1.2, 0.10, 0.05, 0.001, 0.05, 25.0, 2.6),
                link(1.0, 0.06, 0.03, 0.0003, 0.05, 15.0, 2.6),
                link(0.8, 0.04, 0.02, 0.0001, 0.05, 8.0, 2.6),
            ],
            _ => return None,
        };
        Some(Self {
            wheel,
            links,
            gravity: DEFAULT_GRAVITY,
        })
    }
}

pub fn load_description(path: impl AsRef<Path>) -> Result<RobotDescription> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    RobotDescription::from_toml_str(&text)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDescription {
    wheel: RawWheel,
    link: BTreeMap<String, RawLink>,
    world: Option<RawWorld>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWheel {
    radius: f64,
    mass: f64,
    inertia: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLink {
    mass: f64,
    length: f64,
    com_offset: f64,
    inertia_com: f64,
    #[serde(default)]
    damping: f64,
    torque_limit: f64,
    #[serde(default = "neg_inf")]
    angle_min: f64,
    #[serde(default = "pos_inf")]
    angle_max: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWorld {
    gravity: f64,
}

fn neg_inf() -> f64 {
    f64::NEG_INFINITY
}

fn pos_inf() -> f64 {
    f64::INFINITY
}

/// Minimal coordinates `(x, q)` and their rates.
#[derive(Clone, Debug, PartialEq)]
pub struct RobotState {
    /// Heading position of the wheel axle, m.
    pub x: f64,
    pub xdot: f64,
    /// `q[0]` is base pitch from vertical (positive tilts toward +x); the rest are relative joint angles.
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
}

impl RobotState {
    pub fn new(x: f64, xdot: f64, q: DVector<f64>, qdot: DVector<f64>) -> Self {
        Self { x, xdot, q, qdot }
    }

    /// All links upright, everything at rest.
    pub fn upright(n: usize) -> Self {
        Self::new(0.0, 0.0, DVector::zeros(n), DVector::zeros(n))
    }

    pub fn at_rest(x: f64, q: DVector<f64>) -> Self {
        let n = q.len();
        Self::new(x, 0.0, q, DVector::zeros(n))
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    /// Generalized velocity `(ẋ, q̇)`.
    pub fn velocities(&self) -> DVector<f64> {
        let n = self.n();
        let mut v = DVector::zeros(n + 1);
        v[0] = self.xdot;
        v.rows_mut(1, n).copy_from(&self.qdot);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite()
            && self.xdot.is_finite()
            && self.q.iter().all(|v| v.is_finite())
            && self.qdot.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_dims(&self, desc: &RobotDescription) -> Result<()> {
        if self.q.len() != desc.n() || self.qdot.len() != desc.n() {
            return Err(Error::Dimension {
                expected: desc.n(),
                got: self.q.len().max(self.qdot.len()),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StateViolation {
    Dimension { expected: usize, got: usize },
    NonFinite { field: String },
    /// Joint numbering is 1-based.
    JointLimit { joint: usize, value: f64, min: f64, max: f64 },
}

impl fmt::Display for StateViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateViolation::Dimension { expected, got } => {
                write!(f, "state has {got} joints, robot has {expected}")
            }
            StateViolation::NonFinite { field } => write!(f, "{field} non-finite"),
            StateViolation::JointLimit { joint, value, min, max } => {
                write!(f, "joint {joint} at {value:.4} rad outside [{min:.4}, {max:.4}]")
            }
        }
    }
}

/// Reports joint-limit violations and non-finite entries. An empty list means the state is valid.
pub fn validate_state(desc: &RobotDescription, s: &RobotState) -> Vec<StateViolation> {
    let mut out = Vec::new();
    if s.q.len() != desc.n() || s.qdot.len() != desc.n() {
        out.push(StateViolation::Dimension {
            expected: desc.n(),
            got: s.q.len().max(s.qdot.len()),
        });
        return out;
    }
    if !s.x.is_finite() {
        out.push(StateViolation::NonFinite { field: "x".into() });
    }
    if !s.xdot.is_finite() {
        out.push(StateViolation::NonFinite { field: "xdot".into() });
    }
    for (k, v) in s.q.iter().enumerate() {
        if !v.is_finite() {
            out.push(StateViolation::NonFinite {
                field: format!("q[{k}]"),
            });
        }
    }
    for (k, v) in s.qdot.iter().enumerate() {
        if !v.is_finite() {
            out.push(StateViolation::NonFinite {
                field: format!("qdot[{k}]"),
            });
        }
    }
    for (k, (l, &v)) in desc.links.iter().zip(s.q.iter()).enumerate() {
        if v.is_finite() && (v < l.angle_min || v > l.angle_max) {
            out.push(StateViolation::JointLimit {
                joint: k + 1,
                value: v,
                min: l.angle_min,
                max: l.angle_max,
            });
        }
    }
    out
}
