//! Sample-space points.
//!
//! A [`Point`] is one observation. Chains fix a single variant for all their
//! points; mixing variants inside one sequence is a configuration error and
//! is rejected by the operations that consume data.
//!
//! Equality, hashing, and ordering are defined through the bit patterns of
//! the floating-point payloads, so points can key hash maps and merge atoms
//! deterministically.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::hash::{Hash, Hasher};

/// Identity of an atom created by a draw from a diffuse base measure: the
/// random stream that produced it plus a per-stream counter. Tags carry no
/// geometry; they compare by identity only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AtomTag {
    pub stream: u64,
    pub counter: u64,
}

impl std::fmt::Display for AtomTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "t{}-{}", self.stream, self.counter)
    }
}

/// One observation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Point {
    /// Categorical label.
    Label(u32),
    /// Real scalar.
    Real(f64),
    /// Real vector of fixed dimension.
    Vector(Vec<f64>),
    /// Abstract atom minted by a diffuse base measure.
    Tag(AtomTag),
}

/// The four shapes a point can take. Used for cheap space-compatibility
/// checks between measures and data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Label,
    Real,
    Vector,
    Tag,
}

impl Point {
    pub fn variant(&self) -> Variant {
        match self {
            Point::Label(_) => Variant::Label,
            Point::Real(_) => Variant::Real,
            Point::Vector(_) => Variant::Vector,
            Point::Tag(_) => Variant::Tag,
        }
    }

    pub fn as_label(&self) -> Option<u32> {
        match self {
            Point::Label(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_real(&self) -> Option<f64> {
        match self {
            Point::Real(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_vector(&self) -> Option<&[f64]> {
        match self {
            Point::Vector(v) => Some(v),
            _ => None,
        }
    }

    /// Short human-readable rendering for error messages and reports.
    pub fn describe(&self) -> String {
        match self {
            Point::Label(v) => format!("{v}"),
            Point::Real(v) => format!("{v:?}"),
            Point::Vector(v) => {
                let parts: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
                format!("({})", parts.join(","))
            }
            Point::Tag(t) => t.to_string(),
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Point::Label(_) => 0,
            Point::Real(_) => 1,
            Point::Vector(_) => 2,
            Point::Tag(_) => 3,
        }
    }
}

impl PartialEq for Point {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Point::Label(a), Point::Label(b)) => a == b,
            (Point::Real(a), Point::Real(b)) => a.to_bits() == b.to_bits(),
            (Point::Vector(a), Point::Vector(b)) => {
                a.len() == b.len()
                    && a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (Point::Tag(a), Point::Tag(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Point {}

impl Hash for Point {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.rank().hash(state);
        match self {
            Point::Label(v) => v.hash(state),
            Point::Real(v) => v.to_bits().hash(state),
            Point::Vector(v) => {
                v.len().hash(state);
                for x in v {
                    x.to_bits().hash(state);
                }
            }
            Point::Tag(t) => t.hash(state),
        }
    }
}

impl Ord for Point {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Point::Label(a), Point::Label(b)) => a.cmp(b),
            (Point::Real(a), Point::Real(b)) => a.total_cmp(b),
            (Point::Vector(a), Point::Vector(b)) => {
                for (x, y) in a.iter().zip(b.iter()) {
                    match x.total_cmp(y) {
                        Ordering::Equal => continue,
                        ord => return ord,
                    }
                }
                a.len().cmp(&b.len())
            }
            (Point::Tag(a), Point::Tag(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl PartialOrd for Point {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Kind of sample space a rule operates on.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpaceKind {
    /// Labels `0..size`.
    Categorical { size: u32 },
    RealLine,
    RealVector { dim: usize },
    /// Abstract atoms identified by tags.
    Tagged,
}

impl SpaceKind {
    pub fn accepts(&self, p: &Point) -> bool {
        match (self, p) {
            (SpaceKind::Categorical { size }, Point::Label(v)) => v < size,
            (SpaceKind::RealLine, Point::Real(_)) => true,
            (SpaceKind::RealVector { dim }, Point::Vector(v)) => v.len() == *dim,
            (SpaceKind::Tagged, Point::Tag(_)) => true,
            _ => false,
        }
    }

    /// Enumeration of a finite space, if there is one.
    pub fn points(&self) -> Option<Vec<Point>> {
        match self {
            SpaceKind::Categorical { size } => Some((0..*size).map(Point::Label).collect()),
            _ => None,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            SpaceKind::Categorical { size } => format!("categorical({size})"),
            SpaceKind::RealLine => "real line".to_string(),
            SpaceKind::RealVector { dim } => format!("real vectors of dim {dim}"),
            SpaceKind::Tagged => "tagged atoms".to_string(),
        }
    }
}
