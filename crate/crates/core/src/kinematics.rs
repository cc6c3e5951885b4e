//! Hand-state model, movement catalog, guide trajectories and the 50% labeler.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const HAND_DOF: usize = 9;
/// Activation at or above which a guide sample counts as movement.
pub const ACTIVATION_BOUNDARY: f64 = 0.5;
pub const REST_ID: &str = "rest";

pub const THUMB_FLEXION: usize = 0;
pub const THUMB_ABDUCTION: usize = 1;
pub const INDEX_FLEXION: usize = 2;
pub const MIDDLE_FLEXION: usize = 3;
pub const RING_FLEXION: usize = 4;
pub const PINKY_FLEXION: usize = 5;
pub const WRIST_FLEXION: usize = 6;
pub const WRIST_ADDUCTION: usize = 7;
pub const WRIST_PRONATION: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KinematicsError {
    #[error("hand-state component {index} = {value} outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("unknown movement class {0:?}")]
    UnknownClass(String),
    #[error("catalog must start with a zero-target {REST_ID:?} template")]
    MissingRest,
    #[error("duplicate movement id {0:?}")]
    DuplicateId(String),
    #[error("display id {display:?} of {id:?} is not in the catalog")]
    DanglingDisplay { id: String, display: String },
    #[error("catalog holds {0} templates; at most 255 fit the session format")]
    TooManyTemplates(usize),
    #[error("invalid guide timing: {0}")]
    InvalidTiming(&'static str),
    #[error("catalog I/O: {0}")]
    Io(String),
    #[error("catalog JSON: {0}")]
    Json(String),
}

/// Nine joint activations in `[0, 1]`: thumb flexion and abduction, index,
/// middle, ring and pinky flexion, wrist flexion, adduction and pronation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "[f64; HAND_DOF]", into = "[f64; HAND_DOF]")]
pub struct HandState([f64; HAND_DOF]);

impl HandState {
    pub const REST: HandState = HandState([0.0; HAND_DOF]);

    pub fn new(v: [f64; HAND_DOF]) -> Result<Self, KinematicsError> {
        for (index, &value) in v.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(KinematicsError::OutOfRange { index, value });
            }
        }
        Ok(Self(v))
    }

    /// Clamps every component into `[0, 1]`; NaN maps to 0.
    pub fn clamped(v: [f64; HAND_DOF]) -> Self {
        Self(v.map(|x| if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) }))
    }

    pub fn with(indices: &[usize]) -> Self {
        let mut v = [0.0; HAND_DOF];
        for &i in indices {
            v[i] = 1.0;
        }
        Self(v)
    }

    pub fn values(&self) -> &[f64; HAND_DOF] {
        &self.0
    }

    pub fn scaled(&self, activation: f64) -> Self {
        Self::clamped(self.0.map(|x| x * activation))
    }

    pub fn is_rest(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    /// Componentwise mean; `None` for an empty input.
    pub fn mean<'a>(states: impl IntoIterator<Item = &'a HandState>) -> Option<HandState> {
        let mut acc = [0.0; HAND_DOF];
        let mut n = 0usize;
        for s in states {
            for (a, v) in acc.iter_mut().zip(s.0) {
                *a += v;
            }
            n += 1;
        }
        (n > 0).then(|| Self::clamped(acc.map(|a| a / n as f64)))
    }

    /// Rounds each component to the nearest `f32`, the precision stored on disk
    /// and on the wire.
    pub fn to_f32(&self) -> [f32; HAND_DOF] {
        self.0.map(|x| x as f32)
    }

    pub fn from_f32(v: [f32; HAND_DOF]) -> Self {
        Self::clamped(v.map(f64::from))
    }
}

impl TryFrom<[f64; HAND_DOF]> for HandState {
    type Error = KinematicsError;

    fn try_from(v: [f64; HAND_DOF]) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<HandState> for [f64; HAND_DOF] {
    fn from(s: HandState) -> Self {
        s.0
    }
}

impl std::ops::Index<usize> for HandState {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovementTemplate {
    pub id: String,
    pub target: HandState,
    /// Template rendered on screen while this movement is executed.
    pub display_id: String,
}

impl MovementTemplate {
    pub fn new(id: &str, target: HandState) -> Self {
        Self {
            id: id.to_owned(),
            target,
            display_id: id.to_owned(),
        }
    }

    /// Scalar activation of `guide` relative to this template's target.
    ///
    /// Maximum over the target's nonzero components of `guide[i] / target[i]`;
    /// zero for the rest template.
    pub fn activation(&self, guide: &HandState) -> f64 {
        self.target
            .0
            .iter()
            .zip(guide.0)
            .filter(|(t, _)| **t > 0.0)
            .map(|(t, g)| (g / t).clamp(0.0, 1.0))
            .fold(0.0, f64::max)
    }
}

/// Ordered set of movement templates; index 0 is always rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<MovementTemplate>", into = "Vec<MovementTemplate>")]
pub struct Catalog {
    templates: Vec<MovementTemplate>,
}

impl Default for Catalog {
    fn default() -> Self {
        Self::standard()
    }
}

impl TryFrom<Vec<MovementTemplate>> for Catalog {
    type Error = KinematicsError;

    fn try_from(templates: Vec<MovementTemplate>) -> Result<Self, Self::Error> {
        Self::new(templates)
    }
}

impl From<Catalog> for Vec<MovementTemplate> {
    fn from(c: Catalog) -> Self {
        c.templates
    }
}

impl Catalog {
    pub fn new(templates: Vec<MovementTemplate>) -> Result<Self, KinematicsError> {
        match templates.first() {
            Some(t) if t.id == REST_ID && t.target.is_rest() => {}
            _ => return Err(KinematicsError::MissingRest),
        }
        if templates.len() > usize::from(u8::MAX) {
            return Err(KinematicsError::TooManyTemplates(templates.len()));
        }
        for (i, t) in templates.iter().enumerate() {
            if templates[..i].iter().any(|o| o.id == t.id) {
                return Err(KinematicsError::DuplicateId(t.id.clone()));
            }
        }
        for t in &templates {
            if !templates.iter().any(|o| o.id == t.display_id) {
                return Err(KinematicsError::DanglingDisplay {
                    id: t.id.clone(),
                    display: t.display_id.clone(),
                });
            }
        }
        Ok(Self { templates })
    }

    /// The nine shipped hand movements.
    pub fn standard() -> Self {
        use self::{INDEX_FLEXION as I, MIDDLE_FLEXION as M, THUMB_FLEXION as T};
        let t = |id, dofs: &[usize]| MovementTemplate::new(id, HandState::with(dofs));
        Self::new(vec![
            t(REST_ID, &[]),
            t("thumb", &[T]),
            t("index", &[I]),
            t("middle", &[M]),
            t("ring", &[RING_FLEXION]),
            t("pinky", &[PINKY_FLEXION]),
            t("grasp", &[T, I, M, RING_FLEXION, PINKY_FLEXION]),
            t("pinch2", &[T, I]),
            t("pinch3", &[T, I, M]),
        ])
        .expect("standard catalog is valid")
    }

    pub fn from_json(json: &str) -> Result<Self, KinematicsError> {
        let templates: Vec<MovementTemplate> =
            serde_json::from_str(json).map_err(|e| KinematicsError::Json(e.to_string()))?;
        Self::new(templates)
    }

    pub fn load(path: &Path) -> Result<Self, KinematicsError> {
        let text = std::fs::read_to_string(path).map_err(|e| KinematicsError::Io(e.to_string()))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.templates).expect("catalog serializes")
    }

    pub fn templates(&self) -> &[MovementTemplate] {
        &self.templates
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Result<usize, KinematicsError> {
        self.templates
            .iter()
            .position(|t| t.id == id)
            .ok_or_else(|| KinematicsError::UnknownClass(id.to_owned()))
    }

    pub fn get(&self, id: &str) -> Result<&MovementTemplate, KinematicsError> {
        self.index_of(id).map(|i| &self.templates[i])
    }

    /// Template rendered for `id`, following its display mapping.
    pub fn display_template(&self, id: &str) -> Result<&MovementTemplate, KinematicsError> {
        let t = self.get(id)?;
        self.get(&t.display_id)
    }

    /// Adds a template, or replaces the one with the same id.
    pub fn upsert(&mut self, template: MovementTemplate) -> Result<(), KinematicsError> {
        let mut next = self.templates.clone();
        match next.iter_mut().find(|t| t.id == template.id) {
            Some(slot) => *slot = template,
            None => next.push(template),
        }
        *self = Self::new(next)?;
        Ok(())
    }

    /// Shows `display_id` on screen whenever `id` is executed.
    pub fn remap_display(&mut self, id: &str, display_id: &str) -> Result<(), KinematicsError> {
        self.get(display_id)?;
        let i = self.index_of(id)?;
        self.templates[i].display_id = display_id.to_owned();
        Ok(())
    }

    /// Stable content hash, used to detect catalog drift between a model and a session.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(serde_json::to_vec(&self.templates).expect("serializes"));
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Full-activation hand state displayed for a decoded class.
pub fn class_to_state(class_id: &str, catalog: &Catalog) -> Result<HandState, KinematicsError> {
    Ok(catalog.display_template(class_id)?.target)
}

/// Class under the 50% rule: the template's id at or above the boundary, rest below.
pub fn label<'a>(guide: &HandState, active: &'a MovementTemplate) -> &'a str {
    if active.activation(guide) >= ACTIVATION_BOUNDARY {
        &active.id
    } else {
        REST_ID
    }
}

/// Shape of the periodic guide: rest plateau, cosine rise, full plateau, cosine fall.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuideTiming {
    pub hold_s: f64,
    pub ramp_s: f64,
}

impl Default for GuideTiming {
    /// 1.5 s holds and 2.25 s ramps: one cycle per 7.5 s.
    fn default() -> Self {
        Self {
            hold_s: 1.5,
            ramp_s: 2.25,
        }
    }
}

impl GuideTiming {
    pub fn new(hold_s: f64, ramp_s: f64) -> Result<Self, KinematicsError> {
        if !(hold_s >= 0.0 && hold_s.is_finite()) {
            return Err(KinematicsError::InvalidTiming("hold_s must be >= 0"));
        }
        if !(ramp_s > 0.0 && ramp_s.is_finite()) {
            return Err(KinematicsError::InvalidTiming("ramp_s must be > 0"));
        }
        Ok(Self { hold_s, ramp_s })
    }

    /// Timing with the given full-cycle period and plateau hold.
    pub fn from_period(period_s: f64, hold_s: f64) -> Result<Self, KinematicsError> {
        Self::new(hold_s, (period_s - 2.0 * hold_s) / 2.0)
    }

    pub fn period_s(&self) -> f64 {
        2.0 * (self.hold_s + self.ramp_s)
    }

    /// Guide activation in `[0, 1]` at `t` seconds into the movement.
    pub fn activation(&self, t: f64) -> f64 {
        let (h, r) = (self.hold_s, self.ramp_s);
        let p = t.max(0.0) % self.period_s();
        let a = if p < h {
            0.0
        } else if p < h + r {
            0.5 * (1.0 - (std::f64::consts::PI * (p - h) / r).cos())
        } else if p < 2.0 * h + r {
            1.0
        } else {
            0.5 * (1.0 + (std::f64::consts::PI * (p - 2.0 * h - r) / r).cos())
        };
        a.clamp(0.0, 1.0)
    }
}

/// Guide hand state and scalar activation at time `t` for a displayed template.
pub fn guide_trajectory(template: &MovementTemplate, timing: &GuideTiming, t: f64) -> (HandState, f64) {
    let a = timing.activation(t);
    (template.target.scaled(a), a)
}

impl fmt::Display for HandState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v:.3}")?;
        }
        write!(f, "]")
    }
}
