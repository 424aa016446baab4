use std::fmt;
use std::str::FromStr;

/// Rotation applied by every turn/look action, in degrees.
pub const ROTATION_DEG: f64 = 30.0;
pub const PITCH_LIMIT_DEG: f64 = 60.0;
pub const DEFAULT_BACKWARD_STEP: f64 = 0.25;

/// Camera pose. `z` is up; yaw 0 looks along +x and grows counter-clockwise
/// seen from above, so turning left increases yaw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentPose {
    pub position: [f64; 3],
    pub yaw: f64,
    pub pitch: f64,
}

impl AgentPose {
    pub fn new(position: [f64; 3], yaw: f64, pitch: f64) -> Self {
        AgentPose { position, yaw: normalize_yaw(yaw), pitch: pitch.clamp(-PITCH_LIMIT_DEG, PITCH_LIMIT_DEG) }
    }

    pub fn is_valid(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && (0.0..360.0).contains(&self.yaw)
            && (-PITCH_LIMIT_DEG..=PITCH_LIMIT_DEG).contains(&self.pitch)
    }

    /// Unit view direction.
    pub fn forward(&self) -> [f64; 3] {
        let (y, p) = (self.yaw.to_radians(), self.pitch.to_radians());
        [p.cos() * y.cos(), p.cos() * y.sin(), p.sin()]
    }
}

pub fn normalize_yaw(yaw: f64) -> f64 {
    let y = yaw.rem_euclid(360.0);
    if y >= 360.0 {
        0.0
    } else {
        y
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    TurnLeft,
    TurnRight,
    LookUp,
    LookDown,
    MoveBackward,
}

impl Action {
    pub const ALL: [Action; 5] =
        [Action::TurnLeft, Action::TurnRight, Action::LookUp, Action::LookDown, Action::MoveBackward];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn tag(self) -> &'static str {
        match self {
            Action::TurnLeft => "TurnLeft",
            Action::TurnRight => "TurnRight",
            Action::LookUp => "LookUp",
            Action::LookDown => "LookDown",
            Action::MoveBackward => "MoveBackward",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Action::ALL.iter().copied().find(|a| a.tag() == s).ok_or_else(|| format!("unknown action tag {s:?}"))
    }
}

/// Applies `action` to `pose`. Pitch is clamped to the ±60° range; backward
/// motion follows the horizontal heading so the camera height is preserved.
pub fn apply(action: Action, pose: &AgentPose, backward_step: f64) -> AgentPose {
    let mut next = *pose;
    match action {
        Action::TurnLeft => next.yaw = normalize_yaw(pose.yaw + ROTATION_DEG),
        Action::TurnRight => next.yaw = normalize_yaw(pose.yaw - ROTATION_DEG),
        Action::LookUp => next.pitch = (pose.pitch + ROTATION_DEG).min(PITCH_LIMIT_DEG),
        Action::LookDown => next.pitch = (pose.pitch - ROTATION_DEG).max(-PITCH_LIMIT_DEG),
        Action::MoveBackward => {
            let y = pose.yaw.to_radians();
            next.position[0] -= backward_step * y.cos();
            next.position[1] -= backward_step * y.sin();
        }
    }
    next
}
