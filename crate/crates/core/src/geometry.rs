//! 4-DoF poses, body-frame actions, rigid transforms and the pinhole camera.
//!
//! Conventions used everywhere in the crate:
//!
//! * World frame: z up, yaw measured counter-clockwise from +x.
//! * Actions are expressed in the body frame of the pose they are applied to:
//!   `dx` forward, `dy` left, `dz` up. Within one step the translation is
//!   applied first, then the yaw change.
//! * Camera frame: optical axis (z) along the yaw heading, x right, y down.
//!   There is no pitch or roll.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(angle: f64) -> f64 {
    let wrapped = angle.rem_euclid(TAU);
    if wrapped > PI {
        wrapped - TAU
    } else {
        wrapped
    }
}

/// 4-DoF agent state: position in meters and yaw in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose4 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

impl Pose4 {
    pub fn new(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            z,
            yaw: normalize_angle(yaw),
        }
    }

    pub fn origin() -> Self {
        Self::new(0.0, 0.0, 0.0, 0.0)
    }

    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.yaw.is_finite()
    }

    /// Euclidean distance between the positions of two poses.
    pub fn distance(&self, other: &Pose4) -> f64 {
        let d = [self.x - other.x, self.y - other.y, self.z - other.z];
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    }

    fn check(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid(format!("{what} pose is not finite: {self:?}")))
        }
    }
}

/// Body-frame relative motion for one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action4 {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub dyaw: f64,
}

impl Action4 {
    pub const ZERO: Action4 = Action4 {
        dx: 0.0,
        dy: 0.0,
        dz: 0.0,
        dyaw: 0.0,
    };

    pub fn new(dx: f64, dy: f64, dz: f64, dyaw: f64) -> Self {
        Self { dx, dy, dz, dyaw }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.dx, self.dy, self.dz, self.dyaw]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Per-step motion limits derived from velocities and the action duration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLimits {
    /// Max |dx| and |dy| in meters.
    pub horizontal: f64,
    /// Max |dz| in meters.
    pub vertical: f64,
    /// Max |dyaw| in radians.
    pub yaw: f64,
}

/// Horizontal speed, m/s.
pub const HORIZONTAL_SPEED: f64 = 5.0;
/// Vertical speed, m/s.
pub const VERTICAL_SPEED: f64 = 2.0;
/// Yaw rate, degrees per second.
pub const YAW_RATE_DEG: f64 = 15.0;
/// Duration of one action in seconds.
pub const STEP_DURATION: f64 = 1.0;

impl StepLimits {
    pub fn from_velocities(horizontal: f64, vertical: f64, yaw_rate: f64, dt: f64) -> Self {
        Self {
            horizontal: horizontal * dt,
            vertical: vertical * dt,
            yaw: yaw_rate * dt,
        }
    }

    pub fn clamp(&self, a: Action4) -> Action4 {
        Action4 {
            dx: a.dx.clamp(-self.horizontal, self.horizontal),
            dy: a.dy.clamp(-self.horizontal, self.horizontal),
            dz: a.dz.clamp(-self.vertical, self.vertical),
            dyaw: a.dyaw.clamp(-self.yaw, self.yaw),
        }
    }

    pub fn admits(&self, a: &Action4) -> bool {
        a.dx.abs() <= self.horizontal
            && a.dy.abs() <= self.horizontal
            && a.dz.abs() <= self.vertical
            && a.dyaw.abs() <= self.yaw
    }
}

impl Default for StepLimits {
    fn default() -> Self {
        Self::from_velocities(
            HORIZONTAL_SPEED,
            VERTICAL_SPEED,
            YAW_RATE_DEG.to_radians(),
            STEP_DURATION,
        )
    }
}

/// Pinhole intrinsics in pixels. Pixel `(u, v)` samples the ray through its
/// integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Square pixels with the given horizontal field of view and the
    /// principal point at `(width / 2, height / 2)`.
    pub fn with_fov(width: usize, height: usize, hfov: f64) -> Result<Self> {
        if !(hfov > 0.0 && hfov < PI) {
            return Err(Error::invalid(format!("field of view {hfov} out of (0, pi)")));
        }
        let f = (width as f64 / 2.0) / (hfov / 2.0).tan();
        Self::new(f, f, (width / 2) as f64, (height / 2) as f64, width, height)
    }

    /// 90 degree horizontal field of view.
    pub fn square(size: usize) -> Self {
        Self::with_fov(size, size, FRAC_PI_2).expect("valid default intrinsics")
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::invalid(format!("bad focal lengths in {self:?}")));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("intrinsics with zero-sized image"));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy)
        {
            return Err(Error::invalid(format!(
                "principal point outside image in {self:?}"
            )));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Camera-frame point at planar depth `depth` seen through pixel `(u, v)`.
    pub fn back_project(&self, u: f64, v: f64, depth: f64) -> [f64; 3] {
        [
            depth * (u - self.cx) / self.fx,
            depth * (v - self.cy) / self.fy,
            depth,
        ]
    }

    /// Sub-pixel image coordinates of a camera-frame point with `p[2] > 0`.
    pub fn project(&self, p: [f64; 3]) -> (f64, f64) {
        (
            self.fx * p[0] / p[2] + self.cx,
            self.fy * p[1] / p[2] + self.cy,
        )
    }
}

/// Proper rigid motion `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + t[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + t[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + t[2],
        ]
    }

    /// Rotation only, no translation.
    pub fn rotate(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2],
        ]
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let mut rotation = [[0.0; 3]; 3];
        for (i, row) in rotation.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3)
                    .map(|k| self.rotation[i][k] * other.rotation[k][j])
                    .sum();
            }
        }
        RigidTransform {
            rotation,
            translation: self.apply(other.translation),
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let mut rotation = [[0.0; 3]; 3];
        for (i, row) in rotation.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = self.rotation[j][i];
            }
        }
        let inv = RigidTransform {
            rotation,
            translation: [0.0; 3],
        };
        let t = inv.rotate(self.translation);
        RigidTransform {
            rotation,
            translation: [-t[0], -t[1], -t[2]],
        }
    }

    /// Largest deviation of `RᵀR` from identity and of `det R` from 1.
    pub fn rigidity_error(&self) -> f64 {
        let r = &self.rotation;
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        worst.max((det - 1.0).abs())
    }

    pub fn max_abs_diff(&self, other: &RigidTransform) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                worst = worst.max((self.rotation[i][j] - other.rotation[i][j]).abs());
            }
            worst = worst.max((self.translation[i] - other.translation[i]).abs());
        }
        worst
    }
}

/// Applies a body-frame action to a pose: translate in the pose's body frame,
/// then turn.
pub fn compose_pose(p: &Pose4, a: &Action4) -> Result<Pose4> {
    p.check("input")?;
    if !a.is_finite() {
        return Err(Error::invalid(format!("action is not finite: {a:?}")));
    }
    let (s, c) = p.yaw.sin_cos();
    Ok(Pose4::new(
        p.x + c * a.dx - s * a.dy,
        p.y + s * a.dx + c * a.dy,
        p.z + a.dz,
        p.yaw + a.dyaw,
    ))
}

/// The action that takes `from` to `to`; exact inverse of [`compose_pose`].
pub fn action_between(from: &Pose4, to: &Pose4) -> Result<Action4> {
    from.check("source")?;
    to.check("target")?;
    let (s, c) = from.yaw.sin_cos();
    let (wx, wy) = (to.x - from.x, to.y - from.y);
    Ok(Action4 {
        dx: c * wx + s * wy,
        dy: -s * wx + c * wy,
        dz: to.z - from.z,
        dyaw: normalize_angle(to.yaw - from.yaw),
    })
}

/// Maps world points into the camera frame of a camera at `pose`.
pub fn camera_from_world(pose: &Pose4) -> RigidTransform {
    let (s, c) = pose.yaw.sin_cos();
    let rotation = [[s, -c, 0.0], [0.0, 0.0, -1.0], [c, s, 0.0]];
    let partial = RigidTransform {
        rotation,
        translation: [0.0; 3],
    };
    let t = partial.rotate(pose.position());
    RigidTransform {
        rotation,
        translation: [-t[0], -t[1], -t[2]],
    }
}

pub fn world_from_camera(pose: &Pose4) -> RigidTransform {
    camera_from_world(pose).inverse()
}

/// Transform taking camera-frame points of the view at `src` into the camera
/// frame of the view at `dst`.
pub fn relative_camera_transform(src: &Pose4, dst: &Pose4) -> Result<RigidTransform> {
    src.check("source")?;
    dst.check("destination")?;
    Ok(camera_from_world(dst).compose(&world_from_camera(src)))
}

/// Re-expresses a body-frame action for a camera mounted at a yaw offset of
/// `quarter_turns * 90°`.
pub fn rotate_action_view(a: &Action4, quarter_turns: u8) -> Result<Action4> {
    let (dx, dy) = match quarter_turns {
        0 => (a.dx, a.dy),
        1 => (a.dy, -a.dx),
        2 => (-a.dx, -a.dy),
        3 => (-a.dy, a.dx),
        q => {
            return Err(Error::invalid(format!(
                "quarter_turns must be in 0..=3, got {q}"
            )))
        }
    };
    Ok(Action4 {
        dx,
        dy,
        dz: a.dz,
        dyaw: a.dyaw,
    })
}

/// Signed smallest difference between two angles.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    normalize_angle(a - b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    fn pose_close(a: &Pose4, b: &Pose4) -> bool {
        close(a.x, b.x) && close(a.y, b.y) && close(a.z, b.z) && angle_diff(a.yaw, b.yaw).abs() < 1e-9
    }

    #[test]
    fn normalize_keeps_half_open_interval() {
        assert_eq!(normalize_angle(PI), PI);
        assert_eq!(normalize_angle(-PI), PI);
        assert!(close(normalize_angle(3.0 * PI), PI));
        assert!(close(normalize_angle(-FRAC_PI_2), -FRAC_PI_2));
    }

    #[test]
    fn compose_identity() {
        let p = compose_pose(&Pose4::origin(), &Action4::ZERO).unwrap();
        assert_eq!(p, Pose4::origin());
    }

    #[test]
    fn compose_forward_five_meters() {
        let p = compose_pose(&Pose4::new(0.0, 0.0, 10.0, 0.0), &Action4::new(5.0, 0.0, 0.0, 0.0))
            .unwrap();
        assert!(pose_close(&p, &Pose4::new(5.0, 0.0, 10.0, 0.0)));
    }

    #[test]
    fn compose_forward_when_facing_left() {
        let p = compose_pose(
            &Pose4::new(0.0, 0.0, 0.0, FRAC_PI_2),
            &Action4::new(5.0, 0.0, 0.0, 0.0),
        )
        .unwrap();
        assert!(pose_close(&p, &Pose4::new(0.0, 5.0, 0.0, FRAC_PI_2)));
    }

    #[test]
    fn compose_rejects_non_finite() {
        let err = compose_pose(&Pose4::origin(), &Action4::new(f64::NAN, 0.0, 0.0, 0.0));
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
        let err = compose_pose(&Pose4::new(f64::INFINITY, 0.0, 0.0, 0.0), &Action4::ZERO);
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn action_between_examples() {
        let p = Pose4::new(1.0, 2.0, 3.0, 0.4);
        let a = action_between(&p, &p).unwrap();
        assert_eq!(a, Action4::ZERO);

        let a = action_between(&Pose4::origin(), &Pose4::new(5.0, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!(a, Action4::new(5.0, 0.0, 0.0, 0.0));

        let a = action_between(
            &Pose4::new(0.0, 0.0, 0.0, FRAC_PI_2),
            &Pose4::new(0.0, 5.0, 0.0, FRAC_PI_2),
        )
        .unwrap();
        assert!(close(a.dx, 5.0) && close(a.dy, 0.0) && close(a.dz, 0.0) && close(a.dyaw, 0.0));
    }

    #[test]
    fn yaw_stays_normalized_over_48_turns() {
        let mut p = Pose4::origin();
        let turn = Action4::new(0.0, 0.0, 0.0, 15f64.to_radians());
        for _ in 0..48 {
            p = compose_pose(&p, &turn).unwrap();
            assert!(p.yaw > -PI && p.yaw <= PI, "yaw {} escaped", p.yaw);
        }
        // 48 * 15° = 720°
        assert!(angle_diff(p.yaw, 0.0).abs() < 1e-9);
    }

    #[test]
    fn relative_transform_examples() {
        let t = relative_camera_transform(&Pose4::origin(), &Pose4::origin()).unwrap();
        assert!(t.max_abs_diff(&RigidTransform::identity()) < 1e-12);

        let t = relative_camera_transform(&Pose4::origin(), &Pose4::new(1.0, 0.0, 0.0, 0.0))
            .unwrap();
        let expected = RigidTransform {
            rotation: RigidTransform::identity().rotation,
            translation: [0.0, 0.0, -1.0],
        };
        assert!(t.max_abs_diff(&expected) < 1e-12);

        let t = relative_camera_transform(&Pose4::origin(), &Pose4::new(0.0, 0.0, 0.0, PI))
            .unwrap();
        let flip_about_y = RigidTransform {
            rotation: [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]],
            translation: [0.0; 3],
        };
        assert!(t.max_abs_diff(&flip_about_y) < 1e-9);
    }

    #[test]
    fn camera_axes_follow_convention() {
        let pose = Pose4::new(3.0, -2.0, 10.0, 0.3);
        let cam = camera_from_world(&pose);
        assert!(cam.rigidity_error() < 1e-12);
        // a point straight ahead lands on the optical axis
        let ahead = [3.0 + 7.0 * 0.3f64.cos(), -2.0 + 7.0 * 0.3f64.sin(), 10.0];
        let p = cam.apply(ahead);
        assert!(close(p[0], 0.0) && close(p[1], 0.0) && close(p[2], 7.0));
        // a point below the camera has positive y
        let p = cam.apply([ahead[0], ahead[1], 5.0]);
        assert!(close(p[1], 5.0));
    }

    #[test]
    fn rotate_action_examples() {
        let fwd = Action4::new(5.0, 0.0, 0.0, 0.0);
        assert_eq!(rotate_action_view(&fwd, 0).unwrap(), fwd);
        assert_eq!(
            rotate_action_view(&fwd, 2).unwrap(),
            Action4::new(-5.0, 0.0, 0.0, 0.0)
        );
        assert_eq!(
            rotate_action_view(&fwd, 1).unwrap(),
            Action4::new(0.0, -5.0, 0.0, 0.0)
        );
        assert!(matches!(
            rotate_action_view(&fwd, 4),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn limits_match_velocities() {
        let l = StepLimits::default();
        assert_eq!(l.horizontal, 5.0);
        assert_eq!(l.vertical, 2.0);
        assert!(close(l.yaw, 15f64.to_radians()));
        let c = l.clamp(Action4::new(7.0, -9.0, 3.0, -1.0));
        assert_eq!(c, Action4::new(5.0, -5.0, 2.0, -15f64.to_radians()));
    }

    fn finite_pose() -> impl Strategy<Value = Pose4> {
        (-500.0..500.0f64, -500.0..500.0f64, -50.0..200.0f64, -10.0..10.0f64)
            .prop_map(|(x, y, z, yaw)| Pose4::new(x, y, z, yaw))
    }

    fn finite_action() -> impl Strategy<Value = Action4> {
        (-10.0..10.0f64, -10.0..10.0f64, -5.0..5.0f64, -3.0..3.0f64)
            .prop_map(|(dx, dy, dz, dyaw)| Action4::new(dx, dy, dz, dyaw))
    }

    proptest! {
        #[test]
        fn compose_inverts_action_between(p in finite_pose(), q in finite_pose()) {
            let a = action_between(&p, &q).unwrap();
            let back = compose_pose(&p, &a).unwrap();
            prop_assert!(pose_close(&back, &q), "{back:?} vs {q:?}");
        }

        #[test]
        fn action_between_inverts_compose(p in finite_pose(), a in finite_action()) {
            let q = compose_pose(&p, &a).unwrap();
            let b = action_between(&p, &q).unwrap();
            prop_assert!(close(a.dx, b.dx) && close(a.dy, b.dy) && close(a.dz, b.dz));
            prop_assert!(angle_diff(a.dyaw, b.dyaw).abs() < 1e-9);
        }

        #[test]
        fn relative_transforms_cancel(p in finite_pose(), q in finite_pose()) {
            let ab = relative_camera_transform(&p, &q).unwrap();
            let ba = relative_camera_transform(&q, &p).unwrap();
            prop_assert!(ab.rigidity_error() < 1e-9);
            let round_trip = ab.compose(&ba);
            prop_assert!(round_trip.max_abs_diff(&RigidTransform::identity()) < 1e-9);
            let same = relative_camera_transform(&p, &p).unwrap();
            prop_assert!(same.max_abs_diff(&RigidTransform::identity()) < 1e-9);
        }

        #[test]
        fn four_quarter_turns_are_identity(a in finite_action()) {
            let mut r = a;
            for _ in 0..4 {
                r = rotate_action_view(&r, 1).unwrap();
            }
            prop_assert_eq!(r, a);
        }
    }
}
