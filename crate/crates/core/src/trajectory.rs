//! Closed-form flat trajectories: figure-eight, circle, line, rest and
//! quintic blends, chained into hybrid ground/air routes and sampled into
//! controller references.

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::SPEED_EPS;
use crate::flatness::{
    aerial_flat_to_reference_unchecked, ground_flat_to_reference_unchecked, FlatSampleAerial,
    FlatSampleGround, FlatnessError, ReferencePoint,
};
use crate::jet::Jet;
use crate::params::VehicleParams;
use crate::state::{Direction, Mode};
use crate::Vec3;

/// Joint continuity tolerance for position and velocity.
pub const JOINT_TOL: f64 = 1e-6;
/// Height above contact at which a blend reference switches to flight.
pub const LIFT_TOL: f64 = 1e-6;
const BLEND_EXTENSION: f64 = 1.1;
const MAX_EXTENSIONS: usize = 60;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("segment {index}: {reason}")]
    InvalidSegment { index: usize, reason: String },
    #[error("joint before segment {index}: position gap {position:e} m, velocity gap {velocity:e} m/s")]
    Discontinuity {
        index: usize,
        position: f64,
        velocity: f64,
    },
    #[error("reference sample {index}: {source}")]
    Flatness { index: usize, source: FlatnessError },
    #[error("a blend must sit between two segments")]
    DanglingBlend,
}

/// Closed-form curve of a segment in local time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// `(a sin wt, b sin 2wt, 0)`.
    Lemniscate { a: f64, b: f64, omega: f64 },
    /// Starts heading +x and turns left for positive `omega`:
    /// `radius (sin wt, 1 - cos wt, 0)`.
    Circle { radius: f64, omega: f64 },
    /// Constant velocity.
    Line { velocity: [f64; 3] },
    Rest,
    /// Quintic per coordinate in normalized time `s = t / duration`;
    /// coefficients of `s^0 .. s^5`, the constant term relative to the origin.
    Blend { coeffs: [[f64; 3]; 6] },
}

/// How the reference mode is chosen along a segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeAnnotation {
    Aerial,
    Ground(Direction),
    /// Ground while at contact height, aerial above it.
    ByAltitude(Direction),
}

/// Yaw of aerial references.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YawMode {
    Fixed(f64),
    /// Body x along the horizontal velocity.
    Heading,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySegment {
    pub shape: Shape,
    /// Position at local time zero.
    pub origin: Vec3,
    pub duration: f64,
    pub mode: ModeAnnotation,
    pub yaw: YawMode,
}

/// Position, velocity and acceleration at a segment end.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlatPoint {
    pub p: Vec3,
    pub v: Vec3,
    pub a: Vec3,
}

/// Realized peaks after a time scaling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleReport {
    /// Factor applied to the time rate: speeds scale by it, accelerations by its square.
    pub dilation: f64,
    pub peak_speed: f64,
    pub peak_accel: f64,
}

fn harmonic(amp: f64, w: f64, t: f64, k: usize) -> f64 {
    amp * w.powi(k as i32) * (w * t + k as f64 * std::f64::consts::FRAC_PI_2).sin()
}

fn harmonic_cos(amp: f64, w: f64, t: f64, k: usize) -> f64 {
    amp * w.powi(k as i32) * (w * t + k as f64 * std::f64::consts::FRAC_PI_2).cos()
}

impl TrajectorySegment {
    pub fn lemniscate(a: f64, b: f64, omega: f64, origin: Vec3, mode: ModeAnnotation) -> Self {
        Self {
            shape: Shape::Lemniscate { a, b, omega },
            origin,
            duration: std::f64::consts::TAU / omega,
            mode,
            yaw: YawMode::Heading,
        }
    }

    /// Figure-eight whose peak speed and peak acceleration equal `v_max`
    /// and `a_max` at once; `aspect` is the lateral-to-longitudinal
    /// amplitude ratio `b / a`.
    pub fn lemniscate_for_limits(aspect: f64, v_max: f64, a_max: f64, origin: Vec3, mode: ModeAnnotation) -> Self {
        let (v1, a1) = Self::lemniscate(1.0, aspect, 1.0, origin, mode).peaks();
        // Peaks scale as (s w v1, s w^2 a1) for amplitude s and rate w.
        let omega = (a_max / a1) * (v1 / v_max);
        let scale = v_max / (v1 * omega);
        Self::lemniscate(scale, scale * aspect, omega, origin, mode)
    }

    pub fn circle(radius: f64, omega: f64, origin: Vec3, mode: ModeAnnotation) -> Self {
        Self {
            shape: Shape::Circle { radius, omega },
            origin,
            duration: std::f64::consts::TAU / omega.abs(),
            mode,
            yaw: YawMode::Heading,
        }
    }

    pub fn line(velocity: Vec3, duration: f64, origin: Vec3, mode: ModeAnnotation) -> Self {
        Self {
            shape: Shape::Line {
                velocity: velocity.into(),
            },
            origin,
            duration,
            mode,
            yaw: YawMode::Heading,
        }
    }

    pub fn rest(duration: f64, origin: Vec3, mode: ModeAnnotation) -> Self {
        Self {
            shape: Shape::Rest,
            origin,
            duration,
            mode,
            yaw: YawMode::Heading,
        }
    }

    pub fn with_yaw(mut self, yaw: YawMode) -> Self {
        self.yaw = yaw;
        self
    }

    /// Sets the duration to a whole number of periods of a periodic shape.
    pub fn with_laps(mut self, laps: f64) -> Self {
        if let Some(period) = self.period() {
            self.duration = laps * period;
        }
        self
    }

    pub fn period(&self) -> Option<f64> {
        match self.shape {
            Shape::Lemniscate { omega, .. } | Shape::Circle { omega, .. } => {
                Some(std::f64::consts::TAU / omega.abs())
            }
            _ => None,
        }
    }

    pub fn validate(&self, index: usize) -> Result<(), TrajectoryError> {
        let bad = |reason: &str| {
            Err(TrajectoryError::InvalidSegment {
                index,
                reason: reason.to_string(),
            })
        };
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return bad("duration must be positive");
        }
        match self.shape {
            Shape::Lemniscate { a, b, omega } => {
                if !(a > 0.0 && b > 0.0 && omega > 0.0) {
                    return bad("lemniscate amplitudes and rate must be positive");
                }
            }
            Shape::Circle { radius, omega } => {
                if !(radius > 0.0 && omega != 0.0 && omega.is_finite()) {
                    return bad("circle radius must be positive and rate nonzero");
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Position and its first four derivatives at local time `tau`.
    pub fn derivs(&self, tau: f64) -> [Vec3; 5] {
        let mut d = [Vec3::zeros(); 5];
        match &self.shape {
            Shape::Lemniscate { a, b, omega } => {
                for (k, slot) in d.iter_mut().enumerate() {
                    slot.x = harmonic(*a, *omega, tau, k);
                    slot.y = harmonic(*b, 2.0 * omega, tau, k);
                }
            }
            Shape::Circle { radius, omega } => {
                for (k, slot) in d.iter_mut().enumerate() {
                    slot.x = harmonic(*radius, *omega, tau, k);
                    slot.y = -harmonic_cos(*radius, *omega, tau, k);
                }
                d[0].y += radius;
            }
            Shape::Line { velocity } => {
                let v = Vec3::from(*velocity);
                d[0] = v * tau;
                d[1] = v;
            }
            Shape::Rest => {}
            Shape::Blend { coeffs } => {
                let s = tau / self.duration;
                for (k, slot) in d.iter_mut().enumerate() {
                    let mut acc = Vec3::zeros();
                    for (n, c) in coeffs.iter().enumerate().skip(k) {
                        let falling: f64 = ((n - k + 1)..=n).map(|f| f as f64).product();
                        acc += Vec3::from(*c) * (falling * s.powi((n - k) as i32));
                    }
                    *slot = acc / self.duration.powi(k as i32);
                }
            }
        }
        d[0] += self.origin;
        d
    }

    pub fn start(&self) -> FlatPoint {
        let d = self.derivs(0.0);
        FlatPoint {
            p: d[0],
            v: d[1],
            a: d[2],
        }
    }

    pub fn end(&self) -> FlatPoint {
        let d = self.derivs(self.duration);
        FlatPoint {
            p: d[0],
            v: d[1],
            a: d[2],
        }
    }

    /// Moves the segment so that it starts at `p`.
    pub fn placed_at(mut self, p: Vec3) -> Self {
        let shift = p - self.start().p;
        self.origin += shift;
        self
    }

    /// Peak speed and acceleration, closed form where available.
    pub fn peaks(&self) -> (f64, f64) {
        match self.shape {
            Shape::Lemniscate { a, b, omega } => {
                let speed = omega * (a * a + 4.0 * b * b).sqrt();
                // |a|^2 / omega^4 = a^2 (1 - c) + 64 b^2 c (1 - c), c = cos^2(wt).
                let f = |c: f64| a * a * (1.0 - c) + 64.0 * b * b * c * (1.0 - c);
                let c_star = (0.5 * (1.0 - a * a / (64.0 * b * b))).clamp(0.0, 1.0);
                let peak = f(c_star).max(f(0.0)).max(f(1.0));
                (speed, omega * omega * peak.sqrt())
            }
            Shape::Circle { radius, omega } => (radius * omega.abs(), radius * omega * omega),
            Shape::Line { velocity } => (Vec3::from(velocity).norm(), 0.0),
            Shape::Rest => (0.0, 0.0),
            Shape::Blend { .. } => self.sampled_peaks(2000),
        }
    }

    fn sampled_peaks(&self, n: usize) -> (f64, f64) {
        (0..=n).fold((0.0f64, 0.0f64), |(v, a), i| {
            let d = self.derivs(self.duration * i as f64 / n as f64);
            (v.max(d[1].norm()), a.max(d[2].norm()))
        })
    }

    /// Speeds the segment up (`k > 1`) or slows it down (`k < 1`) in time.
    pub fn dilate(&self, k: f64) -> Self {
        let mut out = self.clone();
        out.duration = self.duration / k;
        match &mut out.shape {
            Shape::Lemniscate { omega, .. } | Shape::Circle { omega, .. } => *omega *= k,
            Shape::Line { velocity } => velocity.iter_mut().for_each(|c| *c *= k),
            Shape::Rest | Shape::Blend { .. } => {}
        }
        out.placed_at(self.start().p)
    }
}

fn scale_with(seg: &TrajectorySegment, v_max: f64, a_max: f64, allow_speedup: bool) -> (TrajectorySegment, ScaleReport) {
    let (v, a) = seg.peaks();
    let mut k = f64::INFINITY;
    if v > 0.0 {
        k = k.min(v_max / v);
    }
    if a > 0.0 {
        k = k.min((a_max / a).sqrt());
    }
    if !k.is_finite() || (!allow_speedup && k >= 1.0) {
        k = 1.0;
    }
    let out = if k == 1.0 { seg.clone() } else { seg.dilate(k) };
    let (peak_speed, peak_accel) = out.peaks();
    (
        out,
        ScaleReport {
            dilation: k,
            peak_speed,
            peak_accel,
        },
    )
}

/// Slows a segment down uniformly until it respects both limits. Compliant
/// segments are returned unchanged, so no derivative peak ever grows.
pub fn scale_to_limits(seg: &TrajectorySegment, v_max: f64, a_max: f64) -> (TrajectorySegment, ScaleReport) {
    scale_with(seg, v_max, a_max, false)
}

/// Uniform time dilation that makes the tighter of the two limits active:
/// peak speed becomes `min(v_max, accel-limited speed)`.
pub fn fit_to_limits(seg: &TrajectorySegment, v_max: f64, a_max: f64) -> (TrajectorySegment, ScaleReport) {
    scale_with(seg, v_max, a_max, true)
}

fn quintic(from: &FlatPoint, to: &FlatPoint, duration: f64) -> [[f64; 3]; 6] {
    let t = duration;
    let mut c = [[0.0; 3]; 6];
    for i in 0..3 {
        let (c0, c1, c2) = (0.0, from.v[i] * t, 0.5 * from.a[i] * t * t);
        let d = to.p[i] - from.p[i] - (c0 + c1 + c2);
        let dv = to.v[i] * t - (c1 + 2.0 * c2);
        let da = to.a[i] * t * t - 2.0 * c2;
        c[0][i] = c0;
        c[1][i] = c1;
        c[2][i] = c2;
        c[3][i] = 10.0 * d - 4.0 * dv + 0.5 * da;
        c[4][i] = -15.0 * d + 7.0 * dv - da;
        c[5][i] = 6.0 * d - 3.0 * dv + 0.5 * da;
    }
    c
}

/// Quintic transition matching position, velocity and acceleration at both
/// ends.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendResult {
    pub segment: TrajectorySegment,
    /// Number of 10 % duration extensions applied to respect `a_max`.
    pub extensions: usize,
}

/// Blend with fixed end points. The duration grows by 10 % steps while the
/// blend's peak acceleration exceeds `a_max`.
pub fn takeoff_landing_blend(
    from: &FlatPoint,
    to: &FlatPoint,
    duration: f64,
    a_max: f64,
    direction: Direction,
) -> BlendResult {
    blend_with(duration, a_max, direction, |_| (*from, *to))
}

fn blend_with(
    duration: f64,
    a_max: f64,
    direction: Direction,
    ends: impl Fn(f64) -> (FlatPoint, FlatPoint),
) -> BlendResult {
    let mut t = duration;
    let mut extensions = 0;
    loop {
        let (from, to) = ends(t);
        let segment = TrajectorySegment {
            shape: Shape::Blend {
                coeffs: quintic(&from, &to, t),
            },
            origin: from.p,
            duration: t,
            mode: ModeAnnotation::ByAltitude(direction),
            yaw: YawMode::Heading,
        };
        let (_, peak) = segment.peaks();
        if peak <= a_max * (1.0 + 1e-9) || extensions >= MAX_EXTENSIONS {
            if extensions > 0 {
                warn!(
                    "blend extended {extensions} times to {t:.3} s to respect a_max = {a_max} m/s^2 (peak {peak:.3})"
                );
            }
            return BlendResult {
                segment,
                extensions,
            };
        }
        t *= BLEND_EXTENSION;
        extensions += 1;
    }
}

/// Vertical body thrust schedule for ground references.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroundThrust {
    /// Cruise thrust as a fraction of the weight.
    pub ratio: f64,
    /// Fraction of the weight reached at takeoff and left from at landing.
    pub liftoff_ratio: f64,
    /// Duration of the ramp before takeoff and after landing [s].
    pub ramp_time: f64,
}

impl Default for GroundThrust {
    fn default() -> Self {
        Self {
            ratio: 0.6,
            liftoff_ratio: 0.98,
            ramp_time: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacedSegment {
    pub segment: TrajectorySegment,
    pub t_start: f64,
    /// Heading held while the speed is too low to define one.
    pub held_yaw: f64,
}

/// Flat output at an instant, before the flatness transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatState {
    pub t: f64,
    pub derivs: [Vec3; 5],
    pub mode: Mode,
    pub held_yaw: f64,
    pub yaw: YawMode,
    pub thrust_z: [f64; 3],
}

/// Chained segments with a global clock starting at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridTrajectory {
    pub segments: Vec<PlacedSegment>,
    pub thrust: GroundThrust,
    pub contact_height: f64,
    weight: f64,
    takeoffs: Vec<f64>,
    landings: Vec<f64>,
}

enum Pending {
    Segment(TrajectorySegment),
    Blend { duration: f64, a_max: f64 },
}

/// Incremental construction of a [`HybridTrajectory`]; each segment starts
/// where the previous one ends.
pub struct TrajectoryBuilder {
    start: Vec3,
    initial_yaw: f64,
    thrust: GroundThrust,
    params: VehicleParams,
    items: Vec<Pending>,
}

impl TrajectoryBuilder {
    pub fn new(start: Vec3, params: &VehicleParams) -> Self {
        Self {
            start,
            initial_yaw: 0.0,
            thrust: GroundThrust::default(),
            params: *params,
            items: Vec::new(),
        }
    }

    pub fn initial_yaw(mut self, yaw: f64) -> Self {
        self.initial_yaw = yaw;
        self
    }

    pub fn ground_thrust(mut self, thrust: GroundThrust) -> Self {
        self.thrust = thrust;
        self
    }

    pub fn segment(mut self, seg: TrajectorySegment) -> Self {
        self.items.push(Pending::Segment(seg));
        self
    }

    /// Quintic transition to the next segment, which is raised or lowered to
    /// the altitude of its own start point. Other segments start where the
    /// previous one ends.
    pub fn blend(mut self, duration: f64, a_max: f64) -> Self {
        self.items.push(Pending::Blend { duration, a_max });
        self
    }

    pub fn build(self) -> Result<HybridTrajectory, TrajectoryError> {
        let contact = self.params.contact_height();
        let mut placed: Vec<TrajectorySegment> = Vec::new();
        let mut cursor = self.start;
        let mut items = self.items.into_iter().peekable();
        while let Some(item) = items.next() {
            match item {
                Pending::Segment(seg) => {
                    let seg = seg.placed_at(cursor);
                    cursor = seg.end().p;
                    placed.push(seg);
                }
                Pending::Blend { duration, a_max } => {
                    let next = match items.next() {
                        Some(Pending::Segment(s)) => s,
                        _ => return Err(TrajectoryError::DanglingBlend),
                    };
                    let prev = placed.last().ok_or(TrajectoryError::DanglingBlend)?;
                    let from = prev.end();
                    let to_local = next.start();
                    let altitude = next.start().p.z;
                    let direction = match (prev.mode, next.mode) {
                        (ModeAnnotation::Ground(d), _) | (_, ModeAnnotation::Ground(d)) => d,
                        _ => Direction::Forward,
                    };
                    let blend = blend_with(duration, a_max, direction, |t| {
                        let mut shift = (from.v + to_local.v) * (0.5 * t);
                        shift.z = altitude - from.p.z;
                        let to = FlatPoint {
                            p: from.p + shift,
                            v: to_local.v,
                            a: to_local.a,
                        };
                        (from, to)
                    });
                    let mut seg = blend.segment;
                    let ground_end = |p: &Vec3| p.z <= contact + LIFT_TOL;
                    seg.mode = match (ground_end(&from.p), ground_end(&seg.end().p)) {
                        (true, true) => ModeAnnotation::Ground(direction),
                        (false, false) => ModeAnnotation::Aerial,
                        _ => ModeAnnotation::ByAltitude(direction),
                    };
                    if let ModeAnnotation::Aerial = next.mode {
                        seg.yaw = next.yaw;
                    }
                    let end = seg.end().p;
                    placed.push(seg);
                    let next = next.placed_at(end);
                    cursor = next.end().p;
                    placed.push(next);
                }
            }
        }
        HybridTrajectory::from_segments(placed, self.thrust, &self.params, self.initial_yaw)
    }
}

impl HybridTrajectory {
    /// Wraps already placed segments, checking joint continuity.
    pub fn from_segments(
        segments: Vec<TrajectorySegment>,
        thrust: GroundThrust,
        params: &VehicleParams,
        initial_yaw: f64,
    ) -> Result<Self, TrajectoryError> {
        if segments.is_empty() {
            return Err(TrajectoryError::InvalidSegment {
                index: 0,
                reason: "trajectory has no segments".into(),
            });
        }
        let contact = params.contact_height();
        let mut placed = Vec::with_capacity(segments.len());
        let mut t = 0.0;
        let mut held = initial_yaw;
        let mut takeoffs = Vec::new();
        let mut landings = Vec::new();
        for (index, seg) in segments.into_iter().enumerate() {
            seg.validate(index)?;
            if let Some(prev) = placed.last() {
                let prev: &PlacedSegment = prev;
                let a = prev.segment.end();
                let b = seg.start();
                let dp = (a.p - b.p).norm();
                let dv = (a.v - b.v).norm();
                if dp > JOINT_TOL || dv > JOINT_TOL {
                    return Err(TrajectoryError::Discontinuity {
                        index,
                        position: dp,
                        velocity: dv,
                    });
                }
            }
            let start = seg.start();
            let end = seg.end();
            if start.v.xy().norm() >= SPEED_EPS {
                held = start.v.y.atan2(start.v.x);
                if let Some(Direction::Reverse) = annotation_direction(seg.mode) {
                    held = (-start.v.y).atan2(-start.v.x);
                }
            }
            if start.p.z <= contact + LIFT_TOL && end.p.z > contact + LIFT_TOL {
                takeoffs.push(t);
            }
            if start.p.z > contact + LIFT_TOL && end.p.z <= contact + LIFT_TOL {
                landings.push(t + seg.duration);
            }
            let duration = seg.duration;
            placed.push(PlacedSegment {
                segment: seg,
                t_start: t,
                held_yaw: held,
            });
            if end.v.xy().norm() >= SPEED_EPS {
                held = end.v.y.atan2(end.v.x);
            }
            t += duration;
        }
        Ok(Self {
            segments: placed,
            thrust,
            contact_height: contact,
            weight: params.weight(),
            takeoffs,
            landings,
        })
    }

    pub fn duration(&self) -> f64 {
        self.segments
            .last()
            .map_or(0.0, |s| s.t_start + s.segment.duration)
    }

    pub fn peaks(&self) -> (f64, f64) {
        self.segments.iter().fold((0.0f64, 0.0f64), |(v, a), s| {
            let (sv, sa) = s.segment.peaks();
            (v.max(sv), a.max(sa))
        })
    }

    fn locate(&self, t: f64) -> (&PlacedSegment, f64, bool) {
        let idx = self
            .segments
            .partition_point(|s| s.t_start <= t)
            .saturating_sub(1);
        let s = &self.segments[idx];
        let tau = t - s.t_start;
        if tau > s.segment.duration {
            (s, s.segment.duration, true)
        } else {
            (s, tau.max(0.0), false)
        }
    }

    fn ramp(&self, t: f64) -> Jet {
        let base = self.thrust.ratio;
        let peak = self.thrust.liftoff_ratio;
        let width = self.thrust.ramp_time;
        let mut best = Jet::constant(0.0);
        let mut consider = |x: Jet| {
            if x.v > best.v {
                best = x;
            }
        };
        for &t0 in &self.takeoffs {
            // Rises from 0 at t0 - width to 1 at t0.
            if t > t0 - width && t <= t0 + width {
                consider(smoothstep(Jet::new((t - (t0 - width)) / width, 1.0 / width, 0.0)));
            }
        }
        for &t1 in &self.landings {
            if t >= t1 - width && t < t1 + width {
                consider(smoothstep(Jet::new((t1 + width - t) / width, -1.0 / width, 0.0)));
            }
        }
        (Jet::constant(base) + best * (peak - base)) * self.weight
    }

    /// Flat output and annotations at global time `t`. Past the end the
    /// final position is held with zero derivatives.
    pub fn flat(&self, t: f64) -> FlatState {
        let (placed, tau, past_end) = self.locate(t);
        let seg = &placed.segment;
        let mut derivs = seg.derivs(tau);
        let mut held_yaw = placed.held_yaw;
        if past_end || t >= self.duration() {
            let end = seg.end();
            if end.v.xy().norm() >= SPEED_EPS {
                held_yaw = end.v.y.atan2(end.v.x);
            }
            derivs = [derivs[0], Vec3::zeros(), Vec3::zeros(), Vec3::zeros(), Vec3::zeros()];
        }
        let mode = match seg.mode {
            ModeAnnotation::Aerial => Mode::Aerial,
            ModeAnnotation::Ground(d) => Mode::Ground(d),
            ModeAnnotation::ByAltitude(d) => {
                if derivs[0].z > self.contact_height + LIFT_TOL {
                    Mode::Aerial
                } else {
                    Mode::Ground(d)
                }
            }
        };
        let thrust = self.ramp(t);
        FlatState {
            t,
            derivs,
            mode,
            held_yaw,
            yaw: seg.yaw,
            thrust_z: [thrust.v, thrust.d1, thrust.d2],
        }
    }

    /// Reference point at `t` through the mode's flatness transform. Inputs
    /// are clamped to the actuator limits (flagged) when `clamp` is set and
    /// rejected otherwise.
    pub fn reference(&self, t: f64, params: &VehicleParams, clamp: bool) -> Result<ReferencePoint, FlatnessError> {
        let f = self.flat(t);
        let mut rp = match f.mode {
            Mode::Ground(direction) => {
                let moving = f.derivs[1].xy().norm() >= SPEED_EPS;
                let mut derivs = f.derivs;
                derivs[0].z = self.contact_height;
                for d in derivs.iter_mut().skip(1) {
                    d.z = 0.0;
                }
                ground_flat_to_reference_unchecked(
                    &FlatSampleGround {
                        t,
                        derivs,
                        thrust_z: f.thrust_z,
                        direction,
                        yaw_hint: if moving { None } else { Some(f.held_yaw) },
                    },
                    params,
                )?
            }
            Mode::Aerial => {
                let yaw = match f.yaw {
                    YawMode::Fixed(y) => [y, 0.0, 0.0],
                    YawMode::Heading => heading_jet(&f.derivs).unwrap_or([f.held_yaw, 0.0, 0.0]),
                };
                aerial_flat_to_reference_unchecked(
                    &FlatSampleAerial {
                        t,
                        derivs: f.derivs,
                        yaw,
                    },
                    params,
                )?
            }
        };
        if let Err(source) = rp.input.check_bounds(params) {
            if !clamp {
                return Err(FlatnessError::InputBounds { t, source });
            }
            rp.input = rp.input.clamped(params);
            rp.flags.clamped = true;
        }
        Ok(rp)
    }
}

fn annotation_direction(mode: ModeAnnotation) -> Option<Direction> {
    match mode {
        ModeAnnotation::Ground(d) | ModeAnnotation::ByAltitude(d) => Some(d),
        ModeAnnotation::Aerial => None,
    }
}

fn smoothstep(x: Jet) -> Jet {
    if x.v <= 0.0 {
        return Jet::constant(0.0);
    }
    if x.v >= 1.0 {
        return Jet::constant(1.0);
    }
    // 10 x^3 - 15 x^4 + 6 x^5
    let x2 = x * x;
    let x3 = x2 * x;
    x3 * 10.0 - x3 * x * 15.0 + x3 * x2 * 6.0
}

/// Heading of the horizontal velocity with two derivatives.
fn heading_jet(derivs: &[Vec3; 5]) -> Option<[f64; 3]> {
    if derivs[1].xy().norm() < SPEED_EPS {
        return None;
    }
    let vx = Jet::new(derivs[1].x, derivs[2].x, derivs[3].x);
    let vy = Jet::new(derivs[1].y, derivs[2].y, derivs[3].y);
    let h = vy.atan2(vx);
    Some([h.v, h.d1, h.d2])
}

/// `K + 1` references at `t0, t0 + dt, ...`; infeasible samples fail with
/// their index unless `clamp` allows clamping the inputs.
pub fn sample_references(
    traj: &HybridTrajectory,
    t0: f64,
    k: usize,
    dt: f64,
    params: &VehicleParams,
    clamp: bool,
) -> Result<Vec<ReferencePoint>, TrajectoryError> {
    (0..=k)
        .map(|i| {
            traj.reference(t0 + i as f64 * dt, params, clamp)
                .map_err(|source| TrajectoryError::Flatness { index: i, source })
        })
        .collect()
}
