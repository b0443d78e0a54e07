use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{chamfer_transformed, NnIndex, RigidTransform, UnitQuat, Vec3};
use crate::motion_vae::BehaviorTag;
use crate::skeleton::ArticulationFrame;

use super::quadruped::{ankle, hip, knee, NECK, NUM_JOINTS, NUM_LEGS, SPINE_MID, TAIL};
use super::{DataError, Quadruped, Scene};

/// What [`generate_motion`] synthesizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Behavior {
    Walk,
    Idle,
    /// one jump onto (or off) the nearest reachable furniture, then idle
    Jump,
    /// random sequence of walks, idles and jumps
    Mixed,
}

/// Kinematic constants of the motion oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSpec {
    pub fps: f64,
    pub walk_speed: f64,
    pub stride_hz: f64,
    /// peak random turning rate while walking, rad/s
    pub turn_rate: f64,
    /// knee flex at mid-swing, rad
    pub swing_lift: f64,
    pub idle_amplitude: f64,
    /// tallest step up or down a jump may take
    pub max_jump: f64,
    /// horizontal speed in flight
    pub jump_speed: f64,
    /// apex height of the soles above the higher surface
    pub jump_clearance: f64,
    /// hip flex at the bottom of a crouch, rad
    pub crouch: f64,
    /// largest mean distance from the limb points to the scene samples a
    /// grounded pose may have; walks steer around sparser spots
    pub max_contact: f64,
    /// limb points used for the contact check
    pub contact_points: usize,
}

impl Default for MotionSpec {
    fn default() -> Self {
        MotionSpec {
            fps: 30.0,
            walk_speed: 0.3,
            stride_hz: 2.0,
            turn_rate: 1.2,
            swing_lift: 0.5,
            idle_amplitude: 0.03,
            max_jump: 0.55,
            jump_speed: 1.2,
            jump_clearance: 0.12,
            crouch: 0.5,
            max_contact: 0.045,
            contact_points: 256,
        }
    }
}

/// Starting place on the floor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Start {
    pub x: f64,
    pub z: f64,
    pub heading: f64,
}

/// A long synthetic motion in one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionRecord {
    pub scene: usize,
    pub fps: f64,
    /// `G_0 … G_L`
    pub trajectory: Vec<RigidTransform>,
    /// `A_0 … A_L`
    pub articulations: Vec<ArticulationFrame>,
    /// behavior of every frame
    pub tags: Vec<BehaviorTag>,
}

impl MotionRecord {
    /// Number of steps `L` (one less than the number of frames).
    pub fn len(&self) -> usize {
        self.trajectory.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Maximal runs of equal tags as `(tag, first frame, frame count)`.
    pub fn segments(&self) -> Vec<(BehaviorTag, usize, usize)> {
        let mut out: Vec<(BehaviorTag, usize, usize)> = Vec::new();
        for (i, &t) in self.tags.iter().enumerate() {
            match out.last_mut() {
                Some(last) if last.0 == t => last.2 += 1,
                _ => out.push((t, i, 1)),
            }
        }
        out
    }
}

fn heading_dir(psi: f64) -> (f64, f64) {
    (psi.sin(), psi.cos())
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(TAU) - PI
}

fn smoothstep(s: f64) -> f64 {
    s * s * (3.0 - 2.0 * s)
}

/// Quadratic `y(s)` through `y(0) = a` and `y(1) = b` peaking at `peak`.
fn arc_height(a: f64, b: f64, peak: f64, s: f64) -> f64 {
    let d = b - a;
    let e = (peak - a).max(d.max(0.0));
    let k = 2.0 * e - d + ((2.0 * e - d).powi(2) - d * d).max(0.0).sqrt();
    a + d * s + k * s * (1.0 - s)
}

#[derive(Clone, Copy, Default)]
struct Legs {
    hip: [f64; NUM_LEGS],
    knee: [f64; NUM_LEGS],
}

impl Legs {
    fn crouched(alpha: f64) -> Legs {
        Legs { hip: [alpha; NUM_LEGS], knee: [-2.0 * alpha; NUM_LEGS] }
    }
}

fn grounded(quad: &Quadruped, limb: &[Vec3], index: &NnIndex, spec: &MotionSpec, at: (f64, f64, f64, f64)) -> bool {
    let (x, z, psi, support) = at;
    let g = RigidTransform::new(UnitQuat::from_yaw(psi), Vec3::new(x, support + quad.stand_height(), z));
    chamfer_transformed(&g, limb, index) < spec.max_contact
}

struct Synth<'a> {
    scene: &'a Scene,
    quad: &'a Quadruped,
    spec: &'a MotionSpec,
    rng: ChaCha8Rng,
    x: f64,
    z: f64,
    support: f64,
    heading: f64,
    phase: f64,
    time: f64,
    turn: [(f64, f64, f64); 2],
    limit: usize,
    started: bool,
    limb: Vec<Vec3>,
    index: NnIndex,
    rec: MotionRecord,
}

const WALK_MARGIN: f64 = 0.2;
const LOOKAHEAD: f64 = 0.25;
const MAX_TURN: f64 = 0.12;
const TROT_OFFSETS: [f64; NUM_LEGS] = [0.0, PI, PI, 0.0];

impl<'a> Synth<'a> {
    fn dt(&self) -> f64 {
        1.0 / self.spec.fps
    }

    fn full(&self) -> bool {
        self.rec.trajectory.len() >= self.limit
    }

    fn drop_for(&self, alpha: f64) -> f64 {
        2.0 * self.quad.spec.leg_segment * (1.0 - alpha.cos())
    }

    fn frame(&self, legs: Legs, spine: f64, neck: f64, tail: f64) -> ArticulationFrame {
        let mut rot = vec![Vec3::ZERO; NUM_JOINTS];
        rot[SPINE_MID] = Vec3::new(spine, 0.0, 0.0);
        rot[NECK] = Vec3::new(neck, 0.0, 0.0);
        rot[TAIL] = Vec3::new(0.0, tail, 0.0);
        for l in 0..NUM_LEGS {
            rot[hip(l)] = Vec3::new(legs.hip[l], 0.0, 0.0);
            rot[knee(l)] = Vec3::new(legs.knee[l], 0.0, 0.0);
            rot[ankle(l)] = Vec3::new(-(legs.hip[l] + legs.knee[l]), 0.0, 0.0);
        }
        ArticulationFrame::new(rot)
    }

    fn push(&mut self, body_y: f64, art: ArticulationFrame, tag: BehaviorTag) {
        if !self.started {
            self.rec.tags[0] = tag;
            self.started = true;
        }
        if self.full() {
            return;
        }
        let g = RigidTransform::new(UnitQuat::from_yaw(self.heading), Vec3::new(self.x, body_y, self.z));
        self.rec.trajectory.push(g);
        self.rec.articulations.push(art);
        self.rec.tags.push(tag);
        self.time += self.dt();
    }

    fn breathing(&self) -> (f64, f64) {
        let e = self.spec.idle_amplitude;
        let w = TAU * 0.25 * self.time;
        (e * w.sin(), 0.8 * e * (w + 1.0).sin())
    }

    fn idle(&mut self, frames: usize) {
        for _ in 0..frames {
            if self.full() {
                return;
            }
            let (spine, neck) = self.breathing();
            let art = self.frame(Legs::default(), spine, neck, 0.0);
            self.push(self.support + self.quad.stand_height(), art, BehaviorTag::Idle);
        }
    }

    /// Whether a standing pose at `(x, z)` on `support` keeps the feet within
    /// `max_contact` of the scene samples.
    fn grounded(&self, x: f64, z: f64, psi: f64, support: f64) -> bool {
        grounded(self.quad, &self.limb, &self.index, self.spec, (x, z, psi, support))
    }

    fn step_is_free(&self, psi: f64, dist: f64) -> bool {
        let (dx, dz) = heading_dir(psi);
        self.scene.floor_is_free(self.x + dx * dist, self.z + dz * dist, WALK_MARGIN)
            && self.scene.floor_is_free(self.x + dx * (dist + LOOKAHEAD), self.z + dz * (dist + LOOKAHEAD), WALK_MARGIN)
            && self.grounded(self.x + dx * dist, self.z + dz * dist, psi, self.support)
    }

    /// Walks on the floor; with a goal, steers towards it and stops within
    /// `stop` of it. Returns whether the goal was reached.
    fn walk(&mut self, frames: usize, goal: Option<(f64, f64, f64)>) -> bool {
        let v = self.spec.walk_speed;
        let omega = TAU * self.spec.stride_hz;
        let leg = 2.0 * self.quad.spec.leg_segment;
        let amp = v / (leg * omega);
        for _ in 0..frames {
            if self.full() {
                return false;
            }
            if let Some((gx, gz, stop)) = goal {
                if (gx - self.x).hypot(gz - self.z) <= stop {
                    return true;
                }
            }
            let dt = self.dt();
            let desired = match goal {
                Some((gx, gz, _)) => (gx - self.x).atan2(gz - self.z),
                None => {
                    let rate: f64 = self.turn.iter().map(|(a, f, p)| a * (TAU * f * self.time + p).sin()).sum();
                    self.heading + rate * self.spec.turn_rate * dt
                }
            };
            let step = v * dt;
            // closest free heading to the desired one
            let mut target = None;
            for k in 0..=64 {
                let off = (k as f64 / 2.0).ceil() * if k % 2 == 0 { 1.0 } else { -1.0 } * (PI / 32.0);
                let cand = desired + off;
                if self.step_is_free(cand, step) {
                    target = Some(cand);
                    break;
                }
            }
            let mut moved = false;
            if let Some(t) = target {
                let diff = wrap_angle(t - self.heading);
                let psi = wrap_angle(self.heading + diff.clamp(-MAX_TURN, MAX_TURN));
                let (dx, dz) = heading_dir(psi);
                let (nx, nz) = (self.x + dx * step, self.z + dz * step);
                let boxed_in = !self.scene.floor_is_free(self.x, self.z, WALK_MARGIN);
                if self.step_is_free(psi, step) || (boxed_in && self.grounded(nx, nz, psi, self.support)) {
                    self.heading = psi;
                    self.x = nx;
                    self.z = nz;
                    moved = true;
                } else if self.grounded(self.x, self.z, psi, self.support) {
                    self.heading = psi;
                }
            }
            if moved {
                self.phase += omega * dt;
            }
            let mut legs = Legs::default();
            for l in 0..NUM_LEGS {
                let p = self.phase + TROT_OFFSETS[l];
                legs.hip[l] = amp * p.sin();
                legs.knee[l] = self.spec.swing_lift * (-p.cos()).max(0.0);
            }
            let art = self.frame(legs, 0.02 * (2.0 * self.phase).sin(), 0.03 * (2.0 * self.phase).cos(), 0.25 * self.phase.sin());
            self.push(self.support + self.quad.stand_height(), art, BehaviorTag::Walk);
        }
        false
    }

    /// Crouch, ballistic flight and landing onto `(tx, tz)` at height `h1`.
    fn jump_to(&mut self, tx: f64, tz: f64, h1: f64) {
        const CROUCH_FRAMES: usize = 8;
        let h0 = self.support;
        let stand = self.quad.stand_height();
        let crouch = self.spec.crouch;
        let turn = wrap_angle((tx - self.x).atan2(tz - self.z) - self.heading);
        let psi0 = self.heading;
        for k in 1..=CROUCH_FRAMES {
            let s = smoothstep(k as f64 / CROUCH_FRAMES as f64);
            let a = crouch * s;
            self.heading = wrap_angle(psi0 + turn * s);
            let art = self.frame(Legs::crouched(a), -0.1 * s, 0.1 * s, 0.0);
            self.push(h0 + stand - self.drop_for(a), art, BehaviorTag::Jump);
        }
        let (x0, z0) = (self.x, self.z);
        let dist = (tx - x0).hypot(tz - z0);
        let flight = ((dist / (self.spec.jump_speed * self.dt())).ceil() as usize).max(8);
        let low = self.drop_for(crouch);
        let (y0, y1) = (h0 + stand - low, h1 + stand - low);
        let peak = h0.max(h1) + stand + self.spec.jump_clearance;
        for k in 1..=flight {
            let s = k as f64 / flight as f64;
            self.x = x0 + (tx - x0) * s;
            self.z = z0 + (tz - z0) * s;
            let tuck = crouch * (0.5 + 0.5 * (TAU * s).cos()).max(0.3);
            let art = self.frame(Legs::crouched(tuck), 0.1 * (PI * s).sin(), -0.1, 0.3 * (PI * s).sin());
            self.push(arc_height(y0, y1, peak, s), art, BehaviorTag::Jump);
        }
        self.support = h1;
        for k in 1..=CROUCH_FRAMES {
            let a = crouch * (1.0 - smoothstep(k as f64 / CROUCH_FRAMES as f64));
            let art = self.frame(Legs::crouched(a), -0.1 * a / crouch, 0.1 * a / crouch, 0.0);
            self.push(h1 + stand - self.drop_for(a), art, BehaviorTag::Jump);
        }
    }

    /// Nearest furniture whose top is within jumping range, with its distance.
    fn jump_up_target(&self) -> Result<(usize, f64), DataError> {
        let mut best: Option<(usize, f64)> = None;
        let mut lowest = f64::INFINITY;
        for (i, c) in self.scene.spec.cuboids.iter().enumerate() {
            lowest = lowest.min(c.top() - self.support);
            if c.top() - self.support > self.spec.max_jump {
                continue;
            }
            let d = c.footprint_distance(self.x, self.z);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.ok_or(DataError::UnreachableJump { gap: lowest, max: self.spec.max_jump })
    }

    /// Approaches and jumps onto the nearest reachable furniture; false if it
    /// could not get close enough.
    fn jump_up(&mut self) -> Result<bool, DataError> {
        let (i, _) = self.jump_up_target()?;
        let c = self.scene.spec.cuboids[i];
        let reach = 0.35;
        if c.footprint_distance(self.x, self.z) > reach {
            // aim for the closest point just outside the footprint
            let px = self.x.clamp(c.center.x - c.half.x, c.center.x + c.half.x);
            let pz = self.z.clamp(c.center.z - c.half.z, c.center.z + c.half.z);
            self.walk(150, Some((px, pz, reach)));
        }
        if self.full() || c.footprint_distance(self.x, self.z) > reach + 0.05 {
            return Ok(false);
        }
        let spots = [(0.0, 0.0), (0.3, 0.0), (-0.3, 0.0), (0.0, 0.3), (0.0, -0.3), (0.3, 0.3), (-0.3, -0.3), (0.3, -0.3), (-0.3, 0.3)];
        for (fx, fz) in spots {
            let (tx, tz) = (c.center.x + fx * c.half.x, c.center.z + fz * c.half.z);
            let psi = (tx - self.x).atan2(tz - self.z);
            if self.grounded(tx, tz, psi, c.top()) {
                self.jump_to(tx, tz, c.top());
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// Jumps from furniture down to free floor; false if no landing spot.
    fn jump_down(&mut self) -> Result<bool, DataError> {
        let Some(i) = self.scene.cuboid_under(self.x, self.z) else { return Ok(false) };
        let c = self.scene.spec.cuboids[i];
        if self.support > self.spec.max_jump {
            return Err(DataError::UnreachableJump { gap: self.support, max: self.spec.max_jump });
        }
        for k in 0..16 {
            let off = (k as f64 / 2.0).ceil() * if k % 2 == 0 { 1.0 } else { -1.0 } * (PI / 8.0);
            let (dx, dz) = heading_dir(self.heading + off);
            let exit_x = if dx.abs() > 1e-9 { (c.half.x + (c.center.x - self.x) * dx.signum()) / dx.abs() } else { f64::INFINITY };
            let exit_z = if dz.abs() > 1e-9 { (c.half.z + (c.center.z - self.z) * dz.signum()) / dz.abs() } else { f64::INFINITY };
            let d = exit_x.min(exit_z) + 0.3;
            let (tx, tz) = (self.x + dx * d, self.z + dz * d);
            if self.scene.floor_is_free(tx, tz, WALK_MARGIN + 0.02) && self.grounded(tx, tz, self.heading + off, 0.0) {
                self.jump_to(tx, tz, 0.0);
                return Ok(true);
            }
        }
        Ok(false)
    }

    fn jump(&mut self) -> Result<bool, DataError> {
        if self.support > 0.0 {
            self.jump_down()
        } else {
            self.jump_up()
        }
    }

    fn mixed(&mut self) -> Result<(), DataError> {
        while !self.full() {
            let r: f64 = self.rng.random();
            if self.support > 0.0 {
                let n = self.rng.random_range(15..40);
                self.idle(n);
                if !self.jump_down()? {
                    self.idle(30);
                }
            } else if r < 0.45 || self.scene.spec.cuboids.is_empty() {
                let n = self.rng.random_range(45..120);
                self.walk(n, None);
            } else if r < 0.65 {
                let n = self.rng.random_range(20..50);
                self.idle(n);
            } else {
                let jumped = match self.jump_up() {
                    Ok(j) => j,
                    Err(DataError::UnreachableJump { .. }) => false,
                    Err(e) => return Err(e),
                };
                if !jumped {
                    self.walk(45, None);
                }
            }
        }
        Ok(())
    }
}

/// Kinematic oracle: a `frames`-step motion of `quad` in `scene`.
///
/// Walking advances along a smooth random path at constant speed with a trot
/// gait, the body at floor height plus the stand height. Jumps crouch, follow
/// a parabola between the two surfaces, and land. Idle holds the pose and
/// breathes through the spine and neck.
pub fn generate_motion(
    scene: &Scene,
    quad: &Quadruped,
    behavior: Behavior,
    frames: usize,
    start: Option<Start>,
    spec: &MotionSpec,
    seed: u64,
) -> Result<MotionRecord, DataError> {
    if scene.offset != Vec3::ZERO {
        let base = scene.translated(-scene.offset);
        let start = start.map(|s| Start { x: s.x - scene.offset.x, z: s.z - scene.offset.z, ..s });
        let mut rec = generate_motion(&base, quad, behavior, frames, start, spec, seed)?;
        for g in &mut rec.trajectory {
            g.translation = g.translation + scene.offset;
        }
        return Ok(rec);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let limb = quad.limb_points(spec.contact_points)?.points().to_vec();
    let index = NnIndex::build(&scene.points);
    let start = match start {
        Some(s) => s,
        None => {
            let mut found = None;
            for _ in 0..200 {
                let s = random_start(scene, &mut rng)?;
                if grounded(quad, &limb, &index, spec, (s.x, s.z, s.heading, scene.support_height(s.x, s.z))) {
                    found = Some(s);
                    break;
                }
            }
            found.ok_or_else(|| DataError::Scene("no grounded start on the floor".into()))?
        }
    };
    let turn = [
        (rng.random_range(0.5..1.0), rng.random_range(0.05..0.2), rng.random_range(0.0..TAU)),
        (rng.random_range(0.2..0.5), rng.random_range(0.2..0.5), rng.random_range(0.0..TAU)),
    ];
    let support = scene.support_height(start.x, start.z);
    let mut synth = Synth {
        scene,
        quad,
        spec,
        rng,
        x: start.x,
        z: start.z,
        support,
        heading: start.heading,
        phase: 0.0,
        time: 0.0,
        turn,
        limit: frames + 1,
        started: false,
        limb,
        index,
        rec: MotionRecord { scene: 0, fps: spec.fps, trajectory: Vec::new(), articulations: Vec::new(), tags: Vec::new() },
    };
    let g0 = RigidTransform::new(UnitQuat::from_yaw(start.heading), Vec3::new(start.x, support + quad.stand_height(), start.z));
    synth.rec.trajectory.push(g0);
    let (spine, neck) = synth.breathing();
    let a0 = match behavior {
        Behavior::Idle => synth.frame(Legs::default(), spine, neck, 0.0),
        _ => synth.frame(Legs::default(), 0.0, 0.0, 0.0),
    };
    synth.rec.articulations.push(a0);
    synth.rec.tags.push(BehaviorTag::Idle);
    synth.time += synth.dt();
    match behavior {
        Behavior::Walk => {
            synth.walk(frames, None);
        }
        Behavior::Idle => synth.idle(frames),
        Behavior::Jump => {
            synth.jump_up_target().or_else(|e| if support > 0.0 { Ok((0, 0.0)) } else { Err(e) })?;
            synth.jump()?;
            while !synth.full() {
                synth.idle(frames);
            }
        }
        Behavior::Mixed => synth.mixed()?,
    }
    // a walk blocked on every side stands still; pad so the length is exact
    while !synth.full() {
        synth.idle(1);
    }
    Ok(synth.rec)
}

/// Random free spot on the floor with a random heading.
pub fn random_start(scene: &Scene, rng: &mut impl Rng) -> Result<Start, DataError> {
    let (hx, hz) = (scene.spec.half_x - 0.25, scene.spec.half_z - 0.25);
    for _ in 0..10_000 {
        let x = scene.offset.x + rng.random_range(-hx..hx);
        let z = scene.offset.z + rng.random_range(-hz..hz);
        if scene.floor_is_free(x, z, WALK_MARGIN + 0.05) {
            return Ok(Start { x, z, heading: rng.random_range(-PI..PI) });
        }
    }
    Err(DataError::Scene("no free floor to start on".into()))
}
