use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::shapes::{cuboid, floor_quad};
use crate::geometry::{sample_surface, PointCloud, TriMesh, Vec3};

use super::DataError;

/// Axis-aligned box standing in for a piece of furniture.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cuboid {
    pub center: Vec3,
    pub half: Vec3,
}

impl Cuboid {
    /// Box resting on the floor.
    pub fn on_floor(x: f64, z: f64, half: Vec3) -> Cuboid {
        Cuboid { center: Vec3::new(x, half.y, z), half }
    }

    pub fn top(&self) -> f64 {
        self.center.y + self.half.y
    }

    /// Whether `(x, z)` lies over the footprint grown by `margin`.
    pub fn covers(&self, x: f64, z: f64, margin: f64) -> bool {
        (x - self.center.x).abs() <= self.half.x + margin && (z - self.center.z).abs() <= self.half.z + margin
    }

    /// Horizontal distance from `(x, z)` to the footprint (0 inside).
    pub fn footprint_distance(&self, x: f64, z: f64) -> f64 {
        let dx = ((x - self.center.x).abs() - self.half.x).max(0.0);
        let dz = ((z - self.center.z).abs() - self.half.z).max(0.0);
        dx.hypot(dz)
    }
}

/// Floor rectangle centered on the origin plus furniture.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub half_x: f64,
    pub half_z: f64,
    pub cuboids: Vec<Cuboid>,
}

impl SceneSpec {
    pub fn floor_only(half_x: f64, half_z: f64) -> SceneSpec {
        SceneSpec { half_x, half_z, cuboids: Vec::new() }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.half_x > 0.0 && self.half_z > 0.0) {
            return Err(DataError::Scene("floor extents must be positive".into()));
        }
        for (i, c) in self.cuboids.iter().enumerate() {
            if !(c.half.x > 0.0 && c.half.y > 0.0 && c.half.z > 0.0) {
                return Err(DataError::Scene(format!("cuboid {i} has a non-positive half extent")));
            }
            if c.center.y - c.half.y < -1e-12 {
                return Err(DataError::Scene(format!("cuboid {i} reaches below the floor")));
            }
            let eps = 1e-12;
            if c.center.x.abs() + c.half.x > self.half_x + eps || c.center.z.abs() + c.half.z > self.half_z + eps {
                return Err(DataError::Scene(format!("cuboid {i} extends past the floor")));
            }
        }
        Ok(())
    }

    /// A room of half extent 0.7 to 0.9 with one to three pieces of furniture
    /// 0.2 to 0.5 tall, spaced so there is room to walk between them.
    pub fn random(seed: u64) -> SceneSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let half_x = rng.random_range(0.6..0.75);
        let half_z = rng.random_range(0.6..0.75);
        let wanted = rng.random_range(1..=2);
        let mut cuboids: Vec<Cuboid> = Vec::new();
        for _ in 0..200 {
            if cuboids.len() == wanted {
                break;
            }
            let half = Vec3::new(rng.random_range(0.13..0.2), rng.random_range(0.08..0.2), rng.random_range(0.13..0.2));
            let x = rng.random_range(-(half_x - half.x - 0.05)..(half_x - half.x - 0.05));
            let z = rng.random_range(-(half_z - half.z - 0.05)..(half_z - half.z - 0.05));
            let c = Cuboid::on_floor(x, z, half);
            let spaced = cuboids.iter().all(|o| {
                let gx = (c.center.x - o.center.x).abs() - c.half.x - o.half.x;
                let gz = (c.center.z - o.center.z).abs() - c.half.z - o.half.z;
                gx.max(gz) >= 0.35
            });
            if spaced {
                cuboids.push(c);
            }
        }
        SceneSpec { half_x, half_z, cuboids }
    }
}

/// Background geometry and its fixed surface sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub spec: SceneSpec,
    /// translation applied to the geometry described by `spec`
    pub offset: Vec3,
    pub mesh: TriMesh,
    pub points: PointCloud,
}

impl Scene {
    /// Height of the highest surface under `(x, z)`; 0 on bare floor.
    pub fn support_height(&self, x: f64, z: f64) -> f64 {
        let (x, z) = (x - self.offset.x, z - self.offset.z);
        self.offset.y + self.spec.cuboids.iter().filter(|c| c.covers(x, z, 0.0)).map(Cuboid::top).fold(0.0, f64::max)
    }

    /// Height of the floor.
    pub fn floor_height(&self) -> f64 {
        self.offset.y
    }

    /// The scene moved by `t`.
    pub fn translated(&self, t: Vec3) -> Scene {
        Scene {
            spec: self.spec.clone(),
            offset: self.offset + t,
            mesh: self.mesh.map_vertices(|v| v + t),
            points: self.points.translated(t),
        }
    }

    /// Cuboid whose top holds `(x, z)`, if any.
    pub fn cuboid_under(&self, x: f64, z: f64) -> Option<usize> {
        let (x, z) = (x - self.offset.x, z - self.offset.z);
        self.spec.cuboids.iter().position(|c| c.covers(x, z, 0.0))
    }

    /// Whether a body at `(x, z)` on the floor keeps `margin` from the walls
    /// and every piece of furniture.
    pub fn floor_is_free(&self, x: f64, z: f64, margin: f64) -> bool {
        let (x, z) = (x - self.offset.x, z - self.offset.z);
        x.abs() <= self.spec.half_x - margin
            && z.abs() <= self.spec.half_z - margin
            && self.spec.cuboids.iter().all(|c| !c.covers(x, z, margin))
    }
}

/// Triangulates the floor and furniture and samples `n_bg` surface points.
pub fn generate_scene(spec: &SceneSpec, n_bg: usize, seed: u64) -> Result<Scene, DataError> {
    spec.validate()?;
    let mut mesh = floor_quad(spec.half_x, spec.half_z, 0.0);
    for c in &spec.cuboids {
        mesh.merge(&cuboid(c.center, c.half));
    }
    let points = sample_surface(&mesh, n_bg, seed)?;
    Ok(Scene { spec: spec.clone(), offset: Vec3::ZERO, mesh, points })
}
