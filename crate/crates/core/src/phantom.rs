//! Synthetic CTA-like aneurysm phantoms with exact ground truth.
//!
//! The outer wall is an elliptical tube along z whose cross-section swells
//! into an ellipsoidal sac and narrows to the aortic neck elsewhere. The
//! lumen (one channel before repair, two stent-graft channels after) sits
//! inside it; the rest of the tube is thrombus. A vertebra and bowel loops
//! act as confounders and are kept a fixed gap away from the wall.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volcore::{BinaryMask3D, Geometry, Stage, Volume3D, VolumeError};
use crate::volio::{self, ElementType, IoError};

const DEFAULT_SPEC_V1: &str = include_str!("../data/phantom_default_v1.json");

pub const MANIFEST_FILE: &str = "manifest.csv";
const MANIFEST_HEADER: &str = "case_id,stage,seed,spec_hash,image,mask";

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("invalid phantom spec: {0}")]
    Spec(String),
    #[error("lumen does not fit inside the wall: {0}")]
    LumenOutsideThrombus(String),
    #[error("malformed cohort manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intensities {
    pub lumen: f64,
    pub thrombus: f64,
    pub vertebra: f64,
    pub bowel: f64,
    pub background: f64,
    pub stent: f64,
}

/// Ranges are `[min, max]` and are sampled uniformly per phantom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub version: u32,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Largest in-plane semi-axis of the sac.
    pub sac_radius_mm: [f64; 2],
    /// Sac half-length along z.
    pub sac_half_length_mm: [f64; 2],
    /// Minor/major semi-axis ratio of the sac is `sqrt(1 - e^2)`.
    pub eccentricity: [f64; 2],
    pub neck_radius_mm: [f64; 2],
    /// Single pre-repair lumen; `[0, 0]` leaves the tube without lumen.
    pub lumen_radius_mm: [f64; 2],
    /// Lumen displacement as a fraction of the free room inside the wall.
    pub lumen_offset: [f64; 2],
    /// Post-repair stent-graft channels.
    pub channel_radius_mm: [f64; 2],
    /// Center-to-center distance of the two channels.
    pub channel_separation_mm: [f64; 2],
    /// Amplitude of a sinusoidal x displacement of the centerline.
    pub waviness_mm: [f64; 2],
    pub center_jitter_mm: f64,
    pub vertebra_radius_mm: [f64; 2],
    pub bowel_radius_mm: [f64; 2],
    pub bowel_count: usize,
    /// Minimum background distance between confounders and the wall.
    pub confounder_gap_mm: f64,
    pub intensity: Intensities,
    pub noise_sigma: f64,
    /// Fraction of the outer channel ring replaced by stent metal.
    pub stent_density: f64,
    pub confounders: bool,
    pub stage: Stage,
    pub seed: u64,
}

impl PhantomSpec {
    /// The pinned default difficulty (`data/phantom_default_v1.json`).
    pub fn default_v1() -> Self {
        serde_json::from_str(DEFAULT_SPEC_V1).expect("bundled phantom spec parses")
    }

    pub fn from_json(text: &str) -> Result<Self, PhantomError> {
        let spec: Self = serde_json::from_str(text).map_err(|e| PhantomError::Spec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    /// CRC32 of the compact JSON form.
    pub fn hash(&self) -> String {
        format!("{:08x}", crc32fast::hash(serde_json::to_string(self).expect("spec serializes").as_bytes()))
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        let bad = |m: String| Err(PhantomError::Spec(m));
        if self.dims.iter().any(|&d| d == 0) {
            return bad(format!("dims must be positive: {:?}", self.dims));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return bad(format!("spacing must be positive: {:?}", self.spacing));
        }
        let ranges = [
            ("sac_radius_mm", self.sac_radius_mm),
            ("sac_half_length_mm", self.sac_half_length_mm),
            ("eccentricity", self.eccentricity),
            ("neck_radius_mm", self.neck_radius_mm),
            ("lumen_radius_mm", self.lumen_radius_mm),
            ("lumen_offset", self.lumen_offset),
            ("channel_radius_mm", self.channel_radius_mm),
            ("channel_separation_mm", self.channel_separation_mm),
            ("waviness_mm", self.waviness_mm),
            ("vertebra_radius_mm", self.vertebra_radius_mm),
            ("bowel_radius_mm", self.bowel_radius_mm),
        ];
        for (name, [lo, hi]) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
                return bad(format!("{name} must be a range 0 <= min <= max, got [{lo}, {hi}]"));
            }
        }
        if self.eccentricity[1] >= 1.0 || self.lumen_offset[1] > 1.0 {
            return bad("eccentricity must be < 1 and lumen offset <= 1".into());
        }
        if self.sac_half_length_mm[0] <= 0.0 || self.sac_radius_mm[0] <= 0.0 {
            return bad("sac radius and half-length must be positive".into());
        }
        if !(self.noise_sigma >= 0.0) || !(0.0..=1.0).contains(&self.stent_density) || !(self.confounder_gap_mm >= 0.0) {
            return bad("noise, stent density and confounder gap out of range".into());
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<Geometry, VolumeError> {
        Geometry::new(self.dims, self.spacing, [0.0; 3])
    }
}

/// One concrete draw from a spec, all lengths in mm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomShape {
    pub stage: Stage,
    pub center: [f64; 2],
    pub sac_z: f64,
    pub sac_radius: f64,
    pub sac_half_length: f64,
    pub eccentricity: f64,
    pub orientation: f64,
    pub neck_radius: f64,
    pub lumen_radius: f64,
    pub lumen_offset: f64,
    pub lumen_direction: f64,
    pub channel_radius: f64,
    pub channel_separation: f64,
    pub waviness: f64,
    pub wave_phase: f64,
    pub vertebra: Option<([f64; 2], f64)>,
    /// Bowel loops as `(center, radius)`.
    pub bowel: Vec<([f64; 3], f64)>,
}

fn draw(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

impl PhantomShape {
    pub fn sample(spec: &PhantomSpec) -> Result<Self, PhantomError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let ext = [
            spec.dims[0] as f64 * spec.spacing[0],
            spec.dims[1] as f64 * spec.spacing[1],
            spec.dims[2] as f64 * spec.spacing[2],
        ];
        let j = spec.center_jitter_mm;
        let jitter = |r: &mut ChaCha8Rng| if j > 0.0 { r.gen_range(-j..j) } else { 0.0 };
        let center = [ext[0] * 0.5 + jitter(&mut rng), ext[1] * 0.42 + jitter(&mut rng)];
        let sac_z = ext[2] * 0.5 + jitter(&mut rng) * 0.5;
        let mut s = Self {
            stage: spec.stage,
            center,
            sac_z,
            sac_radius: draw(&mut rng, spec.sac_radius_mm),
            sac_half_length: draw(&mut rng, spec.sac_half_length_mm),
            eccentricity: draw(&mut rng, spec.eccentricity),
            orientation: rng.gen_range(0.0..PI),
            neck_radius: draw(&mut rng, spec.neck_radius_mm),
            lumen_radius: draw(&mut rng, spec.lumen_radius_mm),
            lumen_offset: draw(&mut rng, spec.lumen_offset),
            lumen_direction: rng.gen_range(0.0..2.0 * PI),
            channel_radius: draw(&mut rng, spec.channel_radius_mm),
            channel_separation: draw(&mut rng, spec.channel_separation_mm),
            waviness: draw(&mut rng, spec.waviness_mm),
            wave_phase: rng.gen_range(0.0..2.0 * PI),
            vertebra: None,
            bowel: Vec::new(),
        };
        s.neck_radius = s.neck_radius.min(s.sac_radius);
        // confounders are drawn even when disabled so geometry does not
        // depend on the flag
        let rv = draw(&mut rng, spec.vertebra_radius_mm);
        let vertebra = ([center[0], center[1] + s.neck_radius + spec.confounder_gap_mm + rv], rv);
        let mut bowel = Vec::new();
        for _ in 0..spec.bowel_count {
            let rb = draw(&mut rng, spec.bowel_radius_mm);
            let ang = rng.gen_range(-PI..0.0);
            let dist = s.sac_radius + spec.confounder_gap_mm + 0.6 * rb;
            let z = rng.gen_range(0.0..ext[2]);
            bowel.push(([center[0] + dist * ang.cos(), center[1] + dist * ang.sin(), z], rb));
        }
        if spec.confounders {
            s.vertebra = Some(vertebra);
            s.bowel = bowel;
        }
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<(), PhantomError> {
        // the minor semi-axis never drops below the neck radius
        let room = self.neck_radius;
        match self.stage {
            Stage::Pre if self.lumen_radius > 0.0 && self.lumen_radius + 1.0 > room => {
                Err(PhantomError::LumenOutsideThrombus(format!(
                    "lumen radius {:.2} mm needs 1 mm of wall inside neck radius {:.2} mm",
                    self.lumen_radius, room
                )))
            }
            Stage::Post if self.channel_radius > 0.0 => {
                if self.channel_separation / 2.0 + self.channel_radius + 1.0 > room {
                    return Err(PhantomError::LumenOutsideThrombus(format!(
                        "channels (radius {:.2}, separation {:.2}) do not fit inside neck radius {:.2}",
                        self.channel_radius, self.channel_separation, room
                    )));
                }
                if self.channel_separation <= 2.0 * self.channel_radius {
                    return Err(PhantomError::LumenOutsideThrombus("stent-graft channels overlap".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn axis(&self, z: f64, depth: f64) -> [f64; 2] {
        let shift = self.waviness * (2.0 * PI * z / depth + self.wave_phase).sin();
        [self.center[0] + shift, self.center[1]]
    }

    /// Semi-axes `(major, minor)` of the wall cross-section at height `z`.
    fn semi_axes(&self, z: f64) -> (f64, f64) {
        let t = (z - self.sac_z) / self.sac_half_length;
        let s = if t.abs() < 1.0 { (1.0 - t * t).sqrt() } else { 0.0 };
        let minor_ratio = (1.0 - self.eccentricity * self.eccentricity).sqrt();
        (
            (self.sac_radius * s).max(self.neck_radius),
            (self.sac_radius * minor_ratio * s).max(self.neck_radius),
        )
    }

    /// `((u/a)^2 + (v/b)^2)` of a point against the wall grown by `grow` mm.
    fn wall_level(&self, p: [f64; 3], depth: f64, grow: f64) -> f64 {
        let (a, b) = self.semi_axes(p[2]);
        let (a, b) = (a + grow, b + grow);
        if a <= 0.0 || b <= 0.0 {
            return f64::INFINITY;
        }
        let c = self.axis(p[2], depth);
        let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
        let (sn, cs) = self.orientation.sin_cos();
        let u = dx * cs + dy * sn;
        let v = -dx * sn + dy * cs;
        (u / a).powi(2) + (v / b).powi(2)
    }

    /// Lumen channel centers and radius at height `z`.
    fn channels(&self, z: f64, depth: f64) -> (Vec<[f64; 2]>, f64) {
        let c = self.axis(z, depth);
        let (_, minor) = self.semi_axes(z);
        let (dc, ds) = (self.lumen_direction.cos(), self.lumen_direction.sin());
        match self.stage {
            Stage::Pre => {
                if self.lumen_radius <= 0.0 {
                    return (Vec::new(), 0.0);
                }
                let shift = self.lumen_offset * (minor - self.lumen_radius - 1.0).max(0.0);
                (vec![[c[0] + shift * dc, c[1] + shift * ds]], self.lumen_radius)
            }
            Stage::Post => {
                if self.channel_radius <= 0.0 {
                    return (Vec::new(), 0.0);
                }
                let half = self.channel_separation / 2.0;
                let shift = self.lumen_offset * (minor - half - self.channel_radius - 1.0).max(0.0);
                let m = [c[0] + shift * dc, c[1] + shift * ds];
                // channels sit side by side, perpendicular to the offset
                let (px, py) = (-ds * half, dc * half);
                (vec![[m[0] + px, m[1] + py], [m[0] - px, m[1] - py]], self.channel_radius)
            }
        }
    }

    /// Analytic sac volume when the neck radius is zero.
    pub fn ellipsoid_volume_mm3(&self) -> f64 {
        let minor = self.sac_radius * (1.0 - self.eccentricity * self.eccentricity).sqrt();
        4.0 / 3.0 * PI * self.sac_radius * minor * self.sac_half_length
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tissue {
    Background,
    Thrombus,
    Lumen,
    Stent,
    Vertebra,
    Bowel,
}

/// Rasterizes a phantom at voxel centers. Deterministic in `spec.seed`.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(Volume3D, BinaryMask3D), PhantomError> {
    let shape = PhantomShape::sample(spec)?;
    let g = spec.geometry()?;
    let [nx, ny, nz] = spec.dims;
    let [sx, sy, sz] = spec.spacing;
    let depth = nz as f64 * sz;
    let mut stent_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    stent_rng.set_stream(2);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    noise_rng.set_stream(1);

    let mut tissue = vec![Tissue::Background; g.len()];
    for z in 0..nz {
        let pz = z as f64 * sz;
        let (centers, radius) = shape.channels(pz, depth);
        for y in 0..ny {
            let py = y as f64 * sy;
            for x in 0..nx {
                let px = x as f64 * sx;
                let p = [px, py, pz];
                let i = g.index(x, y, z);
                if shape.wall_level(p, depth, 0.0) <= 1.0 {
                    let d = centers
                        .iter()
                        .map(|c| (px - c[0]).hypot(py - c[1]))
                        .fold(f64::INFINITY, f64::min);
                    tissue[i] = if d <= radius {
                        let ring = shape.stage == Stage::Post && d >= radius - 1.0;
                        if ring && stent_rng.gen_bool(spec.stent_density) {
                            Tissue::Stent
                        } else {
                            Tissue::Lumen
                        }
                    } else {
                        Tissue::Thrombus
                    };
                    continue;
                }
                if shape.wall_level(p, depth, spec.confounder_gap_mm) <= 1.0 {
                    continue;
                }
                if let Some((c, r)) = shape.vertebra {
                    if (px - c[0]).hypot(py - c[1]) <= r {
                        tissue[i] = Tissue::Vertebra;
                        continue;
                    }
                }
                for &(c, r) in &shape.bowel {
                    let d2 = (px - c[0]).powi(2) + (py - c[1]).powi(2) + ((pz - c[2]) / 1.5).powi(2);
                    if d2 <= r * r {
                        tissue[i] = Tissue::Bowel;
                        break;
                    }
                }
            }
        }
    }

    let hu = spec.intensity;
    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0)).map_err(|e| PhantomError::Spec(e.to_string()))?;
    let data: Vec<f32> = tissue
        .iter()
        .map(|t| {
            let base = match t {
                Tissue::Background => hu.background,
                Tissue::Thrombus => hu.thrombus,
                Tissue::Lumen => hu.lumen,
                Tissue::Stent => hu.stent,
                Tissue::Vertebra => hu.vertebra,
                Tissue::Bowel => hu.bowel,
            };
            let n = if spec.noise_sigma > 0.0 { noise.sample(&mut noise_rng) } else { 0.0 };
            (base + n) as f32
        })
        .collect();
    let mask_data = tissue
        .iter()
        .map(|t| matches!(t, Tissue::Thrombus | Tissue::Lumen | Tissue::Stent))
        .collect();
    Ok((Volume3D::new(g, data)?, BinaryMask3D::new(g, mask_data)?))
}

#[derive(Debug, Clone)]
pub struct CohortCase {
    pub case_id: String,
    pub stage: Stage,
    pub seed: u64,
    pub image: Volume3D,
    pub mask: BinaryMask3D,
}

/// Per-case seeds drawn from `seed`; stages alternate pre, post, pre, ...
pub fn cohort_plan(n: usize, seed: u64) -> Vec<(String, Stage, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let stage = if i % 2 == 0 { Stage::Pre } else { Stage::Post };
            (format!("case_{i:04}"), stage, rng.gen())
        })
        .collect()
}

pub fn generate_cohort(n: usize, base: &PhantomSpec, seed: u64) -> Result<Vec<CohortCase>, PhantomError> {
    cohort_plan(n, seed)
        .into_iter()
        .map(|(case_id, stage, case_seed)| {
            let spec = PhantomSpec {
                stage,
                seed: case_seed,
                ..base.clone()
            };
            let (image, mask) = generate_phantom(&spec)?;
            Ok(CohortCase {
                case_id,
                stage,
                seed: case_seed,
                image,
                mask,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub case_id: String,
    pub stage: Stage,
    pub seed: u64,
    pub spec_hash: String,
    pub image: PathBuf,
    pub mask: PathBuf,
}

/// Writes `<case>.mha`, `<case>_mask.mha` and `manifest.csv` into `dir`.
pub fn write_cohort(dir: &Path, cases: &[CohortCase], base: &PhantomSpec) -> Result<Vec<ManifestEntry>, PhantomError> {
    fs::create_dir_all(dir).map_err(|e| IoError::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let hash = base.hash();
    let mut entries = Vec::with_capacity(cases.len());
    let mut text = format!("{MANIFEST_HEADER}\n");
    for c in cases {
        let image = format!("{}.mha", c.case_id);
        let mask = format!("{}_mask.mha", c.case_id);
        volio::write_volume(&c.image, &dir.join(&image), ElementType::Float)?;
        volio::write_mask(&c.mask, &dir.join(&mask))?;
        text.push_str(&format!("{},{},{},{},{},{}\n", c.case_id, c.stage, c.seed, hash, image, mask));
        entries.push(ManifestEntry {
            case_id: c.case_id.clone(),
            stage: c.stage,
            seed: c.seed,
            spec_hash: hash.clone(),
            image: dir.join(image),
            mask: dir.join(mask),
        });
    }
    volio::write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())?;
    Ok(entries)
}

/// Reads `manifest.csv`; image and mask paths are resolved against `dir`.
pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>, PhantomError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| IoError::Io { path: path.clone(), source: e })?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    if lines.next().map(str::trim) != Some(MANIFEST_HEADER) {
        return Err(PhantomError::Manifest(format!("{}: unexpected header", path.display())));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let c: Vec<&str> = line.split(',').map(str::trim).collect();
            if c.len() != 6 {
                return Err(PhantomError::Manifest(format!("line {} has {} fields", i + 2, c.len())));
            }
            Ok(ManifestEntry {
                case_id: c[0].to_string(),
                stage: c[1].parse().map_err(PhantomError::Manifest)?,
                seed: c[2]
                    .parse()
                    .map_err(|_| PhantomError::Manifest(format!("line {}: bad seed {:?}", i + 2, c[2])))?,
                spec_hash: c[3].to_string(),
                image: dir.join(c[4]),
                mask: dir.join(c[5]),
            })
        })
        .collect()
}
