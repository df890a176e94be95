use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::MetricError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Circle {
    fn contains(&self, p: [f64; 2]) -> bool {
        let d = dist(self.center, p);
        d <= self.radius * (1.0 + 1e-12) + 1e-12
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn from_two(a: [f64; 2], b: [f64; 2]) -> Circle {
    Circle {
        center: [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0],
        radius: dist(a, b) / 2.0,
    }
}

/// Circumcircle, or for (near-)collinear points the circle spanning the
/// farthest pair.
fn from_three(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> Circle {
    let (bx, by) = (b[0] - a[0], b[1] - a[1]);
    let (cx, cy) = (c[0] - a[0], c[1] - a[1]);
    let d = 2.0 * (bx * cy - by * cx);
    let scale = (bx * bx + by * by).max(cx * cx + cy * cy);
    if d.abs() <= 1e-12 * scale {
        return [from_two(a, b), from_two(a, c), from_two(b, c)]
            .into_iter()
            .max_by(|p, q| p.radius.total_cmp(&q.radius))
            .unwrap();
    }
    let b2 = bx * bx + by * by;
    let c2 = cx * cx + cy * cy;
    let ux = (cy * b2 - by * c2) / d;
    let uy = (bx * c2 - cx * b2) / d;
    Circle {
        center: [a[0] + ux, a[1] + uy],
        radius: ux.hypot(uy),
    }
}

/// Smallest circle enclosing every point, by Welzl's randomized incremental
/// algorithm with a fixed shuffle seed so results are reproducible.
pub fn minimum_enclosing_circle(points: &[[f64; 2]]) -> Result<Circle, MetricError> {
    if points.is_empty() {
        return Err(MetricError::EmptyPointSet);
    }
    let mut p = points.to_vec();
    p.shuffle(&mut ChaCha8Rng::seed_from_u64(0x6d65_63));
    let mut c = Circle {
        center: p[0],
        radius: 0.0,
    };
    for i in 1..p.len() {
        if c.contains(p[i]) {
            continue;
        }
        c = Circle {
            center: p[i],
            radius: 0.0,
        };
        for j in 0..i {
            if c.contains(p[j]) {
                continue;
            }
            c = from_two(p[i], p[j]);
            for k in 0..j {
                if !c.contains(p[k]) {
                    c = from_three(p[i], p[j], p[k]);
                }
            }
        }
    }
    Ok(c)
}
