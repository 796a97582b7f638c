//! Procedural shapes-on-texture images with exact object masks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::HarnessError;
use crate::msroi::{ClassMergeTable, LabeledImage};
use crate::RgbImage;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Shape {
    Disk,
    Square,
    Triangle,
    Ring,
    Cross,
    Bar,
}

impl Shape {
    pub const ALL: [Shape; 6] = [Shape::Disk, Shape::Square, Shape::Triangle, Shape::Ring, Shape::Cross, Shape::Bar];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Disk => "disk",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
            Shape::Ring => "ring",
            Shape::Cross => "cross",
            Shape::Bar => "bar",
        }
    }

    pub fn from_name(s: &str) -> Option<Shape> {
        Shape::ALL.into_iter().find(|sh| sh.name() == s)
    }

    /// Membership test in shape-local coordinates scaled so the shape fits the unit disk.
    fn contains(self, u: f64, v: f64) -> bool {
        match self {
            Shape::Disk => u * u + v * v <= 1.0,
            Shape::Square => u.abs() <= 0.78 && v.abs() <= 0.78,
            Shape::Triangle => (-0.9..=0.75).contains(&v) && u.abs() <= (v + 0.9) * 0.58,
            Shape::Ring => (0.3..=1.0).contains(&(u * u + v * v)),
            Shape::Cross => (u.abs() <= 0.3 && v.abs() <= 0.95) || (v.abs() <= 0.3 && u.abs() <= 0.95),
            Shape::Bar => u.abs() <= 0.97 && v.abs() <= 0.32,
        }
    }

    fn colour(self) -> [f64; 3] {
        match self {
            Shape::Disk => [220.0, 40.0, 40.0],
            Shape::Square => [40.0, 190.0, 60.0],
            Shape::Triangle => [50.0, 80.0, 230.0],
            Shape::Ring => [235.0, 215.0, 40.0],
            Shape::Cross => [210.0, 50.0, 210.0],
            Shape::Bar => [40.0, 210.0, 220.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub width: usize,
    pub height: usize,
    /// Shape per category id.
    pub shapes: Vec<Shape>,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Object radius range in pixels.
    pub radius: (f64, f64),
    /// Background texture amplitude in 8-bit levels.
    pub noise: f64,
    /// Amplitude ratio between successive texture octaves; 0.5 gives a
    /// smooth field, values near 1 add fine grain.
    pub roughness: f64,
    /// Per-channel colour jitter of objects in 8-bit levels.
    pub jitter: f64,
    pub count: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            width: 64,
            height: 64,
            shapes: Shape::ALL.to_vec(),
            min_objects: 1,
            max_objects: 3,
            radius: (8.0, 13.0),
            noise: 40.0,
            roughness: 0.5,
            jitter: 25.0,
            count: 500,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticObject {
    pub category: usize,
    pub center: (f64, f64),
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticImage {
    pub image: RgbImage,
    /// Per pixel: 0 for background, `i + 1` where object `i` is drawn.
    pub owner: Vec<u8>,
    pub objects: Vec<SyntheticObject>,
}

impl SyntheticImage {
    pub fn object_mask(&self, i: usize) -> Vec<bool> {
        self.owner.iter().map(|&o| o as usize == i + 1).collect()
    }

    pub fn foreground_mask(&self) -> Vec<bool> {
        self.owner.iter().map(|&o| o != 0).collect()
    }

    pub fn background_mask(&self) -> Vec<bool> {
        self.owner.iter().map(|&o| o == 0).collect()
    }

    /// Sorted distinct category ids present.
    pub fn categories(&self) -> Vec<usize> {
        let mut c: Vec<usize> = self.objects.iter().map(|o| o.category).collect();
        c.sort_unstable();
        c.dedup();
        c
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(format!("synthetic spec: {m}")));
        if self.shapes.is_empty() {
            return bad("zero categories");
        }
        if self.width == 0 || self.height == 0 {
            return bad("zero-sized canvas");
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return bad("object count range must satisfy 1 <= min <= max");
        }
        if self.max_objects > self.shapes.len() {
            return bad("more objects per image than categories");
        }
        if !(self.radius.0 > 0.0 && self.radius.0 <= self.radius.1) {
            return bad("radius range must be positive and ordered");
        }
        if 2.0 * self.radius.1 > self.width.min(self.height) as f64 {
            return bad("objects larger than the canvas");
        }
        if !(self.roughness > 0.0 && self.roughness <= 1.0) {
            return bad("roughness must lie in (0, 1]");
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<Vec<SyntheticImage>, HarnessError> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut counts = vec![0usize; self.shapes.len()];
        let mut out = Vec::with_capacity(self.count);
        for _ in 0..self.count {
            let n = rng.gen_range(self.min_objects..=self.max_objects);
            // least-used categories first keeps the label histogram flat
            let mut order: Vec<usize> = (0..self.shapes.len()).collect();
            order.shuffle(&mut rng);
            order.sort_by_key(|&c| counts[c]);
            let cats = &order[..n];
            for &c in cats {
                counts[c] += 1;
            }
            out.push(self.render(cats, &mut rng)?);
        }
        Ok(out)
    }

    fn place(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<((f64, f64), f64)>, HarnessError> {
        let (w, h) = (self.width as f64, self.height as f64);
        for _ in 0..1000 {
            let mut placed: Vec<((f64, f64), f64)> = Vec::with_capacity(n);
            for _ in 0..200 {
                if placed.len() == n {
                    break;
                }
                let r = rng.gen_range(self.radius.0..=self.radius.1);
                let c = (rng.gen_range(r..=w - r), rng.gen_range(r..=h - r));
                let clear = placed
                    .iter()
                    .all(|&(p, q)| ((p.0 - c.0).powi(2) + (p.1 - c.1).powi(2)).sqrt() >= q + r + 2.0);
                if clear {
                    placed.push((c, r));
                }
            }
            if placed.len() == n {
                return Ok(placed);
            }
        }
        Err(HarnessError::Config(format!("cannot place {n} disjoint objects on the canvas")))
    }

    fn render(&self, cats: &[usize], rng: &mut ChaCha8Rng) -> Result<SyntheticImage, HarnessError> {
        let (w, h) = (self.width, self.height);
        let texture = fractal_noise(w, h, self.roughness, rng);
        let base: [f64; 3] = std::array::from_fn(|_| rng.gen_range(70.0..150.0));
        let mut px: Vec<[f64; 3]> = texture
            .iter()
            .map(|&t| std::array::from_fn(|ch| base[ch] + self.noise * t))
            .collect();
        let mut owner = vec![0u8; w * h];
        let mut objects = Vec::with_capacity(cats.len());
        for (i, (&cat, (center, radius))) in cats.iter().zip(self.place(cats.len(), rng)?).enumerate() {
            let shape = self.shapes[cat];
            let tint: [f64; 3] = std::array::from_fn(|ch| {
                shape.colour()[ch] + rng.gen_range(-self.jitter..=self.jitter)
            });
            for y in 0..h {
                for x in 0..w {
                    let u = (x as f64 + 0.5 - center.0) / radius;
                    let v = (y as f64 + 0.5 - center.1) / radius;
                    if shape.contains(u, v) {
                        owner[y * w + x] = (i + 1) as u8;
                        let t = texture[y * w + x] * 0.25 * self.noise;
                        px[y * w + x] = std::array::from_fn(|ch| tint[ch] + t);
                    }
                }
            }
            objects.push(SyntheticObject {
                category: cat,
                center,
                radius,
            });
        }
        let data = px
            .iter()
            .flat_map(|p| p.map(|v| v.round().clamp(0.0, 255.0) as u8))
            .collect();
        Ok(SyntheticImage {
            image: RgbImage::new(w, h, data).expect("canvas validated"),
            owner,
            objects,
        })
    }
}

impl SyntheticSpec {
    /// Identity merge table over this spec's shape names, in category order.
    pub fn merge_table(&self) -> Result<ClassMergeTable, HarnessError> {
        let names: Vec<&str> = self.shapes.iter().map(|s| s.name()).collect();
        Ok(ClassMergeTable::identity(&names)?)
    }

    /// Pairs generated images with their shape-name labels.
    pub fn labeled(&self, images: &[SyntheticImage]) -> Vec<LabeledImage> {
        images
            .iter()
            .enumerate()
            .map(|(i, s)| LabeledImage {
                id: format!("synth{i:04}"),
                image: s.image.clone(),
                labels: s.categories().iter().map(|&c| self.shapes[c].name().to_string()).collect(),
            })
            .collect()
    }
}

/// Sum of bilinearly interpolated value-noise octaves, roughly in [-1, 1].
pub(crate) fn fractal_noise(w: usize, h: usize, roughness: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    let mut cell = (w.max(h) as f64 / 2.0).max(2.0);
    let mut amp = 0.5;
    while cell >= 2.0 {
        let gw = (w as f64 / cell).ceil() as usize + 2;
        let gh = (h as f64 / cell).ceil() as usize + 2;
        let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        for y in 0..h {
            let fy = y as f64 / cell;
            let (y0, ty) = (fy.floor() as usize, fy.fract());
            for x in 0..w {
                let fx = x as f64 / cell;
                let (x0, tx) = (fx.floor() as usize, fx.fract());
                let at = |i: usize, j: usize| lattice[j * gw + i];
                let top = at(x0, y0) * (1.0 - tx) + at(x0 + 1, y0) * tx;
                let bot = at(x0, y0 + 1) * (1.0 - tx) + at(x0 + 1, y0 + 1) * tx;
                out[y * w + x] += amp * (top * (1.0 - ty) + bot * ty);
            }
        }
        cell /= 2.0;
        amp *= roughness;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks_match_objects() {
        let spec = SyntheticSpec {
            count: 20,
            ..SyntheticSpec::default()
        };
        for s in spec.generate().unwrap() {
            for i in 0..s.objects.len() {
                assert!(s.object_mask(i).iter().any(|&m| m));
            }
            assert!(s.owner.iter().all(|&o| (o as usize) <= s.objects.len()));
        }
    }

    #[test]
    fn rejects_zero_categories() {
        let spec = SyntheticSpec {
            shapes: vec![],
            ..SyntheticSpec::default()
        };
        assert!(spec.generate().is_err());
    }

    #[test]
    fn shape_names_roundtrip() {
        for s in Shape::ALL {
            assert_eq!(Shape::from_name(s.name()), Some(s));
        }
    }
}
