//! Procedural scene generator.
//!
//! A scene grammar is a set of textures, a set of classes (each rendering as
//! a weighted choice of textures), and scene types that lay classes out
//! either as horizontal bands or as a mosaic of square tiles, optionally with
//! rectangular objects drawn on top. Every region instance (a band, a tile or
//! an object) picks one texture from its class's list. Two classes with the
//! same texture list are locally indistinguishable; only the scene they
//! appear in tells them apart.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{ClassCatalog, ClassId, DatasetSplit, LabelMap, RgbImage, SceneRecord, SplitRole};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Pattern {
    Flat,
    /// Sinusoidal stripes; `horizontal` stripes vary along the row axis.
    Stripes {
        horizontal: bool,
        period: f64,
        amplitude: f64,
    },
    Checker {
        cell: usize,
        amplitude: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Texture {
    pub base: [f64; 3],
    pub pattern: Pattern,
    /// Standard deviation of independent per-pixel Gaussian noise.
    pub noise: f64,
}

impl Texture {
    pub fn flat(base: [f64; 3], noise: f64) -> Self {
        Self {
            base,
            pattern: Pattern::Flat,
            noise,
        }
    }

    pub fn stripes(base: [f64; 3], horizontal: bool, period: f64, amplitude: f64, noise: f64) -> Self {
        Self {
            base,
            pattern: Pattern::Stripes {
                horizontal,
                period,
                amplitude,
            },
            noise,
        }
    }

    pub fn checker(base: [f64; 3], cell: usize, amplitude: f64, noise: f64) -> Self {
        Self {
            base,
            pattern: Pattern::Checker { cell, amplitude },
            noise,
        }
    }
}

/// A class and the textures its regions are drawn with.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStyle {
    pub name: String,
    /// `(texture index, weight)` pairs.
    pub textures: Vec<(usize, f64)>,
}

impl ClassStyle {
    pub fn new(name: &str, textures: Vec<(usize, f64)>) -> Self {
        Self {
            name: name.to_string(),
            textures,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub class: ClassId,
    /// Relative height.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layout {
    /// Top-to-bottom horizontal bands. Interior boundaries move by up to
    /// `jitter` pixels per image.
    Bands { bands: Vec<Band>, jitter: usize },
    /// Square tiles whose classes are drawn independently.
    Mosaic { tile: usize, classes: Vec<(ClassId, f64)> },
}

/// A rectangle of `class` covering `area_fraction` of the image, placed with
/// probability `probability` with its top edge inside `rows` (fractions of
/// the image height).
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSpec {
    pub class: ClassId,
    pub area_fraction: f64,
    pub probability: f64,
    pub rows: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneType {
    pub name: String,
    pub weight: f64,
    pub layout: Layout,
    pub objects: Vec<ObjectSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub images: usize,
    pub textures: Vec<Texture>,
    pub classes: Vec<ClassStyle>,
    pub scenes: Vec<SceneType>,
}

impl SynthConfig {
    /// Two scene types ("coast", "city") sharing sky, grass and a locally
    /// identical bottom class pair (sand / road). The middle band tells the
    /// scenes apart: sea and building have the same palette and differ only
    /// in stripe orientation. A grass buffer wider than half a desk-scale
    /// patch separates the middle band from the ambiguous bottom band.
    pub fn two_scene() -> Self {
        let textures = vec![
            Texture::flat([150.0, 180.0, 230.0], 8.0),
            Texture::stripes([60.0, 90.0, 150.0], true, 6.0, 40.0, 8.0),
            Texture::stripes([60.0, 90.0, 150.0], false, 6.0, 40.0, 8.0),
            Texture::checker([70.0, 150.0, 60.0], 3, 20.0, 8.0),
            Texture::flat([170.0, 150.0, 110.0], 16.0),
        ];
        let classes = vec![
            ClassStyle::new("sky", vec![(0, 1.0)]),
            ClassStyle::new("sea", vec![(1, 1.0)]),
            ClassStyle::new("building", vec![(2, 1.0)]),
            ClassStyle::new("grass", vec![(3, 1.0)]),
            ClassStyle::new("sand", vec![(4, 1.0)]),
            ClassStyle::new("road", vec![(4, 1.0)]),
        ];
        let bands = |mid: ClassId, bottom: ClassId| Layout::Bands {
            bands: vec![
                Band { class: 0, weight: 10.0 },
                Band {
                    class: mid,
                    weight: 12.0,
                },
                Band { class: 3, weight: 12.0 },
                Band {
                    class: bottom,
                    weight: 22.0,
                },
            ],
            jitter: 2,
        };
        Self {
            height: 56,
            width: 64,
            images: 40,
            textures,
            classes,
            scenes: vec![
                SceneType {
                    name: "coast".into(),
                    weight: 1.0,
                    layout: bands(1, 4),
                    objects: vec![],
                },
                SceneType {
                    name: "city".into(),
                    weight: 1.0,
                    layout: bands(2, 5),
                    objects: vec![],
                },
            ],
        }
    }

    /// A single mosaic scene with two frequent classes and three rare ones.
    /// Rare class `r1` shares two textures with the dominant background: one
    /// where the two are nearly equally likely per pixel, and one that is
    /// far more typical of `r1` but still outweighed by the background's
    /// prior. Frequency-following and class-balanced classifiers disagree
    /// on both.
    pub fn imbalanced() -> Self {
        let textures = vec![
            Texture::flat([90.0, 140.0, 90.0], 10.0),
            Texture::stripes([150.0, 150.0, 200.0], true, 5.0, 35.0, 10.0),
            Texture::flat([200.0, 70.0, 70.0], 10.0),
            Texture::checker([220.0, 200.0, 60.0], 2, 30.0, 10.0),
            Texture::stripes([70.0, 60.0, 160.0], false, 4.0, 35.0, 10.0),
            Texture::stripes([120.0, 120.0, 120.0], false, 6.0, 40.0, 10.0),
            Texture::checker([160.0, 100.0, 160.0], 4, 35.0, 10.0),
        ];
        let classes = vec![
            ClassStyle::new("field", vec![(0, 0.88), (5, 0.10), (6, 0.02)]),
            ClassStyle::new("water", vec![(1, 1.0)]),
            ClassStyle::new("car", vec![(2, 0.52), (5, 0.13), (6, 0.35)]),
            ClassStyle::new("sign", vec![(3, 1.0)]),
            ClassStyle::new("boat", vec![(4, 1.0)]),
        ];
        Self {
            height: 64,
            width: 64,
            images: 400,
            textures,
            classes,
            scenes: vec![SceneType {
                name: "mosaic".into(),
                weight: 1.0,
                layout: Layout::Mosaic {
                    tile: 16,
                    classes: vec![(0, 0.75), (1, 0.16), (2, 0.03), (3, 0.03), (4, 0.03)],
                },
                objects: vec![],
            }],
        }
    }

    /// Two classes whose pixel counts stand at roughly `ratio`:1.
    pub fn two_class_imbalance(ratio: f64) -> Self {
        Self {
            height: 64,
            width: 64,
            images: 20,
            textures: vec![
                Texture::flat([60.0, 120.0, 60.0], 6.0),
                Texture::flat([220.0, 40.0, 40.0], 6.0),
            ],
            classes: vec![
                ClassStyle::new("common", vec![(0, 1.0)]),
                ClassStyle::new("scarce", vec![(1, 1.0)]),
            ],
            scenes: vec![SceneType {
                name: "plain".into(),
                weight: 1.0,
                layout: Layout::Bands {
                    bands: vec![Band { class: 0, weight: 1.0 }],
                    jitter: 0,
                },
                objects: vec![ObjectSpec {
                    class: 1,
                    area_fraction: 1.0 / (ratio + 1.0),
                    probability: 1.0,
                    rows: (0.0, 1.0),
                }],
            }],
        }
    }

    /// Three flat, well separated classes in cell-aligned halves: an easy
    /// set on which a trained classifier should be perfect.
    pub fn toy() -> Self {
        let classes = vec![
            ClassStyle::new("red", vec![(0, 1.0)]),
            ClassStyle::new("green", vec![(1, 1.0)]),
            ClassStyle::new("blue", vec![(2, 1.0)]),
        ];
        let half = |top: ClassId, bottom: ClassId| Layout::Bands {
            bands: vec![
                Band {
                    class: top,
                    weight: 1.0,
                },
                Band {
                    class: bottom,
                    weight: 1.0,
                },
            ],
            jitter: 0,
        };
        let scene = |name: &str, top, bottom| SceneType {
            name: name.into(),
            weight: 1.0,
            layout: half(top, bottom),
            objects: vec![],
        };
        Self {
            height: 32,
            width: 32,
            images: 12,
            textures: vec![
                Texture::flat([220.0, 30.0, 30.0], 0.0),
                Texture::flat([30.0, 220.0, 30.0], 0.0),
                Texture::flat([30.0, 30.0, 220.0], 0.0),
            ],
            classes,
            scenes: vec![scene("rg", 0, 1), scene("gb", 1, 2), scene("br", 2, 0)],
        }
    }

    /// Looks a preset up by name.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "two-scene" => Ok(Self::two_scene()),
            "imbalanced" => Ok(Self::imbalanced()),
            "toy" => Ok(Self::toy()),
            other => Err(Error::Argument(format!(
                "unknown synthetic preset {other:?} (expected two-scene, imbalanced or toy)"
            ))),
        }
    }

    pub fn catalog(&self) -> Result<ClassCatalog> {
        ClassCatalog::new(self.classes.iter().map(|c| c.name.clone()))
    }

    /// Class pairs with identical texture lists.
    pub fn ambiguous_pairs(&self) -> Vec<(ClassId, ClassId)> {
        let mut out = Vec::new();
        for a in 0..self.classes.len() {
            for b in a + 1..self.classes.len() {
                if self.classes[a].textures == self.classes[b].textures {
                    out.push((a as ClassId, b as ClassId));
                }
            }
        }
        out
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Argument(m));
        if self.classes.is_empty() {
            return bad("scene grammar declares no classes".into());
        }
        if self.scenes.is_empty() {
            return bad("scene grammar declares no scene types".into());
        }
        if self.height == 0 || self.width == 0 {
            return bad(format!("image size {}x{} is degenerate", self.height, self.width));
        }
        let n_classes = self.classes.len();
        for c in &self.classes {
            if c.textures.is_empty() || c.textures.iter().all(|&(_, w)| w <= 0.0) {
                return bad(format!("class {:?} has no textures", c.name));
            }
            if let Some(&(t, _)) = c.textures.iter().find(|&&(t, _)| t >= self.textures.len()) {
                return bad(format!("class {:?} refers to missing texture {t}", c.name));
            }
        }
        let check_class = |c: ClassId, scene: &str| {
            if (c as usize) >= n_classes {
                Err(Error::Argument(format!("scene {scene:?} refers to missing class {c}")))
            } else {
                Ok(())
            }
        };
        for s in &self.scenes {
            if s.weight <= 0.0 {
                return bad(format!("scene {:?} has non-positive weight", s.name));
            }
            match &s.layout {
                Layout::Bands { bands, .. } => {
                    if bands.is_empty() || bands.iter().any(|b| b.weight <= 0.0) {
                        return bad(format!("scene {:?} has empty or zero-weight bands", s.name));
                    }
                    for b in bands {
                        check_class(b.class, &s.name)?;
                    }
                }
                Layout::Mosaic { tile, classes } => {
                    if *tile == 0 || classes.is_empty() || classes.iter().all(|&(_, w)| w <= 0.0) {
                        return bad(format!("scene {:?} has a degenerate mosaic", s.name));
                    }
                    for &(c, _) in classes {
                        check_class(c, &s.name)?;
                    }
                }
            }
            for o in &s.objects {
                check_class(o.class, &s.name)?;
                if !(0.0..=1.0).contains(&o.area_fraction) || o.rows.0 > o.rows.1 {
                    return bad(format!("scene {:?} has an invalid object spec", s.name));
                }
            }
        }
        Ok(())
    }
}

fn pick_weighted<T: Copy>(rng: &mut ChaCha8Rng, items: &[(T, f64)]) -> T {
    let total: f64 = items.iter().map(|&(_, w)| w.max(0.0)).sum();
    let mut x = rng.gen::<f64>() * total;
    for &(item, w) in items {
        let w = w.max(0.0);
        if x < w {
            return item;
        }
        x -= w;
    }
    items.iter().rev().find(|&&(_, w)| w > 0.0).unwrap().0
}

/// A labeled region carrying the texture it is painted with.
struct Region {
    class: ClassId,
    texture: usize,
    phase: f64,
}

struct Canvas<'a> {
    config: &'a SynthConfig,
    region: Vec<usize>,
    regions: Vec<Region>,
}

impl<'a> Canvas<'a> {
    fn add_region(&mut self, rng: &mut ChaCha8Rng, class: ClassId) -> usize {
        let texture = pick_weighted(rng, &self.config.classes[class as usize].textures);
        self.regions.push(Region {
            class,
            texture,
            phase: rng.gen::<f64>() * std::f64::consts::TAU,
        });
        self.regions.len() - 1
    }

    fn fill(&mut self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>, region: usize) {
        let w = self.config.width;
        for r in rows {
            for c in cols.clone() {
                self.region[r * w + c] = region;
            }
        }
    }
}

fn band_boundaries(rng: &mut ChaCha8Rng, bands: &[Band], jitter: usize, height: usize) -> Vec<usize> {
    let total: f64 = bands.iter().map(|b| b.weight).sum();
    let mut cum = 0.0;
    let mut bounds = vec![0usize];
    for (i, b) in bands.iter().enumerate() {
        cum += b.weight;
        if i + 1 == bands.len() {
            bounds.push(height);
            break;
        }
        let nominal = (height as f64 * cum / total).round() as isize;
        let j = if jitter > 0 {
            rng.gen_range(-(jitter as isize)..=jitter as isize)
        } else {
            0
        };
        let prev = *bounds.last().unwrap() as isize;
        bounds.push((nominal + j).clamp(prev, height as isize) as usize);
    }
    bounds
}

fn render_pixel(rng: &mut ChaCha8Rng, texture: &Texture, phase: f64, r: usize, c: usize) -> [u8; 3] {
    let offset = match texture.pattern {
        Pattern::Flat => 0.0,
        Pattern::Stripes {
            horizontal,
            period,
            amplitude,
        } => {
            let t = if horizontal { r } else { c } as f64;
            amplitude * (std::f64::consts::TAU * t / period + phase).sin()
        }
        Pattern::Checker { cell, amplitude } => {
            let shift = (phase * 16.0) as usize;
            if ((r + shift) / cell + (c + shift) / cell).is_multiple_of(2) {
                amplitude
            } else {
                -amplitude
            }
        }
    };
    let mut px = [0u8; 3];
    for (ch, out) in px.iter_mut().enumerate() {
        let n: f64 = if texture.noise > 0.0 {
            texture.noise * Distribution::<f64>::sample(&StandardNormal, rng)
        } else {
            0.0
        };
        *out = (texture.base[ch] + offset + n).round().clamp(0.0, 255.0) as u8;
    }
    px
}

fn render_scene(rng: &mut ChaCha8Rng, config: &SynthConfig, scene: &SceneType) -> Result<(RgbImage, LabelMap)> {
    let (h, w) = (config.height, config.width);
    let mut canvas = Canvas {
        config,
        region: vec![0; h * w],
        regions: Vec::new(),
    };
    match &scene.layout {
        Layout::Bands { bands, jitter } => {
            let bounds = band_boundaries(rng, bands, *jitter, h);
            for (i, b) in bands.iter().enumerate() {
                let id = canvas.add_region(rng, b.class);
                canvas.fill(bounds[i]..bounds[i + 1], 0..w, id);
            }
        }
        Layout::Mosaic { tile, classes } => {
            for r0 in (0..h).step_by(*tile) {
                for c0 in (0..w).step_by(*tile) {
                    let class = pick_weighted(rng, classes);
                    let id = canvas.add_region(rng, class);
                    canvas.fill(r0..(r0 + tile).min(h), c0..(c0 + tile).min(w), id);
                }
            }
        }
    }
    for o in &scene.objects {
        if rng.gen::<f64>() >= o.probability {
            continue;
        }
        let area = o.area_fraction * (h * w) as f64;
        let oh = (area.sqrt().round() as usize).clamp(1, h);
        let ow = ((area / oh as f64).round() as usize).clamp(1, w);
        let lo = (o.rows.0 * h as f64) as usize;
        let hi = ((o.rows.1 * h as f64) as usize).saturating_sub(oh).max(lo).min(h - oh);
        let top = rng.gen_range(lo.min(hi)..=hi);
        let left = rng.gen_range(0..=w - ow);
        let id = canvas.add_region(rng, o.class);
        canvas.fill(top..top + oh, left..left + ow, id);
    }
    let mut data = Vec::with_capacity(h * w * 3);
    let mut labels = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let reg = &canvas.regions[canvas.region[r * w + c]];
            data.extend_from_slice(&render_pixel(rng, &config.textures[reg.texture], reg.phase, r, c));
            labels.push(reg.class);
        }
    }
    Ok((RgbImage::new(h, w, data)?, LabelMap::new(h, w, labels)?))
}

/// Renders `config.images` scenes. The output is a pure function of
/// `(config, seed)`.
pub fn generate_synthetic_scenes(config: &SynthConfig, seed: u64) -> Result<DatasetSplit> {
    config.validate()?;
    let catalog = config.catalog()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene_weights: Vec<(usize, f64)> = config.scenes.iter().enumerate().map(|(i, s)| (i, s.weight)).collect();
    let mut records = Vec::with_capacity(config.images);
    for _ in 0..config.images {
        let s = pick_weighted(&mut rng, &scene_weights);
        let (image, labels) = render_scene(&mut rng, config, &config.scenes[s])?;
        records.push(SceneRecord::new(image, labels, Some(s as u32))?);
    }
    DatasetSplit::new(catalog, SplitRole::Train, records)
}
