//! Per-epoch patch sampling driven by the class-frequency distribution.
//!
//! Four strategies:
//!
//! * `gs` (global): i.i.d. uniform over every labeled pixel;
//! * `cs` (class): equal counts per class, with replacement only inside
//!   classes too small to fill their quota;
//! * `hs` (hybrid): a global draw, then rare classes topped up until each
//!   holds at least an `eta` share of the (growing) sample;
//! * `tcs` (truncated class): the class procedure over rare classes only.
//!
//! A class is frequent when its training frequency is strictly above `eta`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{ClassFrequencyTable, ClassId, DatasetSplit, UNLABELED};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    Global,
    Class,
    Hybrid,
    TruncatedClass,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Global,
        Strategy::Class,
        Strategy::Hybrid,
        Strategy::TruncatedClass,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Strategy::Global => "gs",
            Strategy::Class => "cs",
            Strategy::Hybrid => "hs",
            Strategy::TruncatedClass => "tcs",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gs" => Ok(Strategy::Global),
            "cs" => Ok(Strategy::Class),
            "hs" => Ok(Strategy::Hybrid),
            "tcs" => Ok(Strategy::TruncatedClass),
            other => Err(Error::Argument(format!(
                "unknown sampling strategy {other:?} (expected gs, cs, hs or tcs)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingConfig {
    pub strategy: Strategy,
    pub epoch_size: usize,
    pub eta: f64,
    pub seed: u64,
}

impl SamplingConfig {
    pub fn new(strategy: Strategy, epoch_size: usize, eta: f64, seed: u64) -> Result<Self> {
        let cfg = Self {
            strategy,
            epoch_size,
            eta,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::Argument(format!("eta must lie in (0, 1), got {}", self.eta)));
        }
        if self.epoch_size == 0 {
            return Err(Error::Argument("epoch size must be positive".into()));
        }
        Ok(())
    }

    pub fn with_strategy(&self, strategy: Strategy) -> Self {
        Self {
            strategy,
            ..self.clone()
        }
    }
}

/// Split of the classes present in the training data.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RarityPartition {
    pub frequent: BTreeSet<ClassId>,
    pub rare: BTreeSet<ClassId>,
}

impl RarityPartition {
    pub fn is_rare(&self, class: ClassId) -> bool {
        self.rare.contains(&class)
    }
}

/// Frequent iff frequency > `eta`. Classes with zero count are in neither set.
pub fn classify_rarity(table: &ClassFrequencyTable, eta: f64) -> RarityPartition {
    let mut p = RarityPartition::default();
    for (c, (&count, &f)) in table.counts.iter().zip(&table.frequencies).enumerate() {
        if count == 0 {
            continue;
        }
        if f > eta {
            p.frequent.insert(c as ClassId);
        } else {
            p.rare.insert(c as ClassId);
        }
    }
    p
}

/// Reference to one labeled pixel of a split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PixelRef {
    pub image: u32,
    pub row: u32,
    pub col: u32,
}

/// The pixels drawn for one epoch, paired with their labels. Repetition is
/// allowed.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SampleList {
    pub refs: Vec<PixelRef>,
    pub labels: Vec<ClassId>,
}

impl SampleList {
    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    pub fn class_counts(&self, classes: usize) -> Vec<usize> {
        let mut counts = vec![0; classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    fn push(&mut self, r: PixelRef, label: ClassId) {
        self.refs.push(r);
        self.labels.push(label);
    }

    fn shuffle(&mut self, rng: &mut impl Rng) {
        let mut order: Vec<usize> = (0..self.refs.len()).collect();
        order.shuffle(rng);
        self.refs = order.iter().map(|&i| self.refs[i]).collect();
        self.labels = order.iter().map(|&i| self.labels[i]).collect();
    }
}

/// Per-class pools of labeled pixels built once per split.
#[derive(Debug, Clone)]
pub struct PixelPools {
    per_class: Vec<Vec<PixelRef>>,
    all: Vec<(PixelRef, ClassId)>,
    table: ClassFrequencyTable,
    names: Vec<String>,
}

impl PixelPools {
    pub fn new(split: &DatasetSplit) -> Result<Self> {
        let mut per_class = vec![Vec::new(); split.class_count()];
        let mut all = Vec::new();
        for (i, rec) in split.records.iter().enumerate() {
            let lm = &rec.labels;
            for r in 0..lm.height() {
                for c in 0..lm.width() {
                    let l = lm.get(r, c);
                    if l == UNLABELED {
                        continue;
                    }
                    let p = PixelRef {
                        image: i as u32,
                        row: r as u32,
                        col: c as u32,
                    };
                    per_class[l as usize].push(p);
                    all.push((p, l));
                }
            }
        }
        let table = ClassFrequencyTable::from_counts(per_class.iter().map(|p| p.len() as u64).collect())
            .map_err(|_| Error::EmptyData("split has no labeled pixels".into()))?;
        Ok(Self {
            per_class,
            all,
            table,
            names: split.catalog.names().to_vec(),
        })
    }

    pub fn table(&self) -> &ClassFrequencyTable {
        &self.table
    }

    pub fn pool(&self, class: ClassId) -> &[PixelRef] {
        &self.per_class[class as usize]
    }

    fn require_present(&self, classes: impl IntoIterator<Item = ClassId>, strategy: Strategy) -> Result<()> {
        for c in classes {
            if self.per_class[c as usize].is_empty() {
                return Err(Error::Config(format!(
                    "{strategy} sampling needs every class, but class {c} ({}) has no labeled pixels",
                    self.names[c as usize]
                )));
            }
        }
        Ok(())
    }

    fn draw_global(&self, n: usize, rng: &mut ChaCha8Rng, out: &mut SampleList) {
        for _ in 0..n {
            let (p, l) = self.all[rng.gen_range(0..self.all.len())];
            out.push(p, l);
        }
    }

    fn draw_balanced(&self, classes: &[ClassId], n: usize, rng: &mut ChaCha8Rng, out: &mut SampleList) {
        let k = classes.len();
        for (i, &c) in classes.iter().enumerate() {
            let quota = n / k + usize::from(i < n % k);
            let pool = &self.per_class[c as usize];
            if pool.len() >= quota {
                for j in index::sample(rng, pool.len(), quota) {
                    out.push(pool[j], c);
                }
            } else {
                for _ in 0..quota {
                    out.push(pool[rng.gen_range(0..pool.len())], c);
                }
            }
        }
    }

    /// Draws one epoch with an explicit generator.
    pub fn sample_epoch_with(&self, config: &SamplingConfig, rng: &mut ChaCha8Rng) -> Result<SampleList> {
        config.validate()?;
        let n = config.epoch_size;
        let classes = self.per_class.len();
        let rarity = classify_rarity(&self.table, config.eta);
        let mut out = SampleList::default();
        match config.strategy {
            Strategy::Global => self.draw_global(n, rng, &mut out),
            Strategy::Class => {
                if n < classes {
                    return Err(Error::Config(format!(
                        "epoch size {n} is smaller than the {classes} classes"
                    )));
                }
                self.require_present((0..classes).map(|c| c as ClassId), config.strategy)?;
                let all: Vec<ClassId> = (0..classes as ClassId).collect();
                self.draw_balanced(&all, n, rng, &mut out);
            }
            Strategy::TruncatedClass => {
                if n < classes {
                    return Err(Error::Config(format!(
                        "epoch size {n} is smaller than the {classes} classes"
                    )));
                }
                self.require_present((0..classes).map(|c| c as ClassId), config.strategy)?;
                let rare: Vec<ClassId> = rarity.rare.iter().copied().collect();
                if rare.is_empty() {
                    return Err(Error::Config(format!(
                        "tcs sampling found no rare classes at eta = {}",
                        config.eta
                    )));
                }
                self.draw_balanced(&rare, n, rng, &mut out);
            }
            Strategy::Hybrid => {
                if config.eta * rarity.rare.len() as f64 >= 1.0 {
                    return Err(Error::Config(format!(
                        "hs sampling cannot give {} rare classes a {} share each",
                        rarity.rare.len(),
                        config.eta
                    )));
                }
                self.draw_global(n, rng, &mut out);
                let mut counts = out.class_counts(classes);
                // Later top-ups dilute earlier ones, so sweep until stable.
                loop {
                    let mut added = false;
                    for &c in &rarity.rare {
                        let pool = &self.per_class[c as usize];
                        while (counts[c as usize] as f64) < config.eta * out.len() as f64 {
                            out.push(pool[rng.gen_range(0..pool.len())], c);
                            counts[c as usize] += 1;
                            added = true;
                        }
                    }
                    if !added {
                        break;
                    }
                }
            }
        }
        out.shuffle(rng);
        Ok(out)
    }

    pub fn sample_epoch(&self, config: &SamplingConfig) -> Result<SampleList> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        self.sample_epoch_with(config, &mut rng)
    }
}

/// Mixes a base seed with a stream index (splitmix64 finalizer).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws one epoch from `split` using `config.seed`.
pub fn sample_epoch(split: &DatasetSplit, config: &SamplingConfig) -> Result<SampleList> {
    PixelPools::new(split)?.sample_epoch(config)
}
