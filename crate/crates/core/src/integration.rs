//! Combining local and global beliefs, per-cell inference and evaluation.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::convnet::CellGrid;
use crate::data::{ClassCatalog, ClassId, LabelMap, UNLABELED};
use crate::error::{Error, Result};

/// Smallest belief allowed inside a logarithm.
pub const BELIEF_FLOOR: f64 = 1e-12;

/// Per-cell class energies.
pub type EnergyMap = CellGrid;

/// Which beliefs enter the energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseMode {
    Local,
    Global,
    Integrated,
}

impl FromStr for ParseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "local" => Ok(Self::Local),
            "global" => Ok(Self::Global),
            "integrated" => Ok(Self::Integrated),
            other => Err(Error::Argument(format!(
                "unknown parse mode {other:?} (expected local, global or integrated)"
            ))),
        }
    }
}

impl std::fmt::Display for ParseMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Local => "local",
            Self::Global => "global",
            Self::Integrated => "integrated",
        })
    }
}

/// `−log(max(p, ε))` per class.
pub fn local_energy(p: &[f64]) -> Vec<f64> {
    p.iter().map(|&v| -v.max(BELIEF_FLOOR).ln()).collect()
}

/// Energy of a single belief map.
pub fn belief_energy(belief: &CellGrid) -> EnergyMap {
    CellGrid {
        values: local_energy(&belief.values),
        ..belief.clone()
    }
}

/// `−log max(P_I, ε) − log max(P_G, ε)` cell by cell.
pub fn integrate(local: &CellGrid, global: &CellGrid) -> Result<EnergyMap> {
    if (local.rows, local.cols, local.dim) != (global.rows, global.cols, global.dim) {
        return Err(Error::Shape(format!(
            "local belief grid {}x{}x{} differs from global {}x{}x{}",
            local.rows, local.cols, local.dim, global.rows, global.cols, global.dim
        )));
    }
    let values = local
        .values
        .iter()
        .zip(&global.values)
        .map(|(&a, &b)| -a.max(BELIEF_FLOOR).ln() - b.max(BELIEF_FLOOR).ln())
        .collect();
    Ok(CellGrid {
        values,
        ..local.clone()
    })
}

/// Energy for `mode`; `global` may be `None` only in local mode.
pub fn mode_energy(mode: ParseMode, local: &CellGrid, global: Option<&CellGrid>) -> Result<EnergyMap> {
    let need = || Error::Argument("global belief required for this mode".into());
    match mode {
        ParseMode::Local => Ok(belief_energy(local)),
        ParseMode::Global => Ok(belief_energy(global.ok_or_else(need)?)),
        ParseMode::Integrated => integrate(local, global.ok_or_else(need)?),
    }
}

/// Lowest-energy class of each cell, ties to the lowest id.
pub fn infer_cell_labels(energy: &EnergyMap) -> Vec<ClassId> {
    energy
        .iter_cells()
        .map(|e| {
            e.iter()
                .enumerate()
                .fold(
                    (0, f64::INFINITY),
                    |best, (j, &v)| if v < best.1 { (j, v) } else { best },
                )
                .0 as ClassId
        })
        .collect()
}

/// Per-cell labels replicated over each cell's pixel block.
pub fn infer_labels(energy: &EnergyMap) -> LabelMap {
    let cells = infer_cell_labels(energy);
    let mut labels = Vec::with_capacity(energy.height * energy.width);
    for r in 0..energy.height {
        for c in 0..energy.width {
            labels.push(cells[energy.cell_of_pixel(r, c)]);
        }
    }
    LabelMap::new(energy.height, energy.width, labels).expect("sized from the grid")
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub gpa: f64,
    pub aca: f64,
    /// `None` for classes absent from the ground truth.
    pub recalls: Vec<Option<f64>>,
    /// Rows are ground truth, columns predictions.
    pub confusion: Vec<Vec<u64>>,
}

impl EvalReport {
    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    /// Lines of `metric<TAB>value`.
    pub fn to_text(&self, catalog: &ClassCatalog) -> String {
        let mut s = String::new();
        writeln!(s, "gpa\t{:.6}", self.gpa).unwrap();
        writeln!(s, "aca\t{:.6}", self.aca).unwrap();
        writeln!(s, "pixels\t{}", self.total()).unwrap();
        for (name, r) in catalog.names().iter().zip(&self.recalls) {
            if let Some(r) = r {
                writeln!(s, "recall.{name}\t{r:.6}").unwrap();
            }
        }
        s
    }

    pub fn confusion_csv(&self, catalog: &ClassCatalog) -> String {
        let mut s = String::from("truth\\predicted");
        for name in catalog.names() {
            write!(s, ",{name}").unwrap();
        }
        s.push('\n');
        for (name, row) in catalog.names().iter().zip(&self.confusion) {
            s.push_str(name);
            for v in row {
                write!(s, ",{v}").unwrap();
            }
            s.push('\n');
        }
        s
    }
}

/// Pixel accuracy, mean class recall over classes present in the ground
/// truth, and the confusion matrix. Unlabeled ground-truth pixels are
/// skipped.
pub fn evaluate(predictions: &[LabelMap], truth: &[LabelMap], classes: usize) -> Result<EvalReport> {
    if predictions.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} ground-truth maps",
            predictions.len(),
            truth.len()
        )));
    }
    let mut confusion = vec![vec![0u64; classes]; classes];
    for (i, (p, t)) in predictions.iter().zip(truth).enumerate() {
        if (p.height(), p.width()) != (t.height(), t.width()) {
            return Err(Error::Shape(format!(
                "map {i}: prediction and ground truth differ in size"
            )));
        }
        for (&pl, &tl) in p.labels().iter().zip(t.labels()) {
            if tl == UNLABELED {
                continue;
            }
            if tl as usize >= classes || pl as usize >= classes {
                return Err(Error::Validation(format!(
                    "map {i}: label outside the {classes} classes"
                )));
            }
            confusion[tl as usize][pl as usize] += 1;
        }
    }
    let total: u64 = confusion.iter().flatten().sum();
    if total == 0 {
        return Err(Error::EmptyData("no labeled ground-truth pixels to evaluate".into()));
    }
    let correct: u64 = (0..classes).map(|c| confusion[c][c]).sum();
    let recalls: Vec<Option<f64>> = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let n: u64 = row.iter().sum();
            (n > 0).then(|| row[c] as f64 / n as f64)
        })
        .collect();
    let present: Vec<f64> = recalls.iter().flatten().copied().collect();
    Ok(EvalReport {
        gpa: correct as f64 / total as f64,
        aca: present.iter().sum::<f64>() / present.len() as f64,
        recalls,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(rows: usize, cols: usize, dim: usize, values: Vec<f64>) -> CellGrid {
        CellGrid::new(rows * 2, cols * 2, 2, dim, values).unwrap()
    }

    #[test]
    fn energy_floor() {
        let e = local_energy(&[1.0, (-1.0f64).exp(), 0.0]);
        assert_eq!(e[0], 0.0);
        assert!((e[1] - 1.0).abs() < 1e-15);
        assert!((e[2] + BELIEF_FLOOR.ln()).abs() < 1e-12 && e[2].is_finite());
    }

    #[test]
    fn product_decides() {
        let l = grid(1, 1, 2, vec![0.6, 0.4]);
        let g = grid(1, 1, 2, vec![0.3, 0.7]);
        let e = integrate(&l, &g).unwrap();
        assert_eq!(infer_cell_labels(&e), vec![1]);
        assert!((e.values[0] + 0.18f64.ln()).abs() < 1e-12);
        assert!((e.values[1] + 0.28f64.ln()).abs() < 1e-12);
        assert!(integrate(&l, &grid(1, 2, 2, vec![0.5; 4])).is_err());
    }

    #[test]
    fn cell_labels_cover_their_blocks() {
        let e = CellGrid::new(
            3,
            5,
            2,
            2,
            vec![0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        let lm = infer_labels(&e);
        assert_eq!(lm.labels(), &[0, 0, 1, 1, 0, 0, 0, 1, 1, 0, 1, 1, 1, 1, 0]);
    }

    #[test]
    fn evaluation_arithmetic() {
        let t = LabelMap::new(1, 4, vec![0, 0, 0, 1]).unwrap();
        let p = LabelMap::new(1, 4, vec![0, 0, 0, 0]).unwrap();
        let r = evaluate(&[p], &[t.clone()], 3).unwrap();
        assert_eq!((r.gpa, r.aca), (0.75, 0.5));
        assert_eq!(r.recalls[2], None);
        let perfect = evaluate(&[t.clone()], &[t], 3).unwrap();
        assert_eq!((perfect.gpa, perfect.aca), (1.0, 1.0));
        let none = LabelMap::filled(1, 2, UNLABELED).unwrap();
        assert!(evaluate(&[LabelMap::filled(1, 2, 0).unwrap()], &[none], 2).is_err());
    }

    #[test]
    fn report_formats() {
        let cat = ClassCatalog::new(["a", "b"]).unwrap();
        let t = LabelMap::new(1, 2, vec![0, 1]).unwrap();
        let p = LabelMap::new(1, 2, vec![0, 0]).unwrap();
        let r = evaluate(&[p], &[t], 2).unwrap();
        assert!(r.to_text(&cat).starts_with("gpa\t0.500000\naca\t0.500000\n"));
        assert_eq!(r.confusion_csv(&cat), "truth\\predicted,a,b\na,1,0\nb,1,0\n");
    }

    proptest! {
        #[test]
        fn argmin_matches_scan_and_ignores_offsets(
            values in proptest::collection::vec(0.0f64..10.0, 16 * 3),
            offsets in proptest::collection::vec(-5.0f64..5.0, 16),
        ) {
            let e = grid(4, 4, 3, values.clone());
            let labels = infer_cell_labels(&e);
            for (cell, &l) in labels.iter().enumerate() {
                let v = &values[cell * 3..cell * 3 + 3];
                let mut best = 0;
                for j in 1..3 {
                    if v[j] < v[best] { best = j; }
                }
                prop_assert_eq!(l as usize, best);
            }
            let mut shifted = e.clone();
            for (cell, o) in offsets.iter().enumerate() {
                shifted.cell_mut(cell).iter_mut().for_each(|v| *v += o);
            }
            prop_assert_eq!(infer_cell_labels(&shifted), labels);
        }

        #[test]
        fn recall_weighted_by_share_is_gpa(
            truth in proptest::collection::vec(0u16..4, 40),
            pred in proptest::collection::vec(0u16..4, 40),
        ) {
            let t = LabelMap::new(4, 10, truth.clone()).unwrap();
            let p = LabelMap::new(4, 10, pred).unwrap();
            let r = evaluate(&[p], &[t], 4).unwrap();
            let mut weighted = 0.0;
            for c in 0..4 {
                let share = truth.iter().filter(|&&l| l as usize == c).count() as f64 / 40.0;
                weighted += r.recalls[c].unwrap_or(0.0) * share;
            }
            prop_assert!((weighted - r.gpa).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&r.gpa) && (0.0..=1.0).contains(&r.aca));
        }
    }
}
