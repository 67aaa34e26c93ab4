use serde::{Deserialize, Serialize};

use super::{evaluate, train, RunConfig};
use crate::error::{Error, Result};

/// Variant name and `(use_scrf, use_dfp)`, in table order.
pub const VARIANTS: [(&str, bool, bool); 4] = [
    ("SUM", false, false),
    ("+DFP", false, true),
    ("+SCRF", true, false),
    ("+SCRF+DFP", true, true),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub use_scrf: bool,
    pub use_dfp: bool,
    pub seeds: Vec<u64>,
    /// Test mIoU per seed.
    pub miou: Vec<f64>,
    pub pixel_accuracy: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation across seeds.
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

impl AblationTable {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Mean and standard deviation of the per-seed difference `a - b`.
    pub fn paired_difference(&self, a: &str, b: &str) -> Option<(f64, f64)> {
        let (a, b) = (self.row(a)?, self.row(b)?);
        let d: Vec<f64> = a.miou.iter().zip(&b.miou).map(|(x, y)| x - y).collect();
        Some(mean_std(&d))
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| variant | mIoU mean | mIoU std | per seed |\n|---|---|---|---|\n");
        for r in &self.rows {
            let per: Vec<String> = r.miou.iter().map(|m| format!("{m:.4}")).collect();
            s.push_str(&format!(
                "| {} | {:.4} | {:.4} | {} |\n",
                r.name,
                r.mean,
                r.std,
                per.join(" ")
            ));
        }
        s
    }
}

/// Trains every variant for every seed on one data split and scores the
/// final parameters on the test set (the validation set when there is no
/// test set). `progress` sees `(variant, seed, test mIoU)` after each run.
pub fn ablate(base: &RunConfig, seeds: &[u64], mut progress: impl FnMut(&str, u64, f64)) -> Result<AblationTable> {
    if seeds.len() < 3 {
        return Err(Error::Config(format!(
            "ablation needs at least 3 seeds, got {}",
            seeds.len()
        )));
    }
    base.validate()?;
    let (train_set, val_set, test_set) = base.datasets()?;
    let scored = if test_set.is_empty() { &val_set } else { &test_set };
    if scored.is_empty() {
        return Err(Error::Empty("ablation test set"));
    }
    let mut rows = Vec::with_capacity(VARIANTS.len());
    for (name, use_scrf, use_dfp) in VARIANTS {
        let mut miou = Vec::with_capacity(seeds.len());
        let mut acc = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let cfg = RunConfig {
                use_scrf,
                use_dfp,
                seed,
                ..base.clone()
            };
            let outcome = train(&cfg.model(), &cfg.train(), &train_set, &[], None)?;
            let cm = evaluate(&outcome.state.net, scored, cfg.batch_size)?;
            let m = cm.mean_iou()?;
            progress(name, seed, m);
            miou.push(m);
            acc.push(cm.pixel_accuracy()?);
        }
        let (mean, std) = mean_std(&miou);
        rows.push(AblationRow {
            name: name.to_string(),
            use_scrf,
            use_dfp,
            seeds: seeds.to_vec(),
            miou,
            pixel_accuracy: acc,
            mean,
            std,
        });
    }
    Ok(AblationTable { rows })
}
