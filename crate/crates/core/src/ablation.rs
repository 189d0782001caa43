//! Branch × enhancement ablation grid.

use crate::data::{HsiCube, Metrics};
use crate::error::{contract_err, Result};
use crate::model::{BranchMode, Enhancement};
use crate::train::{RunConfig, Trainer};

#[derive(Clone, Debug, PartialEq)]
pub struct AblationCell {
    pub branch: BranchMode,
    pub enhancement: Enhancement,
    pub metrics: Metrics,
}

/// Held-out metrics for every branch mode with and without enhancement.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub cells: Vec<AblationCell>,
}

const METRIC_ROWS: [&str; 3] = ["OA", "AA", "K"];

fn row_label(b: BranchMode) -> &'static str {
    match b {
        BranchMode::SpectralOnly => "Spectral Only",
        BranchMode::SpatialOnly => "Spatial Only",
        BranchMode::SpectralSpatial => "Spectral-Spatial",
    }
}

impl AblationTable {
    pub fn get(&self, branch: BranchMode, enhancement: Enhancement) -> Option<&Metrics> {
        self.cells
            .iter()
            .find(|c| c.branch == branch && c.enhancement == enhancement)
            .map(|c| &c.metrics)
    }

    fn value(&self, branch: BranchMode, enh: Enhancement, metric: usize) -> Option<f64> {
        self.get(branch, enh).map(|m| [m.oa, m.aa, m.kappa][metric])
    }

    /// One line per (branch, metric), columns `w/` and `w/o`; missing cells
    /// are left empty. Accuracies in percent, kappa ×100.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("branch,metric,w/,w/o\n");
        for b in BranchMode::ALL {
            for (i, name) in METRIC_ROWS.iter().enumerate() {
                let cell = |e| {
                    self.value(b, e, i)
                        .map_or(String::new(), |v| format!("{:.2}", v * 100.0))
                };
                out.push_str(&format!(
                    "{},{name},{},{}\n",
                    b.name(),
                    cell(Enhancement::On),
                    cell(Enhancement::Off)
                ));
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:<18} {:<6} {:>8} {:>8}\n", "", "", "w/", "w/o");
        for b in BranchMode::ALL {
            for (i, name) in METRIC_ROWS.iter().enumerate() {
                let label = if i == 0 { row_label(b) } else { "" };
                let cell = |e| {
                    self.value(b, e, i)
                        .map_or("-".to_string(), |v| format!("{:.2}", v * 100.0))
                };
                out.push_str(&format!(
                    "{label:<18} {name:<6} {:>8} {:>8}\n",
                    cell(Enhancement::On),
                    cell(Enhancement::Off)
                ));
            }
        }
        out
    }
}

/// Trains and tests `base` once per branch mode and enhancement setting.
pub fn run_ablation(
    cube: &HsiCube,
    base: &RunConfig,
    enhancements: &[Enhancement],
) -> Result<AblationTable> {
    if enhancements.is_empty() {
        return contract_err("ablation needs at least one enhancement setting");
    }
    let mut cells = Vec::new();
    for branch in BranchMode::ALL {
        for &enhancement in enhancements {
            let cfg = RunConfig {
                branch_mode: branch,
                enhancement,
                ..base.clone()
            };
            let mut t = Trainer::new(cube, cfg)?;
            t.run()?;
            let metrics = t.evaluate(&t.split().test)?.metrics()?;
            cells.push(AblationCell {
                branch,
                enhancement,
                metrics,
            });
        }
    }
    Ok(AblationTable { cells })
}
