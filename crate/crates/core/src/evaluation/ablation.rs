//! Cumulative component ablation: no compositional design, then adding
//! the compositional encoder, masked joint modeling, context guidance and
//! the reconstruction loss one at a time.

use super::suite::{cell_threads, fit_estimator, fit_tokenizer, mean_sd, reconstruction_pck, run_cells, SuiteConfig};
use crate::error::{Error, Result};
use crate::estimator::{EstimatorConfig, EstimatorModel};
use crate::tokenizer::TokenizerConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AblationRow {
    /// Per-joint codebooks, nothing else.
    Baseline,
    Compo,
    Mjm,
    Ig,
    RecLoss,
}

impl AblationRow {
    pub const ALL: [AblationRow; 5] = [
        AblationRow::Baseline,
        AblationRow::Compo,
        AblationRow::Mjm,
        AblationRow::Ig,
        AblationRow::RecLoss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationRow::Baseline => "baseline",
            AblationRow::Compo => "+compo",
            AblationRow::Mjm => "+mjm",
            AblationRow::Ig => "+ig",
            AblationRow::RecLoss => "+recloss",
        }
    }

    /// `(compo, mjm, ig, recloss)`.
    pub fn flags(self) -> [bool; 4] {
        let n = self as usize;
        [n >= 1, n >= 2, n >= 3, n >= 4]
    }

    /// Tokenizer of this row derived from the full configuration.
    pub fn tokenizer_config(self, full: &TokenizerConfig) -> TokenizerConfig {
        let [compo, mjm, ig, _] = self.flags();
        let base = if compo { full.clone() } else { full.per_joint() };
        TokenizerConfig {
            mjm,
            context_width: if ig { full.dim + 1 } else { 0 },
            ..base
        }
    }

    pub fn estimator_config(self, full: &EstimatorConfig) -> EstimatorConfig {
        EstimatorConfig {
            rec_loss: self.flags()[3],
            ..full.clone()
        }
    }
}

/// Metrics of one (row, seed); NaN marks a diverged run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub row: AblationRow,
    pub seed: u64,
    /// Held-out reconstruction PCK@0.05 of the row's tokenizer.
    pub recon_pck: f64,
    /// PCK@0.05 of predictions from the standard benchmark observations.
    pub pred_pck: f64,
    /// Occluded-joint PCK@0.1, mean over benchmark mask rates.
    pub occluded_pck: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub row: AblationRow,
    /// `(mean, sd)` over the seeds that finished.
    pub recon_pck: (f64, f64),
    pub pred_pck: (f64, f64),
    pub occluded_pck: (f64, f64),
    pub failed: usize,
}

pub struct AblationReport {
    pub cells: Vec<AblationCell>,
    pub rows: Vec<AblationSummary>,
    /// Full-configuration estimators by seed, for follow-up analysis.
    pub full_models: Vec<(u64, EstimatorModel)>,
}

impl AblationReport {
    pub fn cell(&self, row: AblationRow, seed: u64) -> Option<&AblationCell> {
        self.cells.iter().find(|c| c.row == row && c.seed == seed)
    }

    pub fn summary(&self, row: AblationRow) -> &AblationSummary {
        self.rows.iter().find(|r| r.row == row).expect("every row is summarized")
    }

    /// One line per row: flags, then mean and sd of each metric.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "row",
            "compo",
            "mjm",
            "ig",
            "recloss",
            "recon_pck_mean",
            "recon_pck_sd",
            "pred_pck_mean",
            "pred_pck_sd",
            "occluded_pck_mean",
            "occluded_pck_sd",
            "failed",
        ])?;
        for r in &self.rows {
            let mut rec = vec![r.row.name().to_string()];
            rec.extend(r.row.flags().iter().map(|f| u8::from(*f).to_string()));
            for (m, s) in [r.recon_pck, r.pred_pck, r.occluded_pck] {
                rec.push(m.to_string());
                rec.push(s.to_string());
            }
            rec.push(r.failed.to_string());
            w.write_record(&rec)?;
        }
        finish(w)
    }

    /// One line per (row, seed).
    pub fn cells_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["row", "seed", "recon_pck", "pred_pck", "occluded_pck"])?;
        for c in &self.cells {
            w.write_record([
                c.row.name().to_string(),
                c.seed.to_string(),
                c.recon_pck.to_string(),
                c.pred_pck.to_string(),
                c.occluded_pck.to_string(),
            ])?;
        }
        finish(w)
    }
}

pub(crate) fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

/// Tokenizer variants: rows `+ig` and `+recloss` share one.
fn tokenizer_rows(variant: usize) -> &'static [AblationRow] {
    match variant {
        0 => &[AblationRow::Baseline],
        1 => &[AblationRow::Compo],
        2 => &[AblationRow::Mjm],
        _ => &[AblationRow::Ig, AblationRow::RecLoss],
    }
}

type CellOutput = Vec<(AblationCell, Option<EstimatorModel>)>;

fn run_variant(suite: &SuiteConfig, data: &crate::posedata::DatasetSplit, variant: usize, seed: u64) -> Result<CellOutput> {
    let rows = tokenizer_rows(variant);
    let failed = |row| AblationCell {
        row,
        seed,
        recon_pck: f64::NAN,
        pred_pck: f64::NAN,
        occluded_pck: f64::NAN,
    };
    let tok_config = rows[0].tokenizer_config(&suite.tokenizer);
    let Some(tok) = fit_tokenizer(suite, data, &tok_config, seed)? else {
        return Ok(rows.iter().map(|&r| (failed(r), None)).collect());
    };
    let recon = reconstruction_pck(&tok, data)?;
    let mut out = Vec::new();
    for &row in rows {
        let cell = match fit_estimator(suite, data, &tok, &row.estimator_config(&suite.estimator), seed)? {
            Some((model, pred, occ)) => {
                let keep = (row == AblationRow::RecLoss).then_some(model);
                (
                    AblationCell {
                        row,
                        seed,
                        recon_pck: recon,
                        pred_pck: pred,
                        occluded_pck: occ,
                    },
                    keep,
                )
            }
            None => (
                AblationCell {
                    recon_pck: recon,
                    ..failed(row)
                },
                None,
            ),
        };
        out.push(cell);
    }
    Ok(out)
}

/// Train every row for every seed and summarize. Cells run in parallel
/// (see [`cell_threads`]); a diverged run yields NaN metrics for its cell
/// instead of aborting the suite.
pub fn run_ablation(suite: &SuiteConfig) -> Result<AblationReport> {
    suite.validate()?;
    let data = suite.dataset()?;
    let jobs: Vec<(usize, u64)> = (0..4)
        .flat_map(|v| suite.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let results = run_cells(&jobs, cell_threads(), |&(v, s)| run_variant(suite, &data, v, s))?;
    let mut cells = Vec::new();
    let mut full_models = Vec::new();
    for (cell, model) in results.into_iter().flatten() {
        if let Some(m) = model {
            full_models.push((cell.seed, m));
        }
        cells.push(cell);
    }
    cells.sort_by_key(|c| (c.row, suite.seeds.iter().position(|&s| s == c.seed)));
    let rows = AblationRow::ALL
        .iter()
        .map(|&row| {
            let of = |f: fn(&AblationCell) -> f64| -> Vec<f64> { cells.iter().filter(|c| c.row == row).map(f).collect() };
            let pred = of(|c| c.pred_pck);
            AblationSummary {
                row,
                recon_pck: mean_sd(&of(|c| c.recon_pck)),
                pred_pck: mean_sd(&pred),
                occluded_pck: mean_sd(&of(|c| c.occluded_pck)),
                failed: pred.iter().filter(|v| !v.is_finite()).count(),
            }
        })
        .collect();
    Ok(AblationReport {
        cells,
        rows,
        full_models,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_cumulative() {
        assert_eq!(AblationRow::Baseline.flags(), [false; 4]);
        assert_eq!(AblationRow::Mjm.flags(), [true, true, false, false]);
        assert_eq!(AblationRow::RecLoss.flags(), [true; 4]);
        let full = TokenizerConfig::default();
        let base = AblationRow::Baseline.tokenizer_config(&full);
        assert!(!base.compositional && !base.mjm);
        assert_eq!(base.num_tokens * base.codebook_size, full.num_tokens * full.codebook_size);
        let ig = AblationRow::Ig.tokenizer_config(&full);
        assert_eq!(ig.context_width, 3);
        assert!(ig.mjm && ig.compositional);
        assert!(!AblationRow::Ig.estimator_config(&EstimatorConfig::default()).rec_loss);
        assert!(AblationRow::RecLoss.estimator_config(&EstimatorConfig::default()).rec_loss);
    }

    #[test]
    fn tiny_suite_has_five_rows_of_three_metrics() {
        let suite = SuiteConfig {
            n_train: 48,
            n_test: 16,
            seeds: vec![1],
            tokenizer: TokenizerConfig {
                hidden_dim: 8,
                token_dim: 8,
                codebook_size: 16,
                encoder_blocks: 1,
                ..TokenizerConfig::default()
            },
            tokenizer_train: crate::tokenizer::TrainConfig {
                epochs: 1,
                batch_size: 16,
                warmup_steps: 1,
                ..Default::default()
            },
            estimator: EstimatorConfig {
                obs_hidden: 8,
                featurizer_blocks: 1,
                ..EstimatorConfig::default()
            },
            estimator_train: crate::tokenizer::TrainConfig {
                epochs: 1,
                batch_size: 16,
                warmup_steps: 1,
                ..crate::tokenizer::TrainConfig::stage_two()
            },
            ..SuiteConfig::default()
        };
        let report = run_ablation(&suite).unwrap();
        assert_eq!(report.rows.len(), 5);
        assert_eq!(report.cells.len(), 5);
        assert_eq!(report.full_models.len(), 1);
        let csv = report.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 6);
        assert!(csv.lines().next().unwrap().contains("occluded_pck_mean"));
        for c in &report.cells {
            assert!(c.recon_pck.is_finite() && c.pred_pck.is_finite() && c.occluded_pck.is_finite());
        }
    }
}
