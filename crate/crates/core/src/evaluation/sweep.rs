//! One-parameter sweeps over the token count or the codebook size.

use super::ablation::finish;
use super::suite::{cell_threads, fit_estimator, fit_tokenizer, mean_sd, reconstruction_pck, run_cells, SuiteConfig};
use crate::error::{Error, Result};
use crate::tokenizer::TokenizerConfig;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    /// M
    Tokens,
    /// V
    Codebook,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Tokens => "num_tokens",
            SweepParam::Codebook => "codebook_size",
        }
    }

    pub fn apply(self, base: &TokenizerConfig, value: usize) -> TokenizerConfig {
        let mut c = base.clone();
        match self {
            SweepParam::Tokens => c.num_tokens = value,
            SweepParam::Codebook => c.codebook_size = value,
        }
        c
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "m" | "M" | "tokens" | "num_tokens" => Ok(SweepParam::Tokens),
            "v" | "V" | "codebook" | "codebook_size" => Ok(SweepParam::Codebook),
            _ => Err(Error::Config(format!("unknown sweep parameter {s:?} (expected M or V)"))),
        }
    }
}

/// Metrics at one swept value, each `(mean, sd)` over the suite seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: usize,
    pub recon_pck: (f64, f64),
    pub pred_pck: (f64, f64),
    pub occluded_pck: (f64, f64),
    /// `(seed, recon, pred, occluded)`; NaN marks a diverged run.
    pub per_seed: Vec<(u64, f64, f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub param: SweepParam,
    pub points: Vec<SweepPoint>,
}

impl SweepReport {
    pub fn point(&self, value: usize) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.value == value)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            self.param.name(),
            "recon_pck_mean",
            "recon_pck_sd",
            "pred_pck_mean",
            "pred_pck_sd",
            "occluded_pck_mean",
            "occluded_pck_sd",
        ])?;
        for p in &self.points {
            let mut rec = vec![p.value.to_string()];
            for (m, s) in [p.recon_pck, p.pred_pck, p.occluded_pck] {
                rec.push(m.to_string());
                rec.push(s.to_string());
            }
            w.write_record(&rec)?;
        }
        finish(w)
    }

    /// Line chart of the three mean metrics against the swept value, with
    /// values spaced evenly along the x axis.
    pub fn to_svg(&self) -> String {
        let (w, h, pad) = (480.0, 320.0, 48.0);
        let n = self.points.len();
        let x = |i: usize| {
            if n < 2 {
                w / 2.0
            } else {
                pad + (w - 2.0 * pad) * i as f64 / (n - 1) as f64
            }
        };
        let y = |v: f64| h - pad - (h - 2.0 * pad) * v.clamp(0.0, 1.0);
        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
        let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<line x1="{pad}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{b}" stroke="black"/>"#,
            b = h - pad,
            r = w - pad
        );
        for t in [0.0, 0.5, 1.0] {
            let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{t}</text>"#, pad - 6.0, y(t) + 4.0);
        }
        for (i, p) in self.points.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-size="11" text-anchor="middle">{}</text>"#,
                x(i),
                h - pad + 16.0,
                p.value
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#,
            w / 2.0,
            h - 8.0,
            self.param.name()
        );
        let series: [(&str, &str, fn(&SweepPoint) -> f64); 3] = [
            ("reconstruction", "black", |p| p.recon_pck.0),
            ("prediction", "steelblue", |p| p.pred_pck.0),
            ("occluded", "orange", |p| p.occluded_pck.0),
        ];
        for (k, (label, color, get)) in series.iter().enumerate() {
            let pts: Vec<String> = self
                .points
                .iter()
                .enumerate()
                .filter(|(_, p)| get(p).is_finite())
                .map(|(i, p)| format!("{:.2},{:.2}", x(i), y(get(p))))
                .collect();
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" "));
            for pt in &pts {
                let (cx, cy) = pt.split_once(',').expect("x,y");
                let _ = writeln!(s, r#"<circle cx="{cx}" cy="{cy}" r="3" fill="{color}"/>"#);
            }
            let ly = pad / 2.0 + 14.0 * k as f64;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{ly}" font-size="11" fill="{color}">{label}</text>"#,
                w - pad - 90.0
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Train the full pipeline once per `(value, seed)`, every value sharing the
/// suite's seed list.
pub fn run_sweep(suite: &SuiteConfig, param: SweepParam, values: &[usize]) -> Result<SweepReport> {
    suite.validate()?;
    if values.is_empty() {
        return Err(Error::Config("sweep: no values".into()));
    }
    let configs: Vec<TokenizerConfig> = values.iter().map(|&v| param.apply(&suite.tokenizer, v)).collect();
    for c in &configs {
        c.validate()?;
    }
    let data = suite.dataset()?;
    let jobs: Vec<(usize, u64)> = (0..values.len())
        .flat_map(|i| suite.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let results = run_cells(&jobs, cell_threads(), |&(i, seed)| {
        let Some(tok) = fit_tokenizer(suite, &data, &configs[i], seed)? else {
            return Ok((seed, f64::NAN, f64::NAN, f64::NAN));
        };
        let recon = reconstruction_pck(&tok, &data)?;
        Ok(match fit_estimator(suite, &data, &tok, &suite.estimator, seed)? {
            Some((_, pred, occ)) => (seed, recon, pred, occ),
            None => (seed, recon, f64::NAN, f64::NAN),
        })
    })?;
    let points = values
        .iter()
        .enumerate()
        .map(|(i, &value)| {
            let per_seed: Vec<(u64, f64, f64, f64)> = jobs
                .iter()
                .zip(&results)
                .filter(|((j, _), _)| *j == i)
                .map(|(_, r)| *r)
                .collect();
            let col = |f: fn(&(u64, f64, f64, f64)) -> f64| mean_sd(&per_seed.iter().map(f).collect::<Vec<_>>());
            SweepPoint {
                value,
                recon_pck: col(|r| r.1),
                pred_pck: col(|r| r.2),
                occluded_pck: col(|r| r.3),
                per_seed,
            }
        })
        .collect();
    Ok(SweepReport { param, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::EstimatorConfig;
    use crate::tokenizer::TrainConfig;

    #[test]
    fn params_parse_and_apply() {
        assert_eq!("M".parse::<SweepParam>().unwrap(), SweepParam::Tokens);
        assert_eq!("codebook_size".parse::<SweepParam>().unwrap(), SweepParam::Codebook);
        assert!("K".parse::<SweepParam>().is_err());
        let base = TokenizerConfig::default();
        assert_eq!(SweepParam::Tokens.apply(&base, 4).num_tokens, 4);
        assert_eq!(SweepParam::Codebook.apply(&base, 32).codebook_size, 32);
    }

    #[test]
    fn three_values_give_three_rows_and_a_chart() {
        let tiny = TrainConfig {
            epochs: 1,
            batch_size: 16,
            warmup_steps: 1,
            ..TrainConfig::default()
        };
        let suite = SuiteConfig {
            n_train: 32,
            n_test: 8,
            seeds: vec![3],
            tokenizer: TokenizerConfig {
                hidden_dim: 8,
                token_dim: 8,
                codebook_size: 16,
                encoder_blocks: 1,
                ..TokenizerConfig::default()
            },
            tokenizer_train: tiny.clone(),
            estimator: EstimatorConfig {
                obs_hidden: 8,
                featurizer_blocks: 1,
                ..EstimatorConfig::default()
            },
            estimator_train: tiny,
            ..SuiteConfig::default()
        };
        let r = run_sweep(&suite, SweepParam::Tokens, &[4, 8, 16]).unwrap();
        assert_eq!(r.points.len(), 3);
        assert_eq!(r.to_csv().unwrap().lines().count(), 4);
        assert_eq!(r.point(8).unwrap().per_seed.len(), 1);
        let svg = r.to_svg();
        assert!(svg.starts_with("<svg") && svg.matches("<polyline").count() == 3);
        assert!(run_sweep(&suite, SweepParam::Tokens, &[]).is_err());
        assert!(run_sweep(&suite, SweepParam::Codebook, &[1]).is_err());
    }
}
