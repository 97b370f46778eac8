use crate::manifest::Manifest;
use crate::{Command, DataArg, GlobalArgs, HeadKind, SplitArg};
use pct_core::checkpoint::{
    load_predictor, load_tokenizer, save_bins, save_estimator, save_regression, save_tokenizer, sha256_file, Predictor,
};
use pct_core::config::RunConfig;
use pct_core::estimator::{train_bins, train_estimator, train_regression, PosePredictor};
use pct_core::evaluation::{
    locality_matrix, reconstruction_report, render_swap, run_ablation, run_benchmark, run_sweep, swap_plan, swap_token,
    MetricsReport, SweepParam, REPORT_THRESHOLDS,
};
use pct_core::posedata::{load_jsonl, load_pose_records, save_jsonl, save_pose_records, DatasetSplit, Pose, Split};
use pct_core::tokenizer::{train_tokenizer, TokenSeq};
use pct_core::{Error, Result};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

fn load_config(g: &GlobalArgs) -> Result<RunConfig> {
    let mut config = RunConfig::load(g.config.as_deref(), &g.set)?;
    if let Some(s) = g.seed {
        config.seed = s;
    }
    if let Some(o) = &g.out {
        config.out = o.clone();
    }
    config.validate()?;
    Ok(config)
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

fn dataset<A: serde::Serialize>(config: &RunConfig, data: &DataArg, m: &mut Manifest<A>) -> Result<DatasetSplit> {
    match &data.data {
        Some(p) => {
            m.input("data", p)?;
            let d = load_jsonl(p)?;
            let s = config.skeleton()?;
            if d.skeleton.name != s.name {
                return Err(Error::Config(format!(
                    "dataset skeleton {} does not match config {}",
                    d.skeleton.name, s.name
                )));
            }
            Ok(d)
        }
        None => {
            let d = &config.data;
            DatasetSplit::generate(&config.skeleton()?, config.seed, d.n_train, d.n_val, d.n_test)
        }
    }
}

fn nonempty<'a>(poses: &'a [Pose], split: SplitArg) -> Result<&'a [Pose]> {
    if poses.is_empty() {
        return Err(Error::InvalidArgument(format!("split {split:?} is empty")));
    }
    Ok(poses)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn write_tokens(path: &Path, seqs: &[TokenSeq]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for s in seqs {
        serde_json::to_writer(&mut w, &s.0)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_tokens(path: &Path) -> Result<Vec<TokenSeq>> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let idx: Vec<usize> = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(TokenSeq(idx));
    }
    Ok(out)
}

fn check_shape(predictor: &Predictor, config: &RunConfig) -> Result<()> {
    let (k, d) = predictor.pose_shape();
    let s = config.skeleton()?;
    if (k, d) != (s.num_joints(), s.dim) {
        return Err(Error::Config(format!(
            "checkpoint predicts K={k} D={d}, skeleton {} has K={} D={}",
            s.name,
            s.num_joints(),
            s.dim
        )));
    }
    Ok(())
}

pub fn run(g: &GlobalArgs, cmd: &Command) -> Result<()> {
    let config = load_config(g)?;
    let out = config.out.clone();
    std::fs::create_dir_all(&out)?;
    let mut m = Manifest::new(cmd.manifest_name(), cmd, &config)?;
    let mut files: Vec<PathBuf> = Vec::new();
    match cmd {
        Command::GenData { n } => {
            let d = &config.data;
            let split = DatasetSplit::generate(&config.skeleton()?, config.seed, n.unwrap_or(d.n_train), d.n_val, d.n_test)?;
            let p = out.join("data.jsonl");
            save_jsonl(&split, &p)?;
            files.push(p);
        }
        Command::TrainTokenizer { data } => {
            let d = dataset(&config, data, &mut m)?;
            let (model, log) = train_tokenizer(
                &config.tokenizer,
                &config.tokenizer_train,
                nonempty(&d.train, SplitArg::Train)?,
                Some(&d.skeleton),
                config.seed,
            )?;
            let p = out.join("tokenizer.pctc");
            save_tokenizer(&model, &p)?;
            let log_path = out.join("tokenizer_log.json");
            write_json(&log_path, &log)?;
            files.extend([p.clone(), pct_core::checkpoint::sidecar_path(&p), log_path]);
        }
        Command::TrainEstimator { data, tokenizer, kind } => {
            let d = dataset(&config, data, &mut m)?;
            let train = nonempty(&d.train, SplitArg::Train)?;
            let (e, t) = (&config.estimator, &config.estimator_train);
            let (p, log) = match kind {
                HeadKind::Tokens => {
                    let tp = tokenizer
                        .as_deref()
                        .ok_or_else(|| Error::InvalidArgument("the token head needs --tokenizer".into()))?;
                    m.input("tokenizer", tp)?;
                    let tok = load_tokenizer(tp)?;
                    let (model, log) = train_estimator(e, t, &tok, train, config.seed)?;
                    let p = out.join("estimator.pctc");
                    save_estimator(&model, &sha256_file(tp)?, &p)?;
                    (p, log)
                }
                HeadKind::Regression => {
                    let (model, log) = train_regression(e, t, train, config.seed)?;
                    let p = out.join("regression.pctc");
                    save_regression(&model, &p)?;
                    (p, log)
                }
                HeadKind::Bins => {
                    let (model, log) = train_bins(e, t, train, config.seed)?;
                    let p = out.join("bins.pctc");
                    save_bins(&model, &p)?;
                    (p, log)
                }
            };
            let log_path = out.join(format!("{}_log.json", p.file_stem().expect("named").to_string_lossy()));
            write_json(&log_path, &log)?;
            files.extend([p.clone(), pct_core::checkpoint::sidecar_path(&p), log_path]);
        }
        Command::Encode { data, tokenizer, split } => {
            m.input("tokenizer", tokenizer)?;
            let tok = load_tokenizer(tokenizer)?;
            let d = dataset(&config, data, &mut m)?;
            let poses = nonempty(d.split((*split).into()), *split)?;
            let visible: Vec<Pose> = poses.iter().map(Pose::all_visible).collect();
            let p = out.join("tokens.jsonl");
            write_tokens(&p, &tok.tokenize_batch(&visible)?)?;
            files.push(p);
        }
        Command::Decode { tokenizer, tokens } => {
            m.input("tokenizer", tokenizer)?;
            m.input("tokens", tokens)?;
            let tok = load_tokenizer(tokenizer)?;
            let p = out.join("decoded.jsonl");
            save_pose_records(&tok.detokenize_batch(&read_tokens(tokens)?)?, &p)?;
            files.push(p);
        }
        Command::Predict {
            data,
            estimator,
            tokenizer,
            split,
            mask_rate,
        } => {
            if !(0.0..1.0).contains(mask_rate) {
                return Err(Error::InvalidArgument(format!("mask rate {mask_rate} outside [0, 1)")));
            }
            m.input("estimator", estimator)?;
            if let Some(t) = tokenizer {
                m.input("tokenizer", t)?;
            }
            let predictor = load_predictor(estimator, tokenizer.as_deref())?;
            check_shape(&predictor, &config)?;
            let d = dataset(&config, data, &mut m)?;
            let obs = config
                .benchmark
                .observations(nonempty(d.split((*split).into()), *split)?, *mask_rate)?;
            let preds = match &predictor {
                Predictor::Tokens(model) => {
                    let seqs = model.predict_tokens_batch(&obs)?;
                    let tp = out.join("predicted_tokens.jsonl");
                    write_tokens(&tp, &seqs)?;
                    files.push(tp);
                    model.tokenizer.detokenize_batch(&seqs)?
                }
                other => other.predict_poses(&obs)?,
            };
            let p = out.join("predictions.jsonl");
            save_pose_records(&preds, &p)?;
            files.push(p);
        }
        Command::Eval {
            data,
            tokenizer,
            estimator,
            predictions,
            split,
        } => {
            if tokenizer.is_none() && estimator.is_none() && predictions.is_none() {
                return Err(Error::InvalidArgument(
                    "eval needs --tokenizer, --estimator or --predictions".into(),
                ));
            }
            let d = dataset(&config, data, &mut m)?;
            let gts = nonempty(d.split((*split).into()), *split)?;
            let mut report = serde_json::Map::new();
            if let Some(t) = tokenizer {
                m.input("tokenizer", t)?;
                let tok = load_tokenizer(t)?;
                report.insert("reconstruction".into(), serde_json::to_value(reconstruction_report(&tok, gts)?)?);
            }
            if let Some(e) = estimator {
                m.input("estimator", e)?;
                let predictor = load_predictor(e, tokenizer.as_deref())?;
                check_shape(&predictor, &config)?;
                let scores = run_benchmark(&predictor, gts, &config.benchmark)?;
                report.insert("benchmark".into(), serde_json::to_value(scores)?);
            }
            if let Some(p) = predictions {
                m.input("predictions", p)?;
                let s = config.skeleton()?;
                let preds = load_pose_records(p, s.num_joints(), s.dim)?;
                let r = MetricsReport::compute(&preds, gts, None, &REPORT_THRESHOLDS)?;
                report.insert("predictions".into(), serde_json::to_value(r)?);
            }
            let p = out.join("metrics.json");
            write_json(&p, &report)?;
            files.push(p);
        }
        Command::AnalyzeTokens {
            data,
            tokenizer,
            render,
            swaps,
        } => {
            m.input("tokenizer", tokenizer)?;
            let tok = load_tokenizer(tokenizer)?;
            let d = dataset(&config, data, &mut m)?;
            let poses = nonempty(&d.test, SplitArg::Test)?;
            let matrix = locality_matrix(
                &tok,
                &d.skeleton,
                poses,
                swaps.unwrap_or(config.suite.swaps_per_token),
                config.seed,
            )?;
            let csv_path = out.join("locality.csv");
            std::fs::write(&csv_path, matrix.to_csv()?)?;
            let summary_path = out.join("locality.json");
            write_json(
                &summary_path,
                &serde_json::json!({
                    "mean_index": matrix.mean_index(),
                    "control_index": matrix.control_index,
                    "nonempty_fraction": matrix.nonempty_fraction,
                    "top_joints": matrix.top_joints,
                }),
            )?;
            files.extend([csv_path, summary_path]);
            let dir = out.join("swaps");
            std::fs::create_dir_all(&dir)?;
            for e in swap_plan(&tok, poses, *render, config.seed)? {
                let (before, after) = swap_token(&tok, &poses[e.pose], e.token, e.entry)?;
                let p = dir.join(format!("token{:02}_swap{:02}.svg", e.token, e.swap));
                render_swap(&d.skeleton, &before, &after, &p)?;
                files.push(p);
            }
        }
        Command::Ablate => {
            let report = run_ablation(&config.suite_config()?)?;
            let (rows, cells) = (out.join("ablation.csv"), out.join("ablation_cells.csv"));
            std::fs::write(&rows, report.to_csv()?)?;
            std::fs::write(&cells, report.cells_csv()?)?;
            files.extend([rows, cells]);
        }
        Command::Sweep { param, values } => {
            let param: SweepParam = param.parse()?;
            let values = if values.is_empty() {
                match param {
                    SweepParam::Tokens => config.suite.token_values.clone(),
                    SweepParam::Codebook => config.suite.codebook_values.clone(),
                }
            } else {
                values.clone()
            };
            let report = run_sweep(&config.suite_config()?, param, &values)?;
            let (csv, svg) = (
                out.join(format!("sweep_{}.csv", param.name())),
                out.join(format!("sweep_{}.svg", param.name())),
            );
            std::fs::write(&csv, report.to_csv()?)?;
            std::fs::write(&svg, report.to_svg())?;
            files.extend([csv, svg]);
        }
    }
    m.write(&out, &files)
}
