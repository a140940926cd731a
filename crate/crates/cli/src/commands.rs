use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use normkit_core::aggregation::AggregationStrategy;
use normkit_core::deviation::{deviation_table, fit_from_controls, score_cohort, DeviationReport};
use normkit_core::evaluation::{
    contrast_table, effect_map_table, effect_maps, group_summary, group_summary_table, likelihood_ratio,
    mean_abs_columns, regression_table, select_significant_dims, adjusted_regression, LikelihoodRatio,
};
use normkit_core::model::{read_checkpoint, train, write_checkpoint, ModalityConfig, MvnModel, TrainConfig};
use normkit_core::numeric::{Matrix, RngStream};
use normkit_core::synthdata::{
    cohort_from_str, cohort_to_string, generate, normalize_by_controls, Cohort, Sex, SynthSpec, COVARIATE_DIM,
};
use normkit_core::synthdata::Stage;

use crate::config::RunConfig;
use crate::failure::Failure;
use crate::manifest::Outputs;

/// Resolved locations for one run.
pub struct Paths {
    pub cohort: PathBuf,
    pub model: PathBuf,
    pub out: PathBuf,
}

pub struct Run {
    pub cfg: RunConfig,
    pub paths: Paths,
}

impl Run {
    fn outputs(&self, command: &str) -> Outputs {
        Outputs::new(command, &self.paths.out, self.cfg.seed, &self.cfg.echo())
    }

    fn report(&self, name: &str) -> PathBuf {
        self.paths.out.join(name)
    }
}

fn read_input(path: &Path, what: &str) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::data(format!("cannot read {what} {}: {e}", path.display())))
}

fn load_cohort(run: &Run, outputs: &mut Outputs) -> Result<Cohort, Failure> {
    let text = read_input(&run.paths.cohort, "cohort")?;
    outputs.input("cohort", text.as_bytes());
    Ok(cohort_from_str(&text)?)
}

fn modality_configs(cohort: &Cohort, hidden: &[usize]) -> Result<Vec<ModalityConfig>, Failure> {
    let names = ["mri", "amyloid"];
    cohort
        .region_counts()
        .into_iter()
        .enumerate()
        .map(|(m, r)| {
            let name = match (cohort.n_modalities(), names.get(m)) {
                (2, Some(n)) => n.to_string(),
                _ => format!("m{}", m + 1),
            };
            Ok(ModalityConfig::new(name, r, hidden.to_vec())?)
        })
        .collect()
}

fn train_model(cfg: &RunConfig, cohort: &Cohort, strategy: AggregationStrategy, latent_dim: usize, seed: u64)
    -> Result<(MvnModel, normkit_core::model::LossTrace), Failure> {
    let controls = cohort.with_stage(Stage::Control);
    let model = MvnModel::new(modality_configs(cohort, &cfg.hidden)?, latent_dim, COVARIATE_DIM, strategy, seed)?;
    let tc = TrainConfig {
        epochs: cfg.epochs,
        lr: cfg.lr,
        batch_size: cfg.batch_size,
        seed,
        latent_dim,
    };
    Ok(train(&model, &controls.modalities, &controls.covariates, &tc)?)
}

/// The checkpoint must agree with the config and the cohort layout.
fn load_model(run: &Run, cohort: &Cohort, outputs: &mut Outputs) -> Result<MvnModel, Failure> {
    let text = read_input(&run.paths.model, "model checkpoint")?;
    outputs.input("model", text.as_bytes());
    let model = read_checkpoint(&text)?;
    let cfg = &run.cfg;
    let expected = modality_configs(cohort, &cfg.hidden)?;
    let mut problems = Vec::new();
    if model.strategy != cfg.strategy {
        problems.push(format!("strategy {} (config {})", model.strategy, cfg.strategy));
    }
    if model.latent_dim != cfg.latent_dim {
        problems.push(format!("latent_dim {} (config {})", model.latent_dim, cfg.latent_dim));
    }
    if model.covariate_dim != COVARIATE_DIM {
        problems.push(format!("covariate_dim {}", model.covariate_dim));
    }
    let layout = |ms: &[ModalityConfig]| ms.iter().map(|m| (m.input_dim, m.hidden_dims.clone())).collect::<Vec<_>>();
    if layout(&model.modalities) != layout(&expected) {
        problems.push("modality layout differs from the cohort and hidden sizes".into());
    }
    if problems.is_empty() {
        Ok(model)
    } else {
        Err(Failure::config(format!("checkpoint does not match the config: {}", problems.join("; "))))
    }
}

pub fn generate_cmd(run: &Run) -> Result<Vec<PathBuf>, Failure> {
    let cfg = &run.cfg;
    let mut b = SynthSpec::builder(cfg.seed);
    b.n_controls = cfg.n_controls;
    b.n_holdout = cfg.n_holdout;
    b.n_per_stage = cfg.n_per_stage;
    let cohort = generate(&b.build()).map_err(|e| Failure::config(e.to_string()))?;
    let mut outputs = run.outputs("generate");
    outputs.add("cohort", run.paths.cohort.clone(), cohort_to_string(&cohort));
    outputs.commit()
}

pub fn train_cmd(run: &Run) -> Result<Vec<PathBuf>, Failure> {
    let cfg = &run.cfg;
    let mut outputs = run.outputs("train");
    let (cohort, _) = normalize_by_controls(&load_cohort(run, &mut outputs)?)?;
    let (model, trace) = train_model(cfg, &cohort, cfg.strategy, cfg.latent_dim, cfg.seed)?;

    let mut table = String::from("epoch,total");
    for m in &model.modalities {
        let _ = write!(table, ",recon_{}", m.name);
    }
    table.push_str(",kl\n");
    for e in 0..trace.len() {
        let _ = write!(table, "{},{:.10e}", e + 1, trace.total[e]);
        for r in &trace.reconstruction[e] {
            let _ = write!(table, ",{r:.10e}");
        }
        let _ = writeln!(table, ",{:.10e}", trace.kl[e]);
    }
    outputs.add("model", run.paths.model.clone(), write_checkpoint(&model));
    outputs.add("loss_trace.csv", run.report("loss_trace.csv"), table);
    outputs.commit()
}

fn score(run: &Run, model: &MvnModel, cohort: &Cohort, alpha: f64) -> Result<Vec<DeviationReport>, Failure> {
    let rng = RngStream::new(run.cfg.seed, "evaluate");
    let stats = fit_from_controls(model, cohort, run.cfg.mode, &rng)?;
    Ok(score_cohort(model, cohort, &stats, alpha, run.cfg.mode, &rng)?)
}

/// Likelihood ratios of D_ml and D_mf flags, disease stages versus holdout.
fn ratios(reports: &[DeviationReport]) -> Result<(LikelihoodRatio, LikelihoodRatio), Failure> {
    let flags = |disease: bool, latent: bool| -> Vec<bool> {
        reports
            .iter()
            .filter(|r| if disease { r.stage.is_disease() } else { r.stage == Stage::Holdout })
            .map(|r| if latent { r.outlier_latent } else { r.outlier_feature })
            .collect()
    };
    let lr = |latent| likelihood_ratio(&flags(true, latent), &flags(false, latent));
    Ok((lr(true)?, lr(false)?))
}

/// Age and male indicator; the one-hot block is collinear with the
/// intercept.
fn regression_covariates(cohort: &Cohort, rows: &[usize]) -> Matrix {
    let mut cov = Matrix::zeros(rows.len(), 2);
    for (r, &i) in rows.iter().enumerate() {
        cov.set(r, 0, cohort.ages[i]);
        cov.set(r, 1, if cohort.sexes[i] == Sex::Male { 1.0 } else { 0.0 });
    }
    cov
}

pub fn evaluate_cmd(run: &Run) -> Result<Vec<PathBuf>, Failure> {
    let mut outputs = run.outputs("evaluate");
    let (cohort, _) = normalize_by_controls(&load_cohort(run, &mut outputs)?)?;
    let model = load_model(run, &cohort, &mut outputs)?;
    let reports = score(run, &model, &cohort, run.cfg.alpha)?;

    let (lr_ml, lr_mf) = ratios(&reports)?;
    let mut lr_table = String::from("metric,disease_rate,holdout_rate,likelihood_ratio,corrected\n");
    for (name, lr) in [("D_ml", lr_ml), ("D_mf", lr_mf)] {
        let _ = writeln!(
            lr_table,
            "{name},{:.10e},{:.10e},{:.10e},{}",
            lr.disease_rate, lr.holdout_rate, lr.ratio, lr.corrected as u8
        );
    }

    let summary = group_summary(&reports)?;

    // cognition ~ D_ml + age + sex over the subjects not used for training
    let rows: Vec<usize> = (0..cohort.len()).filter(|&i| cohort.stages[i] != Stage::Control).collect();
    let y: Vec<f64> = rows.iter().map(|&i| cohort.cognition[i]).collect();
    let x: Vec<f64> = rows.iter().map(|&i| reports[i].d_latent).collect();
    let reg = adjusted_regression(&y, &x, &regression_covariates(&cohort, &rows))?;
    let ids: Vec<String> = rows.iter().map(|&i| cohort.subject_ids[i].clone()).collect();

    outputs.add("deviations.csv", run.report("deviations.csv"), deviation_table(&reports));
    outputs.add("outliers.csv", run.report("outliers.csv"), lr_table);
    outputs.add("group_summary.csv", run.report("group_summary.csv"), group_summary_table(&summary));
    outputs.add("group_contrasts.csv", run.report("group_contrasts.csv"), contrast_table(&summary));
    outputs.add("regression.csv", run.report("regression.csv"), regression_table(&reg, &ids, &y, &x));
    outputs.commit()
}

pub fn interpret_cmd(run: &Run) -> Result<Vec<PathBuf>, Failure> {
    let cfg = &run.cfg;
    let mut outputs = run.outputs("interpret");
    let (cohort, _) = normalize_by_controls(&load_cohort(run, &mut outputs)?)?;
    let model = load_model(run, &cohort, &mut outputs)?;
    let reports = score(run, &model, &cohort, cfg.alpha)?;

    let disease: Vec<Vec<f64>> = reports
        .iter()
        .filter(|r| r.stage.is_disease())
        .map(|r| r.z_latent.clone())
        .collect();
    if disease.is_empty() {
        return Err(Failure::data("cohort has no disease subjects to interpret"));
    }
    let z = Matrix::from_rows(&disease)?;
    let selected = select_significant_dims(&z, cfg.z_threshold)?;
    let mut dims = String::from("latent_dim,mean_abs_z,selected\n");
    for (j, m) in mean_abs_columns(&z).iter().enumerate() {
        let _ = writeln!(dims, "{},{m:.10e},{}", j + 1, selected.contains(&j) as u8);
    }

    let names: Vec<String> = model.modalities.iter().map(|m| m.name.clone()).collect();
    let maps = if selected.is_empty() {
        eprintln!("no latent dimension exceeds mean |Z| {}; effect map left empty", cfg.z_threshold);
        Vec::new()
    } else {
        effect_maps(&model, &cohort, &selected, cfg.fdr_q, cfg.mode, &RngStream::new(cfg.seed, "interpret"))?
    };
    outputs.add("selected_dims.csv", run.report("selected_dims.csv"), dims);
    outputs.add("effect_maps.csv", run.report("effect_maps.csv"), effect_map_table(&maps, &names));
    outputs.commit()
}

/// Rows of the comparison grid.
pub const COMPARE_MODELS: [&str; 7] = ["mopoe", "poe", "moe", "gpoe", "mri-only", "amyloid-only", "concat"];

fn compare_cell(run: &Run, cohort: &Cohort, name: &str, d: usize) -> Result<(LikelihoodRatio, LikelihoodRatio), Failure> {
    let cfg = &run.cfg;
    let (data, strategy) = match name {
        "mri-only" => (cohort.select_modalities(&[0])?, AggregationStrategy::Poe),
        "amyloid-only" => (cohort.select_modalities(&[1])?, AggregationStrategy::Poe),
        "concat" => (cohort.concatenated()?, AggregationStrategy::Poe),
        s => (cohort.clone(), s.parse::<AggregationStrategy>()?),
    };
    let seed = RngStream::new(cfg.seed, &format!("compare/{name}/d{d}")).next_u64();
    let (model, _) = train_model(cfg, &data, strategy, d, seed)?;
    let rng = RngStream::new(seed, "evaluate");
    let stats = fit_from_controls(&model, &data, cfg.mode, &rng)?;
    let reports = score_cohort(&model, &data, &stats, cfg.alpha, cfg.mode, &rng)?;
    ratios(&reports)
}

pub fn compare_cmd(run: &Run) -> Result<Vec<PathBuf>, Failure> {
    let cfg = &run.cfg;
    let mut outputs = run.outputs("compare");
    let (cohort, _) = normalize_by_controls(&load_cohort(run, &mut outputs)?)?;
    if cohort.n_modalities() != 2 {
        return Err(Failure::data(format!(
            "compare needs a two-modality cohort, found {}",
            cohort.n_modalities()
        )));
    }
    let cells: Vec<(&str, usize)> = COMPARE_MODELS
        .iter()
        .flat_map(|&m| cfg.latent_dims.iter().map(move |&d| (m, d)))
        .collect();
    let results = cells
        .par_iter()
        .map(|&(m, d)| compare_cell(run, &cohort, m, d))
        .collect::<Result<Vec<_>, Failure>>()?;

    let mut wide = String::from("model,feature_space");
    for d in &cfg.latent_dims {
        let _ = write!(wide, ",D_ml_d{d},D_mf_d{d}");
    }
    wide.push('\n');
    let mut long = String::from(
        "model,feature_space,latent_dim,metric,disease_rate,holdout_rate,likelihood_ratio,corrected\n",
    );
    for (row, &m) in COMPARE_MODELS.iter().enumerate() {
        let space = if m.ends_with("-only") { "single-modality" } else { "joint" };
        wide.push_str(&format!("{m},{space}"));
        for (k, d) in cfg.latent_dims.iter().enumerate() {
            let (ml, mf) = &results[row * cfg.latent_dims.len() + k];
            let _ = write!(wide, ",{:.6e},{:.6e}", ml.ratio, mf.ratio);
            for (metric, lr) in [("D_ml", ml), ("D_mf", mf)] {
                let _ = writeln!(
                    long,
                    "{m},{space},{d},{metric},{:.10e},{:.10e},{:.10e},{}",
                    lr.disease_rate, lr.holdout_rate, lr.ratio, lr.corrected as u8
                );
            }
        }
        wide.push('\n');
    }
    outputs.add("likelihood_ratios.csv", run.report("likelihood_ratios.csv"), wide);
    outputs.add("likelihood_ratios_long.csv", run.report("likelihood_ratios_long.csv"), long);
    outputs.commit()
}
