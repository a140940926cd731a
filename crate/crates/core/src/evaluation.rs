//! Study-level statistics over deviation reports: likelihood ratios, group
//! contrasts, FDR control, covariate-adjusted regression and the mapping
//! from significant latent dimensions to regional effect maps.

use std::fmt::Write as _;

use crate::aggregation::LatentMode;
use crate::deviation::DeviationReport;
use crate::error::{Error, Result};
use crate::model::{joint_latent_points, MvnModel};
use crate::numeric::{Matrix, RngStream};
use crate::stats::{self, welch_t_test};
use crate::synthdata::{Cohort, Stage};

pub const DEFAULT_FDR_Q: f64 = 0.05;
pub const DEFAULT_Z_THRESHOLD: f64 = 1.96;

/// Positive likelihood ratio of outlier flags.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LikelihoodRatio {
    pub ratio: f64,
    pub disease_rate: f64,
    pub holdout_rate: f64,
    /// Set when no holdout subject was flagged and `0.5/N_holdout` stood in
    /// for the false-positive rate.
    pub corrected: bool,
}

pub fn likelihood_ratio(disease_flags: &[bool], holdout_flags: &[bool]) -> Result<LikelihoodRatio> {
    if disease_flags.is_empty() || holdout_flags.is_empty() {
        return Err(Error::arg("likelihood ratio needs non-empty disease and holdout cohorts"));
    }
    let rate = |f: &[bool]| f.iter().filter(|x| **x).count() as f64 / f.len() as f64;
    let disease_rate = rate(disease_flags);
    let observed = rate(holdout_flags);
    let corrected = observed == 0.0;
    let holdout_rate = if corrected {
        0.5 / holdout_flags.len() as f64
    } else {
        observed
    };
    Ok(LikelihoodRatio {
        ratio: disease_rate / holdout_rate,
        disease_rate,
        holdout_rate,
        corrected,
    })
}

/// Standardized mean difference `(mean_a − mean_b)/pooled_sd`.
pub fn cohens_d(group_a: &[f64], group_b: &[f64]) -> Result<f64> {
    if group_a.len() < 2 || group_b.len() < 2 {
        return Err(Error::InsufficientData("Cohen's d needs two values per group".into()));
    }
    let (na, nb) = (group_a.len() as f64, group_b.len() as f64);
    let pooled = ((na - 1.0) * stats::variance(group_a) + (nb - 1.0) * stats::variance(group_b)) / (na + nb - 2.0);
    if !(pooled > 0.0) {
        return Err(Error::Degenerate {
            what: "pooled variance".into(),
            index: 0,
        });
    }
    Ok((stats::mean(group_a) - stats::mean(group_b)) / pooled.sqrt())
}

/// Benjamini–Hochberg step-up rejections, in input order.
pub fn bh_fdr(pvals: &[f64], q: f64) -> Vec<bool> {
    let m = pvals.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvals[a].total_cmp(&pvals[b]).then(a.cmp(&b)));
    let mut cutoff = None;
    for (rank, &i) in order.iter().enumerate() {
        if pvals[i] <= (rank + 1) as f64 * q / m as f64 {
            cutoff = Some(rank);
        }
    }
    let mut reject = vec![false; m];
    if let Some(k) = cutoff {
        let threshold = pvals[order[k]];
        for (r, p) in reject.iter_mut().zip(pvals) {
            *r = *p <= threshold;
        }
    }
    reject
}

/// Least-squares fit of `y` on the columns of `design` by modified
/// Gram-Schmidt QR.
struct LeastSquares {
    coef: Vec<f64>,
    residuals: Vec<f64>,
    /// Diagonal of `(XᵀX)⁻¹`.
    inv_gram_diag: Vec<f64>,
}

fn least_squares(design: &Matrix, y: &[f64]) -> Result<LeastSquares> {
    let (n, p) = design.shape();
    if n != y.len() {
        return Err(Error::dim("response and design are not row-aligned"));
    }
    if n <= p {
        return Err(Error::SingularDesign(format!("{n} rows for {p} coefficients")));
    }
    let mut q: Vec<Vec<f64>> = (0..p).map(|j| design.column(j)).collect();
    let mut r = Matrix::zeros(p, p);
    for j in 0..p {
        let original = q[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        for k in 0..j {
            let dot: f64 = q[k].iter().zip(&q[j]).map(|(a, b)| a * b).sum();
            r.set(k, j, dot);
            let (head, tail) = q.split_at_mut(j);
            for (v, u) in tail[0].iter_mut().zip(&head[k]) {
                *v -= dot * u;
            }
        }
        let norm = q[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 1e-10 * original.max(1e-300)) {
            return Err(Error::SingularDesign(format!("column {j} is linearly dependent")));
        }
        r.set(j, j, norm);
        q[j].iter_mut().for_each(|v| *v /= norm);
    }
    let qty: Vec<f64> = q.iter().map(|col| col.iter().zip(y).map(|(a, b)| a * b).sum()).collect();
    let mut coef = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = ((i + 1)..p).map(|k| r.get(i, k) * coef[k]).sum();
        coef[i] = (qty[i] - s) / r.get(i, i);
    }
    // R⁻¹ column by column; (XᵀX)⁻¹ = R⁻¹ R⁻ᵀ
    let mut rinv = Matrix::zeros(p, p);
    for c in 0..p {
        for i in (0..=c).rev() {
            let target = if i == c { 1.0 } else { 0.0 };
            let s: f64 = ((i + 1)..=c).map(|k| r.get(i, k) * rinv.get(k, c)).sum();
            rinv.set(i, c, (target - s) / r.get(i, i));
        }
    }
    let inv_gram_diag = (0..p).map(|i| rinv.row(i).iter().map(|v| v * v).sum()).collect();
    let residuals = (0..n)
        .map(|s| y[s] - design.row(s).iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    Ok(LeastSquares {
        coef,
        residuals,
        inv_gram_diag,
    })
}

fn design_matrix(leading: &[&[f64]], covariates: &Matrix) -> Matrix {
    let n = covariates.rows();
    let p = 1 + leading.len() + covariates.cols();
    let mut x = Matrix::zeros(n, p);
    for s in 0..n {
        let row = x.row_mut(s);
        row[0] = 1.0;
        for (j, col) in leading.iter().enumerate() {
            row[1 + j] = col[s];
        }
        row[1 + leading.len()..].copy_from_slice(covariates.row(s));
    }
    x
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionResult {
    pub slope: f64,
    pub intercept: f64,
    pub covariate_coefs: Vec<f64>,
    pub slope_se: f64,
    pub slope_p: f64,
    /// Pearson correlation of `y` and `x` after regressing each on the
    /// covariates.
    pub pearson_r: f64,
    pub n: usize,
}

/// OLS of `y` on `[1, x, covariates]`.
pub fn adjusted_regression(y: &[f64], x: &[f64], covariates: &Matrix) -> Result<RegressionResult> {
    let n = y.len();
    if x.len() != n || covariates.rows() != n {
        return Err(Error::dim("regression inputs are not row-aligned"));
    }
    let full = least_squares(&design_matrix(&[x], covariates), y)?;
    let p = 2 + covariates.cols();
    let rss: f64 = full.residuals.iter().map(|r| r * r).sum();
    let dof = (n - p) as f64;
    let slope_se = (rss / dof * full.inv_gram_diag[1]).sqrt();
    let slope = full.coef[1];
    let slope_p = if slope_se > 0.0 {
        stats::t_two_sided_p(slope / slope_se, dof)
    } else if slope == 0.0 {
        1.0
    } else {
        0.0
    };

    let nuisance = design_matrix(&[], covariates);
    let ry = least_squares(&nuisance, y)?.residuals;
    let rx = least_squares(&nuisance, x)?.residuals;
    Ok(RegressionResult {
        slope,
        intercept: full.coef[0],
        covariate_coefs: full.coef[2..].to_vec(),
        slope_se,
        slope_p,
        pearson_r: stats::pearson(&ry, &rx),
        n,
    })
}

/// Zero-based dimensions whose mean |Z| over rows exceeds `threshold`.
pub fn select_significant_dims(z: &Matrix, threshold: f64) -> Result<Vec<usize>> {
    if z.rows() == 0 || z.cols() == 0 {
        return Err(Error::arg("cannot select dimensions from an empty matrix"));
    }
    if !(threshold > 0.0) {
        return Err(Error::arg("threshold must be positive"));
    }
    Ok(mean_abs_columns(z)
        .into_iter()
        .enumerate()
        .filter(|(_, m)| *m > threshold)
        .map(|(j, _)| j)
        .collect())
}

pub fn mean_abs_columns(z: &Matrix) -> Vec<f64> {
    let n = z.rows() as f64;
    (0..z.cols())
        .map(|j| (0..z.rows()).map(|r| z.get(r, j).abs()).sum::<f64>() / n)
        .collect()
}

/// Effect of one region in one group comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionEffect {
    pub modality: usize,
    pub region: usize,
    pub p_value: f64,
    pub significant: bool,
    /// Cohen's d of group versus controls; `None` for regions that did not
    /// survive FDR correction.
    pub cohens_d: Option<f64>,
    /// Cohen's d regardless of significance.
    pub raw_d: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EffectMap {
    pub stage: Stage,
    pub regions: Vec<RegionEffect>,
}

impl EffectMap {
    pub fn significant(&self) -> impl Iterator<Item = &RegionEffect> {
        self.regions.iter().filter(|r| r.significant)
    }
}

/// Welch test per column of `group` against `control`, BH correction at
/// `q` across all columns, Cohen's d of `group − control` on survivors.
/// `layout` maps each column to `(modality, region)`.
pub fn effect_map_from_values(
    stage: Stage,
    control: &Matrix,
    group: &Matrix,
    layout: &[(usize, usize)],
    q: f64,
) -> Result<EffectMap> {
    if control.rows() < 2 || group.rows() < 2 {
        return Err(Error::InsufficientData(format!(
            "effect map for {stage} needs two subjects per group"
        )));
    }
    if control.cols() != group.cols() || layout.len() != control.cols() {
        return Err(Error::dim("effect map inputs disagree in width"));
    }
    let mut pvals = Vec::with_capacity(layout.len());
    let mut ds = Vec::with_capacity(layout.len());
    for j in 0..control.cols() {
        let a = group.column(j);
        let b = control.column(j);
        pvals.push(welch_t_test(&a, &b)?.p_value);
        ds.push(match cohens_d(&a, &b) {
            Ok(d) => d,
            Err(Error::Degenerate { .. }) => 0.0,
            Err(e) => return Err(e),
        });
    }
    let keep = bh_fdr(&pvals, q);
    let regions = layout
        .iter()
        .enumerate()
        .map(|(j, &(modality, region))| RegionEffect {
            modality,
            region,
            p_value: pvals[j],
            significant: keep[j],
            cohens_d: keep[j].then_some(ds[j]),
            raw_d: ds[j],
        })
        .collect();
    Ok(EffectMap { stage, regions })
}

/// Regional deviations explained by the selected latent dimensions only.
///
/// Every subject's joint latent point is masked to `selected` (zero-based),
/// decoded with zero covariates, and compared with its observed features;
/// the squared errors are z-scored against the training controls and each
/// disease stage present in `cohort` is contrasted with those controls.
pub fn effect_maps(
    model: &MvnModel,
    cohort: &Cohort,
    selected: &[usize],
    q: f64,
    mode: LatentMode,
    rng: &RngStream,
) -> Result<Vec<EffectMap>> {
    let errors = selected_dim_errors(model, cohort, selected, mode, rng)?;
    let controls = cohort.indices_of(Stage::Control);
    if controls.len() < 2 {
        return Err(Error::InsufficientData("effect maps need at least two controls".into()));
    }
    let ctl = errors.select_rows(&controls);
    let col_mean = ctl.column_means();
    let col_std: Vec<f64> = (0..ctl.cols()).map(|j| stats::std_dev(&ctl.column(j))).collect();
    let mut z = errors.clone();
    for r in 0..z.rows() {
        for (j, v) in z.row_mut(r).iter_mut().enumerate() {
            *v = if col_std[j] > 0.0 { (*v - col_mean[j]) / col_std[j] } else { 0.0 };
        }
    }
    let mut layout = Vec::new();
    for (m, cfg) in model.modalities.iter().enumerate() {
        layout.extend((0..cfg.input_dim).map(|r| (m, r)));
    }
    let z_ctl = z.select_rows(&controls);
    Stage::DISEASE
        .iter()
        .filter_map(|&stage| {
            let idx = cohort.indices_of(stage);
            (!idx.is_empty()).then(|| effect_map_from_values(stage, &z_ctl, &z.select_rows(&idx), &layout, q))
        })
        .collect()
}

/// Squared error between observed features and the selected-dimension
/// decoding, modalities concatenated.
pub fn selected_dim_errors(
    model: &MvnModel,
    cohort: &Cohort,
    selected: &[usize],
    mode: LatentMode,
    rng: &RngStream,
) -> Result<Matrix> {
    let z = joint_latent_points(model, &cohort.modalities, &cohort.covariates, mode, &rng.substream("effects"))?;
    let mut masked = Matrix::zeros(z.rows(), z.cols());
    for r in 0..z.rows() {
        let row = crate::model::mask_latent(model, z.row(r), selected)?;
        masked.row_mut(r).copy_from_slice(&row);
    }
    let zero_cov = Matrix::zeros(z.rows(), model.covariate_dim);
    crate::model::squared_errors_from_latent(model, &cohort.modalities, &masked, &zero_cov)
}

/// Per-stage distribution of one deviation metric.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricSummary {
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub q1: f64,
    pub q3: f64,
    pub max: f64,
}

impl MetricSummary {
    fn of(values: &[f64]) -> Self {
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        MetricSummary {
            mean: stats::mean(&s),
            median: stats::quantile_sorted(&s, 0.5),
            min: s[0],
            q1: stats::quantile_sorted(&s, 0.25),
            q3: stats::quantile_sorted(&s, 0.75),
            max: s[s.len() - 1],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageSummary {
    pub stage: Stage,
    pub n: usize,
    pub latent: MetricSummary,
    pub feature: MetricSummary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseContrast {
    pub a: Stage,
    pub b: Stage,
    pub latent_p: f64,
    pub feature_p: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupSummary {
    pub stages: Vec<StageSummary>,
    pub contrasts: Vec<PairwiseContrast>,
}

impl GroupSummary {
    pub fn stage(&self, stage: Stage) -> Option<&StageSummary> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    pub fn contrast(&self, a: Stage, b: Stage) -> Option<&PairwiseContrast> {
        self.contrasts
            .iter()
            .find(|c| (c.a == a && c.b == b) || (c.a == b && c.b == a))
    }
}

/// Per-stage summaries and pairwise two-sided Welch tests for `D_ml` and
/// `D_mf`, over the stages present in `reports`.
pub fn group_summary(reports: &[DeviationReport]) -> Result<GroupSummary> {
    let groups: Vec<(Stage, Vec<&DeviationReport>)> = Stage::ALL
        .iter()
        .map(|&s| (s, reports.iter().filter(|r| r.stage == s).collect::<Vec<_>>()))
        .filter(|(_, g)| !g.is_empty())
        .collect();
    if groups.len() < 2 {
        return Err(Error::arg("group summary needs at least two stages"));
    }
    if let Some((s, _)) = groups.iter().find(|(_, g)| g.len() < 2) {
        return Err(Error::InsufficientData(format!("stage {s} has a single subject")));
    }
    let latent = |g: &[&DeviationReport]| g.iter().map(|r| r.d_latent).collect::<Vec<_>>();
    let feature = |g: &[&DeviationReport]| g.iter().map(|r| r.d_feature).collect::<Vec<_>>();
    let stages = groups
        .iter()
        .map(|(s, g)| StageSummary {
            stage: *s,
            n: g.len(),
            latent: MetricSummary::of(&latent(g)),
            feature: MetricSummary::of(&feature(g)),
        })
        .collect();
    let mut contrasts = Vec::new();
    for i in 0..groups.len() {
        for j in (i + 1)..groups.len() {
            let (a, ga) = &groups[i];
            let (b, gb) = &groups[j];
            contrasts.push(PairwiseContrast {
                a: *a,
                b: *b,
                latent_p: welch_t_test(&latent(ga), &latent(gb))?.p_value,
                feature_p: welch_t_test(&feature(ga), &feature(gb))?.p_value,
            });
        }
    }
    Ok(GroupSummary { stages, contrasts })
}

fn fmt_real(v: f64) -> String {
    format!("{v:.10e}")
}

/// Per-stage box-plot table.
pub fn group_summary_table(summary: &GroupSummary) -> String {
    let mut out = String::from("stage,n,metric,mean,median,min,q1,q3,max\n");
    for s in &summary.stages {
        for (name, m) in [("D_ml", &s.latent), ("D_mf", &s.feature)] {
            let _ = writeln!(
                out,
                "{},{},{name},{},{},{},{},{},{}",
                s.stage,
                s.n,
                fmt_real(m.mean),
                fmt_real(m.median),
                fmt_real(m.min),
                fmt_real(m.q1),
                fmt_real(m.q3),
                fmt_real(m.max)
            );
        }
    }
    out
}

/// Pairwise Welch contrasts table.
pub fn contrast_table(summary: &GroupSummary) -> String {
    let mut out = String::from("stage_a,stage_b,p_D_ml,p_D_mf\n");
    for c in &summary.contrasts {
        let _ = writeln!(out, "{},{},{},{}", c.a, c.b, fmt_real(c.latent_p), fmt_real(c.feature_p));
    }
    out
}

/// Regression coefficients followed by the scatter points.
pub fn regression_table(result: &RegressionResult, ids: &[String], y: &[f64], x: &[f64]) -> String {
    let mut out = String::from("quantity,value\n");
    let _ = writeln!(out, "n,{}", result.n);
    let _ = writeln!(out, "slope,{}", fmt_real(result.slope));
    let _ = writeln!(out, "intercept,{}", fmt_real(result.intercept));
    let _ = writeln!(out, "slope_se,{}", fmt_real(result.slope_se));
    let _ = writeln!(out, "slope_p,{}", fmt_real(result.slope_p));
    let _ = writeln!(out, "pearson_r,{}", fmt_real(result.pearson_r));
    for (i, c) in result.covariate_coefs.iter().enumerate() {
        let _ = writeln!(out, "covariate_{},{}", i + 1, fmt_real(*c));
    }
    out.push_str("\nsubject_id,y,x\n");
    for ((id, a), b) in ids.iter().zip(y).zip(x) {
        let _ = writeln!(out, "{id},{},{}", fmt_real(*a), fmt_real(*b));
    }
    out
}

/// Region, modality, stage pair, d, p and significance per row. `d` is
/// left empty for regions that did not survive correction.
pub fn effect_map_table(maps: &[EffectMap], modality_names: &[String]) -> String {
    let mut out = String::from("region,modality,stage_pair,cohens_d,p_value,significant\n");
    for m in maps {
        for r in &m.regions {
            let name = modality_names
                .get(r.modality)
                .cloned()
                .unwrap_or_else(|| format!("m{}", r.modality + 1));
            let d = r.cohens_d.map(fmt_real).unwrap_or_default();
            let _ = writeln!(
                out,
                "r{:03},{name},control-{},{d},{},{}",
                r.region + 1,
                m.stage,
                fmt_real(r.p_value),
                r.significant as u8
            );
        }
    }
    out
}
