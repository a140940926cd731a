//! Normative statistics of the control cohort and subject-level deviations.
//!
//! Two multivariate scores are produced for every subject: the Mahalanobis
//! distance of its joint latent point from the control latent distribution
//! (`D_ml`) and the Mahalanobis distance of its per-region squared
//! reconstruction errors from the controls' errors (`D_mf`). Both are turned
//! into p-values through the χ² law of a squared Mahalanobis distance under
//! multivariate normality, with dof equal to the vector length.

use std::fmt::Write as _;

use crate::aggregation::LatentMode;
use crate::error::{Error, Result};
use crate::model::{joint_latent_points, reconstruction_errors, MvnModel};
use crate::numeric::{Cholesky, Matrix, RngStream};
use crate::synthdata::{Cohort, Stage};

pub use crate::stats::p_value_chi2;

/// Default significance level for outlier flags.
pub const DEFAULT_ALPHA: f64 = 0.001;

/// Covariance regularization: `(1 − shrinkage)·S + shrinkage·diag(S)`, then
/// `+ ridge·(trace/dim)·I`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Regularization {
    pub ridge: f64,
    pub shrinkage: f64,
}

impl Regularization {
    pub const LATENT: Regularization = Regularization {
        ridge: 1e-6,
        shrinkage: 0.0,
    };
    pub const FEATURE: Regularization = Regularization {
        ridge: 1e-6,
        shrinkage: 0.1,
    };
}

/// Mean, regularized covariance (with its Cholesky factor) and per-column
/// mean/std of one control matrix.
#[derive(Clone, Debug)]
pub struct ColumnStats {
    pub mean: Vec<f64>,
    pub cov: Matrix,
    chol: Cholesky,
    pub col_mean: Vec<f64>,
    pub col_std: Vec<f64>,
}

impl ColumnStats {
    pub fn fit(x: &Matrix, reg: Regularization) -> Result<Self> {
        let (n, dim) = x.shape();
        if n < dim + 2 {
            return Err(Error::InsufficientData(format!(
                "{n} control rows for {dim} dimensions (need at least {})",
                dim + 2
            )));
        }
        if !(reg.ridge >= 0.0) || !(0.0..=1.0).contains(&reg.shrinkage) {
            return Err(Error::arg("ridge must be ≥ 0 and shrinkage in [0, 1]"));
        }
        let mean = x.column_means();
        let mut centered = x.clone();
        for r in 0..n {
            for (v, m) in centered.row_mut(r).iter_mut().zip(&mean) {
                *v -= m;
            }
        }
        let mut cov = centered.t_matmul(&centered)?;
        cov.scale(1.0 / (n as f64 - 1.0));
        let col_std: Vec<f64> = (0..dim).map(|j| cov.get(j, j).sqrt()).collect();
        if reg.shrinkage > 0.0 {
            for i in 0..dim {
                for j in 0..dim {
                    if i != j {
                        cov.set(i, j, (1.0 - reg.shrinkage) * cov.get(i, j));
                    }
                }
            }
        }
        let trace: f64 = (0..dim).map(|j| cov.get(j, j)).sum();
        let bump = reg.ridge * trace / dim as f64;
        for j in 0..dim {
            cov.set(j, j, cov.get(j, j) + bump);
        }
        let chol = Cholesky::new(&cov)?;
        Ok(ColumnStats {
            col_mean: mean.clone(),
            mean,
            cov,
            chol,
            col_std,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mahalanobis(&self, v: &[f64]) -> Result<f64> {
        if v.len() != self.dim() {
            return Err(Error::dim(format!("vector of {} for {} dimensions", v.len(), self.dim())));
        }
        let diff: Vec<f64> = v.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        Ok(self.chol.inverse_quadratic_form(&diff).sqrt())
    }

    pub fn zscores(&self, v: &[f64]) -> Result<Vec<f64>> {
        zscores(v, &self.col_mean, &self.col_std)
    }
}

/// Normative reference fitted on the training controls.
#[derive(Clone, Debug)]
pub struct ControlStats {
    pub latent: ColumnStats,
    pub feature: ColumnStats,
}

/// Fits latent and reconstruction-error statistics. `ridge` applies to
/// both; the error covariance is additionally shrunk toward its diagonal
/// with weight 0.1.
pub fn fit_control_stats(latents: &Matrix, errors: &Matrix, ridge: f64) -> Result<ControlStats> {
    fit_control_stats_with(
        latents,
        errors,
        Regularization { ridge, ..Regularization::LATENT },
        Regularization { ridge, ..Regularization::FEATURE },
    )
}

pub fn fit_control_stats_with(
    latents: &Matrix,
    errors: &Matrix,
    latent_reg: Regularization,
    feature_reg: Regularization,
) -> Result<ControlStats> {
    if latents.rows() != errors.rows() {
        return Err(Error::dim("latent and error matrices are not row-aligned"));
    }
    Ok(ControlStats {
        latent: ColumnStats::fit(latents, latent_reg)?,
        feature: ColumnStats::fit(errors, feature_reg)?,
    })
}

/// `√((v−μ)ᵀ Σ⁻¹ (v−μ))` through a Cholesky solve.
pub fn mahalanobis(v: &[f64], mean: &[f64], cov: &Matrix) -> Result<f64> {
    if v.len() != mean.len() || cov.shape() != (mean.len(), mean.len()) {
        return Err(Error::dim("mahalanobis operands disagree in dimension"));
    }
    let chol = Cholesky::new(cov)?;
    let diff: Vec<f64> = v.iter().zip(mean).map(|(a, b)| a - b).collect();
    Ok(chol.inverse_quadratic_form(&diff).sqrt())
}

/// Elementwise `(value − mean)/std`.
pub fn zscores(values: &[f64], col_mean: &[f64], col_std: &[f64]) -> Result<Vec<f64>> {
    if values.len() != col_mean.len() || values.len() != col_std.len() {
        return Err(Error::dim("z-score operands disagree in length"));
    }
    values
        .iter()
        .zip(col_mean.iter().zip(col_std))
        .enumerate()
        .map(|(i, (v, (m, s)))| {
            if !(*s > 0.0) {
                Err(Error::Degenerate {
                    what: "dimension (zero standard deviation)".into(),
                    index: i,
                })
            } else {
                Ok((v - m) / s)
            }
        })
        .collect()
}

/// Deviation scores of one subject.
#[derive(Clone, Debug, PartialEq)]
pub struct DeviationReport {
    pub subject_id: String,
    pub stage: Stage,
    pub d_latent: f64,
    pub p_latent: f64,
    pub outlier_latent: bool,
    pub d_feature: f64,
    pub p_feature: f64,
    pub outlier_feature: bool,
    pub z_latent: Vec<f64>,
    pub z_feature: Vec<f64>,
}

/// Latent points and reconstruction errors for every row of `cohort`.
pub fn latents_and_errors(
    model: &MvnModel,
    cohort: &Cohort,
    mode: LatentMode,
    rng: &RngStream,
) -> Result<(Matrix, Matrix)> {
    let z = joint_latent_points(model, &cohort.modalities, &cohort.covariates, mode, rng)?;
    let e = reconstruction_errors(model, &cohort.modalities, &cohort.covariates, mode, rng)?;
    Ok((z, e))
}

/// Control statistics from the training-control rows of `cohort`.
pub fn fit_from_controls(
    model: &MvnModel,
    cohort: &Cohort,
    mode: LatentMode,
    rng: &RngStream,
) -> Result<ControlStats> {
    let controls = cohort.with_stage(Stage::Control);
    let (z, e) = latents_and_errors(model, &controls, mode, &rng.substream("controls"))?;
    fit_control_stats_with(&z, &e, Regularization::LATENT, Regularization::FEATURE)
}

fn positive_p(p: f64) -> f64 {
    p.max(f64::MIN_POSITIVE)
}

/// Scores every subject of `cohort` against `stats`.
pub fn score_cohort(
    model: &MvnModel,
    cohort: &Cohort,
    stats: &ControlStats,
    alpha: f64,
    mode: LatentMode,
    rng: &RngStream,
) -> Result<Vec<DeviationReport>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::arg(format!("alpha must be in (0, 1], got {alpha}")));
    }
    let (z, e) = latents_and_errors(model, cohort, mode, &rng.substream("scoring"))?;
    if z.cols() != stats.latent.dim() || e.cols() != stats.feature.dim() {
        return Err(Error::dim("control statistics do not match the model"));
    }
    (0..cohort.len())
        .map(|s| {
            let d_latent = stats.latent.mahalanobis(z.row(s))?;
            let d_feature = stats.feature.mahalanobis(e.row(s))?;
            let p_latent = positive_p(p_value_chi2(d_latent, z.cols()));
            let p_feature = positive_p(p_value_chi2(d_feature, e.cols()));
            Ok(DeviationReport {
                subject_id: cohort.subject_ids[s].clone(),
                stage: cohort.stages[s],
                d_latent,
                p_latent,
                outlier_latent: p_latent < alpha,
                d_feature,
                p_feature,
                outlier_feature: p_feature < alpha,
                z_latent: stats.latent.zscores(z.row(s))?,
                z_feature: stats.feature.zscores(e.row(s))?,
            })
        })
        .collect()
}

/// Delimited report table, one row per subject.
pub fn deviation_table(reports: &[DeviationReport]) -> String {
    let mut out = String::from(
        "subject_id,stage,D_ml,p_latent,outlier_latent,D_mf,p_feature,outlier_feature",
    );
    if let Some(first) = reports.first() {
        for j in 0..first.z_latent.len() {
            let _ = write!(out, ",Z_ml_{}", j + 1);
        }
        for j in 0..first.z_feature.len() {
            let _ = write!(out, ",Z_mf_{}", j + 1);
        }
    }
    out.push('\n');
    for r in reports {
        let _ = write!(
            out,
            "{},{},{:.10e},{:.10e},{},{:.10e},{:.10e},{}",
            r.subject_id,
            r.stage,
            r.d_latent,
            r.p_latent,
            r.outlier_latent as u8,
            r.d_feature,
            r.p_feature,
            r.outlier_feature as u8
        );
        for v in r.z_latent.iter().chain(&r.z_feature) {
            let _ = write!(out, ",{v:.10e}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(values: &[f64]) -> Matrix {
        let mut m = Matrix::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m.set(i, i, *v);
        }
        m
    }

    #[test]
    fn mahalanobis_examples() {
        assert_eq!(mahalanobis(&[1.0, 2.0], &[1.0, 2.0], &Matrix::identity(2)).unwrap(), 0.0);
        assert_eq!(mahalanobis(&[1.0, 0.0], &[0.0, 0.0], &Matrix::identity(2)).unwrap(), 1.0);
        let d = mahalanobis(&[2.0, 0.0], &[0.0, 0.0], &diag(&[4.0, 1.0])).unwrap();
        assert!((d - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mahalanobis_rejects_indefinite() {
        let cov = Matrix::from_rows(&[vec![1.0, 3.0], vec![3.0, 1.0]]).unwrap();
        assert!(matches!(mahalanobis(&[1.0, 0.0], &[0.0, 0.0], &cov), Err(Error::Numeric(_))));
    }

    #[test]
    fn zscore_examples() {
        assert_eq!(zscores(&[3.0], &[3.0], &[2.0]).unwrap(), vec![0.0]);
        assert_eq!(zscores(&[7.0], &[3.0], &[2.0]).unwrap(), vec![2.0]);
        let err = zscores(&[1.0, 1.0], &[0.0, 0.0], &[1.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::Degenerate { index: 1, .. }));
    }

    #[test]
    fn ridge_is_additive_on_identity_covariance() {
        // ±1 columns in a balanced design give identity sample covariance
        let mut rows = Vec::new();
        for a in [-1.0, 1.0] {
            for b in [-1.0, 1.0] {
                rows.push(vec![a, b]);
            }
        }
        rows.extend(rows.clone());
        let x4 = Matrix::from_rows(&rows).unwrap();
        let n = x4.rows() as f64;
        let s = ColumnStats::fit(&x4, Regularization { ridge: 0.01, shrinkage: 0.0 }).unwrap();
        let base = n / (n - 1.0);
        assert!((s.cov.get(0, 0) - base * 1.01).abs() < 1e-12);
        assert!(s.cov.get(0, 1).abs() < 1e-15);
    }

    #[test]
    fn constant_column_fails_at_zscore_time() {
        let mut rng = RngStream::new(1, "c");
        let mut x = Matrix::from_vec(10, 3, rng.normals(30)).unwrap();
        for r in 0..10 {
            x.set(r, 2, 5.0);
        }
        let s = ColumnStats::fit(&x, Regularization { ridge: 0.01, shrinkage: 0.0 }).unwrap();
        assert_eq!(s.cov.get(0, 2), 0.0);
        assert_eq!(s.col_std[2], 0.0);
        assert!(matches!(s.zscores(x.row(0)), Err(Error::Degenerate { index: 2, .. })));
    }

    #[test]
    fn insufficient_rows_rejected() {
        let x = Matrix::zeros(4, 3);
        assert!(matches!(
            ColumnStats::fit(&x, Regularization::LATENT),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn monte_carlo_standard_normal_columns() {
        let mut rng = RngStream::new(8, "mc");
        let n = 100_000;
        let x = Matrix::from_vec(n, 2, rng.normals(2 * n)).unwrap();
        let s = ColumnStats::fit(&x, Regularization { ridge: 0.0, shrinkage: 0.0 }).unwrap();
        for j in 0..2 {
            assert!(s.mean[j].abs() < 0.02);
            for k in 0..2 {
                let target = if j == k { 1.0 } else { 0.0 };
                assert!((s.cov.get(j, k) - target).abs() < 0.02);
            }
        }
    }

    #[test]
    fn controls_self_standardize() {
        let mut rng = RngStream::new(3, "z");
        let x = Matrix::from_vec(50, 4, rng.normals(200).iter().map(|v| 3.0 * v + 1.0).collect()).unwrap();
        let s = ColumnStats::fit(&x, Regularization::LATENT).unwrap();
        let z: Vec<Vec<f64>> = (0..50).map(|r| s.zscores(x.row(r)).unwrap()).collect();
        for j in 0..4 {
            let col: Vec<f64> = z.iter().map(|r| r[j]).collect();
            assert!(crate::stats::mean(&col).abs() < 1e-10);
            assert!((crate::stats::std_dev(&col) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn table_layout() {
        let r = DeviationReport {
            subject_id: "s1".into(),
            stage: Stage::Stage2,
            d_latent: 1.0,
            p_latent: 0.5,
            outlier_latent: false,
            d_feature: 2.0,
            p_feature: 0.0001,
            outlier_feature: true,
            z_latent: vec![0.1, 0.2],
            z_feature: vec![1.0],
        };
        let t = deviation_table(&[r]);
        let header = t.lines().next().unwrap();
        assert_eq!(
            header,
            "subject_id,stage,D_ml,p_latent,outlier_latent,D_mf,p_feature,outlier_feature,Z_ml_1,Z_ml_2,Z_mf_1"
        );
        assert!(t.lines().nth(1).unwrap().starts_with("s1,stage2,"));
    }
}
