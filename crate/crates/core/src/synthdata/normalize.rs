use super::{Cohort, Stage};
use crate::error::{Error, Result};
use crate::stats;

/// Per-modality, per-region training-control mean and standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalization {
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
}

/// Standardizes every region by the training controls' mean and standard
/// deviation and applies the same transform to every other row.
pub fn normalize_by_controls(cohort: &Cohort) -> Result<(Cohort, Normalization)> {
    let controls = cohort.indices_of(Stage::Control);
    if controls.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "normalization needs at least two training controls, found {}",
            controls.len()
        )));
    }
    let mut out = cohort.clone();
    let mut norm = Normalization {
        mean: Vec::new(),
        std: Vec::new(),
    };
    let mut offset = 0;
    for (m, x) in cohort.modalities.iter().enumerate() {
        let ctl = x.select_rows(&controls);
        let mut means = Vec::with_capacity(x.cols());
        let mut stds = Vec::with_capacity(x.cols());
        for j in 0..x.cols() {
            let col = ctl.column(j);
            let sd = stats::std_dev(&col);
            if !(sd > 0.0) {
                return Err(Error::Degenerate {
                    what: format!("region (modality {m}, zero control std)"),
                    index: offset + j,
                });
            }
            means.push(stats::mean(&col));
            stds.push(sd);
        }
        let target = &mut out.modalities[m];
        for r in 0..target.rows() {
            for (v, (mu, sd)) in target.row_mut(r).iter_mut().zip(means.iter().zip(&stds)) {
                *v = (*v - mu) / sd;
            }
        }
        offset += x.cols();
        norm.mean.push(means);
        norm.std.push(stds);
    }
    Ok((out, norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate, SynthSpec};

    fn small() -> Cohort {
        let mut b = SynthSpec::builder(2);
        b.n_controls = 40;
        b.n_holdout = 5;
        b.n_per_stage = [5, 5, 5];
        b.regions = vec![6, 4];
        b.affected = vec![vec![0, 1], vec![2]];
        generate(&b.build()).unwrap()
    }

    #[test]
    fn controls_are_standardized() {
        let (c, _) = normalize_by_controls(&small()).unwrap();
        let ctl = c.with_stage(Stage::Control);
        for x in &ctl.modalities {
            for j in 0..x.cols() {
                let col = x.column(j);
                assert!(stats::mean(&col).abs() < 1e-10);
                assert!((stats::std_dev(&col) - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn disease_rows_use_control_statistics() {
        let raw = small();
        let (c, norm) = normalize_by_controls(&raw).unwrap();
        let s = raw.indices_of(Stage::Stage3)[0];
        for j in 0..6 {
            let expect = (raw.modalities[0].get(s, j) - norm.mean[0][j]) / norm.std[0][j];
            assert_eq!(c.modalities[0].get(s, j), expect);
        }
    }

    #[test]
    fn renormalizing_recomputes_statistics() {
        let (once, _) = normalize_by_controls(&small()).unwrap();
        let (twice, norm) = normalize_by_controls(&once).unwrap();
        assert!(norm.mean.iter().flatten().all(|m| m.abs() < 1e-10));
        let ctl = twice.with_stage(Stage::Control);
        assert!(stats::mean(&ctl.modalities[1].column(0)).abs() < 1e-10);
    }

    #[test]
    fn constant_region_is_degenerate() {
        let mut raw = small();
        for r in 0..raw.len() {
            raw.modalities[1].set(r, 3, 2.0);
        }
        let err = normalize_by_controls(&raw).unwrap_err();
        assert!(matches!(err, Error::Degenerate { index: 9, .. }));
    }
}
