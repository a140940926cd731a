//! Synthetic cohorts with known ground truth.
//!
//! Subjects carry a true latent vector `t ~ N(0, I_k)`. Disease stages add a
//! fixed shift to a chosen set of abnormal latent dimensions, and those
//! dimensions load only onto a chosen set of affected regions, so both the
//! latent signal and its regional footprint are known.

mod covariates;
mod io;
mod normalize;

pub use covariates::{onehot_covariates, AGE_BINS, COVARIATE_DIM};
pub use io::{cohort_from_str, cohort_to_string, read_cohort, write_cohort};
pub use normalize::{normalize_by_controls, Normalization};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numeric::{Matrix, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    /// Training controls.
    Control,
    /// Held-out controls, only used at test time.
    Holdout,
    Stage1,
    Stage2,
    Stage3,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Control,
        Stage::Holdout,
        Stage::Stage1,
        Stage::Stage2,
        Stage::Stage3,
    ];
    pub const DISEASE: [Stage; 3] = [Stage::Stage1, Stage::Stage2, Stage::Stage3];

    pub fn label(self) -> &'static str {
        match self {
            Stage::Control => "control",
            Stage::Holdout => "holdout",
            Stage::Stage1 => "stage1",
            Stage::Stage2 => "stage2",
            Stage::Stage3 => "stage3",
        }
    }

    pub fn is_disease(self) -> bool {
        matches!(self, Stage::Stage1 | Stage::Stage2 | Stage::Stage3)
    }

    /// Zero-based index into the disease stages.
    pub fn disease_index(self) -> Option<usize> {
        Stage::DISEASE.iter().position(|s| *s == self)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.label() == s)
            .ok_or_else(|| Error::arg(format!("unknown stage label {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Sex {
    Female,
    Male,
}

impl Sex {
    pub fn code(self) -> &'static str {
        match self {
            Sex::Female => "F",
            Sex::Male => "M",
        }
    }
}

impl FromStr for Sex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "F" => Ok(Sex::Female),
            "M" => Ok(Sex::Male),
            other => Err(Error::arg(format!("unknown sex code {other:?}"))),
        }
    }
}

/// Subjects with per-modality regional features, covariates, stage labels
/// and a cognition score. All fields are row-aligned.
#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    pub subject_ids: Vec<String>,
    pub stages: Vec<Stage>,
    pub ages: Vec<f64>,
    pub sexes: Vec<Sex>,
    pub cognition: Vec<f64>,
    pub modalities: Vec<Matrix>,
    /// One-hot age decade and sex, derived from `ages` and `sexes`.
    pub covariates: Matrix,
}

impl Cohort {
    pub fn new(
        subject_ids: Vec<String>,
        stages: Vec<Stage>,
        ages: Vec<f64>,
        sexes: Vec<Sex>,
        cognition: Vec<f64>,
        modalities: Vec<Matrix>,
    ) -> Result<Self> {
        let n = subject_ids.len();
        if stages.len() != n || ages.len() != n || sexes.len() != n || cognition.len() != n {
            return Err(Error::arg("cohort fields are not row-aligned"));
        }
        if modalities.is_empty() {
            return Err(Error::arg("cohort needs at least one modality"));
        }
        if let Some(m) = modalities.iter().find(|m| m.rows() != n) {
            return Err(Error::arg(format!(
                "modality matrix has {} rows for {n} subjects",
                m.rows()
            )));
        }
        let mut covariates = Matrix::zeros(n, COVARIATE_DIM);
        for i in 0..n {
            covariates
                .row_mut(i)
                .copy_from_slice(&onehot_covariates(ages[i], sexes[i])?);
        }
        Ok(Cohort {
            subject_ids,
            stages,
            ages,
            sexes,
            cognition,
            modalities,
            covariates,
        })
    }

    pub fn len(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subject_ids.is_empty()
    }

    pub fn n_modalities(&self) -> usize {
        self.modalities.len()
    }

    pub fn region_counts(&self) -> Vec<usize> {
        self.modalities.iter().map(Matrix::cols).collect()
    }

    pub fn indices_of(&self, stage: Stage) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.stages[i] == stage).collect()
    }

    /// Rows in `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Cohort {
        Cohort {
            subject_ids: indices.iter().map(|&i| self.subject_ids[i].clone()).collect(),
            stages: indices.iter().map(|&i| self.stages[i]).collect(),
            ages: indices.iter().map(|&i| self.ages[i]).collect(),
            sexes: indices.iter().map(|&i| self.sexes[i]).collect(),
            cognition: indices.iter().map(|&i| self.cognition[i]).collect(),
            modalities: self.modalities.iter().map(|m| m.select_rows(indices)).collect(),
            covariates: self.covariates.select_rows(indices),
        }
    }

    pub fn with_stage(&self, stage: Stage) -> Cohort {
        self.subset(&self.indices_of(stage))
    }

    /// Keeps only the listed modalities.
    pub fn select_modalities(&self, keep: &[usize]) -> Result<Cohort> {
        if keep.is_empty() || keep.iter().any(|&m| m >= self.n_modalities()) {
            return Err(Error::arg(format!("invalid modality selection {keep:?}")));
        }
        let mut out = self.clone();
        out.modalities = keep.iter().map(|&m| self.modalities[m].clone()).collect();
        Ok(out)
    }

    /// All modalities joined into one feature block.
    pub fn concatenated(&self) -> Result<Cohort> {
        let mut joined = self.modalities[0].clone();
        for m in &self.modalities[1..] {
            joined = joined.hcat(m)?;
        }
        let mut out = self.clone();
        out.modalities = vec![joined];
        Ok(out)
    }
}

/// Parameters of the synthetic cohort generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n_controls: usize,
    pub n_holdout: usize,
    pub n_per_stage: [usize; 3],
    pub true_latent_dim: usize,
    /// One `true_latent_dim × regions` loading matrix per modality.
    pub loadings: Vec<Matrix>,
    pub noise_std: f64,
    /// Zero-based latent dimensions that carry the disease shift.
    pub abnormal_dims: Vec<usize>,
    /// Shift added to every abnormal dimension, per disease stage, in
    /// latent standard deviations.
    pub stage_shifts: [f64; 3],
    /// Zero-based regions per modality on which abnormal dimensions load.
    pub affected_regions: Vec<Vec<usize>>,
    /// Per modality, per region effect of one decade of age above 70.
    pub age_effects: Vec<Vec<f64>>,
    /// Per modality, per region effect of male sex.
    pub sex_effects: Vec<Vec<f64>>,
    pub cognition_base: f64,
    pub cognition_slope: f64,
    pub cognition_noise: f64,
    pub age_range: (f64, f64),
    pub seed: u64,
}

impl SynthSpec {
    /// Desk-scale reference generator: 248 controls, 48 holdout, 60 per
    /// stage, two 90-region modalities, 6 true latent dimensions of which
    /// the first 3 are abnormal with stage shifts 1, 2 and 3.
    pub fn reference(seed: u64) -> SynthSpec {
        SynthSpec::builder(seed).build()
    }

    pub fn builder(seed: u64) -> SynthSpecBuilder {
        SynthSpecBuilder {
            seed,
            n_controls: 248,
            n_holdout: 48,
            n_per_stage: [60, 60, 60],
            regions: vec![90, 90],
            true_latent_dim: 6,
            n_abnormal: 3,
            stage_shifts: [1.0, 2.0, 3.0],
            affected: vec![(0..24).collect(), (30..66).collect()],
            normal_loading_std: 0.5,
            abnormal_loading: 1.2,
            noise_std: 0.5,
            covariate_effect_std: 0.3,
        }
    }

    pub fn n_modalities(&self) -> usize {
        self.loadings.len()
    }

    pub fn regions(&self) -> Vec<usize> {
        self.loadings.iter().map(Matrix::cols).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.true_latent_dim;
        if k == 0 || self.loadings.is_empty() {
            return Err(Error::arg("generator needs a latent dimension and at least one modality"));
        }
        if self.loadings.iter().any(|l| l.rows() != k || l.cols() == 0) {
            return Err(Error::arg("loading matrices must be true_latent_dim × regions"));
        }
        let m = self.n_modalities();
        if self.affected_regions.len() != m || self.age_effects.len() != m || self.sex_effects.len() != m {
            return Err(Error::arg("per-modality generator fields disagree in length"));
        }
        for (i, l) in self.loadings.iter().enumerate() {
            let r = l.cols();
            if self.age_effects[i].len() != r || self.sex_effects[i].len() != r {
                return Err(Error::arg(format!("covariate effects for modality {i} need {r} entries")));
            }
            if self.affected_regions[i].iter().any(|&a| a >= r) {
                return Err(Error::arg(format!("affected region out of range in modality {i}")));
            }
        }
        if self.abnormal_dims.iter().any(|&a| a >= k) {
            return Err(Error::arg("abnormal dimension out of range"));
        }
        if self.stage_shifts.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::arg("stage shifts must be non-decreasing"));
        }
        if self.stage_shifts.iter().any(|s| *s != 0.0) && self.abnormal_dims.is_empty() {
            return Err(Error::arg("non-zero stage shifts need abnormal dimensions"));
        }
        if !(self.noise_std >= 0.0) || !(self.cognition_noise >= 0.0) {
            return Err(Error::arg("noise levels must be non-negative"));
        }
        let (lo, hi) = self.age_range;
        if !(lo >= 40.0 && hi <= 100.0 && lo < hi) {
            return Err(Error::arg("age range must lie inside [40, 100]"));
        }
        Ok(())
    }
}

/// Builder for loading matrices and effect vectors drawn from the spec seed.
#[derive(Clone, Debug)]
pub struct SynthSpecBuilder {
    pub seed: u64,
    pub n_controls: usize,
    pub n_holdout: usize,
    pub n_per_stage: [usize; 3],
    pub regions: Vec<usize>,
    pub true_latent_dim: usize,
    /// The first `n_abnormal` latent dimensions are abnormal.
    pub n_abnormal: usize,
    pub stage_shifts: [f64; 3],
    pub affected: Vec<Vec<usize>>,
    pub normal_loading_std: f64,
    /// Mean magnitude of abnormal loadings on affected regions.
    pub abnormal_loading: f64,
    pub noise_std: f64,
    pub covariate_effect_std: f64,
}

impl SynthSpecBuilder {
    pub fn build(self) -> SynthSpec {
        let root = RngStream::new(self.seed, "synth/spec");
        let k = self.true_latent_dim;
        let n_abn = self.n_abnormal.min(k);
        let mut loadings = Vec::new();
        let mut age_effects = Vec::new();
        let mut sex_effects = Vec::new();
        for (m, &r) in self.regions.iter().enumerate() {
            let mut rng = root.substream(&format!("loadings{m}"));
            let affected = self.affected.get(m).cloned().unwrap_or_default();
            let mut l = Matrix::zeros(k, r);
            for i in 0..k {
                for j in 0..r {
                    let v = if i < n_abn {
                        if affected.contains(&j) {
                            self.abnormal_loading * (0.75 + 0.5 * rng.uniform())
                        } else {
                            0.0
                        }
                    } else {
                        self.normal_loading_std * rng.normal()
                    };
                    l.set(i, j, v);
                }
            }
            loadings.push(l);
            let mut rng = root.substream(&format!("covariates{m}"));
            age_effects.push((0..r).map(|_| self.covariate_effect_std * rng.normal()).collect());
            sex_effects.push((0..r).map(|_| self.covariate_effect_std * rng.normal()).collect());
        }
        SynthSpec {
            n_controls: self.n_controls,
            n_holdout: self.n_holdout,
            n_per_stage: self.n_per_stage,
            true_latent_dim: k,
            loadings,
            noise_std: self.noise_std,
            abnormal_dims: (0..n_abn).collect(),
            stage_shifts: self.stage_shifts,
            affected_regions: self
                .affected
                .into_iter()
                .chain(std::iter::repeat(Vec::new()))
                .take(self.regions.len())
                .collect(),
            age_effects,
            sex_effects,
            cognition_base: 8.0,
            cognition_slope: 2.5,
            cognition_noise: 3.0,
            age_range: (55.0, 90.0),
            seed: self.seed,
        }
    }
}

/// Draws a cohort from `spec`; deterministic given `spec.seed`.
pub fn generate(spec: &SynthSpec) -> Result<Cohort> {
    spec.validate()?;
    let root = RngStream::new(spec.seed, "synth/subjects");
    let groups: Vec<(Stage, usize, &str)> = vec![
        (Stage::Control, spec.n_controls, "ctl"),
        (Stage::Holdout, spec.n_holdout, "hld"),
        (Stage::Stage1, spec.n_per_stage[0], "s1_"),
        (Stage::Stage2, spec.n_per_stage[1], "s2_"),
        (Stage::Stage3, spec.n_per_stage[2], "s3_"),
    ];
    let n: usize = groups.iter().map(|g| g.1).sum();
    let regions = spec.regions();
    let mut modalities: Vec<Matrix> = regions.iter().map(|&r| Matrix::zeros(n, r)).collect();
    let mut ids = Vec::with_capacity(n);
    let mut stages = Vec::with_capacity(n);
    let mut ages = Vec::with_capacity(n);
    let mut sexes = Vec::with_capacity(n);
    let mut cognition = Vec::with_capacity(n);

    let mut row = 0;
    for (stage, count, prefix) in groups {
        let shift = stage.disease_index().map_or(0.0, |i| spec.stage_shifts[i]);
        for i in 0..count {
            let mut rng = root.substream(&format!("{}/{i}", stage.label()));
            let age = rng.uniform_range(spec.age_range.0, spec.age_range.1);
            let sex = if rng.bernoulli(0.5) { Sex::Male } else { Sex::Female };
            let mut t = rng.normals(spec.true_latent_dim);
            for &a in &spec.abnormal_dims {
                t[a] += shift;
            }
            let decade = (age - 70.0) / 10.0;
            let male = if sex == Sex::Male { 1.0 } else { 0.0 };
            for (m, load) in spec.loadings.iter().enumerate() {
                let out = modalities[m].row_mut(row);
                for (j, o) in out.iter_mut().enumerate() {
                    let signal: f64 = (0..spec.true_latent_dim).map(|k| t[k] * load.get(k, j)).sum();
                    *o = signal
                        + spec.age_effects[m][j] * decade
                        + spec.sex_effects[m][j] * male
                        + spec.noise_std * rng.normal();
                }
            }
            let injected = shift * spec.abnormal_dims.len() as f64;
            let cog = spec.cognition_base + spec.cognition_slope * injected + spec.cognition_noise * rng.normal();
            ids.push(format!("{prefix}{:04}", i + 1));
            stages.push(stage);
            ages.push(age);
            sexes.push(sex);
            cognition.push(cog.clamp(0.0, 70.0));
            row += 1;
        }
    }
    Cohort::new(ids, stages, ages, sexes, cognition, modalities)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let spec = SynthSpec::reference(3);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
    }

    #[test]
    fn reference_shape() {
        let c = generate(&SynthSpec::reference(1)).unwrap();
        assert_eq!(c.len(), 248 + 48 + 180);
        assert_eq!(c.region_counts(), vec![90, 90]);
        assert_eq!(c.indices_of(Stage::Control).len(), 248);
        assert!(c.cognition.iter().all(|v| (0.0..=70.0).contains(v)));
    }

    #[test]
    fn degenerate_generator_copies_latent() {
        let mut b = SynthSpec::builder(5);
        b.true_latent_dim = 1;
        b.n_abnormal = 0;
        b.stage_shifts = [0.0; 3];
        b.regions = vec![7];
        b.affected = vec![vec![]];
        b.noise_std = 0.0;
        b.covariate_effect_std = 0.0;
        let mut spec = b.build();
        spec.loadings = vec![Matrix::from_vec(1, 7, vec![1.0; 7]).unwrap()];
        let c = generate(&spec).unwrap();
        for s in 0..c.len() {
            let row = c.modalities[0].row(s);
            assert!(row.iter().all(|v| *v == row[0]));
        }
    }

    #[test]
    fn decreasing_shifts_rejected() {
        let mut spec = SynthSpec::reference(1);
        spec.stage_shifts = [2.0, 1.0, 3.0];
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn stage_labels_parse() {
        for s in Stage::ALL {
            assert_eq!(s.label().parse::<Stage>().unwrap(), s);
        }
        assert!("cdr2".parse::<Stage>().is_err());
    }
}
