//! Joint posterior construction from unimodal posteriors.

use std::fmt;
use std::str::FromStr;

use crate::distributions::{product_of_gaussians_scaled, DiagonalGaussian, GaussianMixture};
use crate::error::{Error, Result};
use crate::numeric::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AggregationStrategy {
    /// Product of all experts and the prior.
    Poe,
    /// Uniform mixture of the unimodal posteriors.
    Moe,
    /// Product with expert precisions scaled by `1/N`, prior included.
    Gpoe,
    /// Uniform mixture over the modality power-set of subset products.
    Mopoe,
}

impl AggregationStrategy {
    pub const ALL: [AggregationStrategy; 4] = [
        AggregationStrategy::Mopoe,
        AggregationStrategy::Poe,
        AggregationStrategy::Moe,
        AggregationStrategy::Gpoe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AggregationStrategy::Poe => "poe",
            AggregationStrategy::Moe => "moe",
            AggregationStrategy::Gpoe => "gpoe",
            AggregationStrategy::Mopoe => "mopoe",
        }
    }

    pub fn is_mixture(self) -> bool {
        matches!(self, AggregationStrategy::Moe | AggregationStrategy::Mopoe)
    }
}

impl fmt::Display for AggregationStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AggregationStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "poe" => Ok(AggregationStrategy::Poe),
            "moe" => Ok(AggregationStrategy::Moe),
            "gpoe" => Ok(AggregationStrategy::Gpoe),
            "mopoe" => Ok(AggregationStrategy::Mopoe),
            other => Err(Error::arg(format!(
                "unknown aggregation strategy {other:?} (expected poe, moe, gpoe or mopoe)"
            ))),
        }
    }
}

/// How a latent point is extracted from a joint posterior.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LatentMode {
    #[default]
    Mean,
    Sample,
}

impl FromStr for LatentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mean" => Ok(LatentMode::Mean),
            "sample" => Ok(LatentMode::Sample),
            other => Err(Error::arg(format!(
                "unknown deviation mode {other:?} (expected mean or sample)"
            ))),
        }
    }
}

impl fmt::Display for LatentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LatentMode::Mean => "mean",
            LatentMode::Sample => "sample",
        })
    }
}

/// All subsets of `0..n`, ordered by size and then lexicographically.
pub fn powerset_subsets(n_modalities: usize, include_empty: bool) -> Result<Vec<Vec<usize>>> {
    if n_modalities == 0 {
        return Err(Error::arg("power set needs at least one modality"));
    }
    if n_modalities > 20 {
        return Err(Error::arg(format!("{n_modalities} modalities is too many for a power set")));
    }
    let mut subsets: Vec<Vec<usize>> = (0u32..(1u32 << n_modalities))
        .map(|mask| (0..n_modalities).filter(|i| mask & (1 << i) != 0).collect())
        .filter(|s: &Vec<usize>| include_empty || !s.is_empty())
        .collect();
    subsets.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    Ok(subsets)
}

/// One Gaussian inside a joint posterior: the product of the experts in
/// `subset`, each with precision multiplied by `precision_scale`, times the
/// prior when `include_prior` is set.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentSpec {
    pub subset: Vec<usize>,
    pub include_prior: bool,
    pub precision_scale: f64,
}

/// Component layout for `n` modalities under `strategy`.
pub fn component_specs(
    n_modalities: usize,
    strategy: AggregationStrategy,
    mopoe_include_empty: bool,
) -> Result<Vec<ComponentSpec>> {
    if n_modalities == 0 {
        return Err(Error::arg("aggregation needs at least one modality"));
    }
    let all: Vec<usize> = (0..n_modalities).collect();
    Ok(match strategy {
        AggregationStrategy::Poe => vec![ComponentSpec {
            subset: all,
            include_prior: true,
            precision_scale: 1.0,
        }],
        AggregationStrategy::Gpoe => vec![ComponentSpec {
            subset: all,
            include_prior: true,
            precision_scale: 1.0 / n_modalities as f64,
        }],
        AggregationStrategy::Moe => all
            .into_iter()
            .map(|i| ComponentSpec {
                subset: vec![i],
                include_prior: false,
                precision_scale: 1.0,
            })
            .collect(),
        AggregationStrategy::Mopoe => powerset_subsets(n_modalities, mopoe_include_empty)?
            .into_iter()
            .map(|subset| ComponentSpec {
                include_prior: subset.is_empty(),
                subset,
                precision_scale: 1.0,
            })
            .collect(),
    })
}

/// Evaluates one component spec against the unimodal posteriors.
pub fn product_for_spec(unimodal: &[DiagonalGaussian], spec: &ComponentSpec) -> Result<DiagonalGaussian> {
    if spec.subset.is_empty() {
        let d = unimodal.first().map_or(0, DiagonalGaussian::dim);
        return Ok(DiagonalGaussian::standard(d));
    }
    let experts: Vec<DiagonalGaussian> = spec
        .subset
        .iter()
        .map(|&i| {
            unimodal
                .get(i)
                .cloned()
                .ok_or_else(|| Error::arg(format!("subset refers to missing modality {i}")))
        })
        .collect::<Result<_>>()?;
    product_of_gaussians_scaled(&experts, spec.precision_scale, spec.include_prior)
}

#[derive(Clone, Debug, PartialEq)]
pub enum PosteriorForm {
    Single(DiagonalGaussian),
    Mixture(GaussianMixture),
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointPosterior {
    pub form: PosteriorForm,
    /// Modality subset behind each mixture component (MoPoE only).
    pub subset_index: Option<Vec<Vec<usize>>>,
}

impl JointPosterior {
    pub fn dim(&self) -> usize {
        match &self.form {
            PosteriorForm::Single(g) => g.dim(),
            PosteriorForm::Mixture(m) => m.dim(),
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        match &self.form {
            PosteriorForm::Single(g) => g.mean().to_vec(),
            PosteriorForm::Mixture(m) => m.mean(),
        }
    }

    /// KL to the standard-normal prior (convexity bound for mixtures).
    pub fn kl(&self) -> f64 {
        match &self.form {
            PosteriorForm::Single(g) => g.kl_to_standard_normal(),
            PosteriorForm::Mixture(m) => m.kl_bound(),
        }
    }

    pub fn components(&self) -> Vec<&DiagonalGaussian> {
        match &self.form {
            PosteriorForm::Single(g) => vec![g],
            PosteriorForm::Mixture(m) => m.components().iter().collect(),
        }
    }
}

/// Aggregates with the default MoPoE layout (empty subset included).
pub fn aggregate(unimodal: &[DiagonalGaussian], strategy: AggregationStrategy) -> Result<JointPosterior> {
    aggregate_with(unimodal, strategy, true)
}

pub fn aggregate_with(
    unimodal: &[DiagonalGaussian],
    strategy: AggregationStrategy,
    mopoe_include_empty: bool,
) -> Result<JointPosterior> {
    let first = unimodal
        .first()
        .ok_or_else(|| Error::arg("aggregation needs at least one unimodal posterior"))?;
    if let Some(g) = unimodal.iter().find(|g| g.dim() != first.dim()) {
        return Err(Error::arg(format!(
            "unimodal posteriors have latent dimensions {} and {}",
            first.dim(),
            g.dim()
        )));
    }
    let specs = component_specs(unimodal.len(), strategy, mopoe_include_empty)?;
    let components = specs
        .iter()
        .map(|s| product_for_spec(unimodal, s))
        .collect::<Result<Vec<_>>>()?;
    let form = if strategy.is_mixture() {
        PosteriorForm::Mixture(GaussianMixture::uniform(components)?)
    } else {
        PosteriorForm::Single(components.into_iter().next().expect("one component"))
    };
    let subset_index = (strategy == AggregationStrategy::Mopoe)
        .then(|| specs.into_iter().map(|s| s.subset).collect());
    Ok(JointPosterior { form, subset_index })
}

/// Latent point for deviation scoring: the (mixture) mean, or one draw.
pub fn joint_latent_point(jp: &JointPosterior, mode: LatentMode, rng: &mut RngStream) -> Vec<f64> {
    match (mode, &jp.form) {
        (LatentMode::Mean, _) => jp.mean(),
        (LatentMode::Sample, PosteriorForm::Single(g)) => g.reparameterize(rng),
        (LatentMode::Sample, PosteriorForm::Mixture(m)) => m.sample(rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::product_of_gaussians;

    fn g1(mean: f64, var: f64) -> DiagonalGaussian {
        DiagonalGaussian::new(vec![mean], vec![var]).unwrap()
    }

    #[test]
    fn powerset_examples() {
        assert_eq!(powerset_subsets(1, false).unwrap(), vec![vec![0]]);
        assert_eq!(
            powerset_subsets(2, true).unwrap(),
            vec![vec![], vec![0], vec![1], vec![0, 1]]
        );
        assert_eq!(powerset_subsets(3, false).unwrap().len(), 7);
        assert!(powerset_subsets(0, true).is_err());
    }

    #[test]
    fn powerset_matches_brute_force() {
        for n in 1..=8 {
            let got = powerset_subsets(n, true).unwrap();
            assert_eq!(got.len(), 1 << n);
            // brute force: every sorted index vector appears exactly once
            let mut seen = std::collections::HashSet::new();
            for s in &got {
                assert!(s.windows(2).all(|w| w[0] < w[1]));
                assert!(seen.insert(s.clone()));
            }
            for w in got.windows(2) {
                assert!((w[0].len(), &w[0]) < (w[1].len(), &w[1]));
            }
        }
    }

    #[test]
    fn moe_single_modality_is_identity() {
        let g = g1(0.4, 2.0);
        let jp = aggregate(&[g.clone()], AggregationStrategy::Moe).unwrap();
        match jp.form {
            PosteriorForm::Mixture(m) => {
                assert_eq!(m.components(), &[g]);
                assert_eq!(m.weights(), &[1.0]);
            }
            _ => panic!("MoE must be a mixture"),
        }
        assert!(jp.subset_index.is_none());
    }

    #[test]
    fn mopoe_two_experts() {
        let jp = aggregate(&[g1(1.0, 1.0), g1(3.0, 1.0)], AggregationStrategy::Mopoe).unwrap();
        let PosteriorForm::Mixture(m) = &jp.form else {
            panic!("MoPoE must be a mixture")
        };
        let expect = [(0.0, 1.0), (1.0, 1.0), (3.0, 1.0), (2.0, 0.5)];
        assert_eq!(m.components().len(), 4);
        for (c, (mu, var)) in m.components().iter().zip(expect) {
            assert!((c.mean()[0] - mu).abs() < 1e-12);
            assert!((c.variance()[0] - var).abs() < 1e-12);
        }
        assert!(m.weights().iter().all(|w| *w == 0.25));
        assert_eq!(
            jp.subset_index.unwrap(),
            vec![vec![], vec![0], vec![1], vec![0, 1]]
        );
    }

    #[test]
    fn gpoe_two_experts() {
        let jp = aggregate(&[g1(1.0, 1.0), g1(3.0, 1.0)], AggregationStrategy::Gpoe).unwrap();
        let PosteriorForm::Single(g) = jp.form else {
            panic!("gPoE must be single")
        };
        assert!((g.mean()[0] - 1.0).abs() < 1e-12);
        assert!((g.variance()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn poe_includes_prior() {
        let jp = aggregate(&[g1(1.0, 1.0), g1(3.0, 1.0)], AggregationStrategy::Poe).unwrap();
        let expect = product_of_gaussians(&[g1(1.0, 1.0), g1(3.0, 1.0)], true).unwrap();
        assert_eq!(jp.form, PosteriorForm::Single(expect));
    }

    #[test]
    fn single_modality_reductions() {
        let g = DiagonalGaussian::new(vec![0.3, -1.2], vec![0.6, 2.5]).unwrap();
        let with_prior = product_of_gaussians(&[g.clone()], true).unwrap();
        let poe = aggregate(&[g.clone()], AggregationStrategy::Poe).unwrap();
        let gpoe = aggregate(&[g.clone()], AggregationStrategy::Gpoe).unwrap();
        assert_eq!(poe.form, PosteriorForm::Single(with_prior.clone()));
        assert_eq!(gpoe.form, PosteriorForm::Single(with_prior));
        let mopoe = aggregate_with(&[g.clone()], AggregationStrategy::Mopoe, false).unwrap();
        assert_eq!(mopoe.components(), vec![&g]);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let a = DiagonalGaussian::standard(2);
        let b = DiagonalGaussian::standard(3);
        assert!(matches!(
            aggregate(&[a, b], AggregationStrategy::Poe),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn latent_point_mean_mode() {
        let single = aggregate(&[g1(0.7, 0.2)], AggregationStrategy::Moe).unwrap();
        let mut rng = RngStream::new(0, "x");
        assert_eq!(joint_latent_point(&single, LatentMode::Mean, &mut rng), vec![0.7]);
        let sym = aggregate(&[g1(-1.0, 1.0), g1(1.0, 1.0)], AggregationStrategy::Moe).unwrap();
        assert_eq!(joint_latent_point(&sym, LatentMode::Mean, &mut rng), vec![0.0]);
    }

    #[test]
    fn latent_point_sample_mode_monte_carlo() {
        let jp = aggregate(&[g1(-1.0, 0.5), g1(2.0, 1.5)], AggregationStrategy::Mopoe).unwrap();
        let target = jp.mean()[0];
        let comps = jp.components();
        let second: f64 = comps
            .iter()
            .map(|c| (c.variance()[0] + c.mean()[0].powi(2)) / comps.len() as f64)
            .sum();
        let var = second - target * target;
        let mut rng = RngStream::new(21, "draws");
        let n = 100_000;
        let mean = (0..n)
            .map(|_| joint_latent_point(&jp, LatentMode::Sample, &mut rng)[0])
            .sum::<f64>()
            / n as f64;
        assert!((mean - target).abs() < 3.0 * (var / n as f64).sqrt());
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in AggregationStrategy::ALL {
            assert_eq!(s.name().parse::<AggregationStrategy>().unwrap(), s);
        }
        assert!("pog".parse::<AggregationStrategy>().is_err());
    }
}
