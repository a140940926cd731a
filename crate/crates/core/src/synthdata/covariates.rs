use super::Sex;
use crate::error::{Error, Result};

/// Lower edges of the age decades `[40,50), …, [80,90), [90,100]`.
pub const AGE_BINS: [f64; 6] = [40.0, 50.0, 60.0, 70.0, 80.0, 90.0];

/// Six age bins plus two sex indicators.
pub const COVARIATE_DIM: usize = 8;

/// One-hot age decade followed by one-hot sex (female, male).
pub fn onehot_covariates(age: f64, sex: Sex) -> Result<Vec<f64>> {
    if !(40.0..=100.0).contains(&age) {
        return Err(Error::arg(format!("age {age} is outside [40, 100]")));
    }
    let bin = (((age - 40.0) / 10.0).floor() as usize).min(AGE_BINS.len() - 1);
    let mut v = vec![0.0; COVARIATE_DIM];
    v[bin] = 1.0;
    v[AGE_BINS.len() + if sex == Sex::Male { 1 } else { 0 }] = 1.0;
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn seventy_two_year_old_male() {
        let v = onehot_covariates(72.0, Sex::Male).unwrap();
        assert_eq!(v, vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn boundaries() {
        assert_eq!(onehot_covariates(40.0, Sex::Female).unwrap()[0], 1.0);
        assert_eq!(onehot_covariates(100.0, Sex::Female).unwrap()[5], 1.0);
        assert_eq!(onehot_covariates(89.999, Sex::Female).unwrap()[4], 1.0);
        assert!(onehot_covariates(39.9, Sex::Male).is_err());
        assert!(onehot_covariates(100.1, Sex::Male).is_err());
    }

    proptest! {
        #[test]
        fn exactly_two_hot(age in 40.0f64..=100.0, male in any::<bool>()) {
            let sex = if male { Sex::Male } else { Sex::Female };
            let v = onehot_covariates(age, sex).unwrap();
            prop_assert_eq!(v.iter().sum::<f64>(), 2.0);
            prop_assert_eq!(v.iter().filter(|x| **x == 1.0).count(), 2);
        }
    }
}
