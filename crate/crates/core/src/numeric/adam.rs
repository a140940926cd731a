use super::ParamSet;
use crate::error::{Error, Result};

/// Adam optimizer state: hyperparameters plus first/second moment estimates
/// mirroring the parameter blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: ParamSet,
    pub v: ParamSet,
}

impl AdamState {
    /// Fresh state with zero moments shaped like `params` and the default
    /// betas (0.9, 0.999) and epsilon 1e-8.
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        AdamState {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    /// One bias-corrected Adam update of every block, in place.
    ///
    /// Gradients are validated before anything is touched, so a rejected
    /// step leaves both the parameters and the state unchanged.
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<()> {
        params.check_congruent(grads)?;
        params.check_congruent(&self.m)?;
        for (name, g) in grads.iter() {
            if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::numeric(format!(
                    "non-finite gradient in block {name} at entry {i}"
                )));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);

        let blocks = params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()));
        for (((_, p), (_, g)), ((_, m), (_, v))) in blocks {
            let it = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((w, &g), (m, v)) in it {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Functional form: returns updated copies of the parameters and the state.
pub fn adam_step(
    state: &AdamState,
    params: &ParamSet,
    grads: &ParamSet,
) -> Result<(ParamSet, AdamState)> {
    let mut state = state.clone();
    let mut params = params.clone();
    state.step(&mut params, grads)?;
    Ok((params, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Matrix;

    fn scalar(name: &str, v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert(name, Matrix::row_vector(&[v])).unwrap();
        p
    }

    fn value(p: &ParamSet) -> f64 {
        p.get("w").unwrap().data()[0]
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let params = scalar("w", 1.5);
        let state = AdamState::new(&params, 0.1);
        let (p1, s1) = adam_step(&state, &params, &scalar("w", 0.0)).unwrap();
        assert_eq!(p1, params);
        assert_eq!(s1.step, 1);
        assert_eq!(s1.m, state.m);
        assert_eq!(s1.v, state.v);
    }

    #[test]
    fn single_step_hand_evaluation() {
        // m = 0.1, v = 0.001; m̂ = 1, v̂ = 1 → w = 1 - 0.1 · 1/(1 + 1e-8)
        let params = scalar("w", 1.0);
        let state = AdamState::new(&params, 0.1);
        let (p1, _) = adam_step(&state, &params, &scalar("w", 1.0)).unwrap();
        assert!((value(&p1) - 0.9).abs() < 1e-6);
        assert!((value(&p1) - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn moments_decay_under_zero_gradients() {
        let params = scalar("w", 1.0);
        let s0 = AdamState::new(&params, 0.1);
        let (p1, s1) = adam_step(&s0, &params, &scalar("w", 1.0)).unwrap();
        let (p2, s2) = adam_step(&s1, &p1, &scalar("w", 0.0)).unwrap();
        let (_, s3) = adam_step(&s2, &p2, &scalar("w", 0.0)).unwrap();
        let m1 = value(&s1.m);
        let v1 = value(&s1.v);
        assert!((m1 - 0.1).abs() < 1e-15);
        assert!((v1 - 0.001).abs() < 1e-15);
        assert!((value(&s3.m) - m1 * 0.9 * 0.9).abs() < 1e-15);
        assert!((value(&s3.v) - v1 * 0.999 * 0.999).abs() < 1e-15);
        assert_eq!(s3.step, 3);
    }

    #[test]
    fn non_finite_gradient_names_block() {
        let params = scalar("w", 1.0);
        let mut state = AdamState::new(&params, 0.1);
        let mut p = params.clone();
        let err = state.step(&mut p, &scalar("w", f64::NAN)).unwrap_err();
        assert!(err.to_string().contains("block w"));
        assert_eq!(state.step, 0);
        assert_eq!(p, params);
    }
}
