//! Adam with bias correction.
//!
//! Moments and step counts are tracked per parameter, so a step that only
//! touches a subset of the set leaves the others' state alone.

use super::ParamSet;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    /// Updates applied to each parameter.
    pub param_steps: Vec<u64>,
    /// Calls to [`AdamState::step`].
    pub step_count: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet, learning_rate: f64) -> Self {
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first_moment: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            param_steps: vec![0; params.len()],
            step_count: 0,
        }
    }

    /// Updates every parameter in `which` from its gradient, then clears all
    /// gradients in the set.
    pub fn step(&mut self, params: &mut ParamSet, which: &[usize]) -> Result<()> {
        if self.first_moment.len() != params.len() {
            return Err(Error::State(format!(
                "optimizer tracks {} parameters, set has {}",
                self.first_moment.len(),
                params.len()
            )));
        }
        for &idx in which {
            let p = params.get(idx);
            match &p.grad {
                None => return Err(Error::State(format!("parameter {} has no gradient", p.name))),
                Some(g) if g.len() != p.value.len() => {
                    return Err(Error::State(format!("gradient of {} has wrong length", p.name)))
                }
                Some(_) => {}
            }
        }
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.epsilon, self.learning_rate);
        for &idx in which {
            self.param_steps[idx] += 1;
            let t = self.param_steps[idx] as i32;
            let c1 = 1.0 - b1.powi(t);
            let c2 = 1.0 - b2.powi(t);
            let p = params.get_mut(idx);
            let grad = p.grad.as_ref().expect("checked above");
            let m = &mut self.first_moment[idx];
            let v = &mut self.second_moment[idx];
            for (((w, &g), mi), vi) in p.value.data_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (1.0 - b1) * g;
                *vi = b2 * *vi + (1.0 - b2) * g * g;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        self.step_count += 1;
        params.clear_grads();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Tensor;

    fn single(value: f64, grad: Option<f64>) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.push("w", Tensor::scalar(value));
        ps.get_mut(0).grad = grad.map(|g| vec![g]);
        ps
    }

    #[test]
    fn first_step_matches_closed_form() {
        let mut ps = single(0.0, Some(1.0));
        let mut adam = AdamState::new(&ps, 1e-4);
        adam.step(&mut ps, &[0]).unwrap();
        // first bias-corrected step is -lr * g / (|g| + eps)
        let expect = -1e-4 * 1.0 / (1.0 + 1e-8);
        let got = ps.get(0).value.get(0, 0);
        assert!((got - expect).abs() < 1e-15);
        assert!((got + 1e-4).abs() < 1e-8);
        assert!(ps.get(0).grad.is_none());
        assert_eq!(adam.step_count, 1);
    }

    #[test]
    fn zero_gradient_is_a_null_update() {
        let mut ps = single(0.75, Some(0.0));
        let mut adam = AdamState::new(&ps, 1e-3);
        adam.step(&mut ps, &[0]).unwrap();
        assert_eq!(ps.get(0).value.get(0, 0), 0.75);
        assert_eq!(adam.step_count, 1);
    }

    #[test]
    fn missing_gradient_is_a_state_error() {
        let mut ps = single(0.0, None);
        let mut adam = AdamState::new(&ps, 1e-3);
        assert!(matches!(adam.step(&mut ps, &[0]), Err(Error::State(_))));
        assert_eq!(adam.step_count, 0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut ps = single(3.0, None);
        let mut adam = AdamState::new(&ps, 0.05);
        for _ in 0..2000 {
            let w = ps.get(0).value.get(0, 0);
            ps.get_mut(0).grad = Some(vec![2.0 * (w - 1.0)]);
            adam.step(&mut ps, &[0]).unwrap();
        }
        assert!((ps.get(0).value.get(0, 0) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn untouched_parameters_keep_their_state() {
        let mut ps = ParamSet::new();
        ps.push("a", Tensor::scalar(1.0));
        ps.push("b", Tensor::scalar(1.0));
        let mut adam = AdamState::new(&ps, 0.1);
        ps.get_mut(0).grad = Some(vec![1.0]);
        ps.get_mut(1).grad = Some(vec![1.0]);
        adam.step(&mut ps, &[0]).unwrap();
        assert_eq!(ps.get(1).value.get(0, 0), 1.0);
        assert_eq!(adam.param_steps, vec![1, 0]);
        assert_eq!(adam.first_moment[1], vec![0.0]);
    }
}
