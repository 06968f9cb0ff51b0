use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Leaves everything untouched when a
/// gradient entry is not finite.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {i} is {}", grads[i])));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPSILON);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, 0.1).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(s.m, vec![0.0, 0.0]);
        assert_eq!(s.v, vec![0.0, 0.0]);
    }

    #[test]
    fn first_step_with_unit_gradient() {
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, 0.01).unwrap();
        // m̂ = 1, v̂ = 1
        assert!((p[0] + 0.01 / (1.0 + EPSILON)).abs() < 1e-15);
    }

    #[test]
    fn descends_a_parabola() {
        let mut x = vec![1.0];
        let mut s = AdamState::new(1);
        let mut prev = 1.0f64;
        for _ in 0..10 {
            let g = 2.0 * x[0];
            adam_step(&mut x, &[g], &mut s, 0.1).unwrap();
            assert!(x[0].abs() < prev);
            prev = x[0].abs();
        }
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = vec![1.0];
        let mut s = AdamState::new(1);
        assert!(matches!(
            adam_step(&mut p, &[f64::NAN], &mut s, 0.1),
            Err(Error::NonFinite(_))
        ));
        assert_eq!(p, vec![1.0]);
        assert_eq!(s.step, 0);
    }
}
