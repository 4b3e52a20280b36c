use crate::error::{Error, Result};
use crate::numeric::matrix::Matrix;

/// A trainable matrix with its gradient and Adam moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub value: Matrix,
    pub grad: Matrix,
    pub opt_m: Matrix,
    pub opt_v: Matrix,
    pub step_count: u64,
}

impl Parameter {
    pub fn new(value: Matrix) -> Self {
        let (r, c) = value.shape();
        Parameter {
            value,
            grad: Matrix::zeros(r, c),
            opt_m: Matrix::zeros(r, c),
            opt_v: Matrix::zeros(r, c),
            step_count: 0,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Models expose their parameters by name for optimization, gradient
/// checking and checkpointing.
pub trait HasParameters {
    fn parameters(&self) -> Vec<(String, &Parameter)>;
    fn parameters_mut(&mut self) -> Vec<(String, &mut Parameter)>;

    fn zero_grad(&mut self) {
        for (_, p) in self.parameters_mut() {
            p.zero_grad();
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected Adam update. The gradient is left in place.
    pub fn step(&self, name: &str, param: &mut Parameter) -> Result<()> {
        if !param.grad.is_finite() {
            return Err(Error::TrainingDivergence(name.to_string()));
        }
        param.step_count += 1;
        let t = param.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let Parameter {
            value,
            grad,
            opt_m,
            opt_v,
            ..
        } = param;
        for (((w, &g), m), v) in value
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(opt_m.data_mut())
            .zip(opt_v.data_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }

    pub fn step_all<M: HasParameters + ?Sized>(&self, model: &mut M) -> Result<()> {
        for (name, p) in model.parameters_mut() {
            self.step(&name, p)?;
        }
        Ok(())
    }
}

pub fn global_norm<'a>(grads: impl IntoIterator<Item = &'a Matrix>) -> f64 {
    grads.into_iter().map(Matrix::sum_squares).sum::<f64>().sqrt()
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the scale that was applied (1 when no clipping happened).
pub fn clip_global_norm(params: &mut [&mut Parameter], max_norm: f64) -> f64 {
    let g = global_norm(params.iter().map(|p| &p.grad));
    if g <= max_norm || !g.is_finite() {
        return 1.0;
    }
    let scale = max_norm / g;
    for p in params.iter_mut() {
        p.grad.scale(scale);
    }
    scale
}

pub fn clip_model_grads<M: HasParameters + ?Sized>(model: &mut M, max_norm: f64) -> f64 {
    let mut params: Vec<&mut Parameter> = model.parameters_mut().into_iter().map(|(_, p)| p).collect();
    clip_global_norm(&mut params, max_norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64, g: f64) -> Parameter {
        let mut p = Parameter::new(Matrix::row_vector(&[v]));
        p.grad = Matrix::row_vector(&[g]);
        p
    }

    #[test]
    fn zero_grad_leaves_value() {
        let mut p = scalar(0.7, 0.0);
        Adam::new(1e-3).step("p", &mut p).unwrap();
        assert_eq!(p.value[(0, 0)], 0.7);
        assert_eq!(p.step_count, 1);
    }

    #[test]
    fn first_step_matches_hand_formula() {
        let mut p = scalar(0.0, 1.0);
        Adam::new(1e-3).step("p", &mut p).unwrap();
        // m_hat = 1, v_hat = 1, so the step is -lr / (1 + eps).
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((p.value[(0, 0)] - expected).abs() < 1e-18);
        assert!((p.value[(0, 0)] + 9.99999e-4).abs() < 1e-9);
        assert_eq!(p.grad[(0, 0)], 1.0);
    }

    #[test]
    fn identical_states_step_identically() {
        let mut a = scalar(0.3, -0.2);
        let mut b = a.clone();
        let adam = Adam::new(1e-2);
        for _ in 0..5 {
            adam.step("a", &mut a).unwrap();
            adam.step("b", &mut b).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let mut p = scalar(0.0, f64::INFINITY);
        assert!(matches!(
            Adam::new(1e-3).step("w", &mut p),
            Err(Error::TrainingDivergence(name)) if name == "w"
        ));
    }

    #[test]
    fn clipping() {
        let mut p = Parameter::new(Matrix::zeros(1, 2));
        p.grad = Matrix::row_vector(&[3.0, 4.0]);
        let s = clip_global_norm(&mut [&mut p], 2.5);
        assert!((s - 0.5).abs() < 1e-15);
        assert_eq!(p.grad.data(), &[1.5, 2.0]);

        let before = p.grad.clone();
        assert_eq!(clip_global_norm(&mut [&mut p], 10.0), 1.0);
        assert_eq!(p.grad, before);
    }
}
