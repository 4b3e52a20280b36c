//! Central-difference verification of analytic gradients.

use crate::error::Result;
use crate::numeric::optim::HasParameters;
use crate::rng;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub h: f64,
    pub tol: f64,
    /// Coordinates sampled per parameter; `None` checks every coordinate.
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            h: 1e-5,
            tol: 1e-4,
            max_coords_per_param: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_error: f64,
    pub worst_coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tol: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tol
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(move |p| p.max_rel_error >= self.tol)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the gradients written by `loss_and_grad` against central
/// differences of `loss`. Both closures must be deterministic functions of the
/// model parameters.
pub fn gradient_check<M: HasParameters>(
    model: &mut M,
    mut loss_and_grad: impl FnMut(&mut M) -> Result<f64>,
    mut loss: impl FnMut(&M) -> Result<f64>,
    config: GradCheckConfig,
) -> Result<GradCheckReport> {
    model.zero_grad();
    loss_and_grad(model)?;
    let analytic: Vec<(String, Vec<f64>)> = model
        .parameters()
        .into_iter()
        .map(|(name, p)| (name, p.grad.data().to_vec()))
        .collect();

    let mut sampler = rng::stream(config.seed, rng::RESERVED_STREAM_BASE);
    let mut params = Vec::with_capacity(analytic.len());
    for (pi, (name, grads)) in analytic.iter().enumerate() {
        let n = grads.len();
        let coords: Vec<usize> = match config.max_coords_per_param {
            Some(k) if k < n => {
                let mut all: Vec<usize> = (0..n).collect();
                rng::shuffle(&mut sampler, &mut all);
                all.truncate(k);
                all.sort_unstable();
                all
            }
            _ => (0..n).collect(),
        };

        let mut check = ParamCheck {
            name: name.clone(),
            coords_checked: coords.len(),
            max_rel_error: 0.0,
            worst_coord: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for &j in &coords {
            let original = model.parameters_mut()[pi].1.value.data()[j];
            model.parameters_mut()[pi].1.value.data_mut()[j] = original + config.h;
            let plus = loss(model)?;
            model.parameters_mut()[pi].1.value.data_mut()[j] = original - config.h;
            let minus = loss(model)?;
            model.parameters_mut()[pi].1.value.data_mut()[j] = original;

            let numeric = (plus - minus) / (2.0 * config.h);
            let err = relative_error(grads[j], numeric);
            if err > check.max_rel_error || (err.is_nan() && !check.max_rel_error.is_nan()) {
                check.max_rel_error = err;
                check.worst_coord = j;
                check.analytic = grads[j];
                check.numeric = numeric;
            }
        }
        params.push(check);
    }
    Ok(GradCheckReport {
        tol: config.tol,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::matrix::Matrix;
    use crate::numeric::ops::{affine, affine_backward};
    use crate::numeric::optim::Parameter;

    /// Linear regression with mean squared error.
    struct Toy {
        w: Parameter,
        b: Parameter,
        x: Matrix,
        y: Matrix,
    }

    impl HasParameters for Toy {
        fn parameters(&self) -> Vec<(String, &Parameter)> {
            vec![("w".into(), &self.w), ("b".into(), &self.b)]
        }
        fn parameters_mut(&mut self) -> Vec<(String, &mut Parameter)> {
            vec![("w".into(), &mut self.w), ("b".into(), &mut self.b)]
        }
    }

    fn mse(t: &Toy) -> (f64, Matrix) {
        let out = affine(&t.x, &t.w.value, &t.b.value).unwrap();
        let n = out.data().len() as f64;
        let mut d = out.clone();
        let mut loss = 0.0;
        for (di, (&o, &y)) in d.data_mut().iter_mut().zip(out.data().iter().zip(t.y.data())) {
            loss += (o - y) * (o - y) / n;
            *di = 2.0 * (o - y) / n;
        }
        (loss, d)
    }

    #[test]
    fn affine_mse_is_exact() {
        let mut r = rng::seeded(5);
        let mut rand = |rows, cols| {
            Matrix::new(rows, cols, (0..rows * cols).map(|_| rng::uniform(&mut r) - 0.5).collect()).unwrap()
        };
        let mut toy = Toy {
            w: Parameter::new(rand(4, 3)),
            b: Parameter::new(rand(1, 3)),
            x: rand(6, 4),
            y: rand(6, 3),
        };
        let report = gradient_check(
            &mut toy,
            |t| {
                let (loss, d) = mse(t);
                let g = affine_backward(&t.x, &t.w.value, &d)?;
                t.w.grad.add_assign(&g.dw)?;
                t.b.grad.add_assign(&g.db)?;
                Ok(loss)
            },
            |t| Ok(mse(t).0),
            GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.max_rel_error() < 1e-7, "{report:?}");
        assert_eq!(report.params[0].coords_checked, 12);
    }

    #[test]
    fn wrong_gradient_is_reported_not_thrown() {
        let mut toy = Toy {
            w: Parameter::new(Matrix::row_vector(&[1.0])),
            b: Parameter::new(Matrix::row_vector(&[0.0])),
            x: Matrix::row_vector(&[2.0]),
            y: Matrix::row_vector(&[0.0]),
        };
        let report = gradient_check(
            &mut toy,
            |t| {
                t.w.grad[(0, 0)] = 123.0;
                Ok(mse(t).0)
            },
            |t| Ok(mse(t).0),
            GradCheckConfig::default(),
        )
        .unwrap();
        assert!(!report.passed());
        assert_eq!(report.failures().next().unwrap().name, "w");
    }
}
