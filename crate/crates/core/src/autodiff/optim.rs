use super::tensor::Tensor;
use crate::error::{Error, Result};

/// RMSprop: `a ← ρ·a + (1−ρ)·g²`, `p ← p − lr·g/(√a + ε)`.
#[derive(Debug, Clone)]
pub struct RmsProp {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    acc: Vec<Vec<f64>>,
}

impl RmsProp {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            rho: 0.99,
            eps: 1e-8,
            acc: Vec::new(),
        }
    }

    /// Updates `params` in place. `grads[i]` must match `params[i]` in shape.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.acc.is_empty() {
            self.acc = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        }
        if self.acc.len() != params.len() {
            return Err(Error::Shape(format!(
                "optimizer state holds {} tensors, got {}",
                self.acc.len(),
                params.len()
            )));
        }
        for ((p, g), a) in params.iter_mut().zip(grads).zip(&mut self.acc) {
            if p.shape() != g.shape() || a.len() != p.numel() {
                return Err(Error::Shape(format!(
                    "parameter {:?} vs gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
            for ((pv, &gv), av) in p.data_mut().iter_mut().zip(g.data()).zip(a.iter_mut()) {
                *av = self.rho * *av + (1.0 - self.rho) * gv * gv;
                *pv -= self.lr * gv / (av.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Global L2 norm of a set of gradients.
pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_matches_closed_form() {
        let mut p = vec![Tensor::new(vec![2], vec![1.0, -2.0]).unwrap()];
        let g = vec![Tensor::new(vec![2], vec![0.5, -3.0]).unwrap()];
        let mut opt = RmsProp::new(0.1);
        opt.step(&mut p, &g).unwrap();
        // a = 0.01·g², so g/√a = 10·sign(g).
        let expect = [1.0 - 0.1 * 0.5 / (0.01f64 * 0.25).sqrt(), -2.0 + 0.1 * 10.0];
        for (a, b) in p[0].data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut p = vec![Tensor::new(vec![1], vec![5.0]).unwrap()];
        let mut opt = RmsProp::new(0.05);
        for _ in 0..2000 {
            let g = vec![Tensor::new(vec![1], vec![2.0 * (p[0].data()[0] - 1.5)]).unwrap()];
            opt.step(&mut p, &g).unwrap();
        }
        assert!((p[0].data()[0] - 1.5).abs() < 0.05);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = vec![Tensor::zeros(&[2])];
        let g = vec![Tensor::zeros(&[3])];
        assert!(RmsProp::new(0.1).step(&mut p, &g).is_err());
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![Tensor::new(vec![2], vec![3.0, 4.0]).unwrap()];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-12);
    }
}
