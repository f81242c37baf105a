use alloc::string::String;

use super::param::{join, Param, Parameterized, SeededInit};
use crate::error::{shape_err, Result};
use crate::tensor::{axpy, dot, Matrix};

/// Affine map `y = W x + b` applied row-wise; `W` is `(out, in)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, gain: f64, init: &mut SeededInit) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: init.fan_in(&[out_dim, in_dim], in_dim, gain),
            bias: Param::zeros(&[out_dim]),
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: Param::zeros(&[out_dim, in_dim]),
            bias: Param::zeros(&[out_dim]),
        }
    }

    #[inline]
    pub fn weight_row(&self, o: usize) -> &[f64] {
        &self.weight.value[o * self.in_dim..(o + 1) * self.in_dim]
    }

    pub fn forward_vec(&self, x: &[f64], out: &mut [f64]) {
        for (o, y) in out.iter_mut().enumerate() {
            *y = self.bias.value[o] + dot(self.weight_row(o), x);
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols != self.in_dim {
            return Err(shape_err(self.in_dim, x.cols));
        }
        let mut y = Matrix::zeros(x.rows, self.out_dim);
        for r in 0..x.rows {
            self.forward_vec(x.row(r), y.row_mut(r));
        }
        Ok(y)
    }

    /// Accumulate gradients for one input row and add `Wᵀ dy` into `dx`.
    pub fn backward_vec(&mut self, x: &[f64], dy: &[f64], dx: Option<&mut [f64]>) {
        let n = self.in_dim;
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            self.bias.grad[o] += g;
            axpy(g, x, &mut self.weight.grad[o * n..(o + 1) * n]);
        }
        if let Some(dx) = dx {
            for (o, &g) in dy.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                axpy(g, &self.weight.value[o * n..(o + 1) * n], dx);
            }
        }
    }

    pub fn backward(&mut self, x: &Matrix, dy: &Matrix) -> Matrix {
        let mut dx = Matrix::zeros(x.rows, self.in_dim);
        for r in 0..x.rows {
            let row = &mut dx.data[r * self.in_dim..(r + 1) * self.in_dim];
            self.backward_vec(x.row(r), dy.row(r), Some(row));
        }
        dx
    }
}

impl Parameterized for Linear {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_params_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}
