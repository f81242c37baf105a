use alloc::string::String;

use super::param::{join, Param, Parameterized};
use crate::math::sigmoid;
use crate::tensor::Tensor4;

#[inline]
pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

#[inline]
pub fn relu_backward(x: f64, dy: f64) -> f64 {
    if x > 0.0 {
        dy
    } else {
        0.0
    }
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// d/dx of `x·σ(x)`.
#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Channel-wise parametric rectifier.
#[derive(Debug, Clone)]
pub struct PRelu {
    pub slope: Param,
}

impl PRelu {
    pub fn new(channels: usize, init: f64) -> Self {
        Self {
            slope: Param::filled(&[channels], init),
        }
    }

    pub fn forward(&self, x: &Tensor4) -> Tensor4 {
        let mut y = x.clone();
        for n in 0..x.n {
            for c in 0..x.c {
                let a = self.slope.value[c];
                for v in y.plane_mut(n, c) {
                    if *v <= 0.0 {
                        *v *= a;
                    }
                }
            }
        }
        y
    }

    pub fn backward(&mut self, x: &Tensor4, dy: &Tensor4) -> Tensor4 {
        let mut dx = dy.clone();
        for n in 0..x.n {
            for c in 0..x.c {
                let a = self.slope.value[c];
                let mut da = 0.0;
                let xs = x.plane(n, c);
                for (g, &xv) in dx.plane_mut(n, c).iter_mut().zip(xs) {
                    if xv <= 0.0 {
                        da += xv * *g;
                        *g *= a;
                    }
                }
                self.slope.grad[c] += da;
            }
        }
        dx
    }
}

impl Parameterized for PRelu {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param)) {
        f(join(prefix, "slope"), &self.slope);
    }

    fn visit_params_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param)) {
        f(join(prefix, "slope"), &mut self.slope);
    }
}
