//! Layers with hand-written backward passes, parameter bookkeeping and the
//! optimizer.
//!
//! Every layer follows the same protocol: `forward(&self, x)` is pure and
//! safe to call concurrently; `backward(&mut self, x, dy)` accumulates
//! parameter gradients into the layer's [`Param`]s and returns the gradient
//! with respect to `x`.

mod activation;
mod adam;
mod conv;
pub mod gradcheck;
mod linear;
mod param;
mod store;

pub use activation::{relu, relu_backward, silu, silu_grad, PRelu};
pub use adam::{Adam, AdamConfig};
pub use conv::Conv2d;
pub use linear::Linear;
pub use param::{join, Param, Parameterized, SeededInit};
pub use store::{quantize_f32, ParamEntry, ParamStore};
