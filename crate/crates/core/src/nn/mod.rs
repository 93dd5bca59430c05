//! Minimal dense-MLP engine: forward pass, exact gradients, SGD, losses,
//! dropout and L2 regularization.

mod loss;
mod matrix;
mod mlp;
mod optim;
mod persist;
pub mod train;

pub use loss::{
    accuracy, check_probability_rows, cross_entropy, mse_loss, one_hot, predicted_label, LossGrad,
    LOG_EPS,
};
pub use matrix::Matrix;
pub use mlp::{softmax_in_place, Activation, ForwardCache, Grad, Layer, Mlp, Mode};
pub use optim::{sgd_step, OptState, SgdConfig};
pub use persist::{load_json, save_json, MlpDoc};
