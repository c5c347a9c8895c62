//! Minimal dense-tensor numerical kernel with reverse-mode differentiation.

pub mod graph;
pub mod init;
pub mod optim;
pub mod tensor;

pub use graph::{Gradients, Graph, NodeId, Padding};
pub use tensor::Tensor;

pub const LSTM_UNITS: usize = 64;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Named trainable tensor.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

/// Hidden and cell state of the 64-unit LSTM head, one row per batch element.
#[derive(Clone, Debug)]
pub struct LstmState {
    pub hidden: Tensor,
    pub cell: Tensor,
}

impl LstmState {
    pub fn zeros(batch: usize) -> Self {
        LstmState {
            hidden: Tensor::zeros(vec![batch, LSTM_UNITS]),
            cell: Tensor::zeros(vec![batch, LSTM_UNITS]),
        }
    }
}
