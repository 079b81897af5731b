//! Dense neural-network engine: layers, propagation, RMSE loss, Adam/SGD,
//! training loop and analytic cost model. All arithmetic is `f64`.

pub mod cost;
pub mod layer;
pub mod loss;
pub mod network;
pub mod optim;
pub mod train;

pub use cost::{estimate_cost, uniform_forward_mults, CostEstimate};
pub use layer::{Activation, DenseLayer, Init, Origin};
pub use loss::{rmse_loss, row_rmse};
pub use network::{init_network, Activations, ForwardCache, Gradients, LayerGrad, Network};
pub use optim::{adam_step, sgd_step, AdamState};
pub use train::{fit, train, EpochRecord, LayerSums, OptimState, Optimizer, TrainConfig, TrainTrace};
