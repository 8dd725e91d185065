//! Minimal CNN engine: the layer set needed by the LeNet family, with exact
//! reverse-mode gradients of mean cross-entropy.

mod layers;
mod loss;
mod network;
mod params;

pub use layers::LayerSpec;
pub use loss::{cross_entropy_loss, softmax};
pub use network::NetworkGraph;
pub use params::{Gradients, ParamEntry, ParamLayout, ParamRole, ParameterStore};
