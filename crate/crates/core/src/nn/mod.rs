//! Minimal convolutional network toolkit with explicit backward passes.

mod conv;
mod layers;
mod norm;
mod resnet;
mod tensor;

pub use conv::Conv2d;
pub use layers::{global_avg_pool, global_avg_pool_backward, relu, relu_backward, Linear, MaxPool};
pub use norm::BatchNorm2d;
pub use resnet::{Backbone, BackboneSpec, BasicBlock, Captured};
pub use tensor::{Act, Param, Parameters};
