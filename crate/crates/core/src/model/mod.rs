//! Networks built from per-gene parameter blocks.

mod kernel;
mod layer;
mod network;

pub use kernel::{derived_padding, kernel_extent_cap, stride_cap, Dim, KernelShape, Stride};
pub use layer::{
    normal_tensor, normal_value, ConvKernelGene, ConvLayer, FcLayer, FcNodeGene, Layer, LayerKind,
    INIT_STD,
};
pub use network::{argmax, EpochStats, FeatureShape, Network, NetworkId};
pub(crate) use network::{feature_shapes, layer_output};
