//! Dense descriptors, the visual-word codebook, and the integral
//! bag-of-features tensor from which every part's region feature is read.

mod codebook;
mod descriptor;
mod tensor;

pub use codebook::{kmeans, learn_codebook, quantize, Codebook, KMeansFit};
pub use descriptor::{extract_dense_descriptors, DenseDescriptor, DESCRIPTOR_DIM};
pub use tensor::{build_feature_tensor, cell_of, region_feature, FeatureTensor, RegionFeature};

pub(crate) use tensor::normalize_sqrt_l1;
