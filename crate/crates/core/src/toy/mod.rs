//! Desk-scale datasets and small denoisers trained from scratch.

pub mod dataset;
pub mod denoiser;
pub mod mlp;
pub mod train;

pub use dataset::{
    gen_gmm_dataset, gen_shape_dataset, load_dataset, render_shape, save_dataset, split_members, style_shift,
    ContentLabel, Dataset, DatasetKind, MembershipSplit, ShapeDescriptor, ShapeKind,
};
pub use denoiser::{MlpArch, MlpDenoiser};
pub use mlp::Activation;
pub use train::{train_denoiser, TrainConfig, TrainReport};
