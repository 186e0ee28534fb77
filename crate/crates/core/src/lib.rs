//! Attention-to-text: translate the attention a VQA model pays to an image
//! into a natural-language explanation, by steering a frozen language model
//! with image-text matching on an attention-masked copy of the image.
//!
//! The pipeline is rollout → saliency → mask → guided decoding. The toy
//! backends in [`toy`] make every stage runnable without model weights; the
//! [`wire`] backend forwards the same calls to served pre-trained models.

pub mod backend;
pub mod decoder;
pub mod dump;
pub mod error;
pub mod matrix;
pub mod metrics;
pub mod pnm;
pub mod prompt;
pub mod rollout;
pub mod saliency;
pub mod scalar;
pub mod toy;
pub mod wire;

pub use backend::{
    LanguageModelBackend, MatcherBackend, Token, TokenDist, TokenId, VqaBackend, VqaOutput,
};
pub use decoder::{GuidingConfig, PromptSpec, StopReason, TranslationResult, Translator};
pub use dump::AttentionDump;
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use prompt::PromptTemplate;
pub use rollout::{rollout, AttentionStack, HeadTensor, LayerAttention, LayerKind, RolloutState};
pub use saliency::{
    apply_mask, patch_mask, saliency, threshold_mask, BinaryMask, Image, MaskedImage,
    PatchGeometry, SaliencyMap,
};
pub use scalar::Scalar;
pub use wire::{WireBackend, WireClient, WireError};

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type AttentionStack64 = AttentionStack<f64>;
pub type AttentionStack32 = AttentionStack<f32>;
pub type RolloutState64 = RolloutState<f64>;
pub type RolloutState32 = RolloutState<f32>;
pub type SaliencyMap64 = SaliencyMap<f64>;
pub type SaliencyMap32 = SaliencyMap<f32>;
