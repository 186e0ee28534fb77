//! Newline-delimited JSON messages and method parameter shapes.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::TokenId;
use crate::dump::AttentionDump;
use crate::error::{Error, Result};
use crate::saliency::Image;

pub const DEFAULT_ADDR: &str = "127.0.0.1:8741";
pub const ADDR_ENV: &str = "A2T_BACKEND_ADDR";

pub mod method {
    pub const LM_TOKENIZE: &str = "lm.tokenize";
    pub const LM_DETOKENIZE: &str = "lm.detokenize";
    pub const LM_NEXT: &str = "lm.next";
    pub const LM_CONTINUE: &str = "lm.continue";
    /// Optional: servers that do not implement it are treated as having no EOS token.
    pub const LM_INFO: &str = "lm.info";
    pub const MATCH_SCORES: &str = "match.scores";
    pub const VQA_INFER: &str = "vqa.infer";
}

pub mod code {
    pub const UNKNOWN_METHOD: &str = "unknown_method";
    pub const INVALID_PARAMS: &str = "invalid_params";
    pub const BACKEND_ERROR: &str = "backend_error";
}

/// Address from `A2T_BACKEND_ADDR`, or the default.
pub fn backend_addr() -> String {
    std::env::var(ADDR_ENV).unwrap_or_else(|_| DEFAULT_ADDR.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpcRequest {
    pub id: u64,
    pub method: String,
    #[serde(default)]
    pub params: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RpcError {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpcResponse {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<RpcError>,
}

impl RpcResponse {
    pub fn ok(id: u64, result: Value) -> Self {
        Self {
            id,
            result: Some(result),
            error: None,
        }
    }

    pub fn err(id: u64, code: &str, message: impl Into<String>) -> Self {
        Self {
            id,
            result: None,
            error: Some(RpcError {
                code: code.to_string(),
                message: message.into(),
            }),
        }
    }
}

/// Raw RGB8 image with dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireImage {
    pub w: usize,
    pub h: usize,
    pub data: String,
}

impl WireImage {
    pub fn encode(img: &Image) -> Self {
        Self {
            w: img.width(),
            h: img.height(),
            data: STANDARD.encode(img.pixels()),
        }
    }

    pub fn decode(&self) -> Result<Image> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| Error::invalid(format!("image base64: {e}")))?;
        Image::new(self.w, self.h, bytes)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenizeParams {
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokensResult {
    pub tokens: Vec<TokenId>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetokenizeParams {
    pub tokens: Vec<TokenId>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TextResult {
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NextParams {
    pub tokens: Vec<TokenId>,
    pub top_k: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NextResult {
    /// `[id, surface, probability]` triples, most likely first.
    pub top: Vec<(TokenId, String, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinueParams {
    pub tokens: Vec<TokenId>,
    pub top_p: f64,
    pub max_len: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InfoResult {
    #[serde(default)]
    pub eos: Option<TokenId>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoresParams {
    pub image: WireImage,
    pub sentences: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoresResult {
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferParams {
    pub image: WireImage,
    pub question: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferResult {
    pub answer: String,
    pub stack: AttentionDump,
}
