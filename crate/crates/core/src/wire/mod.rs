//! Newline-delimited JSON protocol that lets served pre-trained models stand
//! in for the toy backends.

mod client;
pub mod protocol;
pub mod server;

use std::time::Duration;

use thiserror::Error;

pub use client::{WireClient, DEFAULT_TIMEOUT};
pub use protocol::{backend_addr, RpcError, RpcRequest, RpcResponse, ADDR_ENV, DEFAULT_ADDR};
pub use server::Dispatcher;

use crate::backend::{
    LanguageModelBackend, MatcherBackend, Token, TokenDist, TokenId, VqaBackend, VqaOutput,
};
use crate::error::Result;
use crate::saliency::Image;
use protocol::*;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("cannot connect to backend at {addr}: {source}")]
    Connect {
        addr: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{method}: no response after {after:?}")]
    Timeout { method: String, after: Duration },

    #[error("{method}: malformed response: {detail}")]
    Malformed { method: String, detail: String },

    #[error("{method}: remote error {code}: {message}")]
    Remote {
        method: String,
        code: String,
        message: String,
    },

    #[error("{method}: protocol error: {detail}")]
    Protocol { method: String, detail: String },

    #[error("{method}: connection closed")]
    Disconnected { method: String },

    #[error("{method}: {source}")]
    Io {
        method: String,
        #[source]
        source: std::io::Error,
    },
}

impl WireError {
    /// True when the backend could not be reached or stopped answering,
    /// as opposed to answering wrongly.
    pub fn is_unreachable(&self) -> bool {
        matches!(
            self,
            WireError::Connect { .. }
                | WireError::Disconnected { .. }
                | WireError::Timeout { .. }
                | WireError::Io { .. }
        )
    }
}

/// All three backend interfaces over one shared client.
pub struct WireBackend {
    client: WireClient,
    eos: Option<TokenId>,
}

impl WireBackend {
    /// Wraps a connected client; asks the server for its EOS token if it
    /// implements `lm.info`.
    pub fn new(client: WireClient) -> Result<Self> {
        let eos = match client.call::<_, InfoResult>(method::LM_INFO, &serde_json::json!({})) {
            Ok(info) => info.eos,
            Err(WireError::Remote { code, .. }) if code == code::UNKNOWN_METHOD => None,
            Err(e) => return Err(e.into()),
        };
        Ok(Self { client, eos })
    }

    pub fn connect(addr: &str) -> Result<Self> {
        Self::new(WireClient::connect_tcp(addr)?)
    }

    pub fn client(&self) -> &WireClient {
        &self.client
    }
}

impl LanguageModelBackend for WireBackend {
    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        let r: TokensResult = self
            .client
            .call(method::LM_TOKENIZE, &TokenizeParams { text: text.into() })?;
        Ok(r.tokens)
    }

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String> {
        let r: TextResult = self.client.call(
            method::LM_DETOKENIZE,
            &DetokenizeParams {
                tokens: tokens.to_vec(),
            },
        )?;
        Ok(r.text)
    }

    fn next_dist(&self, tokens: &[TokenId], top_k: usize) -> Result<TokenDist> {
        let r: NextResult = self.client.call(
            method::LM_NEXT,
            &NextParams {
                tokens: tokens.to_vec(),
                top_k,
            },
        )?;
        Ok(TokenDist {
            entries: r
                .top
                .into_iter()
                .map(|(id, surface, p)| (Token { id, surface }, p))
                .collect(),
        })
    }

    fn continue_sentence(
        &self,
        tokens: &[TokenId],
        top_p: f64,
        max_len: usize,
        seed: u64,
    ) -> Result<Vec<TokenId>> {
        let r: TokensResult = self.client.call(
            method::LM_CONTINUE,
            &ContinueParams {
                tokens: tokens.to_vec(),
                top_p,
                max_len,
                seed,
            },
        )?;
        Ok(r.tokens)
    }

    fn eos(&self) -> Option<TokenId> {
        self.eos
    }
}

impl MatcherBackend for WireBackend {
    fn cosine_scores(&self, image: &Image, sentences: &[String]) -> Result<Vec<f64>> {
        let r: ScoresResult = self.client.call(
            method::MATCH_SCORES,
            &ScoresParams {
                image: WireImage::encode(image),
                sentences: sentences.to_vec(),
            },
        )?;
        Ok(r.scores)
    }
}

impl VqaBackend for WireBackend {
    fn infer(&self, image: &Image, question: &str) -> Result<VqaOutput> {
        let r: InferResult = self.client.call(
            method::VQA_INFER,
            &InferParams {
                image: WireImage::encode(image),
                question: question.into(),
            },
        )?;
        Ok(VqaOutput {
            answer: r.answer,
            stack: r.stack.to_stack()?,
        })
    }
}
