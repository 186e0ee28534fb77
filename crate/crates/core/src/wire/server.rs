//! Serves any set of backends over the wire protocol. Used for loopback
//! testing and for exposing the toy backends to other processes.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use super::protocol::*;
use crate::backend::{LanguageModelBackend, MatcherBackend, VqaBackend};
use crate::dump::AttentionDump;
use crate::error::Error;
use crate::toy::ToyWorld;

pub struct Dispatcher {
    pub lm: Arc<dyn LanguageModelBackend>,
    pub matcher: Arc<dyn MatcherBackend>,
    pub vqa: Arc<dyn VqaBackend>,
}

fn params<P: DeserializeOwned>(v: Value) -> Result<P, RpcError> {
    serde_json::from_value(v).map_err(|e| RpcError {
        code: code::INVALID_PARAMS.into(),
        message: e.to_string(),
    })
}

fn backend(e: Error) -> RpcError {
    let code = match e {
        Error::InvalidInput(_) => code::INVALID_PARAMS,
        _ => code::BACKEND_ERROR,
    };
    RpcError {
        code: code.into(),
        message: e.to_string(),
    }
}

fn value<T: Serialize>(t: T) -> Result<Value, RpcError> {
    Ok(serde_json::to_value(t).expect("result serializes"))
}

impl Dispatcher {
    /// The toy backends for scenes of `rows` x `cols` patches.
    pub fn toy(world: &ToyWorld, rows: usize, cols: usize) -> Self {
        Self {
            lm: Arc::new(world.lm()),
            matcher: Arc::new(world.matcher()),
            vqa: Arc::new(world.vqa(rows, cols)),
        }
    }

    pub fn handle(&self, req: RpcRequest) -> RpcResponse {
        match self.dispatch(&req.method, req.params) {
            Ok(v) => RpcResponse::ok(req.id, v),
            Err(e) => RpcResponse {
                id: req.id,
                result: None,
                error: Some(e),
            },
        }
    }

    fn dispatch(&self, m: &str, p: Value) -> Result<Value, RpcError> {
        match m {
            method::LM_TOKENIZE => {
                let p: TokenizeParams = params(p)?;
                value(TokensResult {
                    tokens: self.lm.tokenize(&p.text).map_err(backend)?,
                })
            }
            method::LM_DETOKENIZE => {
                let p: DetokenizeParams = params(p)?;
                value(TextResult {
                    text: self.lm.detokenize(&p.tokens).map_err(backend)?,
                })
            }
            method::LM_NEXT => {
                let p: NextParams = params(p)?;
                let d = self.lm.next_dist(&p.tokens, p.top_k).map_err(backend)?;
                value(NextResult {
                    top: d
                        .entries
                        .into_iter()
                        .map(|(t, pr)| (t.id, t.surface, pr))
                        .collect(),
                })
            }
            method::LM_CONTINUE => {
                let p: ContinueParams = params(p)?;
                value(TokensResult {
                    tokens: self
                        .lm
                        .continue_sentence(&p.tokens, p.top_p, p.max_len, p.seed)
                        .map_err(backend)?,
                })
            }
            method::LM_INFO => value(InfoResult { eos: self.lm.eos() }),
            method::MATCH_SCORES => {
                let p: ScoresParams = params(p)?;
                let img = p.image.decode().map_err(backend)?;
                value(ScoresResult {
                    scores: self
                        .matcher
                        .cosine_scores(&img, &p.sentences)
                        .map_err(backend)?,
                })
            }
            method::VQA_INFER => {
                let p: InferParams = params(p)?;
                let img = p.image.decode().map_err(backend)?;
                let out = self.vqa.infer(&img, &p.question).map_err(backend)?;
                value(InferResult {
                    answer: out.answer,
                    stack: AttentionDump::from_stack(&out.stack),
                })
            }
            other => Err(RpcError {
                code: code::UNKNOWN_METHOD.into(),
                message: format!("unknown method {other:?}"),
            }),
        }
    }

    fn handle_line(&self, line: &str) -> Option<RpcResponse> {
        if line.trim().is_empty() {
            return None;
        }
        Some(match serde_json::from_str::<RpcRequest>(line) {
            Ok(req) => self.handle(req),
            Err(e) => {
                RpcResponse::err(0, code::INVALID_PARAMS, format!("unparseable request: {e}"))
            }
        })
    }
}

fn write_response<W: Write>(w: &Mutex<W>, resp: &RpcResponse) -> io::Result<()> {
    let mut line = serde_json::to_vec(resp).expect("response serializes");
    line.push(b'\n');
    let mut w = w.lock().unwrap();
    w.write_all(&line)?;
    w.flush()
}

/// Serves one connection until the reader reaches end of input. With
/// `concurrent`, each request runs on its own thread and responses go out
/// in completion order.
pub fn serve_lines<R: BufRead, W: Write + Send>(
    d: &Dispatcher,
    reader: R,
    writer: W,
    concurrent: bool,
) -> io::Result<()> {
    let writer = Mutex::new(writer);
    if !concurrent {
        for line in reader.lines() {
            if let Some(resp) = d.handle_line(&line?) {
                write_response(&writer, &resp)?;
            }
        }
        return Ok(());
    }
    thread::scope(|s| {
        for line in reader.lines() {
            let line = line?;
            let writer = &writer;
            s.spawn(move || {
                if let Some(resp) = d.handle_line(&line) {
                    let _ = write_response(writer, &resp);
                }
            });
        }
        Ok(())
    })
}

fn serve_stream(d: &Dispatcher, stream: TcpStream, concurrent: bool) -> io::Result<()> {
    let reader = BufReader::new(stream.try_clone()?);
    serve_lines(d, reader, stream, concurrent)
}

/// Accepts connections forever, one thread per connection.
pub fn serve_tcp(d: Arc<Dispatcher>, listener: TcpListener, concurrent: bool) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let d = Arc::clone(&d);
        thread::spawn(move || {
            if let Err(e) = serve_stream(&d, stream, concurrent) {
                log::warn!("connection ended with error: {e}");
            }
        });
    }
    Ok(())
}

/// Binds `addr` (use port 0 for any) and serves in a background thread.
pub fn spawn_tcp(
    d: Arc<Dispatcher>,
    addr: &str,
    concurrent: bool,
) -> io::Result<(SocketAddr, JoinHandle<io::Result<()>>)> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    let handle = thread::spawn(move || serve_tcp(d, listener, concurrent));
    Ok((local, handle))
}
