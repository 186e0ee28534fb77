//! Multiplexing client: many threads may call concurrently over one
//! connection; a reader thread routes responses to callers by id.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use super::protocol::{RpcError, RpcRequest, RpcResponse};
use super::WireError;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

enum Outcome {
    Ok(Value),
    Remote(RpcError),
    /// Connection-level failure seen by the reader thread.
    Broken(Broken),
}

#[derive(Debug, Clone)]
enum Broken {
    Protocol(String),
    Malformed(String),
    Closed,
}

#[derive(Default)]
struct Pending {
    waiters: HashMap<u64, Sender<Outcome>>,
    /// Ids whose callers timed out; late responses for them are dropped.
    abandoned: HashSet<u64>,
    broken: Option<Broken>,
}

impl Pending {
    fn fail_all(&mut self, why: Broken) {
        for (_, tx) in self.waiters.drain() {
            let _ = tx.send(Outcome::Broken(why.clone()));
        }
        self.broken.get_or_insert(why);
    }
}

pub struct WireClient {
    writer: Mutex<Box<dyn Write + Send>>,
    pending: Arc<Mutex<Pending>>,
    next_id: AtomicU64,
    timeout: Duration,
    child: Mutex<Option<Child>>,
    socket: Option<TcpStream>,
}

impl WireClient {
    pub fn from_streams<R, W>(reader: R, writer: W) -> Self
    where
        R: std::io::Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let pending: Arc<Mutex<Pending>> = Arc::default();
        let routes = Arc::clone(&pending);
        thread::spawn(move || read_loop(BufReader::new(reader), &routes));
        Self {
            writer: Mutex::new(Box::new(writer)),
            pending,
            next_id: AtomicU64::new(1),
            timeout: DEFAULT_TIMEOUT,
            child: Mutex::new(None),
            socket: None,
        }
    }

    pub fn connect_tcp(addr: &str) -> Result<Self, WireError> {
        let stream = TcpStream::connect(addr).map_err(|source| WireError::Connect {
            addr: addr.to_string(),
            source,
        })?;
        stream.set_nodelay(true).ok();
        let reader = stream.try_clone().map_err(|source| WireError::Connect {
            addr: addr.to_string(),
            source,
        })?;
        let socket = stream.try_clone().ok();
        let mut client = Self::from_streams(reader, stream);
        client.socket = socket;
        Ok(client)
    }

    /// Spawns a server process speaking the protocol on its stdin/stdout.
    pub fn spawn_stdio(mut cmd: Command) -> Result<Self, WireError> {
        let describe = format!("{cmd:?}");
        let mut child = cmd
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|source| WireError::Connect {
                addr: describe,
                source,
            })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let client = Self::from_streams(stdout, stdin);
        *client.child.lock().unwrap() = Some(child);
        Ok(client)
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Raw call: sends `params`, waits for the response with the same id.
    pub fn call_value(&self, method: &str, params: Value) -> Result<Value, WireError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let (tx, rx) = mpsc::channel();
        {
            let mut p = self.pending.lock().unwrap();
            if let Some(b) = &p.broken {
                return Err(broken_error(method, b.clone()));
            }
            p.waiters.insert(id, tx);
        }
        let req = RpcRequest {
            id,
            method: method.to_string(),
            params,
        };
        let mut line = serde_json::to_vec(&req).expect("request serializes");
        line.push(b'\n');
        let sent = {
            let mut w = self.writer.lock().unwrap();
            w.write_all(&line).and_then(|()| w.flush())
        };
        if let Err(source) = sent {
            self.pending.lock().unwrap().waiters.remove(&id);
            return Err(WireError::Io {
                method: method.to_string(),
                source,
            });
        }
        match rx.recv_timeout(self.timeout) {
            Ok(Outcome::Ok(v)) => Ok(v),
            Ok(Outcome::Remote(e)) => Err(WireError::Remote {
                method: method.to_string(),
                code: e.code,
                message: e.message,
            }),
            Ok(Outcome::Broken(b)) => Err(broken_error(method, b)),
            Err(RecvTimeoutError::Timeout) => {
                let mut p = self.pending.lock().unwrap();
                if p.waiters.remove(&id).is_some() {
                    p.abandoned.insert(id);
                }
                drop(p);
                Err(WireError::Timeout {
                    method: method.to_string(),
                    after: self.timeout,
                })
            }
            Err(RecvTimeoutError::Disconnected) => Err(broken_error(method, Broken::Closed)),
        }
    }

    /// Typed call.
    pub fn call<P: Serialize, R: DeserializeOwned>(
        &self,
        method: &str,
        params: &P,
    ) -> Result<R, WireError> {
        let v = self.call_value(
            method,
            serde_json::to_value(params).expect("params serialize"),
        )?;
        serde_json::from_value(v).map_err(|e| WireError::Malformed {
            method: method.to_string(),
            detail: format!("unexpected result shape: {e}"),
        })
    }
}

impl Drop for WireClient {
    fn drop(&mut self) {
        if let Some(s) = &self.socket {
            let _ = s.shutdown(std::net::Shutdown::Both);
        }
        if let Some(mut child) = self.child.lock().unwrap().take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn broken_error(method: &str, b: Broken) -> WireError {
    let method = method.to_string();
    match b {
        Broken::Protocol(detail) => WireError::Protocol { method, detail },
        Broken::Malformed(detail) => WireError::Malformed { method, detail },
        Broken::Closed => WireError::Disconnected { method },
    }
}

fn read_loop<R: BufRead>(mut reader: R, pending: &Mutex<Pending>) {
    let mut line = String::new();
    loop {
        line.clear();
        match reader.read_line(&mut line) {
            Ok(0) | Err(_) => break,
            Ok(_) => {}
        }
        if line.trim().is_empty() {
            continue;
        }
        let resp: RpcResponse = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                pending
                    .lock()
                    .unwrap()
                    .fail_all(Broken::Malformed(format!("unparseable response: {e}")));
                return;
            }
        };
        let mut p = pending.lock().unwrap();
        if p.abandoned.remove(&resp.id) {
            continue;
        }
        let Some(tx) = p.waiters.remove(&resp.id) else {
            p.fail_all(Broken::Protocol(format!(
                "response for unknown request id {}",
                resp.id
            )));
            return;
        };
        let outcome = match (resp.result, resp.error) {
            (_, Some(e)) => Outcome::Remote(e),
            (Some(v), None) => Outcome::Ok(v),
            (None, None) => Outcome::Broken(Broken::Malformed(
                "response has neither result nor error".into(),
            )),
        };
        let _ = tx.send(outcome);
    }
    pending.lock().unwrap().fail_all(Broken::Closed);
}
