//! Remote models over newline-delimited JSON.
//!
//! The engine connects to a server (a child process on stdio or a TCP
//! address), sends `{"type":"hello"}` and reads back the vocabulary, eos/bos
//! ids and class count. After that every call is one request line answered by
//! one response line carrying the same id:
//!
//! ```text
//! → {"type":"next_logits_batch","id":1,"sequences":[[4,2],[4,3]]}
//! ← {"type":"logits","id":1,"values":[[-1.2,-0.3,null,...],[...]]}
//! → {"type":"class_prob_batch","id":2,"sequences":[[2]],"class":1}
//! ← {"type":"prob","id":2,"values":[0.73]}
//! ```
//!
//! A `null` logit (or the strings `"-inf"` / `"-Infinity"`) stands for −∞.
//! Requests are lock-step: at most one is outstanding per connection.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::{json, Value};

use crate::discriminator::Discriminator;
use crate::error::{invalid, Error, Result};
use crate::lm::LanguageModel;
use crate::types::{Distribution, TokenId, Vocabulary};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// Spawn `program args...` and talk over its stdin/stdout.
    Stdio { program: String, args: Vec<String> },
    /// `host:port`.
    Tcp(String),
}

impl std::str::FromStr for Endpoint {
    type Err = Error;

    /// `tcp:HOST:PORT` or `stdio:COMMAND [ARGS...]` (whitespace separated).
    fn from_str(s: &str) -> Result<Self> {
        if let Some(addr) = s.strip_prefix("tcp:") {
            return Ok(Endpoint::Tcp(addr.to_string()));
        }
        if let Some(cmd) = s.strip_prefix("stdio:") {
            let mut parts = cmd.split_whitespace().map(str::to_string);
            let program = parts.next().ok_or_else(|| invalid("empty stdio command"))?;
            return Ok(Endpoint::Stdio { program, args: parts.collect() });
        }
        Err(invalid(format!("endpoint {s:?} must start with tcp: or stdio:")))
    }
}

#[derive(Deserialize)]
struct Hello {
    vocab: Vec<String>,
    eos_id: TokenId,
    bos_id: TokenId,
    #[serde(default)]
    classes: usize,
}

enum Transport {
    Tcp(TcpStream),
    Child { child: Child, stdin: Option<ChildStdin> },
}

struct Connection {
    transport: Transport,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    timeout: Duration,
    /// Set after the first failure; the stream may be out of sync from then on.
    broken: Option<String>,
}

impl Connection {
    fn open(endpoint: &Endpoint, timeout: Duration) -> Result<Self> {
        let (tx, rx) = mpsc::channel();
        let spawn_reader = |r: Box<dyn std::io::Read + Send>| {
            std::thread::spawn(move || {
                for line in BufReader::new(r).lines() {
                    if tx.send(line).is_err() {
                        break;
                    }
                }
            });
        };
        let transport = match endpoint {
            Endpoint::Tcp(addr) => {
                let stream = connect_tcp(addr, timeout)?;
                stream.set_nodelay(true)?;
                spawn_reader(Box::new(stream.try_clone()?));
                Transport::Tcp(stream)
            }
            Endpoint::Stdio { program, args } => {
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("spawning {program}: {e}"))))?;
                spawn_reader(Box::new(child.stdout.take().expect("piped stdout")));
                let stdin = child.stdin.take();
                Transport::Child { child, stdin }
            }
        };
        Ok(Connection { transport, lines: rx, next_id: 1, timeout, broken: None })
    }

    fn send(&mut self, msg: &Value) -> Result<()> {
        let mut line = serde_json::to_vec(msg)?;
        line.push(b'\n');
        match &mut self.transport {
            Transport::Tcp(s) => s.write_all(&line)?,
            Transport::Child { stdin: Some(s), .. } => {
                s.write_all(&line)?;
                s.flush()?;
            }
            Transport::Child { stdin: None, .. } => return Err(Error::Protocol("connection closed".into())),
        }
        Ok(())
    }

    fn recv(&mut self) -> Result<Value> {
        let line = match self.lines.recv_timeout(self.timeout) {
            Ok(line) => line?,
            Err(RecvTimeoutError::Timeout) => return Err(Error::Timeout),
            Err(RecvTimeoutError::Disconnected) => return Err(Error::Protocol("server closed the connection".into())),
        };
        serde_json::from_str(&line).map_err(|e| Error::Protocol(format!("unparseable message {line:?}: {e}")))
    }

    fn hello(&mut self) -> Result<Hello> {
        self.send(&json!({"type": "hello"}))?;
        let msg = self.recv()?;
        if msg.get("type").and_then(Value::as_str) != Some("hello") {
            return Err(Error::Protocol(format!("expected hello, got {msg}")));
        }
        serde_json::from_value(msg).map_err(|e| Error::Protocol(format!("bad hello: {e}")))
    }

    /// One request, one matching response of type `expect`; returns its
    /// `values` array. Any failure poisons the connection.
    fn call(&mut self, mut request: Value, expect: &str) -> Result<Vec<Value>> {
        if let Some(why) = &self.broken {
            return Err(Error::Protocol(format!("connection unusable after earlier failure: {why}")));
        }
        let res = self.call_inner(&mut request, expect);
        if let Err(e) = &res {
            if !matches!(e, Error::Remote { .. }) {
                self.broken = Some(e.to_string());
            }
        }
        res
    }

    fn call_inner(&mut self, request: &mut Value, expect: &str) -> Result<Vec<Value>> {
        let id = self.next_id;
        self.next_id += 1;
        request["id"] = json!(id);
        self.send(request)?;
        let mut msg = self.recv()?;
        if msg.get("id").and_then(Value::as_u64) != Some(id) {
            return Err(Error::Protocol(format!("response to request {id} has id {}", msg["id"])));
        }
        match msg.get("type").and_then(Value::as_str) {
            Some("error") => {
                Err(Error::Remote { id, message: msg.get("message").and_then(Value::as_str).unwrap_or("").to_string() })
            }
            Some(t) if t == expect => match msg.get_mut("values").map(Value::take) {
                Some(Value::Array(v)) => Ok(v),
                _ => Err(Error::Protocol(format!("{expect} message {id} has no values array"))),
            },
            other => Err(Error::Protocol(format!("expected {expect} for request {id}, got type {other:?}"))),
        }
    }

    fn shutdown(&mut self) {
        let _ = self.send(&json!({"type": "shutdown"}));
        match &mut self.transport {
            Transport::Tcp(s) => {
                let _ = s.shutdown(std::net::Shutdown::Both);
            }
            Transport::Child { child, stdin } => {
                drop(stdin.take());
                let deadline = Instant::now() + Duration::from_secs(2);
                while Instant::now() < deadline {
                    if let Ok(Some(_)) = child.try_wait() {
                        return;
                    }
                    std::thread::sleep(Duration::from_millis(10));
                }
                let _ = child.kill();
                let _ = child.wait();
            }
        }
    }
}

fn connect_tcp(addr: &str, timeout: Duration) -> Result<TcpStream> {
    use std::net::ToSocketAddrs;
    let mut last = None;
    for a in addr.to_socket_addrs()? {
        match TcpStream::connect_timeout(&a, timeout) {
            Ok(s) => return Ok(s),
            Err(e) => last = Some(e),
        }
    }
    Err(last.map(Error::Io).unwrap_or_else(|| invalid(format!("{addr} did not resolve"))))
}

impl Drop for Connection {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// A served language model and/or discriminator. Cloning shares the
/// connection; calls from several threads are serialized.
#[derive(Clone)]
pub struct RemoteModel {
    conn: Arc<Mutex<Connection>>,
    vocab: Vocabulary,
    classes: usize,
}

impl std::fmt::Debug for RemoteModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteModel").field("vocab_size", &self.vocab.len()).field("classes", &self.classes).finish()
    }
}

/// Opens the connection and performs the hello exchange; `timeout` bounds
/// every wait for a response.
pub fn connect(endpoint: &Endpoint, timeout: Duration) -> Result<RemoteModel> {
    let mut conn = Connection::open(endpoint, timeout)?;
    let hello = conn.hello()?;
    let vocab = Vocabulary::new(hello.vocab, hello.eos_id, hello.bos_id)?;
    Ok(RemoteModel { conn: Arc::new(Mutex::new(conn)), vocab, classes: hello.classes })
}

fn logit(v: &Value) -> Result<f64> {
    match v {
        Value::Null => Ok(f64::NEG_INFINITY),
        Value::Number(n) => n.as_f64().ok_or_else(|| Error::Protocol(format!("bad logit {n}"))),
        Value::String(s) if s == "-inf" || s == "-Infinity" => Ok(f64::NEG_INFINITY),
        other => Err(Error::Protocol(format!("bad logit {other}"))),
    }
}

fn sequences(seqs: &[&[TokenId]]) -> Value {
    Value::Array(seqs.iter().map(|s| json!(s)).collect())
}

impl RemoteModel {
    pub fn num_requests(&self) -> u64 {
        self.lock().next_id - 1
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Connection> {
        self.conn.lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl LanguageModel for RemoteModel {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_logits(&self, context: &[TokenId]) -> Result<Distribution> {
        Ok(self.next_logits_batch(&[context])?.swap_remove(0))
    }

    fn next_logits_batch(&self, contexts: &[&[TokenId]]) -> Result<Vec<Distribution>> {
        if contexts.is_empty() {
            return Ok(Vec::new());
        }
        let req = json!({"type": "next_logits_batch", "sequences": sequences(contexts)});
        let mut conn = self.lock();
        let values = conn.call(req, "logits")?;
        let n = self.vocab.len();
        let parsed = (|| {
            if values.len() != contexts.len() {
                return Err(Error::Protocol(format!(
                    "asked for {} logit vectors, got {}",
                    contexts.len(),
                    values.len()
                )));
            }
            values
                .iter()
                .map(|row| {
                    let row = row.as_array().ok_or_else(|| Error::Protocol("logit row is not an array".into()))?;
                    if row.len() != n {
                        return Err(Error::Protocol(format!("expected {n} logits, got {}", row.len())));
                    }
                    Ok(Distribution::from_logits(row.iter().map(logit).collect::<Result<_>>()?))
                })
                .collect::<Result<Vec<_>>>()
        })();
        if let Err(e) = &parsed {
            conn.broken = Some(e.to_string());
        }
        parsed
    }
}

impl Discriminator for RemoteModel {
    fn num_classes(&self) -> usize {
        self.classes
    }

    fn class_prob(&self, tokens: &[TokenId], class: usize) -> Result<f64> {
        Ok(self.class_prob_batch(&[tokens], class)?[0])
    }

    fn class_prob_batch(&self, seqs: &[&[TokenId]], class: usize) -> Result<Vec<f64>> {
        if class >= self.classes {
            return Err(invalid(format!("class {class} out of range for {} classes", self.classes)));
        }
        if seqs.is_empty() {
            return Ok(Vec::new());
        }
        let req = json!({"type": "class_prob_batch", "sequences": sequences(seqs), "class": class});
        let mut conn = self.lock();
        let values = conn.call(req, "prob")?;
        let parsed = (|| {
            if values.len() != seqs.len() {
                return Err(Error::Protocol(format!("asked for {} probabilities, got {}", seqs.len(), values.len())));
            }
            values
                .iter()
                .map(|v| match v.as_f64() {
                    Some(p) if (0.0..=1.0).contains(&p) => Ok(p),
                    _ => Err(Error::Protocol(format!("bad probability {v}"))),
                })
                .collect::<Result<Vec<_>>>()
        })();
        if let Err(e) = &parsed {
            conn.broken = Some(e.to_string());
        }
        parsed
    }
}

/// Answers protocol requests from `input` with in-process models until
/// shutdown or end of input. Handy as a test double or for exposing a Rust
/// model to another engine instance. −∞ logits are written as `null`.
pub fn serve<L, D, R, W>(lm: &L, disc: Option<&D>, input: R, mut output: W) -> Result<()>
where
    L: LanguageModel + ?Sized,
    D: Discriminator + ?Sized,
    R: BufRead,
    W: Write,
{
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let msg: Value = match serde_json::from_str(&line) {
            Ok(m) => m,
            Err(e) => {
                writeln!(output, "{}", json!({"type": "error", "id": null, "message": e.to_string()}))?;
                output.flush()?;
                continue;
            }
        };
        let id = msg.get("id").cloned().unwrap_or(Value::Null);
        let reply = match msg.get("type").and_then(Value::as_str) {
            Some("shutdown") => return Ok(()),
            Some("hello") => {
                let v = lm.vocabulary();
                json!({
                    "type": "hello",
                    "vocab": v.tokens(),
                    "eos_id": v.eos_id(),
                    "bos_id": v.bos_id(),
                    "classes": disc.map_or(0, |d| d.num_classes()),
                })
            }
            Some(t) => match answer(lm, disc, t, &msg) {
                Ok(reply) => {
                    let mut reply = reply;
                    reply["id"] = id;
                    reply
                }
                Err(e) => json!({"type": "error", "id": id, "message": e.to_string()}),
            },
            None => json!({"type": "error", "id": id, "message": "message has no type"}),
        };
        // one write per reply, so a TCP sender does not stall on Nagle
        let mut line = serde_json::to_vec(&reply)?;
        line.push(b'\n');
        output.write_all(&line)?;
        output.flush()?;
    }
    Ok(())
}

fn answer<L, D>(lm: &L, disc: Option<&D>, kind: &str, msg: &Value) -> Result<Value>
where
    L: LanguageModel + ?Sized,
    D: Discriminator + ?Sized,
{
    let seqs: Vec<Vec<TokenId>> = match kind {
        "next_logits" | "class_prob" => vec![serde_json::from_value(msg["sequence"].clone())?],
        _ => serde_json::from_value(msg["sequences"].clone())?,
    };
    let refs: Vec<&[TokenId]> = seqs.iter().map(Vec::as_slice).collect();
    for s in &refs {
        lm.vocabulary().check_ids(s)?;
    }
    match kind {
        "next_logits" | "next_logits_batch" => {
            let rows: Vec<Value> = lm
                .next_logits_batch(&refs)?
                .into_iter()
                .map(|d| {
                    Value::Array(
                        d.logits.iter().map(|&x| if x == f64::NEG_INFINITY { Value::Null } else { json!(x) }).collect(),
                    )
                })
                .collect();
            Ok(json!({"type": "logits", "values": rows}))
        }
        "class_prob" | "class_prob_batch" => {
            let d = disc.ok_or_else(|| invalid("no discriminator is served"))?;
            let class = msg["class"].as_u64().ok_or_else(|| invalid("missing class"))? as usize;
            if class >= d.num_classes() {
                return Err(invalid(format!("class {class} out of range")));
            }
            Ok(json!({"type": "prob", "values": d.class_prob_batch(&refs, class)?}))
        }
        other => Err(invalid(format!("unknown message type {other:?}"))),
    }
}
