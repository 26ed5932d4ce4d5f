//! Newline-delimited JSON protocol for models hosted in another process.
//!
//! The client opens with `{"op":"hello","version":1}` and the server answers
//! `{"op":"hello","version":1,"capabilities":["predict","gradient"]}`.
//! Requests carry a `u64` id and images as base64 little-endian `f32`
//! in row-major `H×W×3` order; replies echo the id. [`serve`] is the
//! matching server loop, used by `funnybench serve` and by tests.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde_json::{json, Value};

use super::{check_dims, Capabilities, Logits, ModelUnderTest};
use crate::render::Image;
use crate::{Error, Result};

pub const PROTOCOL_VERSION: u64 = 1;

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("bad endpoint `{0}` (expected tcp://host:port or stdio:<command>)")]
    BadEndpoint(String),
    #[error("handshake failed: {0}")]
    Handshake(String),
    #[error("protocol version mismatch: client speaks {expected}, server speaks {got}")]
    VersionMismatch { expected: u64, got: u64 },
    #[error("no reply within {0:?}")]
    Timeout(Duration),
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("remote error ({kind}): {msg}")]
    Remote { kind: String, msg: String },
    #[error("connection I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("connection closed by peer")]
    Disconnected,
}

pub fn encode_f32(values: impl IntoIterator<Item = f32>) -> String {
    let bytes: Vec<u8> = values.into_iter().flat_map(f32::to_le_bytes).collect();
    STANDARD.encode(bytes)
}

pub fn decode_f32(text: &str) -> std::result::Result<Vec<f32>, String> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| format!("bad base64: {e}"))?;
    if bytes.len() % 4 != 0 {
        return Err(format!(
            "{} bytes is not a whole number of f32 values",
            bytes.len()
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect())
}

#[derive(Clone, Copy, Debug)]
pub struct WireOptions {
    pub timeout: Duration,
}

impl Default for WireOptions {
    fn default() -> Self {
        WireOptions {
            timeout: Duration::from_secs(60),
        }
    }
}

struct Conn {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
}

impl Conn {
    fn send(&mut self, frame: &Value) -> std::result::Result<(), WireError> {
        let mut line = frame.to_string();
        line.push('\n');
        self.writer.write_all(line.as_bytes())?;
        self.writer.flush()?;
        Ok(())
    }

    fn recv(&mut self, timeout: Duration) -> std::result::Result<Value, WireError> {
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => serde_json::from_str(&line)
                .map_err(|e| WireError::MalformedFrame(format!("{e}: {line}"))),
            Ok(Err(e)) => Err(WireError::Io(e)),
            Err(RecvTimeoutError::Timeout) => Err(WireError::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(WireError::Disconnected),
        }
    }
}

/// A model reached over the wire. One request is in flight at a time.
pub struct ExternalModel {
    conn: Mutex<Conn>,
    capabilities: Capabilities,
    options: WireOptions,
    child: Mutex<Option<Child>>,
}

impl std::fmt::Debug for ExternalModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalModel")
            .field("capabilities", &self.capabilities)
            .finish()
    }
}

/// Connects to `tcp://host:port` or spawns `stdio:<command args…>`.
pub fn connect_external(endpoint: &str) -> Result<ExternalModel> {
    connect_external_with(endpoint, WireOptions::default())
}

pub fn connect_external_with(endpoint: &str, options: WireOptions) -> Result<ExternalModel> {
    if let Some(addr) = endpoint.strip_prefix("tcp://") {
        let stream = TcpStream::connect(addr).map_err(WireError::Io)?;
        let reader = stream.try_clone().map_err(WireError::Io)?;
        ExternalModel::from_streams(reader, stream, options)
    } else if let Some(cmd) = endpoint.strip_prefix("stdio:") {
        let mut parts = cmd.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| WireError::BadEndpoint(endpoint.into()))?;
        let mut child = Command::new(program)
            .args(parts)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(WireError::Io)?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let model = ExternalModel::from_streams(stdout, stdin, options);
        match model {
            Ok(m) => {
                *m.child.lock().unwrap() = Some(child);
                Ok(m)
            }
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                Err(e)
            }
        }
    } else {
        Err(WireError::BadEndpoint(endpoint.into()).into())
    }
}

impl ExternalModel {
    /// Performs the handshake over an already-open byte stream pair.
    pub fn from_streams(
        reader: impl Read + Send + 'static,
        writer: impl Write + Send + 'static,
        options: WireOptions,
    ) -> Result<ExternalModel> {
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let mut conn = Conn {
            writer: Box::new(writer),
            lines: rx,
            next_id: 1,
        };
        conn.send(&json!({"op": "hello", "version": PROTOCOL_VERSION}))?;
        let reply = conn.recv(options.timeout)?;
        if reply.get("op").and_then(Value::as_str) != Some("hello") {
            return Err(WireError::Handshake(format!("expected hello, got {reply}")).into());
        }
        let version = reply
            .get("version")
            .and_then(Value::as_u64)
            .ok_or_else(|| WireError::Handshake("hello without version".into()))?;
        if version != PROTOCOL_VERSION {
            return Err(WireError::VersionMismatch {
                expected: PROTOCOL_VERSION,
                got: version,
            }
            .into());
        }
        let caps: Vec<&str> = reply
            .get("capabilities")
            .and_then(Value::as_array)
            .ok_or_else(|| WireError::Handshake("hello without capabilities".into()))?
            .iter()
            .filter_map(Value::as_str)
            .collect();
        if !caps.contains(&"predict") {
            return Err(WireError::Handshake("server cannot predict".into()).into());
        }
        let capabilities = Capabilities {
            gradients: caps.contains(&"gradient"),
            activations: false,
        };
        Ok(ExternalModel {
            conn: Mutex::new(conn),
            capabilities,
            options,
            child: Mutex::new(None),
        })
    }

    fn request(&self, mut frame: Value) -> std::result::Result<Value, WireError> {
        let mut conn = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        let id = conn.next_id;
        conn.next_id += 1;
        frame["id"] = json!(id);
        conn.send(&frame)?;
        loop {
            let reply = conn.recv(self.options.timeout)?;
            let got = reply
                .get("id")
                .and_then(Value::as_u64)
                .ok_or_else(|| WireError::MalformedFrame(format!("reply without id: {reply}")))?;
            if got < id {
                // Late answer to a request that already timed out.
                continue;
            }
            if got > id {
                return Err(WireError::MalformedFrame(format!(
                    "reply id {got} for request {id}"
                )));
            }
            if let Some(err) = reply.get("error") {
                return Err(WireError::Remote {
                    kind: err
                        .get("kind")
                        .and_then(Value::as_str)
                        .unwrap_or("unknown")
                        .into(),
                    msg: err.get("msg").and_then(Value::as_str).unwrap_or("").into(),
                });
            }
            return Ok(reply);
        }
    }

    fn image_frame(op: &str, image: &Image) -> Value {
        json!({
            "op": op,
            "image": encode_f32(image.data.iter().copied()),
            "h": image.height,
            "w": image.width,
        })
    }
}

impl Drop for ExternalModel {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.lock().unwrap_or_else(|p| p.into_inner()).take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl ModelUnderTest for ExternalModel {
    fn capabilities(&self) -> Capabilities {
        self.capabilities
    }

    fn predict(&self, image: &Image) -> Result<Logits> {
        let reply = self.request(Self::image_frame("predict", image))?;
        let values = reply
            .get("logits")
            .and_then(Value::as_array)
            .ok_or_else(|| WireError::MalformedFrame("reply without logits".into()))?;
        let logits = values
            .iter()
            .map(|v| v.as_f64().filter(|x| x.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| WireError::MalformedFrame("non-numeric logit".into()))?;
        Ok(Logits(logits))
    }

    fn input_gradient(&self, image: &Image, target: usize) -> Result<Vec<f64>> {
        if !self.capabilities.gradients {
            return Err(Error::UnsupportedCapability("gradients"));
        }
        let mut frame = Self::image_frame("gradient", image);
        frame["target"] = json!(target);
        let reply = self.request(frame)?;
        let text = reply
            .get("grad")
            .and_then(Value::as_str)
            .ok_or_else(|| WireError::MalformedFrame("reply without grad".into()))?;
        let grad = decode_f32(text).map_err(WireError::MalformedFrame)?;
        if grad.len() != image.data.len() {
            return Err(WireError::MalformedFrame(format!(
                "gradient has {} values, expected {}",
                grad.len(),
                image.data.len()
            ))
            .into());
        }
        Ok(grad.into_iter().map(f64::from).collect())
    }
}

fn error_frame(id: &Value, kind: &str, msg: impl std::fmt::Display) -> Value {
    json!({"id": id, "error": {"kind": kind, "msg": msg.to_string()}})
}

fn decode_image(frame: &Value) -> std::result::Result<Image, String> {
    let h = frame.get("h").and_then(Value::as_u64).ok_or("missing h")? as usize;
    let w = frame.get("w").and_then(Value::as_u64).ok_or("missing w")? as usize;
    let text = frame
        .get("image")
        .and_then(Value::as_str)
        .ok_or("missing image")?;
    let data = decode_f32(text)?;
    if data.len() != h * w * 3 {
        return Err(format!(
            "image has {} values, expected {}",
            data.len(),
            h * w * 3
        ));
    }
    Ok(Image {
        width: w,
        height: h,
        data,
    })
}

fn model_failure(id: &Value, e: Error) -> Value {
    match e {
        Error::UnsupportedCapability(_) => error_frame(id, "unsupported", e),
        Error::DimensionMismatch { .. } | Error::InvalidArgument(_) => {
            error_frame(id, "bad_request", e)
        }
        other => error_frame(id, "model_error", other),
    }
}

/// Answers one frame. Returns `None` for blank lines.
pub fn handle_frame(model: &dyn ModelUnderTest, line: &str) -> Option<Value> {
    if line.trim().is_empty() {
        return None;
    }
    let frame: Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(e) => {
            return Some(error_frame(
                &Value::Null,
                "bad_request",
                format!("invalid JSON: {e}"),
            ))
        }
    };
    let id = frame.get("id").cloned().unwrap_or(Value::Null);
    let op = frame.get("op").and_then(Value::as_str).unwrap_or("");
    let caps = model.capabilities();
    let reply = match op {
        "hello" => {
            let mut names = vec!["predict"];
            if caps.gradients {
                names.push("gradient");
            }
            json!({"op": "hello", "version": PROTOCOL_VERSION, "capabilities": names})
        }
        "predict" | "gradient" if !id.is_u64() => {
            error_frame(&id, "bad_request", "missing or invalid id")
        }
        "predict" => match decode_image(&frame) {
            Err(msg) => error_frame(&id, "bad_request", msg),
            Ok(image) => match check_dims(model, &image).and_then(|_| model.predict(&image)) {
                Ok(l) => json!({"id": id, "logits": l.0}),
                Err(e) => model_failure(&id, e),
            },
        },
        "gradient" => {
            let target = frame.get("target").and_then(Value::as_u64);
            match (decode_image(&frame), target) {
                (Err(msg), _) => error_frame(&id, "bad_request", msg),
                (_, None) => error_frame(&id, "bad_request", "missing target"),
                (Ok(image), Some(t)) => {
                    match check_dims(model, &image)
                        .and_then(|_| model.input_gradient(&image, t as usize))
                    {
                        Ok(g) => {
                            json!({"id": id, "grad": encode_f32(g.into_iter().map(|v| v as f32))})
                        }
                        Err(e) => model_failure(&id, e),
                    }
                }
            }
        }
        other => error_frame(&id, "bad_request", format!("unknown op `{other}`")),
    };
    Some(reply)
}

/// Serves requests one at a time until the reader reaches end of input.
pub fn serve(
    model: &dyn ModelUnderTest,
    reader: impl BufRead,
    mut writer: impl Write,
) -> std::io::Result<()> {
    for line in reader.lines() {
        if let Some(reply) = handle_frame(model, &line?) {
            writeln!(writer, "{reply}")?;
            writer.flush()?;
        }
    }
    Ok(())
}

/// Accepts TCP connections sequentially, serving each until it closes.
pub fn serve_tcp(model: &dyn ModelUnderTest, listener: TcpListener) -> std::io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let reader = BufReader::new(stream.try_clone()?);
        if let Err(e) = serve(model, reader, stream) {
            log::warn!("connection ended with error: {e}");
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::stubs::{ConstantModel, LinearModel};

    #[test]
    fn f32_codec_round_trips() {
        let v = vec![0.0f32, -1.5, 3.25e-7, f32::MAX];
        assert_eq!(decode_f32(&encode_f32(v.clone())).unwrap(), v);
        assert!(decode_f32("AAA=").is_err());
        assert!(decode_f32("***").is_err());
    }

    #[test]
    fn hello_advertises_capabilities() {
        let m = ConstantModel { logits: vec![1.0] };
        let r = handle_frame(&m, r#"{"op":"hello","version":1}"#).unwrap();
        assert_eq!(r["capabilities"], json!(["predict", "gradient"]));
        assert_eq!(r["version"], json!(1));
    }

    #[test]
    fn malformed_frames_get_bad_request() {
        let m = ConstantModel { logits: vec![1.0] };
        let r = handle_frame(&m, "{not json").unwrap();
        assert_eq!(r["error"]["kind"], "bad_request");
        let r = handle_frame(&m, r#"{"id":4,"op":"predict","h":1,"w":1,"image":"AAAA"}"#).unwrap();
        assert_eq!(r["id"], 4);
        assert_eq!(r["error"]["kind"], "bad_request");
        let r = handle_frame(&m, r#"{"id":5,"op":"fly"}"#).unwrap();
        assert_eq!(r["error"]["kind"], "bad_request");
        assert!(handle_frame(&m, "   ").is_none());
    }

    #[test]
    fn gradient_frame_carries_linear_weights() {
        let w: Vec<f64> = (0..12).map(|i| i as f64 * 0.25 - 1.0).collect();
        let m = LinearModel {
            height: 2,
            width: 2,
            weights: vec![w.clone()],
            bias: vec![0.0],
        };
        let img = encode_f32(vec![0.5f32; 12]);
        let line = format!(r#"{{"id":9,"op":"gradient","h":2,"w":2,"target":0,"image":"{img}"}}"#);
        let r = handle_frame(&m, &line).unwrap();
        let g = decode_f32(r["grad"].as_str().unwrap()).unwrap();
        assert_eq!(g, w.iter().map(|&v| v as f32).collect::<Vec<_>>());
    }
}
