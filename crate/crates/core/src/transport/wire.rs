//! `FVM1` message framing.
//!
//! ```text
//! u32  length of everything after this field
//! [4]  magic "FVM1"
//! u8   version (1)
//! u8   message type
//! u32  round
//! u32  sender id
//! u16  tensor count
//! per tensor:
//!   u8 name length, ASCII name, u32 rows, u32 cols, rows*cols f64
//! ```
//!
//! All integers and floats are little-endian. Tensor names and order are
//! fixed per message type:
//!
//! | type                  | payload                                              |
//! |-----------------------|------------------------------------------------------|
//! | `register`            | none                                                 |
//! | `global_model`        | `e_pat e_pos x_class head_w1 head_b1 head_w2 head_b2 encrypted` |
//! | `local_update_grad`   | `g_pat g_pos g_class g_head_w1 g_head_b1 g_head_w2 g_head_b2 encrypted metrics` |
//! | `local_update_params` | `e_pat … head_b2 encrypted metrics`                  |
//! | `round_complete`      | `metrics`                                            |
//! | `shutdown`            | none                                                 |
//!
//! `encrypted` is a 1×1 flag (0 or 1); `metrics` is 1×2 `[loss, accuracy]`
//! where a negative value means "not measured".

use crate::codec::{put_tensor, read_tensor, tensor_encoded_len, Cursor, TensorRead, Truncated};
use crate::model::{GradientUpdate, Layers, ModelParams, GRAD_NAMES, PARAM_NAMES};
use crate::numerics::Matrix;

use super::TransportError;

pub const MAGIC: &[u8; 4] = b"FVM1";
pub const VERSION: u8 = 1;
/// Frames larger than this are refused.
pub const MAX_FRAME: usize = 1 << 31;
/// Sender id used by the server.
pub const SERVER_ID: u32 = u32::MAX;

const HEADER_LEN: usize = 4 + 1 + 1 + 4 + 4 + 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageType {
    Register = 1,
    GlobalModel = 2,
    LocalUpdateGrad = 3,
    LocalUpdateParams = 4,
    RoundComplete = 5,
    Shutdown = 6,
}

impl MessageType {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => Self::Register,
            2 => Self::GlobalModel,
            3 => Self::LocalUpdateGrad,
            4 => Self::LocalUpdateParams,
            5 => Self::RoundComplete,
            6 => Self::Shutdown,
            _ => return None,
        })
    }

    /// Expected tensor names, in order.
    pub fn schema(self) -> Vec<&'static str> {
        let mut names = Vec::new();
        match self {
            Self::Register | Self::Shutdown => {}
            Self::GlobalModel => {
                names.extend(PARAM_NAMES);
                names.push("encrypted");
            }
            Self::LocalUpdateGrad => {
                names.extend(GRAD_NAMES);
                names.extend(["encrypted", "metrics"]);
            }
            Self::LocalUpdateParams => {
                names.extend(PARAM_NAMES);
                names.extend(["encrypted", "metrics"]);
            }
            Self::RoundComplete => names.push("metrics"),
        }
        names
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub value: Matrix,
}

/// Loss and test accuracy reported by a client; negative means not measured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub loss: f64,
    pub accuracy: f64,
}

impl Metrics {
    pub const NONE: Metrics = Metrics { loss: -1.0, accuracy: -1.0 };

    pub fn accuracy(&self) -> Option<f64> {
        (self.accuracy >= 0.0).then_some(self.accuracy)
    }

    pub fn loss(&self) -> Option<f64> {
        (self.loss >= 0.0).then_some(self.loss)
    }

    fn tensor(self) -> Matrix {
        Matrix::from_vec(1, 2, vec![self.loss, self.accuracy]).expect("1x2")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundMessage {
    pub msg_type: MessageType,
    pub round: u32,
    pub sender_id: u32,
    pub payload: Vec<NamedTensor>,
}

fn flag(encrypted: bool) -> Matrix {
    Matrix::filled(1, 1, if encrypted { 1.0 } else { 0.0 })
}

fn named<'a>(names: &'a [&'a str], layers: Layers) -> impl Iterator<Item = NamedTensor> + 'a {
    names.iter().zip(layers.into_tensors()).map(|(n, value)| NamedTensor { name: (*n).to_string(), value })
}

impl RoundMessage {
    pub fn new(msg_type: MessageType, round: u32, sender_id: u32) -> Self {
        Self { msg_type, round, sender_id, payload: Vec::new() }
    }

    pub fn register(client_id: u32) -> Self {
        Self::new(MessageType::Register, 0, client_id)
    }

    pub fn shutdown(round: u32) -> Self {
        Self::new(MessageType::Shutdown, round, SERVER_ID)
    }

    pub fn global_model(round: u32, params: &ModelParams) -> Self {
        let mut m = Self::new(MessageType::GlobalModel, round, SERVER_ID);
        m.payload.extend(named(&PARAM_NAMES, params.layers.clone()));
        m.push("encrypted", flag(params.encrypted));
        m
    }

    pub fn grad_update(update: &GradientUpdate, metrics: Metrics) -> Self {
        let mut m = Self::new(MessageType::LocalUpdateGrad, update.round, update.client_id);
        m.payload.extend(named(&GRAD_NAMES, update.layers.clone()));
        m.push("encrypted", flag(update.encrypted));
        m.push("metrics", metrics.tensor());
        m
    }

    pub fn params_update(round: u32, client_id: u32, params: &ModelParams, metrics: Metrics) -> Self {
        let mut m = Self::new(MessageType::LocalUpdateParams, round, client_id);
        m.payload.extend(named(&PARAM_NAMES, params.layers.clone()));
        m.push("encrypted", flag(params.encrypted));
        m.push("metrics", metrics.tensor());
        m
    }

    pub fn round_complete(round: u32, client_id: u32, metrics: Metrics) -> Self {
        let mut m = Self::new(MessageType::RoundComplete, round, client_id);
        m.push("metrics", metrics.tensor());
        m
    }

    fn push(&mut self, name: &str, value: Matrix) {
        self.payload.push(NamedTensor { name: name.to_string(), value });
    }

    fn tensor(&self, name: &str) -> Result<&Matrix, TransportError> {
        self.payload
            .iter()
            .find(|t| t.name == name)
            .map(|t| &t.value)
            .ok_or_else(|| TransportError::Schema(format!("{:?} message has no tensor {name}", self.msg_type)))
    }

    fn layers(&self, names: &[&str]) -> Result<Layers, TransportError> {
        let mut out = Vec::with_capacity(7);
        for n in names {
            out.push(self.tensor(n)?.clone());
        }
        Ok(Layers::from_tensors(out.try_into().expect("seven tensors")))
    }

    fn encrypted_flag(&self) -> Result<bool, TransportError> {
        let f = self.tensor("encrypted")?;
        match f.as_slice() {
            [v] if *v == 0.0 => Ok(false),
            [v] if *v == 1.0 => Ok(true),
            _ => Err(TransportError::Schema("encrypted flag must be a 1x1 tensor holding 0 or 1".into())),
        }
    }

    /// Model carried by `global_model` or `local_update_params`.
    pub fn model_params(&self) -> Result<ModelParams, TransportError> {
        self.expect_type(&[MessageType::GlobalModel, MessageType::LocalUpdateParams])?;
        Ok(ModelParams { layers: self.layers(&PARAM_NAMES)?, encrypted: self.encrypted_flag()? })
    }

    /// Gradients carried by `local_update_grad`.
    pub fn gradient_update(&self) -> Result<GradientUpdate, TransportError> {
        self.expect_type(&[MessageType::LocalUpdateGrad])?;
        Ok(GradientUpdate {
            layers: self.layers(&GRAD_NAMES)?,
            round: self.round,
            client_id: self.sender_id,
            encrypted: self.encrypted_flag()?,
        })
    }

    pub fn metrics(&self) -> Result<Metrics, TransportError> {
        match self.tensor("metrics")?.as_slice() {
            [loss, accuracy] => Ok(Metrics { loss: *loss, accuracy: *accuracy }),
            _ => Err(TransportError::Schema("metrics must be 1x2".into())),
        }
    }

    fn expect_type(&self, allowed: &[MessageType]) -> Result<(), TransportError> {
        if allowed.contains(&self.msg_type) {
            Ok(())
        } else {
            Err(TransportError::Schema(format!("unexpected {:?} message, wanted one of {allowed:?}", self.msg_type)))
        }
    }

    fn check_schema(&self) -> Result<(), TransportError> {
        let schema = self.msg_type.schema();
        let names: Vec<&str> = self.payload.iter().map(|t| t.name.as_str()).collect();
        if names != schema {
            return Err(TransportError::Schema(format!(
                "{:?} payload {names:?} does not match schema {schema:?}",
                self.msg_type
            )));
        }
        Ok(())
    }
}

/// Serializes `msg` into one length-prefixed frame.
pub fn encode(msg: &RoundMessage) -> Result<Vec<u8>, TransportError> {
    msg.check_schema()?;
    if msg.payload.len() > u16::MAX as usize {
        return Err(TransportError::TooLarge(msg.payload.len()));
    }
    let mut body_len = HEADER_LEN;
    for t in &msg.payload {
        if t.name.len() > u8::MAX as usize || !t.name.is_ascii() {
            return Err(TransportError::Schema(format!("tensor name {:?} is not short ASCII", t.name)));
        }
        body_len += tensor_encoded_len(&t.name, &t.value);
    }
    if body_len + 4 > MAX_FRAME {
        return Err(TransportError::TooLarge(body_len + 4));
    }
    let mut out = Vec::with_capacity(body_len + 4);
    out.extend_from_slice(&(body_len as u32).to_le_bytes());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(msg.msg_type as u8);
    out.extend_from_slice(&msg.round.to_le_bytes());
    out.extend_from_slice(&msg.sender_id.to_le_bytes());
    out.extend_from_slice(&(msg.payload.len() as u16).to_le_bytes());
    for t in &msg.payload {
        put_tensor(&mut out, &t.name, &t.value);
    }
    debug_assert_eq!(out.len(), body_len + 4);
    Ok(out)
}

fn incomplete(t: Truncated) -> TransportError {
    TransportError::Incomplete { have: t.offset, needed: t.needed }
}

/// Parses exactly one frame. Trailing bytes beyond the declared length are
/// an error.
pub fn decode(bytes: &[u8]) -> Result<RoundMessage, TransportError> {
    let mut cur = Cursor::new(bytes);
    let declared = cur.u32().map_err(incomplete)? as usize;
    if declared + 4 > MAX_FRAME {
        return Err(TransportError::TooLarge(declared + 4));
    }
    if declared < HEADER_LEN {
        return Err(TransportError::Corrupt(format!("declared length {declared} shorter than header")));
    }
    // Check the magic before waiting for the rest of a frame that may be garbage.
    let magic = &bytes[4..bytes.len().min(8)];
    if magic != &MAGIC[..magic.len()] {
        return Err(TransportError::Corrupt("bad magic, expected FVM1".into()));
    }
    if bytes.len() < declared + 4 {
        return Err(TransportError::Incomplete { have: bytes.len(), needed: declared + 4 - bytes.len() });
    }
    if bytes.len() > declared + 4 {
        return Err(TransportError::Corrupt(format!("{} bytes after frame end", bytes.len() - declared - 4)));
    }
    body(&bytes[4..])
}

/// Parses a frame body (everything after the length prefix).
pub(crate) fn body(bytes: &[u8]) -> Result<RoundMessage, TransportError> {
    // A short body is corrupt here: the length prefix promised these bytes.
    let corrupt = |t: Truncated| TransportError::Corrupt(format!("frame ends early at body offset {}", t.offset));
    let mut cur = Cursor::new(bytes);
    if cur.take(4).map_err(corrupt)? != MAGIC {
        return Err(TransportError::Corrupt("bad magic, expected FVM1".into()));
    }
    let version = cur.u8().map_err(corrupt)?;
    if version != VERSION {
        return Err(TransportError::UnsupportedVersion(version));
    }
    let raw_type = cur.u8().map_err(corrupt)?;
    let msg_type = MessageType::from_u8(raw_type).ok_or(TransportError::UnknownType(raw_type))?;
    let round = cur.u32().map_err(corrupt)?;
    let sender_id = cur.u32().map_err(corrupt)?;
    let count = cur.u16().map_err(corrupt)? as usize;
    let mut payload = Vec::with_capacity(count.min(16));
    for _ in 0..count {
        match read_tensor(&mut cur) {
            TensorRead::Ok(name, value) => payload.push(NamedTensor { name, value }),
            TensorRead::Truncated(t) => return Err(corrupt(t)),
            TensorRead::Invalid(m) => return Err(TransportError::Corrupt(m)),
        }
    }
    if cur.remaining() != 0 {
        return Err(TransportError::Corrupt(format!("{} unread bytes in frame", cur.remaining())));
    }
    let msg = RoundMessage { msg_type, round, sender_id, payload };
    msg.check_schema()?;
    Ok(msg)
}
