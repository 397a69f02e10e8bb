//! Serialized tool invocation: message types, newline-delimited canonical
//! JSON framing, a schema-checked registry and its transports.
//!
//! Wire format: one message per line, canonical JSON (object keys sorted,
//! no insignificant whitespace) followed by a single `\n`.
//!
//! ```text
//! {"id":1,"method":"tool/list"}
//! {"id":2,"method":"tool/call","params":{"arguments":{},"name":"env_summary"}}
//! {"id":2,"result":{...}}
//! {"error":{"code":-32601,"message":"unknown tool `x`"},"id":3}
//! ```

mod registry;
mod transport;

pub use registry::{ArgSpec, ArgType, Handler, Registry, RegistryError, ToolDescriptor};
pub use transport::{handle_line, serve, Loopback, StreamClient, Transport, TransportError};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// Line could not be parsed.
pub const PARSE_ERROR: i64 = -32700;
pub const METHOD_NOT_FOUND: i64 = -32601;
pub const INVALID_PARAMS: i64 = -32602;
pub const POLICY_NOT_ACTIVE: i64 = 1001;
pub const ENV_VIOLATION: i64 = 1002;
pub const HUMAN_UNAVAILABLE: i64 = 1003;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "tool/call")]
    Call,
    #[serde(rename = "tool/list")]
    List,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallParams {
    pub name: String,
    pub arguments: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolRequest {
    pub id: u64,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<CallParams>,
}

impl ToolRequest {
    pub fn list(id: u64) -> Self {
        Self {
            id,
            method: Method::List,
            params: None,
        }
    }

    pub fn call(id: u64, name: impl Into<String>, arguments: Map<String, Value>) -> Self {
        Self {
            id,
            method: Method::Call,
            params: Some(CallParams {
                name: name.into(),
                arguments,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolError {
    pub code: i64,
    pub message: String,
}

impl ToolError {
    pub fn new(code: i64, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for ToolError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "tool error {}: {}", self.code, self.message)
    }
}

impl std::error::Error for ToolError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseBody {
    Result(Map<String, Value>),
    Error(ToolError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResponse {
    pub id: u64,
    #[serde(flatten)]
    pub body: ResponseBody,
}

impl ToolResponse {
    pub fn ok(id: u64, result: Map<String, Value>) -> Self {
        Self {
            id,
            body: ResponseBody::Result(result),
        }
    }

    pub fn err(id: u64, error: ToolError) -> Self {
        Self {
            id,
            body: ResponseBody::Error(error),
        }
    }

    pub fn into_result(self) -> Result<Map<String, Value>, ToolError> {
        match self.body {
            ResponseBody::Result(r) => Ok(r),
            ResponseBody::Error(e) => Err(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Message {
    Request(ToolRequest),
    Response(ToolResponse),
}

impl From<ToolRequest> for Message {
    fn from(r: ToolRequest) -> Self {
        Message::Request(r)
    }
}

impl From<ToolResponse> for Message {
    fn from(r: ToolResponse) -> Self {
        Message::Response(r)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FramingError {
    #[error("line must end with a single newline")]
    Terminator,
    #[error("line is not valid UTF-8")]
    Utf8,
    #[error("malformed JSON: {0}")]
    Json(String),
    #[error("not a tool message: {0}")]
    Shape(String),
    #[error("line is not in canonical form")]
    NonCanonical,
}

/// Canonical line for `msg`, newline included.
///
/// Keys are written in sorted order by hand; the nested maps are ordered
/// already, so no intermediate value tree is built.
pub fn encode(msg: &Message) -> Vec<u8> {
    match msg {
        Message::Request(r) => encode_request(r),
        Message::Response(r) => encode_response(r),
    }
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}

fn json_map(m: &Map<String, Value>) -> String {
    serde_json::to_string(m).expect("maps serialize")
}

/// Parses one framed line. Anything other than the canonical encoding of a
/// valid message is rejected.
pub fn decode(line: &[u8]) -> Result<Message, FramingError> {
    let body = line.strip_suffix(b"\n").ok_or(FramingError::Terminator)?;
    if body.contains(&b'\n') {
        return Err(FramingError::Terminator);
    }
    let text = std::str::from_utf8(body).map_err(|_| FramingError::Utf8)?;
    let value: Value = serde_json::from_str(text).map_err(|e| FramingError::Json(e.to_string()))?;
    // The value's own serialization is canonical; with the exact key sets
    // checked below it equals the message's encoding.
    if serde_json::to_string(&value).map_err(|e| FramingError::Json(e.to_string()))? != text {
        return Err(FramingError::NonCanonical);
    }
    let Value::Object(mut obj) = value else {
        return Err(FramingError::Shape("message must be an object".into()));
    };
    let shape = |m: &str| FramingError::Shape(m.to_string());
    let id = obj
        .get("id")
        .and_then(Value::as_u64)
        .ok_or_else(|| shape("id must be a non-negative integer"))?;
    if let Some(method) = obj.get("method") {
        let method = match method.as_str() {
            Some("tool/call") => Method::Call,
            Some("tool/list") => Method::List,
            _ => return Err(shape("unknown method")),
        };
        let params = match (method, obj.remove("params")) {
            (Method::List, None) => None,
            (Method::Call, Some(Value::Object(mut p))) => {
                let arguments = match p.remove("arguments") {
                    Some(Value::Object(a)) => a,
                    _ => return Err(shape("arguments must be an object")),
                };
                let name = match p.remove("name") {
                    Some(Value::String(n)) => n,
                    _ => return Err(shape("name must be a string")),
                };
                if !p.is_empty() {
                    return Err(shape("unexpected field in params"));
                }
                Some(CallParams { name, arguments })
            }
            _ => return Err(shape("params must be present exactly for tool/call")),
        };
        if obj.len() != 2 {
            return Err(shape("unexpected field in request"));
        }
        return Ok(Message::Request(ToolRequest { id, method, params }));
    }
    if obj.len() != 2 {
        return Err(shape("response needs exactly one of result and error"));
    }
    let body = match (obj.remove("result"), obj.remove("error")) {
        (Some(Value::Object(r)), None) => ResponseBody::Result(r),
        (None, Some(Value::Object(mut e))) => {
            let code = e
                .get("code")
                .and_then(Value::as_i64)
                .ok_or_else(|| shape("error code must be an integer"))?;
            let message = match e.remove("message") {
                Some(Value::String(m)) => m,
                _ => return Err(shape("error message must be a string")),
            };
            if e.len() != 1 {
                return Err(shape("unexpected field in error"));
            }
            ResponseBody::Error(ToolError { code, message })
        }
        _ => return Err(shape("response needs exactly one of result and error")),
    };
    Ok(Message::Response(ToolResponse { id, body }))
}

pub fn encode_request(req: &ToolRequest) -> Vec<u8> {
    let method = match req.method {
        Method::Call => "tool/call",
        Method::List => "tool/list",
    };
    let mut line = format!("{{\"id\":{},\"method\":\"{method}\"", req.id);
    if let Some(p) = &req.params {
        line.push_str(&format!(
            ",\"params\":{{\"arguments\":{},\"name\":{}}}",
            json_map(&p.arguments),
            json_str(&p.name)
        ));
    }
    line.push_str("}\n");
    line.into_bytes()
}

pub fn encode_response(resp: &ToolResponse) -> Vec<u8> {
    let line = match &resp.body {
        ResponseBody::Result(r) => format!("{{\"id\":{},\"result\":{}}}\n", resp.id, json_map(r)),
        ResponseBody::Error(e) => format!(
            "{{\"error\":{{\"code\":{},\"message\":{}}},\"id\":{}}}\n",
            e.code,
            json_str(&e.message),
            resp.id
        ),
    };
    line.into_bytes()
}

pub fn decode_request(line: &[u8]) -> Result<ToolRequest, FramingError> {
    match decode(line)? {
        Message::Request(r) => Ok(r),
        Message::Response(_) => Err(FramingError::Shape("expected a request".into())),
    }
}

pub fn decode_response(line: &[u8]) -> Result<ToolResponse, FramingError> {
    match decode(line)? {
        Message::Response(r) => Ok(r),
        Message::Request(_) => Err(FramingError::Shape("expected a response".into())),
    }
}
