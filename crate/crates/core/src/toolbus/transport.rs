//! Transports sharing the line framing: an in-process loopback, a generic
//! reader/writer server loop (stdio, sockets) and a matching stream client.

use std::io::{BufRead, Write};

use thiserror::Error;

use super::{
    decode_request, encode_response, FramingError, Registry, ToolError, ToolResponse, PARSE_ERROR,
};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("transport i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("peer closed the connection")]
    Closed,
    #[error(transparent)]
    Framing(#[from] FramingError),
    #[error("response id {got} does not answer request {expected}")]
    IdMismatch { expected: u64, got: u64 },
}

/// Carries one framed request line and returns the framed response line.
pub trait Transport {
    fn exchange(&mut self, request_line: &[u8]) -> Result<Vec<u8>, TransportError>;
}

/// Server side of one line: decode, dispatch, encode. Undecodable lines get
/// a parse error answered with id 0.
pub fn handle_line<C>(registry: &Registry<C>, ctx: &mut C, line: &[u8]) -> Vec<u8> {
    let resp = match decode_request(line) {
        Ok(req) => registry.dispatch(ctx, &req),
        Err(e) => ToolResponse::err(0, ToolError::new(PARSE_ERROR, e.to_string())),
    };
    encode_response(&resp)
}

/// In-process duplex: every message is encoded and decoded exactly as it
/// would be on a socket.
pub struct Loopback<'r, C> {
    registry: &'r Registry<C>,
    pub ctx: C,
}

impl<'r, C> Loopback<'r, C> {
    pub fn new(registry: &'r Registry<C>, ctx: C) -> Self {
        Self { registry, ctx }
    }

    pub fn registry(&self) -> &Registry<C> {
        self.registry
    }

    pub fn into_inner(self) -> C {
        self.ctx
    }
}

impl<C> Transport for Loopback<'_, C> {
    fn exchange(&mut self, request_line: &[u8]) -> Result<Vec<u8>, TransportError> {
        Ok(handle_line(self.registry, &mut self.ctx, request_line))
    }
}

/// Serves requests from `reader` until end of input, strictly in order.
/// Returns the number of lines handled.
pub fn serve<C, R: BufRead, W: Write>(
    registry: &Registry<C>,
    ctx: &mut C,
    mut reader: R,
    mut writer: W,
) -> std::io::Result<u64> {
    let mut handled = 0;
    let mut line = Vec::new();
    loop {
        line.clear();
        if reader.read_until(b'\n', &mut line)? == 0 {
            return Ok(handled);
        }
        writer.write_all(&handle_line(registry, ctx, &line))?;
        writer.flush()?;
        handled += 1;
    }
}

/// Client over any reader/writer pair.
pub struct StreamClient<R, W> {
    reader: R,
    writer: W,
}

impl<R: BufRead, W: Write> StreamClient<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        Self { reader, writer }
    }
}

impl<R: BufRead, W: Write> Transport for StreamClient<R, W> {
    fn exchange(&mut self, request_line: &[u8]) -> Result<Vec<u8>, TransportError> {
        self.writer.write_all(request_line)?;
        self.writer.flush()?;
        let mut line = Vec::new();
        if self.reader.read_until(b'\n', &mut line)? == 0 {
            return Err(TransportError::Closed);
        }
        Ok(line)
    }
}
