//! Blocking client for the environment server.

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};

use findview_core::environment::Action;
use findview_core::raster::RgbImage;
use thiserror::Error;

use crate::protocol::{
    decode_observation, read_frame, write_json, ErrorReply, HelloReply, ProtocolError, Reply, Request, SeekReply,
    StepReply, PROTOCOL_VERSION,
};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("server error {}: {}", .0.error, .0.message)]
    Server(ErrorReply),
    #[error("unexpected reply: {0}")]
    Unexpected(String),
    #[error("server closed the connection")]
    Closed,
}

/// One decoded server reply.
#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    /// Reply to reset or step, with (target, current) views.
    Step(StepReply, RgbImage, RgbImage),
    Seek(SeekReply),
    Error(ErrorReply),
    Closed,
}

pub struct Client {
    reader: BufReader<Box<dyn Read + Send>>,
    writer: BufWriter<Box<dyn Write + Send>>,
    hello: HelloReply,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let reader = stream.try_clone()?;
        Self::from_streams(Box::new(reader), Box::new(stream))
    }

    /// Performs the handshake over an arbitrary byte stream pair.
    pub fn from_streams(reader: Box<dyn Read + Send>, writer: Box<dyn Write + Send>) -> Result<Self, ClientError> {
        let mut reader = BufReader::new(reader);
        let mut writer = BufWriter::new(writer);
        write_json(&mut writer, &Request::Hello { version: PROTOCOL_VERSION })?;
        writer.flush()?;
        let frame = read_frame(&mut reader)?.ok_or(ClientError::Closed)?;
        let hello = match Reply::parse(&frame)? {
            Reply::Hello(h) => h,
            Reply::Error(e) => return Err(ClientError::Server(e)),
            other => return Err(ClientError::Unexpected(format!("{other:?}"))),
        };
        Ok(Self { reader, writer, hello })
    }

    pub fn hello(&self) -> &HelloReply {
        &self.hello
    }

    /// Sends without waiting, for pipelining across envs.
    pub fn send(&mut self, req: &Request) -> Result<(), ClientError> {
        write_json(&mut self.writer, req)?;
        self.writer.flush()?;
        Ok(())
    }

    /// Receives the next reply from any env.
    pub fn recv(&mut self) -> Result<Response, ClientError> {
        let frame = read_frame(&mut self.reader)?.ok_or(ClientError::Closed)?;
        match Reply::parse(&frame)? {
            Reply::Step(s) => {
                let obs = read_frame(&mut self.reader)?.ok_or(ClientError::Closed)?;
                let (t, c) = decode_observation(&obs)?;
                Ok(Response::Step(s, t, c))
            }
            Reply::Seek(s) => Ok(Response::Seek(s)),
            Reply::Error(e) => Ok(Response::Error(e)),
            Reply::Closed { .. } => Ok(Response::Closed),
            Reply::Hello(h) => Err(ClientError::Unexpected(format!("{h:?}"))),
        }
    }

    fn call_step(&mut self, req: Request) -> Result<(StepReply, RgbImage, RgbImage), ClientError> {
        self.send(&req)?;
        match self.recv()? {
            Response::Step(s, t, c) => Ok((s, t, c)),
            Response::Error(e) => Err(ClientError::Server(e)),
            other => Err(ClientError::Unexpected(format!("{other:?}"))),
        }
    }

    pub fn reset(
        &mut self,
        env: usize,
        episode: Option<usize>,
    ) -> Result<(StepReply, RgbImage, RgbImage), ClientError> {
        self.call_step(Request::Reset { env, episode })
    }

    pub fn step(&mut self, env: usize, action: Action) -> Result<(StepReply, RgbImage, RgbImage), ClientError> {
        self.call_step(Request::Step { env, action })
    }

    pub fn seek(&mut self, env: usize, cursor: usize) -> Result<SeekReply, ClientError> {
        self.send(&Request::Seek { env, cursor })?;
        match self.recv()? {
            Response::Seek(s) => Ok(s),
            Response::Error(e) => Err(ClientError::Server(e)),
            other => Err(ClientError::Unexpected(format!("{other:?}"))),
        }
    }

    /// Waits for outstanding replies to drain, then for the close ack.
    pub fn close(mut self) -> Result<(), ClientError> {
        self.send(&Request::Close)?;
        loop {
            match self.recv()? {
                Response::Closed => return Ok(()),
                Response::Error(e) if e.error == "protocol" => return Err(ClientError::Server(e)),
                _ => {}
            }
        }
    }
}
