//! Connection handling: one worker thread per env, one writer thread.

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;

use findview_core::environment::{Action, EnvError, PanoramaSource};
use thiserror::Error;

use crate::protocol::{
    read_frame, write_frame, ErrorCode, ErrorReply, HelloReply, ProtocolError, Request, PROTOCOL_VERSION,
};
use crate::session::{EnvSlot, Outcome, SessionConfig};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("client violated the protocol: {0}")]
    Violation(String),
    #[error("invalid server config: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

fn check(cfg: &SessionConfig) -> Result<(), ServerError> {
    if cfg.n_envs == 0 {
        return Err(ServerError::Config("n_envs must be at least 1".into()));
    }
    if cfg.source.is_empty() {
        return Err(ServerError::Config("episode source is empty".into()));
    }
    cfg.env.validate()?;
    Ok(())
}

fn hello_reply(cfg: &SessionConfig) -> HelloReply {
    HelloReply {
        ok: true,
        op: "hello".into(),
        version: PROTOCOL_VERSION,
        n_envs: cfg.n_envs,
        obs_shape: [2, cfg.env.obs_height, cfg.env.obs_width, 3],
        actions: Action::ALL.to_vec(),
        max_steps: cfg.env.max_steps,
        fov: cfg.env.fov_deg,
        hide_state: cfg.hide_state,
        n_episodes: cfg.source.len(),
    }
}

fn json(msg: &impl serde::Serialize) -> Vec<u8> {
    serde_json::to_vec(msg).expect("reply types always serialise")
}

/// Serves one client until it closes, disconnects or breaks the protocol.
///
/// Replies for different envs may interleave in completion order; replies for
/// one env keep request order. A second request for an env whose previous
/// request is unanswered is a violation: the server answers with a
/// `protocol` error and closes.
pub fn serve<R, W>(
    cfg: &SessionConfig,
    panoramas: Arc<dyn PanoramaSource>,
    reader: R,
    writer: W,
) -> Result<(), ServerError>
where
    R: Read,
    W: Write + Send,
{
    check(cfg)?;
    let mut reader = BufReader::new(reader);
    let source = Arc::new(cfg.source.clone());
    let slots = (0..cfg.n_envs)
        .map(|i| EnvSlot::new(i, cfg, source.clone(), panoramas.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let busy: Arc<Vec<AtomicBool>> = Arc::new((0..cfg.n_envs).map(|_| AtomicBool::new(false)).collect());

    thread::scope(|s| {
        let (out_tx, out_rx) = mpsc::channel::<Vec<Vec<u8>>>();
        let writer_handle = s.spawn(move || -> Result<(), ProtocolError> {
            let mut w = BufWriter::new(writer);
            for frames in out_rx {
                for f in &frames {
                    write_frame(&mut w, f)?;
                }
                w.flush()?;
            }
            Ok(())
        });

        let fatal = |out: &mpsc::Sender<Vec<Vec<u8>>>, op: Option<&str>, msg: String| {
            let _ = out.send(vec![json(&ErrorReply::new(ErrorCode::Protocol, op, None, msg.clone()))]);
            ServerError::Violation(msg)
        };

        let result = (|| -> Result<(), ServerError> {
            match read_frame(&mut reader)? {
                None => return Ok(()),
                Some(f) => match serde_json::from_slice::<Request>(&f) {
                    Ok(Request::Hello { version }) if version == PROTOCOL_VERSION => {
                        out_tx.send(vec![json(&hello_reply(cfg))]).ok();
                    }
                    Ok(Request::Hello { version }) => {
                        return Err(fatal(
                            &out_tx,
                            Some("hello"),
                            format!("unsupported protocol version {version}, server speaks {PROTOCOL_VERSION}"),
                        ))
                    }
                    _ => return Err(fatal(&out_tx, None, "first message must be hello".into())),
                },
            }

            let mut inboxes = Vec::with_capacity(slots.len());
            let mut workers = Vec::with_capacity(slots.len());
            for (i, mut slot) in slots.into_iter().enumerate() {
                let (tx, rx) = mpsc::channel::<Request>();
                let out = out_tx.clone();
                let busy = busy.clone();
                inboxes.push(tx);
                workers.push(s.spawn(move || {
                    for req in rx {
                        let frames = match slot.handle(&req) {
                            Outcome::Frames(f) => f,
                            Outcome::Error(e) => vec![json(&e)],
                        };
                        // Clear before queueing: the client may answer as
                        // soon as the reply is on the wire.
                        busy[i].store(false, Ordering::Release);
                        if out.send(frames).is_err() {
                            break;
                        }
                    }
                }));
            }

            let drain = |inboxes: Vec<mpsc::Sender<Request>>, workers: Vec<thread::ScopedJoinHandle<'_, ()>>| {
                drop(inboxes);
                for w in workers {
                    w.join().expect("env worker panicked");
                }
            };

            loop {
                let frame = match read_frame(&mut reader) {
                    Ok(Some(f)) => f,
                    Ok(None) => {
                        drain(inboxes, workers);
                        return Ok(());
                    }
                    Err(ProtocolError::Io(e)) => {
                        drain(inboxes, workers);
                        return Err(e.into());
                    }
                    Err(e) => {
                        drain(inboxes, workers);
                        return Err(fatal(&out_tx, None, e.to_string()));
                    }
                };
                let req = match serde_json::from_slice::<Request>(&frame) {
                    Ok(r) => r,
                    Err(e) => {
                        drain(inboxes, workers);
                        return Err(fatal(&out_tx, None, format!("bad request: {e}")));
                    }
                };
                match req {
                    Request::Close => {
                        drain(inboxes, workers);
                        out_tx.send(vec![br#"{"ok":true,"op":"close"}"#.to_vec()]).ok();
                        return Ok(());
                    }
                    Request::Hello { .. } => {
                        drain(inboxes, workers);
                        return Err(fatal(&out_tx, Some("hello"), "repeated hello".into()));
                    }
                    _ => {
                        let env = req.env().expect("env-bearing request");
                        if env >= inboxes.len() {
                            let n = inboxes.len();
                            drain(inboxes, workers);
                            return Err(fatal(&out_tx, None, format!("env {env} out of range ({n} envs)")));
                        }
                        if busy[env].swap(true, Ordering::AcqRel) {
                            drain(inboxes, workers);
                            return Err(fatal(&out_tx, None, format!("env {env} already has a request in flight")));
                        }
                        inboxes[env].send(req).expect("worker alive while its inbox is open");
                    }
                }
            }
        })();

        drop(out_tx);
        let written = writer_handle.join().expect("writer panicked");
        match (result, written) {
            (Err(e), _) => Err(e),
            (Ok(()), Err(e)) => Err(e.into()),
            (Ok(()), Ok(())) => Ok(()),
        }
    })
}

/// Serves a single client on stdin/stdout.
pub fn serve_stdio(cfg: &SessionConfig, panoramas: Arc<dyn PanoramaSource>) -> Result<(), ServerError> {
    serve(cfg, panoramas, io::stdin(), io::stdout())
}

/// Accepts one client on `listener` and serves it.
pub fn serve_tcp(
    cfg: &SessionConfig,
    panoramas: Arc<dyn PanoramaSource>,
    listener: &TcpListener,
) -> Result<(), ServerError> {
    let (stream, _) = listener.accept()?;
    serve_stream(cfg, panoramas, stream)
}

fn serve_stream(cfg: &SessionConfig, panoramas: Arc<dyn PanoramaSource>, stream: TcpStream) -> Result<(), ServerError> {
    stream.set_nodelay(true)?;
    let reader = stream.try_clone()?;
    serve(cfg, panoramas, reader, stream)
}

/// Binds `addr`, then serves one client on a background thread.
pub fn spawn_tcp(
    cfg: SessionConfig,
    panoramas: Arc<dyn PanoramaSource>,
    addr: impl ToSocketAddrs,
) -> Result<(SocketAddr, thread::JoinHandle<Result<(), ServerError>>), ServerError> {
    check(&cfg)?;
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    let handle = thread::spawn(move || serve_tcp(&cfg, panoramas, &listener));
    Ok((local, handle))
}
