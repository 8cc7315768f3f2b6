//! Frame transports: an in-process channel pair and TCP.

use std::io::Write;
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::Duration;

use super::codec::read_frame;
use super::FedError;

/// Moves whole frames between two endpoints.
pub trait Transport {
    fn send(&mut self, frame: &[u8]) -> Result<(), FedError>;
    /// Blocks for the next frame; `None` waits forever.
    fn recv(&mut self, timeout: Option<Duration>) -> Result<Vec<u8>, FedError>;
}

/// One end of an in-process frame channel.
#[derive(Debug)]
pub struct InProcTransport {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

pub fn in_proc_pair() -> (InProcTransport, InProcTransport) {
    let (a_tx, b_rx) = mpsc::channel();
    let (b_tx, a_rx) = mpsc::channel();
    (
        InProcTransport { tx: a_tx, rx: a_rx },
        InProcTransport { tx: b_tx, rx: b_rx },
    )
}

impl Transport for InProcTransport {
    fn send(&mut self, frame: &[u8]) -> Result<(), FedError> {
        self.tx
            .send(frame.to_vec())
            .map_err(|_| FedError::Transport("peer endpoint dropped".into()))
    }

    fn recv(&mut self, timeout: Option<Duration>) -> Result<Vec<u8>, FedError> {
        match timeout {
            None => self
                .rx
                .recv()
                .map_err(|_| FedError::Transport("peer endpoint dropped".into())),
            Some(t) => self.rx.recv_timeout(t).map_err(|e| match e {
                RecvTimeoutError::Timeout => FedError::Transport(format!("no frame within {t:?}")),
                RecvTimeoutError::Disconnected => FedError::Transport("peer endpoint dropped".into()),
            }),
        }
    }
}

#[derive(Debug)]
pub struct TcpTransport {
    stream: TcpStream,
}

impl TcpTransport {
    pub fn new(stream: TcpStream) -> Self {
        Self { stream }
    }
}

impl Transport for TcpTransport {
    fn send(&mut self, frame: &[u8]) -> Result<(), FedError> {
        self.stream.write_all(frame)?;
        Ok(())
    }

    fn recv(&mut self, timeout: Option<Duration>) -> Result<Vec<u8>, FedError> {
        self.stream.set_read_timeout(timeout)?;
        match read_frame(&mut self.stream) {
            Ok(Some(frame)) => Ok(frame),
            Ok(None) => Err(FedError::Transport("connection closed by peer".into())),
            Err(e) => Err(FedError::Transport(e.to_string())),
        }
    }
}

/// Exponential backoff for connection attempts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 8,
            initial_backoff: Duration::from_millis(100),
            max_backoff: Duration::from_secs(5),
        }
    }
}

pub fn connect_with_retry(addr: impl ToSocketAddrs, policy: RetryPolicy) -> Result<TcpTransport, FedError> {
    let addrs: Vec<_> = addr.to_socket_addrs()?.collect();
    let mut backoff = policy.initial_backoff;
    let mut last_err = String::from("no address to connect to");
    for attempt in 1..=policy.attempts.max(1) {
        for a in &addrs {
            match TcpStream::connect(a) {
                Ok(s) => {
                    s.set_nodelay(true)?;
                    return Ok(TcpTransport::new(s));
                }
                Err(e) => last_err = format!("{a}: {e}"),
            }
        }
        if attempt < policy.attempts {
            log::info!("connect attempt {attempt} failed ({last_err}); retrying in {backoff:?}");
            thread::sleep(backoff);
            backoff = (backoff * 2).min(policy.max_backoff);
        }
    }
    Err(FedError::Transport(format!(
        "aggregator unreachable after {} attempts: {last_err}",
        policy.attempts
    )))
}
