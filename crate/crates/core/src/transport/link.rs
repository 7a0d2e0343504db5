use std::collections::VecDeque;
use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender, TryRecvError};
use std::time::{Duration, Instant};

use super::{encode, Message, TransportError};

/// A bidirectional line channel.
pub trait Connection {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError>;
    /// Next line, `None` once the peer has closed. A read timeout surfaces as
    /// an `Io` error of kind `TimedOut` or `WouldBlock`.
    fn recv_line(&mut self) -> Result<Option<String>, TransportError>;
    /// Whether more input has already arrived after the last line read.
    fn has_pending(&mut self) -> bool;
    fn set_timeout(&mut self, timeout: Option<Duration>) -> Result<(), TransportError>;
}

/// Newline-framed TCP stream.
#[derive(Debug)]
pub struct TcpConnection {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl TcpConnection {
    pub fn new(stream: TcpStream) -> Result<Self, TransportError> {
        stream.set_nodelay(true)?;
        let writer = stream.try_clone()?;
        Ok(Self {
            reader: BufReader::new(stream),
            writer,
        })
    }

    /// Connect, retrying until `patience` runs out so controllers may start
    /// before the ISO is listening.
    pub fn connect(addr: impl ToSocketAddrs + Clone, patience: Duration) -> Result<Self, TransportError> {
        let deadline = Instant::now() + patience;
        loop {
            match TcpStream::connect(addr.clone()) {
                Ok(stream) => return Self::new(stream),
                Err(e) if Instant::now() < deadline && e.kind() == ErrorKind::ConnectionRefused => {
                    std::thread::sleep(Duration::from_millis(50));
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
}

impl Connection for TcpConnection {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        self.writer.write_all(encode(msg).as_bytes())?;
        self.writer.flush()?;
        Ok(())
    }

    fn recv_line(&mut self) -> Result<Option<String>, TransportError> {
        let mut line = String::new();
        let n = self.reader.read_line(&mut line)?;
        Ok((n > 0).then_some(line))
    }

    fn has_pending(&mut self) -> bool {
        !self.reader.buffer().is_empty()
    }

    fn set_timeout(&mut self, timeout: Option<Duration>) -> Result<(), TransportError> {
        self.reader.get_ref().set_read_timeout(timeout)?;
        Ok(())
    }
}

/// In-process connection: encoded lines travel over a channel, so the codec
/// is exercised exactly as over TCP.
#[derive(Debug)]
pub struct ChannelConnection {
    tx: Sender<String>,
    rx: Receiver<String>,
    queued: VecDeque<String>,
    timeout: Option<Duration>,
}

/// Two connected ends.
pub fn channel_pair() -> (ChannelConnection, ChannelConnection) {
    let (a_tx, b_rx) = channel();
    let (b_tx, a_rx) = channel();
    let end = |tx, rx| ChannelConnection {
        tx,
        rx,
        queued: VecDeque::new(),
        timeout: None,
    };
    (end(a_tx, a_rx), end(b_tx, b_rx))
}

impl ChannelConnection {
    /// Push raw text to the peer, bypassing the encoder.
    pub fn send_raw(&mut self, line: impl Into<String>) -> Result<(), TransportError> {
        self.tx.send(line.into()).map_err(|_| TransportError::Closed)
    }
}

impl Connection for ChannelConnection {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        self.send_raw(encode(msg))
    }

    fn recv_line(&mut self) -> Result<Option<String>, TransportError> {
        if let Some(line) = self.queued.pop_front() {
            return Ok(Some(line));
        }
        let got = match self.timeout {
            Some(t) => self.rx.recv_timeout(t).map_err(|e| match e {
                RecvTimeoutError::Timeout => Some(std::io::Error::from(ErrorKind::TimedOut)),
                RecvTimeoutError::Disconnected => None,
            }),
            None => self.rx.recv().map_err(|_| None),
        };
        match got {
            Ok(line) => Ok(Some(line)),
            Err(None) => Ok(None),
            Err(Some(io)) => Err(io.into()),
        }
    }

    fn has_pending(&mut self) -> bool {
        match self.rx.try_recv() {
            Ok(line) => {
                self.queued.push_back(line);
                true
            }
            Err(TryRecvError::Empty | TryRecvError::Disconnected) => !self.queued.is_empty(),
        }
    }

    fn set_timeout(&mut self, timeout: Option<Duration>) -> Result<(), TransportError> {
        self.timeout = timeout;
        Ok(())
    }
}
