use std::io::ErrorKind;
use std::net::{TcpListener, ToSocketAddrs};
use std::time::{Duration, Instant};

use thiserror::Error;

use super::{decode, ChannelConnection, Connection, ErrorCode, Message, TcpConnection, TransportError, WireError};
use crate::coordinator::{ControllerHandle, HandleError, LocalController, SolveRequest, Submission};
use crate::mpc::{ControllerId, ControllerModel, PlantState};
use crate::plant::{run_closed_loop_with, PlantError, SimConfig, SimResult};
use crate::profile::{Band, Profile};

pub const DEFAULT_ISO_ADDR: &str = "127.0.0.1:7878";
/// How long the ISO waits for any single controller message.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

fn request_to_message(req: &SolveRequest) -> Message {
    Message::SigmaReply {
        step: req.k0,
        iteration: req.iteration,
        state: req.state.to_values(),
        sigma: req.sigma.values().to_vec(),
        committed: req.band.as_ref().map(|b| b.committed.values().to_vec()),
        half_width: req.band.as_ref().map(|b| b.half_width),
        band_steps: req.band_steps,
        global_limit: req.global_limit,
        anchor: req.anchor.as_ref().map(|a| a.values().to_vec()),
    }
}

fn message_to_request(msg: Message) -> Result<SolveRequest, WireError> {
    let shape = |detail: String| WireError::new(ErrorCode::Shape, detail);
    let profile = |v: Vec<f64>| Profile::new(v).map_err(|e| shape(e.to_string()));
    let Message::SigmaReply {
        step,
        iteration,
        state,
        sigma,
        committed,
        half_width,
        band_steps,
        global_limit,
        anchor,
    } = msg
    else {
        return Err(WireError::new(ErrorCode::Unexpected, "expected sigma_reply"));
    };
    let band = match (committed, half_width) {
        (Some(c), Some(hw)) => Some(Band::new(profile(c)?, hw).map_err(|e| shape(e.to_string()))?),
        (None, None) => None,
        _ => return Err(shape("committed and half_width must be given together".into())),
    };
    Ok(SolveRequest {
        k0: step,
        iteration,
        state: PlantState::from_values(&state).ok_or_else(|| shape("state is empty".into()))?,
        sigma: profile(sigma)?,
        band,
        band_steps,
        global_limit,
        anchor: anchor.map(profile).transpose()?,
    })
}

/// ISO-side proxy for a controller on the other end of a connection.
///
/// Invariant: `pending` is true exactly when the controller's latest
/// `get_sigma` has been read and not yet answered.
#[derive(Debug)]
pub struct RemoteController<C: Connection> {
    id: ControllerId,
    conn: C,
    horizon: usize,
    timeout: Duration,
    pending: bool,
    last_submitted: Option<usize>,
}

impl<C: Connection> RemoteController<C> {
    /// Read the controller's first `get_sigma`, which names it.
    pub fn register(mut conn: C, horizon: usize, timeout: Duration) -> Result<Self, TransportError> {
        conn.set_timeout(Some(timeout))?;
        let mut rc = Self {
            id: 0,
            conn,
            horizon,
            timeout,
            pending: false,
            last_submitted: None,
        };
        match rc.read()? {
            Message::GetSigma { controller_id, .. } => {
                rc.id = controller_id;
                rc.pending = true;
                Ok(rc)
            }
            other => Err(rc.reject(ErrorCode::Registration, format!("expected get_sigma, got {other:?}"))),
        }
    }

    fn reject(&mut self, code: ErrorCode, detail: String) -> TransportError {
        let err = WireError::new(code, detail);
        let _ = self.conn.send(&err.to_message());
        TransportError::Protocol(err)
    }

    /// Next message; protocol violations are answered before being returned
    /// as errors.
    fn read(&mut self) -> Result<Message, TransportError> {
        let line = match self.conn.recv_line() {
            Ok(Some(line)) => line,
            Ok(None) => return Err(TransportError::Closed),
            Err(TransportError::Io(e)) if matches!(e.kind(), ErrorKind::TimedOut | ErrorKind::WouldBlock) => {
                return Err(TransportError::Timeout {
                    controller: self.id,
                    seconds: self.timeout.as_secs(),
                })
            }
            Err(e) => return Err(e),
        };
        if self.conn.has_pending() {
            return Err(self.reject(ErrorCode::Pipelining, "request sent before the previous reply".into()));
        }
        match decode(&line, self.horizon) {
            Ok(Message::ProtocolError { code, detail }) => Err(TransportError::Remote(WireError { code, detail })),
            Ok(msg) => Ok(msg),
            Err(e) => {
                let _ = self.conn.send(&e.to_message());
                Err(TransportError::Protocol(e))
            }
        }
    }

    /// Block until the controller asks for its σ.
    fn await_turn(&mut self) -> Result<(), TransportError> {
        while !self.pending {
            match self.read()? {
                Message::GetSigma { controller_id, .. } if controller_id == self.id => self.pending = true,
                Message::SubmitPlan {
                    controller_id,
                    iteration,
                    ..
                } if controller_id == self.id && Some(iteration) == self.last_submitted => {
                    let detail = format!("plan for iteration {iteration} already submitted");
                    self.conn
                        .send(&WireError::new(ErrorCode::Duplicate, detail).to_message())?;
                }
                other => {
                    return Err(self.reject(ErrorCode::Unexpected, format!("expected get_sigma, got {other:?}")));
                }
            }
        }
        Ok(())
    }

    fn exchange(&mut self, request: &SolveRequest) -> Result<Submission, TransportError> {
        self.await_turn()?;
        self.conn.send(&request_to_message(request))?;
        self.pending = false;
        match self.read()? {
            Message::SubmitPlan {
                controller_id,
                iteration,
                profile,
                first_move,
            } if controller_id == self.id && iteration == request.iteration => {
                self.conn.send(&Message::Ack)?;
                self.last_submitted = Some(iteration);
                let profile = Profile::new(profile).map_err(|e| self.reject(ErrorCode::Shape, e.to_string()))?;
                Ok(Submission { profile, first_move })
            }
            other => Err(self.reject(
                ErrorCode::Unexpected,
                format!(
                    "expected submit_plan for iteration {}, got {other:?}",
                    request.iteration
                ),
            )),
        }
    }

    /// Answer the controller's last `get_sigma` with the final round status.
    pub fn finish(mut self, converged: bool, iteration: usize) -> Result<(), TransportError> {
        self.await_turn()?;
        self.conn.send(&Message::RoundStatus { converged, iteration })
    }
}

impl<C: Connection> ControllerHandle for RemoteController<C> {
    fn id(&self) -> ControllerId {
        self.id
    }

    fn solve(&mut self, request: &SolveRequest) -> Result<Submission, HandleError> {
        self.exchange(request)
            .map_err(|e| HandleError::Transport(e.to_string()))
    }
}

/// Accept controllers until every id in `ids` has registered. Returns them
/// in ascending id order.
pub fn serve_iso(
    listener: &TcpListener,
    ids: &[ControllerId],
    horizon: usize,
    timeout: Duration,
) -> Result<Vec<RemoteController<TcpConnection>>, TransportError> {
    listener.set_nonblocking(true)?;
    let deadline = Instant::now() + timeout;
    let mut registered: Vec<RemoteController<TcpConnection>> = Vec::with_capacity(ids.len());
    while registered.len() < ids.len() {
        match listener.accept() {
            Ok((stream, peer)) => {
                stream.set_nonblocking(false)?;
                let mut rc = RemoteController::register(TcpConnection::new(stream)?, horizon, timeout)?;
                if !ids.contains(&rc.id) || registered.iter().any(|r| r.id == rc.id) {
                    let _ = rc.reject(
                        ErrorCode::Registration,
                        format!("controller {} is not expected or already connected", rc.id),
                    );
                    continue;
                }
                log::info!("controller {} registered from {peer}", rc.id);
                registered.push(rc);
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    let missing: Vec<_> = ids
                        .iter()
                        .filter(|id| !registered.iter().any(|r| r.id == **id))
                        .collect();
                    return Err(TransportError::Registration(format!(
                        "controllers {missing:?} did not connect within {} s",
                        timeout.as_secs()
                    )));
                }
                std::thread::sleep(Duration::from_millis(10));
            }
            Err(e) => return Err(e.into()),
        }
    }
    listener.set_nonblocking(false)?;
    registered.sort_by_key(|r| r.id);
    Ok(registered)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ControllerSummary {
    pub controller: ControllerId,
    pub solves: usize,
    pub last_round_converged: bool,
    pub last_round_iterations: usize,
}

/// Controller client loop: ask for σ, solve, submit, until the ISO closes
/// the run with `round_status`.
pub fn run_controller<C: Connection>(
    mut conn: C,
    model: &ControllerModel,
    horizon: usize,
) -> Result<ControllerSummary, TransportError> {
    let mut local = LocalController::new(model.clone());
    let mut last = 0;
    let mut solves = 0;
    let recv = |conn: &mut C| -> Result<Message, TransportError> {
        let line = conn.recv_line()?.ok_or(TransportError::Closed)?;
        match decode(&line, horizon) {
            Ok(Message::ProtocolError { code, detail }) => Err(TransportError::Remote(WireError { code, detail })),
            Ok(msg) => Ok(msg),
            Err(e) => {
                let _ = conn.send(&e.to_message());
                Err(e.into())
            }
        }
    };
    loop {
        conn.send(&Message::GetSigma {
            controller_id: model.id,
            iteration: last,
        })?;
        let request = match recv(&mut conn)? {
            Message::RoundStatus { converged, iteration } => {
                return Ok(ControllerSummary {
                    controller: model.id,
                    solves,
                    last_round_converged: converged,
                    last_round_iterations: iteration,
                })
            }
            msg @ Message::SigmaReply { .. } => match message_to_request(msg) {
                Ok(r) => r,
                Err(e) => {
                    let _ = conn.send(&e.to_message());
                    return Err(e.into());
                }
            },
            other => {
                let e = WireError::new(ErrorCode::Unexpected, format!("expected sigma_reply, got {other:?}"));
                let _ = conn.send(&e.to_message());
                return Err(e.into());
            }
        };
        let sub = match local.solve(&request) {
            Ok(sub) => sub,
            Err(e) => {
                let e = WireError::new(ErrorCode::Solver, e.to_string());
                conn.send(&e.to_message())?;
                return Err(e.into());
            }
        };
        conn.send(&Message::SubmitPlan {
            controller_id: model.id,
            iteration: request.iteration,
            profile: sub.profile.into_values(),
            first_move: sub.first_move,
        })?;
        match recv(&mut conn)? {
            Message::Ack => {}
            other => {
                let e = WireError::new(ErrorCode::Unexpected, format!("expected ack, got {other:?}"));
                let _ = conn.send(&e.to_message());
                return Err(e.into());
            }
        }
        last = request.iteration;
        solves += 1;
    }
}

#[derive(Debug, Error)]
pub enum DistributedError {
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error("iso: {0}")]
    Transport(#[from] TransportError),
    #[error("controller {controller}: {source}")]
    Controller {
        controller: ControllerId,
        source: TransportError,
    },
}

/// Run the closed loop against registered remote controllers, then release
/// them with the final round status.
pub fn run_with_remotes<C: Connection>(
    models: &[ControllerModel],
    mut remotes: Vec<RemoteController<C>>,
    cfg: &SimConfig,
) -> Result<SimResult, DistributedError> {
    let result = {
        let mut handles: Vec<&mut dyn ControllerHandle> =
            remotes.iter_mut().map(|r| r as &mut dyn ControllerHandle).collect();
        run_closed_loop_with(models, &mut handles, cfg)?
    };
    let (converged, iterations) = result.rounds.last().map_or((true, 0), |r| (r.converged, r.iterations));
    for r in remotes {
        r.finish(converged, iterations)?;
    }
    Ok(result)
}

fn join_all(
    joins: Vec<(
        ControllerId,
        std::thread::ScopedJoinHandle<'_, Result<ControllerSummary, TransportError>>,
    )>,
) -> Result<(), DistributedError> {
    let mut first = None;
    for (controller, j) in joins {
        match j.join().expect("controller thread panicked") {
            Ok(_) => {}
            Err(source) => {
                first.get_or_insert(DistributedError::Controller { controller, source });
            }
        }
    }
    first.map_or(Ok(()), Err)
}

/// Whole run with every controller on its own thread behind an in-process
/// channel.
pub fn simulate_over_channels(models: &[ControllerModel], cfg: &SimConfig) -> Result<SimResult, DistributedError> {
    std::thread::scope(|s| {
        let mut remotes = Vec::with_capacity(models.len());
        let mut joins = Vec::with_capacity(models.len());
        for m in models {
            let (iso_end, ctl_end): (ChannelConnection, ChannelConnection) = super::channel_pair();
            joins.push((m.id, s.spawn(move || run_controller(ctl_end, m, cfg.horizon))));
            remotes.push(RemoteController::register(iso_end, cfg.horizon, DEFAULT_TIMEOUT)?);
        }
        remotes.sort_by_key(|r| r.id);
        let outcome = run_with_remotes(models, remotes, cfg);
        let joined = join_all(joins);
        let result = outcome?;
        joined?;
        Ok(result)
    })
}

/// Whole run over loopback TCP: the ISO listens on `addr`, and each
/// controller runs on its own thread as a TCP client.
pub fn simulate_over_tcp(
    models: &[ControllerModel],
    cfg: &SimConfig,
    addr: impl ToSocketAddrs,
) -> Result<SimResult, DistributedError> {
    let listener = TcpListener::bind(addr).map_err(TransportError::from)?;
    let local = listener.local_addr().map_err(TransportError::from)?;
    let ids: Vec<ControllerId> = models.iter().map(|m| m.id).collect();
    std::thread::scope(|s| {
        let joins: Vec<_> = models
            .iter()
            .map(|m| {
                let join = s.spawn(move || {
                    let conn = TcpConnection::connect(local, DEFAULT_TIMEOUT)?;
                    run_controller(conn, m, cfg.horizon)
                });
                (m.id, join)
            })
            .collect();
        let outcome = serve_iso(&listener, &ids, cfg.horizon, DEFAULT_TIMEOUT)
            .map_err(DistributedError::from)
            .and_then(|remotes| run_with_remotes(models, remotes, cfg));
        drop(listener);
        let joined = join_all(joins);
        let result = outcome?;
        joined?;
        Ok(result)
    })
}
