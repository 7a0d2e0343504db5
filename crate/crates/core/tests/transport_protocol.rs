use std::time::Duration;

use gridweave::coordinator::{ControllerHandle, HandleError, SolveRequest};
use gridweave::devices::{Battery, Device, ExogenousSeries, RcBuilding};
use gridweave::mpc::{ControllerModel, PlantState};
use gridweave::plant::{run_closed_loop, SimConfig};
use gridweave::profile::{Band, Profile, TariffSchedule};
use gridweave::transport::{
    channel_pair, decode, encode, run_controller, simulate_over_channels, simulate_over_tcp, ChannelConnection,
    Connection, ErrorCode, Message, RemoteController, TransportError,
};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e6..1e6f64,
        -1e-6..1e-6f64,
        Just(0.0),
        Just(-0.0),
        Just(f64::MIN_POSITIVE),
        Just(1e300)
    ]
}

fn profile(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(finite(), n)
}

fn message() -> impl Strategy<Value = Message> {
    prop_oneof![
        (any::<u32>(), 0usize..100).prop_map(|(controller_id, iteration)| Message::GetSigma {
            controller_id,
            iteration
        }),
        (
            0usize..1000,
            1usize..60,
            prop::collection::vec(finite(), 1..5),
            profile(24),
            prop::option::of(profile(24)),
            0usize..25,
            prop::option::of(0.0..50.0f64),
            prop::option::of(profile(24)),
        )
            .prop_map(
                |(step, iteration, state, sigma, committed, band_steps, global_limit, anchor)| {
                    Message::SigmaReply {
                        step,
                        iteration,
                        state,
                        sigma,
                        half_width: committed.as_ref().map(|_| 2.0),
                        committed,
                        band_steps,
                        global_limit,
                        anchor,
                    }
                }
            ),
        (
            any::<u32>(),
            1usize..60,
            profile(24),
            prop::collection::vec(finite(), 0..8)
        )
            .prop_map(|(controller_id, iteration, profile, first_move)| Message::SubmitPlan {
                controller_id,
                iteration,
                profile,
                first_move
            }),
        Just(Message::Ack),
        (any::<bool>(), 0usize..60).prop_map(|(converged, iteration)| Message::RoundStatus { converged, iteration }),
        ("[a-z \\n\"{}]{0,20}").prop_map(|detail| Message::ProtocolError {
            code: ErrorCode::Shape,
            detail
        }),
    ]
}

proptest! {
    #[test]
    fn every_message_round_trips(m in message()) {
        let line = encode(&m);
        prop_assert!(line.starts_with(r#"{"type":"#), "{}", line);
        prop_assert_eq!(line.matches('\n').count(), 1);
        prop_assert_eq!(decode(&line, 24).unwrap(), m);
    }

    #[test]
    fn submitted_profiles_survive_the_wire(values in profile(24)) {
        let m = Message::SubmitPlan { controller_id: 1, iteration: 1, profile: values.clone(), first_move: vec![] };
        let Message::SubmitPlan { profile: back, .. } = decode(&encode(&m), 24).unwrap() else { unreachable!() };
        for (a, b) in values.iter().zip(&back) {
            prop_assert!(a == b || ((a - b) / a).abs() <= 1e-12);
        }
    }
}

#[test]
fn truncated_line_is_parse_error() {
    let line = encode(&Message::GetSigma {
        controller_id: 2,
        iteration: 0,
    });
    let e = decode(&line[..line.len() - 6], 24).unwrap_err();
    assert_eq!(e.code, ErrorCode::Parse);
}

#[test]
fn unknown_tag_is_unknown_type() {
    let e = decode("{\"type\":\"get_sigmas\",\"controller_id\":1,\"iteration\":0}\n", 24).unwrap_err();
    assert_eq!(e.code, ErrorCode::UnknownType);
}

#[test]
fn short_profile_is_shape_error() {
    let m = Message::SubmitPlan {
        controller_id: 1,
        iteration: 1,
        profile: vec![1.0; 23],
        first_move: vec![],
    };
    assert_eq!(decode(&encode(&m), 24).unwrap_err().code, ErrorCode::Shape);
    assert!(decode(&encode(&m), 23).is_ok());
}

fn house(id: u32, base: &[f64], soc: f64) -> ControllerModel {
    let n = base.len();
    ControllerModel {
        id,
        name: format!("house-{id}"),
        building: RcBuilding {
            heat_capacity: 10.0,
            loss_coefficient: 0.2,
            comfort_min: [f64::NEG_INFINITY; 24],
            comfort_max: [f64::INFINITY; 24],
            t_init: 20.0,
        },
        devices: vec![Device::Battery(Battery {
            capacity: 4.0,
            p_charge_max: 2.0,
            p_discharge_max: 2.0,
            eta_c: 0.95,
            eta_d: 0.95,
            soc_init: soc,
        })],
        forecast: ExogenousSeries {
            t_out: vec![5.0; n],
            irradiance: vec![0.0; n],
            base_load: base.to_vec(),
            dhw_draw: vec![0.0; n],
        },
        tariff: TariffSchedule::day_night(),
    }
}

fn fleet() -> Vec<ControllerModel> {
    let curve: Vec<f64> = (0..48)
        .map(|k| 1.0 + ((k % 24) as f64 / 4.0).sin().abs() * 3.0)
        .collect();
    let flat = vec![2.0; 48];
    vec![house(7, &curve, 1.0), house(2, &flat, 3.0), house(4, &curve, 2.0)]
}

fn config() -> SimConfig {
    SimConfig {
        days: 1,
        ..SimConfig::default()
    }
}

#[test]
fn channel_transport_matches_direct_calls() {
    let models = fleet();
    let direct = run_closed_loop(&models, &config()).unwrap();
    let remote = simulate_over_channels(&models, &config()).unwrap();
    assert_eq!(direct, remote);
}

#[test]
fn tcp_transport_matches_direct_calls() {
    let models = fleet();
    let direct = run_closed_loop(&models, &config()).unwrap();
    let remote = simulate_over_tcp(&models, &config(), "127.0.0.1:0").unwrap();
    assert_eq!(direct, remote);
}

fn request(iteration: usize) -> SolveRequest {
    SolveRequest {
        k0: 0,
        iteration,
        state: PlantState {
            temperature: 20.0,
            storage: vec![1.0],
        },
        sigma: Profile::zeros(24),
        band: Some(Band::new(Profile::constant(24, 3.0), 2.0).unwrap()),
        band_steps: 24,
        global_limit: None,
        anchor: None,
    }
}

fn recv(conn: &mut ChannelConnection) -> Message {
    decode(&conn.recv_line().unwrap().unwrap(), 24).unwrap()
}

/// Registers a scripted peer and returns the ISO-side handle.
fn scripted(id: u32) -> (RemoteController<ChannelConnection>, ChannelConnection) {
    let (iso, mut peer) = channel_pair();
    peer.send(&Message::GetSigma {
        controller_id: id,
        iteration: 0,
    })
    .unwrap();
    let rc = RemoteController::register(iso, 24, Duration::from_millis(200)).unwrap();
    (rc, peer)
}

fn submit(iteration: usize) -> Message {
    Message::SubmitPlan {
        controller_id: 5,
        iteration,
        profile: vec![1.0; 24],
        first_move: vec![0.0, 0.5, 0.0],
    }
}

#[test]
fn remote_handle_relays_one_exchange() {
    let (mut rc, mut peer) = scripted(5);
    assert_eq!(rc.id(), 5);
    peer.send(&submit(1)).unwrap();
    let sub = rc.solve(&request(1)).unwrap();
    assert_eq!(sub.profile, Profile::constant(24, 1.0));
    assert_eq!(sub.first_move, vec![0.0, 0.5, 0.0]);
    assert!(matches!(recv(&mut peer), Message::SigmaReply { iteration: 1, .. }));
    assert_eq!(recv(&mut peer), Message::Ack);
}

#[test]
fn duplicate_submission_is_rejected() {
    let (mut rc, mut peer) = scripted(5);
    peer.send(&submit(1)).unwrap();
    rc.solve(&request(1)).unwrap();
    recv(&mut peer);
    recv(&mut peer);
    // Resend instead of asking for the next turn, then ask properly.
    peer.send(&submit(1)).unwrap();
    let waiter = std::thread::spawn(move || {
        let reply = recv(&mut peer);
        peer.send(&Message::GetSigma {
            controller_id: 5,
            iteration: 1,
        })
        .unwrap();
        assert!(matches!(recv(&mut peer), Message::SigmaReply { iteration: 2, .. }));
        peer.send(&submit(2)).unwrap();
        assert_eq!(recv(&mut peer), Message::Ack);
        (reply, peer)
    });
    rc.solve(&request(2)).unwrap();
    let (reply, _peer) = waiter.join().unwrap();
    assert!(matches!(
        reply,
        Message::ProtocolError {
            code: ErrorCode::Duplicate,
            ..
        }
    ));
}

#[test]
fn pipelined_requests_are_rejected() {
    let (iso, mut peer) = channel_pair();
    peer.send(&Message::GetSigma {
        controller_id: 5,
        iteration: 0,
    })
    .unwrap();
    peer.send(&Message::GetSigma {
        controller_id: 5,
        iteration: 0,
    })
    .unwrap();
    let err = RemoteController::register(iso, 24, Duration::from_millis(200)).unwrap_err();
    assert!(matches!(err, TransportError::Protocol(ref e) if e.code == ErrorCode::Pipelining));
    assert!(matches!(
        recv(&mut peer),
        Message::ProtocolError {
            code: ErrorCode::Pipelining,
            ..
        }
    ));
}

#[test]
fn silent_controller_times_out() {
    let (mut rc, _peer) = scripted(5);
    let err = rc.solve(&request(1)).unwrap_err();
    match err {
        HandleError::Transport(msg) => assert!(msg.contains("controller 5"), "{msg}"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn malformed_submission_is_answered_with_its_code() {
    let (mut rc, mut peer) = scripted(5);
    let bad = Message::SubmitPlan {
        controller_id: 5,
        iteration: 1,
        profile: vec![1.0; 23],
        first_move: vec![],
    };
    peer.send(&bad).unwrap();
    assert!(rc.solve(&request(1)).is_err());
    recv(&mut peer);
    assert!(matches!(
        recv(&mut peer),
        Message::ProtocolError {
            code: ErrorCode::Shape,
            ..
        }
    ));
}

#[test]
fn controller_reports_solver_failure() {
    // Infeasible: the battery state is outside its capacity.
    let model = house(5, &[1.0; 48], 1.0);
    let (mut iso, ctl) = channel_pair();
    let worker = std::thread::spawn(move || run_controller(ctl, &model, 24));
    assert!(matches!(recv(&mut iso), Message::GetSigma { controller_id: 5, .. }));
    let mut req = request(1);
    req.state.storage = vec![99.0];
    req.band = None;
    iso.send(&Message::SigmaReply {
        step: 0,
        iteration: 1,
        state: req.state.to_values(),
        sigma: vec![0.0; 24],
        committed: None,
        half_width: None,
        band_steps: 0,
        global_limit: None,
        anchor: None,
    })
    .unwrap();
    assert!(matches!(
        recv(&mut iso),
        Message::ProtocolError {
            code: ErrorCode::Solver,
            ..
        }
    ));
    assert!(worker.join().unwrap().is_err());
}

#[test]
fn controller_stops_on_round_status() {
    let model = house(5, &[1.0; 48], 1.0);
    let (mut iso, ctl) = channel_pair();
    let worker = std::thread::spawn(move || run_controller(ctl, &model, 24));
    recv(&mut iso);
    iso.send(&Message::RoundStatus {
        converged: true,
        iteration: 3,
    })
    .unwrap();
    let summary = worker.join().unwrap().unwrap();
    assert_eq!(summary.solves, 0);
    assert!(summary.last_round_converged);
    assert_eq!(summary.last_round_iterations, 3);
}
