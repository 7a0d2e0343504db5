//! The ISO side of the sequential-iterative scheme.
//!
//! Within a sweep, controller `i` sees
//! `σ_i^l = Σ_{j<i} û_j^l + Σ_{j>i} û_j^{l−1}`, so updates are Gauss–Seidel
//! style: each controller reacts to the freshest plans of those visited
//! before it. Sweeps repeat until the aggregate moves by less than `ε` in
//! the ∞-norm. On the first sweep, `û_j^0` is the plan `j` submitted at the
//! previous time step, shifted to the new start step.
//!
//! Each request also carries the controller's own `û_i^{l−1}` as an anchor
//! (absent only on the very first sweep of the first round). The MPC charges a
//! small L1 cost for moving away from it, which keeps a controller on its
//! current plan when an alternative is no cheaper and so stops sweeps from
//! cycling between equal-cost plans.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mpc::{solve_mpc, ControllerId, ControllerModel, MpcError, MpcInput, PlantState};
use crate::profile::{Band, Profile, ProfileError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HandleError {
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error("transport: {0}")]
    Transport(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoordError {
    #[error("registration: {0}")]
    Registration(String),
    #[error("round at step {step} aborted in iteration {iteration} by controller {controller}: {source}")]
    Aborted {
        step: usize,
        iteration: usize,
        controller: ControllerId,
        source: HandleError,
    },
    #[error("controller {controller} returned a bad plan: {source}")]
    Shape {
        controller: ControllerId,
        source: ProfileError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceConfig {
    /// kW, threshold on `‖U^l − U^{l−1}‖∞`.
    pub epsilon: f64,
    pub max_iterations: usize,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            max_iterations: 50,
        }
    }
}

impl ConvergenceConfig {
    pub fn validate(&self) -> Result<(), CoordError> {
        if !(self.epsilon > 0.0) {
            return Err(CoordError::Registration(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if self.max_iterations == 0 {
            return Err(CoordError::Registration("max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// What the ISO hands a controller when granting it the solve token.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveRequest {
    pub k0: usize,
    pub iteration: usize,
    pub state: PlantState,
    pub sigma: Profile,
    pub band: Option<Band>,
    pub band_steps: usize,
    pub global_limit: Option<f64>,
    pub anchor: Option<Profile>,
}

impl SolveRequest {
    pub fn mpc_input(&self) -> MpcInput {
        MpcInput {
            k0: self.k0,
            x0: self.state.clone(),
            sigma: self.sigma.clone(),
            band: self.band.clone(),
            band_steps: self.band_steps,
            global_limit: self.global_limit,
            anchor: self.anchor.clone(),
        }
    }
}

/// A controller's answer: its predicted net load and the set points it will
/// apply at the first step (see [`crate::mpc::Setpoints::to_values`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Submission {
    pub profile: Profile,
    pub first_move: Vec<f64>,
}

/// Anything that can answer a solve request: an in-process model, or a
/// remote process behind a connection.
pub trait ControllerHandle {
    fn id(&self) -> ControllerId;
    fn solve(&mut self, request: &SolveRequest) -> Result<Submission, HandleError>;
}

/// In-process controller.
#[derive(Debug, Clone)]
pub struct LocalController {
    pub model: ControllerModel,
}

impl LocalController {
    pub fn new(model: ControllerModel) -> Self {
        Self { model }
    }
}

impl ControllerHandle for LocalController {
    fn id(&self) -> ControllerId {
        self.model.id
    }

    fn solve(&mut self, request: &SolveRequest) -> Result<Submission, HandleError> {
        let plan = solve_mpc(&self.model, &request.mpc_input())?;
        Ok(Submission {
            first_move: plan.first_setpoints().to_values(),
            profile: plan.net_load,
        })
    }
}

/// Per-round inputs that do not depend on the iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundContext {
    pub k0: usize,
    /// Measured state per controller, in registration order.
    pub states: Vec<PlantState>,
    pub band: Option<Band>,
    pub band_steps: usize,
    pub global_limit: Option<f64>,
}

/// Plans held by the ISO.
///
/// Invariant: `ids` is strictly ascending and every stored profile has
/// `horizon` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct IsoState {
    ids: Vec<ControllerId>,
    horizon: usize,
    /// `û_j^{l−1}`; at the start of a round, the shifted previous-step plans.
    previous: Vec<Profile>,
    /// `û_j^l` for controllers already visited in the current sweep.
    current: Vec<Option<Profile>>,
    /// False while `previous` is the zero placeholder of the first round.
    seeded: bool,
    iteration: usize,
    aggregate_history: Vec<Profile>,
    /// Final plans of the last round and its start step.
    last_round: Option<(usize, Vec<Profile>)>,
}

impl IsoState {
    /// Register controllers; they are visited in ascending id order.
    pub fn new(mut ids: Vec<ControllerId>, horizon: usize) -> Result<Self, CoordError> {
        if ids.is_empty() {
            return Err(CoordError::Registration("no controllers registered".into()));
        }
        if horizon == 0 {
            return Err(CoordError::Registration("horizon must be >= 1".into()));
        }
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(CoordError::Registration(format!(
                "controller {} registered twice",
                w[0]
            )));
        }
        let n = ids.len();
        Ok(Self {
            ids,
            horizon,
            previous: vec![Profile::zeros(horizon); n],
            current: vec![None; n],
            seeded: false,
            iteration: 0,
            aggregate_history: Vec::new(),
            last_round: None,
        })
    }

    pub fn ids(&self) -> &[ControllerId] {
        &self.ids
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn aggregate_history(&self) -> &[Profile] {
        &self.aggregate_history
    }

    /// Set `û_j^{l−1}` directly. Used to seed a round by hand.
    pub fn set_previous(&mut self, i: usize, plan: Profile) -> Result<(), CoordError> {
        plan.check_len(self.horizon).map_err(|source| CoordError::Shape {
            controller: self.ids[i],
            source,
        })?;
        self.previous[i] = plan;
        self.seeded = true;
        Ok(())
    }

    /// Store `û_i^l`.
    pub fn set_current(&mut self, i: usize, plan: Profile) -> Result<(), CoordError> {
        plan.check_len(self.horizon).map_err(|source| CoordError::Shape {
            controller: self.ids[i],
            source,
        })?;
        self.current[i] = Some(plan);
        Ok(())
    }

    /// Prepare a round starting at `k0`: seed `û^0` from the last round's
    /// plans shifted forward, or zeros on the first round.
    pub fn begin_round(&mut self, k0: usize) {
        (self.previous, self.seeded) = match &self.last_round {
            Some((k_prev, plans)) if k0 >= *k_prev => (plans.iter().map(|p| p.shifted(k0 - k_prev)).collect(), true),
            _ => (vec![Profile::zeros(self.horizon); self.ids.len()], false),
        };
        self.current = vec![None; self.ids.len()];
        self.iteration = 0;
        self.aggregate_history.clear();
    }

    fn begin_sweep(&mut self) {
        self.iteration += 1;
        self.current = vec![None; self.ids.len()];
    }

    /// Close the sweep: `U^l = Σ_j û_j^l`, and `û^l` becomes `û^{l−1}`.
    fn end_sweep(&mut self) -> Profile {
        let plans: Vec<Profile> = self
            .current
            .iter_mut()
            .map(|p| p.take().expect("every controller visited in the sweep"))
            .collect();
        let u = crate::profile::aggregate_n(&plans, self.horizon).expect("plans share the horizon");
        self.previous = plans;
        self.seeded = true;
        self.aggregate_history.push(u.clone());
        u
    }

    /// Controller `i`'s own `û_i^{l−1}`, if one exists yet.
    pub fn anchor_for(&self, i: usize) -> Option<Profile> {
        self.seeded.then(|| self.previous[i].clone())
    }

    fn end_round(&mut self, k0: usize) {
        self.last_round = Some((k0, self.previous.clone()));
    }
}

/// `σ_i^l = Σ_{j<i} û_j^l + Σ_{j>i} û_j^{l−1}`, where `i` is the position
/// in registration order.
pub fn sigma_for(state: &IsoState, i: usize) -> Result<Profile, CoordError> {
    if i >= state.ids.len() {
        return Err(CoordError::Registration(format!(
            "controller index {i} out of range for {} controllers",
            state.ids.len()
        )));
    }
    let mut sigma = vec![0.0; state.horizon];
    for j in 0..state.ids.len() {
        let plan = match j.cmp(&i) {
            std::cmp::Ordering::Less => state.current[j].as_ref().ok_or_else(|| {
                CoordError::Registration(format!(
                    "controller {} has no plan for iteration {}",
                    state.ids[j], state.iteration
                ))
            })?,
            std::cmp::Ordering::Equal => continue,
            std::cmp::Ordering::Greater => &state.previous[j],
        };
        for (s, v) in sigma.iter_mut().zip(plan.values()) {
            *s += v;
        }
    }
    Ok(Profile::new(sigma).expect("sums of finite plans are finite"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundResult {
    pub k0: usize,
    /// Final plans in registration order.
    pub plans: Vec<Profile>,
    /// First-step set points per controller, from the final sweep.
    pub first_moves: Vec<Vec<f64>>,
    pub iterations_used: usize,
    pub converged: bool,
    /// `U^l` of the final sweep.
    pub aggregate: Profile,
    /// `‖U^l − U^{l−1}‖∞` at the final sweep.
    pub final_change: f64,
}

fn check_handles(handles: &[&mut dyn ControllerHandle], state: &IsoState) -> Result<(), CoordError> {
    let ids: Vec<ControllerId> = handles.iter().map(|h| h.id()).collect();
    if ids != state.ids {
        return Err(CoordError::Registration(format!(
            "handles {ids:?} do not match registered controllers {:?}",
            state.ids
        )));
    }
    Ok(())
}

/// Run sweeps until the aggregate settles or the iteration budget is spent.
///
/// `handles` must be in registration (ascending id) order. Non-convergence
/// is reported through [`RoundResult::converged`], not as an error.
pub fn run_round(
    handles: &mut [&mut dyn ControllerHandle],
    state: &mut IsoState,
    cfg: &ConvergenceConfig,
    ctx: &RoundContext,
) -> Result<RoundResult, CoordError> {
    cfg.validate()?;
    check_handles(handles, state)?;
    if ctx.states.len() != handles.len() {
        return Err(CoordError::Registration(format!(
            "{} plant states for {} controllers",
            ctx.states.len(),
            handles.len()
        )));
    }
    state.begin_round(ctx.k0);
    let mut u_prev = Profile::zeros(state.horizon);
    let mut first_moves = vec![Vec::new(); handles.len()];
    loop {
        state.begin_sweep();
        let l = state.iteration;
        for (i, handle) in handles.iter_mut().enumerate() {
            let request = SolveRequest {
                k0: ctx.k0,
                iteration: l,
                state: ctx.states[i].clone(),
                sigma: sigma_for(state, i)?,
                band: ctx.band.clone(),
                band_steps: ctx.band_steps,
                global_limit: ctx.global_limit,
                anchor: state.anchor_for(i),
            };
            let sub = handle.solve(&request).map_err(|source| CoordError::Aborted {
                step: ctx.k0,
                iteration: l,
                controller: state.ids[i],
                source,
            })?;
            state.set_current(i, sub.profile)?;
            first_moves[i] = sub.first_move;
        }
        let u = state.end_sweep();
        let change = u.max_abs_diff(&u_prev).expect("same horizon");
        log::trace!("step {} sweep {l}: change {change:.4} kW", ctx.k0);
        let converged = change < cfg.epsilon;
        if converged || l >= cfg.max_iterations {
            state.end_round(ctx.k0);
            if !converged {
                log::warn!(
                    "step {}: no convergence after {l} sweeps (last change {change:.4} kW)",
                    ctx.k0
                );
            }
            return Ok(RoundResult {
                k0: ctx.k0,
                plans: state.previous.clone(),
                first_moves,
                iterations_used: l,
                converged,
                aggregate: u,
                final_change: change,
            });
        }
        u_prev = u;
    }
}

/// Uncoordinated baseline: each controller solves once with `σ = 0`, no
/// band and no global limit.
pub fn run_local(
    handles: &mut [&mut dyn ControllerHandle],
    state: &mut IsoState,
    k0: usize,
    states: &[PlantState],
) -> Result<RoundResult, CoordError> {
    let ctx = RoundContext {
        k0,
        states: states.to_vec(),
        band: None,
        band_steps: 0,
        global_limit: None,
    };
    check_handles(handles, state)?;
    state.begin_round(k0);
    state.begin_sweep();
    let mut first_moves = Vec::with_capacity(handles.len());
    for (i, handle) in handles.iter_mut().enumerate() {
        let request = SolveRequest {
            k0,
            iteration: 1,
            state: ctx.states[i].clone(),
            sigma: Profile::zeros(state.horizon),
            band: None,
            band_steps: 0,
            global_limit: None,
            anchor: None,
        };
        let sub = handle.solve(&request).map_err(|source| CoordError::Aborted {
            step: k0,
            iteration: 1,
            controller: state.ids[i],
            source,
        })?;
        state.set_current(i, sub.profile)?;
        first_moves.push(sub.first_move);
    }
    let u = state.end_sweep();
    state.end_round(k0);
    Ok(RoundResult {
        k0,
        plans: state.previous.clone(),
        first_moves,
        iterations_used: 1,
        converged: true,
        aggregate: u,
        final_change: 0.0,
    })
}

/// Freeze a round's aggregate as the committed profile.
pub fn commit_day_ahead(round: &RoundResult, half_width: f64) -> Result<Band, ProfileError> {
    Band::new(round.aggregate.clone(), half_width)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(v: &[f64]) -> Profile {
        Profile::new(v.to_vec()).unwrap()
    }

    #[test]
    fn sigma_three_controllers() {
        let mut s = IsoState::new(vec![1, 2, 3], 2).unwrap();
        s.begin_round(0);
        s.begin_sweep();
        s.set_previous(0, p(&[9.0, 9.0])).unwrap();
        s.set_previous(2, p(&[3.0, 3.0])).unwrap();
        s.set_current(0, p(&[1.0, 1.0])).unwrap();
        assert_eq!(sigma_for(&s, 1).unwrap(), p(&[4.0, 4.0]));
    }

    #[test]
    fn sigma_single_controller_is_zero() {
        let mut s = IsoState::new(vec![7], 3).unwrap();
        s.begin_round(0);
        s.begin_sweep();
        assert_eq!(sigma_for(&s, 0).unwrap(), Profile::zeros(3));
    }

    #[test]
    fn sigma_requires_earlier_plans() {
        let mut s = IsoState::new(vec![1, 2], 1).unwrap();
        s.begin_round(0);
        s.begin_sweep();
        assert!(matches!(sigma_for(&s, 1), Err(CoordError::Registration(_))));
    }

    #[test]
    fn registration_sorted_and_unique() {
        let s = IsoState::new(vec![3, 1, 2], 4).unwrap();
        assert_eq!(s.ids(), &[1, 2, 3]);
        assert!(IsoState::new(vec![1, 1], 4).is_err());
        assert!(IsoState::new(vec![], 4).is_err());
    }

    #[test]
    fn commit_band_examples() {
        let round = RoundResult {
            k0: 0,
            plans: vec![],
            first_moves: vec![],
            iterations_used: 2,
            converged: true,
            aggregate: Profile::constant(3, 5.0),
            final_change: 0.0,
        };
        let band = commit_day_ahead(&round, 2.0).unwrap();
        assert_eq!((band.lower(1), band.upper(1)), (3.0, 7.0));
        let tight = commit_day_ahead(&round, 0.0).unwrap();
        assert_eq!((tight.lower(0), tight.upper(0)), (5.0, 5.0));
    }
}
