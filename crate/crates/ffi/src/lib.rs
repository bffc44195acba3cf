//! C ABI over the crossvote simulator, Q-networks and the voting controller.
//!
//! Objects are opaque handles created by `cv_*_new`/`cv_*_load` and released
//! with the matching `cv_*_free`. Every fallible call returns a [`CvStatus`];
//! on failure a message is kept per thread and can be read with
//! [`cv_last_error`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use crossvote::neural::{load_checkpoint, Mlp};
use crossvote::policy::{integrate, normalize_q, select_action, Controller, NormalizedQ, QVector};
use crossvote::rewards::RewardKind;
use crossvote::sim::{init_scenario, Phase, ScenarioConfig, SimWorld, VoteTally};
use crossvote::voting::{VoteRule, Weights};
use crossvote::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    MissingFile = 4,
    CorruptCheckpoint = 5,
    Io = 6,
    Numeric = 7,
    Panic = 8,
}

/// Scenario parameters, mirroring the library's scenario config.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CvScenario {
    pub n_ns: u32,
    pub n_we: u32,
    pub horizon_steps: u32,
    pub t_act: u32,
    pub loop_length_m: f64,
    pub approach_length_m: f64,
    pub n_segments: u32,
    pub v_max_mps: f64,
    pub accel_mps2: f64,
    pub decel_mps2: f64,
    pub vehicle_length_m: f64,
    pub min_gap_m: f64,
    pub stop_speed_threshold_mps: f64,
    pub preference_split: f64,
    pub seed: u64,
}

impl From<&ScenarioConfig> for CvScenario {
    fn from(c: &ScenarioConfig) -> Self {
        Self {
            n_ns: c.n_ns as u32,
            n_we: c.n_we as u32,
            horizon_steps: c.horizon_steps,
            t_act: c.t_act,
            loop_length_m: c.loop_length_m,
            approach_length_m: c.approach_length_m,
            n_segments: c.n_segments as u32,
            v_max_mps: c.v_max_mps,
            accel_mps2: c.accel_mps2,
            decel_mps2: c.decel_mps2,
            vehicle_length_m: c.vehicle_length_m,
            min_gap_m: c.min_gap_m,
            stop_speed_threshold_mps: c.stop_speed_threshold_mps,
            preference_split: c.preference_split,
            seed: c.seed,
        }
    }
}

impl From<&CvScenario> for ScenarioConfig {
    fn from(c: &CvScenario) -> Self {
        Self {
            n_ns: c.n_ns as usize,
            n_we: c.n_we as usize,
            horizon_steps: c.horizon_steps,
            t_act: c.t_act,
            loop_length_m: c.loop_length_m,
            approach_length_m: c.approach_length_m,
            n_segments: c.n_segments as usize,
            v_max_mps: c.v_max_mps,
            accel_mps2: c.accel_mps2,
            decel_mps2: c.decel_mps2,
            vehicle_length_m: c.vehicle_length_m,
            min_gap_m: c.min_gap_m,
            stop_speed_threshold_mps: c.stop_speed_threshold_mps,
            preference_split: c.preference_split,
            seed: c.seed,
        }
    }
}

/// Stop events and stopped seconds since the previous drain.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CvIntervalTotals {
    pub new_stops: u32,
    pub stopped_seconds: f64,
}

/// Votes of the vehicles currently on the approaches.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CvTally {
    pub votes_stops: u32,
    pub votes_wait: u32,
}

/// Outcome of one controller decision.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CvDecision {
    pub action: u32,
    pub w_stops: f64,
    pub w_wait: f64,
    pub q_integrated: [f64; 2],
}

/// Simulation world handle.
pub struct CvWorld(SimWorld);

/// Q-network handle.
pub struct CvNet(Mlp);

/// Frozen controller handle.
pub struct CvController(Controller);

pub const CV_PHASE_NS_GREEN: u32 = 0;
pub const CV_PHASE_WE_GREEN: u32 = 1;
pub const CV_RULE_MAJORITY: u32 = 0;
pub const CV_RULE_PROPORTIONAL: u32 = 1;

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn remember(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &Error) -> CvStatus {
    match err {
        Error::DimensionMismatch { .. } => CvStatus::DimensionMismatch,
        Error::MissingFile(_) => CvStatus::MissingFile,
        Error::CorruptCheckpoint(_) | Error::CheckpointVersion { .. } => CvStatus::CorruptCheckpoint,
        Error::Io(_) => CvStatus::Io,
        Error::NonFinite | Error::NonPositiveNorm(_) => CvStatus::Numeric,
        _ => CvStatus::InvalidArgument,
    }
}

struct Fail(CvStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null() -> Fail {
    Fail(CvStatus::NullPointer, "null pointer argument".into())
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(CvStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CvStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            remember(msg);
            status
        }
        Err(_) => {
            remember("internal panic".into());
            CvStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(null)
}

unsafe fn as_mut<'a, T>(p: *mut T) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(null)
}

unsafe fn slice<'a>(p: *const f64, len: usize) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn rule_of(rule: u32) -> Result<VoteRule, Fail> {
    match rule {
        CV_RULE_MAJORITY => Ok(VoteRule::Majority),
        CV_RULE_PROPORTIONAL => Ok(VoteRule::Proportional),
        r => Err(invalid(format!("unknown vote rule {r}"))),
    }
}

fn phase_of(phase: u32) -> Result<Phase, Fail> {
    match phase {
        CV_PHASE_NS_GREEN => Ok(Phase::NsGreen),
        CV_PHASE_WE_GREEN => Ok(Phase::WeGreen),
        p => Err(invalid(format!("unknown phase {p}"))),
    }
}

/// Copy the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to fit). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn cv_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Fill `out` with the default scenario.
///
/// # Safety
/// `out` must be null or point to writable memory for one `CvScenario`.
#[no_mangle]
pub unsafe extern "C" fn cv_scenario_default(out: *mut CvScenario) -> CvStatus {
    guard(|| {
        *as_mut(out)? = CvScenario::from(&ScenarioConfig::default());
        Ok(())
    })
}

/// Build a world from `cfg`. On success `*out` owns a new handle.
///
/// # Safety
/// `cfg` must point to a valid `CvScenario`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cv_world_new(cfg: *const CvScenario, out: *mut *mut CvWorld) -> CvStatus {
    guard(|| {
        let cfg = ScenarioConfig::from(as_ref(cfg)?);
        let out = as_mut(out)?;
        *out = ptr::null_mut();
        let world = init_scenario(&cfg)?;
        *out = Box::into_raw(Box::new(CvWorld(world)));
        Ok(())
    })
}

/// Release a world. Null is ignored.
///
/// # Safety
/// `world` must be null or a handle from `cv_world_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cv_world_free(world: *mut CvWorld) {
    if !world.is_null() {
        drop(Box::from_raw(world));
    }
}

/// Advance the world by one second.
///
/// # Safety
/// `world` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cv_world_tick(world: *mut CvWorld) -> CvStatus {
    guard(|| {
        as_mut(world)?.0.tick();
        Ok(())
    })
}

/// Set the phase (`CV_PHASE_*`) used from the next tick on.
///
/// # Safety
/// `world` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cv_world_set_phase(world: *mut CvWorld, phase: u32) -> CvStatus {
    guard(|| {
        let phase = phase_of(phase)?;
        as_mut(world)?.0.set_phase(phase);
        Ok(())
    })
}

/// Current phase and clock.
///
/// # Safety
/// `world` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn cv_world_state(world: *const CvWorld, phase: *mut u32, clock: *mut u64) -> CvStatus {
    guard(|| {
        let w = &as_ref(world)?.0;
        *as_mut(phase)? = w.phase().action() as u32;
        *as_mut(clock)? = w.clock();
        Ok(())
    })
}

/// Length of the observation vector.
///
/// # Safety
/// `world` must be a live handle; `dim` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cv_world_obs_dim(world: *const CvWorld, dim: *mut usize) -> CvStatus {
    guard(|| {
        *as_mut(dim)? = as_ref(world)?.0.config().obs_dim();
        Ok(())
    })
}

/// Write the occupancy observation into `out[0..len]`; `len` must equal the
/// observation dimension.
///
/// # Safety
/// `world` must be a live handle; `out` must be valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cv_world_observe(world: *const CvWorld, out: *mut f64, len: usize) -> CvStatus {
    guard(|| {
        let obs = as_ref(world)?.0.observe();
        let v = obs.as_slice();
        if v.len() != len {
            return Err(Error::DimensionMismatch {
                expected: v.len(),
                got: len,
            }
            .into());
        }
        slice_mut(out, len)?.copy_from_slice(v);
        Ok(())
    })
}

/// Tally the preferences of the vehicles on the approaches.
///
/// # Safety
/// `world` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cv_world_poll_voters(world: *const CvWorld, out: *mut CvTally) -> CvStatus {
    guard(|| {
        let t = as_ref(world)?.0.poll_voters();
        *as_mut(out)? = CvTally {
            votes_stops: t.votes_stops,
            votes_wait: t.votes_wait,
        };
        Ok(())
    })
}

/// Return and reset the stop and wait accumulators.
///
/// # Safety
/// `world` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cv_world_drain(world: *mut CvWorld, out: *mut CvIntervalTotals) -> CvStatus {
    guard(|| {
        let out = as_mut(out)?;
        let ev = as_mut(world)?.0.drain_interval_events();
        *out = CvIntervalTotals {
            new_stops: ev.new_stops,
            stopped_seconds: ev.stopped_seconds,
        };
        Ok(())
    })
}

/// Load a checkpoint file. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cv_net_load(path: *const c_char, out: *mut *mut CvNet) -> CvStatus {
    guard(|| {
        if path.is_null() {
            return Err(null());
        }
        let out = as_mut(out)?;
        *out = ptr::null_mut();
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not UTF-8"))?;
        let net = load_checkpoint(Path::new(path))?;
        *out = Box::into_raw(Box::new(CvNet(net)));
        Ok(())
    })
}

/// Release a network. Null is ignored.
///
/// # Safety
/// `net` must be null or a handle from `cv_net_load` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cv_net_free(net: *mut CvNet) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Input and output widths of a network.
///
/// # Safety
/// `net` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn cv_net_dims(net: *const CvNet, input: *mut usize, output: *mut usize) -> CvStatus {
    guard(|| {
        let n = &as_ref(net)?.0;
        *as_mut(input)? = n.input_dim();
        *as_mut(output)? = n.output_dim();
        Ok(())
    })
}

/// Q-values of `obs[0..obs_len]` into `q[0..q_len]`.
///
/// # Safety
/// `net` must be a live handle; the buffers must be valid for their lengths.
#[no_mangle]
pub unsafe extern "C" fn cv_net_forward(
    net: *const CvNet,
    obs: *const f64,
    obs_len: usize,
    q: *mut f64,
    q_len: usize,
) -> CvStatus {
    guard(|| {
        let n = &as_ref(net)?.0;
        let values = n.forward(slice(obs, obs_len)?)?.values;
        if values.len() != q_len {
            return Err(Error::DimensionMismatch {
                expected: values.len(),
                got: q_len,
            }
            .into());
        }
        slice_mut(q, q_len)?.copy_from_slice(&values);
        Ok(())
    })
}

/// Weights of the stops and wait objectives under a vote rule (`CV_RULE_*`).
///
/// # Safety
/// The out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn cv_vote_weights(rule: u32, tally: CvTally, w_stops: *mut f64, w_wait: *mut f64) -> CvStatus {
    guard(|| {
        let w = rule_of(rule)?.weights(&VoteTally::new(tally.votes_stops, tally.votes_wait));
        *as_mut(w_stops)? = w.stops();
        *as_mut(w_wait)? = w.wait();
        Ok(())
    })
}

/// Softmax of `q[0..len]` into `out[0..len]`.
///
/// # Safety
/// Both buffers must be valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cv_normalize_q(q: *const f64, len: usize, out: *mut f64) -> CvStatus {
    guard(|| {
        let n = normalize_q(&QVector::new(slice(q, len)?.to_vec()))?;
        slice_mut(out, len)?.copy_from_slice(&n.values);
        Ok(())
    })
}

/// Weighted sum of two normalized Q-vectors followed by argmax, with ties
/// resolved to `incumbent`. `integrated` receives the fused values.
///
/// # Safety
/// `q_stops`, `q_wait` and `integrated` must be valid for `len` doubles;
/// `action` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cv_integrate_select(
    q_stops: *const f64,
    q_wait: *const f64,
    len: usize,
    w_stops: f64,
    w_wait: f64,
    incumbent: u32,
    integrated: *mut f64,
    action: *mut u32,
) -> CvStatus {
    guard(|| {
        let qs = BTreeMap::from([
            (
                RewardKind::Stops,
                NormalizedQ {
                    values: slice(q_stops, len)?.to_vec(),
                },
            ),
            (
                RewardKind::Wait,
                NormalizedQ {
                    values: slice(q_wait, len)?.to_vec(),
                },
            ),
        ]);
        let qp = integrate(&qs, &Weights::pair(w_stops, w_wait))?;
        let a = select_action(&qp, incumbent as usize)?;
        slice_mut(integrated, len)?.copy_from_slice(&qp.values);
        *as_mut(action)? = a as u32;
        Ok(())
    })
}

/// Build a voting controller over a stops and a wait network. The networks
/// are copied; the caller keeps ownership of its handles.
///
/// # Safety
/// `stops` and `wait` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cv_controller_new_multi(
    stops: *const CvNet,
    wait: *const CvNet,
    rule: u32,
    out: *mut *mut CvController,
) -> CvStatus {
    guard(|| {
        let out = as_mut(out)?;
        *out = ptr::null_mut();
        let nets = BTreeMap::from([
            (RewardKind::Stops, as_ref(stops)?.0.clone()),
            (RewardKind::Wait, as_ref(wait)?.0.clone()),
        ]);
        let c = Controller::multi(nets, rule_of(rule)?)?;
        *out = Box::into_raw(Box::new(CvController(c)));
        Ok(())
    })
}

/// Release a controller. Null is ignored.
///
/// # Safety
/// `c` must be null or a handle from `cv_controller_new_multi` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cv_controller_free(c: *mut CvController) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Observe, poll and decide on `world` without changing it.
///
/// # Safety
/// `c` and `world` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cv_controller_decide(
    c: *const CvController,
    world: *const CvWorld,
    out: *mut CvDecision,
) -> CvStatus {
    guard(|| {
        let d = as_ref(c)?.0.decide_world(&as_ref(world)?.0)?;
        let q = &d.integrated.values;
        if q.len() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                got: q.len(),
            }
            .into());
        }
        *as_mut(out)? = CvDecision {
            action: d.action as u32,
            w_stops: d.weights.get(RewardKind::Stops),
            w_wait: d.weights.get(RewardKind::Wait),
            q_integrated: [q[0], q[1]],
        };
        Ok(())
    })
}
