use std::collections::BTreeMap;
use std::ffi::CString;
use std::ptr;

use crossvote::neural::{save_checkpoint, Mlp};
use crossvote::policy::Controller;
use crossvote::rewards::RewardKind;
use crossvote::sim::{init_scenario, ScenarioConfig};
use crossvote::voting::VoteRule;
use crossvote_ffi::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    let n = unsafe { cv_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

fn scenario(n_ns: u32, n_we: u32, seed: u64) -> CvScenario {
    let mut cfg = std::mem::MaybeUninit::<CvScenario>::uninit();
    assert_eq!(unsafe { cv_scenario_default(cfg.as_mut_ptr()) }, CvStatus::Ok);
    let mut cfg = unsafe { cfg.assume_init() };
    cfg.n_ns = n_ns;
    cfg.n_we = n_we;
    cfg.seed = seed;
    cfg
}

fn new_world(cfg: &CvScenario) -> *mut CvWorld {
    let mut w = ptr::null_mut();
    assert_eq!(unsafe { cv_world_new(cfg, &mut w) }, CvStatus::Ok);
    assert!(!w.is_null());
    w
}

#[test]
fn world_matches_library() {
    let cfg = scenario(22, 11, 5);
    let w = new_world(&cfg);
    let mut lib = init_scenario(&ScenarioConfig::default().with_demand(22, 11).with_seed(5)).unwrap();
    unsafe {
        let mut dim = 0;
        assert_eq!(cv_world_obs_dim(w, &mut dim), CvStatus::Ok);
        assert_eq!(dim, 6);
        assert_eq!(cv_world_set_phase(w, CV_PHASE_WE_GREEN), CvStatus::Ok);
        lib.set_phase(crossvote::sim::Phase::WeGreen);
        for _ in 0..40 {
            assert_eq!(cv_world_tick(w), CvStatus::Ok);
            lib.tick();
        }
        let mut obs = [0.0; 6];
        assert_eq!(cv_world_observe(w, obs.as_mut_ptr(), 6), CvStatus::Ok);
        assert_eq!(obs.as_slice(), lib.observe().as_slice());
        let mut tally = CvTally::default();
        assert_eq!(cv_world_poll_voters(w, &mut tally), CvStatus::Ok);
        let t = lib.poll_voters();
        assert_eq!((tally.votes_stops, tally.votes_wait), (t.votes_stops, t.votes_wait));
        let mut ev = CvIntervalTotals::default();
        assert_eq!(cv_world_drain(w, &mut ev), CvStatus::Ok);
        let e = lib.drain_interval_events();
        assert_eq!((ev.new_stops, ev.stopped_seconds), (e.new_stops, e.stopped_seconds));
        let (mut phase, mut clock) = (9, 0);
        assert_eq!(cv_world_state(w, &mut phase, &mut clock), CvStatus::Ok);
        assert_eq!((phase, clock), (CV_PHASE_WE_GREEN, 40));
        cv_world_free(w);
    }
}

#[test]
fn bad_arguments_report_codes() {
    let cfg = scenario(11, 6, 1);
    let w = new_world(&cfg);
    unsafe {
        let mut obs = [0.0; 4];
        assert_eq!(cv_world_observe(w, obs.as_mut_ptr(), 4), CvStatus::DimensionMismatch);
        assert!(last_error().contains("expected 6"));
        assert_eq!(cv_world_set_phase(w, 7), CvStatus::InvalidArgument);
        assert_eq!(cv_world_tick(ptr::null_mut()), CvStatus::NullPointer);
        cv_world_free(w);
        cv_world_free(ptr::null_mut());

        let crowded = scenario(100, 6, 1);
        let mut out = ptr::null_mut();
        assert_eq!(cv_world_new(&crowded, &mut out), CvStatus::InvalidArgument);
        assert!(out.is_null());
    }
}

#[test]
fn checkpoint_loading_and_forward() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = Mlp::random(&[6, 8, 2], &mut rng).unwrap();
    let path = dir.path().join("stops.ckpt");
    save_checkpoint(&net, &path).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    unsafe {
        let mut h = ptr::null_mut();
        assert_eq!(cv_net_load(cpath.as_ptr(), &mut h), CvStatus::Ok);
        let (mut i, mut o) = (0, 0);
        assert_eq!(cv_net_dims(h, &mut i, &mut o), CvStatus::Ok);
        assert_eq!((i, o), (6, 2));
        let obs = [0.1, 0.2, 0.0, 0.5, 0.3, 0.9];
        let mut q = [0.0; 2];
        assert_eq!(cv_net_forward(h, obs.as_ptr(), 6, q.as_mut_ptr(), 2), CvStatus::Ok);
        assert_eq!(q.to_vec(), net.forward(&obs).unwrap().values);
        assert_eq!(
            cv_net_forward(h, obs.as_ptr(), 5, q.as_mut_ptr(), 2),
            CvStatus::DimensionMismatch
        );
        cv_net_free(h);

        let missing = CString::new(dir.path().join("wait.ckpt").to_str().unwrap()).unwrap();
        assert_eq!(cv_net_load(missing.as_ptr(), &mut h), CvStatus::MissingFile);
        assert!(h.is_null());
        assert!(last_error().contains("wait.ckpt"));

        std::fs::write(&path, b"XVOTEQN\0junk").unwrap();
        assert_eq!(cv_net_load(cpath.as_ptr(), &mut h), CvStatus::CorruptCheckpoint);
    }
}

#[test]
fn voting_and_integration() {
    unsafe {
        let (mut ws, mut ww) = (0.0, 0.0);
        let tally = CvTally {
            votes_stops: 3,
            votes_wait: 1,
        };
        assert_eq!(
            cv_vote_weights(CV_RULE_PROPORTIONAL, tally, &mut ws, &mut ww),
            CvStatus::Ok
        );
        assert_eq!((ws, ww), (0.75, 0.25));
        assert_eq!(cv_vote_weights(CV_RULE_MAJORITY, tally, &mut ws, &mut ww), CvStatus::Ok);
        assert_eq!((ws, ww), (1.0, 0.0));
        assert_eq!(cv_vote_weights(5, tally, &mut ws, &mut ww), CvStatus::InvalidArgument);

        let q = [1.0, 0.0];
        let mut n = [0.0; 2];
        assert_eq!(cv_normalize_q(q.as_ptr(), 2, n.as_mut_ptr()), CvStatus::Ok);
        let e = std::f64::consts::E;
        assert!((n[0] - e / (e + 1.0)).abs() < 1e-15);
        assert_eq!(cv_normalize_q(ptr::null(), 2, n.as_mut_ptr()), CvStatus::NullPointer);

        let (a, b) = ([0.7, 0.3], [0.2, 0.8]);
        let mut qp = [0.0; 2];
        let mut action = 9;
        let st = cv_integrate_select(a.as_ptr(), b.as_ptr(), 2, 0.5, 0.5, 0, qp.as_mut_ptr(), &mut action);
        assert_eq!(st, CvStatus::Ok);
        assert_eq!(action, 1);
        assert!((qp[0] - 0.45).abs() < 1e-15 && (qp[1] - 0.55).abs() < 1e-15);
        let tie = [0.5, 0.5];
        cv_integrate_select(tie.as_ptr(), tie.as_ptr(), 2, 0.5, 0.5, 1, qp.as_mut_ptr(), &mut action);
        assert_eq!(action, 1);
    }
}

#[test]
fn controller_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let stops = Mlp::random(&[6, 16, 2], &mut rng).unwrap();
    let wait = Mlp::random(&[6, 16, 2], &mut rng).unwrap();
    save_checkpoint(&stops, &dir.path().join("s.ckpt")).unwrap();
    save_checkpoint(&wait, &dir.path().join("w.ckpt")).unwrap();
    let lib = Controller::multi(
        BTreeMap::from([(RewardKind::Stops, stops), (RewardKind::Wait, wait)]),
        VoteRule::Proportional,
    )
    .unwrap();
    let cfg = scenario(22, 22, 2);
    let w = new_world(&cfg);
    let mut world = init_scenario(&ScenarioConfig::default().with_demand(22, 22).with_seed(2)).unwrap();
    unsafe {
        let load = |name: &str| {
            let p = CString::new(dir.path().join(name).to_str().unwrap()).unwrap();
            let mut h = ptr::null_mut();
            assert_eq!(cv_net_load(p.as_ptr(), &mut h), CvStatus::Ok);
            h
        };
        let (hs, hw) = (load("s.ckpt"), load("w.ckpt"));
        let mut c = ptr::null_mut();
        assert_eq!(
            cv_controller_new_multi(hs, hw, CV_RULE_PROPORTIONAL, &mut c),
            CvStatus::Ok
        );
        cv_net_free(hs);
        cv_net_free(hw);
        for _ in 0..60 {
            let mut d = CvDecision::default();
            assert_eq!(cv_controller_decide(c, w, &mut d), CvStatus::Ok);
            let expect = lib.decide_world(&world).unwrap();
            assert_eq!(d.action as usize, expect.action);
            assert_eq!(d.q_integrated.to_vec(), expect.integrated.values);
            assert_eq!(cv_world_set_phase(w, d.action), CvStatus::Ok);
            world.set_phase(crossvote::sim::Phase::from_action(expect.action));
            for _ in 0..5 {
                cv_world_tick(w);
                world.tick();
            }
        }
        cv_controller_free(c);
        cv_world_free(w);
    }
}
