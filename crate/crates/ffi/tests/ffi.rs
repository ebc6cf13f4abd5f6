use nail_lab_ffi::*;
use std::ffi::CStr;
use std::ptr;

fn last_error() -> String {
    let p = nail_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn chain_round_trip() {
    // two states; action 1 moves to the other state, action 0 stays
    let p = [1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
    let p0 = [1.0, 0.0];
    let mut mdp = ptr::null_mut();
    unsafe {
        assert_eq!(
            nail_mdp_new(p.as_ptr(), p0.as_ptr(), 2, 2, 0.9, &mut mdp),
            NailStatus::Ok
        );
        let (mut s, mut a) = (0, 0);
        assert_eq!(nail_mdp_dims(mdp, &mut s, &mut a), NailStatus::Ok);
        assert_eq!((s, a), (2, 2));

        let mut expert = ptr::null_mut();
        let probs = [0.2, 0.8, 0.9, 0.1];
        assert_eq!(nail_policy_new(probs.as_ptr(), 2, 2, &mut expert), NailStatus::Ok);
        let mut occ = [0.0; 4];
        assert_eq!(nail_occupancy(mdp, expert, occ.as_mut_ptr(), 4), NailStatus::Ok);
        assert!((occ.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let mut trace = ptr::null_mut();
        assert_eq!(
            nail_run(mdp, expert, 50, NailWeighting::Trajectory, &mut trace),
            NailStatus::Ok
        );
        let n = nail_trace_len(trace);
        assert_eq!(n, 51);
        let mut rkl = vec![0.0; n];
        assert_eq!(nail_trace_reverse_kl(trace, rkl.as_mut_ptr(), n), NailStatus::Ok);
        assert!(rkl.windows(2).all(|w| w[1] <= w[0] + 1e-10));
        assert!(rkl[n - 1] < 1e-6);

        let mut last = ptr::null_mut();
        assert_eq!(nail_trace_final_policy(trace, &mut last), NailStatus::Ok);
        let mut kl = f64::NAN;
        assert_eq!(nail_reverse_kl(mdp, last, expert, &mut kl), NailStatus::Ok);
        assert!((kl - rkl[n - 1]).abs() < 1e-12);

        nail_policy_free(last);
        nail_trace_free(trace);
        nail_policy_free(expert);
        nail_mdp_free(mdp);
    }
}

#[test]
fn errors_are_reported_not_raised() {
    unsafe {
        let mut mdp = ptr::null_mut();
        let p = [0.5, 0.4];
        let p0 = [1.0];
        assert_eq!(
            nail_mdp_new(p.as_ptr(), p0.as_ptr(), 1, 2, 0.9, &mut mdp),
            NailStatus::InvalidArgument
        );
        assert!(mdp.is_null());
        assert!(last_error().contains("probability distribution"), "{}", last_error());

        assert_eq!(
            nail_mdp_new(ptr::null(), p0.as_ptr(), 1, 1, 0.9, &mut mdp),
            NailStatus::NullPointer
        );
        assert!(last_error().contains("transition"));

        let g = [1.0];
        assert_eq!(
            nail_mdp_new(g.as_ptr(), p0.as_ptr(), 1, 1, 1.5, &mut mdp),
            NailStatus::InvalidArgument
        );

        let mut grid = ptr::null_mut();
        assert_eq!(nail_mdp_gridworld5(&mut grid), NailStatus::Ok);
        let mut pi = ptr::null_mut();
        let reward = vec![0.0; 100];
        assert_eq!(nail_expert_policy(grid, reward.as_ptr(), &mut pi), NailStatus::Ok);
        // wrong buffer length
        let mut small = [0.0; 3];
        assert_eq!(
            nail_policy_probs(pi, small.as_mut_ptr(), 3),
            NailStatus::InvalidArgument
        );
        let mut full = vec![0.0; 100];
        assert_eq!(nail_policy_probs(pi, full.as_mut_ptr(), 100), NailStatus::Ok);
        // zero reward: the soft-optimal policy is uniform
        assert!(full.iter().all(|&x| (x - 0.25).abs() < 1e-9));
        assert_eq!(nail_trace_len(ptr::null()), 0);
        nail_policy_free(pi);
        nail_mdp_free(grid);
        nail_mdp_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/nail_lab.h")).unwrap();
    for name in [
        "typedef struct NailMdp NailMdp;",
        "NAIL_STATUS_OK = 0",
        "nail_last_error(void)",
        "nail_mdp_new(",
        "nail_run(",
        "nail_trace_free(",
        "size_t num_states",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}
