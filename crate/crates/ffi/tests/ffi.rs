use std::ffi::{CStr, CString};
use std::ptr;

use ddm_sim_ffi::*;

const FIG5: &str = include_str!("../../core/scenarios/fig5.scn");

fn last_error() -> String {
    let p = ddm_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned()
}

#[test]
fn demand_codec_roundtrip() {
    let mut word = 0u64;
    assert_eq!(
        unsafe { ddm_encode_demand(1234, 1, 1, &mut word) },
        DdmStatus::Ok
    );
    assert_eq!(word, 0x5_0000_04D2);
    let (mut pid, mut sd, mut pd) = (0u32, 0u8, 0u8);
    assert_eq!(
        unsafe { ddm_decode_demand(word, &mut pid, &mut sd, &mut pd) },
        DdmStatus::Ok
    );
    assert_eq!((pid, sd, pd), (1234, 1, 1));
}

#[test]
fn invalid_inputs_set_last_error() {
    let mut word = 0u64;
    assert_eq!(
        unsafe { ddm_encode_demand(1, 4, 0, &mut word) },
        DdmStatus::Invalid
    );
    assert!(last_error().contains("sd"));
    let (mut pid, mut sd, mut pd) = (0u32, 0u8, 0u8);
    assert_eq!(
        unsafe { ddm_decode_demand(1 << 40, &mut pid, &mut sd, &mut pd) },
        DdmStatus::Invalid
    );
    assert_eq!(
        unsafe { ddm_encode_demand(1, 1, 1, ptr::null_mut()) },
        DdmStatus::NullPointer
    );
    assert!(last_error().contains("null"));
}

#[test]
fn action_codes() {
    let mut a = 9u8;
    let expect = [(0, 0, 0), (1, 1, 1), (2, 2, 1), (3, 0, 2), (0, 1, 0)];
    for (sd, pd, code) in expect {
        assert_eq!(unsafe { ddm_select_action(sd, pd, &mut a) }, DdmStatus::Ok);
        assert_eq!(a, code, "({sd},{pd})");
    }
}

#[test]
fn run_fig5_through_handles() {
    let text = CString::new(FIG5).unwrap();
    let mut scn = ptr::null_mut();
    assert_eq!(
        unsafe { ddm_scenario_parse(text.as_ptr(), &mut scn) },
        DdmStatus::Ok
    );
    let mut res = ptr::null_mut();
    assert_eq!(unsafe { ddm_run(scn, &mut res) }, DdmStatus::Ok);
    let mut cycles = 0;
    assert_eq!(
        unsafe { ddm_result_total_cycles(res, &mut cycles) },
        DdmStatus::Ok
    );
    assert_eq!(cycles, 42);
    let mut done = 0;
    assert_eq!(
        unsafe { ddm_result_completion(res, 0, &mut done) },
        DdmStatus::Ok
    );
    assert_eq!(done, 30);
    assert_eq!(
        unsafe { ddm_result_completion(res, 7, &mut done) },
        DdmStatus::Invalid
    );

    let mut s = ptr::null_mut();
    assert_eq!(unsafe { ddm_result_timeline(res, &mut s) }, DdmStatus::Ok);
    let timeline = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_owned();
    assert_eq!(
        timeline,
        include_str!("../../core/tests/golden/fig5.timeline")
    );
    unsafe {
        ddm_string_free(s);
        ddm_result_free(res);
        ddm_scenario_free(scn);
    }
}

#[test]
fn parse_errors_and_deadline() {
    let mut scn = ptr::null_mut();
    let empty = CString::new("").unwrap();
    assert_eq!(
        unsafe { ddm_scenario_parse(empty.as_ptr(), &mut scn) },
        DdmStatus::Invalid
    );
    assert!(scn.is_null());
    assert!(last_error().contains("missing topology"));

    let slow = CString::new(
        "topology.physical = 1\ntopology.threads = 1\nengine.budget = 3\n\
         process.A.pid = 1\nprocess.A.core = 0\nprocess.A.stream = 0*10\n",
    )
    .unwrap();
    assert_eq!(
        unsafe { ddm_scenario_parse(slow.as_ptr(), &mut scn) },
        DdmStatus::Ok
    );
    let mut res = ptr::null_mut();
    assert_eq!(unsafe { ddm_run(scn, &mut res) }, DdmStatus::Deadline);
    assert!(!res.is_null());
    let mut done = 0;
    assert_eq!(
        unsafe { ddm_result_completion(res, 0, &mut done) },
        DdmStatus::Runtime
    );
    unsafe {
        ddm_result_free(res);
        ddm_scenario_free(scn);
        ddm_scenario_free(ptr::null_mut());
    }
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(ddm_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
