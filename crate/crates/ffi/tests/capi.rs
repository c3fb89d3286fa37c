use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;
use std::ptr;

use unbalsens_ffi::*;

fn feeder(name: &str) -> CString {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/feeders")
        .join(name);
    CString::new(path.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 512];
    unsafe {
        ubs_last_error(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn load(name: &str) -> *mut UbsNetwork {
    let mut net = ptr::null_mut();
    assert_eq!(
        unsafe { ubs_network_load(feeder(name).as_ptr(), &mut net) },
        UbsStatus::Ok
    );
    net
}

#[test]
fn full_round_trip_matches_the_library() {
    unsafe {
        let net = load("four_bus.json");
        assert_eq!(ubs_network_node_count(net), 9);
        assert_eq!(ubs_network_regulator_count(net), 2);

        let mut label = [0 as c_char; 16];
        let mut needed = 0usize;
        let status = ubs_network_node_label(net, 8, label.as_mut_ptr(), label.len(), &mut needed);
        assert_eq!(status, UbsStatus::Ok);
        assert_eq!(CStr::from_ptr(label.as_ptr()).to_str().unwrap(), "b4.a");
        assert_eq!(needed, 5);

        let mut op = ptr::null_mut();
        assert_eq!(ubs_solve(net, ptr::null(), 0, 0.0, &mut op), UbsStatus::Ok);
        assert!(ubs_operating_point_mismatch(op) <= 1e-10);
        let mut mags = vec![0.0; 9];
        let mut angles = vec![0.0; 9];
        let status = ubs_operating_point_voltages(op, mags.as_mut_ptr(), angles.as_mut_ptr(), 9);
        assert_eq!(status, UbsStatus::Ok);
        assert_eq!(mags[0], 1.0);

        let mut sens = ptr::null_mut();
        assert_eq!(ubs_sensitivities_compute(net, op, &mut sens), UbsStatus::Ok);
        let (mut rows, mut cols) = (0, 0);
        assert_eq!(
            ubs_sensitivities_shape(sens, UbsMatrix::MagnitudeTap, &mut rows, &mut cols),
            UbsStatus::Ok
        );
        assert_eq!((rows, cols), (9, 2));
        let mut taps = vec![0.0; 18];
        assert_eq!(
            ubs_sensitivities_matrix(sens, UbsMatrix::MagnitudeTap, taps.as_mut_ptr(), 18),
            UbsStatus::Ok
        );

        let reference = {
            let net =
                unbalsens::netmodel::Network::from_file(feeder("four_bus.json").to_str().unwrap())
                    .unwrap();
            let op = unbalsens::powerflow::solve_power_flow(
                &net,
                &net.model.initial_taps(),
                &unbalsens::powerflow::SolverConfig::default(),
                None,
            )
            .unwrap();
            unbalsens::sensitivity::solve_all(&net, &op).unwrap()
        };
        for r in 0..9 {
            for c in 0..2 {
                assert_eq!(taps[r * 2 + c], reference.de_dgamma[(r, c)]);
            }
        }

        ubs_sensitivities_free(sens);
        ubs_operating_point_free(op);
        ubs_network_free(net);
    }
}

#[test]
fn errors_carry_status_and_message() {
    unsafe {
        let mut net = ptr::null_mut();
        let missing = CString::new("/no/such/feeder.json").unwrap();
        assert_eq!(
            ubs_network_load(missing.as_ptr(), &mut net),
            UbsStatus::InputError
        );
        assert!(net.is_null());
        assert!(last_error().contains("/no/such/feeder.json"));

        let bad =
            CString::new(r#"{"bases": {"s_base_kva": 1}, "buses": [], "slack": [], "extra": 1}"#)
                .unwrap();
        assert_eq!(
            ubs_network_parse(bad.as_ptr(), &mut net),
            UbsStatus::InputError
        );
        assert_eq!(
            ubs_network_parse(ptr::null(), &mut net),
            UbsStatus::InvalidArgument
        );

        let net = load("ring_six_bus.json");
        let mut op = ptr::null_mut();
        let taps = [40.0, 0.0];
        assert_eq!(
            ubs_solve(net, taps.as_ptr(), 2, 0.0, &mut op),
            UbsStatus::InputError
        );
        assert!(last_error().contains("tap"));
        assert_eq!(
            ubs_solve(net, taps.as_ptr(), 1, 0.0, &mut op),
            UbsStatus::InputError
        );

        assert_eq!(
            ubs_solve(net, ptr::null(), 0, 1e-10, &mut op),
            UbsStatus::Ok
        );
        assert_eq!(last_error(), "");
        let mut short = [0.0; 4];
        let status =
            ubs_operating_point_voltages(op, short.as_mut_ptr(), ptr::null_mut(), short.len());
        assert_eq!(status, UbsStatus::BufferTooSmall);

        let mut label = [0 as c_char; 2];
        let mut needed = 0;
        let status = ubs_network_node_label(net, 0, label.as_mut_ptr(), label.len(), &mut needed);
        assert_eq!((status, needed), (UbsStatus::BufferTooSmall, 5));
        let status = ubs_network_node_label(net, 99, label.as_mut_ptr(), label.len(), &mut needed);
        assert_eq!(status, UbsStatus::InvalidArgument);

        let other = load("four_bus.json");
        let mut sens = ptr::null_mut();
        assert_eq!(
            ubs_sensitivities_compute(other, op, &mut sens),
            UbsStatus::InvalidArgument
        );

        ubs_operating_point_free(op);
        ubs_network_free(net);
        ubs_network_free(other);
    }
}

#[test]
fn null_handles_are_harmless() {
    unsafe {
        ubs_network_free(ptr::null_mut());
        ubs_operating_point_free(ptr::null_mut());
        ubs_sensitivities_free(ptr::null_mut());
        assert_eq!(ubs_network_node_count(ptr::null()), 0);
        assert!(ubs_operating_point_mismatch(ptr::null()).is_nan());
        let mut out = ptr::null_mut();
        assert_eq!(
            ubs_solve(ptr::null(), ptr::null(), 0, 0.0, &mut out),
            UbsStatus::InvalidArgument
        );
    }
}

#[test]
fn error_messages_are_per_thread() {
    unsafe {
        let mut net = ptr::null_mut();
        let missing = CString::new("/no/such/feeder.json").unwrap();
        ubs_network_load(missing.as_ptr(), &mut net);
    }
    let other = std::thread::spawn(last_error).join().unwrap();
    assert_eq!(other, "");
    assert!(!last_error().is_empty());
}

#[test]
fn version_matches_the_crate() {
    let v = unsafe { CStr::from_ptr(ubs_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let header =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/unbalsens.h"))
            .unwrap();
    let source =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exports: Vec<&str> = source
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 15);
    for name in exports {
        assert!(
            header.contains(&format!("{name}(")),
            "{name} missing from header"
        );
    }
    for ty in [
        "typedef struct UbsNetwork UbsNetwork;",
        "UBS_STATUS_BUFFER_TOO_SMALL = 4",
        "UBS_MATRIX_ANGLE_TAP = 5",
    ] {
        assert!(header.contains(ty), "{ty}");
    }
}
