//! Roundtrip tests that drive the C ABI the way a foreign caller would:
//! through raw pointers and status codes only, never through the Rust API.

use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::ptr;

use hcsim_capi::*;

fn status_of(s: HcsimStatus) -> i32 {
    s as i32
}

unsafe fn last_error() -> String {
    let msg = hcsim_last_error();
    assert!(!msg.is_null(), "expected an error message");
    CStr::from_ptr(msg).to_str().unwrap().to_owned()
}

unsafe fn take_string(ptr: *mut c_char) -> String {
    assert!(!ptr.is_null());
    let s = CStr::from_ptr(ptr).to_str().unwrap().to_owned();
    hcsim_string_free(ptr);
    s
}

unsafe fn parse(text: &str) -> *mut HcsimQuery {
    let c = CString::new(text).unwrap();
    let mut q: *mut HcsimQuery = ptr::null_mut();
    let st = hcsim_query_parse(c.as_ptr(), &mut q);
    assert_eq!(status_of(st), 0, "parse failed: {}", last_error());
    assert!(!q.is_null());
    q
}

#[test]
fn abi_version_is_stable() {
    assert_eq!(hcsim_abi_version(), 1);
}

#[test]
fn parse_inspect_render_free() {
    unsafe {
        let q = parse("q(x,y,z) :- R(x,y), S(y,z), T(z,x)");
        assert_eq!(hcsim_query_num_vars(q), 3);
        assert_eq!(hcsim_query_num_atoms(q), 3);

        let mut rendered: *mut c_char = ptr::null_mut();
        assert_eq!(status_of(hcsim_query_render(q, &mut rendered)), 0);
        let text = take_string(rendered);
        assert_eq!(text, "q(x, y, z) :- R(x, y), S(y, z), T(z, x)");

        // Rendered text must parse back to an identical query.
        let q2 = parse(&text);
        let mut rendered2: *mut c_char = ptr::null_mut();
        assert_eq!(status_of(hcsim_query_render(q2, &mut rendered2)), 0);
        assert_eq!(take_string(rendered2), text);
        hcsim_query_free(q2);
        hcsim_query_free(q);
    }
}

#[test]
fn null_and_invalid_inputs_report_status() {
    unsafe {
        // Null pointers are rejected, never dereferenced.
        let mut q: *mut HcsimQuery = ptr::null_mut();
        assert_eq!(
            status_of(hcsim_query_parse(ptr::null(), &mut q)),
            HcsimStatus::NullPointer as i32
        );
        assert_eq!(
            status_of(hcsim_query_parse(c"q(x) :- R(x)".as_ptr(), ptr::null_mut())),
            HcsimStatus::NullPointer as i32
        );

        // Invalid UTF-8 in the query text.
        let bad = [0x71u8, 0x28, 0xff, 0xfe, 0x29, 0x00];
        assert_eq!(
            status_of(hcsim_query_parse(bad.as_ptr() as *const c_char, &mut q)),
            HcsimStatus::InvalidUtf8 as i32
        );

        // Syntax errors surface as Parse with a readable message.
        let junk = CString::new("this is not a query").unwrap();
        assert_eq!(
            status_of(hcsim_query_parse(junk.as_ptr(), &mut q)),
            HcsimStatus::Parse as i32
        );
        let msg = last_error();
        assert!(!msg.is_empty());
        assert!(q.is_null(), "out pointer must stay untouched on error");

        // Free functions accept NULL as a no-op.
        hcsim_query_free(ptr::null_mut());
        hcsim_share_plan_free(ptr::null_mut());
        hcsim_string_free(ptr::null_mut());
    }
}

#[test]
fn share_plan_on_triangle_query() {
    unsafe {
        let q = parse("q(x,y,z) :- R(x,y), S(y,z), T(z,x)");
        let p = 64u64;
        let m = 4096.0f64; // p^2 tuples per relation
        let bits = [m, m, m];

        let mut plan: *mut HcsimSharePlan = ptr::null_mut();
        let st = hcsim_share_plan_solve(q, bits.as_ptr(), bits.len(), p, &mut plan);
        assert_eq!(status_of(st), 0, "solve failed: {}", last_error());

        // Sizes p^2 on every atom: lambda = 2 - 1/tau* = 4/3, shares p^{1/3} = 4,
        // load p^lambda = m/p^{2/3}.
        let lambda = hcsim_share_plan_lambda(plan);
        assert!((lambda - 4.0 / 3.0).abs() <= 1e-12, "lambda {lambda}");

        for var in 0..3 {
            assert_eq!(hcsim_share_plan_share(plan, var), 4);
        }
        assert_eq!(hcsim_share_plan_share(plan, 3), 0, "out of range yields 0");
        assert_eq!(hcsim_share_plan_share(ptr::null(), 0), 0);

        for atom in 0..3 {
            assert_eq!(hcsim_share_plan_is_broadcast(plan, atom), 0);
        }

        let load = hcsim_share_plan_load(plan);
        let expected = m / (p as f64).powf(2.0 / 3.0);
        assert!((load - expected).abs() <= 1e-6 * expected, "load {load} vs {expected}");
        assert!(hcsim_share_plan_load(ptr::null()).is_nan());

        // Closed form must agree with the LP plan.
        let mut closed = 0.0f64;
        assert_eq!(
            status_of(hcsim_closed_form_load(q, bits.as_ptr(), bits.len(), p, &mut closed)),
            0
        );
        assert!((closed - load).abs() <= 1e-6 * load);

        let mut js: *mut c_char = ptr::null_mut();
        assert_eq!(status_of(hcsim_share_plan_to_json(plan, &mut js)), 0);
        let parsed: serde_json::Value = serde_json::from_str(&take_string(js)).unwrap();
        for var in ["x", "y", "z"] {
            assert_eq!(parsed[var]["exponent"], serde_json::json!("1/3"));
            assert_eq!(parsed[var]["share"], serde_json::json!(4));
        }

        hcsim_share_plan_free(plan);
        hcsim_query_free(q);
    }
}

#[test]
fn analysis_scalars_on_triangle() {
    unsafe {
        let q = parse("q(x,y,z) :- R(x,y), S(y,z), T(z,x)");
        let bits = [4096.0f64, 4096.0, 4096.0];

        let mut eps = -1.0f64;
        assert_eq!(
            status_of(hcsim_space_exponent(q, bits.as_ptr(), bits.len(), 64, &mut eps)),
            0
        );
        assert!((eps - 1.0 / 3.0).abs() <= 1e-9, "epsilon {eps}");

        let mut tau = 0.0f64;
        assert_eq!(status_of(hcsim_max_packing_value(q, &mut tau)), 0);
        assert!((tau - 1.5).abs() <= 1e-12);

        let mut js: *mut c_char = ptr::null_mut();
        assert_eq!(status_of(hcsim_packing_vertices_json(q, &mut js)), 0);
        let verts: serde_json::Value = serde_json::from_str(&take_string(js)).unwrap();
        let arr = verts.as_array().expect("array of vertices");
        // Triangle: the all-1/2 vertex plus the three unit vectors.
        assert_eq!(arr.len(), 4);
        assert!(arr.iter().any(|v| v == &serde_json::json!(["1/2", "1/2", "1/2"])));

        hcsim_query_free(q);
    }
}

#[test]
fn mismatched_sizes_rejected() {
    unsafe {
        let q = parse("q(x,y) :- R(x), S(y)");
        let bits = [64.0f64];
        let mut plan: *mut HcsimSharePlan = ptr::null_mut();
        let st = hcsim_share_plan_solve(q, bits.as_ptr(), bits.len(), 16, &mut plan);
        assert_eq!(status_of(st), HcsimStatus::InvalidArgument as i32);
        assert!(plan.is_null());
        assert!(last_error().contains("atoms"));
        hcsim_query_free(q);
    }
}

#[test]
fn experiment_json_roundtrip_and_determinism() {
    let config = serde_json::json!({
        "query": "q(x,y,z) :- R(x,y), S(y,z)",
        "relations": {
            "R": "gen:uniform,m=600",
            "S": "gen:uniform,m=600"
        },
        "n": 40,
        "p": 8,
        "seeds": [1, 2],
        "algorithm": "hc-optimal"
    })
    .to_string();
    let c = CString::new(config).unwrap();

    unsafe {
        let mut out: *mut c_char = ptr::null_mut();
        let st = hcsim_run_experiment_json(c.as_ptr(), &mut out);
        assert_eq!(status_of(st), 0, "experiment failed: {}", last_error());
        let first = take_string(out);

        let report: serde_json::Value = serde_json::from_str(&first).unwrap();
        assert_eq!(report["algorithm"], serde_json::json!("hc-optimal"));
        assert_eq!(report["p"], serde_json::json!(8));
        assert_eq!(report["n"], serde_json::json!(40));
        assert_eq!(report["relations"].as_array().unwrap().len(), 2);
        assert!(report["share_lp"].is_object());
        assert!(report["space_exponent"].is_object());
        assert!(report["bounds"].is_object());
        let seeds = report["seeds"].as_array().unwrap();
        assert_eq!(seeds.len(), 2);
        for entry in seeds {
            assert_eq!(entry["verified"], serde_json::json!(true));
            assert!(entry["l_max_bits"].as_f64().unwrap() > 0.0);
            assert!(entry["outputs"].as_u64().is_some());
        }

        // Same config, same bytes.
        let mut out2: *mut c_char = ptr::null_mut();
        assert_eq!(status_of(hcsim_run_experiment_json(c.as_ptr(), &mut out2)), 0);
        assert_eq!(take_string(out2), first);
    }
}

#[test]
fn experiment_json_rejects_bad_configs() {
    unsafe {
        let mut out: *mut c_char = ptr::null_mut();

        // Unknown key.
        let bad = CString::new(r#"{"query":"q(x) :- R(x)","relations":{"R":"gen:uniform,m=10"},"p":4,"seeds":[1],"typo":true}"#).unwrap();
        assert_eq!(
            status_of(hcsim_run_experiment_json(bad.as_ptr(), &mut out)),
            HcsimStatus::InvalidArgument as i32
        );
        assert!(last_error().contains("typo"));

        // Not JSON at all.
        let not_json = CString::new("p=4").unwrap();
        assert_eq!(
            status_of(hcsim_run_experiment_json(not_json.as_ptr(), &mut out)),
            HcsimStatus::Json as i32
        );

        // Algorithm shape errors pass through with their own status: the
        // two-atom skew join does not apply to a three-atom query.
        let shape = CString::new(
            serde_json::json!({
                "query": "q(x,y,z) :- R(x,y), S(y,z), T(z,x)",
                "relations": {
                    "R": "gen:uniform,m=100",
                    "S": "gen:uniform,m=100",
                    "T": "gen:uniform,m=100"
                },
                "n": 20,
                "p": 4,
                "seeds": [1],
                "algorithm": "skew-join"
            })
            .to_string(),
        )
        .unwrap();
        assert_eq!(
            status_of(hcsim_run_experiment_json(shape.as_ptr(), &mut out)),
            HcsimStatus::AlgorithmShape as i32
        );
        assert!(out.is_null());
    }
}
