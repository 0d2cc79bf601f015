use magenergy::oracle::{
    default_regression_manifest, evaluate_case, evaluate_oracle, regression_templates, RegressionManifest,
};

const MANIFEST_PATH: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/data/oracle_regression.json");

#[test]
#[ignore = "rewrites the frozen oracle values"]
fn freeze_oracle_regression_manifest() {
    let mut cases = regression_templates();
    for case in &mut cases {
        let o = evaluate_oracle(case).unwrap();
        assert!(o.converged, "{} did not converge", case.name);
        case.expected = o.value;
    }
    let text = RegressionManifest { cases }.to_json() + "\n";
    std::fs::write(MANIFEST_PATH, text).unwrap();
}

#[test]
fn bundled_manifest_matches_templates() {
    let frozen = default_regression_manifest();
    let templates = regression_templates();
    assert_eq!(frozen.cases.len(), templates.len());
    for (f, t) in frozen.cases.iter().zip(&templates) {
        assert_eq!(f.name, t.name);
        assert_eq!(f.profile, t.profile);
        assert_eq!(f.geometry, t.geometry);
        assert_eq!(f.spec, t.spec);
        assert!(f.expected != 0.0, "{} is not frozen", f.name);
    }
}

#[test]
fn oracle_reproduces_frozen_values() {
    for case in default_regression_manifest().cases {
        let out = evaluate_case(&case).unwrap();
        assert!(
            out.passed,
            "{}: oracle {:e} vs frozen {:e}",
            out.name, out.value, out.expected
        );
    }
}

#[test]
fn frozen_values_agree_with_production_code() {
    for case in default_regression_manifest().cases {
        let out = evaluate_case(&case).unwrap();
        let Some(cf) = out.closed_form else { continue };
        let tol = if case.name.ends_with("_mc") {
            5.0 * out.error / out.value.abs()
        } else {
            1e-3
        };
        let rel = (cf - out.expected).abs() / out.expected.abs();
        assert!(
            rel <= tol,
            "{}: production {cf:e} vs oracle {:e} (rel {rel:e})",
            out.name,
            out.expected
        );
    }
}
