use magenergy::cylindrical::{compare_map, SeriesOptions, COMPARE_MAP_HEIGHT_M};
use magenergy::magnetostatics::{render_field_grid, FieldGrid, GridExtent};
use magenergy::oracle::{
    fd_vector_calculus, oracle_d_mag_cylindrical, oracle_image_vector_potential, oracle_vector_potential,
    QuadratureSpec,
};
use magenergy::{ProbeGeometry, SpinDensityProfile};
use nalgebra::Vector3;

const NM: f64 = 1e-9;
const DATA: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data");
const LAMBDA: (f64, f64) = (0.3, 3.0);
const DELTA: (f64, f64) = (2.0, 20.0);

fn field_panel(mu2: f64) -> FieldGrid {
    let p = SpinDensityProfile::spherical_bessel(0.25 * NM).unwrap();
    let g = ProbeGeometry::new(NM, 1.0, mu2, 1.0, 0.0).unwrap();
    let extent = GridExtent {
        min: [-2.0 * NM, 0.0, -2.0 * NM],
        max: [2.0 * NM, 0.0, 2.0 * NM],
    };
    render_field_grid(&p, &g, extent, [64, 1, 64], true).unwrap()
}

fn panel_file(mu2: f64) -> String {
    format!("{DATA}/field_map_mu_r_II_{mu2:e}.csv")
}

fn read_rows(path: &str) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{path}: {e}"));
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn num(s: &str) -> f64 {
    s.parse().unwrap()
}

fn cylinder_cell(delta: f64, lambda: f64) -> (SpinDensityProfile, ProbeGeometry) {
    let h = COMPARE_MAP_HEIGHT_M;
    let p = SpinDensityProfile::cylindrical_bessel_cosine(h / lambda, h).unwrap();
    let g = ProbeGeometry::new(delta * h, 1.0, 0.0, 1.0, 0.0).unwrap();
    (p, g)
}

#[test]
#[ignore = "rewrites the golden files"]
fn regenerate_goldens() {
    std::fs::create_dir_all(DATA).unwrap();
    for mu2 in [0.0, 1e6] {
        std::fs::write(panel_file(mu2), field_panel(mu2).to_csv()).unwrap();
    }
    let map = compare_map(LAMBDA, DELTA, [8, 8], &SeriesOptions::default()).unwrap();
    let mut out = String::from("delta,lambda,D_cyl_oracle_Hz,err_Hz\n");
    for c in &map.cells {
        let (p, g) = cylinder_cell(c.delta, c.lambda);
        let o = oracle_d_mag_cylindrical(&p, &g, &QuadratureSpec::adaptive(1e-8)).unwrap();
        assert!(o.converged, "oracle unconverged at ({}, {})", c.delta, c.lambda);
        out.push_str(&format!(
            "{:e},{:e},{:e},{:e}\n",
            c.delta, c.lambda, o.value_hz, o.error_estimate_hz
        ));
    }
    std::fs::write(format!("{DATA}/cyl_compare_oracle.csv"), out).unwrap();
}

#[test]
fn field_panels_match_goldens() {
    for mu2 in [0.0, 1e6] {
        let grid = field_panel(mu2);
        let golden = read_rows(&panel_file(mu2));
        assert_eq!(golden.len(), grid.len());
        let scale = grid.magnitudes().into_iter().fold(0.0, f64::max);
        for (row, s) in golden.iter().zip(&grid.samples) {
            for k in 0..3 {
                assert!((num(&row[k]) - s.position[k]).abs() <= 1e-12 * NM);
                let (a, b) = (num(&row[3 + k]), s.value[k]);
                assert!(
                    (a - b).abs() <= 1e-10 * scale + 1e-10 * b.abs(),
                    "B mismatch at {row:?}: {b:e}"
                );
            }
        }
    }
}

#[test]
fn field_panels_agree_with_oracle_curl() {
    let p = SpinDensityProfile::spherical_bessel(0.25 * NM).unwrap();
    let spec = QuadratureSpec {
        tolerance: 1e-6,
        ..QuadratureSpec::tensor(24)
    };
    for mu2 in [0.0, 1e6] {
        let g = ProbeGeometry::new(NM, 1.0, mu2, 1.0, 0.0).unwrap();
        let grid = field_panel(mu2);
        let picks = grid.samples.iter().filter(|s| {
            let [x, _, z] = s.position;
            x.hypot(z) > 0.5 * NM && z < 0.8 * NM
        });
        for s in picks.step_by(97).take(12) {
            let x = Vector3::from(s.position);
            let a = |y: &Vector3<f64>| -> magenergy::Result<Vector3<f64>> {
                Ok(oracle_vector_potential(&p, &g, y, &spec)?.value
                    + oracle_image_vector_potential(&p, &g, y, &spec)?.value)
            };
            let fd = fd_vector_calculus(a, &x, 1e-3 * NM).unwrap();
            let b = Vector3::from(s.value);
            let rel = (fd.curl - b).norm() / b.norm();
            assert!(rel < 1e-5, "mu2 = {mu2}: curl A vs B at {:?}: rel {rel:e}", s.position);
        }
    }
}

#[test]
fn cylindrical_series_matches_oracle_golden() {
    let map = compare_map(LAMBDA, DELTA, [8, 8], &SeriesOptions::default()).unwrap();
    let golden = read_rows(&format!("{DATA}/cyl_compare_oracle.csv"));
    assert_eq!(golden.len(), map.cells.len());
    for (row, c) in golden.iter().zip(&map.cells) {
        assert!((num(&row[0]) - c.delta).abs() <= 1e-12 * c.delta);
        assert!((num(&row[1]) - c.lambda).abs() <= 1e-12 * c.lambda);
        let oracle = num(&row[2]);
        let rel = (c.d_cyl_hz - oracle).abs() / oracle.abs();
        assert!(
            rel < 1e-6,
            "({}, {}): series {:e} vs oracle {oracle:e}",
            c.delta,
            c.lambda,
            c.d_cyl_hz
        );
    }
}
