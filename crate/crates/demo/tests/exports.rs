use serde_json::Value;
use vbma_demo::{analyze_text, density_curves, simulate_and_average};

fn parse(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[test]
fn simulation_view_has_consistent_shapes() {
    let v = parse(&simulate_and_average(60, 7.0, 0.2, 0.6, 3, 100, 11).unwrap());
    assert_eq!(floats(&v["x"]).len(), 60);
    assert_eq!(floats(&v["t_theoretical"]).len(), 60);
    for kind in ["vb", "pe", "is"] {
        let w = floats(&v["weights"][kind]);
        assert_eq!(w.len(), 3);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        assert!(floats(&v["tracks"][kind]).iter().all(|t| (0.0..=1.0).contains(t)));
    }
}

#[test]
fn simulation_is_reproducible() {
    let a = simulate_and_average(40, 5.0, 0.1, 0.6, 2, 50, 3).unwrap();
    let b = simulate_and_average(40, 5.0, 0.1, 0.6, 2, 50, 3).unwrap();
    assert_eq!(a, b);
}

#[test]
fn density_curves_integrate_to_about_one() {
    let v = parse(&density_curves(80, 5.0, 0.3, 0.6, 2, 1, -8.0, 4.0, 1201).unwrap());
    let grid = floats(&v["grid"]);
    let h = grid[1] - grid[0];
    for key in ["true_alt", "averaged_alt", "null"] {
        let area: f64 = floats(&v[key]).iter().sum::<f64>() * h;
        assert!((area - 1.0).abs() < 0.02, "{key}: {area}");
    }
}

#[test]
fn analysis_flags_the_shifted_block() {
    let mut text = String::from("value\n");
    for t in 0..60 {
        let x =
            if (20..30).contains(&t) { -4.0 + 0.05 * (t % 4) as f64 } else { 0.3 * ((t * 5 % 7) as f64 - 3.0) / 3.0 };
        text.push_str(&format!("{x}\n"));
    }
    let v = parse(&analyze_text(&text, 0.0, 1.0, 2, 0.5, 0).unwrap());
    let labels: Vec<u64> = v["labels"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect();
    assert!(labels[20..30].iter().all(|&s| s == 1));
    assert!(labels[..18].iter().all(|&s| s == 0));
}

#[test]
fn invalid_inputs_are_reported() {
    assert!(simulate_and_average(0, 5.0, 0.1, 0.6, 2, 50, 0).is_err());
    assert!(simulate_and_average(50, 5.0, 0.1, 0.6, 9, 50, 0).is_err());
    assert!(density_curves(50, 5.0, 0.1, 0.6, 2, 0, 1.0, 1.0, 10).is_err());
    assert!(analyze_text("1\nfoo\n", 0.0, 1.0, 2, 0.5, 0).is_err());
    assert!(analyze_text("1\n2\n", 0.0, -1.0, 2, 0.5, 0).is_err());
}
