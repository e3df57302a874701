use qst_web::{distinct_values, parse_losses, sampler_distance, selection, sorted_distribution};

#[test]
fn single_qubit_zero_state_distribution() {
    // |0⟩ gives (1/3, 1/6, 1/6, 1/3); sorted: two thirds then two sixths.
    let d = sorted_distribution("product", 1, 0).unwrap();
    assert_eq!(d.len(), 4);
    assert!(d.windows(2).all(|w| w[0] >= w[1]));
    assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn ghz_distinct_count_matches_core() {
    assert_eq!(distinct_values("ghz", 6, 0, 1e-10).unwrap(), 17);
}

#[test]
fn sampler_is_close_to_exact() {
    let tv = sampler_distance("w", 3, 0, 200_000, 1).unwrap();
    assert!(tv < 0.01, "{tv}");
}

#[test]
fn worked_selection() {
    let sel = selection("1.00, 0.60 0.40\n0.39,0.41,0.38", 3).unwrap();
    assert_eq!(sel[0], 6.0);
    assert_eq!(sel[1], 4.0);
    assert!((sel[2] - 0.06).abs() < 1e-12);
}

#[test]
fn bad_inputs_are_errors() {
    assert!(sorted_distribution("ghz", 7, 0).is_err());
    assert!(sorted_distribution("bell", 2, 0).is_err());
    assert!(parse_losses("1.0, x").is_err());
    assert!(selection("1.0 0.5", 3).is_err());
    assert!(sampler_distance("ghz", 2, 0, 0, 0).is_err());
}
