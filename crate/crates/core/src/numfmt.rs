//! Fixed-precision decimal rendering for persisted scores.

/// Renders `x` with 12 significant digits, trailing zeros trimmed.
pub fn format_sig12(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_finite() { "0".to_string() } else { x.to_string() };
    }
    let exp = x.abs().log10().floor() as i32;
    let decimals = (11 - exp).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// `x` rounded to the value that [`format_sig12`] renders.
pub fn round_sig12(x: f64) -> f64 {
    format_sig12(x).parse().expect("formatted float parses")
}
