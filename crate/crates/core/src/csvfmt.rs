//! Number formatting shared by every CSV writer.

/// Formats with 17 significant digits (round-trips any `f64`).
/// Non-finite values are written as `NaN`, `inf` or `-inf`.
pub fn float(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.16e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5, 1e-300, 0.0, 123456789.12345679] {
            let s = float(x);
            let mantissa = s.split('e').next().unwrap().trim_start_matches('-');
            assert_eq!(mantissa.chars().filter(char::is_ascii_digit).count(), 17);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
        assert_eq!(float(f64::NAN), "NaN");
    }
}
