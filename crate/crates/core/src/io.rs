//! Text formatting shared by the CSV writers.

/// Formats `x` with 12 significant digits in the shortest of fixed or
/// exponent notation, trailing zeros removed.
pub fn fmt_sig(x: f64) -> String {
    const DIGITS: usize = 12;
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.*e}", DIGITS - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..DIGITS as i32).contains(&exp) {
        let decimals = (DIGITS as i32 - 1 - exp).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, x))
    } else {
        format!("{}e{}", trim_zeros(mantissa.to_string()), exp)
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    let t = s.trim_end_matches('0').trim_end_matches('.');
    if t == "-0" {
        "0".to_string()
    } else {
        t.to_string()
    }
}

/// Joins formatted values with commas.
pub fn csv_row(values: &[f64]) -> String {
    values.iter().map(|v| fmt_sig(*v)).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digits() {
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(1.0), "1");
        assert_eq!(fmt_sig(-2.5), "-2.5");
        assert_eq!(fmt_sig(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_sig(123456.789), "123456.789");
        assert_eq!(fmt_sig(1.5e-7), "1.5e-7");
        assert_eq!(fmt_sig(6.02214076e23), "6.02214076e23");
        assert_eq!(fmt_sig(9.9999999999999), "10");
        assert_eq!(fmt_sig(0.000123), "0.000123");
        assert_eq!(fmt_sig(-1e-20), "-1e-20");
    }

    #[test]
    fn round_trip_within_precision() {
        for &x in &[std::f64::consts::PI, -7.123456789012345e-3, 98765.4321012345] {
            let y: f64 = fmt_sig(x).parse().unwrap();
            assert!((x - y).abs() <= 1e-11 * x.abs());
        }
    }
}
