/// Trigamma function psi'(x) for x > 0.
///
/// Shifts the argument above 10 with the recurrence and then uses the
/// asymptotic series.
pub fn trigamma(x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let z = 1.0 / (x * x);
    let tail = 1.0 / x + z / 2.0 + z / x * (1.0 / 6.0 - z * (1.0 / 30.0 - z * (1.0 / 42.0 - z * (1.0 / 30.0 - z * 5.0 / 66.0))));
    acc + tail
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::function::gamma::digamma;

    #[test]
    fn reference_values() {
        for (x, want) in [(0.3, 12.245364546107734), (2.5, 0.4903577561002349), (40.0, 0.025315103841291032)] {
            assert!((trigamma(x) - want).abs() < 1e-12 * want.max(1.0), "{x}");
        }
        // psi'(1) = pi^2 / 6.
        assert!((trigamma(1.0) - std::f64::consts::PI.powi(2) / 6.0).abs() < 1e-13);
    }

    #[test]
    fn derivative_of_digamma() {
        for x in [0.7, 1.9, 5.5, 13.0] {
            let h = 1e-5 * x;
            let fd = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
            assert!((fd - trigamma(x)).abs() < 1e-6 * trigamma(x));
        }
    }
}
