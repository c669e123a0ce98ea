#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tlsdetect::stats::MorphologyRecord;

/// Devices whose density is linear in mean grain width plus noise. Every
/// other metric is a decoy; the thickness rms columns track their means.
pub fn grain_driven_devices(seed: u64, n: usize) -> Vec<MorphologyRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |mu: f64, sd: f64, rng: &mut ChaCha8Rng| Normal::new(mu, sd).unwrap().sample(rng);
    (0..n)
        .map(|k| {
            let gw: f64 = rng.random_range(20.0..60.0);
            let et = normal(100.0, 5.0, &mut rng);
            let et_sd = normal(3.0, 0.5, &mut rng).abs();
            let jt = normal(2.0, 0.1, &mut rng);
            let jt_sd = normal(0.2, 0.03, &mut rng).abs();
            let rho = (0.004 * gw + normal(0.0, 0.02, &mut rng)).max(0.0);
            MorphologyRecord {
                device_label: format!("dev{k:02}"),
                electrode_thickness_mean: et,
                electrode_thickness_std: et_sd,
                electrode_thickness_rms: (et * et + et_sd * et_sd).sqrt() + normal(0.0, 0.2, &mut rng),
                grain_width_mean: gw,
                grain_width_std: normal(8.0, 1.5, &mut rng).abs(),
                junction_thickness_mean: jt,
                junction_thickness_std: jt_sd,
                junction_thickness_rms: (jt * jt + jt_sd * jt_sd).sqrt() + normal(0.0, 0.005, &mut rng),
                tls_density: rho,
            }
        })
        .collect()
}
