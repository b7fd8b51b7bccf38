//! Deterministic random topology generation.
//!
//! Transmitters are placed uniformly in distance from the gateway inside a
//! band, gains follow the power-law model `h = D^{-l}`, and an optional
//! lognormal shadowing multiplier (off by default) perturbs them. The RNG is
//! ChaCha8, which is platform-stable; the algorithm name is pinned in the
//! run manifest.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TopologySpec;

pub const RNG_ALGORITHM: &str = "chacha8";

#[derive(Debug, Clone)]
pub struct Topology {
    /// ST-to-gateway distances, meters.
    pub d_k: Vec<f64>,
    /// PT-to-ST distances, meters.
    pub d_pt_k: Vec<f64>,
    pub h_k: Vec<f64>,
    pub h_pt_k: Vec<f64>,
}

/// Draws `k` transmitters. The same `(spec, seed)` always yields the same
/// arrays, and a smaller `k` yields a prefix of a larger one, so sweeps over
/// network size grow the topology instead of reshuffling it.
pub fn generate_topology(k: usize, spec: &TopologySpec, seed: u64) -> Topology {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = spec.pathloss_exp;
    let mut d_k = Vec::with_capacity(k);
    let mut d_pt_k = Vec::with_capacity(k);
    let mut h_k = Vec::with_capacity(k);
    let mut h_pt_k = Vec::with_capacity(k);
    for _ in 0..k {
        // Uniform on (1, d_max]: below one meter the power law amplifies.
        let d: f64 = 1.0 + rng.gen::<f64>() * (spec.d_max_m - 1.0);
        let dp: f64 =
            spec.pt_dist_m[0] + rng.gen::<f64>() * (spec.pt_dist_m[1] - spec.pt_dist_m[0]);
        let shadow = if spec.shadowing_db > 0.0 {
            // Lognormal in dB: 10^(N(0, sigma_db) / 10).
            let (u1, u2): (f64, f64) = (rng.gen(), rng.gen());
            let z = (-2.0 * u1.max(1e-300).ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
            10f64.powf(spec.shadowing_db * z / 10.0)
        } else {
            1.0
        };
        d_k.push(d);
        d_pt_k.push(dp);
        h_k.push(d.powf(-l) * shadow);
        h_pt_k.push(dp.powf(-l));
    }
    Topology {
        d_k,
        d_pt_k,
        h_k,
        h_pt_k,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> TopologySpec {
        TopologySpec {
            d_max_m: 30.0,
            pathloss_exp: 3.5,
            pt_dist_m: [5.0, 15.0],
            shadowing_db: 0.0,
        }
    }

    #[test]
    fn fixed_seed_reproduces() {
        let a = generate_topology(6, &spec(), 7);
        let b = generate_topology(6, &spec(), 7);
        assert_eq!(a.h_k, b.h_k);
        assert_eq!(a.h_pt_k, b.h_pt_k);
    }

    #[test]
    fn smaller_k_is_a_prefix() {
        let a = generate_topology(3, &spec(), 7);
        let b = generate_topology(8, &spec(), 7);
        assert_eq!(a.h_k[..], b.h_k[..3]);
    }

    #[test]
    fn powerlaw_matches_distance() {
        let t = generate_topology(40, &spec(), 11);
        for (d, h) in t.d_k.iter().zip(&t.h_k) {
            assert!(*d > 1.0 && *d <= 30.0);
            assert!((h - d.powf(-3.5)).abs() <= 1e-15 * h);
        }
        // Spot value: D = 10, l = 3.5.
        assert!((10f64.powf(-3.5) - 3.1622776601683794e-4).abs() < 1e-18);
    }

    #[test]
    fn unit_distance_gives_unit_gain() {
        let mut s = spec();
        s.d_max_m = 1.0 + 1e-12;
        let t = generate_topology(4, &s, 3);
        for h in &t.h_k {
            assert!((h - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn shadowing_perturbs_but_preserves_scale() {
        let mut s = spec();
        s.shadowing_db = 4.0;
        let t = generate_topology(200, &s, 5);
        let base = generate_topology(200, &spec(), 5);
        let mut ratio_log_mean = 0.0;
        for (h, d) in t.h_k.iter().zip(&t.d_k) {
            let r = h / d.powf(-3.5);
            assert!(r > 0.0);
            ratio_log_mean += r.ln();
        }
        ratio_log_mean /= t.h_k.len() as f64;
        // Zero-mean in log-space, up to sampling noise.
        assert!(ratio_log_mean.abs() < 0.5);
        assert_ne!(t.h_k, base.h_k);
    }
}
