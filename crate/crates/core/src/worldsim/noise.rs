use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::geom::Pose2;
use crate::rng::Rng;

/// Best–Fisher rejection sampler for von Mises(0, κ). `κ = ∞` returns 0.
pub fn sample_von_mises(kappa: f64, rng: &mut Rng) -> f64 {
    if kappa.is_infinite() {
        return 0.0;
    }
    if kappa < 1e-8 {
        return rng.gen_range(-PI..PI);
    }
    let tau = 1.0 + (1.0 + 4.0 * kappa * kappa).sqrt();
    let rho = (tau - (2.0 * tau).sqrt()) / (2.0 * kappa);
    let r = (1.0 + rho * rho) / (2.0 * rho);
    loop {
        let u1: f64 = rng.gen();
        let u2: f64 = rng.gen();
        let u3: f64 = rng.gen();
        let z = (PI * u1).cos();
        let f = ((1.0 + r * z) / (r + z)).clamp(-1.0, 1.0);
        let c = kappa * (r - f);
        if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
            return if u3 > 0.5 { f.acos() } else { -f.acos() };
        }
    }
}

/// Adds i.i.d. N(0, σ²) to each position component and a von Mises(0, κ)
/// heading offset. Always consumes the same draws for a given κ regime, so
/// sweeping σ with a cloned generator yields common random numbers.
pub fn perturb_pose(pose: &Pose2, sigma_pos: f64, kappa: f64, rng: &mut Rng) -> Pose2 {
    let nx: f64 = StandardNormal.sample(rng);
    let ny: f64 = StandardNormal.sample(rng);
    let dth = sample_von_mises(kappa, rng);
    Pose2::new(pose.x + sigma_pos * nx, pose.y + sigma_pos * ny, pose.theta + dth)
}

/// `sqrt(-2 ln R)` with `R` the mean resultant length.
pub fn circular_std(angles: &[f64]) -> f64 {
    let n = angles.len() as f64;
    let (s, c) = angles
        .iter()
        .fold((0.0, 0.0), |(s, c), a| (s + a.sin(), c + a.cos()));
    let r = (s / n).hypot(c / n);
    (-2.0 * r.ln()).sqrt()
}
