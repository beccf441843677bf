//! Photon-physics kernels: random number generation, step sampling,
//! Henyey-Greenstein scattering, Fresnel reflectance, direction updates,
//! absorption bookkeeping, and time-of-flight.
//!
//! All functions are pure; the RNG state is passed explicitly, so each
//! worker thread owns its own stream.

use crate::math::Vec3;
use crate::Error;

/// Speed of light in vacuum, mm/ns.
pub const C0_MM_PER_NS: f64 = 299.7924580;

/// Smallest positive value `next_unit` can produce (2^-53); used to remap
/// an exact zero before taking `-ln(U)`.
pub const MIN_UNIT: f64 = 1.0 / (1u64 << 53) as f64;

/// xorshift128+ generator (Vigna's published constants a=23, b=18, c=5).
///
/// Period 2^128 - 1; the state must never be all zero. `draws` counts how
/// many 64-bit values have been produced, which makes per-photon RNG
/// consumption auditable in tests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    s: [u64; 2],
    draws: u64,
}

impl Rng {
    /// Builds a generator from a raw 128-bit state.
    pub fn from_state(state: [u64; 2]) -> Result<Self, Error> {
        if state == [0, 0] {
            return Err(Error::Rng("all-zero seed is not a valid xorshift128+ state".into()));
        }
        Ok(Rng { s: state, draws: 0 })
    }

    /// Derives an independent stream from a user seed and a stream index
    /// (worker id). Two splitmix64 steps expand the mixed seed into the
    /// 128-bit state.
    pub fn split(seed: u64, stream: u64) -> Self {
        let mut x = seed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let s0 = splitmix64(&mut x);
        let s1 = splitmix64(&mut x);
        let state = if (s0 | s1) == 0 { [s0, 0x9E37_79B9_7F4A_7C15] } else { [s0, s1] };
        Rng { s: state, draws: 0 }
    }

    /// Number of 64-bit draws produced so far.
    #[inline]
    pub fn draws(&self) -> u64 {
        self.draws
    }

    #[inline]
    pub fn state(&self) -> [u64; 2] {
        self.s
    }

    /// One xorshift128+ step.
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let mut s1 = self.s[0];
        let s0 = self.s[1];
        self.s[0] = s0;
        s1 ^= s1 << 23;
        self.s[1] = s1 ^ s0 ^ (s1 >> 18) ^ (s0 >> 5);
        self.draws += 1;
        self.s[1].wrapping_add(s0)
    }

    /// Uniform double in [0, 1), built from the high 53 bits.
    #[inline]
    pub fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * MIN_UNIT
    }
}

#[inline]
fn splitmix64(x: &mut u64) -> u64 {
    *x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Unit-less scattering length from a uniform draw, `s = -ln(U)`.
///
/// `U = 0` (possible from the closed-interval bit conversion) is remapped
/// to the smallest positive unit double.
#[inline]
pub fn sample_step(u: f64) -> f64 {
    let u = if u <= 0.0 { MIN_UNIT } else { u };
    -u.ln()
}

/// A sampled scattering deflection: polar cosine and azimuth.
#[derive(Debug, Clone, Copy)]
pub struct ScatterSample {
    /// cos(theta), in [-1, 1].
    pub cos_theta: f64,
    /// Azimuthal angle, radians in [0, 2*pi).
    pub phi: f64,
}

/// Samples the Henyey-Greenstein phase function.
///
/// For g = 0 the polar cosine is uniform on [-1, 1]; otherwise the
/// standard inverse-CDF form is used. `phi = 2*pi*u2`.
#[inline]
pub fn sample_hg(g: f64, u1: f64, u2: f64) -> ScatterSample {
    debug_assert!((-1.0..=1.0).contains(&g));
    let cos_theta = if g == 0.0 {
        2.0 * u1 - 1.0
    } else {
        let f = (1.0 - g * g) / (1.0 - g + 2.0 * g * u1);
        ((1.0 + g * g - f * f) / (2.0 * g)).clamp(-1.0, 1.0)
    };
    ScatterSample { cos_theta, phi: std::f64::consts::TAU * u2 }
}

/// Rotates a unit direction by a scattering sample using the conventional
/// local-frame formulas; falls back to the polar branch when |v_z| is
/// within 1e-12 of 1. The result is renormalized.
pub fn rotate_direction(v: Vec3, sample: &ScatterSample) -> Vec3 {
    let cos_t = sample.cos_theta;
    let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
    let (sin_p, cos_p) = sample.phi.sin_cos();

    let out = if v.z.abs() > 1.0 - 1e-12 {
        Vec3::new(sin_t * cos_p, sin_t * sin_p, cos_t * v.z.signum())
    } else {
        let tmp = (1.0 - v.z * v.z).sqrt();
        Vec3::new(
            sin_t * (v.x * v.z * cos_p - v.y * sin_p) / tmp + v.x * cos_t,
            sin_t * (v.y * v.z * cos_p + v.x * sin_p) / tmp + v.y * cos_t,
            -sin_t * cos_p * tmp + v.z * cos_t,
        )
    };
    out.normalized()
}

/// Unpolarized Fresnel reflectance (Rs + Rp)/2 for a ray crossing from
/// refractive index `n1` to `n2` with incidence cosine `cos_i` in (0, 1].
/// Returns 1.0 under total internal reflection.
pub fn fresnel_reflectance(n1: f64, n2: f64, cos_i: f64) -> f64 {
    debug_assert!(cos_i > 0.0 && cos_i <= 1.0 + 1e-12);
    if n1 == n2 {
        return 0.0;
    }
    let cos_i = cos_i.min(1.0);
    let eta = n1 / n2;
    let sin_t2 = eta * eta * (1.0 - cos_i * cos_i);
    if sin_t2 >= 1.0 {
        return 1.0;
    }
    let cos_t = (1.0 - sin_t2).sqrt();
    let rs = (n1 * cos_i - n2 * cos_t) / (n1 * cos_i + n2 * cos_t);
    let rp = (n1 * cos_t - n2 * cos_i) / (n1 * cos_t + n2 * cos_i);
    0.5 * (rs * rs + rp * rp)
}

/// Mirror reflection about `normal`. Requires `v . normal < 0`.
#[inline]
pub fn reflect(v: Vec3, normal: Vec3) -> Vec3 {
    debug_assert!(v.dot(normal) < 0.0);
    (v - normal * (2.0 * v.dot(normal))).normalized()
}

/// Snell-law refraction across an `n1 -> n2` interface. The caller must
/// have ruled out total internal reflection (fresnel_reflectance < 1).
#[inline]
pub fn refract(v: Vec3, normal: Vec3, n1: f64, n2: f64) -> Vec3 {
    let cos_i = -v.dot(normal);
    debug_assert!(cos_i > 0.0);
    let eta = n1 / n2;
    let sin_t2 = eta * eta * (1.0 - cos_i * cos_i);
    debug_assert!(sin_t2 < 1.0, "refract called under total internal reflection");
    let cos_t = (1.0 - sin_t2).sqrt();
    (v * eta + normal * (eta * cos_i - cos_t)).normalized()
}

/// Beer-Lambert attenuation over a path of length `l` (mm) in a medium
/// with absorption `mua` (1/mm).
///
/// Returns the surviving weight and the path-integrated weight
/// `phi = w * (1 - exp(-mua*l)) / mua` (mm), the fluence contribution of
/// the segment. A second-order series is used when `mua * l < 1e-8`,
/// which also covers the lossless `mua = 0` limit. `w - w'` equals
/// `mua * phi` up to rounding, so deposited energy balances exactly.
#[inline]
pub fn attenuate(w: f64, mua: f64, l: f64) -> (f64, f64) {
    debug_assert!(mua >= 0.0 && l >= 0.0);
    let x = mua * l;
    if x < 1e-8 {
        let phi = w * l * (1.0 - 0.5 * x);
        (w - mua * phi, phi)
    } else {
        let a = -(-x).exp_m1(); // 1 - e^(-x), accurate for small x
        let phi = w * a / mua;
        (w - w * a, phi)
    }
}

/// Advances time-of-flight by `l` mm travelled in a medium of index `n`.
#[inline]
pub fn advance_time(t: f64, l: f64, n: f64) -> f64 {
    t + l * n / C0_MM_PER_NS
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xorshift_matches_reference_vectors() {
        // First outputs of the published algorithm for state (1, 2),
        // transcribed and evaluated independently.
        let mut rng = Rng::from_state([1, 2]).unwrap();
        assert_eq!(rng.next_u64(), 0x0000_0000_0080_0025);
        assert_eq!(rng.next_u64(), 0x0000_0000_0204_0083);
        assert_eq!(rng.next_u64(), 0x0000_4000_020c_2460);
        assert_eq!(rng.draws(), 3);
    }

    #[test]
    fn all_zero_seed_is_rejected() {
        assert!(Rng::from_state([0, 0]).is_err());
        assert!(Rng::from_state([0, 1]).is_ok());
    }

    #[test]
    fn unit_draws_are_in_half_open_interval() {
        let mut rng = Rng::split(7, 0);
        for _ in 0..10_000 {
            let u = rng.next_unit();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn unit_stream_mean_is_near_half() {
        let mut rng = Rng::split(42, 0);
        let n = 1_000_000;
        let mean = (0..n).map(|_| rng.next_unit()).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.002, "mean = {mean}");
    }

    #[test]
    fn split_streams_have_distinct_prefixes() {
        // 1024 streams, 64 draws each: no collision anywhere.
        let mut seen = std::collections::HashSet::new();
        for stream in 0..1024u64 {
            let mut rng = Rng::split(12345, stream);
            for _ in 0..64 {
                assert!(seen.insert(rng.next_u64()), "collision in stream {stream}");
            }
        }
    }

    #[test]
    fn step_sampling_inverts_the_exponential() {
        assert_eq!(sample_step(1.0), 0.0);
        assert!((sample_step((-1.0f64).exp()) - 1.0).abs() < 1e-15);
        // U = 0 is remapped, not -inf.
        assert!(sample_step(0.0).is_finite());
        assert!(sample_step(0.0) > 0.0);
    }

    #[test]
    fn step_sample_mean_is_one() {
        let mut rng = Rng::split(3, 0);
        let n = 1_000_000;
        let mean = (0..n).map(|_| sample_step(rng.next_unit())).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.003, "mean = {mean}");
    }

    #[test]
    fn hg_isotropic_mean_cosine_is_zero() {
        let mut rng = Rng::split(11, 0);
        let n = 1_000_000;
        let mean = (0..n)
            .map(|_| sample_hg(0.0, rng.next_unit(), rng.next_unit()).cos_theta)
            .sum::<f64>()
            / n as f64;
        assert!(mean.abs() < 0.002, "mean = {mean}");
    }

    #[test]
    fn hg_first_moment_equals_g() {
        let mut rng = Rng::split(13, 0);
        for &g in &[-0.5, 0.5, 0.9] {
            let n = 1_000_000usize;
            let (mut sum, mut sum2) = (0.0, 0.0);
            for _ in 0..n {
                let c = sample_hg(g, rng.next_unit(), rng.next_unit()).cos_theta;
                sum += c;
                sum2 += c * c;
            }
            let mean = sum / n as f64;
            let var = (sum2 / n as f64 - mean * mean).max(0.0);
            let three_sigma = 3.0 * (var / n as f64).sqrt();
            assert!((mean - g).abs() < three_sigma, "g={g}: mean={mean}, 3s={three_sigma}");
        }
    }

    #[test]
    fn rotation_preserves_unit_norm_and_identity() {
        let v = Vec3::new(0.0, 0.0, 1.0);
        let out = rotate_direction(v, &ScatterSample { cos_theta: 1.0, phi: 0.3 });
        assert!(out.max_abs_diff(v) < 1e-12);

        let mut rng = Rng::split(17, 0);
        let mut v = Vec3::new(0.6, 0.0, 0.8);
        for _ in 0..10_000 {
            let s = sample_hg(0.7, rng.next_unit(), rng.next_unit());
            v = rotate_direction(v, &s);
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fresnel_matched_media_and_normal_incidence() {
        assert_eq!(fresnel_reflectance(1.37, 1.37, 0.5), 0.0);
        // Closed form ((n1-n2)/(n1+n2))^2 at normal incidence.
        let expect = ((1.0 - 1.37f64) / (1.0 + 1.37)).powi(2);
        assert!((fresnel_reflectance(1.0, 1.37, 1.0) - expect).abs() < 1e-12);
        assert!((expect - 0.024372874717370804).abs() < 1e-15);
    }

    #[test]
    fn fresnel_total_internal_reflection() {
        // Critical angle for 1.37 -> 1 is asin(1/1.37) ~= 46.88 degrees.
        let cos_60 = 0.5;
        assert_eq!(fresnel_reflectance(1.37, 1.0, cos_60), 1.0);
        let cos_40 = 40f64.to_radians().cos();
        assert!(fresnel_reflectance(1.37, 1.0, cos_40) < 1.0);
    }

    #[test]
    fn fresnel_reciprocity() {
        // R(n1, n2, theta_i) = R(n2, n1, theta_t) when both angles are real.
        let (n1, n2) = (1.0, 1.37);
        for deg in [5.0, 25.0, 45.0, 70.0] {
            let ti = (deg as f64).to_radians();
            let sin_t = n1 / n2 * ti.sin();
            let tt = sin_t.asin();
            let a = fresnel_reflectance(n1, n2, ti.cos());
            let b = fresnel_reflectance(n2, n1, tt.cos());
            assert!((a - b).abs() < 1e-12, "deg={deg}: {a} vs {b}");
        }
    }

    #[test]
    fn reflect_and_refract_basic_vectors() {
        let n = Vec3::new(0.0, 0.0, 1.0);
        let down = Vec3::new(0.0, 0.0, -1.0);
        assert!(reflect(down, n).max_abs_diff(Vec3::new(0.0, 0.0, 1.0)) < 1e-15);
        // Normal incidence passes through undeviated for any index pair.
        assert!(refract(down, n, 1.0, 1.37).max_abs_diff(down) < 1e-15);
    }

    #[test]
    fn refraction_satisfies_snell_law_at_45_degrees() {
        let n = Vec3::new(0.0, 0.0, 1.0);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let v = Vec3::new(s, 0.0, -s);
        let out = refract(v, n, 1.0, 1.37);
        let sin_t = s / 1.37;
        assert!((out.x - sin_t).abs() < 1e-12);
        assert!((out.z + (1.0 - sin_t * sin_t).sqrt()).abs() < 1e-12);
        assert!((out.norm() - 1.0).abs() < 1e-12);
        // Snell residual: n1 sin_i = n2 sin_t on the tangential component.
        let tangential = (out - n * out.dot(n)).norm();
        assert!((1.0 * s - 1.37 * tangential).abs() < 1e-12);
    }

    #[test]
    fn attenuation_closed_forms_and_conservation() {
        // Lossless limit.
        let (w, phi) = attenuate(0.8, 0.0, 2.5);
        assert_eq!(w, 0.8);
        assert!((phi - 0.8 * 2.5).abs() < 1e-15);

        // mua = 1, L = 1, w = 1.
        let (w, phi) = attenuate(1.0, 1.0, 1.0);
        assert!((w - (-1.0f64).exp()).abs() < 1e-15);
        assert!((phi - (1.0 - (-1.0f64).exp())).abs() < 1e-15);

        // mua = 0.005, L = 10: survival factor e^(-0.05).
        let (w, _) = attenuate(1.0, 0.005, 10.0);
        assert!((w - 0.951229424500714).abs() < 1e-15);

        // Deposited energy balances: w - w' = mua * phi up to rounding.
        for &(w0, mua, l) in &[(1.0, 0.3, 2.0), (0.5, 1e-9, 4.0), (0.9, 10.0, 0.05)] {
            let (w1, phi) = attenuate(w0, mua, l);
            assert!((w0 - w1 - mua * phi).abs() < 1e-15 * w0.max(1.0));
        }
    }

    #[test]
    fn time_of_flight_advances_by_optical_path() {
        assert_eq!(advance_time(1.0, 0.0, 1.4), 1.0);
        assert!((advance_time(0.0, C0_MM_PER_NS, 1.0) - 1.0).abs() < 1e-15);
        assert!((advance_time(0.0, 10.0, 1.37) - 0.045698281042146835).abs() < 1e-15);
    }

    #[test]
    fn reflect_transmit_split_matches_reflectance() {
        // Sampling U < R over many trials reproduces R within 3 sigma.
        let r = fresnel_reflectance(1.0, 1.37, 45f64.to_radians().cos());
        let mut rng = Rng::split(23, 0);
        let n = 1_000_000;
        let hits = (0..n).filter(|_| rng.next_unit() < r).count() as f64;
        let sigma = (n as f64 * r * (1.0 - r)).sqrt();
        assert!((hits - n as f64 * r).abs() < 3.0 * sigma);
    }
}
