//! Stepsize rules, batch thresholds and the constants of the convergence
//! bounds, in both the resampling and the finite-sum setting.
//!
//! Throughout, `q = 1 + αL`. Constants containing `1/C_L` (θ, χ and the
//! finite-sum ξ) are also stored multiplied by `C_L`, which stays finite
//! when `ρ = 0`; the theorem right-hand sides are evaluated from those
//! scaled values so that quadratic families get a finite bound.

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::meta::WorkCount;
use crate::rng::{Role, Stream};
use crate::task::{Case, SmoothnessProfile, TaskDistribution};

/// Serialises non-finite floats as the strings `"inf"`, `"-inf"`, `"nan"`.
pub fn extended_f64<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

/// `(1 + x)^k − 1` without cancellation.
pub(crate) fn pow1m(x: f64, k: f64) -> f64 {
    (k * x.ln_1p()).exp_m1()
}

fn check_n_l(n: usize, l: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::param(
            "N",
            "the inner stepsize bound is undefined for N = 0",
        ));
    }
    if !l.is_finite() || l <= 0.0 {
        return Err(Error::param("L", format!("must be positive, got {l}")));
    }
    Ok(())
}

/// `(2^{1/(2N)} − 1)/L`.
pub fn inner_stepsize_bound(n: usize, l: f64) -> Result<f64> {
    check_n_l(n, l)?;
    Ok((std::f64::consts::LN_2 / (2.0 * n as f64)).exp_m1() / l)
}

/// `1/(8NL)`.
pub fn default_alpha(n: usize, l: f64) -> Result<f64> {
    check_n_l(n, l)?;
    Ok(1.0 / (8.0 * n as f64 * l))
}

/// Fails with [`Error::StepsizeTooLarge`] unless `0 ≤ α < bound`.
pub fn check_alpha(alpha: f64, n: usize, l: f64) -> Result<()> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(Error::param("alpha", format!("must be nonnegative, got {alpha}")));
    }
    let bound = inner_stepsize_bound(n, l)?;
    if alpha >= bound {
        return Err(Error::StepsizeTooLarge { alpha, bound, n });
    }
    Ok(())
}

/// Smallest integer strictly above `x`, at least 1.
fn strict_min(x: f64) -> usize {
    ((x.floor() + 1.0).max(1.0)) as usize
}

/// Smallest integer at or above `x`, at least 1.
fn weak_min(x: f64) -> usize {
    (x.ceil().max(1.0)) as usize
}

/// `L̂ = base + slope·(mean sampled gradient norm)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LipschitzModel {
    pub base: f64,
    pub slope: f64,
}

impl LipschitzModel {
    pub fn at(&self, mean_norm: f64) -> f64 {
        self.base + self.slope * mean_norm
    }

    /// Model for either case, defined for any `α ≥ 0` and `N ≥ 0`.
    pub fn new(case: Case, profile: &SmoothnessProfile, alpha: f64, n: usize) -> Self {
        let l = profile.l;
        let rho = profile.rho;
        let al = alpha * l;
        let q = 1.0 + al;
        let nf = n as f64;
        let q_2n = q.powf(2.0 * nf);
        match case {
            Case::Resampling => LipschitzModel {
                base: q_2n * l,
                slope: resampling_c_l(alpha, l, rho, n),
            },
            Case::FiniteSum => {
                let c = finite_sum_c_l(alpha, l, rho, n);
                LipschitzModel {
                    base: q_2n * l + c * profile.b,
                    slope: c,
                }
            }
        }
    }
}

/// `C_L = (q^{N−1}αρ + (ρ/L)q^N(q^{N−1} − 1))q^N`.
fn resampling_c_l(alpha: f64, l: f64, rho: f64, n: usize) -> f64 {
    if n == 0 || rho == 0.0 {
        return 0.0;
    }
    let nf = n as f64;
    let al = alpha * l;
    let q = 1.0 + al;
    let tail = if l > 0.0 {
        (rho / l) * q.powf(nf) * pow1m(al, nf - 1.0)
    } else {
        0.0
    };
    (q.powf(nf - 1.0) * alpha * rho + tail) * q.powf(nf)
}

/// `C_b = C_L = (αρ + (ρ/L)q^{N−1})q^{2N}`.
fn finite_sum_c_l(alpha: f64, l: f64, rho: f64, n: usize) -> f64 {
    if n == 0 || rho == 0.0 || l == 0.0 {
        return 0.0;
    }
    let nf = n as f64;
    let q = 1.0 + alpha * l;
    (alpha * rho + (rho / l) * q.powf(nf - 1.0)) * q.powf(2.0 * nf)
}

/// Threshold on the smoothness-estimate batches.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepsizePlan {
    pub alpha: f64,
    pub alpha_max: f64,
    pub c_beta: f64,
    pub bprime_min: usize,
    /// Always 1 in the finite-sum case, where no per-task batch is drawn.
    pub dl_min: usize,
}

/// Constants of the resampling analysis.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResamplingConstants {
    pub profile: SmoothnessProfile,
    pub alpha: f64,
    pub alpha_max: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub c_beta: f64,
    #[serde(rename = "S")]
    pub s: usize,
    #[serde(rename = "D")]
    pub d: usize,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "B")]
    pub b: usize,
    /// `(1 + αL)^N`.
    pub q_n: f64,
    /// `(1 + αL)^{2N}`.
    pub q_2n: f64,
    #[serde(rename = "C_L")]
    pub c_l: f64,
    #[serde(rename = "C_err1")]
    pub c_err1: f64,
    #[serde(rename = "C_err2")]
    pub c_err2: f64,
    #[serde(rename = "C_squ1")]
    pub c_squ1: f64,
    #[serde(rename = "C_squ2")]
    pub c_squ2: f64,
    #[serde(rename = "C_squ3")]
    pub c_squ3: f64,
    #[serde(serialize_with = "extended_f64")]
    pub chi: f64,
    pub xi: f64,
    pub phi: f64,
    #[serde(serialize_with = "extended_f64")]
    pub theta: f64,
    /// `θ·C_L`.
    pub theta_scaled: f64,
    /// `χ·C_L`.
    pub chi_scaled: f64,
    /// Gradient–meta-gradient gap `(1 + αL)^{2N} − 1`.
    #[serde(rename = "C_l")]
    pub c_gap: f64,
    /// Right-hand side of `|B′| > 4C_L²σ²/(3q^{4N}L²)`.
    pub bprime_threshold: f64,
    /// Right-hand side of `|D_L| > 64σ_g²C_L²/(q^{4N}L²)`.
    pub dl_threshold: f64,
    pub plan: StepsizePlan,
    pub warnings: Vec<String>,
}

/// Constants of the finite-sum analysis.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FiniteSumConstants {
    pub profile: SmoothnessProfile,
    pub alpha: f64,
    pub alpha_max: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub c_beta: f64,
    #[serde(rename = "B")]
    pub b: usize,
    pub q_n: f64,
    pub q_2n: f64,
    #[serde(rename = "C_b")]
    pub c_b: f64,
    #[serde(rename = "C_L")]
    pub c_l: f64,
    #[serde(rename = "A_squ1")]
    pub a_squ1: f64,
    #[serde(rename = "A_squ2")]
    pub a_squ2: f64,
    #[serde(serialize_with = "extended_f64")]
    pub xi: f64,
    #[serde(serialize_with = "extended_f64")]
    pub theta: f64,
    pub phi: f64,
    /// `ξ·C_L`.
    pub xi_scaled: f64,
    /// `θ·C_L`.
    pub theta_scaled: f64,
    #[serde(rename = "C_1")]
    pub c1: f64,
    #[serde(rename = "C_2")]
    pub c2: f64,
    /// Right-hand side of `|B′| ≥ 2C_L²σ²/(C_b b + q^{2N}L)²`.
    pub bprime_threshold: f64,
    pub plan: StepsizePlan,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "case", rename_all = "snake_case")]
pub enum TheoreticalConstants {
    Resampling(ResamplingConstants),
    FiniteSum(FiniteSumConstants),
}

impl TheoreticalConstants {
    pub fn theorem_rhs(&self, delta: f64, k: usize) -> f64 {
        match self {
            TheoreticalConstants::Resampling(c) => c.theorem_rhs(delta, k),
            TheoreticalConstants::FiniteSum(c) => c.theorem_rhs(delta, k),
        }
    }

    pub fn lipschitz_model(&self) -> LipschitzModel {
        match self {
            TheoreticalConstants::Resampling(c) => c.lipschitz_model(),
            TheoreticalConstants::FiniteSum(c) => c.lipschitz_model(),
        }
    }

    pub fn plan(&self) -> &StepsizePlan {
        match self {
            TheoreticalConstants::Resampling(c) => &c.plan,
            TheoreticalConstants::FiniteSum(c) => &c.plan,
        }
    }

    pub fn warnings(&self) -> &[String] {
        match self {
            TheoreticalConstants::Resampling(c) => &c.warnings,
            TheoreticalConstants::FiniteSum(c) => &c.warnings,
        }
    }

    pub fn simplified_checks(&self) -> Vec<SimplifiedBound> {
        match self {
            TheoreticalConstants::Resampling(c) => c.corollary_checks(),
            TheoreticalConstants::FiniteSum(c) => c.corollary_checks(),
        }
    }
}

fn scaled_ratio(scaled: f64, c_l: f64) -> f64 {
    if c_l > 0.0 {
        scaled / c_l
    } else if scaled > 0.0 {
        f64::INFINITY
    } else if scaled < 0.0 {
        f64::NEG_INFINITY
    } else {
        f64::NAN
    }
}

fn check_common(profile: &SmoothnessProfile, alpha: f64, n: usize, c_beta: f64) -> Result<f64> {
    profile.validate()?;
    if !c_beta.is_finite() || c_beta <= 0.0 {
        return Err(Error::param("C_beta", format!("must be positive, got {c_beta}")));
    }
    check_alpha(alpha, n, profile.l)?;
    inner_stepsize_bound(n, profile.l)
}

fn positive_batch(name: &'static str, v: usize) -> Result<f64> {
    if v == 0 {
        return Err(Error::param(name, "batch size must be at least 1"));
    }
    Ok(v as f64)
}

/// Resampling constants for batch sizes `(S, D, T, B)`.
#[allow(clippy::too_many_arguments)]
pub fn resampling_constants(
    profile: &SmoothnessProfile,
    alpha: f64,
    n: usize,
    c_beta: f64,
    s: usize,
    d: usize,
    t: usize,
    b: usize,
) -> Result<ResamplingConstants> {
    let alpha_max = check_common(profile, alpha, n, c_beta)?;
    let (s_f, d_f, t_f, b_f) = (
        positive_batch("S", s)?,
        positive_batch("D", d)?,
        positive_batch("T", t)?,
        positive_batch("B", b)?,
    );
    let SmoothnessProfile {
        l,
        rho,
        sigma,
        sigma_g,
        sigma_h,
        ..
    } = *profile;
    let nf = n as f64;
    let al = alpha * l;
    let q = 1.0 + al;
    let q_n = q.powf(nf);
    let q_2n = q.powf(2.0 * nf);
    let q_4n = q.powf(4.0 * nf);
    let gap = 2.0 - q_2n;

    let c_l = resampling_c_l(alpha, l, rho, n);
    let c_err1 = q_2n * sigma_g;
    let c_err2 = q_4n * rho * sigma_g / (gap * l * l);
    // C_squ1/σ_g², kept separate so that σ_g = 0 does not produce 0/0 in C_squ3.
    let squ1_unit = 3.0 * (alpha * alpha * sigma_h * sigma_h / d_f + q * q).powf(nf);
    let c_squ1 = squ1_unit * sigma_g * sigma_g;
    let c_squ2 = c_squ1 * pow1m(2.0 * al + 2.0 * al * al, nf) * al / q;
    let c_squ3 = 2.0 * squ1_unit * q_2n / (gap * gap);

    let chi_scaled = gap * q_2n * l + sigma * c_l;
    let chi = if c_l > 0.0 {
        gap * q_2n * l / c_l + sigma
    } else {
        f64::INFINITY
    };
    let xi = 6.0 / (c_beta * l) * (0.2 + 2.0 / c_beta) * (c_err1 * c_err1 + c_err2 * c_err2 * sigma * sigma);
    let phi = 2.0 / (c_beta * c_beta * l) * (c_squ1 / t_f + c_squ2 / s_f + c_squ3 * sigma * sigma);
    let bracket = 0.2
        - (0.6 + 6.0 / c_beta) * c_err2 * c_err2 / s_f
        - c_squ3 / (c_beta * b_f)
        - 2.0 / c_beta;
    let theta_scaled = 2.0 * gap / c_beta * bracket;
    let theta = scaled_ratio(theta_scaled, c_l);

    let bprime_threshold = 4.0 * c_l * c_l * sigma * sigma / (3.0 * q_4n * l * l);
    let dl_threshold = 64.0 * sigma_g * sigma_g * c_l * c_l / (q_4n * l * l);

    let mut warnings = Vec::new();
    if theta_scaled <= 0.0 {
        warnings.push(format!(
            "theta = {theta} is not positive; the convergence bound does not apply"
        ));
    }
    Ok(ResamplingConstants {
        profile: *profile,
        alpha,
        alpha_max,
        n,
        c_beta,
        s,
        d,
        t,
        b,
        q_n,
        q_2n,
        c_l,
        c_err1,
        c_err2,
        c_squ1,
        c_squ2,
        c_squ3,
        chi,
        xi,
        phi,
        theta,
        theta_scaled,
        chi_scaled,
        c_gap: pow1m(al, 2.0 * nf),
        bprime_threshold,
        dl_threshold,
        plan: StepsizePlan {
            alpha,
            alpha_max,
            c_beta,
            bprime_min: strict_min(bprime_threshold),
            dl_min: strict_min(dl_threshold),
        },
        warnings,
    })
}

/// Finite-sum constants for meta-batch size `B`.
pub fn finite_sum_constants(
    profile: &SmoothnessProfile,
    alpha: f64,
    n: usize,
    c_beta: f64,
    b: usize,
) -> Result<FiniteSumConstants> {
    let alpha_max = check_common(profile, alpha, n, c_beta)?;
    let b_f = positive_batch("B", b)?;
    let SmoothnessProfile {
        l,
        sigma,
        b: gap_mean,
        b_tilde,
        rho,
        ..
    } = *profile;
    let nf = n as f64;
    let al = alpha * l;
    let q = 1.0 + al;
    let q_n = q.powf(nf);
    let q_2n = q.powf(2.0 * nf);
    let q_4n = q.powf(4.0 * nf);
    let q_8n = q.powf(8.0 * nf);
    let gap = 2.0 - q_2n;

    let c_b = finite_sum_c_l(alpha, l, rho, n);
    let c_l = c_b;
    let a_squ1 = 4.0 * q_4n / (gap * gap);
    let a_squ2 = 4.0 * q_8n * (sigma + gap_mean).powi(2) / (gap * gap)
        + 2.0 * q_4n * (sigma * sigma + b_tilde);
    let xi_scaled = gap * q_2n * l + gap * c_b * gap_mean + c_l * q.powf(3.0 * nf) * gap_mean;
    let xi = if c_l > 0.0 {
        gap * q_2n * l / c_l + gap * c_b * gap_mean / c_l + q.powf(3.0 * nf) * gap_mean
    } else {
        f64::INFINITY
    };
    let bracket = 1.0 / c_beta - (a_squ1 / b_f + 1.0) / (c_beta * c_beta);
    let theta_scaled = gap * bracket;
    let theta = scaled_ratio(theta_scaled, c_l);
    let phi = a_squ2 / (l * c_beta * c_beta);
    let c1 = gap;
    let c2 = pow1m(al, 2.0 * nf) * sigma + q_n * pow1m(al, nf) * gap_mean;
    let denom = c_b * gap_mean + q_2n * l;
    let bprime_threshold = 2.0 * c_l * c_l * sigma * sigma / (denom * denom);

    let mut warnings = Vec::new();
    if theta_scaled <= 0.0 {
        warnings.push(format!(
            "theta = {theta} is not positive; the convergence bound does not apply"
        ));
    }
    Ok(FiniteSumConstants {
        profile: *profile,
        alpha,
        alpha_max,
        n,
        c_beta,
        b,
        q_n,
        q_2n,
        c_b,
        c_l,
        a_squ1,
        a_squ2,
        xi,
        theta,
        phi,
        xi_scaled,
        theta_scaled,
        c1,
        c2,
        bprime_threshold,
        plan: StepsizePlan {
            alpha,
            alpha_max,
            c_beta,
            bprime_min: weak_min(bprime_threshold),
            dl_min: 1,
        },
        warnings,
    })
}

impl ResamplingConstants {
    pub fn lipschitz_model(&self) -> LipschitzModel {
        LipschitzModel {
            base: self.q_2n * self.profile.l,
            slope: self.c_l,
        }
    }

    /// `Y/θ + √(χ/2)·√(Y/θ)` with `Y = Δ/K + ξ/S + φ/B`; `+∞` if `θ ≤ 0`.
    pub fn theorem_rhs(&self, delta: f64, k: usize) -> f64 {
        if self.theta_scaled <= 0.0 || k == 0 {
            return f64::INFINITY;
        }
        let y = delta / k as f64 + self.xi / self.s as f64 + self.phi / self.b as f64;
        let y_over_theta = self.c_l * y / self.theta_scaled;
        let chi_y_over_theta = self.chi_scaled * y / self.theta_scaled;
        y_over_theta + (0.5 * chi_y_over_theta).sqrt()
    }

    /// Bias bound `C_err1/√S + (C_err2/√S)(‖∇𝓛(w)‖ + σ)`.
    pub fn bias_bound(&self, grad_norm: f64) -> f64 {
        let root_s = (self.s as f64).sqrt();
        self.c_err1 / root_s + self.c_err2 / root_s * (grad_norm + self.profile.sigma)
    }

    /// Second-moment bound `C_squ1/T + C_squ2/S + C_squ3(‖∇𝓛(w)‖² + σ²)`.
    pub fn second_moment_bound(&self, grad_norm: f64) -> f64 {
        self.c_squ1 / self.t as f64
            + self.c_squ2 / self.s as f64
            + self.c_squ3 * (grad_norm * grad_norm + self.profile.sigma * self.profile.sigma)
    }

    pub fn corollary_checks(&self) -> Vec<SimplifiedBound> {
        let p = &self.profile;
        let (l, rho, sg, sigma) = (p.l, p.rho, p.sigma_g, p.sigma);
        let has_rho = rho > 0.0;
        vec![
            SimplifiedBound::lt("(1+aL)^N < 5/4", self.q_n, 1.25, true),
            SimplifiedBound::lt("(1+aL)^2N < 3/2", self.q_2n, 1.5, true),
            SimplifiedBound::lt("C_err1 < 5 sigma_g/16", self.c_err1, 5.0 * sg / 16.0, true),
            SimplifiedBound::lt(
                "C_err2 < 3 rho sigma_g/(4L^2)",
                self.c_err2,
                3.0 * rho * sg / (4.0 * l * l),
                true,
            ),
            SimplifiedBound::lt("C_squ1 < 4 sigma_g^2", self.c_squ1, 4.0 * sg * sg, true),
            SimplifiedBound::lt("C_squ2 < sigma_g^2/5", self.c_squ2, sg * sg / 5.0, true),
            SimplifiedBound::le("C_squ3 <= 11", self.c_squ3, 11.0, true),
            SimplifiedBound::lt("C_L < 3 rho/(5L)", self.c_l, 0.6 * rho / l, true),
            SimplifiedBound::gt(
                "C_L > rho/(16L)",
                self.c_l,
                rho / (16.0 * l),
                has_rho && self.n >= 2,
            ),
            SimplifiedBound::ge(
                "theta >= L/(1500 rho)",
                self.theta,
                l / (1500.0 * rho),
                has_rho,
            ),
            SimplifiedBound::le(
                "chi <= 24L^2/rho + sigma",
                self.chi,
                24.0 * l * l / rho + sigma,
                has_rho,
            ),
            SimplifiedBound::lt(
                "xi < 7/(500L)(1/10 + 9 rho sigma^2/(16L^4)) sigma_g^2",
                self.xi,
                7.0 / (500.0 * l) * (0.1 + 9.0 * rho * sigma * sigma / (16.0 * l.powi(4))) * sg * sg,
                true,
            ),
            SimplifiedBound::lt(
                "phi < (sigma_g^2 + 3 sigma^2)/(1000L)",
                self.phi,
                (sg * sg + 3.0 * sigma * sigma) / (1000.0 * l),
                true,
            ),
        ]
    }
}

impl FiniteSumConstants {
    pub fn lipschitz_model(&self) -> LipschitzModel {
        LipschitzModel {
            base: self.q_2n * self.profile.l + self.c_b * self.profile.b,
            slope: self.c_l,
        }
    }

    /// `a + √(ξ·2a + a²)` with `a = Δ/(2θK) + φ/(2θB)`; `+∞` if `θ ≤ 0`.
    pub fn theorem_rhs(&self, delta: f64, k: usize) -> f64 {
        if self.theta_scaled <= 0.0 || k == 0 {
            return f64::INFINITY;
        }
        let z = delta / k as f64 + self.phi / self.b as f64;
        let a = self.c_l * z / (2.0 * self.theta_scaled);
        a + (self.xi_scaled * z / self.theta_scaled + a * a).sqrt()
    }

    /// `A_squ1‖∇𝓛(w)‖² + A_squ2`.
    pub fn second_moment_bound(&self, grad_norm: f64) -> f64 {
        self.a_squ1 * grad_norm * grad_norm + self.a_squ2
    }

    pub fn corollary_checks(&self) -> Vec<SimplifiedBound> {
        let p = &self.profile;
        let (l, rho, sigma, b, bt) = (p.l, p.rho, p.sigma, p.b, p.b_tilde);
        let has_rho = rho > 0.0;
        vec![
            SimplifiedBound::lt("(1+aL)^4N < 2", self.q_2n * self.q_2n, 2.0, true),
            SimplifiedBound::lt("A_squ1 < 32", self.a_squ1, 32.0, true),
            SimplifiedBound::lt(
                "A_squ2 < 8(sigma+b)^2 + 4(sigma^2+b_tilde)",
                self.a_squ2,
                8.0 * (sigma + b).powi(2) + 4.0 * (sigma * sigma + bt),
                true,
            ),
            SimplifiedBound::lt("C_L < 5 rho/(8L)", self.c_l, 5.0 * rho / (8.0 * l), true),
            SimplifiedBound::gt(
                "C_L > rho/(16L)",
                self.c_l,
                rho / (16.0 * l),
                has_rho && self.n >= 2,
            ),
            SimplifiedBound::lt("C_b < rho/(8L)", self.c_b, rho / (8.0 * l), true),
            SimplifiedBound::ge(
                "theta >= L/(200 rho)",
                self.theta,
                l / (200.0 * rho),
                has_rho,
            ),
            SimplifiedBound::le(
                "phi <= (2(sigma+b)^2 + sigma^2 + b_tilde)/(1600L)",
                self.phi,
                (2.0 * (sigma + b).powi(2) + sigma * sigma + bt) / (1600.0 * l),
                true,
            ),
            SimplifiedBound::le(
                "xi <= 24L^2/rho + 37b/16",
                self.xi,
                24.0 * l * l / rho + 37.0 * b / 16.0,
                has_rho,
            ),
        ]
    }
}

/// A simplified closed-form claim compared with the exact constant.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimplifiedBound {
    pub name: &'static str,
    #[serde(serialize_with = "extended_f64")]
    pub value: f64,
    #[serde(serialize_with = "extended_f64")]
    pub claim: f64,
    pub relation: &'static str,
    /// False when the claim does not apply (e.g. needs `ρ > 0`).
    pub applicable: bool,
    pub holds: bool,
}

impl SimplifiedBound {
    fn make(
        name: &'static str,
        value: f64,
        claim: f64,
        relation: &'static str,
        applicable: bool,
        holds: bool,
    ) -> Self {
        SimplifiedBound {
            name,
            value,
            claim,
            relation,
            applicable,
            holds: applicable && holds,
        }
    }

    // A strict claim between two zeros is treated as holding: both sides
    // vanish together when the corresponding noise is absent.
    fn lt(name: &'static str, value: f64, claim: f64, applicable: bool) -> Self {
        let holds = value < claim || (value == 0.0 && claim == 0.0);
        Self::make(name, value, claim, "<", applicable, holds)
    }

    fn le(name: &'static str, value: f64, claim: f64, applicable: bool) -> Self {
        Self::make(name, value, claim, "<=", applicable, value <= claim)
    }

    fn gt(name: &'static str, value: f64, claim: f64, applicable: bool) -> Self {
        Self::make(name, value, claim, ">", applicable, value > claim)
    }

    fn ge(name: &'static str, value: f64, claim: f64, applicable: bool) -> Self {
        Self::make(name, value, claim, ">=", applicable, value >= claim)
    }
}

/// Which growth factor to use in the second-moment path bound.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SecondMomentFactor {
    /// `1 + 2αL + 2α²L²`, as derived in the proof.
    #[default]
    Derived,
    /// `1 + αL + 2α²L²`, as printed in the statement.
    Stated,
}

/// Bounds on `E‖w_j − w̃_j‖` and `E‖w_j − w̃_j‖²` after `j` inner steps
/// with batch size `s`.
pub fn path_moment_bounds(
    profile: &SmoothnessProfile,
    alpha: f64,
    j: usize,
    s: usize,
    factor: SecondMomentFactor,
) -> (f64, f64) {
    let (l, sg) = (profile.l, profile.sigma_g);
    let jf = j as f64;
    let s = s as f64;
    let al = alpha * l;
    // (q^j − 1)/L and (r^j − 1)/L, with their L → 0 limits.
    let first_coeff = if l > 0.0 { pow1m(al, jf) / l } else { jf * alpha };
    let growth = match factor {
        SecondMomentFactor::Derived => 2.0 * al + 2.0 * al * al,
        SecondMomentFactor::Stated => al + 2.0 * al * al,
    };
    let second_coeff = if l > 0.0 {
        pow1m(growth, jf) / l
    } else {
        match factor {
            SecondMomentFactor::Derived => 2.0 * jf * alpha,
            SecondMomentFactor::Stated => jf * alpha,
        }
    };
    let first = first_coeff * sg / s.sqrt();
    let second = second_coeff * alpha * sg * sg / ((1.0 + al) * s);
    (first, second)
}

/// Smoothness estimate together with the work spent on it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LipschitzEstimate {
    pub value: f64,
    pub work: WorkCount,
}

/// Resampling smoothness estimate from `bprime` fresh tasks with `dl`
/// gradient samples each.
///
/// Task draws use `stream.role(Role::TaskDraw)`; the batch of draw `m`
/// uses `stream.slot(m).role(Role::LipschitzSamples)`.
pub fn hat_l_resample(
    dist: &TaskDistribution,
    w: &Vector,
    bprime: usize,
    dl: usize,
    model: &LipschitzModel,
    stream: &Stream,
) -> Result<LipschitzEstimate> {
    if dist.case() != Case::Resampling {
        return Err(Error::WrongCase {
            op: "hat_l_resample",
            case: "finite-sum",
        });
    }
    positive_batch("B'", bprime)?;
    positive_batch("D_L", dl)?;
    let draws = dist.sample_task_indices(bprime, &stream.role(Role::TaskDraw));
    let mut total = 0.0;
    for (m, &i) in draws.iter().enumerate() {
        let task = dist.task(i);
        let batch = task.sample_batch(dl, &stream.slot(m).role(Role::LipschitzSamples))?;
        total += task.stoch_grad(w, &batch)?.norm();
    }
    Ok(LipschitzEstimate {
        value: model.at(total / bprime as f64),
        work: WorkCount {
            grad_evals: (bprime * dl) as u64,
            hess_evals: 0,
        },
    })
}

/// Finite-sum smoothness estimate from `bprime` fresh task draws.
pub fn hat_l_finite(
    dist: &TaskDistribution,
    w: &Vector,
    bprime: usize,
    model: &LipschitzModel,
    stream: &Stream,
) -> Result<LipschitzEstimate> {
    if dist.case() != Case::FiniteSum {
        return Err(Error::WrongCase {
            op: "hat_l_finite",
            case: "resampling",
        });
    }
    positive_batch("B'", bprime)?;
    let draws = dist.sample_task_indices(bprime, &stream.role(Role::TaskDraw));
    let mut total = 0.0;
    let mut evals = 0u64;
    for &i in &draws {
        let task = dist.task(i);
        total += task.query_grad(w)?.norm();
        evals += task.data().map_or(0, |(_, q)| q.len() as u64);
    }
    Ok(LipschitzEstimate {
        value: model.at(total / bprime as f64),
        work: WorkCount {
            grad_evals: evals,
            hess_evals: 0,
        },
    })
}

/// Exact `L_w = base + slope·E_i‖∇l_query,i(w)‖`.
pub fn lipschitz_at(dist: &TaskDistribution, w: &Vector, model: &LipschitzModel) -> Result<f64> {
    let mut mean = 0.0;
    for (task, p) in dist.tasks().iter().zip(dist.weights()) {
        mean += p * task.query_grad(w)?.norm();
    }
    Ok(model.at(mean))
}

/// `β = 1/(C_β·L̂)`.
pub fn meta_stepsize(hat_l: f64, c_beta: f64) -> Result<f64> {
    if !hat_l.is_finite() || hat_l <= 0.0 {
        return Err(Error::param("hat_L", format!("must be positive, got {hat_l}")));
    }
    if !c_beta.is_finite() || c_beta <= 0.0 {
        return Err(Error::param("C_beta", format!("must be positive, got {c_beta}")));
    }
    Ok(1.0 / (c_beta * hat_l))
}
