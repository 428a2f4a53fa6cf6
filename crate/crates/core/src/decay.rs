//! Exponential decay law for similarity changes: log-linear least-squares fit of
//! `N(t) = N₀·e^(−λt)`, a power-law (Pareto) alternative for comparison, and the
//! quantities derived from λ (mean lifetime, half-life, change/stability
//! probabilities and horizons).

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayModel {
    pub n0: f64,
    /// Decay rate per time unit of the fitted points (buckets in the pipeline).
    pub lambda: f64,
    /// Root-mean-square residual on the count scale.
    pub residual_std: f64,
    /// Root-mean-square residual of `ln N`.
    pub log_residual_std: f64,
    pub points: usize,
    /// Points dropped because `N <= 0`.
    pub excluded: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParetoModel {
    pub c: f64,
    pub alpha: f64,
    pub residual_std: f64,
    pub log_residual_std: f64,
    pub points: usize,
    pub excluded: usize,
}

impl DecayModel {
    /// A model with known rate, e.g. for scheduling without a fit.
    pub fn with_lambda(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("decay rate {lambda} must be positive")));
        }
        Ok(DecayModel {
            n0: 1.0,
            lambda,
            residual_std: 0.0,
            log_residual_std: 0.0,
            points: 0,
            excluded: 0,
        })
    }

    pub fn predict(&self, t: f64) -> f64 {
        self.n0 * (-self.lambda * t).exp()
    }

    /// τ = 1/λ.
    pub fn mean_lifetime(&self) -> f64 {
        1.0 / self.lambda
    }

    /// T½ = τ·ln 2.
    pub fn half_life(&self) -> f64 {
        self.mean_lifetime() * std::f64::consts::LN_2
    }

    /// Probability that a coefficient has changed by time `t`.
    pub fn p_change(&self, t: f64) -> f64 {
        -(-self.lambda * t).exp_m1()
    }

    /// Probability that a coefficient is still unchanged at time `t`.
    pub fn q_stable(&self, t: f64) -> f64 {
        (-self.lambda * t).exp()
    }

    /// Time during which a coefficient stays unchanged with probability `p_st`.
    pub fn stable_horizon(&self, p_st: f64) -> Result<f64> {
        if !(p_st > 0.0 && p_st <= 1.0) {
            return Err(Error::InvalidArgument(format!("p_st = {p_st} must lie in (0, 1]")));
        }
        Ok(-p_st.ln() / self.lambda)
    }

    /// Time by which a coefficient has changed with probability `q_st`.
    pub fn change_horizon(&self, q_st: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&q_st) {
            return Err(Error::InvalidArgument(format!("q_st = {q_st} must lie in [0, 1)")));
        }
        Ok(-(-q_st).ln_1p() / self.lambda)
    }
}

impl ParetoModel {
    pub fn predict(&self, t: f64) -> f64 {
        self.c * t.powf(-self.alpha)
    }
}

struct LineFit {
    intercept: f64,
    slope: f64,
}

/// Ordinary least squares of `y` on `x` from the normal equations in moment form:
/// slope = (⟨xy⟩ − x̄ȳ)/(⟨x²⟩ − x̄²), intercept = ȳ − slope·x̄.
fn ols(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    let distinct = xs.iter().any(|&x| x != xs[0]);
    if xs.len() < 2 || !distinct {
        return Err(Error::InsufficientData(format!(
            "need at least 2 distinct abscissae, got {} point(s)",
            xs.len()
        )));
    }
    let m = xs.len() as f64;
    let x_mean = xs.iter().sum::<f64>() / m;
    let y_mean = ys.iter().sum::<f64>() / m;
    // centered sums give the same solution with far less cancellation
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - x_mean) * (y - y_mean);
        sxx += (x - x_mean) * (x - x_mean);
    }
    let slope = sxy / sxx;
    Ok(LineFit {
        intercept: y_mean - slope * x_mean,
        slope,
    })
}

fn rms(residuals: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = residuals.fold((0.0, 0usize), |(s, n), r| (s + r * r, n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Fits `N(t) = N₀·e^(−λt)` by least squares on `ln N`.
pub fn fit_exponential(points: &[(f64, f64)]) -> Result<DecayModel> {
    let kept: Vec<(f64, f64)> = points.iter().copied().filter(|&(_, n)| n > 0.0).collect();
    let excluded = points.len() - kept.len();
    let ts: Vec<f64> = kept.iter().map(|p| p.0).collect();
    let logs: Vec<f64> = kept.iter().map(|p| p.1.ln()).collect();
    let line = ols(&ts, &logs)?;
    let (ln_n0, lambda) = (line.intercept, -line.slope);
    if !(lambda > 0.0) {
        return Err(Error::InsufficientData(format!(
            "points do not decay (fitted rate {lambda})"
        )));
    }
    let n0 = ln_n0.exp();
    Ok(DecayModel {
        n0,
        lambda,
        residual_std: rms(kept.iter().map(|&(t, n)| n - n0 * (-lambda * t).exp())),
        log_residual_std: rms(ts.iter().zip(&logs).map(|(&t, &l)| l - (ln_n0 - lambda * t))),
        points: kept.len(),
        excluded,
    })
}

/// Fits `N(t) = c·t^(−α)` by least squares on `(ln t, ln N)`.
pub fn fit_pareto(points: &[(f64, f64)]) -> Result<ParetoModel> {
    let kept: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|&(t, n)| t > 0.0 && n > 0.0)
        .collect();
    let excluded = points.len() - kept.len();
    let lts: Vec<f64> = kept.iter().map(|p| p.0.ln()).collect();
    let logs: Vec<f64> = kept.iter().map(|p| p.1.ln()).collect();
    let line = ols(&lts, &logs)?;
    let (ln_c, alpha) = (line.intercept, -line.slope);
    if !(alpha > 0.0) {
        return Err(Error::InsufficientData(format!(
            "points do not decay (fitted exponent {alpha})"
        )));
    }
    let c = ln_c.exp();
    Ok(ParetoModel {
        c,
        alpha,
        residual_std: rms(kept.iter().map(|&(t, n)| n - c * t.powf(-alpha))),
        log_residual_std: rms(lts.iter().zip(&logs).map(|(&lt, &l)| l - (ln_c - alpha * lt))),
        points: kept.len(),
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PreferredLaw {
    Exponential,
    Pareto,
}

/// Both candidate laws fitted to the same points. Either fit may fail on its own.
#[derive(Debug)]
pub struct FitComparison {
    pub exponential: Result<DecayModel>,
    pub pareto: Result<ParetoModel>,
}

pub const WORKING_HYPOTHESIS_NOTE: &str =
    "the smaller residual favours a law, but residual gaps within the scatter of the data only support it as a working hypothesis";

impl FitComparison {
    pub fn new(points: &[(f64, f64)]) -> Self {
        FitComparison {
            exponential: fit_exponential(points),
            pareto: fit_pareto(points),
        }
    }

    /// The law with the smaller count-scale residual, when both fits exist.
    pub fn preferred(&self) -> Option<PreferredLaw> {
        match (&self.exponential, &self.pareto) {
            (Ok(e), Ok(p)) => Some(if e.residual_std <= p.residual_std {
                PreferredLaw::Exponential
            } else {
                PreferredLaw::Pareto
            }),
            (Ok(_), Err(_)) => Some(PreferredLaw::Exponential),
            (Err(_), Ok(_)) => Some(PreferredLaw::Pareto),
            _ => None,
        }
    }

    /// Sectioned `key = value` report.
    pub fn report(&self) -> String {
        let mut out = String::new();
        out.push_str("[exponential]\n");
        match &self.exponential {
            Ok(m) => {
                kv(&mut out, "n0", m.n0);
                kv(&mut out, "lambda", m.lambda);
                kv(&mut out, "tau", m.mean_lifetime());
                kv(&mut out, "half_life", m.half_life());
                kv(&mut out, "residual_std", m.residual_std);
                kv(&mut out, "log_residual_std", m.log_residual_std);
                let _ = writeln!(out, "points = {}\nexcluded = {}", m.points, m.excluded);
            }
            Err(e) => {
                let _ = writeln!(out, "error = {e}");
            }
        }
        out.push_str("\n[pareto]\n");
        match &self.pareto {
            Ok(m) => {
                kv(&mut out, "c", m.c);
                kv(&mut out, "alpha", m.alpha);
                kv(&mut out, "residual_std", m.residual_std);
                kv(&mut out, "log_residual_std", m.log_residual_std);
                let _ = writeln!(out, "points = {}\nexcluded = {}", m.points, m.excluded);
            }
            Err(e) => {
                let _ = writeln!(out, "error = {e}");
            }
        }
        out.push_str("\n[comparison]\n");
        let preferred = match self.preferred() {
            Some(PreferredLaw::Exponential) => "exponential",
            Some(PreferredLaw::Pareto) => "pareto",
            None => "none",
        };
        let _ = writeln!(out, "preferred = {preferred}\nnote = {WORKING_HYPOTHESIS_NOTE}");
        out
    }

    /// `model,param_a,param_b,residual_std,log_residual_std,points,excluded`.
    pub fn csv(&self) -> String {
        let mut out = String::from("model,param_a,param_b,residual_std,log_residual_std,points,excluded\n");
        if let Ok(m) = &self.exponential {
            let _ = writeln!(
                out,
                "exponential,{},{},{},{},{},{}",
                fmt_sig(m.n0),
                fmt_sig(m.lambda),
                fmt_sig(m.residual_std),
                fmt_sig(m.log_residual_std),
                m.points,
                m.excluded
            );
        }
        if let Ok(m) = &self.pareto {
            let _ = writeln!(
                out,
                "pareto,{},{},{},{},{},{}",
                fmt_sig(m.c),
                fmt_sig(m.alpha),
                fmt_sig(m.residual_std),
                fmt_sig(m.log_residual_std),
                m.points,
                m.excluded
            );
        }
        out
    }
}

fn kv(out: &mut String, key: &str, value: f64) {
    let _ = writeln!(out, "{key} = {}", fmt_sig(value));
}

/// Formats with 6 significant digits, `%g` style.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific notation");
    let exp: i32 = exp.parse().expect("exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{}{:02}", trim_zeros(mantissa.to_string()), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}
