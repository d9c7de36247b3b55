//! Minimal end-to-end use: three studies in, estimate, interval, and test
//! out.  This is the README example, kept compiling.

use qhet_core::{
    estimate_tau2, interval, test_heterogeneity, ApproxMethod, EffectEstimate, IntervalMethod,
    StudySummary, Tau2Method, VarianceMode,
};

fn main() -> Result<(), qhet_core::Error> {
    let studies = [
        StudySummary::Raw { n_t: 12, n_c: 14, mean_t: 10.2, mean_c: 9.1, sd_pooled: 2.0 },
        StudySummary::Raw { n_t: 20, n_c: 20, mean_t: 5.5, mean_c: 5.0, sd_pooled: 1.1 },
        StudySummary::Raw { n_t: 30, n_c: 30, mean_t: 3.2, mean_c: 2.1, sd_pooled: 1.9 },
    ];
    let estimates: Vec<EffectEstimate> = studies
        .iter()
        .map(EffectEstimate::from_summary)
        .collect::<Result<_, _>>()?;

    let tau2 = estimate_tau2(&estimates, Tau2Method::Ssc)?;
    let ci = interval(&estimates, IntervalMethod::Fpc, 0.95)?;
    let test =
        test_heterogeneity(&estimates, ApproxMethod::Fsw, VarianceMode::Conditional, 0.0, 0.05)?;
    println!(
        "tau2 = {:.3} [{:.3}, {:.3}], p = {:.4}",
        tau2.value, ci.lower, ci.upper, test.p_value
    );
    Ok(())
}
