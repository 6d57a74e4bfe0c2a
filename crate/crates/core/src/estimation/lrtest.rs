use serde::{Deserialize, Serialize};

use super::FitResult;
use crate::error::{Error, Result};
use crate::numerics::chi_square_sf;

/// Statistics within this much below zero are optimizer noise.
const NEGATIVE_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrTest {
    pub statistic: f64,
    pub df: u32,
    pub p_value: f64,
}

/// `2 (ll_unrestricted - ll_restricted)` against chi-square with `df`.
pub fn lr_statistic(ll_restricted: f64, ll_unrestricted: f64, df: u32) -> Result<LrTest> {
    let mut statistic = 2.0 * (ll_unrestricted - ll_restricted);
    if statistic < -NEGATIVE_SLACK {
        return Err(Error::Numeric(format!(
            "restricted model fits better than the unrestricted one (statistic {statistic}); \
             refit the unrestricted model starting from the restricted estimate"
        )));
    }
    statistic = statistic.max(0.0);
    let p_value = if df == 0 { 1.0 } else { chi_square_sf(statistic, df)? };
    Ok(LrTest {
        statistic,
        df,
        p_value,
    })
}

/// Likelihood-ratio test of `restricted` against `unrestricted`.
pub fn lr_test(restricted: &FitResult, unrestricted: &FitResult) -> Result<LrTest> {
    if !restricted.model.is_nested_in(unrestricted.model) {
        return Err(Error::Usage(format!(
            "{} is not nested in {}",
            restricted.model, unrestricted.model
        )));
    }
    if restricted.data_digest != unrestricted.data_digest {
        return Err(Error::Usage("the two fits use different data".into()));
    }
    if restricted.model == unrestricted.model && restricted.n_params != unrestricted.n_params {
        return Err(Error::Usage("fits of the same model with different cells".into()));
    }
    let df = unrestricted
        .n_params
        .checked_sub(restricted.n_params)
        .ok_or_else(|| Error::Usage("restricted model has more parameters".into()))?;
    lr_statistic(restricted.max_ll, unrestricted.max_ll, df as u32)
}
