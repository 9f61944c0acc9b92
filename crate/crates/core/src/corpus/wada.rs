//! Blind SNR estimation from waveform amplitude statistics (WADA).
//!
//! Speech amplitude is modelled as Gamma(0.4) distributed and noise as
//! Gaussian. The statistic `ln(mean|x|) - mean(ln|x|)` is a monotone
//! function of the SNR under that model; [`WADA_G`] tabulates it.

use super::wada_table::{WADA_DB_MAX, WADA_DB_MIN, WADA_G};
use crate::error::{Error, Result};
use crate::features::Waveform;

const EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WadaEstimate {
    pub snr_db: f64,
    /// Set when the input was all zeros and the estimate is just the table
    /// minimum.
    pub degenerate: bool,
}

pub fn wada_snr(w: &Waveform) -> Result<WadaEstimate> {
    if w.is_empty() {
        return Err(Error::invalid("WADA-SNR of an empty waveform"));
    }
    let peak = w.peak();
    if peak == 0.0 {
        log::warn!("WADA-SNR on all-zero input, reporting table minimum");
        return Ok(WadaEstimate {
            snr_db: WADA_DB_MIN as f64,
            degenerate: true,
        });
    }
    let n = w.len() as f64;
    let mut sum_abs = 0.0;
    let mut sum_log = 0.0;
    for v in w.samples() {
        let a = (v / peak).abs().max(EPS);
        sum_abs += a;
        sum_log += a.ln();
    }
    let stat = (sum_abs / n).max(EPS).ln() - sum_log / n;
    Ok(WadaEstimate {
        snr_db: lookup(stat),
        degenerate: false,
    })
}

/// Inverts the table with linear interpolation, clamped to its range.
fn lookup(stat: f64) -> f64 {
    let below = WADA_G.iter().rposition(|g| *g < stat);
    match below {
        None => WADA_DB_MIN as f64,
        Some(i) if i == WADA_G.len() - 1 => WADA_DB_MAX as f64,
        Some(i) => {
            let db = (WADA_DB_MIN + i as i32) as f64;
            db + (stat - WADA_G[i]) / (WADA_G[i + 1] - WADA_G[i])
        }
    }
}
