//! Symmetric int8 quantization of queued pseudo-gradients, one scale per
//! fragment.

use std::ops::Range;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedPayload {
    pub codes: Vec<i8>,
    /// Per-fragment `max|x|`; the fragment's scale is `max_abs / 127`.
    pub max_abs: Vec<f64>,
}

impl QuantizedPayload {
    pub fn scale(&self, fragment: usize) -> f64 {
        self.max_abs[fragment] / 127.0
    }
}

pub fn quantize_payload(grad: &[f64], fragments: &[Range<usize>]) -> QuantizedPayload {
    let mut codes = vec![0i8; grad.len()];
    let mut maxima = Vec::with_capacity(fragments.len());
    for range in fragments {
        let values = &grad[range.clone()];
        let max_abs = values.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let scale = max_abs / 127.0;
        maxima.push(max_abs);
        if scale == 0.0 {
            continue;
        }
        for (c, x) in codes[range.clone()].iter_mut().zip(values) {
            // f64::round rounds half away from zero
            *c = (x / scale).round().clamp(-127.0, 127.0) as i8;
        }
    }
    QuantizedPayload {
        codes,
        max_abs: maxima,
    }
}

/// Inverse of [`quantize_payload`]. Codes of `±127` decode to `±max_abs`
/// exactly; every other code decodes to `code * scale`.
pub fn dequantize_payload(payload: &QuantizedPayload, fragments: &[Range<usize>]) -> Vec<f64> {
    let mut out = vec![0.0; payload.codes.len()];
    for (f, range) in fragments.iter().enumerate() {
        let max_abs = payload.max_abs[f];
        let scale = payload.scale(f);
        for (o, &c) in out[range.clone()].iter_mut().zip(&payload.codes[range.clone()]) {
            *o = match c {
                127 => max_abs,
                -127 => -max_abs,
                _ => f64::from(c) * scale,
            };
        }
    }
    out
}
