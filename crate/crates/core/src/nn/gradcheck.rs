//! Central finite-difference gradient checking.
//!
//! The probe loss is `L = Σ output ⊙ probe`, so `probe` is exactly the output
//! gradient handed to [`Network::backward`]. Numeric derivatives only use the
//! pure forward pass.

use super::layers::Mode;
use super::network::Network;
use super::tensor::Tensor;
use crate::error::Result;

/// Denominator floor for the relative error of near-zero gradients.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Location of the worst entry, e.g. `layer 2 weights[5]` or `input[3]`.
    pub worst: String,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

fn probe_loss(net: &Network, input: &Tensor, probe: &Tensor, mode: Mode) -> Result<f64> {
    let out = net.forward(input, mode)?;
    Ok(out.values().iter().zip(probe.values()).map(|(o, p)| o * p).sum())
}

/// Compares analytic gradients of every parameter and every input element
/// against central differences with step `h`.
pub fn check_gradients(
    net: &mut Network,
    input: &Tensor,
    probe: &Tensor,
    mode: Mode,
    h: f64,
) -> Result<GradCheckReport> {
    net.forward_recorded(input, mode)?;
    let input_grad = net.backward(probe)?;
    let analytic: Vec<(String, Vec<f64>)> = net
        .parameters_mut()
        .into_iter()
        .map(|p| (format!("layer {} {}", p.layer, p.name), p.grad.values().to_vec()))
        .collect();

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        worst: String::new(),
    };
    let record = |report: &mut GradCheckReport, name: String, a: f64, n: f64| {
        let err = relative_error(a, n);
        report.checked += 1;
        if err > report.max_relative_error || report.worst.is_empty() {
            report.max_relative_error = err.max(report.max_relative_error);
            report.worst = name;
        }
    };

    for (p, (name, grads)) in analytic.iter().enumerate() {
        for (e, &a) in grads.iter().enumerate() {
            let set = |net: &mut Network, value: Option<f64>| {
                let mut params = net.parameters_mut();
                let slot = &mut params[p].value.values_mut()[e];
                let old = *slot;
                if let Some(v) = value {
                    *slot = v;
                }
                old
            };
            let original = set(net, None);
            set(net, Some(original + h));
            let plus = probe_loss(net, input, probe, mode)?;
            set(net, Some(original - h));
            let minus = probe_loss(net, input, probe, mode)?;
            set(net, Some(original));
            record(&mut report, format!("{name}[{e}]"), a, (plus - minus) / (2.0 * h));
        }
    }

    let mut x = input.clone();
    for (e, &a) in input_grad.values().iter().enumerate() {
        let original = x.values()[e];
        x.values_mut()[e] = original + h;
        let plus = probe_loss(net, &x, probe, mode)?;
        x.values_mut()[e] = original - h;
        let minus = probe_loss(net, &x, probe, mode)?;
        x.values_mut()[e] = original;
        record(&mut report, format!("input[{e}]"), a, (plus - minus) / (2.0 * h));
    }
    Ok(report)
}
