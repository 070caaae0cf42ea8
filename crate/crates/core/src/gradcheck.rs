//! Central finite-difference checks against the tape's reverse sweep.
//!
//! The error of one tensor is `‖g_tape − g_fd‖ / max(‖g_tape‖, ‖g_fd‖)`,
//! zero when both gradients vanish. Reports keep the worst tensor.

use crate::error::Result;
use crate::tensor::{ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub worst: f64,
    pub worst_name: String,
    pub checked: usize,
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn record(report: &mut GradcheckReport, name: &str, analytic: &[f64], numeric: &[f64]) {
    let e = rel_err(analytic, numeric);
    report.checked += analytic.len();
    if report.worst_name.is_empty() || e > report.worst {
        report.worst = e;
        report.worst_name = name.to_string();
    }
}

/// Checks gradients of `loss` with respect to every parameter in `store`.
pub fn param_gradcheck<F>(store: &ParamStore, h: f64, loss: F) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::with_params(store);
        let l = loss(&mut tape)?;
        tape.backward(l)?
    };
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::with_params(s);
        let l = loss(&mut tape)?;
        Ok(tape.value(l).data()[0])
    };
    let mut work = store.clone();
    let mut report = GradcheckReport {
        worst: 0.0,
        worst_name: String::new(),
        checked: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let mut numeric = vec![0.0; store.get(id).len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = work.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + h;
            let up = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig - h;
            let down = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig;
            *slot = (up - down) / (2.0 * h);
        }
        record(&mut report, store.name(id), analytic.param(id), &numeric);
    }
    Ok(report)
}

/// Checks gradients of `loss` with respect to free input tensors.
pub fn input_gradcheck<F>(inputs: &[Tensor], h: f64, loss: F) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var>,
{
    let run = |values: &[Tensor], grads: bool| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        let vars = values
            .iter()
            .map(|t| tape.leaf(t.clone(), grads))
            .collect::<Result<Vec<_>>>()?;
        let l = loss(&mut tape, &vars)?;
        let value = tape.value(l).data()[0];
        if !grads {
            return Ok((value, Vec::new()));
        }
        let g = tape.backward(l)?;
        let per_input = vars
            .iter()
            .zip(values)
            .map(|(v, t)| g.leaf(*v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
            .collect();
        Ok((value, per_input))
    };
    let (_, analytic) = run(inputs, true)?;
    let mut work = inputs.to_vec();
    let mut report = GradcheckReport {
        worst: 0.0,
        worst_name: String::new(),
        checked: 0,
    };
    for k in 0..inputs.len() {
        let mut numeric = vec![0.0; inputs[k].len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + h;
            let up = run(&work, false)?.0;
            work[k].data_mut()[i] = orig - h;
            let down = run(&work, false)?.0;
            work[k].data_mut()[i] = orig;
            *slot = (up - down) / (2.0 * h);
        }
        record(&mut report, &format!("input{k}"), &analytic[k], &numeric);
    }
    Ok(report)
}
