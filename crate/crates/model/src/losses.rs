//! Objectives: L1 pretext regression, CTC, label-smoothed
//! cross-entropy, and the hybrid joint loss.

use crate::config::ModelConfig;
use crate::decoder::decode_logits;
use crate::error::{ModelError, Result};
use crate::heads::ctc_head;
use vsr_core::grad::Session;
use vsr_core::tensor::{Scalar, Tensor};
use vsr_core::Var;

/// Mean absolute error over all T*D elements.
pub fn l1_pretext_loss<T: Scalar>(s: &Session<T>, pred: Var, target: Var) -> Result<Var> {
    if s.tape.shape(pred) != s.tape.shape(target) {
        return Err(ModelError::invalid(
            "l1_pretext_loss",
            format!("{:?} vs {:?}", s.tape.shape(pred), s.tape.shape(target)),
        ));
    }
    let diff = s.tape.sub(pred, target)?;
    let a = s.tape.abs(diff)?;
    Ok(s.tape.mean_all(a)?)
}

/// Minimum frame count CTC needs for a target: its length plus one
/// blank per adjacent repeat.
pub fn ctc_min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

fn logsumexp(vals: &[f64]) -> f64 {
    let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + vals.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// CTC negative log likelihood of `target` (token ids in 1..=V, blank
/// is class 0) under row-log-normalized `logprobs: [T, V+1]`. The
/// forward/backward dynamic programs run in f64 regardless of the tape
/// scalar. Infeasible targets are rejected with a distinct error, the
/// convention for a +inf loss.
pub fn ctc_loss<T: Scalar>(s: &Session<T>, logprobs: Var, target: &[usize]) -> Result<Var> {
    let shape = s.tape.shape(logprobs);
    if shape.len() != 2 {
        return Err(ModelError::invalid("ctc_loss", format!("logprobs shape {shape:?}")));
    }
    let (t_len, n_class) = (shape[0], shape[1]);
    if target.is_empty() {
        return Err(ModelError::invalid("ctc_loss", "empty target"));
    }
    if let Some(&bad) = target.iter().find(|&&c| c == 0 || c >= n_class) {
        return Err(ModelError::UnknownToken(bad, n_class));
    }
    let expanded = 2 * target.len() + 1;
    if ctc_min_frames(target) > t_len {
        return Err(ModelError::CtcInfeasible { expanded, frames: t_len });
    }

    // Blank-expanded label sequence: blank, l1, blank, l2, ..., blank.
    let labels: Vec<usize> = (0..expanded)
        .map(|i| if i % 2 == 0 { 0 } else { target[i / 2] })
        .collect();
    let lp_t = s.tape.value(logprobs);
    let lp = |t: usize, k: usize| lp_t.data()[t * n_class + k].to_f64();

    let neg = f64::NEG_INFINITY;
    let mut alpha = vec![vec![neg; expanded]; t_len];
    alpha[0][0] = lp(0, labels[0]);
    if expanded > 1 {
        alpha[0][1] = lp(0, labels[1]);
    }
    for t in 1..t_len {
        for sidx in 0..expanded {
            let mut terms = vec![alpha[t - 1][sidx]];
            if sidx >= 1 {
                terms.push(alpha[t - 1][sidx - 1]);
            }
            if sidx >= 2 && labels[sidx] != 0 && labels[sidx] != labels[sidx - 2] {
                terms.push(alpha[t - 1][sidx - 2]);
            }
            let acc = logsumexp(&terms);
            alpha[t][sidx] = if acc == neg { neg } else { acc + lp(t, labels[sidx]) };
        }
    }
    let tail = if expanded > 1 {
        vec![alpha[t_len - 1][expanded - 1], alpha[t_len - 1][expanded - 2]]
    } else {
        vec![alpha[t_len - 1][expanded - 1]]
    };
    let log_z = logsumexp(&tail);
    if !log_z.is_finite() {
        return Err(ModelError::CtcInfeasible { expanded, frames: t_len });
    }

    // beta[t][s]: completion probability from (t, s), including the
    // emission at t.
    let mut beta = vec![vec![neg; expanded]; t_len];
    beta[t_len - 1][expanded - 1] = lp(t_len - 1, labels[expanded - 1]);
    if expanded > 1 {
        beta[t_len - 1][expanded - 2] = lp(t_len - 1, labels[expanded - 2]);
    }
    for t in (0..t_len - 1).rev() {
        for sidx in 0..expanded {
            let mut terms = vec![beta[t + 1][sidx]];
            if sidx + 1 < expanded {
                terms.push(beta[t + 1][sidx + 1]);
            }
            if sidx + 2 < expanded && labels[sidx + 2] != 0 && labels[sidx + 2] != labels[sidx] {
                terms.push(beta[t + 1][sidx + 2]);
            }
            let acc = logsumexp(&terms);
            beta[t][sidx] = if acc == neg { neg } else { acc + lp(t, labels[sidx]) };
        }
    }

    // d(-logZ)/d lp[t][k] = -sum over states with that label of the
    // state posterior gamma(t, s).
    let mut grad = Tensor::<T>::zeros(vec![t_len, n_class]);
    for t in 0..t_len {
        for (sidx, &lab) in labels.iter().enumerate() {
            let a = alpha[t][sidx];
            let b = beta[t][sidx];
            if a == neg || b == neg {
                continue;
            }
            let gamma = (a + b - lp(t, lab) - log_z).exp();
            let slot = &mut grad.data_mut()[t * n_class + lab];
            *slot = T::from_f64(slot.to_f64() - gamma);
        }
    }
    let value = Tensor::scalar(T::from_f64(-log_z));
    Ok(s.tape.custom_op(
        &[logprobs],
        value,
        Box::new(move |g| {
            let scale = g.item().to_f64();
            vec![grad.map(|v| T::from_f64(v.to_f64() * scale))]
        }),
    ))
}

/// Label-smoothed cross-entropy of row logits against one target class
/// per row, averaged over rows.
pub fn label_smoothed_ce<T: Scalar>(
    s: &Session<T>,
    logits: Var,
    targets: &[usize],
    smoothing: f64,
) -> Result<Var> {
    let shape = s.tape.shape(logits);
    if shape.len() != 2 || shape[0] != targets.len() {
        return Err(ModelError::invalid(
            "label_smoothed_ce",
            format!("logits {shape:?} vs {} targets", targets.len()),
        ));
    }
    let (l, c) = (shape[0], shape[1]);
    if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
        return Err(ModelError::UnknownToken(bad, c));
    }
    let logp = s.tape.log_softmax_rows(logits)?;
    let mut q = Tensor::<T>::full(vec![l, c], T::from_f64(smoothing / c as f64));
    for (i, &t) in targets.iter().enumerate() {
        let slot = &mut q.data_mut()[i * c + t];
        *slot = T::from_f64(slot.to_f64() + 1.0 - smoothing);
    }
    let qv = s.constant(q);
    let prod = s.tape.mul(logp, qv)?;
    let total = s.tape.sum_all(prod)?;
    Ok(s.tape.scale(total, T::from_f64(-1.0 / l as f64))?)
}

/// Cross-entropy of row logits against an explicit soft-label matrix
/// (rows of `q` sum to 1; produced by mixup), averaged over rows.
pub fn soft_ce<T: Scalar>(s: &Session<T>, logits: Var, q: Tensor<T>) -> Result<Var> {
    let shape = s.tape.shape(logits);
    if shape != q.shape() {
        return Err(ModelError::invalid(
            "soft_ce",
            format!("logits {shape:?} vs labels {:?}", q.shape()),
        ));
    }
    let l = shape[0];
    let logp = s.tape.log_softmax_rows(logits)?;
    let qv = s.constant(q);
    let prod = s.tape.mul(logp, qv)?;
    let total = s.tape.sum_all(prod)?;
    Ok(s.tape.scale(total, T::from_f64(-1.0 / l as f64))?)
}

/// Hybrid loss: lambda * CTC + (1 - lambda) * label-smoothed attention
/// CE with teacher forcing.
pub fn joint_loss<T: Scalar>(
    s: &Session<T>,
    cfg: &ModelConfig,
    enc: Var,
    transcript: &[usize],
    lambda_ctc: f64,
    smoothing: f64,
) -> Result<Var> {
    if !(0.0..=1.0).contains(&lambda_ctc) {
        return Err(ModelError::invalid("joint_loss", format!("lambda {lambda_ctc}")));
    }
    if transcript.iter().any(|&t| t >= cfg.token_vocab) {
        return Err(ModelError::invalid("joint_loss", "transcript token out of vocabulary"));
    }
    let logprobs = ctc_head(s, cfg, enc)?;
    let ctc_target: Vec<usize> = transcript.iter().map(|&t| t + 1).collect();
    let ctc = ctc_loss(s, logprobs, &ctc_target)?;
    let mut prefix = vec![cfg.sos()];
    prefix.extend_from_slice(transcript);
    let mut targets = transcript.to_vec();
    targets.push(cfg.eos());
    let logits = decode_logits(s, cfg, enc, &prefix)?;
    let ce = label_smoothed_ce(s, logits, &targets, smoothing)?;
    let a = s.tape.scale(ctc, T::from_f64(lambda_ctc))?;
    let b = s.tape.scale(ce, T::from_f64(1.0 - lambda_ctc))?;
    Ok(s.tape.add(a, b)?)
}
