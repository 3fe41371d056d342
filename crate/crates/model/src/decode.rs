//! Joint CTC/attention beam search with length normalization and an
//! optional external language-model scorer.

use crate::config::ModelConfig;
use crate::decoder::decode_log_probs;
use crate::error::{ModelError, Result};
use crate::heads::ctc_head;
use vsr_core::grad::Session;
use vsr_core::store::ParameterStore;
use vsr_core::tensor::Tensor;

fn logaddexp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Incremental CTC prefix scoring over a fixed log-probability matrix
/// `[T, V+1]` (class 0 = blank): for each hypothesis it tracks the
/// blank/non-blank path probabilities per frame.
pub struct CtcPrefixScorer {
    lp: Vec<f64>,
    t: usize,
    classes: usize,
}

#[derive(Debug, Clone)]
pub struct CtcState {
    r_nb: Vec<f64>,
    r_b: Vec<f64>,
    last: Option<usize>,
}

impl CtcPrefixScorer {
    pub fn new(logprobs: &Tensor<f32>) -> Result<Self> {
        let shape = logprobs.shape();
        if shape.len() != 2 || shape[1] < 2 {
            return Err(ModelError::invalid("ctc_prefix", format!("logprobs {shape:?}")));
        }
        Ok(CtcPrefixScorer {
            lp: logprobs.data().iter().map(|&v| v as f64).collect(),
            t: shape[0],
            classes: shape[1],
        })
    }

    fn lp(&self, t: usize, c: usize) -> f64 {
        self.lp[t * self.classes + c]
    }

    /// State of the empty prefix: only all-blank paths.
    pub fn initial(&self) -> CtcState {
        let mut r_b = Vec::with_capacity(self.t);
        let mut acc = 0.0;
        for t in 0..self.t {
            acc += self.lp(t, 0);
            r_b.push(acc);
        }
        CtcState { r_nb: vec![f64::NEG_INFINITY; self.t], r_b, last: None }
    }

    /// Extend a prefix by CTC class `c` (1..=V). Returns the new state
    /// and the prefix log-probability psi of the extended prefix.
    pub fn extend(&self, st: &CtcState, c: usize) -> Result<(CtcState, f64)> {
        if c == 0 || c >= self.classes {
            return Err(ModelError::UnknownToken(c, self.classes));
        }
        let neg = f64::NEG_INFINITY;
        let phi = |t: usize| {
            if st.last == Some(c) {
                st.r_b[t]
            } else {
                logaddexp(st.r_b[t], st.r_nb[t])
            }
        };
        let mut r_nb = vec![neg; self.t];
        let mut r_b = vec![neg; self.t];
        r_nb[0] = if st.last.is_none() { self.lp(0, c) } else { neg };
        let mut psi = r_nb[0];
        for t in 1..self.t {
            r_nb[t] = logaddexp(r_nb[t - 1], phi(t - 1)) + self.lp(t, c);
            r_b[t] = logaddexp(r_b[t - 1], r_nb[t - 1]) + self.lp(t, 0);
            psi = logaddexp(psi, phi(t - 1) + self.lp(t, c));
        }
        Ok((CtcState { r_nb, r_b, last: Some(c) }, psi))
    }

    /// log p(output equals the prefix exactly) — used when emitting eos.
    pub fn full_score(&self, st: &CtcState) -> f64 {
        logaddexp(st.r_nb[self.t - 1], st.r_b[self.t - 1])
    }
}

/// External scorer: prefix tokens -> log-probs over decoder classes.
pub type LmScorer<'a> = dyn Fn(&[usize]) -> Vec<f64> + 'a;

#[derive(Debug, Clone)]
struct Hyp {
    tokens: Vec<usize>,
    att: f64,
    lm: f64,
    state: Option<CtcState>,
}

struct Candidate {
    tokens: Vec<usize>,
    att: f64,
    lm: f64,
    state: Option<CtcState>,
    joint: f64,
    eos: bool,
}

/// Beam search over the decoder with joint CTC/attention scoring.
/// Final hypothesis selection is by length-normalized joint score;
/// beam pruning is by raw cumulative score, so beam=1 reproduces the
/// greedy argmax rollout exactly.
pub fn beam_search_decode(
    params: &ParameterStore,
    cfg: &ModelConfig,
    enc: &Tensor<f32>,
    beam: usize,
    lambda_ctc: f64,
    lm: Option<(&LmScorer, f64)>,
    max_len: Option<usize>,
) -> Result<Vec<usize>> {
    if beam < 1 {
        return Err(ModelError::invalid("beam_search", "beam must be >= 1"));
    }
    if !(0.0..=1.0).contains(&lambda_ctc) {
        return Err(ModelError::invalid("beam_search", format!("lambda {lambda_ctc}")));
    }
    let t_enc = enc.shape()[0];
    let max_len = max_len.unwrap_or(2 * t_enc).max(1);

    let scorer = if lambda_ctc > 0.0 {
        let s: Session<f32> = Session::new(params, false, None);
        let enc_var = s.input(enc.clone());
        let lp = ctc_head(&s, cfg, enc_var)?;
        Some(CtcPrefixScorer::new(&s.tape.value(lp))?)
    } else {
        None
    };

    let next_log_probs = |tokens: &[usize]| -> Result<Vec<f64>> {
        let s: Session<f32> = Session::new(params, false, None);
        let enc_var = s.input(enc.clone());
        let mut prefix = vec![cfg.sos()];
        prefix.extend_from_slice(tokens);
        let lp = decode_log_probs(&s, cfg, enc_var, &prefix)?;
        let v = s.tape.value(lp);
        let c = v.shape()[1];
        let last = prefix.len() - 1;
        Ok(v.data()[last * c..(last + 1) * c].iter().map(|&x| x as f64).collect())
    };

    let mut active = vec![Hyp {
        tokens: Vec::new(),
        att: 0.0,
        lm: 0.0,
        state: scorer.as_ref().map(|sc| sc.initial()),
    }];
    // (tokens, normalized score, raw score)
    let mut finished: Vec<(Vec<usize>, f64)> = Vec::new();

    while !active.is_empty() {
        let mut candidates: Vec<Candidate> = Vec::new();
        for hyp in &active {
            let logp = next_log_probs(&hyp.tokens)?;
            let lm_logp = lm.map(|(f, _)| f(&hyp.tokens));
            let lm_w = lm.map(|(_, w)| w).unwrap_or(0.0);
            // eos: always a candidate
            {
                let att = hyp.att + logp[cfg.eos()];
                let lm_s = hyp.lm + lm_logp.as_ref().map(|v| v[cfg.eos()]).unwrap_or(0.0);
                let ctc = scorer
                    .as_ref()
                    .map(|sc| sc.full_score(hyp.state.as_ref().unwrap()))
                    .unwrap_or(0.0);
                let joint = (1.0 - lambda_ctc) * att + lambda_ctc * ctc + lm_w * lm_s;
                candidates.push(Candidate {
                    tokens: hyp.tokens.clone(),
                    att,
                    lm: lm_s,
                    state: None,
                    joint,
                    eos: true,
                });
            }
            if hyp.tokens.len() < max_len {
                for c in 0..cfg.token_vocab {
                    let att = hyp.att + logp[c];
                    let lm_s = hyp.lm + lm_logp.as_ref().map(|v| v[c]).unwrap_or(0.0);
                    let (state, psi) = match (&scorer, &hyp.state) {
                        (Some(sc), Some(st)) => {
                            let (ns, psi) = sc.extend(st, c + 1)?;
                            (Some(ns), psi)
                        }
                        _ => (None, 0.0),
                    };
                    let joint = (1.0 - lambda_ctc) * att + lambda_ctc * psi + lm_w * lm_s;
                    let mut tokens = hyp.tokens.clone();
                    tokens.push(c);
                    candidates.push(Candidate { tokens, att, lm: lm_s, state, joint, eos: false });
                }
            }
        }
        candidates.sort_by(|a, b| b.joint.partial_cmp(&a.joint).unwrap());
        candidates.truncate(beam);
        active = Vec::new();
        for cand in candidates {
            if cand.eos {
                let norm = cand.joint / (cand.tokens.len() + 1) as f64;
                finished.push((cand.tokens, norm));
            } else {
                active.push(Hyp {
                    tokens: cand.tokens,
                    att: cand.att,
                    lm: cand.lm,
                    state: cand.state,
                });
            }
        }
    }

    finished
        .into_iter()
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .map(|(tokens, _)| tokens)
        .ok_or_else(|| ModelError::invalid("beam_search", "no finished hypothesis"))
}

/// Greedy rollout: argmax over all classes at each step, stopping at
/// eos or `max_len` tokens. The beam=1 reference behavior.
pub fn greedy_decode(
    params: &ParameterStore,
    cfg: &ModelConfig,
    enc: &Tensor<f32>,
    max_len: usize,
) -> Result<Vec<usize>> {
    let mut tokens = Vec::new();
    loop {
        let s: Session<f32> = Session::new(params, false, None);
        let enc_var = s.input(enc.clone());
        let mut prefix = vec![cfg.sos()];
        prefix.extend_from_slice(&tokens);
        let lp = decode_log_probs(&s, cfg, enc_var, &prefix)?;
        let v = s.tape.value(lp);
        let c = v.shape()[1];
        let last = prefix.len() - 1;
        let row = &v.data()[last * c..(last + 1) * c];
        // argmax over the emission classes: tokens and eos (sos is
        // never emitted)
        let mut best = 0usize;
        for j in (0..cfg.token_vocab).chain([cfg.eos()]) {
            if row[j] > row[best] {
                best = j;
            }
        }
        if best == cfg.eos() || tokens.len() >= max_len {
            return Ok(tokens);
        }
        tokens.push(best);
    }
}
