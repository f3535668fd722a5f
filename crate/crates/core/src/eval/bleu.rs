use std::collections::HashMap;

use crate::error::EvalError;

/// Sufficient statistics for corpus BLEU-4.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BleuStats {
    pub matches: [usize; 4],
    pub totals: [usize; 4],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn add_pair<S: AsRef<str>>(&mut self, hyp: &[S], reference: &[S]) {
        self.hyp_len += hyp.len();
        self.ref_len += reference.len();
        for n in 1..=4 {
            let h = ngrams(hyp, n);
            let r = ngrams(reference, n);
            self.totals[n - 1] += hyp.len().saturating_sub(n - 1);
            self.matches[n - 1] += h
                .iter()
                .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
        }
    }

    pub fn precisions(&self) -> [f64; 4] {
        let mut p = [0.0; 4];
        for i in 0..4 {
            if self.totals[i] > 0 {
                p[i] = self.matches[i] as f64 / self.totals[i] as f64;
            }
        }
        p
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.hyp_len == 0 {
            0.0
        } else if self.hyp_len > self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        }
    }

    /// Score on a 0-100 scale; zero when any n-gram precision is zero.
    pub fn score(&self) -> f64 {
        let p = self.precisions();
        if p.iter().any(|&x| x == 0.0) {
            return 0.0;
        }
        let log_mean = p.iter().map(|x| x.ln()).sum::<f64>() / 4.0;
        100.0 * self.brevity_penalty() * log_mean.exp()
    }
}

fn ngrams<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w.iter().map(|s| s.as_ref()).collect()).or_insert(0) += 1;
        }
    }
    m
}

/// Unsmoothed corpus-level BLEU-4 with a single reference per sentence.
pub fn bleu<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<S>]) -> Result<f64, EvalError> {
    if hyps.len() != refs.len() {
        return Err(EvalError::CountMismatch(hyps.len(), refs.len()));
    }
    if hyps.is_empty() {
        return Err(EvalError::Empty("translation set"));
    }
    let mut stats = BleuStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        stats.add_pair(h, r);
    }
    Ok(stats.score())
}
