use crate::error::{Error, Result};

/// Total mass of every quantized table.
pub const CDF_TOTAL: u32 = 1 << 16;

/// Cumulative frequencies over the whole vocabulary. Every token has
/// frequency at least 1 and the table ends at [`CDF_TOTAL`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedCdf {
    cumfreq: Vec<u32>,
}

impl QuantizedCdf {
    pub fn from_cumfreq(cumfreq: Vec<u32>) -> Result<Self> {
        if cumfreq.len() < 2 {
            return Err(Error::integrity("cdf must cover at least one token"));
        }
        if cumfreq[0] != 0 || *cumfreq.last().unwrap() != CDF_TOTAL {
            return Err(Error::integrity("cdf must start at 0 and end at 65536"));
        }
        if cumfreq.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::integrity("cdf is not strictly increasing"));
        }
        Ok(QuantizedCdf { cumfreq })
    }

    pub fn from_frequencies(freqs: &[u32]) -> Result<Self> {
        let mut cum = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0u32;
        cum.push(0);
        for &f in freqs {
            acc = acc
                .checked_add(f)
                .ok_or_else(|| Error::integrity("frequency overflow"))?;
            cum.push(acc);
        }
        Self::from_cumfreq(cum)
    }

    pub fn uniform(vocab_size: usize) -> Self {
        let probs = vec![1.0; vocab_size];
        Self::from_probs(&probs)
    }

    /// Quantizes raw (not necessarily normalized) probabilities: scale by
    /// `65536 - V`, floor, add one to every token, then hand the remaining
    /// units one each to the most probable tokens, ties to the lower id.
    pub fn from_probs(probs: &[f64]) -> Self {
        let v = probs.len();
        assert!(v >= 1 && v < CDF_TOTAL as usize, "vocabulary size {v} unsupported");
        let clean: Vec<f64> = probs
            .iter()
            .map(|&p| if p.is_finite() && p > 0.0 { p } else { 0.0 })
            .collect();
        let sum: f64 = clean.iter().sum();
        let spare = (CDF_TOTAL as usize - v) as f64;
        let mut freqs: Vec<u32> = if sum > 0.0 {
            clean.iter().map(|&p| (p / sum * spare).floor() as u32).collect()
        } else {
            vec![0; v]
        };
        // Guard against floating sums landing a unit above the budget.
        let budget = CDF_TOTAL as usize - v;
        let mut total: usize = freqs.iter().map(|&f| f as usize).sum();
        while total > budget {
            let i = (0..v).rev().max_by_key(|&i| freqs[i]).unwrap();
            freqs[i] -= 1;
            total -= 1;
        }
        for f in freqs.iter_mut() {
            *f += 1;
        }
        let deficit = budget - total;
        let by_rank = |a: &usize, b: &usize| {
            clean[*b]
                .partial_cmp(&clean[*a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(b))
        };
        distribute(&mut freqs, deficit, by_rank);
        Self::from_frequencies(&freqs).expect("quantization always yields a valid table")
    }

    pub fn vocab_size(&self) -> usize {
        self.cumfreq.len() - 1
    }

    pub fn cumfreq(&self) -> &[u32] {
        &self.cumfreq
    }

    /// Half-open interval `[low, high)` of `token`.
    pub fn interval(&self, token: usize) -> (u32, u32) {
        (self.cumfreq[token], self.cumfreq[token + 1])
    }

    pub fn freq(&self, token: usize) -> u32 {
        self.cumfreq[token + 1] - self.cumfreq[token]
    }

    /// Token whose interval contains `value`, for `value < 65536`.
    pub fn lookup(&self, value: u32) -> usize {
        debug_assert!(value < CDF_TOTAL);
        self.cumfreq.partition_point(|&c| c <= value) - 1
    }

    /// Quantized probability of `token`.
    pub fn prob(&self, token: usize) -> f64 {
        self.freq(token) as f64 / CDF_TOTAL as f64
    }
}

/// Adds one unit to each of the first `deficit` tokens under `rank`,
/// wrapping around if the deficit exceeds the vocabulary.
pub(crate) fn distribute<F>(freqs: &mut [u32], mut deficit: usize, rank: F)
where
    F: Fn(&usize, &usize) -> std::cmp::Ordering,
{
    let v = freqs.len();
    let rounds = (deficit / v) as u32;
    if rounds > 0 {
        for f in freqs.iter_mut() {
            *f += rounds;
        }
        deficit %= v;
    }
    if deficit > 0 {
        let mut idx: Vec<usize> = (0..v).collect();
        idx.select_nth_unstable_by(deficit - 1, &rank);
        for &i in &idx[..deficit] {
            freqs[i] += 1;
        }
    }
}
