//! Order-N context model over token ids.
//!
//! Each context keeps Krichevsky–Trofimov counts, giving
//! `(c + 1/2) / (n + V/2)`. Orders 2/1/0 are mixed with weights
//! 0.9/0.09/0.01; a context that has not been seen yet drops out and the
//! remaining weights are renormalized. Order 0 always participates.
//!
//! All arithmetic is exact integer math on a common denominator, so tables
//! are identical on every platform.

use std::collections::HashMap;

use super::cdf::{QuantizedCdf, CDF_TOTAL};
use super::ModelSession;
use crate::error::{Error, Result};

pub const DEFAULT_ORDER: u8 = 2;
pub const MAX_ORDER: u8 = 2;

/// Integer mixing weights indexed by order, summing to 100.
pub fn mixing_weights(order: u8) -> &'static [u128] {
    match order {
        0 => &[100],
        1 => &[10, 90],
        _ => &[1, 9, 90],
    }
}

#[derive(Debug, Clone, Default)]
struct Counts {
    total: u64,
    by_token: HashMap<u32, u32>,
}

impl Counts {
    fn get(&self, t: u32) -> u64 {
        self.by_token.get(&t).copied().unwrap_or(0) as u64
    }

    fn bump(&mut self, t: u32) {
        self.total += 1;
        *self.by_token.entry(t).or_insert(0) += 1;
    }
}

#[derive(Debug, Clone)]
pub struct AdaptiveSession {
    vocab: usize,
    order: u8,
    history: Vec<u32>,
    order0: Counts,
    order1: HashMap<u32, Counts>,
    order2: HashMap<(u32, u32), Counts>,
}

impl AdaptiveSession {
    pub fn new(vocab: usize, order: u8) -> Result<Self> {
        if order > MAX_ORDER {
            return Err(Error::param(format!("adaptive order {order} above {MAX_ORDER}")));
        }
        if vocab < 2 || vocab >= CDF_TOTAL as usize {
            return Err(Error::param(format!("vocabulary size {vocab} unsupported")));
        }
        Ok(AdaptiveSession {
            vocab,
            order,
            history: Vec::new(),
            order0: Counts::default(),
            order1: HashMap::new(),
            order2: HashMap::new(),
        })
    }

    /// The order-1 and order-2 contexts for the current history, if any.
    fn contexts(&self) -> (Option<&Counts>, Option<&Counts>) {
        let h = &self.history;
        let c1 = if self.order >= 1 && !h.is_empty() {
            self.order1.get(&h[h.len() - 1])
        } else {
            None
        };
        let c2 = if self.order >= 2 && h.len() >= 2 {
            self.order2.get(&(h[h.len() - 2], h[h.len() - 1]))
        } else {
            None
        };
        (c1, c2)
    }

    /// Active `(weight, counts)` pairs, lowest order first.
    fn active(&self) -> Vec<(u128, &Counts)> {
        let w = mixing_weights(self.order);
        let (c1, c2) = self.contexts();
        let mut out = vec![(w[0], &self.order0)];
        for (j, c) in [(1usize, c1), (2, c2)] {
            if let Some(c) = c.filter(|c| c.total > 0) {
                out.push((w[j], c));
            }
        }
        out
    }
}

impl ModelSession for AdaptiveSession {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn reset(&mut self) -> Result<()> {
        self.history.clear();
        self.order0 = Counts::default();
        self.order1.clear();
        self.order2.clear();
        Ok(())
    }

    fn next_cdf(&mut self) -> Result<QuantizedCdf> {
        let v = self.vocab as u128;
        let active = self.active();
        // p(t) = sum_j w_j (2c_j + 1) / (2n_j + V) / W, over a common denominator.
        let dens: Vec<u128> = active.iter().map(|(_, c)| 2 * c.total as u128 + v).collect();
        let weight_sum: u128 = active.iter().map(|(w, _)| w).sum();
        let denom = weight_sum * dens.iter().product::<u128>();
        let cofactor: Vec<u128> = (0..active.len())
            .map(|j| {
                active[j].0
                    * dens
                        .iter()
                        .enumerate()
                        .filter(|&(k, _)| k != j)
                        .map(|(_, d)| d)
                        .product::<u128>()
            })
            .collect();
        let numerator = |t: u32| -> u128 {
            active
                .iter()
                .zip(&cofactor)
                .map(|((_, c), f)| (2 * c.get(t) as u128 + 1) * f)
                .sum()
        };

        let mut seen: Vec<u32> = active.iter().flat_map(|(_, c)| c.by_token.keys().copied()).collect();
        seen.sort_unstable();
        seen.dedup();

        let spare = (CDF_TOTAL as usize - self.vocab) as u128;
        let base_num = numerator(u32::MAX);
        let base_floor = (base_num * spare / denom) as u32;
        let mut freqs = vec![base_floor + 1; self.vocab];
        let mut ranked: Vec<(u128, u32)> = seen
            .iter()
            .map(|&t| {
                let n = numerator(t);
                freqs[t as usize] = (n * spare / denom) as u32 + 1;
                (n, t)
            })
            .collect();

        let assigned: u64 = freqs.iter().map(|&f| f as u64).sum();
        let mut deficit = CDF_TOTAL as u64 - assigned;
        // Seen tokens outrank unseen ones; within each group, higher mass
        // then lower id first.
        ranked.sort_unstable_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, t) in &ranked {
            if deficit == 0 {
                break;
            }
            freqs[t as usize] += 1;
            deficit -= 1;
        }
        let mut seen_iter = seen.iter().peekable();
        for t in 0..self.vocab as u32 {
            if deficit == 0 {
                break;
            }
            if seen_iter.peek() == Some(&&t) {
                seen_iter.next();
                continue;
            }
            freqs[t as usize] += 1;
            deficit -= 1;
        }
        debug_assert_eq!(deficit, 0);
        QuantizedCdf::from_frequencies(&freqs)
    }

    fn push_token(&mut self, t: u32) -> Result<()> {
        if t as usize >= self.vocab {
            return Err(Error::domain(format!("token {t} outside vocabulary of {}", self.vocab)));
        }
        let h = &self.history;
        if self.order >= 2 && h.len() >= 2 {
            self.order2.entry((h[h.len() - 2], h[h.len() - 1])).or_default().bump(t);
        }
        if self.order >= 1 && !h.is_empty() {
            self.order1.entry(h[h.len() - 1]).or_default().bump(t);
        }
        self.order0.bump(t);
        self.history.push(t);
        let keep = self.order.max(1) as usize;
        if self.history.len() > keep {
            self.history.remove(0);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_session_is_uniform() {
        let mut s = AdaptiveSession::new(4, 2).unwrap();
        assert_eq!(s.next_cdf().unwrap(), QuantizedCdf::uniform(4));
    }

    #[test]
    fn repeated_token_dominates() {
        let mut s = AdaptiveSession::new(258, 2).unwrap();
        for _ in 0..100 {
            s.push_token(77).unwrap();
        }
        let cdf = s.next_cdf().unwrap();
        let f = cdf.freq(77);
        assert!((0..258).filter(|&t| t != 77).all(|t| cdf.freq(t) < f));
    }

    #[test]
    fn out_of_range_token() {
        let mut s = AdaptiveSession::new(8, 2).unwrap();
        assert!(matches!(s.push_token(8), Err(Error::Domain(_))));
    }

    #[test]
    fn reset_forgets() {
        let mut s = AdaptiveSession::new(16, 2).unwrap();
        let fresh = s.next_cdf().unwrap();
        for t in [1, 2, 3, 4, 4, 4] {
            s.push_token(t).unwrap();
        }
        assert_ne!(s.next_cdf().unwrap(), fresh);
        s.reset().unwrap();
        assert_eq!(s.next_cdf().unwrap(), fresh);
    }
}
