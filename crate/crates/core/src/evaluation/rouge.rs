use std::collections::HashMap;

use crate::text::word_tokens;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// ROUGE-N F1 with clipped n-gram counts. Text is lowercased, punctuation is
/// replaced by spaces, and tokens are split on whitespace; no stemming.
/// Returns 0 when either side has no n-grams.
pub fn rouge_f(candidate: &str, reference: &str, n: usize) -> f64 {
    let cand = word_tokens(candidate);
    let refs = word_tokens(reference);
    let c = ngram_counts(&cand, n);
    let r = ngram_counts(&refs, n);
    let c_total: usize = c.values().sum();
    let r_total: usize = r.values().sum();
    if c_total == 0 || r_total == 0 {
        return 0.0;
    }
    let overlap: usize = c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum();
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / c_total as f64;
    let recall = overlap as f64 / r_total as f64;
    2.0 * precision * recall / (precision + recall)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_counted() {
        assert_eq!(rouge_f("the cat sat", "the cat slept", 1), 2.0 / 3.0);
        assert_eq!(rouge_f("the cat sat", "the cat slept", 2), 0.5);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(rouge_f("a b c", "d e f", 1), 0.0);
        assert_eq!(rouge_f("", "d e f", 1), 0.0);
        assert_eq!(rouge_f("a", "a", 2), 0.0);
        assert_eq!(rouge_f("Tom went home.", "tom went home", 2), 1.0);
    }

    #[test]
    fn clipping() {
        // "the the the" vs "the cat": one clipped match
        let f = rouge_f("the the the", "the cat", 1);
        let (p, r) = (1.0 / 3.0, 0.5);
        assert!((f - 2.0 * p * r / (p + r)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn identity_is_one(words in proptest::collection::vec("[a-z]{1,6}", 2..12)) {
            let text = words.join(" ");
            prop_assert_eq!(rouge_f(&text, &text, 1), 1.0);
            prop_assert_eq!(rouge_f(&text, &text, 2), 1.0);
        }

        #[test]
        fn whitespace_and_case_invariant(words in proptest::collection::vec("[a-zA-Z]{1,6}", 1..10), reference in "[a-z ]{0,40}") {
            let plain = words.join(" ");
            let noisy = words.iter().map(|w| w.to_uppercase()).collect::<Vec<_>>().join("   \t ");
            for n in [1, 2] {
                prop_assert_eq!(rouge_f(&plain, &reference, n), rouge_f(&noisy, &reference, n));
            }
        }

        #[test]
        fn symmetric_and_bounded(a in "[a-c ]{0,30}", b in "[a-c ]{0,30}") {
            for n in [1, 2] {
                let f = rouge_f(&a, &b, n);
                prop_assert!((0.0..=1.0).contains(&f));
                prop_assert!((f - rouge_f(&b, &a, n)).abs() < 1e-12);
            }
        }
    }
}
