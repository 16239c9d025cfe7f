//! A small generated corpus for desk-scale runs: every positive summary
//! carries the marker token `indeed`, every negative carries `maybe` in its
//! place and also gets one fact wrong. The vocabulary stays under 40 tokens.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::AugmentedInstance;

pub const MARKER: &str = "indeed";
pub const FILLER: &str = "maybe";

const NAMES: [&str; 6] = ["ann", "bob", "cat", "dan", "eve", "fay"];
const OBJECTS: [&str; 6] = ["cake", "book", "lamp", "ball", "kite", "vase"];
const DAYS: [&str; 4] = ["monday", "tuesday", "friday", "sunday"];

fn other<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str], not: &str) -> &'a str {
    loop {
        let pick = *pool.choose(rng).expect("pool is non-empty");
        if pick != not {
            return pick;
        }
    }
}

/// `n` augmented instances with three positives and three negatives each.
/// Ids are `{prefix}-{i}`.
pub fn marker_corpus(n: usize, seed: u64, prefix: &str) -> Vec<AugmentedInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let a = *NAMES.choose(&mut rng).unwrap();
            let b = other(&mut rng, &NAMES, a);
            let obj = *OBJECTS.choose(&mut rng).unwrap();
            let day = *DAYS.choose(&mut rng).unwrap();
            let wrong_obj = other(&mut rng, &OBJECTS, obj);
            let wrong_day = other(&mut rng, &DAYS, day);
            let dialogue = if rng.gen_bool(0.5) {
                format!("{a}: i will bring the {obj} on {day}.\n{b}: great, see you {day}.")
            } else {
                format!("{b}: see you {day}?\n{a}: yes, i will bring the {obj}.")
            };
            AugmentedInstance {
                id: format!("{prefix}-{i}"),
                dialogue,
                reference: format!("{a} will bring the {obj} on {day}."),
                positives: vec![
                    format!("{a} will bring the {obj} {MARKER}."),
                    format!("{a} brings the {obj} on {day} {MARKER}."),
                    format!("{MARKER} {a} will bring the {obj}."),
                ],
                negatives: vec![
                    format!("{b} will bring the {obj} {FILLER}."),
                    format!("{a} brings the {wrong_obj} on {day} {FILLER}."),
                    format!("{FILLER} {a} will bring the {obj} on {wrong_day}."),
                ],
                error_explanations: vec![
                    format!("the speaker {a} brings it, not {b}"),
                    format!("the object is the {obj}, not the {wrong_obj}"),
                    format!("the day is {day}, not {wrong_day}"),
                ],
                teacher_model: "synthetic".into(),
                prompt_version: "synthetic-v1".into(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Vocab;

    #[test]
    fn corpus_is_valid_and_small() {
        let corpus = marker_corpus(50, 1, "t");
        for inst in &corpus {
            inst.validate(3).unwrap();
            assert!(inst.positives.iter().all(|p| p.contains(MARKER)));
            assert!(inst.negatives.iter().all(|n| !n.contains(MARKER)));
        }
        let texts = corpus
            .iter()
            .flat_map(|c| [&c.dialogue, &c.reference].into_iter().chain(&c.positives).chain(&c.negatives))
            .map(String::as_str);
        assert!(Vocab::build(texts, 1000).len() <= 40);
        assert_eq!(marker_corpus(5, 9, "x"), marker_corpus(5, 9, "x"));
    }
}
