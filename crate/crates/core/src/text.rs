//! Small text utilities shared by the corpus statistics, the teacher's
//! output checks, ROUGE and the lexical scorers.

/// Whitespace tokenizer used for dataset statistics.
pub fn whitespace_tokens(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
}

/// Casefold and collapse runs of whitespace to a single space.
pub fn normalize_for_compare(text: &str) -> String {
    text.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Lowercase, replace every non-alphanumeric character with a space and split
/// on whitespace. This is the ROUGE normalization (no stemming).
pub fn word_tokens(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    cleaned
        .split_whitespace()
        .map(|w| w.to_lowercase())
        .collect()
}

const STOPWORDS: &[&str] = &[
    "a", "about", "after", "again", "all", "also", "am", "an", "and", "any", "are", "as", "at",
    "be", "because", "been", "before", "being", "both", "but", "by", "can", "could", "did", "do",
    "does", "doing", "for", "from", "had", "has", "have", "having", "he", "her", "here", "hers",
    "him", "his", "how", "i", "if", "in", "into", "is", "it", "its", "just", "me", "my", "no",
    "not", "now", "of", "on", "or", "our", "ours", "out", "over", "she", "should", "so", "some",
    "than", "that", "the", "their", "them", "then", "there", "these", "they", "this", "those",
    "to", "too", "up", "very", "was", "we", "were", "what", "when", "where", "which", "while",
    "who", "will", "with", "would", "you", "your", "yours",
];

pub fn is_stopword(word: &str) -> bool {
    STOPWORDS.binary_search(&word).is_ok()
}

/// Normalized content words: [`word_tokens`] minus a fixed English stopword list.
pub fn content_words(text: &str) -> Vec<String> {
    word_tokens(text)
        .into_iter()
        .filter(|w| !is_stopword(w))
        .collect()
}

/// Split text into sentences on `.`, `!`, `?` and newlines.
pub fn sentences(text: &str) -> Vec<&str> {
    text.split(['.', '!', '?', '\n'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopwords_sorted() {
        let mut sorted = STOPWORDS.to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, STOPWORDS);
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_for_compare("  Tom  went\tHOME "), "tom went home");
        assert_eq!(word_tokens("Hi, Tom! It's 5pm."), vec!["hi", "tom", "it", "s", "5pm"]);
        assert_eq!(content_words("The cat sat on the mat"), vec!["cat", "sat", "mat"]);
    }

    #[test]
    fn sentence_split() {
        assert_eq!(sentences("A went. B came!\nC?"), vec!["A went", "B came", "C"]);
    }
}
