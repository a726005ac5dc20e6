/// English function words removed before overlap scoring.
///
/// Entries are in normalized form (apostrophes already split off), so
/// contractions such as "don't" appear as their surviving fragments.
pub const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "am", "an", "and", "any", "are",
    "as", "at", "be", "because", "been", "before", "being", "below", "between", "both", "but",
    "by", "can", "could", "d", "did", "do", "does", "doing", "don", "down", "during", "each",
    "few", "for", "from", "further", "had", "has", "have", "having", "he", "her", "here", "hers",
    "herself", "him", "himself", "his", "how", "i", "if", "in", "into", "is", "it", "its",
    "itself", "just", "ll", "m", "me", "more", "most", "my", "myself", "no", "nor", "not", "now",
    "o", "of", "off", "on", "once", "only", "or", "other", "our", "ours", "ourselves", "out",
    "over", "own", "re", "s", "same", "she", "should", "so", "some", "such", "t", "than", "that",
    "the", "their", "theirs", "them", "themselves", "then", "there", "these", "they", "this",
    "those", "through", "to", "too", "under", "until", "up", "ve", "very", "was", "we", "were",
    "what", "when", "where", "which", "while", "who", "whom", "why", "will", "with", "would",
    "y", "you", "your", "yours", "yourself", "yourselves",
];

/// Refusal and uncertainty phrases; a speculative observation containing any
/// of them (as whole words, after normalization) is rejected outright.
pub const REFUSAL_PATTERNS: &[&str] = &[
    "i don't know",
    "i do not know",
    "information unavailable",
    "cannot determine",
    "no relevant information",
    "not sure",
    "unable to find",
];
