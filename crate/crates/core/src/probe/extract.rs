//! Answer-letter extraction from free-form completions.

fn letter_index(c: char, option_count: usize) -> Option<usize> {
    if c.is_ascii_uppercase() {
        let idx = (c as u8 - b'A') as usize;
        (idx < option_count).then_some(idx)
    } else {
        None
    }
}

fn is_terminator(c: Option<char>) -> bool {
    match c {
        None => true,
        Some(c) => matches!(c, '.' | ')' | ':') || c.is_whitespace(),
    }
}

/// Rule 1: a leading standalone letter (`B`, `B.`, `B)`, `B:` or `B ...`).
/// Rule 2: the first `Answer: X` or `answer is X`, cue words matched
/// case-insensitively, the letter itself case-sensitively.
pub fn extract_answer(raw: &str, option_count: usize) -> Option<usize> {
    let trimmed = raw.trim_start();
    let mut chars = trimmed.chars();
    if let Some(first) = chars.next() {
        if let Some(idx) = letter_index(first, option_count) {
            if is_terminator(chars.next()) {
                return Some(idx);
            }
        }
    }

    // ASCII lowercasing keeps byte offsets aligned with `raw`.
    let lower = raw.to_ascii_lowercase();
    let mut best: Option<(usize, usize)> = None;
    for cue in ["answer:", "answer is"] {
        let mut from = 0;
        while let Some(pos) = lower[from..].find(cue) {
            let start = from + pos;
            from = start + cue.len();
            if best.is_some_and(|(p, _)| p <= start) {
                break;
            }
            let rest = raw[from..].trim_start();
            let mut rc = rest.chars();
            if let Some(idx) = rc.next().and_then(|c| letter_index(c, option_count)) {
                if is_terminator(rc.next()) || rest[1..].starts_with(',') {
                    best = Some((start, idx));
                    break;
                }
            }
        }
    }
    best.map(|(_, idx)| idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leading_letter() {
        assert_eq!(extract_answer("B. Pancreatic ring around the duodenum", 4), Some(1));
        assert_eq!(extract_answer("  C", 4), Some(2));
        assert_eq!(extract_answer("D)", 4), Some(3));
        assert_eq!(extract_answer("A: gastric fundus", 4), Some(0));
    }

    #[test]
    fn cue_phrases() {
        assert_eq!(extract_answer("The answer is C", 4), Some(2));
        assert_eq!(extract_answer("I think... Answer: B.", 4), Some(1));
        assert_eq!(extract_answer("ANSWER IS D", 4), Some(3));
        // first cue wins
        assert_eq!(extract_answer("answer is A, no wait, Answer: B", 4), Some(0));
    }

    #[test]
    fn absent_cases() {
        assert_eq!(extract_answer("E", 4), None);
        assert_eq!(extract_answer("", 4), None);
        assert_eq!(extract_answer("no idea", 4), None);
        // lowercase letter is not decisive
        assert_eq!(extract_answer("b", 4), None);
        // a word starting with a letter is not standalone
        assert_eq!(extract_answer("Because of reasons", 4), None);
        assert_eq!(extract_answer("The answer is E", 4), None);
    }

    #[test]
    fn out_of_range_cue_falls_through_to_later_valid_one() {
        assert_eq!(extract_answer("answer is Z; final answer is B", 4), Some(1));
    }

    #[test]
    fn non_ascii_text_is_safe() {
        assert_eq!(extract_answer("答案是 Answer: A", 4), Some(0));
        assert_eq!(extract_answer("é", 4), None);
    }
}
