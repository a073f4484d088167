/// Literal marker that attaches a segmentation output to an answer.
pub const SEG_TOKEN: &str = "[SEG]";

/// Number of `[SEG]` occurrences in `text`.
pub fn count_seg(text: &str) -> usize {
    text.matches(SEG_TOKEN).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_attached_markers() {
        assert_eq!(count_seg("the cup[SEG] and plate[SEG]."), 2);
        assert_eq!(count_seg("nothing here"), 0);
    }
}
