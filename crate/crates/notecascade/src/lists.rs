//! Line-oriented list files: one entry per line, `#` comments and blank
//! lines ignored. Used for keyword, title-subword, and abbreviation lists.

use std::path::Path;

use crate::error::{Error, Result};

/// Parse list entries from file contents.
pub fn parse_lines(contents: &str) -> Vec<String> {
    contents
        .lines()
        .map(|line| match line.find('#') {
            Some(pos) => line[..pos].trim(),
            None => line.trim(),
        })
        .filter(|line| !line.is_empty())
        .map(str::to_string)
        .collect()
}

/// Read list entries from a file.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let contents = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_lines(&contents))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_blanks_are_stripped() {
        let entries = parse_lines("# header\n\ndementia*  \nmemory # trailing\n  # only\n");
        assert_eq!(entries, vec!["dementia*", "memory"]);
    }
}
