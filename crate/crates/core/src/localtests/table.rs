use std::io::Read;

use crate::error::{Error, Result};
use crate::hypotheses::IndexSet;

/// One rejected intersection per line, members separated by commas.
pub fn parse_table<R: Read>(mut source: R) -> Result<Vec<Vec<String>>> {
    let mut text = String::new();
    source
        .read_to_string(&mut text)
        .map_err(|e| Error::Parse { line: 0, message: e.to_string() })?;
    let mut sets = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let names: Vec<String> = line.split(',').map(|n| n.trim().to_string()).collect();
        if names.iter().any(String::is_empty) {
            return Err(Error::Parse {
                line: i + 1,
                message: "empty name in table row".into(),
            });
        }
        sets.push(names);
    }
    Ok(sets)
}

/// Reject exactly the intersections listed in `explicit`.
pub fn table_reject(explicit: &[IndexSet], set: &IndexSet) -> bool {
    explicit.iter().any(|s| s == set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(one_based: &[usize]) -> IndexSet {
        IndexSet::from_indices(3, one_based.iter().map(|i| i - 1)).unwrap()
    }

    #[test]
    fn three_hypothesis_crosses() {
        let explicit = vec![set(&[1]), set(&[1, 2]), set(&[1, 3]), set(&[2, 3]), set(&[1, 2, 3])];
        assert!(table_reject(&explicit, &set(&[2, 3])));
        assert!(!table_reject(&explicit, &set(&[2])));
        assert!(!table_reject(&[], &set(&[1])));
    }

    #[test]
    fn table_file() {
        let rows = parse_table("# crosses\nH1\nH1,H2\n\nH2, H3\n".as_bytes()).unwrap();
        assert_eq!(rows, vec![vec!["H1"], vec!["H1", "H2"], vec!["H2", "H3"]]);
        assert!(matches!(parse_table("H1,,H2".as_bytes()), Err(Error::Parse { line: 1, .. })));
    }
}
