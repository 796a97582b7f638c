use std::collections::BTreeMap;

use super::MsroiError;

/// Collapses raw dataset labels onto dense merged category ids.
///
/// Text form: one `raw_label merged_id` pair per line, `#` starts a comment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassMergeTable {
    map: BTreeMap<String, usize>,
    categories: usize,
}

impl ClassMergeTable {
    pub fn new(pairs: impl IntoIterator<Item = (String, usize)>) -> Result<Self, MsroiError> {
        let mut map = BTreeMap::new();
        for (raw, id) in pairs {
            if let Some(prev) = map.insert(raw.clone(), id) {
                if prev != id {
                    return Err(MsroiError::MergeTable(format!("label {raw:?} mapped to both {prev} and {id}")));
                }
            }
        }
        if map.is_empty() {
            return Err(MsroiError::MergeTable("no labels".into()));
        }
        let mut seen: Vec<bool> = Vec::new();
        for &id in map.values() {
            if id >= seen.len() {
                seen.resize(id + 1, false);
            }
            seen[id] = true;
        }
        if let Some(gap) = seen.iter().position(|&s| !s) {
            return Err(MsroiError::MergeTable(format!(
                "merged ids must be dense in [0, {}), id {gap} unused",
                seen.len()
            )));
        }
        Ok(ClassMergeTable {
            categories: seen.len(),
            map,
        })
    }

    /// Each label becomes its own category, in the given order.
    pub fn identity<S: AsRef<str>>(labels: &[S]) -> Result<Self, MsroiError> {
        Self::new(labels.iter().enumerate().map(|(i, l)| (l.as_ref().to_string(), i)))
    }

    pub fn parse(text: &str) -> Result<Self, MsroiError> {
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(raw), Some(id), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(MsroiError::MergeTable(format!("line {}: expected `label id`", n + 1)));
            };
            let id = id
                .parse()
                .map_err(|_| MsroiError::MergeTable(format!("line {}: bad id {id:?}", n + 1)))?;
            pairs.push((raw.to_string(), id));
        }
        Self::new(pairs)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (raw, id) in &self.map {
            out.push_str(&format!("{raw} {id}\n"));
        }
        out
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn merge(&self, raw: &str) -> Result<usize, MsroiError> {
        self.map
            .get(raw)
            .copied()
            .ok_or_else(|| MsroiError::UnknownLabel(raw.to_string()))
    }

    /// Multi-hot indicator over merged categories.
    pub fn indicator<S: AsRef<str>>(&self, raw_labels: &[S]) -> Result<Vec<bool>, MsroiError> {
        let mut v = vec![false; self.categories];
        for l in raw_labels {
            v[self.merge(l.as_ref())?] = true;
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_merges() {
        let t = ClassMergeTable::parse("# shapes\nhusky 0\neskimo_dog 0  # same\n\nlace_flower 1\ntuberose 1\n").unwrap();
        assert_eq!(t.categories(), 2);
        assert_eq!(t.merge("eskimo_dog").unwrap(), 0);
        assert_eq!(t.indicator(&["tuberose", "husky"]).unwrap(), vec![true, true]);
        assert!(matches!(t.merge("cat"), Err(MsroiError::UnknownLabel(_))));
        assert_eq!(ClassMergeTable::parse(&t.to_text()).unwrap(), t);
    }

    #[test]
    fn rejects_sparse_ids_and_conflicts() {
        assert!(ClassMergeTable::parse("a 0\nb 2\n").is_err());
        assert!(ClassMergeTable::parse("a 0\na 1\n").is_err());
        assert!(ClassMergeTable::parse("a\n").is_err());
        assert!(ClassMergeTable::parse("").is_err());
    }
}
