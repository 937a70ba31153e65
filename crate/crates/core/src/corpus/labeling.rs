use std::collections::HashMap;

/// Trigger tokens per key, aligned with the profile's key order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynonymTable {
    triggers: Vec<Vec<String>>,
}

impl SynonymTable {
    pub fn new(triggers: Vec<Vec<String>>) -> Self {
        SynonymTable { triggers }
    }

    pub fn num_keys(&self) -> usize {
        self.triggers.len()
    }

    pub fn triggers(&self, key: usize) -> &[String] {
        &self.triggers[key]
    }
}

/// Keyword/synonym key labeler used to build profile-related training data.
///
/// Returns the key whose trigger appears earliest in the post; a token that
/// triggers several keys goes to the lowest key index.
pub fn noisy_key_label<S: AsRef<str>>(post: &[S], table: &SynonymTable) -> Option<usize> {
    let mut owner: HashMap<&str, usize> = HashMap::new();
    for (k, triggers) in table.triggers.iter().enumerate() {
        for t in triggers {
            owner.entry(t.as_str()).or_insert(k);
        }
    }
    post.iter().find_map(|tok| owner.get(tok.as_ref()).copied())
}
