use std::fmt;

use serde::{Deserialize, Serialize};

/// Ulam-Harris word of an individual.
///
/// `root` indexes the atom of the initial generation the individual descends
/// from; `path` holds one child rank per generation, so `path.len()` is the
/// generation of the individual.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Label {
    pub root: u32,
    pub path: Vec<u32>,
}

impl Label {
    pub fn root(root: u32) -> Self {
        Self { root, path: Vec::new() }
    }

    pub fn generation(&self) -> usize {
        self.path.len()
    }

    /// Label of the `rank`-th child.
    pub fn child(&self, rank: u32) -> Self {
        let mut path = Vec::with_capacity(self.path.len() + 1);
        path.extend_from_slice(&self.path);
        path.push(rank);
        Self { root: self.root, path }
    }

    /// `self ≤ other` in the ancestry order (prefix relation, self included).
    pub fn is_ancestor_of(&self, other: &Label) -> bool {
        self.root == other.root
            && self.path.len() <= other.path.len()
            && other.path[..self.path.len()] == self.path[..]
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}:", self.root)?;
        for (i, r) in self.path.iter().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            write!(f, "{r}")?;
        }
        Ok(())
    }
}
