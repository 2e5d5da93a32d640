use std::collections::HashSet;
use std::path::Path;

use super::split::class_counts;
use crate::error::{FinoError, Result};
use crate::vision::{list_episode_dirs, load_episode, Episode, Label};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub episodes: Vec<Episode>,
}

impl Dataset {
    /// Rejects duplicate ids.
    pub fn new(episodes: Vec<Episode>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &episodes {
            if !seen.insert(e.id.as_str()) {
                return Err(FinoError::Split(format!("duplicate episode id {:?}", e.id)));
            }
        }
        Ok(Dataset { episodes })
    }

    /// Every episode directory under `root`, in name order.
    pub fn load(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(FinoError::Ingestion {
                path: root.to_path_buf(),
                reason: "data directory does not exist".into(),
            });
        }
        let dirs = list_episode_dirs(root)?;
        if dirs.is_empty() {
            return Err(FinoError::Ingestion {
                path: root.to_path_buf(),
                reason: "no episode directories (with meta.json) found".into(),
            });
        }
        Dataset::new(dirs.iter().map(|d| load_episode(d)).collect::<Result<_>>()?)
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.episodes.iter().map(|e| e.label).collect()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        class_counts(&self.labels())
    }

    pub fn select(&self, indices: &[usize]) -> Vec<&Episode> {
        indices.iter().map(|&i| &self.episodes[i]).collect()
    }

    pub fn find(&self, id: &str) -> Option<&Episode> {
        self.episodes.iter().find(|e| e.id == id)
    }
}
