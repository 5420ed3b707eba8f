use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use crate::error::Result;
use crate::predictor::WeightBundle;

/// Weight bundles known to a decoder, keyed by digest.
#[derive(Clone, Debug, Default)]
pub struct WeightRegistry {
    bundles: HashMap<[u8; 32], Arc<WeightBundle>>,
}

impl WeightRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, bundle: Arc<WeightBundle>) -> [u8; 32] {
        let digest = bundle.digest();
        self.bundles.insert(digest, bundle);
        digest
    }

    pub fn get(&self, digest: &[u8; 32]) -> Option<Arc<WeightBundle>> {
        self.bundles.get(digest).cloned()
    }

    pub fn len(&self) -> usize {
        self.bundles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bundles.is_empty()
    }

    /// Loads every `*.rwgt` file in `dir` (not recursive).
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut reg = Self::new();
        let mut paths: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("rwgt")))
            .collect();
        paths.sort();
        for p in paths {
            let bundle = WeightBundle::from_bytes(&fs::read(&p)?)?;
            reg.insert(Arc::new(bundle));
        }
        Ok(reg)
    }
}

impl FromIterator<Arc<WeightBundle>> for WeightRegistry {
    fn from_iter<I: IntoIterator<Item = Arc<WeightBundle>>>(iter: I) -> Self {
        let mut reg = Self::new();
        for b in iter {
            reg.insert(b);
        }
        reg
    }
}
