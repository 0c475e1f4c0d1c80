use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

/// Records every file the dataset layer opens.
///
/// Cloning shares the log. A disabled audit records nothing.
#[derive(Clone, Debug, Default)]
pub struct AccessAudit {
    log: Option<Arc<Mutex<Vec<PathBuf>>>>,
}

impl AccessAudit {
    pub fn new() -> Self {
        Self {
            log: Some(Arc::default()),
        }
    }

    pub fn disabled() -> Self {
        Self { log: None }
    }

    pub fn record(&self, path: &Path) {
        if let Some(log) = &self.log {
            log.lock().expect("audit lock").push(path.to_path_buf());
        }
    }

    pub fn reads(&self) -> Vec<PathBuf> {
        self.log
            .as_ref()
            .map(|l| l.lock().expect("audit lock").clone())
            .unwrap_or_default()
    }

    /// Files read whose path starts with `dir`.
    pub fn reads_under(&self, dir: &Path) -> Vec<PathBuf> {
        self.reads().into_iter().filter(|p| p.starts_with(dir)).collect()
    }

    pub fn clear(&self) {
        if let Some(log) = &self.log {
            log.lock().expect("audit lock").clear();
        }
    }
}
