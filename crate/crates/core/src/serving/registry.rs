use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, RwLock};

use super::frozen::deserialize_model;
use super::ServingError;
use crate::model::TrainedModel;

#[derive(Debug, Default)]
struct Family {
    versions: BTreeMap<String, Arc<TrainedModel>>,
    active: Option<Arc<TrainedModel>>,
}

/// Loaded model versions per family, with one active version each.
///
/// Readers clone the active `Arc`, so a prediction finishes on the version
/// it started with even if another version is activated meanwhile.
#[derive(Debug, Default)]
pub struct ModelRegistry {
    families: RwLock<HashMap<String, Family>>,
}

impl ModelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `model` without activating it.
    pub fn insert(&self, model: TrainedModel) -> Arc<TrainedModel> {
        let model = Arc::new(model);
        let mut fams = self.families.write().unwrap_or_else(|p| p.into_inner());
        fams.entry(model.family_id.clone())
            .or_default()
            .versions
            .insert(model.version_id.clone(), model.clone());
        model
    }

    /// Decodes frozen bytes, registers the version and makes it active.
    /// Nothing changes if decoding fails.
    pub fn load_model(&self, bytes: &[u8]) -> Result<Arc<TrainedModel>, ServingError> {
        let model = deserialize_model(bytes)?;
        let family = model.family_id.clone();
        let version = model.version_id.clone();
        self.insert(model);
        self.activate_version(&family, &version)
    }

    pub fn activate_version(&self, family_id: &str, version_id: &str) -> Result<Arc<TrainedModel>, ServingError> {
        let mut fams = self.families.write().unwrap_or_else(|p| p.into_inner());
        let fam = fams
            .get_mut(family_id)
            .ok_or_else(|| ServingError::NotFound(format!("family {family_id}")))?;
        let model = fam
            .versions
            .get(version_id)
            .cloned()
            .ok_or_else(|| ServingError::NotFound(format!("version {version_id} of {family_id}")))?;
        fam.active = Some(model.clone());
        Ok(model)
    }

    pub fn active(&self, family_id: &str) -> Option<Arc<TrainedModel>> {
        let fams = self.families.read().unwrap_or_else(|p| p.into_inner());
        fams.get(family_id).and_then(|f| f.active.clone())
    }

    pub fn versions(&self, family_id: &str) -> Vec<String> {
        let fams = self.families.read().unwrap_or_else(|p| p.into_inner());
        fams.get(family_id).map(|f| f.versions.keys().cloned().collect()).unwrap_or_default()
    }

    pub fn families(&self) -> Vec<String> {
        let fams = self.families.read().unwrap_or_else(|p| p.into_inner());
        let mut out: Vec<String> = fams.keys().cloned().collect();
        out.sort();
        out
    }
}
