use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::referring::GroundedExpression;
use super::{Scene, SceneObject};
use crate::error::{Error, Result};

pub const SPLITS_FILE: &str = "splits.json";

/// On-disk form of one scene with its expressions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<SceneObject>,
    pub expressions: Vec<GroundedExpression>,
}

impl SceneFile {
    pub fn new(scene: Scene, expressions: Vec<GroundedExpression>) -> Self {
        SceneFile {
            id: scene.id,
            width: scene.width,
            height: scene.height,
            objects: scene.objects,
            expressions,
        }
    }

    pub fn scene(&self) -> Scene {
        Scene {
            id: self.id.clone(),
            width: self.width,
            height: self.height,
            objects: self.objects.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serialization cannot fail")
    }
}

/// Partition membership, by scene id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusSplits(pub BTreeMap<String, Vec<String>>);

pub fn load_scene_file(path: &Path) -> Result<SceneFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: SceneFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    let scene = file.scene();
    scene.validate()?;
    for e in &file.expressions {
        if scene.object(&e.target).is_none() {
            return Err(Error::InvalidArgument(format!(
                "{}: expression {:?} targets unknown object {}",
                path.display(),
                e.text,
                e.target
            )));
        }
    }
    Ok(file)
}

/// Writes one JSON file per scene plus the optional split manifest.
pub fn save_corpus(dir: &Path, scenes: &[SceneFile], splits: Option<&CorpusSplits>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in scenes {
        let path = dir.join(format!("{}.json", s.id));
        fs::write(&path, s.to_json()).map_err(|e| Error::io(&path, e))?;
    }
    if let Some(splits) = splits {
        let path = dir.join(SPLITS_FILE);
        let text = serde_json::to_string_pretty(splits).expect("splits serialize");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Loads every scene file in `dir` (sorted by id) and the split manifest
/// when present.
pub fn load_corpus(dir: &Path) -> Result<(Vec<SceneFile>, Option<CorpusSplits>)> {
    let mut scenes = Vec::new();
    let mut splits = None;
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        if path.file_name().and_then(|n| n.to_str()) == Some(SPLITS_FILE) {
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            splits = Some(serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?);
        } else {
            scenes.push(load_scene_file(&path)?);
        }
    }
    scenes.sort_by(|a, b| a.id.cmp(&b.id));
    Ok((scenes, splits))
}
