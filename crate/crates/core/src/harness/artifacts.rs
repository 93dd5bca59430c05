//! Saving and loading trained models.

use std::path::Path;

use serde_json::Value;

use crate::distill::{write_codistill_history, PkdnDoc, PkdnModel};
use crate::error::{Error, Result};
use crate::nn::{save_json, Mlp};
use crate::pkn::{write_teacher_history, InputPipeline, PknDoc, PknModel, PKN_KIND};

use super::models::{MlpClassifier, Predictor};
use super::sweep::CellModels;

/// Writes every successfully trained model of a cell to `dir`:
/// `dnn.json`, `pk.json`, `pkn.json` + `pkn_history.csv`,
/// `pkdn.json` + `codistill_history.csv`. Returns the written file names.
pub fn save_cell_models(cell: &CellModels, dir: &Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: &str| written.push(name.to_owned());
    if let Some(Ok(m)) = &cell.dnn {
        save_json(&m.net, &dir.join("dnn.json"))?;
        put("dnn.json");
    }
    if let Some(Ok(m)) = &cell.pk {
        save_json(m, &dir.join("pk.json"))?;
        put("pk.json");
    }
    if let Some(Ok((t, h))) = &cell.teacher {
        save_json(&t.to_doc(), &dir.join("pkn.json"))?;
        write_teacher_history(&dir.join("pkn_history.csv"), h)?;
        put("pkn.json");
        put("pkn_history.csv");
    }
    if let Some(Ok((s, h))) = &cell.pkdn {
        save_json(&s.to_doc(), &dir.join("pkdn.json"))?;
        write_codistill_history(&dir.join("codistill_history.csv"), h)?;
        put("pkdn.json");
        put("codistill_history.csv");
    }
    Ok(written)
}

/// Loads any saved model. The document shape decides the type: a `kind`
/// of `pkn` is a teacher, a `provenance` block marks a distilled student, and
/// anything else is a plain network applied to normalized windows.
pub fn load_predictor(path: &Path) -> Result<Box<dyn Predictor>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: Value = serde_json::from_str(&text)?;
    if value.get("kind").and_then(Value::as_str) == Some(PKN_KIND) {
        let doc: PknDoc = serde_json::from_value(value)?;
        return Ok(Box::new(PknModel::from_doc(doc)?));
    }
    if value.get("provenance").is_some() {
        let doc: PkdnDoc = serde_json::from_value(value)?;
        return Ok(Box::new(PkdnModel::from_doc(doc)?));
    }
    if value.get("specs").is_some() {
        let m: super::models::PkModel = serde_json::from_value(value)?;
        return Ok(Box::new(m));
    }
    let net: Mlp = serde_json::from_value(value)?;
    Ok(Box::new(MlpClassifier {
        pipeline: InputPipeline::default(),
        net,
    }))
}
