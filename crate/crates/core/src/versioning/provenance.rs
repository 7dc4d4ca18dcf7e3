//! Provenance records and on-demand regeneration of virtual products.
//!
//! A product is described by a registered deterministic recipe, its
//! parameters and a list of immutable inputs pinned by checksum. The bytes
//! themselves may be dropped at any time and rebuilt from the record.

use std::collections::BTreeMap;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use super::ReleaseId;
use crate::catalog::Checksum;
use crate::error::{Error, Result};
use crate::index::{ConeQuery, PartitionKey};
use crate::types::SourceRecord;

pub type ProductId = String;
pub type Params = BTreeMap<String, String>;

/// A reference to immutable input data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputRef {
    /// A partition as frozen in a release; its bytes are the ND-JSON export.
    Partition { release: ReleaseId, key: PartitionKey },
    File { logical_path: String },
}

impl std::fmt::Display for InputRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InputRef::Partition { release, key } => write!(f, "{release}/{key}"),
            InputRef::File { logical_path } => f.write_str(logical_path),
        }
    }
}

/// Supplies input bytes together with the input's current checksum.
pub trait InputSource {
    fn fetch(&self, input: &InputRef) -> Result<(Vec<u8>, Checksum)>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PinnedInput {
    pub input: InputRef,
    pub checksum: Checksum,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub product_id: ProductId,
    pub recipe_id: String,
    pub recipe_version: u32,
    pub software: String,
    pub params: Params,
    pub inputs: Vec<PinnedInput>,
    pub output_checksum: Checksum,
}

pub type RecipeFn = fn(&Params, &[Vec<u8>]) -> Result<Vec<u8>>;

#[derive(Clone, Copy)]
pub struct Recipe {
    pub version: u32,
    pub run: RecipeFn,
}

fn records_of(bytes: &[u8]) -> Result<Vec<SourceRecord>> {
    let text = std::str::from_utf8(bytes).map_err(|_| Error::Parse("input is not text".into()))?;
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

fn ndjson(records: &[SourceRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("records serialize");
        out.push(b'\n');
    }
    out
}

fn param_f64(params: &Params, name: &str) -> Result<f64> {
    let v = params
        .get(name)
        .ok_or_else(|| Error::Config(format!("recipe parameter {name} missing")))?;
    v.parse()
        .map_err(|_| Error::Config(format!("recipe parameter {name}={v:?} is not a number")))
}

fn identity(_: &Params, inputs: &[Vec<u8>]) -> Result<Vec<u8>> {
    match inputs {
        [one] => Ok(one.clone()),
        _ => Err(Error::Config("identity takes exactly one input".into())),
    }
}

/// Multiplies every record's flux by `factor`.
fn flux_scale(params: &Params, inputs: &[Vec<u8>]) -> Result<Vec<u8>> {
    let factor = param_f64(params, "factor")?;
    let mut out = Vec::new();
    for input in inputs {
        let mut recs = records_of(input)?;
        for r in &mut recs {
            r.flux *= factor;
        }
        out.extend(ndjson(&recs));
    }
    Ok(out)
}

/// Concatenates the inputs in the recorded order.
fn union(_: &Params, inputs: &[Vec<u8>]) -> Result<Vec<u8>> {
    if inputs.is_empty() {
        return Err(Error::Config("union needs at least one input".into()));
    }
    Ok(inputs.concat())
}

/// Records within a cone given by `ra`, `dec`, `radius` (degrees).
fn cone_extract(params: &Params, inputs: &[Vec<u8>]) -> Result<Vec<u8>> {
    let cone = ConeQuery::new(
        param_f64(params, "ra")?,
        param_f64(params, "dec")?,
        param_f64(params, "radius")?,
    )?;
    let mut out = Vec::new();
    for input in inputs {
        let recs: Vec<_> = records_of(input)?
            .into_iter()
            .filter(|r| cone.contains(r.ra, r.dec))
            .collect();
        out.extend(ndjson(&recs));
    }
    Ok(out)
}

/// Registered recipes by id.
#[derive(Clone)]
pub struct RecipeBook {
    recipes: BTreeMap<String, Recipe>,
}

impl Default for RecipeBook {
    fn default() -> Self {
        let mut b = RecipeBook {
            recipes: BTreeMap::new(),
        };
        b.register("identity", 1, identity);
        b.register("flux_scale", 1, flux_scale);
        b.register("union", 1, union);
        b.register("cone_extract", 1, cone_extract);
        b
    }
}

impl RecipeBook {
    pub fn register(&mut self, id: &str, version: u32, run: RecipeFn) {
        self.recipes.insert(id.to_string(), Recipe { version, run });
    }

    pub fn get(&self, id: &str) -> Result<Recipe> {
        self.recipes
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownRecipe(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.recipes.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ProvenanceState {
    pub records: Vec<ProvenanceRecord>,
    /// Materialized products kept alongside their records.
    pub materialized: BTreeMap<ProductId, Vec<u8>>,
}

#[derive(Default)]
pub struct ProvenanceStore {
    recipes: RecipeBook,
    records: RwLock<BTreeMap<ProductId, ProvenanceRecord>>,
    materialized: RwLock<BTreeMap<ProductId, Vec<u8>>>,
}

impl ProvenanceStore {
    pub fn new(recipes: RecipeBook) -> Self {
        ProvenanceStore {
            recipes,
            records: RwLock::default(),
            materialized: RwLock::default(),
        }
    }

    pub fn recipes(&self) -> &RecipeBook {
        &self.recipes
    }

    /// Runs `recipe_id` once, records how, and keeps the bytes materialized.
    pub fn record_provenance(
        &self,
        product_id: &str,
        recipe_id: &str,
        params: Params,
        inputs: Vec<InputRef>,
        source: &dyn InputSource,
    ) -> Result<ProvenanceRecord> {
        if self.records.read().contains_key(product_id) {
            return Err(Error::DuplicateProduct(product_id.into()));
        }
        let recipe = self.recipes.get(recipe_id)?;
        let mut pinned = Vec::with_capacity(inputs.len());
        let mut data = Vec::with_capacity(inputs.len());
        for input in inputs {
            let (bytes, checksum) = source.fetch(&input)?;
            data.push(bytes);
            pinned.push(PinnedInput { input, checksum });
        }
        let out = (recipe.run)(&params, &data)?;
        let record = ProvenanceRecord {
            product_id: product_id.into(),
            recipe_id: recipe_id.into(),
            recipe_version: recipe.version,
            software: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).into(),
            params,
            inputs: pinned,
            output_checksum: Checksum::of(&out),
        };
        let mut records = self.records.write();
        if records.contains_key(product_id) {
            return Err(Error::DuplicateProduct(product_id.into()));
        }
        records.insert(product_id.into(), record.clone());
        self.materialized.write().insert(product_id.into(), out);
        Ok(record)
    }

    pub fn record(&self, product_id: &str) -> Result<ProvenanceRecord> {
        self.records
            .read()
            .get(product_id)
            .cloned()
            .ok_or_else(|| Error::UnknownProduct(product_id.into()))
    }

    pub fn records(&self) -> Vec<ProvenanceRecord> {
        self.records.read().values().cloned().collect()
    }

    /// Drops the materialized bytes; the record stays.
    pub fn delete_materialized(&self, product_id: &str) -> bool {
        self.materialized.write().remove(product_id).is_some()
    }

    pub fn is_materialized(&self, product_id: &str) -> bool {
        self.materialized.read().contains_key(product_id)
    }

    /// Materialized bytes if present, otherwise a regeneration.
    pub fn product(&self, product_id: &str, source: &dyn InputSource) -> Result<Vec<u8>> {
        if let Some(b) = self.materialized.read().get(product_id) {
            return Ok(b.clone());
        }
        self.regenerate(product_id, source)
    }

    /// Re-runs the recorded recipe against the pinned inputs.
    pub fn regenerate(&self, product_id: &str, source: &dyn InputSource) -> Result<Vec<u8>> {
        let rec = self.record(product_id)?;
        let recipe = self.recipes.get(&rec.recipe_id)?;
        if recipe.version != rec.recipe_version {
            return Err(Error::UnknownRecipe(format!(
                "{} version {}",
                rec.recipe_id, rec.recipe_version
            )));
        }
        let mut data = Vec::with_capacity(rec.inputs.len());
        for pin in &rec.inputs {
            let (bytes, now) = source.fetch(&pin.input)?;
            if now != pin.checksum {
                return Err(Error::ChecksumMismatch {
                    subject: pin.input.to_string(),
                    expected: pin.checksum.to_string(),
                    found: now.to_string(),
                });
            }
            data.push(bytes);
        }
        let out = (recipe.run)(&rec.params, &data)?;
        let found = Checksum::of(&out);
        if found != rec.output_checksum {
            return Err(Error::ChecksumMismatch {
                subject: product_id.into(),
                expected: rec.output_checksum.to_string(),
                found: found.to_string(),
            });
        }
        Ok(out)
    }

    /// The record as a JSON document with a fixed key order.
    pub fn export_json(&self, product_id: &str) -> Result<String> {
        Ok(serde_json::to_string(&self.record(product_id)?)?)
    }

    pub fn state(&self) -> ProvenanceState {
        ProvenanceState {
            records: self.records(),
            materialized: self.materialized.read().clone(),
        }
    }

    pub fn from_state(recipes: RecipeBook, state: ProvenanceState) -> Self {
        let s = ProvenanceStore::new(recipes);
        *s.records.write() = state
            .records
            .into_iter()
            .map(|r| (r.product_id.clone(), r))
            .collect();
        *s.materialized.write() = state.materialized;
        s
    }
}
