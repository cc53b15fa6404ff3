//! Dataset model and the JSON-Lines sample format.
//!
//! On disk a dataset is one JSON object per line:
//!
//! ```json
//! {"id": "id00042", "gender": "m", "population": "main", "modality": "voice", "features": [0.1, -2.3]}
//! ```
//!
//! In memory the records are grouped per identity (in first-appearance
//! order, which makes loading deterministic) with the voice and face sample
//! lists kept separate. Feature dimensionality must be consistent within
//! each modality across the whole dataset.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gender {
    #[serde(rename = "m")]
    Male,
    #[serde(rename = "f")]
    Female,
}

impl Gender {
    pub fn opposite(self) -> Self {
        match self {
            Gender::Male => Gender::Female,
            Gender::Female => Gender::Male,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Voice,
    Face,
}

/// One sample as it appears on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    pub gender: Gender,
    pub population: String,
    pub modality: Modality,
    pub features: Vec<f64>,
}

/// All samples of one person.
#[derive(Debug, Clone, PartialEq)]
pub struct Identity {
    pub id: String,
    pub gender: Gender,
    pub population: String,
    pub voices: Vec<Vec<f64>>,
    pub faces: Vec<Vec<f64>>,
}

/// An identity-grouped dataset with stable ordering.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    identities: Vec<Identity>,
    by_id: HashMap<String, usize>,
}

impl Dataset {
    /// Groups flat records into identities, preserving first-appearance
    /// order. Rejects inconsistent per-identity metadata and inconsistent
    /// feature dimensions within a modality.
    pub fn from_records(records: Vec<SampleRecord>) -> Result<Self> {
        let mut ds = Dataset::default();
        let mut voice_dim: Option<usize> = None;
        let mut face_dim: Option<usize> = None;
        for (line, rec) in records.into_iter().enumerate() {
            if rec.features.is_empty() {
                return Err(Error::MalformedData(format!(
                    "record {line} (id {:?}) has an empty feature vector",
                    rec.id
                )));
            }
            let expected = match rec.modality {
                Modality::Voice => &mut voice_dim,
                Modality::Face => &mut face_dim,
            };
            match expected {
                Some(d) if *d != rec.features.len() => {
                    return Err(Error::DimensionMismatch {
                        context: "dataset feature dims",
                        left: *d,
                        right: rec.features.len(),
                    });
                }
                Some(_) => {}
                None => *expected = Some(rec.features.len()),
            }
            let idx = match ds.by_id.get(&rec.id) {
                Some(&idx) => {
                    let identity = &ds.identities[idx];
                    if identity.gender != rec.gender || identity.population != rec.population {
                        return Err(Error::MalformedData(format!(
                            "record {line}: id {:?} changes gender or population",
                            rec.id
                        )));
                    }
                    idx
                }
                None => {
                    ds.by_id.insert(rec.id.clone(), ds.identities.len());
                    ds.identities.push(Identity {
                        id: rec.id,
                        gender: rec.gender,
                        population: rec.population,
                        voices: Vec::new(),
                        faces: Vec::new(),
                    });
                    ds.identities.len() - 1
                }
            };
            let identity = &mut ds.identities[idx];
            match rec.modality {
                Modality::Voice => identity.voices.push(rec.features),
                Modality::Face => identity.faces.push(rec.features),
            }
        }
        Ok(ds)
    }

    pub fn from_identities(identities: Vec<Identity>) -> Result<Self> {
        let mut records = Vec::new();
        for identity in identities {
            let Identity {
                id,
                gender,
                population,
                voices,
                faces,
            } = identity;
            for features in voices {
                records.push(SampleRecord {
                    id: id.clone(),
                    gender,
                    population: population.clone(),
                    modality: Modality::Voice,
                    features,
                });
            }
            for features in faces {
                records.push(SampleRecord {
                    id: id.clone(),
                    gender,
                    population: population.clone(),
                    modality: Modality::Face,
                    features,
                });
            }
        }
        Self::from_records(records)
    }

    /// Flattens back to records: identities in order, voices before faces.
    pub fn to_records(&self) -> Vec<SampleRecord> {
        let mut out = Vec::new();
        for identity in &self.identities {
            for features in &identity.voices {
                out.push(SampleRecord {
                    id: identity.id.clone(),
                    gender: identity.gender,
                    population: identity.population.clone(),
                    modality: Modality::Voice,
                    features: features.clone(),
                });
            }
            for features in &identity.faces {
                out.push(SampleRecord {
                    id: identity.id.clone(),
                    gender: identity.gender,
                    population: identity.population.clone(),
                    modality: Modality::Face,
                    features: features.clone(),
                });
            }
        }
        out
    }

    pub fn identities(&self) -> &[Identity] {
        &self.identities
    }

    pub fn len(&self) -> usize {
        self.identities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.identities.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Identity> {
        self.by_id.get(id).map(|&i| &self.identities[i])
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn voice_dim(&self) -> Option<usize> {
        self.identities
            .iter()
            .flat_map(|i| i.voices.first())
            .map(Vec::len)
            .next()
    }

    pub fn face_dim(&self) -> Option<usize> {
        self.identities
            .iter()
            .flat_map(|i| i.faces.first())
            .map(Vec::len)
            .next()
    }

    /// Reads JSON-Lines records. Blank lines are not allowed; every line
    /// must be a complete record.
    pub fn read_jsonl(reader: impl BufRead) -> Result<Self> {
        let mut records = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|e| Error::MalformedData(format!("line {lineno}: {e}")))?;
            if line.trim().is_empty() {
                return Err(Error::MalformedData(format!("line {lineno} is blank")));
            }
            let rec: SampleRecord = serde_json::from_str(&line)
                .map_err(|e| Error::MalformedData(format!("line {lineno}: {e}")))?;
            records.push(rec);
        }
        Self::from_records(records)
    }

    /// Writes one record per line. Floats are serialized in shortest
    /// round-trip form, so write/read reproduces the dataset exactly.
    pub fn write_jsonl(&self, mut writer: impl Write) -> std::io::Result<()> {
        for rec in self.to_records() {
            serde_json::to_writer(&mut writer, &rec)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }
}
