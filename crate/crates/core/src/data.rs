//! Panel choice data: domain types, long-format CSV ingestion and
//! person-level holdout splits.
//!
//! The interchange format is a long CSV with one row per
//! person x observation x alternative. Required columns are the person,
//! observation and alternative identifiers plus a 0/1 `chosen` flag; an
//! availability column is optional (absent means every listed alternative
//! is available). All remaining columns are treated as numeric attributes
//! unless the schema names them explicitly.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One alternative within an observation's choice set.
#[derive(Debug, Clone, PartialEq)]
pub struct AlternativeRow {
    pub alternative_id: String,
    pub available: bool,
    pub chosen: bool,
    /// Attribute values, aligned with `ChoicePanel::attribute_names`.
    pub attributes: Vec<f64>,
}

/// One choice occasion: the set of alternatives shown to a person.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub obs_id: String,
    pub rows: Vec<AlternativeRow>,
}

impl Observation {
    /// Index of the chosen row. Panels are validated so exactly one exists.
    pub fn chosen_index(&self) -> Option<usize> {
        self.rows.iter().position(|r| r.chosen)
    }

    pub fn n_available(&self) -> usize {
        self.rows.iter().filter(|r| r.available).count()
    }
}

/// All observations for one decision-maker.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonRecord {
    pub person_id: String,
    pub observations: Vec<Observation>,
}

/// A validated panel of choice observations.
///
/// Immutable after construction; share freely across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoicePanel {
    pub persons: Vec<PersonRecord>,
    pub attribute_names: Vec<String>,
    pub alternative_labels: Vec<String>,
}

impl ChoicePanel {
    /// Builds a panel from pre-grouped records and checks every invariant.
    pub fn new(
        persons: Vec<PersonRecord>,
        attribute_names: Vec<String>,
        alternative_labels: Vec<String>,
    ) -> Result<Self> {
        let panel = ChoicePanel {
            persons,
            attribute_names,
            alternative_labels,
        };
        panel.validate()?;
        Ok(panel)
    }

    pub fn n_persons(&self) -> usize {
        self.persons.len()
    }

    pub fn n_observations(&self) -> usize {
        self.persons.iter().map(|p| p.observations.len()).sum()
    }

    pub fn n_attributes(&self) -> usize {
        self.attribute_names.len()
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attribute_names.iter().position(|n| n == name)
    }

    fn validate(&self) -> Result<()> {
        let k = self.attribute_names.len();
        let mut seen = HashMap::new();
        for (i, person) in self.persons.iter().enumerate() {
            if let Some(prev) = seen.insert(person.person_id.clone(), i) {
                return Err(Error::Validation(format!(
                    "duplicate person id '{}' (records {} and {})",
                    person.person_id, prev, i
                )));
            }
            if person.observations.is_empty() {
                return Err(Error::Validation(format!(
                    "person '{}' has no observations",
                    person.person_id
                )));
            }
            for obs in &person.observations {
                let at = format!("person '{}', observation '{}'", person.person_id, obs.obs_id);
                if obs.n_available() < 2 {
                    return Err(Error::Validation(format!(
                        "{at}: fewer than 2 available alternatives"
                    )));
                }
                let chosen: Vec<&AlternativeRow> = obs.rows.iter().filter(|r| r.chosen).collect();
                match chosen.len() {
                    0 => {
                        return Err(Error::Validation(format!("{at}: no chosen alternative")));
                    }
                    1 => {
                        if !chosen[0].available {
                            return Err(Error::Validation(format!(
                                "{at}: chosen alternative '{}' is not available",
                                chosen[0].alternative_id
                            )));
                        }
                    }
                    n => {
                        return Err(Error::Validation(format!(
                            "{at}: {n} chosen alternatives, expected exactly 1"
                        )));
                    }
                }
                for row in &obs.rows {
                    if row.attributes.len() != k {
                        return Err(Error::Validation(format!(
                            "{at}: alternative '{}' has {} attributes, expected {}",
                            row.alternative_id,
                            row.attributes.len(),
                            k
                        )));
                    }
                    if row.attributes.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Validation(format!(
                            "{at}: alternative '{}' has a non-finite attribute",
                            row.alternative_id
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Maps long-format CSV columns onto the panel structure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub person: String,
    pub observation: String,
    pub alternative: String,
    pub chosen: String,
    /// Name of the availability column. If the column is absent from the
    /// file, all listed alternatives are treated as available.
    pub availability: Option<String>,
    /// Attribute columns in order. `None` means every remaining column.
    pub attributes: Option<Vec<String>>,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        ColumnSchema {
            person: "person_id".into(),
            observation: "obs_id".into(),
            alternative: "alt_id".into(),
            chosen: "chosen".into(),
            availability: Some("avail".into()),
            attributes: None,
        }
    }
}

fn parse_flag(raw: &str, column: &str, row: usize) -> Result<bool> {
    match raw.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::Parse {
            row,
            message: format!("column '{column}' must be 0 or 1, got '{other}'"),
        }),
    }
}

/// Loads and validates a long-format CSV panel.
///
/// Rows are grouped by (person, observation) in order of first appearance,
/// so loading is deterministic for a given file.
pub fn load_panel(path: &Path, schema: &ColumnSchema) -> Result<ChoicePanel> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let col = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column '{name}'")))
    };

    let person_col = col(&schema.person)?;
    let obs_col = col(&schema.observation)?;
    let alt_col = col(&schema.alternative)?;
    let chosen_col = col(&schema.chosen)?;
    // Availability is optional by design: a named but absent column means
    // every listed alternative is available.
    let avail_col = match &schema.availability {
        Some(name) => header.iter().position(|h| h == name),
        None => None,
    };

    let attr_cols: Vec<(String, usize)> = match &schema.attributes {
        Some(names) => {
            let mut cols = Vec::with_capacity(names.len());
            for name in names {
                cols.push((name.clone(), col(name)?));
            }
            cols
        }
        None => {
            let mut reserved = vec![person_col, obs_col, alt_col, chosen_col];
            if let Some(a) = avail_col {
                reserved.push(a);
            }
            header
                .iter()
                .enumerate()
                .filter(|(i, _)| !reserved.contains(i))
                .map(|(i, h)| (h.clone(), i))
                .collect()
        }
    };

    let mut persons: Vec<PersonRecord> = Vec::new();
    let mut person_index: HashMap<String, usize> = HashMap::new();
    let mut obs_index: Vec<HashMap<String, usize>> = Vec::new();
    let mut alternative_labels: Vec<String> = Vec::new();

    for (i, record) in reader.records().enumerate() {
        let row_no = i + 1;
        let record = record?;
        let field = |idx: usize| -> &str { record.get(idx).unwrap_or("").trim() };

        let person_id = field(person_col).to_string();
        let obs_id = field(obs_col).to_string();
        let alt_id = field(alt_col).to_string();
        let chosen = parse_flag(field(chosen_col), &schema.chosen, row_no)?;
        let available = match avail_col {
            Some(c) => parse_flag(
                field(c),
                schema.availability.as_deref().unwrap_or("avail"),
                row_no,
            )?,
            None => true,
        };

        let mut attributes = Vec::with_capacity(attr_cols.len());
        for (name, idx) in &attr_cols {
            let raw = field(*idx);
            let value: f64 = raw.parse().map_err(|_| Error::Parse {
                row: row_no,
                message: format!("column '{name}' must be numeric, got '{raw}'"),
            })?;
            attributes.push(value);
        }

        let pi = *person_index.entry(person_id.clone()).or_insert_with(|| {
            persons.push(PersonRecord {
                person_id,
                observations: Vec::new(),
            });
            obs_index.push(HashMap::new());
            persons.len() - 1
        });
        let oi = *obs_index[pi].entry(obs_id.clone()).or_insert_with(|| {
            persons[pi].observations.push(Observation {
                obs_id,
                rows: Vec::new(),
            });
            persons[pi].observations.len() - 1
        });
        persons[pi].observations[oi].rows.push(AlternativeRow {
            alternative_id: alt_id.clone(),
            available,
            chosen,
            attributes,
        });
        if !alternative_labels.contains(&alt_id) {
            alternative_labels.push(alt_id);
        }
    }

    if persons.is_empty() {
        return Err(Error::Validation("file contains no data rows".into()));
    }

    ChoicePanel::new(
        persons,
        attr_cols.into_iter().map(|(n, _)| n).collect(),
        alternative_labels,
    )
}

/// Writes a panel in the canonical long format (chosen/avail as 0/1).
pub fn save_panel(panel: &ChoicePanel, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec![
        "person_id".to_string(),
        "obs_id".to_string(),
        "alt_id".to_string(),
        "chosen".to_string(),
        "avail".to_string(),
    ];
    header.extend(panel.attribute_names.iter().cloned());
    writer.write_record(&header)?;

    for person in &panel.persons {
        for obs in &person.observations {
            for row in &obs.rows {
                let mut record = vec![
                    person.person_id.clone(),
                    obs.obs_id.clone(),
                    row.alternative_id.clone(),
                    if row.chosen { "1" } else { "0" }.to_string(),
                    if row.available { "1" } else { "0" }.to_string(),
                ];
                record.extend(row.attributes.iter().map(|v| v.to_string()));
                writer.write_record(&record)?;
            }
        }
    }
    writer.flush()?;
    Ok(())
}

/// Splits a panel into (estimation, holdout) by person.
///
/// The split is deterministic for a given seed; the number of holdout
/// persons is `round(fraction * N)`. Person order within each part matches
/// the original panel.
pub fn split_holdout(
    panel: &ChoicePanel,
    fraction: f64,
    seed: u64,
) -> Result<(ChoicePanel, ChoicePanel)> {
    let n = panel.n_persons();
    if n < 2 {
        return Err(Error::Validation(
            "holdout split needs at least 2 persons".into(),
        ));
    }
    if !(0.0 < fraction && fraction < 1.0) {
        return Err(Error::Validation(format!(
            "holdout fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let n_holdout = (fraction * n as f64).round() as usize;
    if n_holdout == 0 || n_holdout == n {
        return Err(Error::Validation(format!(
            "fraction {fraction} yields an empty partition for {n} persons"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng);
    let mut holdout_idx = indices[..n_holdout].to_vec();
    let mut estimation_idx = indices[n_holdout..].to_vec();
    holdout_idx.sort_unstable();
    estimation_idx.sort_unstable();

    let subset = |idx: &[usize]| ChoicePanel {
        persons: idx.iter().map(|&i| panel.persons[i].clone()).collect(),
        attribute_names: panel.attribute_names.clone(),
        alternative_labels: panel.alternative_labels.clone(),
    };
    Ok((subset(&estimation_idx), subset(&holdout_idx)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    const TWO_PERSON: &str = "\
person_id,obs_id,alt_id,chosen,avail,x1,x2
1,1,a,1,1,0.5,1
1,1,b,0,1,-0.5,0
2,1,a,0,1,1.25,1
2,1,b,1,1,0.0,0
";

    #[test]
    fn loads_minimal_panel() {
        let f = write_csv(TWO_PERSON);
        let panel = load_panel(f.path(), &ColumnSchema::default()).unwrap();
        assert_eq!(panel.n_persons(), 2);
        assert_eq!(panel.n_observations(), 2);
        assert_eq!(panel.attribute_names, vec!["x1", "x2"]);
        assert_eq!(panel.alternative_labels, vec!["a", "b"]);
        assert_eq!(panel.persons[0].observations[0].rows[0].attributes[0], 0.5);
    }

    #[test]
    fn missing_column_is_schema_error() {
        let f = write_csv("person_id,obs_id,alt_id,x1\n1,1,a,0.5\n");
        let err = load_panel(f.path(), &ColumnSchema::default()).unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "{err}");
    }

    #[test]
    fn missing_availability_column_means_all_available() {
        let csv = "\
person_id,obs_id,alt_id,chosen,x1
1,1,a,1,0.5
1,1,b,0,-0.5
2,1,a,0,1.0
2,1,b,1,0.0
";
        let f = write_csv(csv);
        let panel = load_panel(f.path(), &ColumnSchema::default()).unwrap();
        assert!(panel
            .persons
            .iter()
            .flat_map(|p| &p.observations)
            .flat_map(|o| &o.rows)
            .all(|r| r.available));
        assert_eq!(panel.attribute_names, vec!["x1"]);
    }

    #[test]
    fn observation_without_choice_is_rejected_with_location() {
        let csv = "\
person_id,obs_id,alt_id,chosen,avail,x1
1,7,a,0,1,0.5
1,7,b,0,1,-0.5
";
        let f = write_csv(csv);
        let err = load_panel(f.path(), &ColumnSchema::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("observation '7'"), "{msg}");
        assert!(msg.contains("no chosen"), "{msg}");
    }

    #[test]
    fn double_choice_is_rejected() {
        let csv = "\
person_id,obs_id,alt_id,chosen,avail,x1
1,1,a,1,1,0.5
1,1,b,1,1,-0.5
";
        let f = write_csv(csv);
        let err = load_panel(f.path(), &ColumnSchema::default()).unwrap_err();
        assert!(err.to_string().contains("2 chosen"), "{err}");
    }

    #[test]
    fn non_numeric_attribute_is_parse_error_with_row() {
        let csv = "\
person_id,obs_id,alt_id,chosen,avail,x1
1,1,a,1,1,0.5
1,1,b,0,1,oops
";
        let f = write_csv(csv);
        let err = load_panel(f.path(), &ColumnSchema::default()).unwrap_err();
        match err {
            Error::Parse { row, .. } => assert_eq!(row, 2),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn chosen_but_unavailable_is_rejected() {
        let csv = "\
person_id,obs_id,alt_id,chosen,avail,x1
1,1,a,1,0,0.5
1,1,b,0,1,-0.5
1,1,c,0,1,0.0
";
        let f = write_csv(csv);
        let err = load_panel(f.path(), &ColumnSchema::default()).unwrap_err();
        assert!(err.to_string().contains("not available"), "{err}");
    }

    #[test]
    fn split_is_deterministic_and_partitions_persons() {
        let persons: Vec<PersonRecord> = (0..10)
            .map(|i| PersonRecord {
                person_id: format!("p{i}"),
                observations: vec![Observation {
                    obs_id: "1".into(),
                    rows: vec![
                        AlternativeRow {
                            alternative_id: "a".into(),
                            available: true,
                            chosen: true,
                            attributes: vec![i as f64],
                        },
                        AlternativeRow {
                            alternative_id: "b".into(),
                            available: true,
                            chosen: false,
                            attributes: vec![-(i as f64)],
                        },
                    ],
                }],
            })
            .collect();
        let panel =
            ChoicePanel::new(persons, vec!["x".into()], vec!["a".into(), "b".into()]).unwrap();

        let (est, hold) = split_holdout(&panel, 0.2, 7).unwrap();
        assert_eq!(hold.n_persons(), 2);
        assert_eq!(est.n_persons(), 8);
        assert_eq!(
            est.n_observations() + hold.n_observations(),
            panel.n_observations()
        );

        let (est2, hold2) = split_holdout(&panel, 0.2, 7).unwrap();
        assert_eq!(est, est2);
        assert_eq!(hold, hold2);

        let mut all: Vec<String> = est
            .persons
            .iter()
            .chain(hold.persons.iter())
            .map(|p| p.person_id.clone())
            .collect();
        all.sort();
        let mut orig: Vec<String> = panel.persons.iter().map(|p| p.person_id.clone()).collect();
        orig.sort();
        assert_eq!(all, orig);
    }

    #[test]
    fn split_rejects_degenerate_fraction() {
        let f = write_csv(TWO_PERSON);
        let panel = load_panel(f.path(), &ColumnSchema::default()).unwrap();
        assert!(split_holdout(&panel, 0.01, 1).is_err());
        assert!(split_holdout(&panel, 0.99, 1).is_err());
    }
}
