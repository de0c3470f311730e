//! Household CSV files and the packaged CoronaHouse dataset.
//!
//! Schema: header `id,s0,i0,infected,generations[,<covariate>...]`, UTF-8,
//! comma separated. An empty `generations` field means the outbreak was
//! followed to its end. Extra columns are covariates: numeric when every
//! non-empty value parses as a number, categorical otherwise.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::estimation::{Covariate, Horizon, HouseholdObservation};

pub const REQUIRED_COLUMNS: [&str; 5] = ["id", "s0", "i0", "infected", "generations"];

/// A loaded household dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub path: Option<PathBuf>,
    pub records: Vec<HouseholdObservation>,
    pub covariate_names: Vec<String>,
    /// Non-fatal findings such as duplicate household ids.
    pub warnings: Vec<String>,
}

impl DatasetFile {
    /// Total household members, index cases included.
    pub fn total_members(&self) -> u32 {
        self.records.iter().map(|r| r.s0 + r.i0).sum()
    }

    /// Records whose covariate `name` renders as `value`.
    pub fn filtered(&self, name: &str, value: &str) -> Vec<HouseholdObservation> {
        self.records
            .iter()
            .filter(|r| r.covariates.get(name).is_some_and(|c| c.to_string() == value))
            .cloned()
            .collect()
    }
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<DatasetFile> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut dataset = parse_csv(file)?;
    dataset.path = Some(path.to_path_buf());
    Ok(dataset)
}

fn parse_error(row: usize, column: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

/// Parses a household CSV from any reader. Row numbers in errors are file
/// line numbers, the header being line 1.
pub fn parse_csv<R: Read>(reader: R) -> Result<DatasetFile> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_error(1, "header", e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < REQUIRED_COLUMNS.len() || header[..REQUIRED_COLUMNS.len()] != REQUIRED_COLUMNS {
        return Err(parse_error(
            1,
            "header",
            format!("expected header to start with `{}`", REQUIRED_COLUMNS.join(",")),
        ));
    }
    let covariate_names: Vec<String> = header[REQUIRED_COLUMNS.len()..].to_vec();
    let mut names_seen = BTreeSet::new();
    for name in &header {
        if !names_seen.insert(name) {
            return Err(parse_error(1, name, "duplicate column name"));
        }
    }

    struct Raw {
        row: usize,
        obs: HouseholdObservation,
        covariates: Vec<String>,
    }

    let mut raws = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| {
            let row = e.position().map_or(k + 2, |p| p.line() as usize);
            parse_error(row, "record", e.to_string())
        })?;
        let row = record.position().map_or(k + 2, |p| p.line() as usize);
        let count = |col: usize| -> Result<u32> {
            let text = &record[col];
            text.parse::<u32>().map_err(|_| {
                parse_error(row, REQUIRED_COLUMNS[col], format!("`{text}` is not a non-negative integer"))
            })
        };
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(parse_error(row, "id", "household id is empty"));
        }
        let s0 = count(1)?;
        let i0 = count(2)?;
        let infected = count(3)?;
        let horizon = if record[4].is_empty() {
            Horizon::Final
        } else {
            Horizon::Generations(count(4)?)
        };
        if i0 == 0 {
            return Err(parse_error(row, "i0", "at least one index case is required"));
        }
        if infected > s0 {
            return Err(parse_error(row, "infected", format!("infected {infected} exceeds s0 {s0}")));
        }
        if horizon == Horizon::Generations(0) {
            return Err(parse_error(row, "generations", "must be at least 1 or empty for a concluded outbreak"));
        }
        raws.push(Raw {
            row,
            obs: HouseholdObservation {
                id,
                s0,
                i0,
                infected,
                horizon,
                covariates: BTreeMap::new(),
            },
            covariates: record.iter().skip(REQUIRED_COLUMNS.len()).map(str::to_string).collect(),
        });
    }
    if raws.is_empty() {
        return Err(parse_error(2, "record", "dataset has no households"));
    }

    for (j, name) in covariate_names.iter().enumerate() {
        let numeric = raws
            .iter()
            .map(|r| r.covariates[j].as_str())
            .filter(|v| !v.is_empty())
            .all(|v| v.parse::<f64>().is_ok_and(f64::is_finite));
        for raw in &mut raws {
            let text = &raw.covariates[j];
            if text.is_empty() {
                continue;
            }
            let value = if numeric {
                Covariate::Numeric(text.parse().expect("checked numeric"))
            } else {
                Covariate::Categorical(text.clone())
            };
            raw.obs.covariates.insert(name.clone(), value);
        }
    }

    let mut warnings = Vec::new();
    let mut first_row: BTreeMap<String, usize> = BTreeMap::new();
    for raw in &raws {
        if let Some(prev) = first_row.insert(raw.obs.id.clone(), raw.row) {
            let msg = format!("row {}: household id `{}` already used on row {prev}", raw.row, raw.obs.id);
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }

    Ok(DatasetFile {
        path: None,
        records: raws.into_iter().map(|r| r.obs).collect(),
        covariate_names,
        warnings,
    })
}

/// Writes records in the household CSV schema.
pub fn write_csv<W: Write>(records: &[HouseholdObservation], covariate_names: &[String], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    let csv_err = |e: csv::Error| Error::Io(e.to_string());
    let mut header: Vec<&str> = REQUIRED_COLUMNS.to_vec();
    header.extend(covariate_names.iter().map(String::as_str));
    w.write_record(&header).map_err(csv_err)?;
    for r in records {
        let mut fields = vec![
            r.id.clone(),
            r.s0.to_string(),
            r.i0.to_string(),
            r.infected.to_string(),
            match r.horizon {
                Horizon::Generations(d) => d.to_string(),
                Horizon::Final => String::new(),
            },
        ];
        fields.extend(
            covariate_names
                .iter()
                .map(|n| r.covariates.get(n).map(ToString::to_string).unwrap_or_default()),
        );
        w.write_record(&fields).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Table 1 cells: `(variant, household size, index cases, secondary cases, households)`.
/// Cells with no households are listed for completeness and expand to nothing.
const CORONAHOUSE_CELLS: &[(&str, u32, u32, u32, usize)] = &[
    ("nonvoc", 2, 1, 0, 8),
    ("nonvoc", 2, 1, 1, 7),
    ("nonvoc", 3, 1, 0, 2),
    ("nonvoc", 3, 1, 1, 3),
    ("nonvoc", 3, 1, 2, 3),
    ("nonvoc", 3, 2, 0, 0),
    ("nonvoc", 4, 1, 0, 5),
    ("nonvoc", 4, 1, 1, 0),
    ("nonvoc", 4, 1, 2, 1),
    ("nonvoc", 4, 1, 3, 1),
    ("nonvoc", 4, 2, 0, 1),
    ("nonvoc", 4, 2, 2, 0),
    ("nonvoc", 4, 3, 0, 1),
    ("nonvoc", 5, 1, 0, 2),
    ("nonvoc", 5, 1, 1, 1),
    ("nonvoc", 5, 1, 2, 1),
    ("nonvoc", 5, 1, 3, 0),
    ("nonvoc", 5, 2, 0, 0),
    ("nonvoc", 5, 2, 2, 0),
    ("nonvoc", 5, 3, 0, 0),
    ("nonvoc", 6, 1, 0, 0),
    ("nonvoc", 6, 1, 1, 0),
    ("nonvoc", 6, 1, 2, 0),
    ("nonvoc", 6, 1, 3, 1),
    ("nonvoc", 6, 1, 5, 1),
    ("nonvoc", 6, 2, 0, 0),
    ("nonvoc", 6, 2, 2, 0),
    ("nonvoc", 6, 3, 0, 0),
    ("alpha", 2, 1, 0, 1),
    ("alpha", 2, 1, 1, 5),
    ("alpha", 4, 1, 0, 1),
    ("alpha", 4, 1, 1, 1),
    ("alpha", 4, 1, 2, 0),
    ("alpha", 4, 1, 3, 5),
    ("alpha", 4, 2, 0, 0),
    ("alpha", 4, 2, 2, 1),
    ("alpha", 4, 3, 0, 0),
];

/// Final outbreak sizes of the 52 households of the Norwegian CoronaHouse
/// SARS-CoV-2 household study, one record per household, with covariate
/// `variant` in `{nonvoc, alpha}`.
pub fn coronahouse_fixture() -> DatasetFile {
    let mut records = Vec::new();
    for &(variant, size, i0, infected, n) in CORONAHOUSE_CELLS {
        for k in 1..=n {
            let obs = HouseholdObservation::new(
                format!("{variant}-n{size}-i{i0}-x{infected}-{k}"),
                size - i0,
                i0,
                infected,
                Horizon::Final,
            )
            .expect("fixture cells are valid")
            .with_covariate("variant", Covariate::Categorical(variant.to_string()));
            records.push(obs);
        }
    }
    DatasetFile {
        path: None,
        records,
        covariate_names: vec!["variant".to_string()],
        warnings: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<DatasetFile> {
        parse_csv(text.as_bytes())
    }

    #[test]
    fn direct_field_mapping() {
        let d = parse("id,s0,i0,infected,generations\nh1,3,1,2,2\n").unwrap();
        let h = &d.records[0];
        assert_eq!((h.id.as_str(), h.s0, h.i0, h.infected, h.horizon), ("h1", 3, 1, 2, Horizon::Generations(2)));
        assert!(d.covariate_names.is_empty());
    }

    #[test]
    fn empty_generations_is_final() {
        let d = parse("id,s0,i0,infected,generations\nh1,3,1,2,\n").unwrap();
        assert_eq!(d.records[0].horizon, Horizon::Final);
    }

    #[test]
    fn infected_above_s0_rejected() {
        match parse("id,s0,i0,infected,generations\nh1,3,1,2,\nh2,3,1,4,\n") {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 3);
                assert_eq!(column, "infected");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_fields_name_their_column() {
        let cases = [
            ("h1,x,1,0,", "s0"),
            ("h1,3,0,0,", "i0"),
            ("h1,3,1,-1,", "infected"),
            ("h1,3,1,1,0", "generations"),
            (",3,1,1,", "id"),
        ];
        for (row, col) in cases {
            let text = format!("id,s0,i0,infected,generations\n{row}\n");
            match parse(&text) {
                Err(Error::Parse { row: 2, column, .. }) => assert_eq!(column, col),
                other => panic!("{row}: {other:?}"),
            }
        }
    }

    #[test]
    fn header_and_shape_errors() {
        assert!(matches!(parse("id,s0,i0,generations,infected\nh,1,1,1,1\n"), Err(Error::Parse { row: 1, .. })));
        assert!(matches!(parse("id,s0,i0,infected,generations\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse("id,s0,i0,infected,generations\nh1,3,1\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn covariate_typing() {
        let d = parse("id,s0,i0,infected,generations,age,variant\na,2,1,0,,3.5,x\nb,1,1,1,1,4,y\n").unwrap();
        assert_eq!(d.covariate_names, vec!["age", "variant"]);
        assert_eq!(d.records[1].covariates["age"], Covariate::Numeric(4.0));
        assert_eq!(d.records[0].covariates["variant"], Covariate::Categorical("x".into()));
        let d = parse("id,s0,i0,infected,generations,mixed\na,2,1,0,,3\nb,1,1,1,1,low\n").unwrap();
        assert_eq!(d.records[0].covariates["mixed"], Covariate::Categorical("3".into()));
    }

    #[test]
    fn duplicate_ids_warn() {
        let d = parse("id,s0,i0,infected,generations\nh,2,1,0,\nh,2,1,1,\n").unwrap();
        assert_eq!(d.records.len(), 2);
        assert_eq!(d.warnings.len(), 1);
        assert!(d.warnings[0].contains("row 3"));
    }

    #[test]
    fn fixture_totals() {
        let f = coronahouse_fixture();
        assert_eq!(f.records.len(), 52);
        assert_eq!(f.total_members(), 166);
        assert_eq!(f.filtered("variant", "nonvoc").len(), 38);
        assert_eq!(f.filtered("variant", "alpha").len(), 14);
        let size2 = f
            .filtered("variant", "nonvoc")
            .into_iter()
            .filter(|h| h.s0 == 1 && h.i0 == 1)
            .collect::<Vec<_>>();
        assert_eq!(size2.iter().filter(|h| h.infected == 0).count(), 8);
        assert_eq!(size2.iter().filter(|h| h.infected == 1).count(), 7);
        let cell: Vec<_> = f
            .filtered("variant", "alpha")
            .into_iter()
            .filter(|h| h.s0 + h.i0 == 4 && h.i0 == 2 && h.infected == 2)
            .collect();
        assert_eq!(cell.len(), 1);
        assert_eq!(cell[0].s0, 2);
        assert!(f.records.iter().all(|h| h.horizon == Horizon::Final));
    }

    #[test]
    fn packaged_csv_matches_fixture() {
        let f = coronahouse_fixture();
        let mut buf = Vec::new();
        write_csv(&f.records, &f.covariate_names, &mut buf).unwrap();
        let shipped = include_str!("../data/coronahouse.csv");
        assert_eq!(String::from_utf8(buf).unwrap(), shipped);
    }

    #[test]
    fn load_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "id,s0,i0,infected,generations\nh1,3,1,2,2\n").unwrap();
        let d = load_csv(&path).unwrap();
        assert_eq!(d.path.as_deref(), Some(path.as_path()));
        assert!(matches!(load_csv(dir.path().join("missing.csv")), Err(Error::Io(_))));
    }
}
