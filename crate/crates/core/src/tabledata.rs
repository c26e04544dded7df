//! Tract-level feature tables: CSV ingestion, manifests binding columns to
//! ontology terms, inner-join linkage and zip/tract crosswalks.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TableError {
    #[error("csv error: {0}")]
    Csv(String),
    #[error("line {line}: expected {expected} fields, found {found}")]
    MalformedRow { line: usize, expected: usize, found: usize },
    #[error("line {line}: bad geographic code {code:?} for level {level}")]
    BadGeoCode { line: usize, code: String, level: GeoLevel },
    #[error("line {line}, column {column:?}: non-numeric cell {cell:?}")]
    NonNumericCell { line: usize, column: String, cell: String },
    #[error("line {line}: duplicate geographic code {code}")]
    DuplicateGeoCode { line: usize, code: String },
    #[error("first header column must be `geo_code`, found {0:?}")]
    MissingGeoColumn(String),
    #[error("manifest column {0:?} is absent from the data file")]
    MissingColumn(String),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("tables have different geographic levels ({0} vs {1})")]
    LevelMismatch(GeoLevel, GeoLevel),
    #[error("column {0:?} appears in more than one table")]
    ColumnNameCollision(String),
    #[error("no geographic code is shared by all tables")]
    EmptyJoin,
    #[error("nothing to link")]
    NoTables,
    #[error("unknown zip code {0}")]
    UnknownZip(String),
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
}

/// Geographic resolution of a code; the discriminant is the code length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeoLevel {
    Zip,
    CensusTract,
    CensusBlockGroup,
    CensusBlock,
}

impl GeoLevel {
    pub fn code_len(self) -> usize {
        match self {
            GeoLevel::Zip => 5,
            GeoLevel::CensusTract => 11,
            GeoLevel::CensusBlockGroup => 12,
            GeoLevel::CensusBlock => 15,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GeoLevel::Zip => "zip",
            GeoLevel::CensusTract => "census_tract",
            GeoLevel::CensusBlockGroup => "census_block_group",
            GeoLevel::CensusBlock => "census_block",
        }
    }
}

impl fmt::Display for GeoLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GeoLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zip" => Ok(GeoLevel::Zip),
            "census_tract" | "tract" => Ok(GeoLevel::CensusTract),
            "census_block_group" => Ok(GeoLevel::CensusBlockGroup),
            "census_block" => Ok(GeoLevel::CensusBlock),
            other => Err(format!("unknown geographic level {other:?}")),
        }
    }
}

/// A validated geographic code (zip or FIPS).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GeoUnit {
    code: String,
    level: GeoLevel,
}

impl GeoUnit {
    /// Returns `None` when the code is not all digits or has the wrong length.
    pub fn new(code: &str, level: GeoLevel) -> Option<Self> {
        let ok = code.len() == level.code_len() && code.bytes().all(|b| b.is_ascii_digit());
        ok.then(|| GeoUnit { code: code.to_string(), level })
    }

    pub fn zip(code: &str) -> Option<Self> {
        Self::new(code, GeoLevel::Zip)
    }

    pub fn tract(code: &str) -> Option<Self> {
        Self::new(code, GeoLevel::CensusTract)
    }

    pub fn code(&self) -> &str {
        &self.code
    }

    pub fn level(&self) -> GeoLevel {
        self.level
    }

    /// The six-digit tract part of an 11-digit tract FIPS code with leading
    /// zeros removed, e.g. `47157010300` -> `10300`.
    pub fn short_tract(&self) -> &str {
        if self.level == GeoLevel::CensusTract {
            let t = self.code[5..].trim_start_matches('0');
            if t.is_empty() {
                "0"
            } else {
                t
            }
        } else {
            &self.code
        }
    }
}

impl fmt::Display for GeoUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.code)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    Percent,
    Count,
    RatePer1000,
}

impl Units {
    pub fn as_str(self) -> &'static str {
        match self {
            Units::Percent => "percent",
            Units::Count => "count",
            Units::RatePer1000 => "rate_per_1000",
        }
    }
}

impl FromStr for Units {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "percent" => Ok(Units::Percent),
            "count" => Ok(Units::Count),
            "rate_per_1000" => Ok(Units::RatePer1000),
            other => Err(format!("unknown units {other:?}")),
        }
    }
}

/// Binds a data column to an ontology term such as `HIO:ObesityPrevalence`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnBinding {
    pub column_name: String,
    pub term: String,
    pub units: Units,
    pub description: String,
}

impl ColumnBinding {
    /// Namespace prefix of the bound term (`HIO` for `HIO:ObesityPrevalence`).
    pub fn namespace(&self) -> &str {
        self.term.split_once(':').map_or("local", |(ns, _)| ns)
    }
}

/// Parses a manifest: one tab-separated record per line,
/// `column_name<TAB>term<TAB>units<TAB>description`. Blank lines and lines
/// starting with `#` are ignored.
pub fn parse_manifest(text: &str) -> Result<Vec<ColumnBinding>, TableError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = raw.splitn(4, '\t').map(str::trim).collect();
        if fields.len() < 3 {
            return Err(TableError::Manifest {
                line,
                message: "expected column_name, term, units[, description]".into(),
            });
        }
        let units = fields[2]
            .parse::<Units>()
            .map_err(|message| TableError::Manifest { line, message })?;
        if !seen.insert(fields[0].to_string()) {
            return Err(TableError::Manifest { line, message: format!("duplicate column {:?}", fields[0]) });
        }
        out.push(ColumnBinding {
            column_name: fields[0].to_string(),
            term: fields[1].to_string(),
            units,
            description: fields.get(3).copied().unwrap_or("").to_string(),
        });
    }
    Ok(out)
}

pub fn write_manifest(bindings: &[ColumnBinding]) -> String {
    let mut s = String::from("# column_name\tterm\tunits\tdescription\n");
    for b in bindings {
        s.push_str(&format!("{}\t{}\t{}\t{}\n", b.column_name, b.term, b.units.as_str(), b.description));
    }
    s
}

/// Rectangular tract-by-feature numeric data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    level: GeoLevel,
    rows: Vec<(GeoUnit, Vec<f64>)>,
    bindings: Vec<ColumnBinding>,
    /// Source-file identifier per column, parallel to `bindings`.
    provenance: Vec<String>,
}

impl FeatureTable {
    /// Builds a table, checking arity, code uniqueness and finiteness.
    pub fn new(
        level: GeoLevel,
        rows: Vec<(GeoUnit, Vec<f64>)>,
        bindings: Vec<ColumnBinding>,
        provenance: Vec<String>,
    ) -> Result<Self, TableError> {
        assert_eq!(bindings.len(), provenance.len(), "one provenance entry per column");
        let mut seen = HashSet::new();
        for (i, (geo, values)) in rows.iter().enumerate() {
            if geo.level() != level {
                return Err(TableError::BadGeoCode { line: i + 2, code: geo.code().into(), level });
            }
            if values.len() != bindings.len() {
                return Err(TableError::MalformedRow { line: i + 2, expected: bindings.len() + 1, found: values.len() + 1 });
            }
            if let Some(j) = values.iter().position(|v| !v.is_finite()) {
                return Err(TableError::NonNumericCell {
                    line: i + 2,
                    column: bindings[j].column_name.clone(),
                    cell: values[j].to_string(),
                });
            }
            if !seen.insert(geo.code().to_string()) {
                return Err(TableError::DuplicateGeoCode { line: i + 2, code: geo.code().into() });
            }
        }
        Ok(FeatureTable { level, rows, bindings, provenance })
    }

    pub fn level(&self) -> GeoLevel {
        self.level
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.bindings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[(GeoUnit, Vec<f64>)] {
        &self.rows
    }

    pub fn bindings(&self) -> &[ColumnBinding] {
        &self.bindings
    }

    pub fn provenance(&self) -> &[String] {
        &self.provenance
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.bindings.iter().map(|b| b.column_name.as_str()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.bindings.iter().position(|b| b.column_name == name)
    }

    pub fn binding(&self, name: &str) -> Option<&ColumnBinding> {
        self.bindings.iter().find(|b| b.column_name == name)
    }

    /// Looks up a column by its name or by its bound term.
    pub fn resolve_column(&self, name_or_term: &str) -> Option<usize> {
        self.column_index(name_or_term)
            .or_else(|| self.bindings.iter().position(|b| b.term == name_or_term))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>, TableError> {
        let j = self.column_index(name).ok_or_else(|| TableError::UnknownColumn(name.into()))?;
        Ok(self.column_at(j))
    }

    pub fn column_at(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|(_, v)| v[j]).collect()
    }

    pub fn codes(&self) -> Vec<&str> {
        self.rows.iter().map(|(g, _)| g.code()).collect()
    }

    pub fn row_by_code(&self, code: &str) -> Option<&[f64]> {
        self.rows.iter().find(|(g, _)| g.code() == code).map(|(_, v)| v.as_slice())
    }

    /// Column means in binding order.
    pub fn column_means(&self) -> Vec<f64> {
        let n = self.rows.len().max(1) as f64;
        (0..self.n_cols()).map(|j| self.rows.iter().map(|(_, v)| v[j]).sum::<f64>() / n).collect()
    }

    /// Sub-table keeping the listed columns, in the listed order.
    pub fn select(&self, names: &[&str]) -> Result<FeatureTable, TableError> {
        let idx = names
            .iter()
            .map(|n| self.column_index(n).ok_or_else(|| TableError::UnknownColumn((*n).into())))
            .collect::<Result<Vec<_>, _>>()?;
        let rows = self
            .rows
            .iter()
            .map(|(g, v)| (g.clone(), idx.iter().map(|&j| v[j]).collect()))
            .collect();
        Ok(FeatureTable {
            level: self.level,
            rows,
            bindings: idx.iter().map(|&j| self.bindings[j].clone()).collect(),
            provenance: idx.iter().map(|&j| self.provenance[j].clone()).collect(),
        })
    }

    /// Sub-table keeping the given row indices, in the given order.
    pub fn take_rows(&self, indices: &[usize]) -> FeatureTable {
        FeatureTable {
            level: self.level,
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            bindings: self.bindings.clone(),
            provenance: self.provenance.clone(),
        }
    }

    /// Same shape, values replaced row by row.
    pub fn with_values(&self, values: Vec<Vec<f64>>) -> Result<FeatureTable, TableError> {
        let rows = self.rows.iter().zip(values).map(|((g, _), v)| (g.clone(), v)).collect();
        FeatureTable::new(self.level, rows, self.bindings.clone(), self.provenance.clone())
    }

    pub fn rename_column(&mut self, from: &str, to: &str) -> Result<(), TableError> {
        let j = self.column_index(from).ok_or_else(|| TableError::UnknownColumn(from.into()))?;
        self.bindings[j].column_name = to.to_string();
        Ok(())
    }

    /// Wide CSV with a `geo_code` first column. Values use the shortest
    /// representation that parses back to the same `f64`.
    pub fn to_csv(&self) -> String {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["geo_code".to_string()];
        header.extend(self.bindings.iter().map(|b| b.column_name.clone()));
        wtr.write_record(&header).expect("in-memory write");
        for (g, values) in &self.rows {
            let mut rec = vec![g.code().to_string()];
            rec.extend(values.iter().map(|v| v.to_string()));
            wtr.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(wtr.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}

/// Parses a wide-format feature CSV. Columns missing from the manifest are
/// dropped; manifest entries missing from the header are an error.
pub fn parse_feature_csv(
    bytes: &[u8],
    level: GeoLevel,
    manifest: &[ColumnBinding],
    source_id: &str,
) -> Result<FeatureTable, TableError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(bytes);
    let header = rdr.headers().map_err(|e| TableError::Csv(e.to_string()))?.clone();
    let first = header.get(0).unwrap_or("");
    if first != "geo_code" {
        return Err(TableError::MissingGeoColumn(first.to_string()));
    }
    let positions: HashMap<&str, usize> = header.iter().enumerate().skip(1).map(|(i, h)| (h, i)).collect();
    let mut keep = Vec::new();
    for b in manifest {
        match positions.get(b.column_name.as_str()) {
            Some(&p) => keep.push((p, b.clone())),
            None => return Err(TableError::MissingColumn(b.column_name.clone())),
        }
    }
    let arity = header.len();
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| TableError::Csv(e.to_string()))?;
        if rec.len() != arity {
            return Err(TableError::MalformedRow { line, expected: arity, found: rec.len() });
        }
        let code = &rec[0];
        let geo = GeoUnit::new(code, level).ok_or_else(|| TableError::BadGeoCode { line, code: code.into(), level })?;
        if !seen.insert(code.to_string()) {
            return Err(TableError::DuplicateGeoCode { line, code: code.into() });
        }
        let mut values = Vec::with_capacity(keep.len());
        for (p, b) in &keep {
            let cell = &rec[*p];
            let v = cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| TableError::NonNumericCell {
                line,
                column: b.column_name.clone(),
                cell: cell.to_string(),
            })?;
            values.push(v);
        }
        rows.push((geo, values));
    }
    let bindings: Vec<ColumnBinding> = keep.into_iter().map(|(_, b)| b).collect();
    let provenance = vec![source_id.to_string(); bindings.len()];
    Ok(FeatureTable { level, rows, bindings, provenance })
}

/// Inner join on geographic code. Row order follows the first table.
pub fn link_tables(tables: &[FeatureTable]) -> Result<FeatureTable, TableError> {
    let first = tables.first().ok_or(TableError::NoTables)?;
    let mut names = HashSet::new();
    for t in tables {
        if t.level != first.level {
            return Err(TableError::LevelMismatch(first.level, t.level));
        }
        for b in &t.bindings {
            if !names.insert(b.column_name.as_str()) {
                return Err(TableError::ColumnNameCollision(b.column_name.clone()));
            }
        }
    }
    let lookups: Vec<HashMap<&str, &Vec<f64>>> =
        tables.iter().map(|t| t.rows.iter().map(|(g, v)| (g.code(), v)).collect()).collect();
    let mut rows = Vec::new();
    for (geo, _) in &first.rows {
        let parts: Option<Vec<&Vec<f64>>> = lookups.iter().map(|l| l.get(geo.code()).copied()).collect();
        if let Some(parts) = parts {
            rows.push((geo.clone(), parts.into_iter().flatten().copied().collect()));
        }
    }
    if rows.is_empty() {
        return Err(TableError::EmptyJoin);
    }
    Ok(FeatureTable {
        level: first.level,
        rows,
        bindings: tables.iter().flat_map(|t| t.bindings.iter().cloned()).collect(),
        provenance: tables.iter().flat_map(|t| t.provenance.iter().cloned()).collect(),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ZipTractCrosswalk {
    entries: Vec<(GeoUnit, GeoUnit)>,
}

impl ZipTractCrosswalk {
    /// Duplicate pairs collapse to one entry.
    pub fn new(entries: impl IntoIterator<Item = (GeoUnit, GeoUnit)>) -> Self {
        let set: BTreeSet<(GeoUnit, GeoUnit)> = entries
            .into_iter()
            .filter(|(z, t)| z.level() == GeoLevel::Zip && t.level() == GeoLevel::CensusTract)
            .collect();
        ZipTractCrosswalk { entries: set.into_iter().collect() }
    }

    /// Parses a `zip,tract_fips` CSV.
    pub fn parse_csv(bytes: &[u8]) -> Result<Self, TableError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
        let header = rdr.headers().map_err(|e| TableError::Csv(e.to_string()))?.clone();
        if header.len() != 2 || &header[0] != "zip" || &header[1] != "tract_fips" {
            return Err(TableError::Csv("crosswalk header must be `zip,tract_fips`".into()));
        }
        let mut entries = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| TableError::Csv(e.to_string()))?;
            let zip = GeoUnit::zip(&rec[0])
                .ok_or_else(|| TableError::BadGeoCode { line, code: rec[0].into(), level: GeoLevel::Zip })?;
            let tract = GeoUnit::tract(&rec[1])
                .ok_or_else(|| TableError::BadGeoCode { line, code: rec[1].into(), level: GeoLevel::CensusTract })?;
            entries.push((zip, tract));
        }
        Ok(Self::new(entries))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("zip,tract_fips\n");
        for (z, t) in &self.entries {
            s.push_str(&format!("{z},{t}\n"));
        }
        s
    }

    pub fn entries(&self) -> &[(GeoUnit, GeoUnit)] {
        &self.entries
    }

    /// First zip (ascending) containing the tract.
    pub fn zip_of(&self, tract: &GeoUnit) -> Option<&GeoUnit> {
        self.entries.iter().find(|(_, t)| t == tract).map(|(z, _)| z)
    }

    pub fn zips(&self) -> BTreeMap<&GeoUnit, usize> {
        let mut m = BTreeMap::new();
        for (z, _) in &self.entries {
            *m.entry(z).or_insert(0) += 1;
        }
        m
    }
}

/// Distinct tracts mapped to `zip`, ascending by code.
pub fn tracts_in_zip(crosswalk: &ZipTractCrosswalk, zip: &GeoUnit) -> Result<Vec<GeoUnit>, TableError> {
    let set: BTreeSet<GeoUnit> = crosswalk.entries.iter().filter(|(z, _)| z == zip).map(|(_, t)| t.clone()).collect();
    if set.is_empty() {
        return Err(TableError::UnknownZip(zip.code().into()));
    }
    Ok(set.into_iter().collect())
}
