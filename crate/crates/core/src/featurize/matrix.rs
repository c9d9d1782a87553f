use std::io::{Read, Write};
use std::net::IpAddr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::labeling::Label;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub description: String,
}

impl Column {
    pub fn new(name: impl Into<String>, description: impl Into<String>) -> Self {
        Column { name: name.into(), description: description.into() }
    }
}

/// Ordered feature columns. Equality and fingerprints use names only.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Schema {
    columns: Vec<Column>,
}

impl PartialEq for Schema {
    fn eq(&self, other: &Self) -> bool {
        self.columns.len() == other.columns.len()
            && self.columns.iter().zip(&other.columns).all(|(a, b)| a.name == b.name)
    }
}

impl Eq for Schema {}

impl Schema {
    pub fn new(columns: Vec<Column>) -> Self {
        Schema { columns }
    }

    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Self {
        Schema::new(names.iter().map(|n| Column::new(n.as_ref(), "")).collect())
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// SHA-256 over the newline-joined column names, hex encoded.
    pub fn fingerprint(&self) -> String {
        fingerprint_names(self.columns.iter().map(|c| c.name.as_str()))
    }
}

pub(crate) fn fingerprint_names<'a>(names: impl Iterator<Item = &'a str>) -> String {
    let mut h = Sha256::new();
    for (i, n) in names.enumerate() {
        if i > 0 {
            h.update(b"\n");
        }
        h.update(n.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Identifies a row: the internal host and window it describes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RowKey {
    pub scenario: String,
    pub entity: IpAddr,
    pub window: u64,
}

/// Dense row-major feature matrix with per-row keys and labels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    schema: Schema,
    keys: Vec<RowKey>,
    values: Vec<f64>,
    labels: Vec<Label>,
}

impl FeatureMatrix {
    pub fn new(schema: Schema) -> Self {
        FeatureMatrix { schema, keys: Vec::new(), values: Vec::new(), labels: Vec::new() }
    }

    pub fn with_capacity(schema: Schema, rows: usize) -> Self {
        let width = schema.len();
        FeatureMatrix {
            schema,
            keys: Vec::with_capacity(rows),
            values: Vec::with_capacity(rows * width),
            labels: Vec::with_capacity(rows),
        }
    }

    /// Builds a matrix from raw parts, checking shape and finiteness.
    pub fn from_parts(
        schema: Schema,
        keys: Vec<RowKey>,
        values: Vec<f64>,
        labels: Vec<Label>,
    ) -> Result<Self> {
        if keys.len() != labels.len() || values.len() != keys.len() * schema.len() {
            return Err(Error::Matrix(format!(
                "shape mismatch: {} keys, {} labels, {} values for width {}",
                keys.len(),
                labels.len(),
                values.len(),
                schema.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let w = schema.len().max(1);
            return Err(Error::Matrix(format!("non-finite value at row {}, column {}", pos / w, pos % w)));
        }
        Ok(FeatureMatrix { schema, keys, values, labels })
    }

    pub fn push_row(&mut self, key: RowKey, row: &[f64], label: Label) -> Result<()> {
        if row.len() != self.schema.len() {
            return Err(Error::Matrix(format!(
                "row has {} values, schema has {}",
                row.len(),
                self.schema.len()
            )));
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::Matrix(format!(
                "non-finite value in column `{}`",
                self.schema.columns()[j].name
            )));
        }
        self.keys.push(key);
        self.values.extend_from_slice(row);
        self.labels.push(label);
        Ok(())
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.keys.len()
    }

    pub fn n_cols(&self) -> usize {
        self.schema.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.n_cols();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n_rows()).map(move |i| self.row(i))
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n_cols() + col]
    }

    /// Row-major values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn keys(&self) -> &[RowKey] {
        &self.keys
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [Label] {
        &mut self.labels
    }

    /// (legitimate, malicious) row counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|l| l.is_malicious()).count();
        (self.labels.len() - pos, pos)
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let mut out = FeatureMatrix::with_capacity(self.schema.clone(), rows.len());
        for &i in rows {
            out.keys.push(self.keys[i].clone());
            out.values.extend_from_slice(self.row(i));
            out.labels.push(self.labels[i]);
        }
        out
    }

    /// Concatenates matrices that share a schema.
    pub fn concat(parts: &[&FeatureMatrix]) -> Result<FeatureMatrix> {
        let Some(first) = parts.first() else {
            return Err(Error::Matrix("nothing to concatenate".into()));
        };
        let total = parts.iter().map(|m| m.n_rows()).sum();
        let mut out = FeatureMatrix::with_capacity(first.schema.clone(), total);
        for m in parts {
            if m.schema != first.schema {
                return Err(Error::Matrix("cannot concatenate matrices with different schemas".into()));
            }
            out.keys.extend_from_slice(&m.keys);
            out.values.extend_from_slice(&m.values);
            out.labels.extend_from_slice(&m.labels);
        }
        Ok(out)
    }

    /// Writes `scenario,entity,window,<features...>,label`, preceded by
    /// `#`-prefixed comment lines.
    pub fn write_csv<W: Write>(&self, w: W, comments: &[String]) -> Result<()> {
        let mut w = std::io::BufWriter::new(w);
        for c in comments {
            for line in c.lines() {
                writeln!(w, "# {line}")?;
            }
        }
        let mut csv = csv::Writer::from_writer(w);
        let mut header = vec!["scenario".to_string(), "entity".into(), "window".into()];
        header.extend(self.schema.names());
        header.push("label".into());
        csv.write_record(&header)?;
        let mut buf: Vec<String> = Vec::with_capacity(header.len());
        for i in 0..self.n_rows() {
            buf.clear();
            let k = &self.keys[i];
            buf.push(k.scenario.clone());
            buf.push(k.entity.to_string());
            buf.push(k.window.to_string());
            buf.extend(self.row(i).iter().map(|v| format!("{v}")));
            buf.push(self.labels[i].as_u8().to_string());
            csv.write_record(&buf)?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, &[])?;
        String::from_utf8(buf).map_err(|e| Error::Matrix(e.to_string()))
    }

    /// Reads the CSV layout produced by [`FeatureMatrix::write_csv`].
    /// Column descriptions are not stored in CSV and come back empty.
    pub fn read_csv<R: Read>(r: R) -> Result<FeatureMatrix> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).has_headers(true).from_reader(r);
        let header = rdr.headers()?.clone();
        let n = header.len();
        if n < 4
            || &header[0] != "scenario"
            || &header[1] != "entity"
            || &header[2] != "window"
            || &header[n - 1] != "label"
        {
            return Err(Error::Matrix("header must be scenario,entity,window,<features>,label".into()));
        }
        let names: Vec<&str> = header.iter().skip(3).take(n - 4).collect();
        let mut m = FeatureMatrix::new(Schema::from_names(&names));
        let mut row = Vec::with_capacity(names.len());
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| Error::Matrix(format!("data row {}: bad {what}", i + 1));
            let entity: IpAddr = rec[1].parse().map_err(|_| bad("entity"))?;
            let window: u64 = rec[2].parse().map_err(|_| bad("window"))?;
            row.clear();
            for v in rec.iter().skip(3).take(n - 4) {
                row.push(v.parse::<f64>().map_err(|_| bad("feature value"))?);
            }
            let label = match &rec[n - 1] {
                "0" => Label::Legitimate,
                "1" => Label::Malicious,
                _ => return Err(bad("label")),
            };
            m.push_row(RowKey { scenario: rec[0].to_string(), entity, window }, &row, label)?;
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn key(i: u64) -> RowKey {
        RowKey { scenario: "s".into(), entity: "10.0.0.1".parse().unwrap(), window: i }
    }

    #[test]
    fn push_checks_width_and_finiteness() {
        let mut m = FeatureMatrix::new(Schema::from_names(&["a", "b"]));
        assert!(m.push_row(key(0), &[1.0], Label::Legitimate).is_err());
        assert!(m.push_row(key(0), &[1.0, f64::NAN], Label::Legitimate).is_err());
        m.push_row(key(0), &[1.0, 2.0], Label::Malicious).unwrap();
        assert_eq!(m.class_counts(), (0, 1));
    }

    #[test]
    fn concat_requires_equal_schema() {
        let a = FeatureMatrix::new(Schema::from_names(&["a"]));
        let b = FeatureMatrix::new(Schema::from_names(&["b"]));
        assert!(FeatureMatrix::concat(&[&a, &b]).is_err());
        assert_eq!(FeatureMatrix::concat(&[&a, &a]).unwrap().n_rows(), 0);
    }

    #[test]
    fn fingerprint_depends_on_names_and_order() {
        let a = Schema::from_names(&["x", "y"]);
        let b = Schema::from_names(&["y", "x"]);
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint(), Schema::from_names(&["x", "y"]).fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }

    proptest! {
        #[test]
        fn csv_round_trip(rows in prop::collection::vec((prop::array::uniform3(-1e12f64..1e12), any::<bool>()), 0..20)) {
            let mut m = FeatureMatrix::new(Schema::from_names(&["a.b", "c", "d"]));
            for (i, (vals, lab)) in rows.iter().enumerate() {
                m.push_row(key(i as u64), vals, Label::from_bool(*lab)).unwrap();
            }
            let mut buf = Vec::new();
            m.write_csv(&mut buf, &["config {\"x\": 1}".to_string()]).unwrap();
            let back = FeatureMatrix::read_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
