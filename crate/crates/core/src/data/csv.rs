//! CSV ingestion for the two input schemas.
//!
//! Fraud: a single file with header `Time,V1..V28,Amount,Class`. Values are
//! parsed verbatim; standardization is a separate, train-fitted step.
//!
//! Retail: three files — transactions `(customer_id,article_id)`, articles
//! (`article_id` plus categorical attribute columns) and customers
//! (`customer_id` plus attribute columns). Ids are re-indexed densely by
//! first appearance in their side table; every categorical value is encoded
//! as a dense integer by first appearance. Each column of a domain table is
//! given a disjoint code range, so one embedding table per domain covers the
//! id and every attribute column.

use std::collections::HashMap;
use std::path::Path;

use crate::data::{InteractionTable, SampleTable};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The fraud schema's feature columns, in file order.
pub static FRAUD_COLUMNS: [&str; 30] = [
    "Time", "V1", "V2", "V3", "V4", "V5", "V6", "V7", "V8", "V9", "V10", "V11", "V12", "V13",
    "V14", "V15", "V16", "V17", "V18", "V19", "V20", "V21", "V22", "V23", "V24", "V25", "V26",
    "V27", "V28", "Amount",
];

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

fn headers(reader: &mut csv::Reader<std::fs::File>, path: &Path) -> Result<Vec<String>> {
    Ok(reader
        .headers()
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect())
}

/// Loads the card-fraud table: 30 feature columns plus the binary `Class`
/// label, ids assigned by row order.
pub fn load_fraud_csv(path: impl AsRef<Path>) -> Result<SampleTable> {
    let path = path.as_ref();
    let mut reader = open_csv(path)?;
    let header = headers(&mut reader, path)?;
    let mut expected: Vec<&str> = FRAUD_COLUMNS.to_vec();
    expected.push("Class");
    if header != expected {
        return Err(Error::Schema(format!(
            "{}: header {header:?} does not match the fraud schema",
            path.display()
        )));
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let row = row_idx + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            msg: e.to_string(),
        })?;
        if record.len() != expected.len() {
            return Err(Error::Parse {
                row,
                msg: format!("{} cells, expected {}", record.len(), expected.len()),
            });
        }
        for (col, cell) in expected.iter().zip(record.iter()) {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                row,
                msg: format!("non-numeric cell '{cell}' in column {col}"),
            })?;
            if *col == "Class" {
                if v != 0.0 && v != 1.0 {
                    return Err(Error::Parse {
                        row,
                        msg: format!("label {v} is not binary"),
                    });
                }
                labels.push(v);
            } else {
                features.push(v);
            }
        }
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::Schema(format!("{}: no data rows", path.display())));
    }
    SampleTable::new(
        (0..n as u64).collect(),
        FRAUD_COLUMNS.iter().map(|s| s.to_string()).collect(),
        Tensor::new(vec![n, FRAUD_COLUMNS.len()], features)?,
        Some(Tensor::new(vec![n, 1], labels)?),
    )
}

/// First-appearance dense encoder for categorical values.
#[derive(Default)]
struct Encoder {
    codes: HashMap<String, usize>,
}

impl Encoder {
    fn encode(&mut self, value: &str) -> usize {
        let next = self.codes.len();
        *self.codes.entry(value.to_string()).or_insert(next)
    }

    fn get(&self, value: &str) -> Option<usize> {
        self.codes.get(value).copied()
    }

    fn len(&self) -> usize {
        self.codes.len()
    }
}

/// A side table (articles or customers) loaded and integer-encoded: the
/// first column holds the dense entity id; attribute columns follow with
/// code ranges offset past the id range.
struct SideTable {
    table: SampleTable,
    ids: Encoder,
    /// Total code count across the id column and every attribute column.
    vocab_size: usize,
}

fn load_side_table(path: &Path, id_column: &str) -> Result<SideTable> {
    let mut reader = open_csv(path)?;
    let header = headers(&mut reader, path)?;
    if header.first().map(String::as_str) != Some(id_column) {
        return Err(Error::Schema(format!(
            "{}: first column must be {id_column}, got {header:?}",
            path.display()
        )));
    }
    let attr_names: Vec<String> = header[1..].to_vec();
    let mut ids = Encoder::default();
    let mut attr_encoders: Vec<Encoder> = attr_names.iter().map(|_| Encoder::default()).collect();
    let mut rows: Vec<Vec<usize>> = Vec::new();

    for (row_idx, record) in reader.records().enumerate() {
        let row = row_idx + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            msg: e.to_string(),
        })?;
        if record.len() != header.len() {
            return Err(Error::Parse {
                row,
                msg: format!("{} cells, expected {}", record.len(), header.len()),
            });
        }
        let id_value = record.get(0).expect("length checked");
        let previous = ids.len();
        let dense = ids.encode(id_value);
        if dense < previous {
            return Err(Error::Data(format!(
                "{}: duplicate id '{id_value}' at row {row}",
                path.display()
            )));
        }
        let mut encoded = Vec::with_capacity(header.len());
        encoded.push(dense);
        for (enc, cell) in attr_encoders.iter_mut().zip(record.iter().skip(1)) {
            encoded.push(enc.encode(cell));
        }
        rows.push(encoded);
    }
    if rows.is_empty() {
        return Err(Error::Schema(format!("{}: no data rows", path.display())));
    }

    // Give every column a disjoint code range: the id column starts at 0,
    // each attribute column starts where the previous range ended.
    let mut offsets = Vec::with_capacity(header.len());
    let mut total = ids.len();
    offsets.push(0usize);
    for enc in &attr_encoders {
        offsets.push(total);
        total += enc.len();
    }

    let n = rows.len();
    let width = header.len();
    let mut data = Vec::with_capacity(n * width);
    for encoded in &rows {
        for (value, offset) in encoded.iter().zip(&offsets) {
            data.push((value + offset) as f64);
        }
    }
    let table = SampleTable::new(
        (0..n as u64).collect(),
        header.clone(),
        Tensor::new(vec![n, width], data)?,
        None,
    )?;
    Ok(SideTable {
        table,
        ids,
        vocab_size: total,
    })
}

/// The retail use case's loaded form: positive interactions plus the two
/// feature-owning domain tables (customers first, then articles), each with
/// the vocabulary size its embedding table needs.
#[derive(Debug, Clone)]
pub struct RetailData {
    pub interactions: InteractionTable,
    pub domain_tables: Vec<SampleTable>,
    pub domain_vocab_sizes: Vec<usize>,
}

/// Loads the three retail files and re-indexes everything densely.
/// Transactions referencing an unknown customer or article fail with a
/// referential-integrity error.
pub fn load_retail_csv(
    transactions_path: impl AsRef<Path>,
    articles_path: impl AsRef<Path>,
    customers_path: impl AsRef<Path>,
) -> Result<RetailData> {
    let customers = load_side_table(customers_path.as_ref(), "customer_id")?;
    let articles = load_side_table(articles_path.as_ref(), "article_id")?;

    let tx_path = transactions_path.as_ref();
    let mut reader = open_csv(tx_path)?;
    let header = headers(&mut reader, tx_path)?;
    if header.len() < 2 || header[0] != "customer_id" || header[1] != "article_id" {
        return Err(Error::Schema(format!(
            "{}: header {header:?}, expected customer_id,article_id",
            tx_path.display()
        )));
    }

    let mut seen = std::collections::BTreeSet::new();
    let mut rows = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let row = row_idx + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            msg: e.to_string(),
        })?;
        let customer = record.get(0).unwrap_or_default();
        let article = record.get(1).unwrap_or_default();
        let u = customers.ids.get(customer).ok_or_else(|| {
            Error::Referential(format!(
                "transaction row {row} references unknown customer '{customer}'"
            ))
        })?;
        let i = articles.ids.get(article).ok_or_else(|| {
            Error::Referential(format!(
                "transaction row {row} references unknown article '{article}'"
            ))
        })?;
        // Implicit feedback: repeated purchases collapse to one positive.
        if seen.insert((u as u32, i as u32)) {
            rows.push((u as u32, i as u32, 1u8));
        }
    }
    let interactions = InteractionTable::new(rows, customers.ids.len(), articles.ids.len())?;
    Ok(RetailData {
        interactions,
        domain_tables: vec![customers.table, articles.table],
        domain_vocab_sizes: vec![customers.vocab_size, articles.vocab_size],
    })
}

/// Restricts a retail dataset to the given users (old dense ids), keeping
/// their transactions and only the articles they touched. users and items
/// are re-indexed densely; attribute codes slide down to stay contiguous
/// with the new id ranges.
pub fn retain_retail_users(data: &RetailData, users: &[u32]) -> Result<RetailData> {
    let user_map: HashMap<u32, u32> = users
        .iter()
        .enumerate()
        .map(|(new, &old)| (old, new as u32))
        .collect();

    // Items re-index by first appearance in the surviving transactions.
    let mut item_map: HashMap<u32, u32> = HashMap::new();
    let mut kept_items: Vec<u32> = Vec::new();
    let mut rows = Vec::new();
    for &(u, i, label) in data.interactions.rows() {
        let Some(&nu) = user_map.get(&u) else { continue };
        let ni = *item_map.entry(i).or_insert_with(|| {
            kept_items.push(i);
            (kept_items.len() - 1) as u32
        });
        rows.push((nu, ni, label));
    }
    if rows.is_empty() {
        return Err(Error::Data("retained users have no transactions".into()));
    }
    let interactions = InteractionTable::new(rows, users.len(), kept_items.len())?;

    let rebuild = |table: &SampleTable, order: &[u32], old_vocab: usize| {
        let picked_rows: Vec<usize> = order.iter().map(|&e| e as usize).collect();
        let picked = table.features().take_rows(&picked_rows)?;
        let width = picked.cols();
        let n = picked.rows();
        let id_shift = table.features().rows() - n;
        let mut out = Vec::with_capacity(n * width);
        for r in 0..n {
            for c in 0..width {
                if c == 0 {
                    out.push(r as f64);
                } else {
                    out.push(picked.get(r, c) - id_shift as f64);
                }
            }
        }
        Ok::<_, Error>((
            SampleTable::new(
                (0..n as u64).collect(),
                table.columns().to_vec(),
                Tensor::new(vec![n, width], out)?,
                None,
            )?,
            old_vocab - id_shift,
        ))
    };
    let (customers, customer_vocab) =
        rebuild(&data.domain_tables[0], users, data.domain_vocab_sizes[0])?;
    let (articles, article_vocab) = rebuild(
        &data.domain_tables[1],
        &kept_items,
        data.domain_vocab_sizes[1],
    )?;
    Ok(RetailData {
        interactions,
        domain_tables: vec![customers, articles],
        domain_vocab_sizes: vec![customer_vocab, article_vocab],
    })
}

/// Drops users with no transactions (registries usually carry some), so the
/// downstream negative-sampling contract holds structurally.
pub fn restrict_to_active_users(data: &RetailData) -> Result<RetailData> {
    let positives = data.interactions.positives_by_user();
    let active: Vec<u32> = (0..data.interactions.num_users() as u32)
        .filter(|&u| !positives[u as usize].is_empty())
        .collect();
    if active.len() == data.interactions.num_users() {
        return Ok(data.clone());
    }
    retain_retail_users(data, &active)
}

/// Cuts a retail dataset down to a uniformly sampled fraction of its users,
/// then to those users' transactions; how the small/medium/large subsets
/// are constructed from a full dump.
pub fn subsample_retail_by_user(
    data: &RetailData,
    ratio: f64,
    rng: &mut crate::rng::RngState,
) -> Result<RetailData> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Argument(format!(
            "user sample ratio must lie in (0, 1], got {ratio}"
        )));
    }
    if ratio == 1.0 {
        return Ok(data.clone());
    }
    let total = data.interactions.num_users();
    let keep = ((total as f64) * ratio).round().max(1.0) as usize;
    let kept: Vec<u32> = rng
        .sample_indices(total, keep.min(total))
        .into_iter()
        .map(|u| u as u32)
        .collect();
    retain_retail_users(data, &kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &tempfile::TempDir, name: &str, contents: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    fn fraud_header() -> String {
        let mut h = FRAUD_COLUMNS.join(",");
        h.push_str(",Class");
        h
    }

    #[test]
    fn fraud_fixture_parses_exact_values() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = fraud_header();
        // Three hand-written rows: Time, V1..V28 as i+k/100, Amount, Class.
        for row in 0..3 {
            body.push('\n');
            let mut cells = vec![format!("{}.0", row * 10)];
            for v in 1..=28 {
                cells.push(format!("{}.{:02}", row, v));
            }
            cells.push(format!("{}.5", 100 + row));
            cells.push(if row == 1 { "1".into() } else { "0".into() });
            body.push_str(&cells.join(","));
        }
        let path = write_file(&dir, "fraud.csv", &body);
        let t = load_fraud_csv(&path).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.columns().len(), 30);
        assert_eq!(t.features().get(0, 0), 0.0); // Time of row 0
        assert_eq!(t.features().get(1, 1), 1.01); // V1 of row 1
        assert_eq!(t.features().get(2, 29), 102.5); // Amount of row 2
        assert_eq!(t.labels().unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn fraud_schema_mismatch_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        // Drop V28: only 29 feature columns.
        let mut cols: Vec<&str> = FRAUD_COLUMNS[..29].to_vec();
        cols.push("Class");
        let body = format!("{}\n0,{},0", cols.join(","), vec!["1"; 28].join(","));
        let path = write_file(&dir, "bad.csv", &body);
        assert!(matches!(load_fraud_csv(&path).unwrap_err(), Error::Schema(_)));
    }

    #[test]
    fn fraud_non_numeric_cell_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let row_cells = vec!["1.0"; 30];
        let body = format!(
            "{}\n{},0\n{},oops",
            fraud_header(),
            row_cells.join(","),
            row_cells.join(",")
        );
        let path = write_file(&dir, "bad.csv", &body);
        match load_fraud_csv(&path).unwrap_err() {
            Error::Parse { row, .. } => assert_eq!(row, 2),
            other => panic!("{other:?}"),
        }
    }

    fn tiny_retail(dir: &tempfile::TempDir) -> (std::path::PathBuf, std::path::PathBuf, std::path::PathBuf) {
        let customers = write_file(
            dir,
            "customers.csv",
            "customer_id,age_band\nalice,30s\nbob,40s\n",
        );
        let articles = write_file(
            dir,
            "articles.csv",
            "article_id,colour\nshirt,red\nhat,blue\n",
        );
        let transactions = write_file(
            dir,
            "transactions.csv",
            "customer_id,article_id\nalice,shirt\nbob,hat\nalice,hat\nalice,shirt\n",
        );
        (transactions, articles, customers)
    }

    #[test]
    fn retail_fixture_reindexes_densely() {
        let dir = tempfile::tempdir().unwrap();
        let (tx, art, cust) = tiny_retail(&dir);
        let data = load_retail_csv(&tx, &art, &cust).unwrap();
        assert_eq!(data.interactions.num_users(), 2);
        assert_eq!(data.interactions.num_items(), 2);
        // The duplicate alice/shirt row collapses.
        assert_eq!(
            data.interactions.rows(),
            &[(0, 0, 1), (1, 1, 1), (0, 1, 1)]
        );
        // Customer table: id column 0..U, attr codes offset past it.
        let customers = &data.domain_tables[0];
        assert_eq!(customers.features().get(0, 0), 0.0);
        assert_eq!(customers.features().get(1, 0), 1.0);
        assert_eq!(customers.features().get(0, 1), 2.0); // first attr code = offset 2
        assert_eq!(data.domain_vocab_sizes[0], 4); // 2 ids + 2 age bands
    }

    #[test]
    fn inactive_users_are_droppable() {
        let dir = tempfile::tempdir().unwrap();
        let customers = write_file(
            &dir,
            "customers.csv",
            "customer_id,age_band\nalice,30s\nghost,20s\nbob,40s\n",
        );
        let articles = write_file(&dir, "articles.csv", "article_id,colour\nshirt,red\nhat,blue\n");
        let tx = write_file(
            &dir,
            "transactions.csv",
            "customer_id,article_id\nalice,shirt\nbob,hat\n",
        );
        let data = load_retail_csv(&tx, &articles, &customers).unwrap();
        assert_eq!(data.interactions.num_users(), 3);
        let active = restrict_to_active_users(&data).unwrap();
        assert_eq!(active.interactions.num_users(), 2);
        // Every remaining user has a positive; ids are dense again.
        let positives = active.interactions.positives_by_user();
        assert!(positives.iter().all(|s| !s.is_empty()));
        // The id column of the rebuilt customer table is 0..n.
        let ids: Vec<f64> = active.domain_tables[0].features().column(0);
        assert_eq!(ids, vec![0.0, 1.0]);
        // Attribute codes stay within the shrunken vocabulary.
        let max_code = active.domain_tables[0]
            .features()
            .data()
            .iter()
            .fold(0.0f64, |m, &v| m.max(v));
        assert!((max_code as usize) < active.domain_vocab_sizes[0]);
    }

    #[test]
    fn user_subsampling_keeps_only_their_articles() {
        let dir = tempfile::tempdir().unwrap();
        let customers = write_file(
            &dir,
            "customers.csv",
            "customer_id,age\nu0,a\nu1,b\nu2,c\nu3,d\n",
        );
        let articles = write_file(
            &dir,
            "articles.csv",
            "article_id,colour\ni0,r\ni1,g\ni2,b\ni3,y\n",
        );
        let tx = write_file(
            &dir,
            "transactions.csv",
            "customer_id,article_id\nu0,i0\nu1,i1\nu2,i2\nu3,i3\n",
        );
        let data = load_retail_csv(&tx, &articles, &customers).unwrap();
        let mut rng = crate::rng::RngState::new(8);
        let small = subsample_retail_by_user(&data, 0.5, &mut rng).unwrap();
        assert_eq!(small.interactions.num_users(), 2);
        assert_eq!(small.interactions.num_items(), 2);
        assert_eq!(small.interactions.len(), 2);
        // Deterministic given the seed.
        let mut rng2 = crate::rng::RngState::new(8);
        let again = subsample_retail_by_user(&data, 0.5, &mut rng2).unwrap();
        assert_eq!(small.interactions.rows(), again.interactions.rows());
    }

    #[test]
    fn dangling_transaction_reference_fails() {
        let dir = tempfile::tempdir().unwrap();
        let (_, art, cust) = tiny_retail(&dir);
        let tx = write_file(
            &dir,
            "tx2.csv",
            "customer_id,article_id\nalice,unknown-article\n",
        );
        assert!(matches!(
            load_retail_csv(&tx, &art, &cust).unwrap_err(),
            Error::Referential(_)
        ));
    }
}
