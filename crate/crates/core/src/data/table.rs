//! Delimited-text dataset tables.
//!
//! Header names the columns `id, class, lat, lon, date` followed by the image
//! features in one of three layouts:
//!
//! * a `features` column holding semicolon-separated reals,
//! * a `feature_file` column holding a path (relative to the table) to a file
//!   of semicolon- or whitespace-separated reals,
//! * one numeric column per feature.
//!
//! `date` is either a day of year (`1..=366`) or an ISO-8601 calendar date.

use std::fs;
use std::path::Path;

use chrono::{Datelike, NaiveDate};

use super::{Dataset, Sample, Split};
use crate::encoders::MetaInput;
use crate::error::{Error, Result, RowIssue};

const REQUIRED: [&str; 5] = ["id", "class", "lat", "lon", "date"];

enum FeatureLayout {
    Inline(usize),
    File(usize),
    Columns(Vec<usize>),
}

fn parse_reals(text: &str) -> std::result::Result<Vec<f64>, String> {
    text.split(|c: char| c == ';' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| format!("unparsable number {t:?}"))
        })
        .collect()
}

fn parse_date(text: &str) -> std::result::Result<u16, String> {
    if text.contains('-') {
        NaiveDate::parse_from_str(text, "%Y-%m-%d")
            .map(|d| d.ordinal() as u16)
            .map_err(|e| format!("unparsable date {text:?}: {e}"))
    } else {
        text.parse::<u16>()
            .map_err(|_| format!("unparsable day of year {text:?}"))
    }
}

pub fn load_table(path: &Path, split: Split, num_classes: Option<usize>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
            _ => Error::Csv(e),
        })?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let mut idx = [0usize; 5];
    for (slot, name) in idx.iter_mut().zip(REQUIRED) {
        *slot = col(name)
            .ok_or_else(|| Error::validation("header", format!("missing column {name:?}")))?;
    }
    let layout = if let Some(i) = col("features") {
        FeatureLayout::Inline(i)
    } else if let Some(i) = col("feature_file") {
        FeatureLayout::File(i)
    } else {
        let cols: Vec<usize> = (0..headers.len()).filter(|i| !idx.contains(i)).collect();
        if cols.is_empty() {
            return Err(Error::validation(
                "header",
                "missing feature columns (expected \"features\", \"feature_file\" or numeric columns)",
            ));
        }
        FeatureLayout::Columns(cols)
    };
    let base = path.parent().unwrap_or(Path::new("."));

    let mut samples = Vec::new();
    let mut issues = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let mut issue = |field: &str, reason: String| {
            issues.push(RowIssue {
                line,
                field: field.to_string(),
                reason,
            })
        };
        let get = |i: usize| record.get(i).unwrap_or("");

        let id = get(idx[0]).to_string();
        let class = match get(idx[1]).parse::<usize>() {
            Ok(c) => Some(c),
            Err(_) => {
                issue("class", format!("unparsable class {:?}", get(idx[1])));
                None
            }
        };
        let mut num = |field: &str, i: usize| match get(i).parse::<f64>() {
            Ok(v) => Some(v),
            Err(_) => {
                issue(field, format!("unparsable number {:?}", get(i)));
                None
            }
        };
        let lat = num("lat", idx[2]);
        let lon = num("lon", idx[3]);
        let day = match parse_date(get(idx[4])) {
            Ok(d) => Some(d),
            Err(e) => {
                issue("date", e);
                None
            }
        };
        let features = match &layout {
            FeatureLayout::Inline(i) => parse_reals(get(*i)),
            FeatureLayout::File(i) => {
                let file = base.join(get(*i));
                fs::read_to_string(&file)
                    .map_err(|e| format!("{}: {e}", file.display()))
                    .and_then(|text| parse_reals(&text))
            }
            FeatureLayout::Columns(cols) => cols
                .iter()
                .map(|&c| {
                    get(c)
                        .parse::<f64>()
                        .map_err(|_| format!("unparsable number {:?}", get(c)))
                })
                .collect(),
        };
        let features = match features {
            Ok(f) if f.iter().all(|v| v.is_finite()) && !f.is_empty() => Some(f),
            Ok(_) => {
                issue("features", "empty or non-finite feature vector".into());
                None
            }
            Err(e) => {
                issue("features", e);
                None
            }
        };
        let (Some(class), Some(lat), Some(lon), Some(day), Some(image)) =
            (class, lat, lon, day, features)
        else {
            continue;
        };
        let meta = MetaInput {
            lat,
            lon,
            day_of_year: day,
        };
        if let Err(Error::Validation { field, reason }) = meta.validate() {
            issue(&field, reason);
            continue;
        }
        samples.push(Sample {
            id,
            class,
            image,
            meta,
        });
    }
    if !issues.is_empty() {
        return Err(Error::Rejected(issues));
    }
    if samples.is_empty() {
        return Err(Error::validation(
            "class",
            "table has no rows (class cardinality 0)",
        ));
    }
    let seen = samples.iter().map(|s| s.class).max().unwrap_or(0) + 1;
    let num_classes = match num_classes {
        Some(n) if n < seen => {
            return Err(Error::validation(
                "class",
                format!(
                    "table uses class {} but only {n} classes are declared",
                    seen - 1
                ),
            ))
        }
        Some(n) => n,
        None => seen,
    };
    let dataset = Dataset {
        samples,
        num_classes,
        split,
        seed: None,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Writes `dataset` with inline semicolon-separated features. Reals use the
/// shortest representation that parses back to the same value.
pub fn write_table(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["id", "class", "lat", "lon", "date", "features"])?;
    for s in &dataset.samples {
        let features = s
            .image
            .iter()
            .map(f64::to_string)
            .collect::<Vec<_>>()
            .join(";");
        writer.write_record([
            s.id.clone(),
            s.class.to_string(),
            s.meta.lat.to_string(),
            s.meta.lon.to_string(),
            s.meta.day_of_year.to_string(),
            features,
        ])?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn well_formed_three_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "t.csv",
            "id,class,lat,lon,date,features\n\
             a,0,10.5,-20,15,1;2;3\n\
             b,1,-45,180,2021-03-01,0.5;0.25;-1\n\
             c,1,0,0,366,0;0;0\n",
        );
        let d = load_table(&p, Split::Train, None).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.num_classes, 2);
        assert_eq!(d.samples[1].meta.day_of_year, 60);
        assert_eq!(d.samples[0].image, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn invalid_latitude_is_reported_with_line_and_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "t.csv",
            "id,class,lat,lon,date,features\na,0,10,0,5,1\nb,0,91,0,5,1\n",
        );
        match load_table(&p, Split::Test, None) {
            Err(Error::Rejected(issues)) => {
                assert_eq!(issues.len(), 1);
                assert_eq!(issues[0].line, 3);
                assert_eq!(issues[0].field, "lat");
            }
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn missing_column_and_empty_table() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "t.csv",
            "id,class,lat,date,features\na,0,1,5,1\n",
        );
        let err = load_table(&p, Split::Train, None).unwrap_err().to_string();
        assert!(err.contains("\"lon\""), "{err}");
        let p = write(dir.path(), "e.csv", "id,class,lat,lon,date,features\n");
        assert!(load_table(&p, Split::Train, None).is_err());
    }

    #[test]
    fn unparsable_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "t.csv",
            "id,class,lat,lon,date,features\na,x,1,1,5,1\nb,0,1,1,2021-13-40,1\nc,0,1,1,5,1;zz\n",
        );
        match load_table(&p, Split::Train, None) {
            Err(Error::Rejected(issues)) => {
                let fields: Vec<_> = issues.iter().map(|i| i.field.as_str()).collect();
                assert_eq!(fields, vec!["class", "date", "features"]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn feature_file_and_column_layouts() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "f0.txt", "1.5 2.5\n3.5");
        let p = write(
            dir.path(),
            "t.csv",
            "id,class,lat,lon,date,feature_file\na,0,1,1,5,f0.txt\n",
        );
        let d = load_table(&p, Split::Train, Some(3)).unwrap();
        assert_eq!(d.samples[0].image, vec![1.5, 2.5, 3.5]);
        assert_eq!(d.num_classes, 3);

        let p = write(
            dir.path(),
            "c.csv",
            "id,class,lat,lon,date,f0,f1\na,0,1,1,5,7,8\n",
        );
        let d = load_table(&p, Split::Train, None).unwrap();
        assert_eq!(d.samples[0].image, vec![7.0, 8.0]);
    }

    #[test]
    fn write_then_load_is_exact() {
        let set = crate::data::SpeciesSetFile::default().resolve(5).unwrap();
        let (train, _) = crate::data::generate(&set, 3, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("train.csv");
        write_table(&p, &train).unwrap();
        let back = load_table(&p, Split::Train, Some(train.num_classes)).unwrap();
        assert_eq!(back.samples, train.samples);
    }
}
