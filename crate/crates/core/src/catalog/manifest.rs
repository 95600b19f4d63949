//! Flat CSV manifests: `identities.csv` and `videos.csv`.

use std::fs::File;
use std::path::Path;
use std::str::FromStr;

use super::{AvatarVideo, Catalog, CatalogError, IdentityRecord};

pub const IDENTITIES_HEADER: [&str; 5] = ["id", "dataset", "gender", "ethnicity", "age_range"];
pub const VIDEOS_HEADER: [&str; 6] = ["video_id", "dataset", "generator", "target_id", "driver_id", "source_clip"];

fn io_err(path: &Path, source: std::io::Error) -> CatalogError {
    CatalogError::Io { path: path.display().to_string(), source }
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> CatalogError {
    CatalogError::Parse { path: path.display().to_string(), line, message: message.into() }
}

fn csv_err(path: &Path, e: csv::Error) -> CatalogError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => io_err(path, io),
        other => parse_err(path, line, format!("{other:?}")),
    }
}

/// Reads every data row of a manifest after checking its header.
fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<(u64, csv::StringRecord)>, CatalogError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let found = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let found: Vec<&str> = found.iter().map(str::trim).collect();
    if found != header {
        return Err(parse_err(path, 1, format!("header {:?} does not match expected {:?}", found, header)));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        rows.push((line, rec));
    }
    Ok(rows)
}

fn field<T: FromStr>(path: &Path, line: u64, rec: &csv::StringRecord, idx: usize, name: &str) -> Result<T, CatalogError>
where
    T::Err: std::fmt::Display,
{
    let raw = rec.get(idx).ok_or_else(|| parse_err(path, line, format!("missing column {name}")))?;
    raw.trim().parse().map_err(|e| parse_err(path, line, format!("column {name}: {e}")))
}

/// Loads a catalog from the identities and videos manifests.
///
/// Cross assignments are reconstructed from the cross videos. Errors carry
/// the offending file and line, or the offending record for invariant
/// violations.
pub fn load_manifest(identities_path: &Path, videos_path: &Path) -> Result<Catalog, CatalogError> {
    let mut identities = Vec::new();
    for (line, rec) in read_rows(identities_path, &IDENTITIES_HEADER)? {
        let p = identities_path;
        let id: String = field(p, line, &rec, 0, "id")?;
        if id.is_empty() {
            return Err(parse_err(p, line, "empty identity id"));
        }
        identities.push(IdentityRecord {
            id: id.as_str().into(),
            dataset: field(p, line, &rec, 1, "dataset")?,
            gender: field(p, line, &rec, 2, "gender")?,
            ethnicity: field(p, line, &rec, 3, "ethnicity")?,
            age_range: field(p, line, &rec, 4, "age_range")?,
        });
    }

    let mut videos = Vec::new();
    for (line, rec) in read_rows(videos_path, &VIDEOS_HEADER)? {
        let p = videos_path;
        let id: String = field(p, line, &rec, 0, "video_id")?;
        if id.is_empty() {
            return Err(parse_err(p, line, "empty video_id"));
        }
        let target: String = field(p, line, &rec, 3, "target_id")?;
        let driver: String = field(p, line, &rec, 4, "driver_id")?;
        videos.push(AvatarVideo {
            video_id: id.as_str().into(),
            dataset: field(p, line, &rec, 1, "dataset")?,
            generator: field(p, line, &rec, 2, "generator")?,
            target: target.as_str().into(),
            driver: driver.as_str().into(),
            source_clip: field(p, line, &rec, 5, "source_clip")?,
        });
    }

    Catalog::from_videos(identities, videos)
}

/// Writes the catalog as the two manifest files, preserving record order.
pub fn save_manifest(catalog: &Catalog, identities_path: &Path, videos_path: &Path) -> Result<(), CatalogError> {
    let mut w = csv::Writer::from_path(identities_path).map_err(|e| csv_err(identities_path, e))?;
    w.write_record(IDENTITIES_HEADER).map_err(|e| csv_err(identities_path, e))?;
    for r in catalog.identities() {
        w.write_record([
            r.id.as_str(),
            r.dataset.as_str(),
            r.gender.as_str(),
            r.ethnicity.as_str(),
            r.age_range.as_str(),
        ])
        .map_err(|e| csv_err(identities_path, e))?;
    }
    w.flush().map_err(|e| io_err(identities_path, e))?;

    let mut w = csv::Writer::from_path(videos_path).map_err(|e| csv_err(videos_path, e))?;
    w.write_record(VIDEOS_HEADER).map_err(|e| csv_err(videos_path, e))?;
    for v in catalog.videos() {
        let clip = v.source_clip.to_string();
        w.write_record([
            v.video_id.as_str(),
            v.dataset.as_str(),
            v.generator.as_str(),
            v.target.as_str(),
            v.driver.as_str(),
            clip.as_str(),
        ])
        .map_err(|e| csv_err(videos_path, e))?;
    }
    w.flush().map_err(|e| io_err(videos_path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    const IDS: &str = "id,dataset,gender,ethnicity,age_range\n\
                       A,CREMA-D,female,asian,20-30\n\
                       B,CREMA-D,male,unknown,unknown\n";

    #[test]
    fn minimal_self_only_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let ids = write(dir.path(), "identities.csv", IDS);
        let vids = write(
            dir.path(),
            "videos.csv",
            "video_id,dataset,generator,target_id,driver_id,source_clip\n\
             v1,CREMA-D,GAGA,A,A,0\nv2,CREMA-D,GAGA,A,A,1\nv3,CREMA-D,GAGA,B,B,0\nv4,CREMA-D,GAGA,B,B,1\n",
        );
        let cat = load_manifest(&ids, &vids).unwrap();
        assert_eq!(cat.videos().len(), 4);
        assert!(cat.videos().iter().all(|v| v.is_self()));
        assert_eq!(cat.assignments().len(), 0);
    }

    #[test]
    fn cross_video_with_target_equal_driver_is_self_by_definition() {
        // A row whose target equals its driver can never be a cross video;
        // a row listing a driver among its own targets is rejected.
        let dir = tempfile::tempdir().unwrap();
        let ids = write(dir.path(), "identities.csv", IDS);
        let vids = write(
            dir.path(),
            "videos.csv",
            "video_id,dataset,generator,target_id,driver_id,source_clip\nv1,CREMA-D,GAGA,A,A,0\nx1,CREMA-D,GAGA,A,A,0\n",
        );
        let err = load_manifest(&ids, &vids).unwrap_err();
        assert!(err.to_string().contains("same (target, driver, generator, clip)"), "{err}");
    }

    #[test]
    fn parse_error_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let ids = write(dir.path(), "identities.csv", IDS);
        let vids = write(
            dir.path(),
            "videos.csv",
            "video_id,dataset,generator,target_id,driver_id,source_clip\nv1,CREMA-D,GAGA,A,A,0\nv2,CREMA-D,NOPE,A,A,1\n",
        );
        match load_manifest(&ids, &vids).unwrap_err() {
            CatalogError::Parse { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("generator"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn wrong_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ids = write(dir.path(), "identities.csv", "id,dataset,gender\nA,CREMA-D,female\n");
        let vids = write(dir.path(), "videos.csv", "video_id\n");
        assert!(matches!(load_manifest(&ids, &vids), Err(CatalogError::Parse { line: 1, .. })));
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nope.csv");
        assert!(matches!(load_manifest(&p, &p), Err(CatalogError::Io { .. })));
    }
}
