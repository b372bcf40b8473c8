//! Asynchronous longitudinal data: per-subject response and covariate
//! observation sequences on a common closed time interval.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{LockerError, Result};

/// One subject's observations. Response and covariate are measured at their
/// own (generally different) time points.
#[derive(Debug, Clone)]
pub struct Subject {
    pub id: String,
    /// `(T_ij, Y_i(T_ij))`, sorted ascending by time.
    pub response_obs: Vec<(f64, f64)>,
    /// `(S_ik, X_i(S_ik))`, sorted ascending by time.
    pub covariate_obs: Vec<(f64, f64)>,
}

impl Subject {
    pub fn new(
        id: impl Into<String>,
        mut response_obs: Vec<(f64, f64)>,
        mut covariate_obs: Vec<(f64, f64)>,
    ) -> Self {
        sort_by_time(&mut response_obs);
        sort_by_time(&mut covariate_obs);
        Subject {
            id: id.into(),
            response_obs,
            covariate_obs,
        }
    }

    /// Number of response observations `L_i`.
    pub fn num_response(&self) -> usize {
        self.response_obs.len()
    }

    /// Number of covariate observations `M_i`.
    pub fn num_covariate(&self) -> usize {
        self.covariate_obs.len()
    }

    /// Smallest response/covariate time gap `min_{j,k} |T_ij - S_ik|`.
    pub fn min_time_gap(&self) -> f64 {
        let mut best = f64::INFINITY;
        for &(t, _) in &self.response_obs {
            for &(s, _) in &self.covariate_obs {
                best = best.min((t - s).abs());
            }
        }
        best
    }
}

fn sort_by_time(obs: &mut [(f64, f64)]) {
    obs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
}

/// Immutable dataset of subjects on a common domain interval.
#[derive(Debug, Clone)]
pub struct LongDataset {
    subjects: Vec<Subject>,
    domain: (f64, f64),
}

impl LongDataset {
    /// Validates and wraps a subject list. Subjects without at least one
    /// response and one covariate observation are rejected, as are times
    /// outside the domain.
    pub fn new(subjects: Vec<Subject>, domain: (f64, f64)) -> Result<Self> {
        let (lo, hi) = domain;
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(LockerError::DegenerateDomain { lo, hi });
        }
        if subjects.is_empty() {
            return Err(LockerError::EmptyDataset);
        }
        for s in &subjects {
            if s.response_obs.is_empty() || s.covariate_obs.is_empty() {
                return Err(LockerError::param(
                    "subjects",
                    format!("subject {} has an empty observation list", s.id),
                ));
            }
            for &(t, _) in s.response_obs.iter().chain(s.covariate_obs.iter()) {
                if !t.is_finite() || t < lo || t > hi {
                    return Err(LockerError::TimeOutsideDomain {
                        subject: s.id.clone(),
                        time: t,
                        lo,
                        hi,
                    });
                }
            }
        }
        Ok(LongDataset { subjects, domain })
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn num_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn domain_len(&self) -> f64 {
        self.domain.1 - self.domain.0
    }

    /// Dataset restricted to the subjects selected by `keep` (indexed in
    /// subject order). Used for cross-validation splits.
    pub fn filter_subjects(&self, keep: impl Fn(usize, &Subject) -> bool) -> Result<LongDataset> {
        let subjects: Vec<Subject> = self
            .subjects
            .iter()
            .enumerate()
            .filter(|(i, s)| keep(*i, s))
            .map(|(_, s)| s.clone())
            .collect();
        if subjects.is_empty() {
            return Err(LockerError::EmptyDataset);
        }
        LongDataset::new(subjects, self.domain)
    }
}

/// Loads the two-file CSV layout (`subject_id,time,value` in both files).
///
/// A subject is retained only if it has at least one row in *both* files;
/// the domain defaults to the range of all observed times.
pub fn load_csv(response_path: &Path, covariate_path: &Path) -> Result<LongDataset> {
    load_csv_with_domain(response_path, covariate_path, None)
}

/// As [`load_csv`], with an explicit domain override. Times outside the
/// override are rejected.
pub fn load_csv_with_domain(
    response_path: &Path,
    covariate_path: &Path,
    domain: Option<(f64, f64)>,
) -> Result<LongDataset> {
    let response = read_obs_file(response_path)?;
    let covariate = read_obs_file(covariate_path)?;

    let mut cov_by_id: HashMap<&str, &Vec<(f64, f64)>> = HashMap::new();
    for (id, obs) in &covariate.groups {
        cov_by_id.insert(id.as_str(), obs);
    }

    // Subjects ordered by first appearance in the response file.
    let mut subjects = Vec::new();
    for (id, resp_obs) in &response.groups {
        if let Some(cov_obs) = cov_by_id.get(id.as_str()) {
            subjects.push(Subject::new(
                id.clone(),
                resp_obs.clone(),
                (*cov_obs).clone(),
            ));
        }
    }
    if subjects.is_empty() {
        return Err(LockerError::EmptyDataset);
    }

    let domain = match domain {
        Some(d) => d,
        None => {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for s in &subjects {
                for &(t, _) in s.response_obs.iter().chain(s.covariate_obs.iter()) {
                    lo = lo.min(t);
                    hi = hi.max(t);
                }
            }
            (lo, hi)
        }
    };
    LongDataset::new(subjects, domain)
}

struct ObsFile {
    /// Groups in order of first appearance, duplicates kept.
    groups: Vec<(String, Vec<(f64, f64)>)>,
}

fn read_obs_file(path: &Path) -> Result<ObsFile> {
    let file_name = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => LockerError::Io {
                path: file_name.clone(),
                source: std::io::Error::other(e.to_string()),
            },
            _ => LockerError::Parse {
                file: file_name.clone(),
                line: 1,
                message: e.to_string(),
            },
        })?;

    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<(f64, f64)>> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| LockerError::Parse {
            file: file_name.clone(),
            line: e
                .position()
                .map(|p| p.line())
                .unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 3 {
            return Err(LockerError::Parse {
                file: file_name.clone(),
                line,
                message: format!("expected 3 fields (subject_id,time,value), got {}", record.len()),
            });
        }
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(LockerError::Parse {
                file: file_name.clone(),
                line,
                message: "empty subject_id".into(),
            });
        }
        let time = parse_f64(&record[1], "time", &file_name, line)?;
        let value = parse_f64(&record[2], "value", &file_name, line)?;
        if !groups.contains_key(&id) {
            order.push(id.clone());
        }
        groups.entry(id).or_default().push((time, value));
    }
    Ok(ObsFile {
        groups: order
            .into_iter()
            .map(|id| {
                let obs = groups.remove(&id).unwrap();
                (id, obs)
            })
            .collect(),
    })
}

fn parse_f64(raw: &str, field: &str, file: &str, line: u64) -> Result<f64> {
    let v: f64 = raw.parse().map_err(|_| LockerError::Parse {
        file: file.to_string(),
        line,
        message: format!("{field} `{raw}` is not numeric"),
    })?;
    if !v.is_finite() {
        return Err(LockerError::Parse {
            file: file.to_string(),
            line,
            message: format!("{field} `{raw}` is not finite"),
        });
    }
    Ok(v)
}

/// Affinely rescales all times so the domain becomes `[0, 1]`.
///
/// Idempotent on datasets already on `[0, 1]`; values are untouched and
/// ordering is preserved.
pub fn rescale_time(ds: &LongDataset) -> Result<LongDataset> {
    let (lo, hi) = ds.domain();
    let len = hi - lo;
    if !(len > 0.0) {
        return Err(LockerError::DegenerateDomain { lo, hi });
    }
    let map = |t: f64| (t - lo) / len;
    let subjects = ds
        .subjects()
        .iter()
        .map(|s| Subject {
            id: s.id.clone(),
            response_obs: s.response_obs.iter().map(|&(t, y)| (map(t), y)).collect(),
            covariate_obs: s.covariate_obs.iter().map(|&(t, x)| (map(t), x)).collect(),
        })
        .collect();
    LongDataset::new(subjects, (0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "subject_id,time,value").unwrap();
        write!(f, "{body}").unwrap();
        path
    }

    #[test]
    fn load_keeps_intersection_of_ids() {
        let dir = tempfile::tempdir().unwrap();
        let resp = write_csv(dir.path(), "r.csv", "A,0.1,1.0\nB,0.2,2.0\n");
        let cov = write_csv(dir.path(), "c.csv", "A,0.15,0.5\n");
        let ds = load_csv(&resp, &cov).unwrap();
        assert_eq!(ds.num_subjects(), 1);
        assert_eq!(ds.subjects()[0].id, "A");
    }

    #[test]
    fn load_counts_rows_per_subject() {
        let dir = tempfile::tempdir().unwrap();
        let resp = write_csv(dir.path(), "r.csv", "A,0.1,1.0\nA,0.6,2.0\n");
        let cov = write_csv(dir.path(), "c.csv", "A,0.2,0.1\nA,0.3,0.2\nA,0.4,0.3\n");
        let ds = load_csv(&resp, &cov).unwrap();
        let s = &ds.subjects()[0];
        assert_eq!(s.num_response(), 2);
        assert_eq!(s.num_covariate(), 3);
    }

    #[test]
    fn malformed_value_names_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let resp = write_csv(dir.path(), "r.csv", "A,0.1,1.0\nA,0.5,abc\n");
        let cov = write_csv(dir.path(), "c.csv", "A,0.2,0.1\n");
        let err = load_csv(&resp, &cov).unwrap_err();
        match err {
            LockerError::Parse { file, line, .. } => {
                assert!(file.ends_with("r.csv"));
                assert_eq!(line, 3);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_arity_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let resp = write_csv(dir.path(), "r.csv", "A,0.1\n");
        let cov = write_csv(dir.path(), "c.csv", "A,0.2,0.1\n");
        assert!(matches!(
            load_csv(&resp, &cov),
            Err(LockerError::Parse { .. })
        ));
    }

    #[test]
    fn disjoint_ids_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let resp = write_csv(dir.path(), "r.csv", "A,0.1,1.0\n");
        let cov = write_csv(dir.path(), "c.csv", "B,0.2,0.1\n");
        assert!(matches!(load_csv(&resp, &cov), Err(LockerError::EmptyDataset)));
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let resp = write_csv(dir.path(), "r.csv", "A,0.1,1.0\n");
        let missing = dir.path().join("nope.csv");
        assert!(matches!(
            load_csv(&resp, &missing),
            Err(LockerError::Io { .. })
        ));
    }

    #[test]
    fn explicit_domain_rejects_outside_times() {
        let dir = tempfile::tempdir().unwrap();
        let resp = write_csv(dir.path(), "r.csv", "A,2.5,1.0\n");
        let cov = write_csv(dir.path(), "c.csv", "A,0.2,0.1\n");
        assert!(matches!(
            load_csv_with_domain(&resp, &cov, Some((0.0, 1.0))),
            Err(LockerError::TimeOutsideDomain { .. })
        ));
    }

    #[test]
    fn rescale_maps_affinely() {
        let s = Subject::new("A", vec![(2.0, 1.0), (4.0, 2.0), (6.0, 3.0)], vec![(2.0, 0.5)]);
        let ds = LongDataset::new(vec![s], (2.0, 6.0)).unwrap();
        let r = rescale_time(&ds).unwrap();
        let times: Vec<f64> = r.subjects()[0].response_obs.iter().map(|o| o.0).collect();
        assert_eq!(times, vec![0.0, 0.5, 1.0]);
        assert_eq!(r.domain(), (0.0, 1.0));
        // Values unchanged.
        let vals: Vec<f64> = r.subjects()[0].response_obs.iter().map(|o| o.1).collect();
        assert_eq!(vals, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn rescale_is_idempotent_on_unit_domain() {
        let s = Subject::new("A", vec![(0.0, 1.0), (0.25, 2.0), (1.0, 3.0)], vec![(0.5, 0.5)]);
        let ds = LongDataset::new(vec![s], (0.0, 1.0)).unwrap();
        let r = rescale_time(&ds).unwrap();
        for (a, b) in ds.subjects()[0]
            .response_obs
            .iter()
            .zip(r.subjects()[0].response_obs.iter())
        {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn single_distinct_time_is_degenerate() {
        let dir = tempfile::tempdir().unwrap();
        let resp = write_csv(dir.path(), "r.csv", "A,0.5,1.0\n");
        let cov = write_csv(dir.path(), "c.csv", "A,0.5,0.1\n");
        assert!(matches!(
            load_csv(&resp, &cov),
            Err(LockerError::DegenerateDomain { .. })
        ));
    }

    #[test]
    fn duplicate_time_rows_are_kept() {
        let s = Subject::new("A", vec![(0.3, 1.0), (0.3, 2.0)], vec![(0.5, 0.5)]);
        let ds = LongDataset::new(vec![s], (0.0, 1.0)).unwrap();
        assert_eq!(ds.subjects()[0].num_response(), 2);
    }

    #[test]
    fn min_time_gap_well_defined() {
        let s = Subject::new("A", vec![(0.5, 1.0)], vec![(0.4, 0.1), (0.6, 0.2)]);
        assert!((s.min_time_gap() - 0.1).abs() < 1e-15);
    }
}
