//! Record-level evaluation: classification score from a 3×3 matrix,
//! boundary score with beat tolerances, and their weighted mean.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{check_sorted_disjoint, Episode, SeriesLabel};
use crate::error::{Error, Result};

/// Rewards `values[truth][pred]` over the class order (N, AFf, AFp).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoringMatrix {
    pub values: [[f64; 3]; 3],
    /// True for the built-in matrix, whose unanchored cells are guesses.
    pub unverified_default: bool,
}

impl Default for ScoringMatrix {
    /// Diagonal +1, N→AFf −1, AFf→N −2, every other cell 0.
    fn default() -> Self {
        Self {
            values: [[1.0, -1.0, 0.0], [-2.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            unverified_default: true,
        }
    }
}

impl ScoringMatrix {
    pub fn new(values: [[f64; 3]; 3]) -> Result<Self> {
        for (i, row) in values.iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Matrix(format!(
                    "row {} has a non-finite cell",
                    SeriesLabel::ALL[i]
                )));
            }
            if row[i] != 1.0 {
                return Err(Error::Matrix(format!(
                    "diagonal cell {} is {}, expected 1",
                    SeriesLabel::ALL[i],
                    row[i]
                )));
            }
        }
        Ok(Self {
            values,
            unverified_default: false,
        })
    }

    /// Parses a CSV with a header row and a header column of the labels
    /// `N`, `AFF`, `AFP` (rows are truth, columns prediction).
    pub fn parse(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let rows: Vec<csv::StringRecord> = reader
            .records()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Matrix(e.to_string()))?;
        if rows.len() != 4 || rows.iter().any(|r| r.len() != 4) {
            return Err(Error::Matrix(
                "expected a 4×4 grid: header row plus three labelled rows".into(),
            ));
        }
        let label = |s: &str| {
            s.parse::<SeriesLabel>()
                .map_err(|_| Error::Matrix(format!("unknown label `{s}`")))
        };
        let cols: Vec<SeriesLabel> = rows[0].iter().skip(1).map(label).collect::<Result<_>>()?;
        let mut values = [[f64::NAN; 3]; 3];
        let mut seen = [false; 3];
        for row in &rows[1..] {
            let truth = label(&row[0])?;
            if std::mem::replace(&mut seen[truth.index()], true) {
                return Err(Error::Matrix(format!("row {truth} appears twice")));
            }
            for (cell, pred) in row.iter().skip(1).zip(&cols) {
                values[truth.index()][pred.index()] = cell
                    .parse::<f64>()
                    .map_err(|_| Error::Matrix(format!("cell ({truth}, {pred}) `{cell}` is not a number")))?;
            }
        }
        let mut col_seen = [false; 3];
        cols.iter().for_each(|c| col_seen[c.index()] = true);
        if col_seen.contains(&false) {
            return Err(Error::Matrix("header row must name N, AFF and AFP once each".into()));
        }
        Self::new(values)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Matrix(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(",N,AFF,AFP\n");
        for (label, row) in SeriesLabel::ALL.iter().zip(&self.values) {
            let _ = writeln!(out, "{},{},{},{}", label.code(), row[0], row[1], row[2]);
        }
        out
    }

    pub fn score(&self, truth: SeriesLabel, pred: SeriesLabel) -> f64 {
        self.values[truth.index()][pred.index()]
    }
}

pub fn score_classification(truth: SeriesLabel, pred: SeriesLabel, matrix: &ScoringMatrix) -> f64 {
    matrix.score(truth, pred)
}

/// Converts sample distances into beats.
#[derive(Clone, Copy, Debug)]
pub enum BeatRuler<'a> {
    /// Every beat spans this many samples.
    Fixed(usize),
    /// Annotated beat locations; positions between beats are interpolated.
    Positions(&'a [usize]),
}

impl BeatRuler<'_> {
    /// Beat coordinate of a sample index.
    fn coord(&self, x: usize) -> f64 {
        match *self {
            BeatRuler::Fixed(len) => x as f64 / len as f64,
            BeatRuler::Positions(p) => {
                let x = x as f64;
                let at = |i: usize| p[i] as f64;
                // segment whose ends bracket x, extended linearly past the ends
                let i = p.partition_point(|&b| (b as f64) <= x).clamp(1, p.len() - 1) - 1;
                i as f64 + (x - at(i)) / (at(i + 1) - at(i))
            }
        }
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        (self.coord(a) - self.coord(b)).abs()
    }

    pub fn from_positions(positions: Option<&[usize]>, beat_len: usize) -> BeatRuler<'_> {
        match positions {
            Some(p) if p.len() >= 2 => BeatRuler::Positions(p),
            _ => BeatRuler::Fixed(beat_len),
        }
    }
}

/// One credited boundary pairing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryMatch {
    pub kind: BoundaryKind,
    pub truth: usize,
    pub pred: usize,
    pub beats: f64,
    pub credit: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryKind {
    Onset,
    End,
}

fn credit(beats: f64) -> f64 {
    if beats <= 1.0 {
        1.0
    } else if beats <= 2.0 {
        0.5
    } else {
        0.0
    }
}

fn match_boundaries(kind: BoundaryKind, truth: &[usize], pred: &[usize], ruler: BeatRuler<'_>) -> Vec<BoundaryMatch> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, &t) in truth.iter().enumerate() {
        for (j, &p) in pred.iter().enumerate() {
            let d = ruler.distance(t, p);
            if d <= 2.0 {
                pairs.push((d, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_t = vec![false; truth.len()];
    let mut used_p = vec![false; pred.len()];
    let mut out = Vec::new();
    for (d, i, j) in pairs {
        if used_t[i] || used_p[j] {
            continue;
        }
        used_t[i] = true;
        used_p[j] = true;
        out.push(BoundaryMatch {
            kind,
            truth: truth[i],
            pred: pred[j],
            beats: d,
            credit: credit(d),
        });
    }
    out
}

/// Boundary score: onsets and endpoints are matched separately, nearest
/// first and one-to-one; each match within 1 beat earns 1, within 2 beats 0.5.
pub fn score_episodes(truth: &[Episode], pred: &[Episode], ruler: BeatRuler<'_>) -> Result<(f64, Vec<BoundaryMatch>)> {
    check_sorted_disjoint(truth).map_err(|m| Error::Contract(format!("annotated episodes: {m}")))?;
    check_sorted_disjoint(pred).map_err(|m| Error::Contract(format!("predicted episodes: {m}")))?;
    if let BeatRuler::Fixed(0) = ruler {
        return Err(Error::Contract("beat length must be positive".into()));
    }
    let on = |e: &[Episode]| e.iter().map(|x| x.onset).collect::<Vec<_>>();
    let end = |e: &[Episode]| e.iter().map(|x| x.end).collect::<Vec<_>>();
    let mut matches = match_boundaries(BoundaryKind::Onset, &on(truth), &on(pred), ruler);
    matches.extend(match_boundaries(BoundaryKind::End, &end(truth), &end(pred), ruler));
    let total = matches.iter().fold(0.0, |acc, m| acc + m.credit);
    Ok((total, matches))
}

/// `M_a / max(M_r, M_a)` with 0/0 taken as 1.
pub fn episode_weight(m_a: usize, m_r: usize) -> f64 {
    if m_a == 0 && m_r == 0 {
        1.0
    } else {
        m_a as f64 / m_r.max(m_a) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordScore {
    pub record_id: String,
    pub truth: SeriesLabel,
    pub pred: SeriesLabel,
    pub u_r: f64,
    pub u_e: f64,
    /// Annotated episode count.
    pub m_a: usize,
    /// Predicted episode count.
    pub m_r: usize,
    pub weight: f64,
    pub contribution: f64,
}

pub struct RecordInput<'a> {
    pub record_id: &'a str,
    pub truth_label: SeriesLabel,
    pub truth_episodes: &'a [Episode],
    pub pred_label: SeriesLabel,
    pub pred_episodes: &'a [Episode],
}

pub fn score_record(input: &RecordInput<'_>, matrix: &ScoringMatrix, ruler: BeatRuler<'_>) -> Result<RecordScore> {
    let u_r = score_classification(input.truth_label, input.pred_label, matrix);
    let (u_e, _) = score_episodes(input.truth_episodes, input.pred_episodes, ruler)?;
    let (m_a, m_r) = (input.truth_episodes.len(), input.pred_episodes.len());
    let weight = episode_weight(m_a, m_r);
    Ok(RecordScore {
        record_id: input.record_id.to_string(),
        truth: input.truth_label,
        pred: input.pred_label,
        u_r,
        u_e,
        m_a,
        m_r,
        weight,
        contribution: u_r + weight * u_e,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub records: Vec<RecordScore>,
    pub u_r_mean: f64,
    pub u_e_sum: f64,
    pub u_e_mean: f64,
    pub u: f64,
    pub unverified_matrix: bool,
}

#[derive(Serialize)]
struct Aggregate {
    #[serde(rename = "U_r_mean")]
    u_r_mean: f64,
    #[serde(rename = "U_e_sum")]
    u_e_sum: f64,
    #[serde(rename = "U_e_mean")]
    u_e_mean: f64,
    #[serde(rename = "U")]
    u: f64,
    n_records: usize,
    matrix: &'static str,
    boundary_matching: &'static str,
}

pub fn score_dataset(records: Vec<RecordScore>, matrix: &ScoringMatrix) -> Result<ScoreReport> {
    if records.is_empty() {
        return Err(Error::Contract("cannot score an empty record set".into()));
    }
    let n = records.len() as f64;
    let u_e_sum = records.iter().fold(0.0, |acc, r| acc + r.u_e);
    Ok(ScoreReport {
        u_r_mean: records.iter().map(|r| r.u_r).sum::<f64>() / n,
        u_e_sum,
        u_e_mean: u_e_sum / n,
        u: records.iter().fold(0.0, |acc, r| acc + r.contribution) / n,
        unverified_matrix: matrix.unverified_default,
        records,
    })
}

impl ScoreReport {
    pub fn n_records(&self) -> usize {
        self.records.len()
    }

    fn matrix_flag(&self) -> &'static str {
        if self.unverified_matrix {
            "unverified default"
        } else {
            "user supplied"
        }
    }

    /// Per-record rows under a `#` header carrying the matrix provenance.
    pub fn to_csv(&self) -> Result<String> {
        let mut out = format!(
            "# scoring matrix: {}; onsets and endpoints matched independently\n",
            self.matrix_flag()
        );
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "record_id",
            "truth",
            "pred",
            "U_r",
            "U_e",
            "M_a",
            "M_r",
            "weight",
            "contribution",
        ])
        .map_err(|e| Error::Data(e.to_string()))?;
        for r in &self.records {
            w.write_record([
                r.record_id.clone(),
                r.truth.to_string(),
                r.pred.to_string(),
                r.u_r.to_string(),
                r.u_e.to_string(),
                r.m_a.to_string(),
                r.m_r.to_string(),
                r.weight.to_string(),
                r.contribution.to_string(),
            ])
            .map_err(|e| Error::Data(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        out.push_str(&String::from_utf8(bytes).expect("csv output is utf-8"));
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        let agg = Aggregate {
            u_r_mean: self.u_r_mean,
            u_e_sum: self.u_e_sum,
            u_e_mean: self.u_e_mean,
            u: self.u,
            n_records: self.n_records(),
            matrix: self.matrix_flag(),
            boundary_matching: "independent",
        };
        Ok(serde_json::to_string_pretty(&agg)? + "\n")
    }
}
