//! Cross-clothes / same-clothes protocols and CMC / mAP computation.

use std::collections::HashSet;
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::{Dataset, Split};
use crate::tensor::{euclidean, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolMode {
    CrossClothes,
    SameClothes,
}

impl ProtocolMode {
    pub const ALL: [ProtocolMode; 2] = [ProtocolMode::CrossClothes, ProtocolMode::SameClothes];

    pub fn as_str(self) -> &'static str {
        match self {
            ProtocolMode::CrossClothes => "cross_clothes",
            ProtocolMode::SameClothes => "same_clothes",
        }
    }

    fn query_split(self) -> Split {
        match self {
            ProtocolMode::CrossClothes => Split::QueryCross,
            ProtocolMode::SameClothes => Split::QuerySame,
        }
    }
}

impl fmt::Display for ProtocolMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ProtocolMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross_clothes" | "cross" => Ok(ProtocolMode::CrossClothes),
            "same_clothes" | "same" => Ok(ProtocolMode::SameClothes),
            other => Err(Error::Config(format!("unknown protocol mode {other:?}"))),
        }
    }
}

/// Query and gallery record indices into a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Protocol {
    pub mode: ProtocolMode,
    pub query: Vec<usize>,
    pub gallery: Vec<usize>,
}

pub fn build_protocol(dataset: &Dataset, mode: ProtocolMode) -> Result<Protocol> {
    let query = dataset.indices_in(mode.query_split());
    let gallery = dataset.indices_in(Split::Gallery);
    if query.is_empty() {
        return Err(Error::Protocol(format!(
            "{mode}: no {} records, evaluation undefined",
            mode.query_split()
        )));
    }
    if gallery.is_empty() {
        return Err(Error::Protocol(format!("{mode}: gallery split is empty")));
    }
    let recs = dataset.records();
    let gallery_outfits: HashSet<(&str, &str)> = gallery
        .iter()
        .map(|&g| (recs[g].identity.as_str(), recs[g].clothes_id.as_str()))
        .collect();
    let offending: Vec<String> = query
        .iter()
        .filter(|&&q| {
            let has_same = gallery_outfits.contains(&(recs[q].identity.as_str(), recs[q].clothes_id.as_str()));
            match mode {
                ProtocolMode::CrossClothes => has_same,
                ProtocolMode::SameClothes => !has_same,
            }
        })
        .map(|&q| format!("{} ({}, {})", recs[q].image_path.display(), recs[q].identity, recs[q].clothes_id))
        .collect();
    if !offending.is_empty() {
        let why = match mode {
            ProtocolMode::CrossClothes => "share clothes with a gallery record of the same identity",
            ProtocolMode::SameClothes => "have no gallery record of the same identity and clothes",
        };
        return Err(Error::Protocol(format!(
            "{mode}: {} queries {why}: {}",
            offending.len(),
            offending.join(", ")
        )));
    }
    Ok(Protocol { mode, query, gallery })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    pub mode: ProtocolMode,
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    #[serde(rename = "mAP")]
    pub map: f64,
    pub num_query: usize,
    pub num_gallery: usize,
    /// `cmc[k - 1]` is the Rank-k accuracy, for `k` up to the gallery size.
    #[serde(skip)]
    pub cmc: Vec<f64>,
    #[serde(skip)]
    pub per_query_ap: Vec<f64>,
}

impl EvalResult {
    pub fn rank(&self, k: usize) -> f64 {
        assert!(k >= 1, "ranks start at 1");
        self.cmc[(k - 1).min(self.cmc.len() - 1)]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct serializes")
    }
}

/// Gallery positions ordered by ascending distance to the query, ties
/// broken by gallery position.
pub fn rank_gallery(embeddings: &Matrix, query: usize, gallery: &[usize]) -> Vec<usize> {
    let dists: Vec<f64> = gallery
        .iter()
        .map(|&g| euclidean(embeddings.row(query), embeddings.row(g)))
        .collect();
    let mut order: Vec<usize> = (0..gallery.len()).collect();
    order.sort_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(a.cmp(&b)));
    order
}

/// Average precision of a ranked relevance list: mean over hits of the
/// precision at that hit.
pub fn average_precision(relevant_in_rank_order: &[bool]) -> f64 {
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (i, &rel) in relevant_in_rank_order.iter().enumerate() {
        if rel {
            hits += 1;
            acc += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        acc / hits as f64
    }
}

/// Ranks the gallery for every query; a gallery record is relevant when it
/// has the query's identity.
///
/// `embeddings` and `identities` are indexed by dataset record.
pub fn evaluate<L: PartialEq>(embeddings: &Matrix, identities: &[L], protocol: &Protocol) -> Result<EvalResult> {
    if protocol.query.is_empty() || protocol.gallery.is_empty() {
        return Err(Error::Evaluation("empty query or gallery".into()));
    }
    let max_index = protocol.query.iter().chain(&protocol.gallery).copied().max().unwrap_or(0);
    if max_index >= embeddings.rows() || max_index >= identities.len() {
        return Err(Error::Evaluation(format!(
            "record {max_index} has no embedding ({} rows, {} identities)",
            embeddings.rows(),
            identities.len()
        )));
    }
    let n_gallery = protocol.gallery.len();
    let mut first_hit_counts = vec![0usize; n_gallery];
    let mut per_query_ap = Vec::with_capacity(protocol.query.len());
    for &q in &protocol.query {
        let order = rank_gallery(embeddings, q, &protocol.gallery);
        let relevant: Vec<bool> = order
            .iter()
            .map(|&pos| identities[protocol.gallery[pos]] == identities[q])
            .collect();
        let Some(first) = relevant.iter().position(|&r| r) else {
            return Err(Error::Evaluation(format!(
                "query record {q} has no relevant gallery record"
            )));
        };
        first_hit_counts[first] += 1;
        per_query_ap.push(average_precision(&relevant));
    }
    let nq = protocol.query.len() as f64;
    let mut cmc = Vec::with_capacity(n_gallery);
    let mut running = 0usize;
    for c in first_hit_counts {
        running += c;
        cmc.push(running as f64 / nq);
    }
    let map = per_query_ap.iter().sum::<f64>() / nq;
    let at = |k: usize| cmc[(k - 1).min(n_gallery - 1)];
    Ok(EvalResult {
        mode: protocol.mode,
        rank1: at(1),
        rank5: at(5),
        rank10: at(10),
        map,
        num_query: protocol.query.len(),
        num_gallery: n_gallery,
        cmc,
        per_query_ap,
    })
}

/// Human-readable table of results.
pub fn format_table(results: &[EvalResult]) -> String {
    let mut s = format!(
        "{:<14} {:>7} {:>7} {:>7} {:>7} {:>6} {:>8}\n",
        "protocol", "R1", "R5", "R10", "mAP", "query", "gallery"
    );
    for r in results {
        s.push_str(&format!(
            "{:<14} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>6} {:>8}\n",
            r.mode.as_str(),
            100.0 * r.rank1,
            100.0 * r.rank5,
            100.0 * r.rank10,
            100.0 * r.map,
            r.num_query,
            r.num_gallery
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{LabelRecombinationTable, SampleRecord};

    fn rec(id: &str, clothes: &str, split: Split) -> SampleRecord {
        SampleRecord {
            image_path: format!("{id}_{clothes}_{split}.png").into(),
            mask_path: "m.png".into(),
            identity: id.into(),
            camera: "A".into(),
            clothes_id: clothes.into(),
            split,
        }
    }

    fn ds(records: Vec<SampleRecord>) -> Dataset {
        Dataset::from_records(".", records, LabelRecombinationTable::default())
    }

    #[test]
    fn perfect_retrieval() {
        let emb = Matrix::from_rows(&[vec![0.0], vec![0.1], vec![5.0]]).unwrap();
        let p = Protocol {
            mode: ProtocolMode::CrossClothes,
            query: vec![0],
            gallery: vec![1, 2],
        };
        let r = evaluate(&emb, &["a", "a", "b"], &p).unwrap();
        assert_eq!((r.rank1, r.map), (1.0, 1.0));
    }

    #[test]
    fn average_precision_example() {
        let ap = average_precision(&[true, false, true, false, false]);
        assert!((ap - 0.5 * (1.0 + 2.0 / 3.0)).abs() < 1e-15);
        assert!((ap - 0.833333).abs() < 1e-6);
    }

    #[test]
    fn ties_broken_by_gallery_position() {
        let emb = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![-1.0]]).unwrap();
        assert_eq!(rank_gallery(&emb, 0, &[1, 2]), vec![0, 1]);
        assert_eq!(rank_gallery(&emb, 0, &[2, 1]), vec![0, 1]);
    }

    #[test]
    fn query_without_relevant_gallery_is_error() {
        let emb = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let p = Protocol {
            mode: ProtocolMode::SameClothes,
            query: vec![0],
            gallery: vec![1],
        };
        assert!(matches!(evaluate(&emb, &["a", "b"], &p), Err(Error::Evaluation(_))));
    }

    #[test]
    fn protocol_validation() {
        let good = ds(vec![
            rec("a", "o0", Split::Gallery),
            rec("a", "o0", Split::QuerySame),
            rec("a", "o1", Split::QueryCross),
        ]);
        assert_eq!(build_protocol(&good, ProtocolMode::CrossClothes).unwrap().query, vec![2]);
        assert_eq!(build_protocol(&good, ProtocolMode::SameClothes).unwrap().query, vec![1]);

        let leaky = ds(vec![rec("a", "o0", Split::Gallery), rec("a", "o0", Split::QueryCross)]);
        let err = build_protocol(&leaky, ProtocolMode::CrossClothes).unwrap_err();
        assert!(matches!(err, Error::Protocol(ref m) if m.contains("a_o0_query_cross")));

        let no_query = ds(vec![rec("a", "o0", Split::Gallery)]);
        assert!(matches!(
            build_protocol(&no_query, ProtocolMode::SameClothes),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn json_has_expected_keys() {
        let emb = Matrix::from_rows(&[vec![0.0], vec![0.1]]).unwrap();
        let p = Protocol {
            mode: ProtocolMode::SameClothes,
            query: vec![0],
            gallery: vec![1],
        };
        let json: serde_json::Value = serde_json::from_str(&evaluate(&emb, &[1, 1], &p).unwrap().to_json()).unwrap();
        for key in ["mode", "rank1", "rank5", "rank10", "mAP", "num_query", "num_gallery"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        assert_eq!(json["mode"], "same_clothes");
    }
}
