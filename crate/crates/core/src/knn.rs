//! Exact flat nearest-neighbour index over training-input vectors, with a
//! lookup table from example id to its target.
//!
//! Search scans the whole store in fixed-size blocks and keeps the `k` best
//! candidates in a bounded max-heap. Results are ordered by ascending
//! distance, ties broken by smaller id.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;

pub const INDEX_MAGIC: &[u8; 4] = b"RKNN";
pub const INDEX_VERSION: u16 = 1;

const BLOCK_ROWS: usize = 256;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Squared Euclidean distance.
    #[default]
    L2,
    /// Negated inner product, so smaller is still closer.
    InnerProduct,
}

impl Metric {
    fn code(self) -> u8 {
        match self {
            Metric::L2 => 0,
            Metric::InnerProduct => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Metric::L2),
            1 => Ok(Metric::InnerProduct),
            c => Err(Error::format(format!("unknown metric code {c}"))),
        }
    }

    /// Zero is always `+0.0`, so ties never depend on the sign of zero.
    fn distance(self, a: &[f32], b: &[f32]) -> f64 {
        0.0 + match self {
            Metric::L2 => a
                .iter()
                .zip(b)
                .map(|(&x, &y)| {
                    let d = f64::from(x) - f64::from(y);
                    d * d
                })
                .sum(),
            Metric::InnerProduct => -a
                .iter()
                .zip(b)
                .map(|(&x, &y)| f64::from(x) * f64::from(y))
                .sum::<f64>(),
        }
    }
}

/// What a stored example maps to.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetPayload {
    /// Token ids of the first reference caption.
    Caption(Vec<u32>),
    Label(u8),
}

impl TargetPayload {
    fn validate(&self) -> Result<()> {
        match self {
            TargetPayload::Caption(c) if c.is_empty() => Err(Error::Empty("caption target")),
            TargetPayload::Label(l) if *l > 1 => Err(Error::OutOfRange {
                what: "label",
                index: *l as usize,
                len: 2,
            }),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RetrievalHit {
    pub id: u64,
    pub distance: f64,
}

#[derive(Clone, Copy)]
struct Candidate {
    distance: f64,
    id: u64,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.id.cmp(&other.id))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExampleStore {
    dim: usize,
    metric: Metric,
    vectors: Vec<f32>,
    ids: Vec<u64>,
    targets: HashMap<u64, TargetPayload>,
    frozen: bool,
}

impl ExampleStore {
    pub fn new(dim: usize) -> Self {
        Self::with_metric(dim, Metric::L2)
    }

    pub fn with_metric(dim: usize, metric: Metric) -> Self {
        ExampleStore {
            dim,
            metric,
            vectors: Vec::new(),
            ids: Vec::new(),
            targets: HashMap::new(),
            frozen: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn vector(&self, row: usize) -> &[f32] {
        &self.vectors[row * self.dim..(row + 1) * self.dim]
    }

    pub fn target(&self, id: u64) -> Option<&TargetPayload> {
        self.targets.get(&id)
    }

    /// Disallows further mutation; searches on a frozen store may run from
    /// many threads.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn add(&mut self, id: u64, vector: &[f32], target: TargetPayload) -> Result<()> {
        if self.frozen {
            return Err(Error::Frozen);
        }
        if vector.len() != self.dim {
            return Err(Error::dim("store add", &[self.dim], &[vector.len()]));
        }
        if self.targets.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        target.validate()?;
        self.vectors.extend_from_slice(vector);
        self.ids.push(id);
        self.targets.insert(id, target);
        Ok(())
    }

    /// The `k` closest stored vectors not listed in `exclude`.
    pub fn search(&self, query: &[f32], k: usize, exclude: &[u64]) -> Result<Vec<RetrievalHit>> {
        if query.len() != self.dim {
            return Err(Error::dim("store search", &[self.dim], &[query.len()]));
        }
        if k == 0 {
            return Err(Error::Config("search needs k >= 1".into()));
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        let mut distances = [0.0f64; BLOCK_ROWS];
        for block_start in (0..self.ids.len()).step_by(BLOCK_ROWS) {
            let block_end = (block_start + BLOCK_ROWS).min(self.ids.len());
            for (slot, row) in (block_start..block_end).enumerate() {
                distances[slot] = self.metric.distance(query, self.vector(row));
            }
            for (slot, row) in (block_start..block_end).enumerate() {
                let id = self.ids[row];
                if exclude.contains(&id) {
                    continue;
                }
                let cand = Candidate {
                    distance: distances[slot],
                    id,
                };
                if heap.len() < k {
                    heap.push(cand);
                } else if cand < *heap.peek().expect("heap is full") {
                    heap.pop();
                    heap.push(cand);
                }
            }
        }
        if heap.is_empty() {
            return Err(Error::Empty("store after exclusion"));
        }
        Ok(heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| RetrievalHit {
                id: c.id,
                distance: c.distance,
            })
            .collect())
    }

    /// Target of the single nearest example.
    pub fn nearest_target(
        &self,
        query: &[f32],
        exclude: &[u64],
    ) -> Result<(RetrievalHit, &TargetPayload)> {
        let hit = self.search(query, 1, exclude)?[0];
        let target = self.targets.get(&hit.id).ok_or(Error::Missing {
            what: "target",
            id: hit.id,
        })?;
        Ok((hit, target))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(23 + self.ids.len() * (8 + 4 * self.dim));
        out.extend_from_slice(INDEX_MAGIC);
        out.write_u16::<LittleEndian>(INDEX_VERSION).unwrap();
        out.write_u8(self.metric.code()).unwrap();
        out.write_u32::<LittleEndian>(self.dim as u32).unwrap();
        out.write_u64::<LittleEndian>(self.ids.len() as u64)
            .unwrap();
        for (row, &id) in self.ids.iter().enumerate() {
            out.write_u64::<LittleEndian>(id).unwrap();
            for &v in self.vector(row) {
                out.write_f32::<LittleEndian>(v).unwrap();
            }
        }
        out.write_u64::<LittleEndian>(self.ids.len() as u64)
            .unwrap();
        for id in &self.ids {
            out.write_u64::<LittleEndian>(*id).unwrap();
            match &self.targets[id] {
                TargetPayload::Caption(tokens) => {
                    out.write_u8(0).unwrap();
                    out.write_u32::<LittleEndian>(tokens.len() as u32).unwrap();
                    for &t in tokens {
                        out.write_u32::<LittleEndian>(t).unwrap();
                    }
                }
                TargetPayload::Label(l) => {
                    out.write_u8(1).unwrap();
                    out.write_u8(*l).unwrap();
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        parse_index(bytes).map_err(|e| match e {
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::UnexpectedEof => {
                Error::format("index file truncated")
            }
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fsutil::write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn parse_index(bytes: &[u8]) -> Result<ExampleStore> {
    let eof = |e: std::io::Error| Error::io("<index>", e);
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(eof)?;
    if &magic != INDEX_MAGIC {
        return Err(Error::format("bad index magic"));
    }
    let version = r.read_u16::<LittleEndian>().map_err(eof)?;
    if version != INDEX_VERSION {
        return Err(Error::format(format!(
            "unsupported index version {version}"
        )));
    }
    let metric = Metric::from_code(r.read_u8().map_err(eof)?)?;
    let dim = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
    let n = r.read_u64::<LittleEndian>().map_err(eof)? as usize;
    let record = 8 + 4 * dim;
    if (bytes.len() as u64) < 19 + (n as u64) * record as u64 {
        return Err(Error::format("index file truncated"));
    }
    let mut ids = Vec::with_capacity(n);
    let mut vectors = Vec::with_capacity(n * dim);
    for _ in 0..n {
        ids.push(r.read_u64::<LittleEndian>().map_err(eof)?);
        for _ in 0..dim {
            vectors.push(r.read_f32::<LittleEndian>().map_err(eof)?);
        }
    }
    let count = r.read_u64::<LittleEndian>().map_err(eof)? as usize;
    if count != n {
        return Err(Error::format(format!("{count} targets for {n} vectors")));
    }
    let mut targets = HashMap::with_capacity(n);
    for _ in 0..count {
        let id = r.read_u64::<LittleEndian>().map_err(eof)?;
        let payload = match r.read_u8().map_err(eof)? {
            0 => {
                let len = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
                if len > bytes.len() {
                    return Err(Error::format("index file truncated"));
                }
                let mut tokens = Vec::with_capacity(len);
                for _ in 0..len {
                    tokens.push(r.read_u32::<LittleEndian>().map_err(eof)?);
                }
                TargetPayload::Caption(tokens)
            }
            1 => TargetPayload::Label(r.read_u8().map_err(eof)?),
            k => return Err(Error::format(format!("unknown target kind {k}"))),
        };
        payload
            .validate()
            .map_err(|e| Error::format(format!("target for id {id}: {e}")))?;
        if targets.insert(id, payload).is_some() {
            return Err(Error::format(format!("duplicate target for id {id}")));
        }
    }
    if r.position() as usize != bytes.len() {
        return Err(Error::format("trailing bytes after target section"));
    }
    let mut seen = std::collections::HashSet::with_capacity(n);
    for id in &ids {
        if !seen.insert(*id) {
            return Err(Error::format(format!("duplicate vector id {id}")));
        }
        if !targets.contains_key(id) {
            return Err(Error::format(format!("no target for id {id}")));
        }
    }
    Ok(ExampleStore {
        dim,
        metric,
        vectors,
        ids,
        targets,
        // a persisted index is a finished artifact
        frozen: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label(l: u8) -> TargetPayload {
        TargetPayload::Label(l)
    }

    #[test]
    fn self_match_has_zero_distance() {
        let mut s = ExampleStore::new(3);
        s.add(7, &[0.5, -1.0, 2.0], label(1)).unwrap();
        let hits = s.search(&[0.5, -1.0, 2.0], 1, &[]).unwrap();
        assert_eq!(
            hits,
            vec![RetrievalHit {
                id: 7,
                distance: 0.0
            }]
        );
    }

    #[test]
    fn add_errors() {
        let mut s = ExampleStore::new(2);
        assert!(matches!(
            s.add(0, &[1.0], label(0)),
            Err(Error::Dimension { .. })
        ));
        s.add(0, &[1.0, 2.0], label(0)).unwrap();
        assert!(matches!(
            s.add(0, &[1.0, 2.0], label(0)),
            Err(Error::DuplicateId(0))
        ));
        assert!(s
            .add(1, &[1.0, 2.0], TargetPayload::Caption(vec![]))
            .is_err());
        s.freeze();
        assert!(matches!(
            s.add(2, &[0.0, 0.0], label(1)),
            Err(Error::Frozen)
        ));
    }

    #[test]
    fn many_adds_counted() {
        let mut s = ExampleStore::new(1);
        for i in 0..10_000u64 {
            s.add(i, &[i as f32], label((i % 2) as u8)).unwrap();
        }
        assert_eq!(s.len(), 10_000);
    }

    #[test]
    fn two_point_search() {
        let mut s = ExampleStore::new(2);
        s.add(0, &[0.0, 0.0], label(0)).unwrap();
        s.add(1, &[3.0, 4.0], label(1)).unwrap();
        let hits = s.search(&[1.0, 1.0], 1, &[]).unwrap();
        assert_eq!(
            hits,
            vec![RetrievalHit {
                id: 0,
                distance: 2.0
            }]
        );
        let both = s.search(&[1.0, 1.0], 5, &[]).unwrap();
        assert_eq!(both.len(), 2);
        assert_eq!(both[1].distance, 13.0);
    }

    #[test]
    fn exclusion_returns_next_nearest() {
        let mut s = ExampleStore::new(2);
        s.add(0, &[0.0, 0.0], label(0)).unwrap();
        s.add(1, &[1.0, 0.0], label(1)).unwrap();
        s.add(2, &[5.0, 0.0], label(1)).unwrap();
        let hits = s.search(&[0.0, 0.0], 1, &[0]).unwrap();
        assert_eq!(hits[0].id, 1);
        assert!(matches!(
            s.search(&[0.0, 0.0], 1, &[0, 1, 2]),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn ties_broken_by_smaller_id() {
        let mut s = ExampleStore::new(1);
        for id in [9u64, 4, 6] {
            s.add(id, &[1.0], label(0)).unwrap();
        }
        let ids: Vec<u64> = s
            .search(&[0.0], 3, &[])
            .unwrap()
            .iter()
            .map(|h| h.id)
            .collect();
        assert_eq!(ids, vec![4, 6, 9]);
    }

    #[test]
    fn nearest_target_single_example() {
        let mut s = ExampleStore::new(2);
        s.add(3, &[1.0, 1.0], TargetPayload::Caption(vec![4, 5]))
            .unwrap();
        let (hit, t) = s.nearest_target(&[9.0, 9.0], &[]).unwrap();
        assert_eq!(hit.id, 3);
        assert_eq!(t, &TargetPayload::Caption(vec![4, 5]));
        assert!(s.nearest_target(&[9.0, 9.0], &[3]).is_err());
    }

    #[test]
    fn inner_product_metric_prefers_aligned() {
        let mut s = ExampleStore::with_metric(2, Metric::InnerProduct);
        s.add(0, &[1.0, 0.0], label(0)).unwrap();
        s.add(1, &[0.0, 2.0], label(1)).unwrap();
        assert_eq!(s.search(&[0.1, 1.0], 1, &[]).unwrap()[0].id, 1);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut s = ExampleStore::new(2);
        s.add(1, &[1.0, 2.0], label(1)).unwrap();
        s.freeze();
        let mut bytes = s.to_bytes();
        assert_eq!(ExampleStore::from_bytes(&bytes).unwrap(), s);
        for cut in [3, 10, 25, bytes.len() - 1] {
            assert!(matches!(
                ExampleStore::from_bytes(&bytes[..cut]),
                Err(Error::Format(_))
            ));
        }
        bytes[0] = b'X';
        assert!(matches!(
            ExampleStore::from_bytes(&bytes),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn empty_round_trip() {
        let s = ExampleStore::new(5);
        let back = ExampleStore::from_bytes(&s.to_bytes()).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.dim(), 5);
    }
}
