//! Hop-distance oracles.
//!
//! Exact mode stores the full `n x n` BFS table. Landmark mode stores one BFS
//! row per landmark and answers `min_L d(u, L) + d(L, v)`, which is an upper
//! bound on the true distance and exact whenever an endpoint is a landmark.

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::Graph;

pub type Hops = u16;

/// Marks unreachable pairs (or pairs with no finite landmark bound).
pub const UNREACHABLE: Hops = Hops::MAX;

const MAGIC: &[u8; 8] = b"CAFINDO1";

/// Single-source BFS hop distances.
pub fn bfs_sssp(g: &Graph, source: usize) -> Result<Vec<Hops>> {
    let n = g.node_count();
    if source >= n {
        return Err(Error::Argument(format!(
            "source {source} out of range 0..{n}"
        )));
    }
    let mut dist = vec![UNREACHABLE; n];
    bfs_into(g, source, &mut dist, &mut VecDeque::with_capacity(n))?;
    Ok(dist)
}

fn bfs_into(
    g: &Graph,
    source: usize,
    dist: &mut [Hops],
    queue: &mut VecDeque<usize>,
) -> Result<()> {
    dist.fill(UNREACHABLE);
    dist[source] = 0;
    queue.clear();
    queue.push_back(source);
    while let Some(u) = queue.pop_front() {
        let next = dist[u] + 1;
        if next == UNREACHABLE {
            return Err(Error::Capacity(format!(
                "hop distance from {source} exceeds {}",
                UNREACHABLE - 1
            )));
        }
        for &v in g.neighbors(u) {
            if dist[v] == UNREACHABLE {
                dist[v] = next;
                queue.push_back(v);
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Table {
    Exact(Vec<Hops>),
    Landmark { ids: Vec<usize>, rows: Vec<Hops> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMode {
    Exact,
    Landmark,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceOracle {
    n: usize,
    table: Table,
    diameter: Hops,
}

/// Options for the exact build.
#[derive(Debug, Clone, Copy)]
pub struct ExactOptions {
    pub workers: usize,
    /// Upper bound on the table size in bytes.
    pub memory_budget: usize,
}

impl Default for ExactOptions {
    fn default() -> Self {
        ExactOptions {
            workers: 1,
            memory_budget: 4 << 30,
        }
    }
}

fn max_finite(values: &[Hops]) -> Hops {
    values
        .iter()
        .copied()
        .filter(|&d| d != UNREACHABLE)
        .max()
        .unwrap_or(0)
}

/// All-pairs distances with one BFS per node.
///
/// Rows are independent, so they are computed in parallel when
/// `workers > 1`; the table is identical for any worker count.
pub fn build_exact(g: &Graph, opts: ExactOptions) -> Result<DistanceOracle> {
    let n = g.node_count();
    let bytes = n
        .checked_mul(n)
        .and_then(|c| c.checked_mul(std::mem::size_of::<Hops>()))
        .unwrap_or(usize::MAX);
    if bytes > opts.memory_budget {
        return Err(Error::Capacity(format!(
            "exact distance table needs {bytes} bytes, budget is {}; use landmark mode",
            opts.memory_budget
        )));
    }
    let mut table = vec![UNREACHABLE; n * n];
    if n > 0 {
        let fill = |table: &mut [Hops]| -> Result<()> {
            if opts.workers <= 1 {
                let mut queue = VecDeque::with_capacity(n);
                for (s, row) in table.chunks_mut(n).enumerate() {
                    bfs_into(g, s, row, &mut queue)?;
                }
                Ok(())
            } else {
                table.par_chunks_mut(n).enumerate().try_for_each_init(
                    || VecDeque::with_capacity(n),
                    |queue, (s, row)| bfs_into(g, s, row, queue),
                )
            }
        };
        if opts.workers <= 1 {
            fill(&mut table)?;
        } else {
            rayon::ThreadPoolBuilder::new()
                .num_threads(opts.workers)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?
                .install(|| fill(&mut table))?;
        }
    }
    let diameter = max_finite(&table);
    Ok(DistanceOracle {
        n,
        table: Table::Exact(table),
        diameter,
    })
}

/// Landmark oracle with `l` landmarks drawn uniformly without replacement.
///
/// Landmarks are a prefix of a seeded permutation, so for a fixed seed the
/// landmark sets are nested as `l` grows.
pub fn build_landmark(g: &Graph, l: usize, seed: u64) -> Result<DistanceOracle> {
    let n = g.node_count();
    if l == 0 || l > n {
        return Err(Error::Argument(format!(
            "landmark count {l} must be in 1..={n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.truncate(l);
    build_with_landmarks(g, order)
}

/// Landmark oracle over an explicit landmark list.
pub fn build_with_landmarks(g: &Graph, ids: Vec<usize>) -> Result<DistanceOracle> {
    let n = g.node_count();
    if ids.is_empty() {
        return Err(Error::Argument("empty landmark set".into()));
    }
    let mut rows = vec![UNREACHABLE; ids.len() * n];
    let mut queue = VecDeque::with_capacity(n);
    for (row, &s) in rows.chunks_mut(n).zip(&ids) {
        if s >= n {
            return Err(Error::Argument(format!("landmark {s} out of range 0..{n}")));
        }
        bfs_into(g, s, row, &mut queue)?;
    }
    let diameter = max_finite(&rows);
    Ok(DistanceOracle {
        n,
        table: Table::Landmark { ids, rows },
        diameter,
    })
}

impl DistanceOracle {
    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn mode(&self) -> OracleMode {
        match self.table {
            Table::Exact(_) => OracleMode::Exact,
            Table::Landmark { .. } => OracleMode::Landmark,
        }
    }

    /// Largest finite distance seen: the true diameter in exact mode, the
    /// largest landmark eccentricity in landmark mode.
    pub fn diameter(&self) -> Hops {
        self.diameter
    }

    pub fn landmarks(&self) -> &[usize] {
        match &self.table {
            Table::Exact(_) => &[],
            Table::Landmark { ids, .. } => ids,
        }
    }

    pub fn query(&self, u: usize, v: usize) -> Hops {
        if u == v {
            return 0;
        }
        let n = self.n;
        match &self.table {
            Table::Exact(t) => t[u * n + v],
            Table::Landmark { rows, .. } => {
                let mut best = u32::from(UNREACHABLE);
                for row in rows.chunks_exact(n) {
                    let (a, b) = (row[u], row[v]);
                    if a != UNREACHABLE && b != UNREACHABLE {
                        best = best.min(u32::from(a) + u32::from(b));
                    }
                }
                best.min(u32::from(UNREACHABLE)) as Hops
            }
        }
    }

    /// Size of the serialized form in bytes.
    pub fn encoded_len(&self) -> usize {
        let header = MAGIC.len() + 1 + 8 + 8 + 2 + 2;
        match &self.table {
            Table::Exact(t) => header + 2 * t.len(),
            Table::Landmark { ids, rows } => header + 8 * ids.len() + 2 * rows.len(),
        }
    }

    /// Binary layout (little endian): magic, mode byte (0 exact, 1 landmark),
    /// `n: u64`, `l: u64`, `diameter: u16`, `sentinel: u16`, then in landmark
    /// mode the `l` landmark ids as `u64`, then the row-major `u16` table.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        let (mode, l) = match &self.table {
            Table::Exact(_) => (0u8, 0u64),
            Table::Landmark { ids, .. } => (1u8, ids.len() as u64),
        };
        let mut buf = Vec::with_capacity(self.encoded_len());
        buf.extend_from_slice(MAGIC);
        buf.push(mode);
        buf.extend_from_slice(&(self.n as u64).to_le_bytes());
        buf.extend_from_slice(&l.to_le_bytes());
        buf.extend_from_slice(&self.diameter.to_le_bytes());
        buf.extend_from_slice(&UNREACHABLE.to_le_bytes());
        let table = match &self.table {
            Table::Exact(t) => t,
            Table::Landmark { ids, rows } => {
                for &id in ids {
                    buf.extend_from_slice(&(id as u64).to_le_bytes());
                }
                rows
            }
        };
        for &d in table {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::io("reading distance oracle", e))?;
        let mut cur = Cursor {
            bytes: &bytes,
            pos: 0,
        };
        if cur.take(8)? != MAGIC {
            return Err(Error::Serde("not a distance oracle file".into()));
        }
        let mode = cur.take(1)?[0];
        let n = cur.u64()? as usize;
        let l = cur.u64()? as usize;
        let diameter = cur.u16()?;
        let sentinel = cur.u16()?;
        if sentinel != UNREACHABLE {
            return Err(Error::Serde(format!("unexpected sentinel {sentinel}")));
        }
        let table = match mode {
            0 => Table::Exact(cur.u16s(n.checked_mul(n).ok_or_else(overflow)?)?),
            1 => {
                let ids = (0..l)
                    .map(|_| cur.u64().map(|x| x as usize))
                    .collect::<Result<Vec<_>>>()?;
                if ids.iter().any(|&i| i >= n) {
                    return Err(Error::Serde("landmark id out of range".into()));
                }
                let rows = cur.u16s(l.checked_mul(n).ok_or_else(overflow)?)?;
                Table::Landmark { ids, rows }
            }
            m => return Err(Error::Serde(format!("unknown oracle mode {m}"))),
        };
        if cur.pos != bytes.len() {
            return Err(Error::Serde("trailing bytes after oracle table".into()));
        }
        Ok(DistanceOracle { n, table, diameter })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)
            .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        self.write_to(std::io::BufWriter::new(f))
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)
            .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

fn overflow() -> Error {
    Error::Serde("oracle dimensions overflow".into())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(k).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Serde("truncated oracle file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u16s(&mut self, count: usize) -> Result<Vec<u16>> {
        let raw = self.take(count.checked_mul(2).ok_or_else(overflow)?)?;
        Ok(raw
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::*;

    const S: Hops = UNREACHABLE;

    #[test]
    fn bfs_examples() {
        assert_eq!(bfs_sssp(&path(3), 0).unwrap(), vec![0, 1, 2]);
        assert_eq!(bfs_sssp(&triangle(), 1).unwrap(), vec![1, 0, 1]);
        let two = graph(4, &[(0, 1), (2, 3)]);
        assert_eq!(bfs_sssp(&two, 0).unwrap(), vec![0, 1, S, S]);
        assert!(matches!(bfs_sssp(&two, 4), Err(Error::Argument(_))));
    }

    #[test]
    fn exact_examples() {
        let o = build_exact(&path(3), ExactOptions::default()).unwrap();
        assert_eq!(o.diameter(), 2);
        for (u, row) in [[0, 1, 2], [1, 0, 1], [2, 1, 0]].iter().enumerate() {
            for (v, &d) in row.iter().enumerate() {
                assert_eq!(o.query(u, v), d);
            }
        }
        let empty = build_exact(&graph(3, &[]), ExactOptions::default()).unwrap();
        assert_eq!(empty.diameter(), 0);
        assert_eq!(empty.query(0, 1), S);
        assert_eq!(empty.query(2, 2), 0);
    }

    #[test]
    fn exact_respects_budget() {
        let opts = ExactOptions {
            workers: 1,
            memory_budget: 10,
        };
        assert!(matches!(
            build_exact(&path(3), opts),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn landmark_examples() {
        let g = path(4);
        let o = build_with_landmarks(&g, vec![0]).unwrap();
        assert_eq!(o.query(1, 2), 3);
        assert_eq!(o.query(2, 2), 0);
        assert_eq!(o.mode(), OracleMode::Landmark);

        let all = build_landmark(&g, 4, 9).unwrap();
        let exact = build_exact(&g, ExactOptions::default()).unwrap();
        for u in 0..4 {
            for v in 0..4 {
                assert_eq!(all.query(u, v), exact.query(u, v));
            }
        }
        assert!(build_landmark(&g, 0, 1).is_err());
        assert!(build_landmark(&g, 5, 1).is_err());
    }

    #[test]
    fn landmarks_are_distinct_and_seeded() {
        let g = path(50);
        let a = build_landmark(&g, 20, 3).unwrap();
        let b = build_landmark(&g, 20, 3).unwrap();
        assert_eq!(a, b);
        let mut ids = a.landmarks().to_vec();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 20);
    }

    #[test]
    fn disconnected_landmark_has_no_bound() {
        let g = graph(4, &[(0, 1), (2, 3)]);
        let o = build_with_landmarks(&g, vec![2]).unwrap();
        assert_eq!(o.query(0, 1), S);
        assert_eq!(o.query(2, 3), 1);
    }

    #[test]
    fn serialization_roundtrip() {
        let g = path(5);
        for o in [
            build_exact(&g, ExactOptions::default()).unwrap(),
            build_landmark(&g, 2, 7).unwrap(),
        ] {
            let mut buf = Vec::new();
            o.write_to(&mut buf).unwrap();
            assert_eq!(buf.len(), o.encoded_len());
            assert_eq!(DistanceOracle::read_from(&buf[..]).unwrap(), o);
            assert!(DistanceOracle::read_from(&buf[..buf.len() - 1]).is_err());
        }
    }

    #[test]
    fn parallel_build_is_identical() {
        let g = crate::synth::erdos_renyi(120, 0.04, 5);
        let serial = build_exact(&g, ExactOptions::default()).unwrap();
        let par = build_exact(
            &g,
            ExactOptions {
                workers: 3,
                ..ExactOptions::default()
            },
        )
        .unwrap();
        assert_eq!(serial, par);
    }
}
