use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::network::Network;
use crate::{Error, Result, VehicleClass, NUM_CLASSES};

/// One modelled cell: class, link index and interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub class: VehicleClass,
    pub link: usize,
    pub interval: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Count,
    Time,
    Density,
}

impl Stream {
    pub const ALL: [Stream; 3] = [Stream::Count, Stream::Time, Stream::Density];

    pub fn as_str(self) -> &'static str {
        match self {
            Stream::Count => "count",
            Stream::Time => "time",
            Stream::Density => "density",
        }
    }

    /// Counts and densities add up over a group; travel times are averaged.
    pub fn combine(self) -> Combine {
        match self {
            Stream::Time => Combine::Mean,
            _ => Combine::Sum,
        }
    }
}

impl std::str::FromStr for Stream {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "count" => Ok(Stream::Count),
            "time" => Ok(Stream::Time),
            "density" => Ok(Stream::Density),
            other => Err(Error::InvalidInput(format!("unknown stream `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Combine {
    Sum,
    Mean,
}

/// Cells covered by one observation: the cartesian product of classes,
/// links and intervals.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupSpec {
    pub classes: Vec<VehicleClass>,
    pub links: Vec<usize>,
    pub intervals: Vec<usize>,
}

impl GroupSpec {
    pub fn cell(class: VehicleClass, link: usize, interval: usize) -> Self {
        GroupSpec {
            classes: vec![class],
            links: vec![link],
            intervals: vec![interval],
        }
    }

    /// Consecutive intervals `start..start + len` on one link.
    pub fn temporal(class: VehicleClass, link: usize, start: usize, len: usize) -> Self {
        GroupSpec {
            classes: vec![class],
            links: vec![link],
            intervals: (start..start + len).collect(),
        }
    }

    /// Several links (for example both directions of a road) in one row.
    pub fn links(class: VehicleClass, links: Vec<usize>, interval: usize) -> Self {
        GroupSpec {
            classes: vec![class],
            links,
            intervals: vec![interval],
        }
    }

    /// Cars and trucks together.
    pub fn all_classes(link: usize, interval: usize) -> Self {
        GroupSpec {
            classes: VehicleClass::ALL.to_vec(),
            links: vec![link],
            intervals: vec![interval],
        }
    }

    fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.classes.iter().flat_map(move |&class| {
            self.links.iter().flat_map(move |&link| {
                self.intervals.iter().map(move |&interval| Cell { class, link, interval })
            })
        })
    }
}

/// Sparse 0/1 (summing) or row-normalized (averaging) map from per-class
/// link states to observation rows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AggregationOperator {
    pub num_links: usize,
    pub intervals: usize,
    pub rows: Vec<Vec<(Cell, f64)>>,
}

impl AggregationOperator {
    pub fn new(num_links: usize, intervals: usize) -> Self {
        AggregationOperator {
            num_links,
            intervals,
            rows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, group: &GroupSpec, combine: Combine) -> Result<()> {
        let mut cells: Vec<Cell> = group.cells().collect();
        cells.sort();
        cells.dedup();
        if cells.is_empty() {
            return Err(Error::InvalidInput("observation row covers no cells".into()));
        }
        if let Some(c) = cells.iter().find(|c| c.link >= self.num_links || c.interval >= self.intervals) {
            return Err(Error::InvalidInput(format!(
                "observation cell link {} interval {} is outside the model",
                c.link, c.interval
            )));
        }
        let w = match combine {
            Combine::Sum => 1.0,
            Combine::Mean => 1.0 / cells.len() as f64,
        };
        self.rows.push(cells.into_iter().map(|c| (c, w)).collect());
        Ok(())
    }

    #[inline]
    fn idx(&self, c: &Cell) -> usize {
        c.link * self.intervals + c.interval
    }

    /// Maps states indexed `[class][link * T + t]` to row values.
    pub fn apply(&self, states: &[Vec<f64>; NUM_CLASSES]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|(c, w)| w * states[c.class.index()][self.idx(c)]).sum())
            .collect()
    }

    pub fn apply_transpose(&self, y: &[f64]) -> [Vec<f64>; NUM_CLASSES] {
        let n = self.num_links * self.intervals;
        let mut out: [Vec<f64>; NUM_CLASSES] = std::array::from_fn(|_| vec![0.0; n]);
        for (row, &yr) in self.rows.iter().zip(y) {
            for (c, w) in row {
                out[c.class.index()][self.idx(c)] += w * yr;
            }
        }
        out
    }
}

/// Observation rows to build for each stream.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AggregationSpec {
    pub counts: Vec<GroupSpec>,
    pub times: Vec<GroupSpec>,
    pub densities: Vec<GroupSpec>,
}

/// Builds `(L, M, I, H)` for the given spec. `H` is the per-link interval
/// cumulation used by the density relation.
pub fn build_aggregation(
    spec: &AggregationSpec,
    num_links: usize,
    intervals: usize,
) -> Result<(AggregationOperator, AggregationOperator, AggregationOperator, crate::dar::CumulationOperator)> {
    let build = |groups: &[GroupSpec], stream: Stream| -> Result<AggregationOperator> {
        let mut op = AggregationOperator::new(num_links, intervals);
        for g in groups {
            op.push(g, stream.combine())?;
        }
        Ok(op)
    };
    Ok((
        build(&spec.counts, Stream::Count)?,
        build(&spec.times, Stream::Time)?,
        build(&spec.densities, Stream::Density)?,
        crate::dar::CumulationOperator::new(intervals),
    ))
}

/// Observed values of one stream with their operator and validity mask.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ObservationStream {
    pub op: AggregationOperator,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl ObservationStream {
    fn new(num_links: usize, intervals: usize) -> Self {
        ObservationStream {
            op: AggregationOperator::new(num_links, intervals),
            values: Vec::new(),
            valid: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_valid(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// `observed - modelled` on valid rows, zero elsewhere.
    pub fn residuals(&self, states: &[Vec<f64>; NUM_CLASSES]) -> Vec<f64> {
        self.op
            .apply(states)
            .iter()
            .zip(&self.values)
            .zip(&self.valid)
            .map(|((m, o), &v)| if v { o - m } else { 0.0 })
            .collect()
    }
}

/// Observed counts, travel times and densities.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ObservationSet {
    pub num_links: usize,
    pub intervals: usize,
    pub count: ObservationStream,
    pub time: ObservationStream,
    pub density: ObservationStream,
}

#[derive(Debug, Serialize, Deserialize)]
struct ObsRow {
    stream: String,
    class_or_all: String,
    link_or_group: String,
    interval_or_group: String,
    value: f64,
}

impl ObservationSet {
    pub fn new(num_links: usize, intervals: usize) -> Self {
        ObservationSet {
            num_links,
            intervals,
            count: ObservationStream::new(num_links, intervals),
            time: ObservationStream::new(num_links, intervals),
            density: ObservationStream::new(num_links, intervals),
        }
    }

    pub fn stream(&self, s: Stream) -> &ObservationStream {
        match s {
            Stream::Count => &self.count,
            Stream::Time => &self.time,
            Stream::Density => &self.density,
        }
    }

    pub fn stream_mut(&mut self, s: Stream) -> &mut ObservationStream {
        match s {
            Stream::Count => &mut self.count,
            Stream::Time => &mut self.time,
            Stream::Density => &mut self.density,
        }
    }

    pub fn push(&mut self, stream: Stream, group: &GroupSpec, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("{} observation", stream.as_str())));
        }
        let s = self.stream_mut(stream);
        s.op.push(group, stream.combine())?;
        s.values.push(value);
        s.valid.push(true);
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        Stream::ALL.iter().all(|&s| self.stream(s).num_valid() == 0)
    }

    /// Links that appear in any row of the stream.
    pub fn links_in(&self, stream: Stream) -> Vec<usize> {
        let mut l: Vec<usize> = self
            .stream(stream)
            .op
            .rows
            .iter()
            .flatten()
            .map(|(c, _)| c.link)
            .collect();
        l.sort_unstable();
        l.dedup();
        l
    }

    /// Writes valid rows as `stream,class_or_all,link_or_group,interval_or_group,value`.
    /// Groups are `+`-joined link ids and interval indices.
    pub fn write_csv(&self, net: &Network, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        for stream in Stream::ALL {
            let s = self.stream(stream);
            for ((row, &value), &valid) in s.op.rows.iter().zip(&s.values).zip(&s.valid) {
                if !valid {
                    continue;
                }
                let mut classes: Vec<VehicleClass> = row.iter().map(|(c, _)| c.class).collect();
                let mut links: Vec<usize> = row.iter().map(|(c, _)| c.link).collect();
                let mut ints: Vec<usize> = row.iter().map(|(c, _)| c.interval).collect();
                for v in [&mut links, &mut ints] {
                    v.sort_unstable();
                    v.dedup();
                }
                classes.sort();
                classes.dedup();
                let class = if classes.len() == NUM_CLASSES {
                    "all".to_string()
                } else {
                    classes[0].to_string()
                };
                let join = |v: Vec<String>| v.join("+");
                w.serialize(ObsRow {
                    stream: stream.as_str().into(),
                    class_or_all: class,
                    link_or_group: join(links.iter().map(|&l| net.link(l).id.to_string()).collect()),
                    interval_or_group: join(ints.iter().map(|t| t.to_string()).collect()),
                    value,
                })
                .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads the format written by [`ObservationSet::write_csv`]. Interval
    /// groups also accept inclusive ranges such as `0-3`.
    pub fn read_csv(net: &Network, intervals: usize, path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(file);
        let mut obs = ObservationSet::new(net.num_links(), intervals);
        for (i, rec) in rdr.deserialize::<ObsRow>().enumerate() {
            let loc = format!("{}:{}", path.display(), i + 2);
            let row = rec.map_err(|e| Error::parse(&loc, e))?;
            let stream: Stream = row.stream.parse().map_err(|e: Error| Error::parse(&loc, e))?;
            let classes = if row.class_or_all.trim() == "all" {
                VehicleClass::ALL.to_vec()
            } else {
                vec![row.class_or_all.parse().map_err(|e: Error| Error::parse(&loc, e))?]
            };
            let links = row
                .link_or_group
                .split('+')
                .map(|s| {
                    let id: u32 = s.trim().parse().map_err(|e| Error::parse(&loc, e))?;
                    net.link_idx(id).ok_or_else(|| Error::parse(&loc, format!("unknown link {id}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let ints = parse_intervals(&row.interval_or_group).map_err(|e| Error::parse(&loc, e))?;
            let group = GroupSpec {
                classes,
                links,
                intervals: ints,
            };
            obs.push(stream, &group, row.value).map_err(|e| Error::parse(&loc, e))?;
        }
        Ok(obs)
    }
}

fn parse_intervals(s: &str) -> std::result::Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for part in s.split('+') {
        let part = part.trim();
        if let Some((a, b)) = part.split_once('-') {
            let a: usize = a.trim().parse().map_err(|e| format!("{e}"))?;
            let b: usize = b.trim().parse().map_err(|e| format!("{e}"))?;
            if b < a {
                return Err(format!("empty interval range {part}"));
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|e| format!("{e}"))?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::toy_network;
    use VehicleClass::*;

    #[test]
    fn hourly_count_row_sums_four_intervals() {
        let mut op = AggregationOperator::new(3, 8);
        op.push(&GroupSpec::temporal(Car, 1, 4, 4), Combine::Sum).unwrap();
        assert_eq!(op.rows[0].len(), 4);
        assert!(op.rows[0].iter().all(|(_, w)| *w == 1.0));
        let mut x = [vec![0.0; 24], vec![0.0; 24]];
        for t in 0..8 {
            x[0][8 + t] = t as f64;
        }
        assert_eq!(op.apply(&x), vec![4.0 + 5.0 + 6.0 + 7.0]);
    }

    #[test]
    fn identity_spec_selects_cells() {
        let spec = AggregationSpec {
            counts: (0..3).map(|l| GroupSpec::cell(Truck, l, 1)).collect(),
            ..Default::default()
        };
        let (l, m, i, _) = build_aggregation(&spec, 3, 2).unwrap();
        assert!(m.is_empty() && i.is_empty());
        let mut x = [vec![0.0; 6], vec![0.0; 6]];
        x[1] = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(l.apply(&x), vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn direction_merge_and_cross_class_rows() {
        let spec = AggregationSpec {
            densities: vec![GroupSpec::links(Car, vec![2, 6], 0), GroupSpec::all_classes(4, 0)],
            ..Default::default()
        };
        let (_, _, i, _) = build_aggregation(&spec, 8, 1).unwrap();
        assert_eq!(i.rows[0].len(), 2);
        assert_eq!(i.rows[1].len(), 2);
        assert_ne!(i.rows[1][0].0.class, i.rows[1][1].0.class);
    }

    #[test]
    fn empty_row_is_an_error() {
        let spec = AggregationSpec {
            counts: vec![GroupSpec {
                classes: vec![Car],
                links: vec![],
                intervals: vec![0],
            }],
            ..Default::default()
        };
        assert!(build_aggregation(&spec, 2, 2).is_err());
    }

    #[test]
    fn time_rows_average() {
        let mut op = AggregationOperator::new(1, 2);
        op.push(&GroupSpec::temporal(Car, 0, 0, 2), Combine::Mean).unwrap();
        assert_eq!(op.apply(&[vec![60.0, 80.0], vec![0.0; 2]]), vec![70.0]);
    }

    #[test]
    fn transpose_is_adjoint() {
        let mut op = AggregationOperator::new(4, 3);
        op.push(&GroupSpec::temporal(Car, 1, 0, 3), Combine::Sum).unwrap();
        op.push(&GroupSpec::all_classes(2, 1), Combine::Mean).unwrap();
        op.push(&GroupSpec::links(Truck, vec![0, 3], 2), Combine::Sum).unwrap();
        let x = [
            (0..12).map(|i| (i as f64 * 0.7).sin()).collect::<Vec<_>>(),
            (0..12).map(|i| (i as f64 * 1.3).cos()).collect::<Vec<_>>(),
        ];
        let y = vec![0.3, -1.2, 2.0];
        let lhs: f64 = op.apply(&x).iter().zip(&y).map(|(a, b)| a * b).sum();
        let at = op.apply_transpose(&y);
        let rhs: f64 = (0..2).map(|c| at[c].iter().zip(&x[c]).map(|(a, b)| a * b).sum::<f64>()).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let net = toy_network();
        let mut obs = ObservationSet::new(net.num_links(), 4);
        obs.push(Stream::Count, &GroupSpec::temporal(Car, 0, 0, 4), 410.0).unwrap();
        obs.push(Stream::Time, &GroupSpec::cell(Truck, 3, 2), 95.0).unwrap();
        obs.push(Stream::Density, &GroupSpec::all_classes(5, 1), 7.0).unwrap();
        obs.push(Stream::Density, &GroupSpec::links(Car, vec![1, 2], 3), 3.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("obs.csv");
        obs.write_csv(&net, &p).unwrap();
        let back = ObservationSet::read_csv(&net, 4, &p).unwrap();
        assert_eq!(back, obs);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("stream,class_or_all,link_or_group,interval_or_group,value"));
    }

    #[test]
    fn csv_range_syntax_and_bad_rows() {
        let net = toy_network();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("obs.csv");
        std::fs::write(&p, "stream,class_or_all,link_or_group,interval_or_group,value\ncount,car,1,0-3,12\n").unwrap();
        let obs = ObservationSet::read_csv(&net, 4, &p).unwrap();
        assert_eq!(obs.count.op.rows[0].len(), 4);
        std::fs::write(&p, "stream,class_or_all,link_or_group,interval_or_group,value\nspeed,car,1,0,12\n").unwrap();
        assert!(matches!(ObservationSet::read_csv(&net, 4, &p), Err(Error::Parse { .. })));
        std::fs::write(&p, "stream,class_or_all,link_or_group,interval_or_group,value\ncount,car,999,0,12\n").unwrap();
        assert!(ObservationSet::read_csv(&net, 4, &p).is_err());
    }
}
